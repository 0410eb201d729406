use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Vector;

/// CSV column order.
pub const COLUMNS: [&str; 8] = [
    "n",
    "fgap",
    "gradnorm",
    "dist_xstar",
    "step_disp",
    "residual",
    "noise_term",
    "noise_cumsum",
];

/// Every iteration below this index is logged.
pub const DENSE_BELOW: u64 = 1_000;

const GRID_FACTOR: f64 = 1.1;

/// Metrics at iterate `x_n`. Empty fields are metrics that do not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: u64,
    /// `f(x_n) − f*`
    pub fgap: Option<f64>,
    pub gradnorm: Option<f64>,
    pub dist_xstar: Option<f64>,
    /// `‖x_{n+1} − x_n‖`; absent on the final row.
    pub step_disp: Option<f64>,
    /// `‖x_n − T(x_n)‖`
    pub residual: Option<f64>,
    /// `ε_n² ‖U_n‖²`
    pub noise_term: Option<f64>,
    /// `Σ_{k≤n} ε_k² ‖U_k‖²`
    pub noise_cumsum: f64,
}

impl Record {
    pub fn new(n: u64) -> Self {
        Record {
            n,
            fgap: None,
            gradnorm: None,
            dist_xstar: None,
            step_disp: None,
            residual: None,
            noise_term: None,
            noise_cumsum: 0.0,
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> {
        [
            self.fgap,
            self.gradnorm,
            self.dist_xstar,
            self.step_disp,
            self.residual,
            self.noise_term,
            Some(self.noise_cumsum),
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub method: String,
    pub schedule: String,
    pub noise: String,
    pub seed: u64,
    pub stream: u64,
    pub problem_id: String,
    pub anchor: Vec<f64>,
}

impl LogMeta {
    /// Everything except the random stream.
    pub(crate) fn same_experiment(&self, other: &LogMeta) -> bool {
        self.method == other.method
            && self.schedule == other.schedule
            && self.noise == other.noise
            && self.problem_id == other.problem_id
            && self.anchor == other.anchor
    }
}

/// Logged iteration indices: every `n < 1000`, then a geometric grid with
/// ratio 1.1, plus every power of two and its successor so the recursion
/// audit sees matched pairs `(n, n+1)`.
#[derive(Debug, Clone)]
pub struct LogGrid {
    points: Vec<u64>,
}

impl LogGrid {
    pub fn new(horizon: u64) -> Self {
        let mut points: Vec<u64> = (0..horizon.min(DENSE_BELOW)).collect();
        let mut g = DENSE_BELOW as f64;
        while g < horizon as f64 {
            points.push(g.ceil() as u64);
            g *= GRID_FACTOR;
        }
        let mut p = 1u64;
        while p < horizon {
            points.push(p);
            points.push(p + 1);
            p = p.saturating_mul(2);
        }
        points.retain(|&n| n < horizon);
        points.sort_unstable();
        points.dedup();
        LogGrid { points }
    }

    pub fn dense(horizon: u64) -> Self {
        LogGrid { points: (0..horizon).collect() }
    }

    pub fn contains(&self, n: u64) -> bool {
        self.points.binary_search(&n).is_ok()
    }

    pub fn points(&self) -> &[u64] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub meta: LogMeta,
    pub records: Vec<Record>,
    /// Iterates matching `records`; empty for logs read back from CSV.
    pub iterates: Vec<Vector>,
}

impl TrajectoryLog {
    pub fn new(meta: LogMeta) -> Self {
        TrajectoryLog { meta, records: Vec::new(), iterates: Vec::new() }
    }

    pub fn push(&mut self, record: Record, x: Vector) {
        self.records.push(record);
        self.iterates.push(x);
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn record_at(&self, n: u64) -> Option<&Record> {
        self.records.binary_search_by_key(&n, |r| r.n).ok().map(|i| &self.records[i])
    }

    /// Checks the structural invariants: strictly increasing `n`, finite
    /// entries, nondecreasing noise sum.
    pub fn check(&self) -> Result<()> {
        check_records(&self.records)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.records, out)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn check_records(records: &[Record]) -> Result<()> {
    for w in records.windows(2) {
        if w[1].n <= w[0].n {
            return Err(invalid(format!("log: n not increasing at {}", w[1].n)));
        }
        if w[1].noise_cumsum < w[0].noise_cumsum {
            return Err(invalid(format!("log: noise sum decreases at {}", w[1].n)));
        }
    }
    if let Some(r) = records.iter().find(|r| r.values().any(|v| !v.is_finite())) {
        return Err(invalid(format!("log: non-finite entry at {}", r.n)));
    }
    Ok(())
}

pub fn write_records<W: Write>(records: &[Record], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records written by [`TrajectoryLog::write_csv`].
pub fn read_records<R: Read>(input: R) -> Result<Vec<Record>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(invalid(format!("log: unexpected header {header:?}")));
    }
    let records = r.deserialize().collect::<std::result::Result<Vec<Record>, _>>()?;
    check_records(&records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> LogMeta {
        LogMeta {
            method: "halpern_sgd".into(),
            schedule: "s".into(),
            noise: "zero".into(),
            seed: 1,
            stream: 2,
            problem_id: "quadratic-d2".into(),
            anchor: vec![3.0, 4.0],
        }
    }

    #[test]
    fn grid_shape() {
        let g = LogGrid::new(100_000);
        assert!((0..1000).all(|n| g.contains(n)));
        for k in 0..=16 {
            assert!(g.contains(1 << k));
            assert!(g.contains((1 << k) + 1));
        }
        assert!(!g.contains(100_000));
        assert!(g.points().len() < 1300);
        assert_eq!(LogGrid::new(0).points().len(), 0);
    }

    #[test]
    fn header_order() {
        let log = TrajectoryLog::new(meta());
        let s = log.to_csv_string().unwrap();
        assert_eq!(s.lines().next().unwrap(), COLUMNS.join(","));
    }

    #[test]
    fn invariants_rejected() {
        let mut a = Record::new(1);
        a.noise_cumsum = 2.0;
        let mut b = Record::new(2);
        b.noise_cumsum = 1.0;
        assert!(check_records(&[a, b]).is_err());
        assert!(check_records(&[Record::new(2), Record::new(2)]).is_err());
        let mut c = Record::new(0);
        c.gradnorm = Some(f64::NAN);
        assert!(check_records(&[c]).is_err());
    }

    fn opt() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), (-1e300f64..1e300).prop_map(Some), (-1e-300f64..1e-300).prop_map(Some)]
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((opt(), opt(), opt(), opt(), opt(), opt(), 0.0f64..1e10), 0..30)) {
            let mut log = TrajectoryLog::new(meta());
            let mut sum = 0.0;
            for (i, (a, b, c, d, e, f, g)) in rows.into_iter().enumerate() {
                sum += g;
                let r = Record { n: 3 * i as u64, fgap: a, gradnorm: b, dist_xstar: c, step_disp: d, residual: e, noise_term: f, noise_cumsum: sum };
                log.push(r, Vector::zeros(1));
            }
            let s = log.to_csv_string().unwrap();
            let back = read_records(s.as_bytes()).unwrap();
            prop_assert_eq!(back.len(), log.records.len());
            for (x, y) in back.iter().zip(&log.records) {
                prop_assert_eq!(x.n, y.n);
                let xs = [x.fgap, x.gradnorm, x.dist_xstar, x.step_disp, x.residual, x.noise_term, Some(x.noise_cumsum)];
                let ys = [y.fgap, y.gradnorm, y.dist_xstar, y.step_disp, y.residual, y.noise_term, Some(y.noise_cumsum)];
                for (p, q) in xs.iter().zip(ys.iter()) {
                    prop_assert_eq!(p.map(f64::to_bits), q.map(f64::to_bits));
                }
            }
        }
    }
}
