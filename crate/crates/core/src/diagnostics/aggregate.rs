use std::collections::BTreeMap;

use serde::Serialize;

use super::log::{LogMeta, Record, TrajectoryLog};
use super::rates::Metric;
use crate::error::{invalid, Result};

pub const MIN_SEEDS: usize = 8;

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    /// Standard error of the mean (sample variance, `k − 1`).
    pub(crate) fn standard_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let var = self.m2 / (self.count - 1) as f64;
        (var / self.count as f64).sqrt()
    }
}

/// Per-`n` mean and standard error of one metric; `None` where some seed
/// lacks the metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSeries {
    pub mean: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
}

impl MetricSeries {
    fn from_columns<F: Fn(&TrajectoryLog, usize) -> Option<f64>>(logs: &[&TrajectoryLog], rows: usize, get: F) -> Self {
        let mut mean = Vec::with_capacity(rows);
        let mut se = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut acc = Welford::default();
            let mut complete = true;
            for log in logs {
                match get(log, i) {
                    Some(v) => acc.push(v),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            mean.push(complete.then(|| acc.mean()));
            se.push(complete.then(|| acc.standard_error()));
        }
        MetricSeries { mean, se }
    }
}

/// Monte-Carlo summary over seeds at matched `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub meta: LogMeta,
    /// `(seed, stream)` of each run, sorted.
    pub runs: Vec<(u64, u64)>,
    pub n: Vec<u64>,
    pub metrics: BTreeMap<&'static str, MetricSeries>,
    /// `â_n`, the mean of `‖x_n − x*‖²`.
    pub dist_sq: MetricSeries,
}

impl McSummary {
    pub fn index_of(&self, n: u64) -> Option<usize> {
        self.n.binary_search(&n).ok()
    }

    pub fn series(&self, metric: Metric) -> &MetricSeries {
        &self.metrics[metric.name()]
    }

    pub fn seeds(&self) -> usize {
        self.runs.len()
    }

    /// The seed-averaged trajectory as log records.
    pub fn mean_records(&self) -> Vec<Record> {
        let get = |m: Metric, i: usize| self.series(m).mean[i];
        self.n
            .iter()
            .enumerate()
            .map(|(i, &n)| Record {
                n,
                fgap: get(Metric::Fgap, i),
                gradnorm: get(Metric::Gradnorm, i),
                dist_xstar: get(Metric::DistXstar, i),
                step_disp: get(Metric::StepDisp, i),
                residual: get(Metric::Residual, i),
                noise_term: get(Metric::NoiseTerm, i),
                noise_cumsum: get(Metric::NoiseCumsum, i).unwrap_or(0.0),
            })
            .collect()
    }
}

/// Aggregates logs that differ only in their random stream.
///
/// The result does not depend on the order of `logs`: runs are sorted by
/// `(seed, stream)` before folding.
pub fn mc_aggregate(logs: &[TrajectoryLog]) -> Result<McSummary> {
    if logs.len() < MIN_SEEDS {
        return Err(invalid(format!("mc_aggregate needs at least {MIN_SEEDS} seeds, got {}", logs.len())));
    }
    let mut sorted: Vec<&TrajectoryLog> = logs.iter().collect();
    sorted.sort_by_key(|l| (l.meta.seed, l.meta.stream));
    let first = sorted[0];
    for w in sorted.windows(2) {
        if (w[0].meta.seed, w[0].meta.stream) == (w[1].meta.seed, w[1].meta.stream) {
            return Err(invalid(format!("mc_aggregate: duplicate run (seed {}, stream {})", w[1].meta.seed, w[1].meta.stream)));
        }
    }
    let grid: Vec<u64> = first.records.iter().map(|r| r.n).collect();
    for log in &sorted[1..] {
        if !log.meta.same_experiment(&first.meta) {
            return Err(invalid(format!(
                "mc_aggregate: run (seed {}, stream {}) differs from the others in more than its seed",
                log.meta.seed, log.meta.stream
            )));
        }
        if log.records.len() != grid.len() || log.records.iter().zip(&grid).any(|(r, &n)| r.n != n) {
            return Err(invalid("mc_aggregate: runs were logged on different grids"));
        }
    }
    let rows = grid.len();
    let metrics = Metric::ALL
        .into_iter()
        .map(|m| (m.name(), MetricSeries::from_columns(&sorted, rows, |l, i| m.get(&l.records[i]))))
        .collect();
    let dist_sq = MetricSeries::from_columns(&sorted, rows, |l, i| l.records[i].dist_xstar.map(|d| d * d));
    Ok(McSummary {
        meta: first.meta.clone(),
        runs: sorted.iter().map(|l| (l.meta.seed, l.meta.stream)).collect(),
        n: grid,
        metrics,
        dist_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;
    use proptest::prelude::*;

    fn log(stream: u64, values: &[f64]) -> TrajectoryLog {
        let meta = LogMeta {
            method: "m".into(),
            schedule: "s".into(),
            noise: "gaussian_iso".into(),
            seed: 7,
            stream,
            problem_id: "p".into(),
            anchor: vec![0.0],
        };
        let mut l = TrajectoryLog::new(meta);
        for (n, &v) in values.iter().enumerate() {
            let mut r = Record::new(n as u64);
            r.dist_xstar = Some(v);
            l.push(r, Vector::zeros(1));
        }
        l
    }

    #[test]
    fn identical_runs_have_zero_se() {
        let vals = [0.3, 1.7, 2.9, 1e-3];
        let logs: Vec<_> = (0..8).map(|s| log(s, &vals)).collect();
        let s = mc_aggregate(&logs).unwrap();
        let d = s.series(Metric::DistXstar);
        for (i, v) in vals.iter().enumerate() {
            assert_eq!(d.mean[i], Some(*v));
            assert_eq!(d.se[i], Some(0.0));
        }
        assert_eq!(s.series(Metric::Fgap).mean[0], None);
    }

    #[test]
    fn mean_and_se_match_two_pass() {
        let logs: Vec<_> = (0..10).map(|s| log(s, &[s as f64, (s * s) as f64])).collect();
        let s = mc_aggregate(&logs).unwrap();
        let xs: Vec<f64> = (0..10).map(|s| (s * s) as f64).collect();
        let mean = xs.iter().sum::<f64>() / 10.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
        let d = s.series(Metric::DistXstar);
        assert!((d.mean[1].unwrap() - mean).abs() < 1e-12);
        assert!((d.se[1].unwrap() - (var / 10.0).sqrt()).abs() < 1e-12);
        let sq: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 10.0;
        assert!((s.dist_sq.mean[1].unwrap() - sq).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_sets() {
        let few: Vec<_> = (0..7).map(|s| log(s, &[1.0])).collect();
        assert!(mc_aggregate(&few).is_err());
        let mut dup: Vec<_> = (0..8).map(|s| log(s, &[1.0])).collect();
        dup[3].meta.stream = 0;
        assert!(mc_aggregate(&dup).is_err());
        let mut other: Vec<_> = (0..8).map(|s| log(s, &[1.0])).collect();
        other[2].meta.method = "x".into();
        assert!(mc_aggregate(&other).is_err());
        let mut grid: Vec<_> = (0..8).map(|s| log(s, &[1.0, 2.0])).collect();
        grid[1].records[1].n = 5;
        assert!(mc_aggregate(&grid).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(values in proptest::collection::vec(-1e3f64..1e3, 8..20), rot in 0usize..20) {
            let logs: Vec<_> = values.iter().enumerate().map(|(i, &v)| log(i as u64, &[v, v * 0.5])).collect();
            let mut shuffled = logs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = mc_aggregate(&logs).unwrap();
            let b = mc_aggregate(&shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
