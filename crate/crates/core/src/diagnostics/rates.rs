use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::log::{Record, TrajectoryLog};
use crate::error::{invalid, Error, Result};

pub const MIN_FIT_POINTS: usize = 20;

/// Ratio of the geometric subsample used for fitting.
const FIT_RATIO: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fgap,
    Gradnorm,
    DistXstar,
    StepDisp,
    Residual,
    NoiseTerm,
    NoiseCumsum,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Fgap,
        Metric::Gradnorm,
        Metric::DistXstar,
        Metric::StepDisp,
        Metric::Residual,
        Metric::NoiseTerm,
        Metric::NoiseCumsum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fgap => "fgap",
            Metric::Gradnorm => "gradnorm",
            Metric::DistXstar => "dist_xstar",
            Metric::StepDisp => "step_disp",
            Metric::Residual => "residual",
            Metric::NoiseTerm => "noise_term",
            Metric::NoiseCumsum => "noise_cumsum",
        }
    }

    pub fn get(self, r: &Record) -> Option<f64> {
        match self {
            Metric::Fgap => r.fgap,
            Metric::Gradnorm => r.gradnorm,
            Metric::DistXstar => r.dist_xstar,
            Metric::StepDisp => r.step_disp,
            Metric::Residual => r.residual,
            Metric::NoiseTerm => r.noise_term,
            Metric::NoiseCumsum => Some(r.noise_cumsum),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown metric `{s}`")))
    }
}

/// OLS fit of `log y = intercept + slope · log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: [u64; 2],
    pub points: usize,
    /// The window was cut short at an exact zero of the metric.
    pub truncated: bool,
}

/// Fits a power law to `(n, y)` pairs, all strictly positive.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RateEstimate> {
    if points.len() < MIN_FIT_POINTS {
        return Err(invalid(format!(
            "rate fit needs at least {MIN_FIT_POINTS} points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, y)) = points.iter().find(|&&(n, y)| !(n > 0.0 && y > 0.0 && y.is_finite())) {
        return Err(invalid(format!(
            "rate fit: nonpositive value {y} at n = {n}; shrink the window"
        )));
    }
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(n, y)| (n.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(invalid("rate fit: all points share one n"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    let window = [points[0].0 as u64, points[points.len() - 1].0 as u64];
    Ok(RateEstimate { slope, intercept, r_squared, window, points: points.len(), truncated: false })
}

/// Keeps the first record at or past each point of `n_min · 1.1^k`.
fn geometric_subsample<'a>(records: impl Iterator<Item = &'a Record>, n_min: u64) -> Vec<&'a Record> {
    let mut out = Vec::new();
    let mut threshold = n_min.max(1) as f64;
    for r in records {
        if r.n as f64 >= threshold {
            out.push(r);
            while threshold <= r.n as f64 {
                threshold *= FIT_RATIO;
            }
        }
    }
    out
}

fn windowed(records: &[Record], window: (u64, u64)) -> Result<impl Iterator<Item = &Record>> {
    let (lo, hi) = window;
    if lo == 0 || lo >= hi {
        return Err(invalid(format!("rate window [{lo}, {hi}] must satisfy 0 < n_min < n_max")));
    }
    Ok(records.iter().filter(move |r| r.n >= lo && r.n <= hi))
}

/// Log-log slope of `metric` over `window`, on a geometric subsample.
pub fn fit_rate(log: &TrajectoryLog, metric: Metric, window: (u64, u64)) -> Result<RateEstimate> {
    fit_records(&log.records, metric, window)
}

pub fn fit_records(records: &[Record], metric: Metric, window: (u64, u64)) -> Result<RateEstimate> {
    let sample = geometric_subsample(windowed(records, window)?, window.0);
    let points = sample
        .iter()
        .map(|r| {
            metric
                .get(r)
                .map(|y| (r.n as f64, y))
                .ok_or_else(|| invalid(format!("metric {metric} not recorded at n = {}", r.n)))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_power_law(&points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RateOutcome {
    Fitted(RateEstimate),
    Degenerate { reason: String },
}

/// Like [`fit_rate`], but an exact zero ends the window instead of failing the
/// fit, and a metric that is zero from the start is reported as degenerate.
pub fn fit_rate_until_zero(log: &TrajectoryLog, metric: Metric, window: (u64, u64)) -> Result<RateOutcome> {
    let in_window: Vec<&Record> = windowed(&log.records, window)?.collect();
    let first_zero = in_window.iter().position(|r| metric.get(r) == Some(0.0));
    let kept = match first_zero {
        Some(0) => {
            return Ok(RateOutcome::Degenerate { reason: format!("degenerate: zero {metric}") });
        }
        Some(i) => &in_window[..i],
        None => &in_window[..],
    };
    let sample = geometric_subsample(kept.iter().copied(), window.0);
    let points = sample
        .iter()
        .map(|r| {
            metric
                .get(r)
                .map(|y| (r.n as f64, y))
                .ok_or_else(|| invalid(format!("metric {metric} not recorded at n = {}", r.n)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut est = fit_power_law(&points)?;
    est.truncated = first_zero.is_some();
    Ok(RateOutcome::Fitted(est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::log::LogMeta;
    use crate::linalg::Vector;
    use proptest::prelude::*;

    fn synthetic(f: impl Fn(f64) -> f64, horizon: u64) -> TrajectoryLog {
        let meta = LogMeta {
            method: "m".into(),
            schedule: "s".into(),
            noise: "zero".into(),
            seed: 0,
            stream: 0,
            problem_id: "p".into(),
            anchor: vec![0.0],
        };
        let mut log = TrajectoryLog::new(meta);
        for n in 0..=horizon {
            let mut r = Record::new(n);
            r.residual = Some(f(n as f64));
            log.push(r, Vector::zeros(1));
        }
        log
    }

    #[test]
    fn exact_inverse() {
        let log = synthetic(|n| 1.0 / n, 1000);
        let est = fit_rate(&log, Metric::Residual, (10, 1000)).unwrap();
        assert!((est.slope + 1.0).abs() < 1e-12);
        assert!((est.r_squared - 1.0).abs() < 1e-12);
        assert!(est.points >= MIN_FIT_POINTS);
    }

    #[test]
    fn exact_inverse_sqrt_with_scale() {
        let log = synthetic(|n| 5.0 * n.powf(-0.5), 1000);
        let est = fit_rate(&log, Metric::Residual, (10, 1000)).unwrap();
        assert!((est.slope + 0.5).abs() < 1e-12);
        assert!((est.intercept - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_rejected() {
        let log = synthetic(|n| if n > 500.0 { 0.0 } else { 1.0 / n }, 1000);
        assert!(matches!(fit_rate(&log, Metric::Residual, (10, 1000)), Err(Error::InvalidArgument(_))));
        match fit_rate_until_zero(&log, Metric::Residual, (10, 1000)).unwrap() {
            RateOutcome::Fitted(e) => {
                assert!(e.truncated);
                assert!(e.window[1] <= 500);
                assert!((e.slope + 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let zero = synthetic(|_| 0.0, 1000);
        assert!(matches!(
            fit_rate_until_zero(&zero, Metric::Residual, (10, 1000)).unwrap(),
            RateOutcome::Degenerate { .. }
        ));
    }

    #[test]
    fn too_few_points() {
        let log = synthetic(|n| 1.0 / n, 1000);
        assert!(fit_rate(&log, Metric::Residual, (10, 30)).is_err());
        assert!(fit_rate(&log, Metric::Residual, (0, 30)).is_err());
        assert!(fit_rate(&log, Metric::Fgap, (10, 1000)).is_err());
    }

    proptest! {
        #[test]
        fn recovers_exponent(slope in -3.0f64..3.0, scale in 1e-3f64..1e3) {
            let pts: Vec<(f64, f64)> = (0..40).map(|k| {
                let n = 10.0 * 1.2f64.powi(k);
                (n, scale * n.powf(slope))
            }).collect();
            let est = fit_power_law(&pts).unwrap();
            prop_assert!((est.slope - slope).abs() < 1e-10);
            prop_assert!((est.intercept - scale.ln()).abs() < 1e-8);
            prop_assert!(est.r_squared > 1.0 - 1e-10);
        }
    }
}
