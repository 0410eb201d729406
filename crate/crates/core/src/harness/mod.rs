//! Config parsing, parallel seeded runs and the pieces behind each CLI
//! subcommand.
//!
//! Exit codes: 0 success, 1 config error, 2 validation failure, 3 divergence.

pub mod config;
pub mod runner;

use serde::Serialize;

pub use config::{Config, Experiment, ResolvedTarget, X0};
pub use runner::{
    run_experiment, run_rates, run_sweep, run_trajectories, Overrides, RatesReport, RunResult, RunSummary, SweepRow,
};

use crate::error::Error;
use crate::noise::{estimate_moments, MomentEstimate, NoiseModel, RngStream, SigmaBound};
use crate::schedules::{validate, Schedule, ScheduleReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "ANCHORED_OPT_OUT";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Precondition(_) => EXIT_VALIDATION,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleCheck {
    pub passed: bool,
    pub report: Option<ScheduleReport>,
    pub text: String,
}

/// Backs the `validate-schedule` subcommand.
pub fn validate_schedule(exp: &Experiment) -> ScheduleCheck {
    match exp.schedule {
        Schedule::PowerLaw(s) => {
            let report = validate(&s, exp.lipschitz, exp.mode);
            let mut text = report.to_table();
            text.push_str(&format!("verdict: {}\n", if report.verdict { "pass" } else { "FAIL" }));
            ScheduleCheck { passed: report.verdict, report: Some(report), text }
        }
        Schedule::Constant(c) => {
            let ok = c.step_admissible(exp.lipschitz);
            let text = format!(
                "constant step η = {}, L = {}: η L = {} {} 2\nverdict: {}\n",
                c.eta,
                exp.lipschitz,
                c.eta * exp.lipschitz,
                if ok { "<" } else { "≥" },
                if ok { "pass" } else { "FAIL" }
            );
            ScheduleCheck { passed: ok, report: None, text }
        }
    }
}

/// Slack, in standard errors, on the empirical noise mean.
pub const NOISE_MEAN_SE: f64 = 4.0;
/// Relative slack on the second-moment bound.
pub const NOISE_SECOND_MOMENT_SLACK: f64 = 1.02;
pub const NOISE_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Serialize)]
pub struct NoiseCheck {
    pub model: String,
    pub sigma: Option<f64>,
    pub moments: MomentEstimate,
    pub mean_ok: bool,
    pub second_moment_ok: bool,
    /// Only for bounded noise: every draw inside the declared ball.
    pub support_ok: Option<bool>,
}

impl NoiseCheck {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.second_moment_ok && self.support_ok.unwrap_or(true)
    }

    pub fn to_text(&self) -> String {
        let m = &self.moments;
        let mut s = format!("noise {} ({} draws)\n", self.model, m.n_samples);
        s.push_str(&format!(
            "mean: |mean_i| <= {NOISE_MEAN_SE} se_i: {} (|mean| = {:.3e})\n",
            self.mean_ok, m.mean_norm
        ));
        match self.sigma {
            Some(sig) => s.push_str(&format!(
                "second moment {:.6} <= {:.6}: {}\n",
                m.second_moment,
                sig * sig * NOISE_SECOND_MOMENT_SLACK,
                self.second_moment_ok
            )),
            None => s.push_str(&format!("second moment {:.6} (no declared bound)\n", m.second_moment)),
        }
        if let Some(ok) = self.support_ok {
            s.push_str(&format!("support: max |U| = {:.6}: {ok}\n", m.max_norm));
        }
        s
    }
}

/// `check-noise`: moments of the configured noise at `x`.
pub fn check_noise_model(noise: &NoiseModel, x: &crate::Vector, rng: &RngStream, samples: usize) -> crate::Result<NoiseCheck> {
    let moments = estimate_moments(noise, rng, x, samples)?;
    let sigma = match noise.sigma() {
        SigmaBound::Declared(s) => Some(s),
        SigmaBound::Empirical => None,
    };
    let mean_ok = moments.mean_within(NOISE_MEAN_SE);
    let second_moment_ok = sigma.is_none_or(|s| moments.second_moment <= s * s * NOISE_SECOND_MOMENT_SLACK);
    let support_ok = match noise {
        NoiseModel::BoundedUniform { sigma } => Some(moments.max_norm <= NoiseModel::ball_radius(*sigma, x.len())),
        _ => None,
    };
    Ok(NoiseCheck { model: noise.name().into(), sigma, moments, mean_ok, second_moment_ok, support_ok })
}
