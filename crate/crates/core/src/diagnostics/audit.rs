use serde::Serialize;

use super::aggregate::{mc_aggregate, Welford};
use super::log::{Record, TrajectoryLog};
use super::rates::{fit_records, Metric, RateEstimate};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::noise::NoiseModel;
use crate::problems::Problem;
use crate::schedules::Schedule;

/// Standard errors of slack for expectation-level checks.
pub const SE_SLACK: f64 = 3.0;

/// Relative tolerance of the pointwise inequality audits.
pub const AUDIT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub n: u64,
    pub gamma: f64,
    /// `â_{n+1}`
    pub lhs: f64,
    /// `γ_n R² + (1 − γ_n) â_n + ε_n² (σ² + L² R²)`
    pub rhs: f64,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaAudit {
    /// `‖u − x*‖²`
    pub anchor_dist_sq: f64,
    pub sigma_sq: f64,
    pub lipschitz: f64,
    pub checks: Vec<LemmaCheck>,
    pub violations: Vec<u64>,
    /// Grid indices where `γ_n ≤ 0`; the recursion is not a contraction there.
    pub nonpositive_gamma: Vec<u64>,
    pub sup_a: f64,
    pub sup_at: u64,
    pub sup_se: f64,
    /// `max(R², â_0) + (σ² + L² R²) Σ_{k<N} ε_k²`
    pub sup_bound: f64,
    pub sup_holds: bool,
}

impl LemmaAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.sup_holds
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>8}  {:>12}  {:>14}  {:>14}  {:>10}  ok\n", "n", "gamma", "a(n+1)", "bound", "slack");
        for c in &self.checks {
            s.push_str(&format!(
                "{:>8}  {:>12.4e}  {:>14.6e}  {:>14.6e}  {:>10.2e}  {}\n",
                c.n, c.gamma, c.lhs, c.rhs, c.slack, if c.ok { "yes" } else { "NO" }
            ));
        }
        s.push_str(&format!(
            "sup a_n = {:.6e} at n = {} (se {:.2e}), bound {:.6e}: {}\n",
            self.sup_a,
            self.sup_at,
            self.sup_se,
            self.sup_bound,
            if self.sup_holds { "holds" } else { "VIOLATED" }
        ));
        s
    }
}

fn solution_point(problem: &Problem, anchor: &[f64]) -> Result<Vector> {
    if !problem.is_convex() {
        return Err(Error::Precondition(format!("{} is not convex", problem.id())));
    }
    problem.project(&Vector::from_row_slice(anchor))
}

/// Checks the one-step recursion for `â_n = E‖x_n − x*‖²` on the powers of
/// two, and the resulting uniform bound on `sup_n â_n`.
///
/// The per-seed difference `a_{n+1} − (1 − γ_n) a_n` is averaged so the
/// standard error accounts for the correlation between consecutive iterates.
pub fn audit_lemma_recursion(
    logs: &[TrajectoryLog],
    problem: &Problem,
    schedule: &Schedule,
    noise: &NoiseModel,
) -> Result<LemmaAudit> {
    let summary = mc_aggregate(logs)?;
    let u = &summary.meta.anchor;
    let xstar = solution_point(problem, u)?;
    let r2 = (Vector::from_row_slice(u) - &xstar).norm_squared();
    let sigma = noise
        .declared_sigma()
        .ok_or_else(|| Error::Unsupported(format!("{} noise declares no σ", noise.name())))?;
    let sigma_sq = sigma * sigma;
    let l = problem.lipschitz_constant();
    let l2 = l * l;

    let mut sorted: Vec<&TrajectoryLog> = logs.iter().collect();
    sorted.sort_by_key(|log| (log.meta.seed, log.meta.stream));
    let dist_sq = |log: &TrajectoryLog, i: usize| -> Result<f64> {
        log.records[i]
            .dist_xstar
            .map(|d| d * d)
            .ok_or_else(|| Error::Precondition("logs carry no distance to x*".into()))
    };

    let mut checks = Vec::new();
    let mut violations = Vec::new();
    let mut nonpositive_gamma = Vec::new();
    let mut n = 1u64;
    while let (Some(i), Some(j)) = (summary.index_of(n), summary.index_of(n + 1)) {
        let alpha = schedule.alpha_at(n);
        let eps = schedule.eps_at(n);
        let gamma = alpha - eps * eps * l2;
        let mut diff = Welford::default();
        for log in &sorted {
            diff.push(dist_sq(log, j)? - (1.0 - gamma) * dist_sq(log, i)?);
        }
        let a_n = summary.dist_sq.mean[i].unwrap_or(f64::NAN);
        let lhs = summary.dist_sq.mean[j].unwrap_or(f64::NAN);
        let forcing = gamma * r2 + eps * eps * (sigma_sq + l2 * r2);
        let rhs = forcing + (1.0 - gamma) * a_n;
        let slack = SE_SLACK * diff.standard_error();
        let ok = gamma > 0.0 && diff.mean() <= forcing + slack;
        if gamma <= 0.0 {
            nonpositive_gamma.push(n);
        }
        if !ok {
            violations.push(n);
        }
        checks.push(LemmaCheck { n, gamma, lhs, rhs, slack, ok });
        match n.checked_mul(2) {
            Some(next) => n = next,
            None => break,
        }
    }

    let horizon = *summary.n.last().unwrap_or(&0);
    let a0 = summary.dist_sq.mean.first().copied().flatten().unwrap_or(f64::NAN);
    let sup_bound = r2.max(a0) + (sigma_sq + l2 * r2) * schedule.eps_sq_partial_sum(horizon);
    let (mut sup_a, mut sup_at, mut sup_se) = (f64::NEG_INFINITY, 0, 0.0);
    for (k, (&m, &se)) in summary.dist_sq.mean.iter().zip(&summary.dist_sq.se).enumerate() {
        if let (Some(m), Some(se)) = (m, se) {
            if m > sup_a {
                (sup_a, sup_at, sup_se) = (m, summary.n[k], se);
            }
        }
    }
    let sup_holds = sup_a <= sup_bound + SE_SLACK * sup_se;

    Ok(LemmaAudit {
        anchor_dist_sq: r2,
        sigma_sq,
        lipschitz: l,
        checks,
        violations,
        nonpositive_gamma,
        sup_a,
        sup_at,
        sup_se,
        sup_bound,
        sup_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: &'static str,
    pub checks: usize,
    pub violations: usize,
    /// Largest relative excess, 0 when every check holds exactly.
    pub max_rel_violation: f64,
}

impl InequalityCheck {
    fn new(name: &'static str) -> Self {
        InequalityCheck { name, checks: 0, violations: 0, max_rel_violation: 0.0 }
    }

    /// Records `big ≥ small`.
    fn expect_ge(&mut self, big: f64, small: f64) {
        self.checks += 1;
        let excess = small - big;
        if excess <= 0.0 {
            return;
        }
        let scale = big.abs().max(small.abs());
        let rel = if scale > 0.0 { excess / scale } else { f64::INFINITY };
        self.max_rel_violation = self.max_rel_violation.max(rel);
        if excess > AUDIT_REL_TOL * scale {
            self.violations += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityAudit {
    pub inequalities: Vec<InequalityCheck>,
}

impl InequalityAudit {
    pub fn passed(&self) -> bool {
        self.inequalities.iter().all(|c| c.violations == 0)
    }

    pub fn total_violations(&self) -> usize {
        self.inequalities.iter().map(|c| c.violations).sum()
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<26}  {:>7}  {:>10}  {:>12}\n", "inequality", "checks", "violations", "max rel");
        for c in &self.inequalities {
            s.push_str(&format!(
                "{:<26}  {:>7}  {:>10}  {:>12.3e}\n",
                c.name, c.checks, c.violations, c.max_rel_violation
            ));
        }
        s
    }
}

/// `v / L`, with `0 / 0 = 0` so a flat objective audits cleanly.
fn over_l(v: f64, l: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v / l
    }
}

/// Audits the convexity inequalities at the logged iterates.
pub fn audit_inequalities(log: &TrajectoryLog, problem: &Problem) -> Result<InequalityAudit> {
    if log.iterates.is_empty() && !log.records.is_empty() {
        return Err(Error::Precondition("log carries no iterates".into()));
    }
    audit_points(&log.iterates, problem)
}

/// Checks, at each point and each consecutive pair:
///
/// - monotonicity `⟨∇f(x) − ∇f(y), x − y⟩ ≥ 0`
/// - cocoercivity `⟨∇f(x) − ∇f(y), x − y⟩ ≥ ‖∇f(x) − ∇f(y)‖² / L`
/// - cocoercivity against a minimiser `⟨∇f(x), x − x*⟩ ≥ ‖∇f(x)‖² / L`
/// - the gradient-norm bound `‖∇f(x)‖² / 2L ≤ f(x) − f*`
/// - the first-order condition `∇f(x*) = 0`, as `‖∇f(x*)‖ ≤ tol · L ‖x*‖`
pub fn audit_points(points: &[Vector], problem: &Problem) -> Result<InequalityAudit> {
    if !problem.is_convex() {
        return Err(Error::Precondition(format!("{} is not convex", problem.id())));
    }
    let f_star = problem
        .f_star()
        .ok_or_else(|| Error::Precondition(format!("{} has no known optimal value", problem.id())))?;
    let l = problem.lipschitz_constant();
    let mut monotone = InequalityCheck::new("monotone");
    let mut cocoercive = InequalityCheck::new("cocoercive");
    let mut at_solution = InequalityCheck::new("cocoercive_at_solution");
    let mut grad_bound = InequalityCheck::new("gradient_norm_bound");
    let mut first_order = InequalityCheck::new("first_order_condition");
    let mut prev: Option<(&Vector, Vector)> = None;
    for x in points {
        let g = problem.gradient(x)?;
        let xstar = problem.project(x)?;
        let gn2 = g.norm_squared();
        at_solution.expect_ge(g.dot(&(x - &xstar)), over_l(gn2, l));
        grad_bound.expect_ge(problem.value(x)? - f_star, over_l(gn2, 2.0 * l));
        let gs = problem.gradient(&xstar)?;
        first_order.expect_ge(AUDIT_REL_TOL * l * (1.0 + xstar.norm()), gs.norm());
        if let Some((y, gy)) = &prev {
            let dg = &g - gy;
            let inner = dg.dot(&(x - *y));
            monotone.expect_ge(inner, 0.0);
            cocoercive.expect_ge(inner, over_l(dg.norm_squared(), l));
        }
        prev = Some((x, g));
    }
    Ok(InequalityAudit { inequalities: vec![monotone, cocoercive, at_solution, grad_bound, first_order] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummabilityReport {
    /// `Σ_{k<N} ε_k² ‖U_k‖²`
    pub total: f64,
    /// Log-log slope of the per-step term over `[10, N]`.
    pub tail_slope: Option<RateEstimate>,
    /// Why the slope is missing, when it is.
    pub slope_error: Option<String>,
    /// Share of `total` accumulated over the last decade of iterations.
    pub last_decade_share: f64,
}

/// Summability of the realised noise energy along one run.
pub fn summability_report(log: &TrajectoryLog) -> SummabilityReport {
    summability_from_records(&log.records)
}

/// Same as [`summability_report`] on any record series, e.g. a seed average.
pub fn summability_from_records(records: &[Record]) -> SummabilityReport {
    let total = records.last().map_or(0.0, |r| r.noise_cumsum);
    let horizon = records.last().map_or(0, |r| r.n);
    let (tail_slope, slope_error) = match fit_records(records, Metric::NoiseTerm, (10, horizon.max(11))) {
        Ok(est) => (Some(est), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let decade_start = records
        .iter()
        .rev()
        .find(|r| r.n <= horizon / 10)
        .map_or(0.0, |r| r.noise_cumsum);
    let last_decade_share = if total > 0.0 { (total - decade_start) / total } else { 0.0 };
    SummabilityReport { total, tail_slope, slope_error, last_decade_share }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::noise::RngStream;
    use crate::optimizers::{run, CheckedSchedule, GateOptions, Method, RunSpec, Target};
    use crate::schedules::PowerLawSchedule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn runs(
        problem: &Problem,
        schedule: &CheckedSchedule,
        noise: &NoiseModel,
        seeds: u64,
        horizon: u64,
        anchor: Vector,
        x0: Vector,
    ) -> Vec<TrajectoryLog> {
        (0..seeds)
            .map(|s| {
                run(&RunSpec {
                    target: Target::Problem(problem),
                    method: Method::HalpernSgd,
                    schedule,
                    noise,
                    anchor: anchor.clone(),
                    x0: x0.clone(),
                    horizon,
                    rng: RngStream::new(11, s),
                    relaxation: 0.5,
                    dense_log: false,
                })
                .unwrap()
            })
            .collect()
    }

    fn checked(s: PowerLawSchedule, l: f64, force: bool) -> CheckedSchedule {
        CheckedSchedule::check(
            Method::HalpernSgd,
            s.into(),
            l,
            GateOptions { override_schedule: force, ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn flat_objective_deterministic_recursion() {
        let flat = Problem::quadratic(Matrix::zeros(2, 2), Vector::zeros(2)).unwrap();
        let sched = checked(PowerLawSchedule::new(1.0, 0.9, 1.0, 0.6, 2).unwrap(), 0.0, false);
        let logs = runs(&flat, &sched, &NoiseModel::Zero, 8, 5000, v(&[1.0, 2.0]), v(&[7.0, -3.0]));
        let audit = audit_lemma_recursion(&logs, &flat, sched.schedule(), &NoiseModel::Zero).unwrap();
        assert!(audit.passed(), "{}", audit.to_table());
        for c in &audit.checks {
            assert_eq!(c.slack, 0.0);
            assert!(c.lhs <= c.rhs);
        }
    }

    #[test]
    fn broken_coupling_flags_nonpositive_gamma() {
        let p = Problem::quadratic(Matrix::from_diagonal(&v(&[1.0, 0.0])), Vector::zeros(2)).unwrap();
        // ε_n² L² > α_n for small n with e = 2
        let bad = PowerLawSchedule::new(1.0, 0.9, 2.0, 0.6, 2).unwrap();
        assert!(CheckedSchedule::check(Method::HalpernSgd, bad.into(), 1.0, GateOptions::default()).is_err());
        let sched = checked(bad, 1.0, true);
        let noise = NoiseModel::gaussian(1.0).unwrap();
        let logs = runs(&p, &sched, &noise, 8, 2000, v(&[3.0, 4.0]), v(&[8.0, -2.0]));
        let audit = audit_lemma_recursion(&logs, &p, sched.schedule(), &noise).unwrap();
        assert!(!audit.nonpositive_gamma.is_empty());
        for n in &audit.nonpositive_gamma {
            assert!(audit.violations.contains(n));
        }
        let expected: Vec<u64> = audit
            .checks
            .iter()
            .filter(|c| sched.schedule().alpha_at(c.n) <= sched.schedule().eps_at(c.n).powi(2))
            .map(|c| c.n)
            .collect();
        assert_eq!(audit.nonpositive_gamma, expected);
    }

    #[test]
    fn unit_quadratic_gradient_bound_is_tight() {
        let p = Problem::quadratic(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        let pts = vec![v(&[3.0, 4.0]), v(&[-1.0, 0.5]), v(&[0.0, 0.0])];
        let audit = audit_points(&pts, &p).unwrap();
        assert!(audit.passed());
        let gb = &audit.inequalities[3];
        assert_eq!(gb.max_rel_violation, 0.0);
        for x in &pts {
            let lhs = 0.5 * p.gradient(x).unwrap().norm_squared();
            assert_eq!(lhs, p.value(x).unwrap());
        }
    }

    #[test]
    fn degenerate_direction_both_sides_zero() {
        let p = Problem::quadratic(Matrix::from_diagonal(&v(&[1.0, 0.0])), Vector::zeros(2)).unwrap();
        let pts = vec![v(&[0.0, 4.0]), v(&[0.0, -2.0]), v(&[0.0, 10.0])];
        let audit = audit_points(&pts, &p).unwrap();
        assert!(audit.passed());
        assert!(audit.inequalities.iter().all(|c| c.max_rel_violation == 0.0));
    }

    #[test]
    fn random_quadratic_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Matrix::from_fn(5, 5, |_, _| rng.random::<f64>() - 0.5);
        let q = b.transpose() * &b;
        let c = Vector::from_fn(5, |_, _| rng.random::<f64>());
        let p = Problem::quadratic(q, c).unwrap();
        let pts: Vec<Vector> = (0..200).map(|_| Vector::from_fn(5, |_, _| 10.0 * (rng.random::<f64>() - 0.5))).collect();
        let audit = audit_points(&pts, &p).unwrap();
        assert!(audit.passed(), "{}", audit.to_table());
    }

    #[test]
    fn violation_is_counted() {
        let p = Problem::quadratic(Matrix::identity(2, 2) * 2.0, Vector::zeros(2)).unwrap();
        let mut c = InequalityCheck::new("t");
        let x = v(&[1.0, 0.0]);
        let g = p.gradient(&x).unwrap();
        c.expect_ge(0.5 * g.norm_squared() / 1.0, p.value(&x).unwrap());
        assert_eq!(c.violations, 0);
        c.expect_ge(p.value(&x).unwrap(), 0.5 * g.norm_squared() / 1.0);
        assert_eq!(c.violations, 1);
    }

    #[test]
    fn summability_zero_noise() {
        let p = Problem::quadratic(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        let sched = checked(PowerLawSchedule::new(1.0, 0.9, 1.0, 0.6, 2).unwrap(), 1.0, false);
        let logs = runs(&p, &sched, &NoiseModel::Zero, 1, 1000, v(&[1.0, 1.0]), v(&[3.0, 3.0]));
        let rep = summability_report(&logs[0]);
        assert_eq!(rep.total, 0.0);
        assert!(rep.tail_slope.is_none());
        assert_eq!(rep.last_decade_share, 0.0);
    }

    #[test]
    fn nonconvex_rejected() {
        let p = Problem::rastrigin(2).unwrap();
        assert!(matches!(audit_points(&[v(&[0.0, 0.0])], &p), Err(Error::Precondition(_))));
    }
}
