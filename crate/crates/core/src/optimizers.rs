//! Iteration rules and the run loop.
//!
//! All anchored updates go through one kernel,
//! `x⁺ = α u + (1 − α)(x − ε d)`, so the specialisations (HalpernSGD with zero
//! noise is HalpernGD, SGD is HalpernSGD with `α = 0`) agree bit-for-bit on
//! matched random streams.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diagnostics::{LogGrid, LogMeta, Record, TrajectoryLog};
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::noise::{NoiseModel, RngStream};
use crate::problems::Problem;
use crate::schedules::{validate, Schedule, ScheduleReport, ValidationMode};

/// Iterates with a norm above this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Slack on the spectral-norm certificate of an affine operator.
pub const NONEXPANSIVE_TOL: f64 = 1e-9;

pub const DEFAULT_RELAXATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    HalpernGd,
    Sgd,
    HalpernSgd,
    Km,
    HalpernOperator,
    KmOperator,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Gd,
        Method::HalpernGd,
        Method::Sgd,
        Method::HalpernSgd,
        Method::Km,
        Method::HalpernOperator,
        Method::KmOperator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::HalpernGd => "halpern_gd",
            Method::Sgd => "sgd",
            Method::HalpernSgd => "halpern_sgd",
            Method::Km => "km",
            Method::HalpernOperator => "halpern_operator",
            Method::KmOperator => "km_operator",
        }
    }

    pub fn is_operator(self) -> bool {
        matches!(self, Method::HalpernOperator | Method::KmOperator)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Method::Sgd | Method::HalpernSgd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// `T(x) = M x + m` with `‖M‖₂ ≤ 1`.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    matrix: Matrix,
    offset: Vector,
    norm: f64,
}

impl AffineOperator {
    pub fn new(matrix: Matrix, offset: Vector) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(invalid("affine operator: matrix must be nonempty and square"));
        }
        check_dim(d, offset.len(), "affine operator offset")?;
        let norm = linalg::spectral_norm(&matrix);
        if !(norm <= 1.0 + NONEXPANSIVE_TOL) {
            return Err(invalid(format!(
                "affine operator is not nonexpansive (‖M‖₂ ≈ {norm})"
            )));
        }
        Ok(AffineOperator { matrix, offset, norm })
    }

    /// Planar rotation by `theta` radians about the origin.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let m = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        AffineOperator { matrix: m, offset: Vector::zeros(2), norm: 1.0 }
    }

    /// 90° rotation with exact integer entries.
    pub fn quarter_turn() -> Self {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        AffineOperator { matrix: m, offset: Vector::zeros(2), norm: 1.0 }
    }

    pub fn identity(d: usize) -> Self {
        AffineOperator { matrix: Matrix::identity(d, d), offset: Vector::zeros(d), norm: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.norm
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn offset(&self) -> &Vector {
        &self.offset
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len(), "affine operator")?;
        Ok(&self.matrix * x + &self.offset)
    }
}

/// The nonexpansive map a KM step relaxes.
#[derive(Debug, Clone, Copy)]
pub enum FixedPointMap<'a> {
    /// `T(x) = x − η∇f(x)`
    Gradient { problem: &'a Problem, eta: f64 },
    Affine(&'a AffineOperator),
}

impl FixedPointMap<'_> {
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        match self {
            FixedPointMap::Gradient { problem, eta } => Ok(x - problem.gradient(x)? * *eta),
            FixedPointMap::Affine(op) => op.apply(x),
        }
    }
}

fn anchored_update(x: &Vector, direction: &Vector, anchor: &Vector, alpha: f64, step: f64) -> Vector {
    Vector::from_fn(x.len(), |i, _| {
        let y = x[i] - step * direction[i];
        y + alpha * (anchor[i] - y)
    })
}

fn blend(anchor: &Vector, point: &Vector, alpha: f64) -> Vector {
    Vector::from_fn(point.len(), |i, _| point[i] + alpha * (anchor[i] - point[i]))
}

/// `x − η∇f(x)`
pub fn gd_step(problem: &Problem, x: &Vector, eta: f64) -> Result<Vector> {
    if !(eta >= 0.0) {
        return Err(invalid(format!("gd step: η must be ≥ 0, got {eta}")));
    }
    Ok(x - problem.gradient(x)? * eta)
}

/// `α u + (1 − α)(x − η∇f(x))`
pub fn halpern_gd_step(problem: &Problem, x: &Vector, anchor: &Vector, alpha: f64, eta: f64) -> Result<Vector> {
    check_alpha(alpha)?;
    check_dim(problem.dim(), anchor.len(), "anchor")?;
    let g = problem.gradient(x)?;
    Ok(anchored_update(x, &g, anchor, alpha, eta))
}

/// `(1 − λ) x + λ T(x)`
pub fn km_step(map: FixedPointMap<'_>, x: &Vector, relaxation: f64) -> Result<Vector> {
    if !(relaxation > 0.0 && relaxation < 1.0) {
        return Err(invalid(format!("KM relaxation must lie in (0,1), got {relaxation}")));
    }
    let t = map.apply(x)?;
    Ok(blend(&t, x, relaxation))
}

/// `α u + (1 − α) T(x)`
pub fn halpern_operator_step(op: &AffineOperator, x: &Vector, anchor: &Vector, alpha: f64) -> Result<Vector> {
    check_alpha(alpha)?;
    check_dim(op.dim(), anchor.len(), "anchor")?;
    Ok(blend(anchor, &op.apply(x)?, alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("Halpern weight must lie in [0,1], got {alpha}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GateOptions {
    pub override_schedule: bool,
    pub mode: ValidationMode,
}

/// A schedule that passed the precondition gate for one method (or was
/// explicitly waved through).
#[derive(Debug, Clone)]
pub struct CheckedSchedule {
    schedule: Schedule,
    method: Method,
    report: Option<ScheduleReport>,
    overridden: bool,
}

impl CheckedSchedule {
    /// Validates `schedule` for `method` on a problem with smoothness `L`.
    ///
    /// - HalpernSGD (and HalpernGD with a power law): the full report verdict.
    /// - SGD: Robbins–Monro conditions on `ε_n`.
    /// - GD, KM, HalpernGD with a constant step: `η ∈ (0, 2/L)`.
    /// - Operator modes: a power law must give `α_n ∈ (0,1)`, `α_n → 0`, `Σα_n = ∞`.
    pub fn check(method: Method, schedule: Schedule, lipschitz: f64, opts: GateOptions) -> Result<Self> {
        let report = match schedule {
            Schedule::PowerLaw(s) => Some(validate(&s, lipschitz, opts.mode)),
            Schedule::Constant(_) => None,
        };
        let problem = gate(method, &schedule, report.as_ref(), lipschitz);
        if let Some(msg) = problem {
            if !opts.override_schedule {
                return Err(Error::Precondition(format!("{method}: {msg}")));
            }
        }
        Ok(CheckedSchedule { schedule, method, report, overridden: opts.override_schedule })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn report(&self) -> Option<&ScheduleReport> {
        self.report.as_ref()
    }

    pub fn overridden(&self) -> bool {
        self.overridden
    }

    fn admits(&self, method: Method) -> Result<()> {
        if self.method == method || self.overridden {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "schedule was checked for {} but used with {method}",
                self.method
            )))
        }
    }
}

fn gate(method: Method, schedule: &Schedule, report: Option<&ScheduleReport>, lipschitz: f64) -> Option<String> {
    match (method, schedule, report) {
        (Method::HalpernSgd | Method::HalpernGd, Schedule::PowerLaw(_), Some(r)) => {
            (!r.verdict).then(|| format!("schedule fails: {}", r.failures().join(", ")))
        }
        (Method::Sgd, Schedule::PowerLaw(_), Some(r)) => {
            (!r.robbins_monro()).then(|| "stepsizes violate the Robbins–Monro conditions".to_string())
        }
        (Method::HalpernSgd | Method::Sgd, Schedule::Constant(_), _) => {
            Some("stochastic methods need diminishing stepsizes (Σε_n² diverges)".to_string())
        }
        (Method::Gd | Method::Km | Method::HalpernGd, Schedule::Constant(c), _) => {
            (!c.step_admissible(lipschitz)).then(|| format!("step η = {} outside (0, 2/L) with L = {lipschitz}", c.eta))
        }
        (Method::Gd | Method::Km, Schedule::PowerLaw(_), _) => {
            Some("GD and KM take a constant step".to_string())
        }
        (Method::HalpernOperator, Schedule::PowerLaw(_), Some(r)) => {
            let ok = r.alpha_in_01.holds && r.alpha_to_zero.holds && r.sum_alpha_div.holds;
            (!ok).then(|| "Halpern weights must satisfy α_n ∈ (0,1), α_n → 0, Σα_n = ∞".to_string())
        }
        _ => None,
    }
}

/// Deterministic pseudorandom point on the sphere of radius `radius` around
/// `anchor`.
pub fn default_start(anchor: &Vector, radius: f64, seed: u64) -> Vector {
    let mut gen = RngStream::new(seed, u64::MAX).generator_at(0);
    let dir = loop {
        let z = Vector::from_fn(anchor.len(), |_, _| gen.sample::<f64, _>(StandardNormal));
        let n = z.norm();
        if n > 0.0 {
            break z / n;
        }
    };
    anchor + dir * radius
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub n: u64,
    pub x: Vector,
    pub anchor: Vector,
    pub rng: RngStream,
    pub method: Method,
    /// KM relaxation `λ`.
    pub relaxation: f64,
}

impl OptimizerState {
    pub fn new(method: Method, x0: Vector, anchor: Vector, rng: RngStream) -> Result<Self> {
        check_dim(x0.len(), anchor.len(), "anchor")?;
        Ok(OptimizerState { n: 0, x: x0, anchor, rng, method, relaxation: DEFAULT_RELAXATION })
    }
}

/// What a single step realised, beyond the new iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// `ε_n² ‖U_n‖²`
    pub noise_term: f64,
}

fn stochastic_step(
    problem: &Problem,
    state: &mut OptimizerState,
    noise: &NoiseModel,
    alpha: f64,
    eps: f64,
) -> Result<StepInfo> {
    check_dim(problem.dim(), state.x.len(), "iterate")?;
    check_dim(problem.dim(), state.anchor.len(), "anchor")?;
    let mut direction = problem.gradient(&state.x)?;
    let mut info = StepInfo::default();
    if let Some(u) = noise.draw(&state.rng, &state.x, state.n)? {
        info.noise_term = eps * eps * u.norm_squared();
        direction += u;
    }
    state.x = anchored_update(&state.x, &direction, &state.anchor, alpha, eps);
    state.n += 1;
    Ok(info)
}

/// `x_{n+1} = α_n u + (1 − α_n)(x_n − ε_n(∇f(x_n) + U_n))`
pub fn halpern_sgd_step(
    problem: &Problem,
    state: &mut OptimizerState,
    noise: &NoiseModel,
    schedule: &CheckedSchedule,
) -> Result<StepInfo> {
    schedule.admits(Method::HalpernSgd)?;
    let n = state.n;
    let (alpha, eps) = (schedule.schedule.alpha_at(n), schedule.schedule.eps_at(n));
    stochastic_step(problem, state, noise, alpha, eps)
}

/// HalpernSGD with the Halpern weight forced to zero.
pub fn sgd_step(
    problem: &Problem,
    state: &mut OptimizerState,
    noise: &NoiseModel,
    schedule: &CheckedSchedule,
) -> Result<StepInfo> {
    schedule.admits(Method::Sgd)?;
    let eps = schedule.schedule.eps_at(state.n);
    stochastic_step(problem, state, noise, 0.0, eps)
}

/// What the iteration acts on.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Problem(&'a Problem),
    Operator(&'a AffineOperator),
}

impl Target<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Target::Problem(p) => p.dim(),
            Target::Operator(op) => op.dim(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Target::Problem(p) => p.id(),
            Target::Operator(op) => format!("affine-operator-d{}", op.dim()),
        }
    }
}

/// Advances `state` by one step of `state.method`.
pub fn step(target: Target<'_>, state: &mut OptimizerState, noise: &NoiseModel, schedule: &CheckedSchedule) -> Result<StepInfo> {
    schedule.admits(state.method)?;
    let n = state.n;
    let sched = &schedule.schedule;
    let deterministic = || -> Result<()> {
        if noise.is_trivial() {
            Ok(())
        } else {
            Err(invalid(format!("{} is deterministic; use noise = zero", state.method)))
        }
    };
    let next = match (state.method, target) {
        (Method::HalpernSgd, Target::Problem(p)) => return halpern_sgd_step(p, state, noise, schedule),
        (Method::Sgd, Target::Problem(p)) => return sgd_step(p, state, noise, schedule),
        (Method::Gd, Target::Problem(p)) => {
            deterministic()?;
            gd_step(p, &state.x, sched.eps_at(n))?
        }
        (Method::HalpernGd, Target::Problem(p)) => {
            deterministic()?;
            halpern_gd_step(p, &state.x, &state.anchor, sched.alpha_at(n), sched.eps_at(n))?
        }
        (Method::Km, Target::Problem(p)) => {
            deterministic()?;
            km_step(FixedPointMap::Gradient { problem: p, eta: sched.eps_at(n) }, &state.x, state.relaxation)?
        }
        (Method::HalpernOperator, Target::Operator(op)) => {
            deterministic()?;
            halpern_operator_step(op, &state.x, &state.anchor, sched.alpha_at(n))?
        }
        (Method::KmOperator, Target::Operator(op)) => {
            deterministic()?;
            km_step(FixedPointMap::Affine(op), &state.x, state.relaxation)?
        }
        (m, Target::Problem(_)) => return Err(invalid(format!("{m} needs an operator target"))),
        (m, Target::Operator(_)) => return Err(invalid(format!("{m} needs a problem target"))),
    };
    state.x = next;
    state.n += 1;
    Ok(StepInfo::default())
}

/// Everything a single seeded run needs.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub target: Target<'a>,
    pub method: Method,
    pub schedule: &'a CheckedSchedule,
    pub noise: &'a NoiseModel,
    pub anchor: Vector,
    pub x0: Vector,
    pub horizon: u64,
    pub rng: RngStream,
    pub relaxation: f64,
    /// Record every iteration instead of the geometric grid.
    pub dense_log: bool,
}

struct MetricContext<'a> {
    target: Target<'a>,
    xstar: Option<Vector>,
    fixed_step: Option<f64>,
}

impl MetricContext<'_> {
    fn record(&self, n: u64, x: &Vector) -> Result<Record> {
        let mut rec = Record::new(n);
        match self.target {
            Target::Problem(p) => {
                let g = p.gradient(x)?;
                rec.gradnorm = Some(g.norm());
                rec.fgap = p.f_star().map(|fs| p.value(x).map(|v| v - fs)).transpose()?;
                rec.dist_xstar = self.xstar.as_ref().map(|xs| (x - xs).norm());
                rec.residual = self.fixed_step.map(|eta| eta * g.norm());
            }
            Target::Operator(op) => {
                rec.residual = Some((x - op.apply(x)?).norm());
            }
        }
        Ok(rec)
    }
}

/// Runs `spec.horizon` steps and records metrics on the logging grid.
///
/// Aborts with [`Error::Divergence`] as soon as an iterate is non-finite or
/// leaves the ball of radius [`DIVERGENCE_NORM`].
pub fn run(spec: &RunSpec<'_>) -> Result<TrajectoryLog> {
    let d = spec.target.dim();
    check_dim(d, spec.x0.len(), "x0")?;
    check_dim(d, spec.anchor.len(), "anchor")?;
    if spec.method.is_operator() != matches!(spec.target, Target::Operator(_)) {
        return Err(invalid(format!("{} does not match target {}", spec.method, spec.target.id())));
    }
    let sched = spec.schedule.schedule();
    let ctx = MetricContext {
        target: spec.target,
        xstar: match spec.target {
            Target::Problem(p) => p.project(&spec.anchor).ok(),
            Target::Operator(_) => None,
        },
        fixed_step: match sched {
            Schedule::Constant(c) if !spec.method.is_operator() => Some(c.eta),
            _ => None,
        },
    };
    let grid = if spec.dense_log { LogGrid::dense(spec.horizon) } else { LogGrid::new(spec.horizon) };
    let meta = LogMeta {
        method: spec.method.name().to_string(),
        schedule: sched.describe(),
        noise: spec.noise.name().to_string(),
        seed: spec.rng.seed(),
        stream: spec.rng.stream(),
        problem_id: spec.target.id(),
        anchor: spec.anchor.iter().copied().collect(),
    };
    let mut log = TrajectoryLog::new(meta);
    let mut state = OptimizerState::new(spec.method, spec.x0.clone(), spec.anchor.clone(), spec.rng)?;
    state.relaxation = spec.relaxation;
    let mut cumsum = 0.0;
    for n in 0..spec.horizon {
        let prev = state.x.clone();
        let info = step(spec.target, &mut state, spec.noise, spec.schedule)?;
        if !linalg::all_finite(&state.x) {
            return Err(Error::Divergence { n: n + 1, reason: "non-finite iterate".into() });
        }
        if state.x.norm() > DIVERGENCE_NORM {
            return Err(Error::Divergence { n: n + 1, reason: format!("‖x‖ > {DIVERGENCE_NORM:e}") });
        }
        cumsum += info.noise_term;
        if grid.contains(n) {
            let mut rec = ctx.record(n, &prev)?;
            rec.step_disp = Some((&state.x - &prev).norm());
            rec.noise_term = Some(info.noise_term);
            rec.noise_cumsum = cumsum;
            log.push(rec, prev);
        }
    }
    let mut last = ctx.record(spec.horizon, &state.x)?;
    last.noise_cumsum = cumsum;
    log.push(last, state.x);
    Ok(log)
}
