//! Experiment configuration.
//!
//! A config is a TOML file with these sections (all numbers decimal):
//!
//! ```toml
//! [problem]            # or [operator]
//! family = "quadratic" # quadratic | least_squares | logistic | rastrigin | rosenbrock
//! q = [[1.0, 0.0], [0.0, 0.0]]   # or q_csv = "q.csv"
//! center = [0.0, 0.0]            # or center_csv; defaults to the origin
//! # least_squares: a / a_csv, b / b_csv
//! # logistic: a / a_csv, labels / labels_csv
//! # rastrigin, rosenbrock: dim
//!
//! [operator]
//! kind = "rotation"    # rotation (angle_deg) | identity (dim) | affine (matrix, offset)
//!
//! [method]
//! name = "halpern_sgd" # gd | halpern_gd | sgd | halpern_sgd | km | halpern_operator | km_operator
//! relaxation = 0.5     # KM only
//!
//! [schedule]
//! kind = "power_law"   # power_law (a, p, e, q, n0) | constant (eta, alpha = "zero" | "classic")
//! lipschitz = 1.0      # optional; defaults to the problem's constant
//!
//! [noise]
//! kind = "gaussian_iso" # zero | gaussian_iso | bounded_uniform | rademacher (sigma) | mini_batch (batch)
//!
//! [run]
//! anchor = [3.0, 4.0]
//! x0 = [5.0, -1.0]     # or x0_radius = 10.0 (the default)
//! horizon = 100000
//! seeds = 32
//! master_seed = 0
//! streams = [0, 1]     # optional explicit stream ids, replaces seeds
//! out = "out"
//! override_schedule = false
//! asymptotic = false
//!
//! [rates]
//! window = [100, 100000]
//!
//! [trajectories]
//! methods = ["gd", "halpern_gd"]
//! ```
//!
//! Run `i` uses the random stream `(master_seed, master_seed + i)`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::noise::NoiseModel;
use crate::optimizers::{AffineOperator, Method, DEFAULT_RELAXATION};
use crate::problems::Problem;
use crate::schedules::{AlphaRule, ConstantStepSchedule, PowerLawSchedule, Schedule, ValidationMode};

pub const DEFAULT_SEEDS: usize = 32;
pub const DEFAULT_X0_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: Option<ProblemConfig>,
    pub operator: Option<OperatorConfig>,
    pub method: MethodConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub run: RunConfig,
    pub rates: Option<RatesConfig>,
    pub trajectories: Option<TrajectoriesConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: String,
    pub q: Option<Vec<Vec<f64>>>,
    pub q_csv: Option<PathBuf>,
    pub center: Option<Vec<f64>>,
    pub center_csv: Option<PathBuf>,
    pub a: Option<Vec<Vec<f64>>>,
    pub a_csv: Option<PathBuf>,
    pub b: Option<Vec<f64>>,
    pub b_csv: Option<PathBuf>,
    pub labels: Option<Vec<f64>>,
    pub labels_csv: Option<PathBuf>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub kind: String,
    pub angle_deg: Option<f64>,
    pub dim: Option<usize>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub offset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub relaxation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: String,
    pub a: Option<f64>,
    pub p: Option<f64>,
    pub e: Option<f64>,
    pub q: Option<f64>,
    pub n0: Option<u64>,
    pub eta: Option<f64>,
    pub alpha: Option<String>,
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: String,
    pub sigma: Option<f64>,
    pub batch: Option<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { kind: "zero".into(), sigma: None, batch: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub anchor: Vec<f64>,
    pub x0: Option<Vec<f64>>,
    pub x0_radius: Option<f64>,
    pub horizon: u64,
    pub seeds: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    pub streams: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub override_schedule: bool,
    #[serde(default)]
    pub asymptotic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub window: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoriesConfig {
    pub methods: Vec<String>,
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn need<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| cfg(format!("missing key `{key}`")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg(e.to_string()))
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        value.try_into().map_err(|e: toml::de::Error| cfg(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }

    /// Resolves data files relative to `base` and builds every component.
    pub fn resolve(&self, base: &Path) -> Result<Experiment> {
        let method: Method = self.method.name.parse().map_err(|_| cfg(format!("unknown method.name `{}`", self.method.name)))?;
        let target = match (&self.problem, &self.operator) {
            (Some(p), None) => ResolvedTarget::Problem(Arc::new(build_problem(p, base)?)),
            (None, Some(o)) => ResolvedTarget::Operator(build_operator(o)?),
            (Some(_), Some(_)) => return Err(cfg("give either [problem] or [operator], not both")),
            (None, None) => return Err(cfg("missing section `[problem]` or `[operator]`")),
        };
        let d = target.dim();
        let schedule = build_schedule(&self.schedule)?;
        let lipschitz = match self.schedule.lipschitz {
            Some(l) if l.is_finite() && l >= 0.0 => l,
            Some(l) => return Err(cfg(format!("schedule.lipschitz must be finite and ≥ 0, got {l}"))),
            None => match &target {
                ResolvedTarget::Problem(p) => p.lipschitz_constant(),
                ResolvedTarget::Operator(_) => 1.0,
            },
        };
        let noise = build_noise(&self.noise, &target)?;
        let anchor = Vector::from_vec(self.run.anchor.clone());
        if anchor.len() != d {
            return Err(cfg(format!("run.anchor has length {}, expected {d}", anchor.len())));
        }
        let x0 = match (&self.run.x0, self.run.x0_radius) {
            (Some(x), None) => {
                if x.len() != d {
                    return Err(cfg(format!("run.x0 has length {}, expected {d}", x.len())));
                }
                X0::Explicit(Vector::from_vec(x.clone()))
            }
            (None, r) => {
                let r = r.unwrap_or(DEFAULT_X0_RADIUS);
                if !(r.is_finite() && r >= 0.0) {
                    return Err(cfg(format!("run.x0_radius must be finite and ≥ 0, got {r}")));
                }
                X0::Sphere(r)
            }
            (Some(_), Some(_)) => return Err(cfg("give either run.x0 or run.x0_radius")),
        };
        let relaxation = self.method.relaxation.unwrap_or(DEFAULT_RELAXATION);
        if !(relaxation > 0.0 && relaxation < 1.0) {
            return Err(cfg(format!("method.relaxation must lie in (0,1), got {relaxation}")));
        }
        let streams = match (&self.run.streams, self.run.seeds) {
            (Some(s), None) => {
                if s.is_empty() {
                    return Err(cfg("run.streams is empty"));
                }
                s.clone()
            }
            (None, k) => {
                let k = k.unwrap_or(DEFAULT_SEEDS);
                if k == 0 {
                    return Err(cfg("run.seeds must be ≥ 1"));
                }
                (0..k as u64).map(|i| self.run.master_seed.wrapping_add(i)).collect()
            }
            (Some(_), Some(_)) => return Err(cfg("give either run.seeds or run.streams")),
        };
        let rates_window = match &self.rates {
            Some(r) => (r.window[0], r.window[1]),
            None => (10, self.run.horizon),
        };
        let trajectory_methods = match &self.trajectories {
            Some(t) => t
                .methods
                .iter()
                .map(|m| m.parse().map_err(|_| cfg(format!("unknown method `{m}` in trajectories.methods"))))
                .collect::<Result<Vec<Method>>>()?,
            None => vec![method],
        };
        Ok(Experiment {
            target,
            method,
            schedule,
            lipschitz,
            noise,
            anchor,
            x0,
            horizon: self.run.horizon,
            master_seed: self.run.master_seed,
            streams,
            relaxation,
            override_schedule: self.run.override_schedule,
            mode: if self.run.asymptotic { ValidationMode::Asymptotic } else { ValidationMode::AllN },
            rates_window,
            trajectory_methods,
        })
    }
}

#[derive(Debug, Clone)]
pub enum ResolvedTarget {
    Problem(Arc<Problem>),
    Operator(AffineOperator),
}

impl ResolvedTarget {
    pub fn dim(&self) -> usize {
        match self {
            ResolvedTarget::Problem(p) => p.dim(),
            ResolvedTarget::Operator(o) => o.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum X0 {
    Explicit(Vector),
    /// Pseudorandom point at this distance from the anchor.
    Sphere(f64),
}

/// A config with every component built and checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub target: ResolvedTarget,
    pub method: Method,
    pub schedule: Schedule,
    pub lipschitz: f64,
    pub noise: NoiseModel,
    pub anchor: Vector,
    pub x0: X0,
    pub horizon: u64,
    pub master_seed: u64,
    pub streams: Vec<u64>,
    pub relaxation: f64,
    pub override_schedule: bool,
    pub mode: ValidationMode,
    pub rates_window: (u64, u64),
    pub trajectory_methods: Vec<Method>,
}

impl Experiment {
    pub fn start(&self) -> Vector {
        match &self.x0 {
            X0::Explicit(x) => x.clone(),
            X0::Sphere(r) => crate::optimizers::default_start(&self.anchor, *r, self.master_seed),
        }
    }
}

fn read_csv_rows(base: &Path, path: &Path) -> Result<Vec<Vec<f64>>> {
    let full = base.join(path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&full)
        .map_err(|e| cfg(format!("{}: {e}", full.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| cfg(format!("{}: {e}", full.display())))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| cfg(format!("{}: `{s}`: {e}", full.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn matrix_field(inline: &Option<Vec<Vec<f64>>>, file: &Option<PathBuf>, key: &str, base: &Path) -> Result<Option<Matrix>> {
    let rows = match (inline, file) {
        (Some(r), None) => r.clone(),
        (None, Some(p)) => read_csv_rows(base, p)?,
        (None, None) => return Ok(None),
        (Some(_), Some(_)) => return Err(cfg(format!("give either `{key}` or `{key}_csv`"))),
    };
    linalg::from_rows(&rows)
        .map(Some)
        .ok_or_else(|| cfg(format!("`{key}` must be a nonempty rectangular matrix")))
}

fn vector_field(inline: &Option<Vec<f64>>, file: &Option<PathBuf>, key: &str, base: &Path) -> Result<Option<Vector>> {
    match (inline, file) {
        (Some(v), None) => Ok(Some(Vector::from_vec(v.clone()))),
        (None, Some(p)) => {
            let rows = read_csv_rows(base, p)?;
            // either one row or one column
            let flat: Vec<f64> = if rows.len() == 1 {
                rows[0].clone()
            } else if rows.iter().all(|r| r.len() == 1) {
                rows.iter().map(|r| r[0]).collect()
            } else {
                return Err(cfg(format!("`{key}_csv` must hold a single row or column")));
            };
            Ok(Some(Vector::from_vec(flat)))
        }
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(cfg(format!("give either `{key}` or `{key}_csv`"))),
    }
}

fn with_key(e: Error, section: &str) -> Error {
    match e {
        Error::InvalidArgument(m) => cfg(format!("[{section}]: {m}")),
        other => other,
    }
}

fn build_problem(p: &ProblemConfig, base: &Path) -> Result<Problem> {
    let missing = |k: &str| cfg(format!("missing key `problem.{k}` (or `problem.{k}_csv`)"));
    let built = match p.family.as_str() {
        "quadratic" => {
            let q = matrix_field(&p.q, &p.q_csv, "q", base)?.ok_or_else(|| missing("q"))?;
            let c = vector_field(&p.center, &p.center_csv, "center", base)?.unwrap_or_else(|| Vector::zeros(q.nrows()));
            Problem::quadratic(q, c)
        }
        "least_squares" => {
            let a = matrix_field(&p.a, &p.a_csv, "a", base)?.ok_or_else(|| missing("a"))?;
            let b = vector_field(&p.b, &p.b_csv, "b", base)?.ok_or_else(|| missing("b"))?;
            Problem::least_squares(a, b)
        }
        "logistic" => {
            let a = matrix_field(&p.a, &p.a_csv, "a", base)?.ok_or_else(|| missing("a"))?;
            let y = vector_field(&p.labels, &p.labels_csv, "labels", base)?.ok_or_else(|| missing("labels"))?;
            Problem::logistic(a, y)
        }
        "rastrigin" => Problem::rastrigin(need(&p.dim, "problem.dim")?),
        "rosenbrock" => Problem::rosenbrock(need(&p.dim, "problem.dim")?),
        other => return Err(cfg(format!("unknown problem.family `{other}`"))),
    };
    built.map_err(|e| with_key(e, "problem"))
}

fn build_operator(o: &OperatorConfig) -> Result<AffineOperator> {
    let built = match o.kind.as_str() {
        "rotation" => {
            let deg = need(&o.angle_deg, "operator.angle_deg")?;
            if deg == 90.0 {
                Ok(AffineOperator::quarter_turn())
            } else {
                Ok(AffineOperator::rotation(deg.to_radians()))
            }
        }
        "identity" => {
            let d = need(&o.dim, "operator.dim")?;
            if d == 0 {
                return Err(cfg("operator.dim must be ≥ 1"));
            }
            Ok(AffineOperator::identity(d))
        }
        "affine" => {
            let m = linalg::from_rows(&need(&o.matrix, "operator.matrix")?)
                .ok_or_else(|| cfg("`operator.matrix` must be a nonempty rectangular matrix"))?;
            let offset = o.offset.clone().map(Vector::from_vec).unwrap_or_else(|| Vector::zeros(m.nrows()));
            AffineOperator::new(m, offset)
        }
        other => return Err(cfg(format!("unknown operator.kind `{other}`"))),
    };
    built.map_err(|e| with_key(e, "operator"))
}

fn build_schedule(s: &ScheduleConfig) -> Result<Schedule> {
    let built = match s.kind.as_str() {
        "power_law" => PowerLawSchedule::new(
            need(&s.a, "schedule.a")?,
            need(&s.p, "schedule.p")?,
            need(&s.e, "schedule.e")?,
            need(&s.q, "schedule.q")?,
            need(&s.n0, "schedule.n0")?,
        )
        .map(Schedule::from),
        "constant" => {
            let rule = match s.alpha.as_deref().unwrap_or("zero") {
                "zero" => AlphaRule::Zero,
                "classic" => AlphaRule::Classic,
                other => return Err(cfg(format!("unknown schedule.alpha `{other}` (zero | classic)"))),
            };
            ConstantStepSchedule::new(need(&s.eta, "schedule.eta")?, rule).map(Schedule::from)
        }
        other => return Err(cfg(format!("unknown schedule.kind `{other}`"))),
    };
    built.map_err(|e| with_key(e, "schedule"))
}

fn build_noise(n: &NoiseConfig, target: &ResolvedTarget) -> Result<NoiseModel> {
    let sigma = || need(&n.sigma, "noise.sigma");
    let built = match n.kind.as_str() {
        "zero" => Ok(NoiseModel::Zero),
        "gaussian_iso" => NoiseModel::gaussian(sigma()?),
        "bounded_uniform" => NoiseModel::bounded_uniform(sigma()?),
        "rademacher" => NoiseModel::rademacher(sigma()?),
        "mini_batch" => match target {
            ResolvedTarget::Problem(p) => NoiseModel::mini_batch(p.clone(), need(&n.batch, "noise.batch")?),
            ResolvedTarget::Operator(_) => return Err(cfg("mini_batch noise needs a [problem]")),
        },
        other => return Err(cfg(format!("unknown noise.kind `{other}`"))),
    };
    built.map_err(|e| with_key(e, "noise"))
}

/// Sets the value at a dotted path such as `run.anchor`; the key must exist.
pub fn set_dotted(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| cfg(format!("`{path}` does not name a config key")))?;
        let slot = table.get_mut(*part).ok_or_else(|| cfg(format!("unknown config key `{path}`")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(cfg(format!("`{path}` does not name a config key")))
}
