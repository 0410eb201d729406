//! Halpern weights `α_n` and stepsizes `ε_n`.
//!
//! For the power-law family `α_n = a (n+n₀)^(−p)`, `ε_n = e (n+n₀)^(−q)` every
//! series condition reduces to an inequality between exponents (integral
//! test), so [`validate`] decides each of them exactly. The coupling
//! `ε_n² L² ≤ α_n` reduces to `e²L²/a ≤ (n+n₀)^(2q−p)`, monotone in `n`, and
//! is located in closed form and then pinned down with the same floating-point
//! predicate a brute-force scan would use.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawSchedule {
    pub alpha_scale: f64,
    pub alpha_exp: f64,
    pub eps_scale: f64,
    pub eps_exp: f64,
    pub offset: u64,
}

impl PowerLawSchedule {
    pub fn new(alpha_scale: f64, alpha_exp: f64, eps_scale: f64, eps_exp: f64, offset: u64) -> Result<Self> {
        let finite = [alpha_scale, alpha_exp, eps_scale, eps_exp].iter().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("power-law schedule: non-finite parameter"));
        }
        if alpha_scale <= 0.0 || eps_scale <= 0.0 {
            return Err(invalid("power-law schedule: scales must be positive"));
        }
        if alpha_exp < 0.0 || eps_exp < 0.0 {
            return Err(invalid("power-law schedule: exponents must be nonnegative"));
        }
        if offset < 1 {
            return Err(invalid("power-law schedule: offset n0 must be at least 1"));
        }
        Ok(PowerLawSchedule { alpha_scale, alpha_exp, eps_scale, eps_exp, offset })
    }

    fn base(&self, n: u64) -> f64 {
        (n + self.offset) as f64
    }

    pub fn alpha_at(&self, n: u64) -> f64 {
        self.alpha_scale * self.base(n).powf(-self.alpha_exp)
    }

    pub fn eps_at(&self, n: u64) -> f64 {
        self.eps_scale * self.base(n).powf(-self.eps_exp)
    }

    /// `true` when `(1 − α_n) + ε_n² L² ≤ 1` fails at `n`.
    pub fn coupling_violated(&self, n: u64, lipschitz: f64) -> bool {
        let e = self.eps_at(n);
        e * e * lipschitz * lipschitz > self.alpha_at(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `α_n = 0`: plain GD / KM.
    Zero,
    /// `α_n = 1/(n+2)`
    Classic,
}

impl AlphaRule {
    pub fn alpha_at(self, n: u64) -> f64 {
        match self {
            AlphaRule::Zero => 0.0,
            AlphaRule::Classic => 1.0 / (n as f64 + 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantStepSchedule {
    pub eta: f64,
    pub alpha_rule: AlphaRule,
}

impl ConstantStepSchedule {
    pub fn new(eta: f64, alpha_rule: AlphaRule) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(invalid(format!("constant step must be finite and ≥ 0, got {eta}")));
        }
        Ok(ConstantStepSchedule { eta, alpha_rule })
    }

    /// Whether `η ∈ (0, 2/L)`, which makes `x ↦ x − η∇f(x)` averaged.
    pub fn step_admissible(&self, lipschitz: f64) -> bool {
        self.eta > 0.0 && self.eta * lipschitz < 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    PowerLaw(PowerLawSchedule),
    Constant(ConstantStepSchedule),
}

impl Schedule {
    pub fn alpha_at(&self, n: u64) -> f64 {
        match self {
            Schedule::PowerLaw(s) => s.alpha_at(n),
            Schedule::Constant(s) => s.alpha_rule.alpha_at(n),
        }
    }

    pub fn eps_at(&self, n: u64) -> f64 {
        match self {
            Schedule::PowerLaw(s) => s.eps_at(n),
            Schedule::Constant(s) => s.eta,
        }
    }

    /// `Σ_{k<n} ε_k²`
    pub fn eps_sq_partial_sum(&self, n: u64) -> f64 {
        (0..n).map(|k| self.eps_at(k).powi(2)).sum()
    }

    pub fn describe(&self) -> String {
        match self {
            Schedule::PowerLaw(s) => format!(
                "power_law(a={}, p={}, e={}, q={}, n0={})",
                s.alpha_scale, s.alpha_exp, s.eps_scale, s.eps_exp, s.offset
            ),
            Schedule::Constant(s) => format!("constant(eta={}, alpha={:?})", s.eta, s.alpha_rule),
        }
    }
}

impl From<PowerLawSchedule> for Schedule {
    fn from(s: PowerLawSchedule) -> Self {
        Schedule::PowerLaw(s)
    }
}

impl From<ConstantStepSchedule> for Schedule {
    fn from(s: ConstantStepSchedule) -> Self {
        Schedule::Constant(s)
    }
}

/// `γ_n = α_n − ε_n² L²` for `n = 0..horizon`.
pub fn coupling_margin(schedule: &Schedule, lipschitz: f64, horizon: u64) -> Vec<f64> {
    (0..horizon)
        .map(|n| {
            let e = schedule.eps_at(n);
            schedule.alpha_at(n) - e * e * lipschitz * lipschitz
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub holds: bool,
    pub reason: String,
}

impl Condition {
    fn new(holds: bool, ok: impl Into<String>, fail: impl Into<String>) -> Self {
        Condition { holds, reason: if holds { ok.into() } else { fail.into() } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Coupling must hold for every `n ≥ 0`.
    #[default]
    AllN,
    /// Coupling only needs to hold from some index `ñ` on.
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub schedule: PowerLawSchedule,
    pub lipschitz: f64,
    pub mode: ValidationMode,
    pub alpha_in_01: Condition,
    pub alpha_to_zero: Condition,
    pub sum_alpha_div: Condition,
    pub sum_alpha_sq_conv: Condition,
    pub eps_to_zero: Condition,
    pub sum_eps_div: Condition,
    pub sum_eps_sq_conv: Condition,
    pub ratio_eps_alpha_div: Condition,
    pub sum_alpha_eps_conv: Condition,
    /// `α_n/ε_n² → ∞`. Sufficient for eventual coupling; informational only.
    pub remark_ratio_div: Condition,
    /// All-n coupling, or eventual coupling in asymptotic mode.
    pub coupling_all_n: Condition,
    /// First `n` with `ε_n² L² > α_n`.
    pub first_coupling_violation: Option<u64>,
    /// Smallest `ñ` such that coupling holds for every `n ≥ ñ`.
    pub coupling_holds_from: Option<u64>,
    /// First `n` with `ε_n ≤ 1/L` (all later `n` then satisfy it too).
    pub eps_below_inv_lipschitz_from: Option<u64>,
    pub verdict: bool,
}

impl ScheduleReport {
    /// `(name, condition)` pairs in a fixed order.
    pub fn conditions(&self) -> Vec<(&'static str, &Condition)> {
        vec![
            ("alpha_in_01", &self.alpha_in_01),
            ("alpha_to_zero", &self.alpha_to_zero),
            ("sum_alpha_div", &self.sum_alpha_div),
            ("sum_alpha_sq_conv", &self.sum_alpha_sq_conv),
            ("eps_to_zero", &self.eps_to_zero),
            ("sum_eps_div", &self.sum_eps_div),
            ("sum_eps_sq_conv", &self.sum_eps_sq_conv),
            ("ratio_eps_alpha_div", &self.ratio_eps_alpha_div),
            ("sum_alpha_eps_conv", &self.sum_alpha_eps_conv),
            ("remark_ratio_div", &self.remark_ratio_div),
            ("coupling_all_n", &self.coupling_all_n),
        ]
    }

    /// Robbins–Monro conditions on `ε_n` alone.
    pub fn robbins_monro(&self) -> bool {
        self.eps_to_zero.holds && self.sum_eps_div.holds && self.sum_eps_sq_conv.holds
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.conditions()
            .into_iter()
            .filter(|(name, c)| !c.holds && *name != "remark_ratio_div")
            .map(|(name, _)| name)
            .collect()
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "schedule  {}\nL         {}\nmode      {:?}\n",
            Schedule::PowerLaw(self.schedule).describe(),
            self.lipschitz,
            self.mode
        );
        for (name, c) in self.conditions() {
            let mark = if c.holds { "ok  " } else { "FAIL" };
            out.push_str(&format!("{name:<22}{mark}  {}\n", c.reason));
        }
        let opt = |v: Option<u64>| v.map_or_else(|| "none".to_string(), |n| n.to_string());
        out.push_str(&format!("{:<22}{}\n", "first_violation", opt(self.first_coupling_violation)));
        out.push_str(&format!("{:<22}{}\n", "coupling_from", opt(self.coupling_holds_from)));
        out.push_str(&format!("{:<22}{}\n", "eps_below_1/L_from", opt(self.eps_below_inv_lipschitz_from)));
        out.push_str(&format!("{:<22}{}\n", "verdict", if self.verdict { "PASS" } else { "FAIL" }));
        out
    }
}

/// Decides every schedule condition for a power-law pair and smoothness `L`.
pub fn validate(s: &PowerLawSchedule, lipschitz: f64, mode: ValidationMode) -> ScheduleReport {
    let (a, p, q) = (s.alpha_scale, s.alpha_exp, s.eps_exp);
    let n0 = s.offset as f64;

    // α_n ≤ α_0 since p ≥ 0; α_n > 0 always.
    let alpha0 = a * n0.powf(-p);
    let alpha_in_01 = Condition::new(
        alpha0 < 1.0,
        format!("α_0 = {alpha0:.6} < 1 and α_n is nonincreasing"),
        format!("α_0 = {alpha0:.6} ≥ 1"),
    );
    let alpha_to_zero = Condition::new(p > 0.0, "p > 0", "α_n does not tend to 0 (p = 0)");
    let sum_alpha_div = Condition::new(p <= 1.0, "Σα_n diverges (p ≤ 1)", "Σα_n converges (p > 1)");
    let sum_alpha_sq_conv = Condition::new(p > 0.5, "Σα_n² converges (p > ½)", "Σα_n² diverges");
    let eps_to_zero = Condition::new(q > 0.0, "q > 0", "ε_n does not tend to 0 (q = 0)");
    let sum_eps_div = Condition::new(q <= 1.0, "Σε_n diverges (q ≤ 1)", "Σε_n converges (q > 1)");
    let sum_eps_sq_conv = Condition::new(q > 0.5, "Σε_n² converges (q > ½)", "Σε_n² diverges");
    let ratio_eps_alpha_div = Condition::new(
        q < p,
        "ε_n/α_n → ∞ (q < p)",
        if q == p { "ε_n/α_n tends to a constant (q = p)" } else { "ε_n/α_n → 0 (q > p)" },
    );
    let sum_alpha_eps_conv =
        Condition::new(p + q > 1.0, "Σα_nε_n converges (p + q > 1)", "Σα_nε_n diverges (p + q ≤ 1)");
    let remark_ratio_div = Condition::new(
        p < 2.0 * q,
        "α_n/ε_n² → ∞ (p < 2q)",
        "α_n/ε_n² does not diverge (p ≥ 2q)",
    );

    let (first_violation, holds_from) = locate_coupling(s, lipschitz);
    let coupling_all_n = match mode {
        ValidationMode::AllN => Condition::new(
            first_violation.is_none() && (lipschitz == 0.0 || p <= 2.0 * q),
            "(1 − α_n) + ε_n²L² ≤ 1 for all n",
            match first_violation {
                Some(n) => format!("(1 − α_n) + ε_n²L² > 1 at n = {n}"),
                None => "(1 − α_n) + ε_n²L² > 1 for all large n (p > 2q), past the index range".to_string(),
            },
        ),
        ValidationMode::Asymptotic => Condition::new(
            holds_from.is_some(),
            format!("(1 − α_n) + ε_n²L² ≤ 1 for all n ≥ {}", holds_from.unwrap_or_default()),
            "coupling fails for infinitely many n",
        ),
    };
    let eps_below = locate_eps_below_inv(s, lipschitz);

    let required = [
        &alpha_in_01,
        &alpha_to_zero,
        &sum_alpha_div,
        &sum_alpha_sq_conv,
        &eps_to_zero,
        &sum_eps_div,
        &sum_eps_sq_conv,
        &ratio_eps_alpha_div,
        &sum_alpha_eps_conv,
        &coupling_all_n,
    ];
    let verdict = required.iter().all(|c| c.holds);
    ScheduleReport {
        schedule: *s,
        lipschitz,
        mode,
        alpha_in_01,
        alpha_to_zero,
        sum_alpha_div,
        sum_alpha_sq_conv,
        eps_to_zero,
        sum_eps_div,
        sum_eps_sq_conv,
        ratio_eps_alpha_div,
        sum_alpha_eps_conv,
        remark_ratio_div,
        coupling_all_n,
        first_coupling_violation: first_violation,
        coupling_holds_from: holds_from,
        eps_below_inv_lipschitz_from: eps_below,
        verdict,
    }
}

/// Beyond this the closed-form index is reported as "never" (it would not fit
/// in any run anyway and `u64 → f64` stops being exact).
const INDEX_CAP: f64 = 1e18;

/// Returns `(first violation, index from which coupling holds forever)`.
fn locate_coupling(s: &PowerLawSchedule, lipschitz: f64) -> (Option<u64>, Option<u64>) {
    if lipschitz == 0.0 {
        return (None, Some(0));
    }
    let violated = |n: u64| s.coupling_violated(n, lipschitz);
    let ratio = (s.eps_scale * lipschitz).powi(2) / s.alpha_scale;
    let growth = 2.0 * s.eps_exp - s.alpha_exp;
    let n0 = s.offset as f64;

    if growth > 0.0 {
        // holds exactly for (n+n0) ≥ ratio^(1/growth)
        let threshold = ratio.powf(1.0 / growth);
        if threshold > INDEX_CAP {
            return (violated(0).then_some(0), None);
        }
        let guess = (threshold - n0).max(0.0).ceil() as u64;
        let from = refine_first(guess, |n| !violated(n));
        let first = if from == 0 { None } else { Some(0) };
        (first, Some(from))
    } else if growth == 0.0 {
        if violated(0) {
            (Some(0), None)
        } else {
            (None, Some(0))
        }
    } else {
        // (n+n0)^growth is decreasing: holds while (n+n0) ≤ ratio^(1/growth)
        let threshold = ratio.powf(1.0 / growth);
        if threshold > INDEX_CAP {
            return (None, Some(0));
        }
        let guess = (threshold - n0 + 1.0).max(0.0).floor() as u64;
        let first = refine_first(guess, violated);
        (Some(first), None)
    }
}

fn locate_eps_below_inv(s: &PowerLawSchedule, lipschitz: f64) -> Option<u64> {
    if lipschitz == 0.0 {
        return Some(0);
    }
    let below = |n: u64| s.eps_at(n) * lipschitz <= 1.0;
    if s.eps_exp == 0.0 {
        return if below(0) { Some(0) } else { None };
    }
    let threshold = (s.eps_scale * lipschitz).powf(1.0 / s.eps_exp);
    if threshold > INDEX_CAP {
        return None;
    }
    let guess = (threshold - s.offset as f64).max(0.0).ceil() as u64;
    Some(refine_first(guess, below))
}

/// Smallest `n` with `pred(n)` near `guess`, for a predicate that is monotone
/// (false…false true…true) up to rounding at the switch point.
fn refine_first(guess: u64, pred: impl Fn(u64) -> bool) -> u64 {
    let mut n = guess;
    while !pred(n) {
        n += 1;
    }
    while n > 0 && pred(n - 1) {
        n -= 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> PowerLawSchedule {
        PowerLawSchedule::new(1.0, 0.9, 1.0, 0.6, 2).unwrap()
    }

    #[test]
    fn power_law_evaluation() {
        let s = reference();
        assert_relative_eq!(s.alpha_at(0), 2f64.powf(-0.9), epsilon = 1e-15);
        assert_relative_eq!(s.alpha_at(0), 0.53589, epsilon = 1e-5);
        assert_relative_eq!(s.eps_at(0), 0.65975, epsilon = 1e-5);
        let c = Schedule::Constant(ConstantStepSchedule::new(0.5, AlphaRule::Classic).unwrap());
        assert_eq!(c.alpha_at(3), 0.2);
        assert_eq!(c.eps_at(3), 0.5);
    }

    #[test]
    fn reference_schedule_passes() {
        let r = validate(&reference(), 1.0, ValidationMode::AllN);
        for (name, c) in r.conditions() {
            assert!(c.holds, "{name}: {}", c.reason);
        }
        assert!(r.verdict);
        assert_eq!(r.first_coupling_violation, None);
        assert_eq!(r.coupling_holds_from, Some(0));
        assert_eq!(r.eps_below_inv_lipschitz_from, Some(0));
    }

    #[test]
    fn boundary_exponents() {
        let half = PowerLawSchedule::new(0.5, 0.5, 1.0, 0.6, 2).unwrap();
        let r = validate(&half, 1.0, ValidationMode::AllN);
        assert!(!r.sum_alpha_sq_conv.holds);
        assert_eq!(r.sum_alpha_sq_conv.reason, "Σα_n² diverges");
        assert!(!r.verdict);

        let harmonic = PowerLawSchedule::new(1.0, 1.0, 1.0, 0.6, 2).unwrap();
        assert!(validate(&harmonic, 1.0, ValidationMode::AllN).sum_alpha_div.holds);

        let slow_eps = PowerLawSchedule::new(1.0, 0.9, 1.0, 0.95, 2).unwrap();
        assert!(!validate(&slow_eps, 1.0, ValidationMode::AllN).ratio_eps_alpha_div.holds);

        let equal = PowerLawSchedule::new(0.5, 0.8, 5.0, 0.8, 2).unwrap();
        assert!(!validate(&equal, 1.0, ValidationMode::AllN).ratio_eps_alpha_div.holds);
    }

    #[test]
    fn coupling_margin_values() {
        let s: Schedule = reference().into();
        let g = coupling_margin(&s, 1.0, 5);
        assert_relative_eq!(g[0], 0.53589 - 0.43528, epsilon = 1e-5);
        assert_relative_eq!(g[0], 0.10061, epsilon = 1e-5);
        let free = coupling_margin(&s, 0.0, 5);
        for (n, gn) in free.iter().enumerate() {
            assert_eq!(*gn, s.alpha_at(n as u64));
        }
    }

    #[test]
    fn coupling_failure_and_recovery() {
        // growth 2q − p = 0.3 > 0 but e²L²/a is large: fails early, holds later
        let s = PowerLawSchedule::new(0.5, 0.9, 2.0, 0.6, 1).unwrap();
        let all = validate(&s, 1.0, ValidationMode::AllN);
        assert_eq!(all.first_coupling_violation, Some(0));
        assert!(!all.verdict);
        let asym = validate(&s, 1.0, ValidationMode::Asymptotic);
        let from = asym.coupling_holds_from.unwrap();
        assert!(asym.verdict);
        assert!(s.coupling_violated(from - 1, 1.0));
        for n in from..from + 1000 {
            assert!(!s.coupling_violated(n, 1.0));
        }
        let g = coupling_margin(&s.into(), 1.0, from);
        assert!(g[0] <= 0.0);

        // growth < 0: holds at first, fails from some n on
        let s = PowerLawSchedule::new(1.0, 0.9, 0.5, 0.4, 1).unwrap();
        let r = validate(&s, 1.0, ValidationMode::Asymptotic);
        let first = r.first_coupling_violation.unwrap();
        assert!(first > 0 && r.coupling_holds_from.is_none() && !r.verdict);
        assert!(!s.coupling_violated(first - 1, 1.0) && s.coupling_violated(first, 1.0));
    }

    #[test]
    fn eps_below_inverse_lipschitz() {
        let s = reference();
        let r = validate(&s, 10.0, ValidationMode::AllN);
        let n = r.eps_below_inv_lipschitz_from.unwrap();
        assert!(s.eps_at(n) * 10.0 <= 1.0 && s.eps_at(n - 1) * 10.0 > 1.0);
    }

    #[test]
    fn report_is_deterministic() {
        let s = PowerLawSchedule::new(0.7, 0.85, 1.3, 0.55, 3).unwrap();
        assert_eq!(validate(&s, 2.0, ValidationMode::AllN), validate(&s, 2.0, ValidationMode::AllN));
    }

    #[test]
    fn invalid_parameters() {
        assert!(PowerLawSchedule::new(0.0, 0.9, 1.0, 0.6, 2).is_err());
        assert!(PowerLawSchedule::new(1.0, 0.9, 1.0, 0.6, 0).is_err());
        assert!(PowerLawSchedule::new(1.0, -0.1, 1.0, 0.6, 2).is_err());
        assert!(ConstantStepSchedule::new(f64::NAN, AlphaRule::Zero).is_err());
    }

    #[test]
    fn constant_step_admissibility() {
        let c = ConstantStepSchedule::new(0.5, AlphaRule::Classic).unwrap();
        assert!(c.step_admissible(1.0));
        assert!(!c.step_admissible(4.0));
        assert!(c.step_admissible(0.0));
        assert!(!ConstantStepSchedule::new(0.0, AlphaRule::Zero).unwrap().step_admissible(1.0));
    }

    #[test]
    fn partial_sums_stay_below_integral_bounds() {
        let s = reference();
        let sch: Schedule = s.into();
        let n0 = s.offset as f64;
        // Σ_{k≥0} (k+n0)^(-s) ≤ n0^(-s) + n0^(1-s)/(s-1)
        let tail = |e: f64| n0.powf(-e) + n0.powf(1.0 - e) / (e - 1.0);
        let (mut sa2, mut se2, mut sae, mut sa) = (0.0, 0.0, 0.0, 0.0);
        let mut min_gamma = f64::INFINITY;
        for n in 0..1_000_000u64 {
            let (a, e) = (sch.alpha_at(n), sch.eps_at(n));
            sa += a;
            sa2 += a * a;
            se2 += e * e;
            sae += a * e;
            min_gamma = min_gamma.min(a - e * e);
        }
        assert!(sa2 <= tail(2.0 * s.alpha_exp));
        assert!(se2 <= tail(2.0 * s.eps_exp));
        assert!(sae <= tail(s.alpha_exp + s.eps_exp));
        assert!(sa > 25.0);
        assert!(min_gamma > 0.0);

        // ε/α and α/ε² nondecreasing when q < p < 2q
        let mut prev = (0.0, 0.0);
        for n in 0..10_000u64 {
            let (a, e) = (sch.alpha_at(n), sch.eps_at(n));
            let cur = (e / a, a / (e * e));
            assert!(cur.0 >= prev.0 * (1.0 - 1e-15) && cur.1 >= prev.1 * (1.0 - 1e-15));
            prev = cur;
        }
    }
}
