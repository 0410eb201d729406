//! Martingale-difference perturbations `U_n` and counter-based random streams.
//!
//! A draw is a pure function of `(seed, stream id, slot)`: the generator for
//! slot `n` is ChaCha12 keyed by `seed`, on stream `stream id`, positioned at
//! word `n · 2³²`. Draws at different iterations therefore never share random
//! words, and a run reproduces bit-for-bit regardless of how runs are
//! scheduled across threads.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::Vector;
use crate::problems::Problem;

/// Words reserved per slot. A single draw never consumes anywhere near this.
const SLOT_SHIFT: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of slots handed out by [`RngStream::next_generator`].
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Generator for an explicit slot; does not advance the counter.
    pub fn generator_at(&self, slot: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(u128::from(slot) << SLOT_SHIFT);
        rng
    }

    pub fn next_generator(&mut self) -> ChaCha12Rng {
        let rng = self.generator_at(self.counter);
        self.counter += 1;
        rng
    }
}

#[derive(Debug, Clone)]
pub enum NoiseModel {
    Zero,
    /// Independent `N(0, σ²/d)` coordinates, so `E‖U‖² = σ²`.
    GaussianIso { sigma: f64 },
    /// Uniform on the centred ball whose radius gives `E‖U‖² = σ²`.
    BoundedUniform { sigma: f64 },
    /// `±σ eᵢ` for a uniformly chosen coordinate `i` and sign.
    Rademacher { sigma: f64 },
    /// `U = ∇f_B(x) − ∇f(x)` for a uniformly sampled batch `B` of a finite-sum
    /// problem, with `∇f_B = (m/b) Σ_{i∈B} ∇fᵢ`. State dependent; its second
    /// moment is only estimated, never guaranteed.
    MiniBatch { problem: Arc<Problem>, batch: usize },
}

/// The second-moment bound a noise model declares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaBound {
    Declared(f64),
    Empirical,
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Ok(NoiseModel::GaussianIso { sigma: check_sigma(sigma)? })
    }

    pub fn bounded_uniform(sigma: f64) -> Result<Self> {
        Ok(NoiseModel::BoundedUniform { sigma: check_sigma(sigma)? })
    }

    pub fn rademacher(sigma: f64) -> Result<Self> {
        Ok(NoiseModel::Rademacher { sigma: check_sigma(sigma)? })
    }

    pub fn mini_batch(problem: Arc<Problem>, batch: usize) -> Result<Self> {
        if problem.component_count().is_none() {
            return Err(invalid(format!("mini-batch noise needs a finite-sum problem, got {}", problem.id())));
        }
        if batch == 0 {
            return Err(invalid("mini-batch size must be positive"));
        }
        Ok(NoiseModel::MiniBatch { problem, batch })
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Zero => "zero",
            NoiseModel::GaussianIso { .. } => "gaussian_iso",
            NoiseModel::BoundedUniform { .. } => "bounded_uniform",
            NoiseModel::Rademacher { .. } => "rademacher",
            NoiseModel::MiniBatch { .. } => "mini_batch",
        }
    }

    pub fn sigma(&self) -> SigmaBound {
        match *self {
            NoiseModel::Zero => SigmaBound::Declared(0.0),
            NoiseModel::GaussianIso { sigma }
            | NoiseModel::BoundedUniform { sigma }
            | NoiseModel::Rademacher { sigma } => SigmaBound::Declared(sigma),
            NoiseModel::MiniBatch { .. } => SigmaBound::Empirical,
        }
    }

    /// Declared `σ`, or `None` for mini-batch noise.
    pub fn declared_sigma(&self) -> Option<f64> {
        match self.sigma() {
            SigmaBound::Declared(s) => Some(s),
            SigmaBound::Empirical => None,
        }
    }

    /// Ball radius of the bounded-uniform variant in dimension `d`.
    ///
    /// For `U` uniform on the ball of radius `R` in ℝᵈ, `E‖U‖² = R² d/(d+2)`.
    pub fn ball_radius(sigma: f64, d: usize) -> f64 {
        let d = d as f64;
        sigma * ((d + 2.0) / d).sqrt()
    }

    /// True when every draw is identically zero, so callers can skip the
    /// addition altogether.
    pub fn is_trivial(&self) -> bool {
        match self {
            NoiseModel::Zero => true,
            NoiseModel::GaussianIso { sigma }
            | NoiseModel::BoundedUniform { sigma }
            | NoiseModel::Rademacher { sigma } => *sigma == 0.0,
            NoiseModel::MiniBatch { .. } => false,
        }
    }

    /// One draw of `U_n` at iterate `x`, or `None` when the model is trivial.
    pub fn draw(&self, rng: &RngStream, x: &Vector, n: u64) -> Result<Option<Vector>> {
        if self.is_trivial() {
            return Ok(None);
        }
        let d = x.len();
        if d == 0 {
            return Err(invalid("noise: empty iterate"));
        }
        let mut gen = rng.generator_at(n);
        let u = match self {
            NoiseModel::GaussianIso { sigma } => {
                let sd = sigma / (d as f64).sqrt();
                Vector::from_fn(d, |_, _| sd * gen.sample::<f64, _>(StandardNormal))
            }
            NoiseModel::BoundedUniform { sigma } => {
                let dir = loop {
                    let z = Vector::from_fn(d, |_, _| gen.sample::<f64, _>(StandardNormal));
                    let norm = z.norm();
                    if norm > 0.0 {
                        break z / norm;
                    }
                };
                let radius = Self::ball_radius(*sigma, d) * gen.random::<f64>().powf(1.0 / d as f64);
                dir * radius
            }
            NoiseModel::Rademacher { sigma } => {
                let mut u = Vector::zeros(d);
                let i = gen.random_range(0..d);
                u[i] = if gen.random::<bool>() { *sigma } else { -*sigma };
                u
            }
            NoiseModel::MiniBatch { problem, batch } => {
                let m = problem.component_count().unwrap_or(0);
                if *batch > m {
                    return Err(invalid(format!("mini-batch size {batch} exceeds dataset size {m}")));
                }
                if *batch == m {
                    // the full batch is the exact gradient
                    return Ok(Some(Vector::zeros(d)));
                }
                let rows = index::sample(&mut gen, m, *batch).into_vec();
                let partial = problem.partial_gradient(x, &rows)?;
                let scale = m as f64 / *batch as f64;
                partial * scale - problem.gradient(x)?
            }
            NoiseModel::Zero => unreachable!("handled by is_trivial"),
        };
        Ok(Some(u))
    }

    /// One draw of `U_n`, materialising the zero vector for trivial models.
    pub fn sample(&self, rng: &RngStream, x: &Vector, n: u64) -> Result<Vector> {
        Ok(self.draw(rng, x, n)?.unwrap_or_else(|| Vector::zeros(x.len())))
    }
}

fn check_sigma(sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(invalid(format!("noise sigma must be finite and ≥ 0, got {sigma}")));
    }
    Ok(sigma)
}

/// Empirical first and second moments of the noise at a fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub n_samples: usize,
    /// Per-coordinate sample mean of `U`.
    pub mean: Vec<f64>,
    /// Per-coordinate standard error of `mean`.
    pub mean_se: Vec<f64>,
    /// `‖(1/N) Σ U‖`
    pub mean_norm: f64,
    /// `(1/N) Σ ‖U‖²`
    pub second_moment: f64,
    /// Standard error of `second_moment`.
    pub second_moment_se: f64,
    /// Largest `‖U‖` seen.
    pub max_norm: f64,
}

impl MomentEstimate {
    /// Whether every coordinate of the mean lies within `k` standard errors of 0.
    pub fn mean_within(&self, k: f64) -> bool {
        self.mean.iter().zip(&self.mean_se).all(|(m, se)| m.abs() <= k * se)
    }
}

pub const MIN_MOMENT_SAMPLES: usize = 1_000;

/// Draws `n_samples` independent perturbations at `x` (slots `0..n_samples`)
/// and summarises them.
pub fn estimate_moments(
    noise: &NoiseModel,
    rng: &RngStream,
    x: &Vector,
    n_samples: usize,
) -> Result<MomentEstimate> {
    if n_samples < MIN_MOMENT_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "estimate_moments needs at least {MIN_MOMENT_SAMPLES} samples, got {n_samples}"
        )));
    }
    let d = x.len();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut sq_mean = 0.0;
    let mut sq_m2 = 0.0;
    let mut max_norm = 0.0f64;
    for k in 0..n_samples {
        let u = noise.sample(rng, x, k as u64)?;
        let count = (k + 1) as f64;
        for i in 0..d {
            let delta = u[i] - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (u[i] - mean[i]);
        }
        let (energy, norm) = (u.norm_squared(), u.norm());
        max_norm = max_norm.max(norm);
        let delta = energy - sq_mean;
        sq_mean += delta / (k + 1) as f64;
        sq_m2 += delta * (energy - sq_mean);
    }
    let n = n_samples as f64;
    Ok(MomentEstimate {
        n_samples,
        mean_norm: mean.iter().map(|m| m * m).sum::<f64>().sqrt(),
        mean_se: m2.iter().map(|v| (v / (n - 1.0)).sqrt() / n.sqrt()).collect(),
        mean,
        second_moment: sq_mean,
        second_moment_se: (sq_m2 / (n - 1.0)).sqrt() / n.sqrt(),
        max_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn x4() -> Vector {
        Vector::from_row_slice(&[0.5, -1.0, 2.0, 0.0])
    }

    #[test]
    fn zero_noise_is_zero() {
        let rng = RngStream::new(1, 2);
        assert_eq!(NoiseModel::Zero.sample(&rng, &x4(), 5).unwrap(), Vector::zeros(4));
        let m = estimate_moments(&NoiseModel::Zero, &rng, &x4(), 1000).unwrap();
        assert_eq!((m.mean_norm, m.second_moment), (0.0, 0.0));
    }

    #[test]
    fn rademacher_has_one_signed_coordinate() {
        let rng = RngStream::new(3, 0);
        let noise = NoiseModel::rademacher(2.0).unwrap();
        for n in 0..50 {
            let u = noise.sample(&rng, &x4(), n).unwrap();
            assert_eq!(u.iter().filter(|c| **c != 0.0).count(), 1);
            assert_eq!(u.amax(), 2.0);
            assert_eq!(u.norm(), 2.0);
        }
    }

    #[test]
    fn gaussian_second_moment() {
        let rng = RngStream::new(11, 4);
        let noise = NoiseModel::gaussian(1.0).unwrap();
        let m = estimate_moments(&noise, &rng, &x4(), 100_000).unwrap();
        assert!((m.second_moment - 1.0).abs() < 0.02, "{m:?}");
    }

    #[test]
    fn uniform_ball_moment_and_support() {
        let rng = RngStream::new(5, 9);
        let noise = NoiseModel::bounded_uniform(3.0).unwrap();
        let m = estimate_moments(&noise, &rng, &x4(), 100_000).unwrap();
        assert!((m.second_moment - 9.0).abs() < 0.18, "{m:?}");
        assert!(m.max_norm <= NoiseModel::ball_radius(3.0, 4));
    }

    #[test]
    fn full_batch_is_exact() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = Arc::new(Problem::least_squares(a, Vector::from_row_slice(&[1.0, 0.0, 1.0])).unwrap());
        let x = Vector::from_row_slice(&[0.3, -0.2]);
        let full = NoiseModel::mini_batch(p.clone(), 3).unwrap();
        assert_eq!(full.sample(&RngStream::new(0, 0), &x, 0).unwrap(), Vector::zeros(2));
        let too_big = NoiseModel::mini_batch(p.clone(), 4).unwrap();
        assert!(too_big.sample(&RngStream::new(0, 0), &x, 0).is_err());
        assert!(NoiseModel::mini_batch(p, 0).is_err());
    }

    #[test]
    fn minibatch_is_unbiased() {
        let a = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -1.0, 0.5]);
        let p = Arc::new(Problem::least_squares(a, Vector::from_row_slice(&[1.0, 0.0, 1.0, 2.0])).unwrap());
        let noise = NoiseModel::mini_batch(p, 2).unwrap();
        let x = Vector::from_row_slice(&[0.3, -0.2]);
        let m = estimate_moments(&noise, &RngStream::new(2, 2), &x, 20_000).unwrap();
        let se = (m.second_moment / 20_000.0).sqrt();
        assert!(m.mean_norm < 4.0 * se, "{m:?}");
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(estimate_moments(&NoiseModel::Zero, &RngStream::new(0, 0), &x4(), 999).is_err());
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let noise = NoiseModel::gaussian(1.0).unwrap();
        let a = RngStream::new(42, 7);
        let b = RngStream::new(42, 7);
        let c = RngStream::new(42, 8);
        for n in 0..20 {
            let (ua, ub, uc) = (
                noise.sample(&a, &x4(), n).unwrap(),
                noise.sample(&b, &x4(), n).unwrap(),
                noise.sample(&c, &x4(), n).unwrap(),
            );
            assert!(ua.iter().zip(ub.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            assert_ne!(ua, uc);
        }
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let a = RngStream::new(9, 0);
        let b = RngStream::new(9, 1);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|k| a.generator_at(k).sample(StandardNormal)).collect();
        let ys: Vec<f64> = (0..n).map(|k| b.generator_at(k).sample(StandardNormal)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&xs), mean(&ys));
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
    }

    #[test]
    fn next_generator_advances_counter() {
        let mut s = RngStream::new(1, 1);
        let first: u64 = s.next_generator().random();
        assert_eq!(s.counter(), 1);
        let again: u64 = s.generator_at(0).random();
        assert_eq!(first, again);
    }
}
