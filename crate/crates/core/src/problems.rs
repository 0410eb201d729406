//! Test objectives: values, gradients, smoothness constants and solution sets.
//!
//! Every convex family carries an analytic description of its minimizer set
//! `S`, so the metric projection `P_S(u)` is available in closed form and can
//! serve as ground truth for anchored methods. Nonconvex families (Rastrigin,
//! Rosenbrock) only feed trajectory dumps and expose [`SolutionSet::Unknown`].

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::noise::RngStream;

/// Relative eigenvalue threshold below which a spectral component of `Q`
/// (or a singular value of `A`) counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Half-width of the box `‖x‖∞ ≤ R` on which the Rosenbrock smoothness
/// surrogate is valid.
pub const ROSENBROCK_BOX: f64 = 2.0;

#[derive(Debug, Clone)]
pub enum Family {
    /// `½ (x − c)ᵀ Q (x − c)`
    Quadratic { q: Matrix, center: Vector },
    /// `½ ‖A x − b‖²`
    LeastSquares { a: Matrix, b: Vector },
    /// `Σᵢ log(1 + exp(−yᵢ aᵢᵀx))` with labels `yᵢ ∈ {−1, +1}`
    Logistic { a: Matrix, labels: Vector },
    Rastrigin,
    Rosenbrock,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Quadratic { .. } => "quadratic",
            Family::LeastSquares { .. } => "least_squares",
            Family::Logistic { .. } => "logistic",
            Family::Rastrigin => "rastrigin",
            Family::Rosenbrock => "rosenbrock",
        }
    }
}

/// Minimizer set of a convex problem.
#[derive(Debug, Clone)]
pub enum SolutionSet {
    /// `S = { c + w : Vᵀw = 0 }` where the columns of `V` are an orthonormal
    /// basis of the orthogonal complement of the direction space of `S`.
    Affine { base: Vector, normal_basis: Matrix },
    Singleton(Vector),
    Unknown,
}

impl SolutionSet {
    pub fn kind(&self) -> &'static str {
        match self {
            SolutionSet::Affine { .. } => "affine",
            SolutionSet::Singleton(_) => "singleton",
            SolutionSet::Unknown => "unknown",
        }
    }

    /// Dimension of `S` (`None` when unknown).
    pub fn dimension(&self) -> Option<usize> {
        match self {
            SolutionSet::Affine { base, normal_basis } => {
                Some(base.len() - normal_basis.ncols())
            }
            SolutionSet::Singleton(_) => Some(0),
            SolutionSet::Unknown => None,
        }
    }
}

/// Smoothness constant together with the region where it is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smoothness {
    pub value: f64,
    /// `false` when `value` only bounds the gradient's Lipschitz modulus on a
    /// bounded region (see [`ROSENBROCK_BOX`]).
    pub global: bool,
}

#[derive(Debug, Clone)]
pub struct Problem {
    family: Family,
    dim: usize,
    smoothness: Smoothness,
    convex: bool,
    f_star: Option<f64>,
    solution: SolutionSet,
}

impl Problem {
    /// `½ (x − c)ᵀ Q (x − c)` with `Q` symmetric PSD.
    ///
    /// Eigenvalues in `[−1e-10·λ_max, 1e-10·λ_max]` are treated as zero; if any
    /// such eigenvalue is not exactly zero, `Q` is rebuilt from the clipped
    /// spectrum so that `c + null(Q)` is an exact minimizer set.
    pub fn quadratic(q: Matrix, center: Vector) -> Result<Self> {
        let d = q.nrows();
        if d == 0 || q.ncols() != d {
            return Err(invalid("quadratic: Q must be a nonempty square matrix"));
        }
        check_dim(d, center.len(), "quadratic center")?;
        if !q.iter().chain(center.iter()).all(|v| v.is_finite()) {
            return Err(invalid("quadratic: non-finite entries"));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-10 * scale {
            return Err(invalid("quadratic: Q is not symmetric"));
        }
        let sym = (&q + q.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let lambda_max = eig.eigenvalues.max().max(0.0);
        let tol = RANK_TOL * lambda_max;
        let lambda_min = eig.eigenvalues.min();
        if lambda_min < -tol {
            return Err(invalid(format!(
                "quadratic: Q is not PSD (smallest eigenvalue {lambda_min:e})"
            )));
        }
        let mut keep = Vec::new();
        let mut clipped = false;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > tol {
                keep.push(i);
            } else if lam != 0.0 {
                clipped = true;
            }
        }
        let q = if clipped {
            let mut rebuilt = Matrix::zeros(d, d);
            for &i in &keep {
                let v = eig.eigenvectors.column(i);
                rebuilt += eig.eigenvalues[i] * v * v.transpose();
            }
            rebuilt
        } else {
            sym
        };
        let solution = if keep.len() == d {
            SolutionSet::Singleton(center.clone())
        } else {
            SolutionSet::Affine {
                base: center.clone(),
                normal_basis: eig.eigenvectors.select_columns(&keep),
            }
        };
        Ok(Problem {
            family: Family::Quadratic { q, center },
            dim: d,
            smoothness: Smoothness { value: lambda_max, global: true },
            convex: true,
            f_star: Some(0.0),
            solution,
        })
    }

    /// `½ ‖A x − b‖²`. The minimizer set is the solution set of the normal
    /// equations, `A⁺b + null(A)`.
    pub fn least_squares(a: Matrix, b: Vector) -> Result<Self> {
        let (m, d) = a.shape();
        if m == 0 || d == 0 {
            return Err(invalid("least_squares: A must be nonempty"));
        }
        check_dim(m, b.len(), "least_squares b")?;
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(invalid("least_squares: non-finite entries"));
        }
        let svd = a.clone().svd(true, true);
        let (u, v_t) = match (&svd.u, &svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(invalid("least_squares: SVD failed")),
        };
        let sigma_max = svd.singular_values.max();
        let tol = RANK_TOL.sqrt() * sigma_max;
        let keep: Vec<usize> = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tol)
            .map(|(i, _)| i)
            .collect();
        let mut base = Vector::zeros(d);
        for &i in &keep {
            let coef = u.column(i).dot(&b) / svd.singular_values[i];
            base += coef * v_t.row(i).transpose();
        }
        let residual = &a * &base - &b;
        let f_star = 0.5 * residual.norm_squared();
        let solution = if keep.len() == d {
            SolutionSet::Singleton(base)
        } else {
            let rows: Vec<_> = keep.iter().map(|&i| v_t.row(i).transpose()).collect();
            SolutionSet::Affine { base, normal_basis: Matrix::from_columns(&rows) }
        };
        Ok(Problem {
            family: Family::LeastSquares { a, b },
            dim: d,
            smoothness: Smoothness { value: sigma_max * sigma_max, global: true },
            convex: true,
            f_star: Some(f_star),
            solution,
        })
    }

    /// Unnormalised logistic loss. The minimizer has no closed form (and does
    /// not exist for separable data), so the solution set is `Unknown`.
    pub fn logistic(a: Matrix, labels: Vector) -> Result<Self> {
        let (m, d) = a.shape();
        if m == 0 || d == 0 {
            return Err(invalid("logistic: A must be nonempty"));
        }
        check_dim(m, labels.len(), "logistic labels")?;
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("logistic: labels must be ±1"));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(invalid("logistic: non-finite entries"));
        }
        let gram = a.transpose() * &a;
        let lambda_max = SymmetricEigen::new(gram).eigenvalues.max().max(0.0);
        Ok(Problem {
            family: Family::Logistic { a, labels },
            dim: d,
            smoothness: Smoothness { value: 0.25 * lambda_max, global: true },
            convex: true,
            f_star: None,
            solution: SolutionSet::Unknown,
        })
    }

    /// `10 d + Σ (xᵢ² − 10 cos 2πxᵢ)`, global minimum 0 at the origin.
    ///
    /// `|f''| ≤ 2 + 40π²` everywhere, so the reported constant is global even
    /// though the function is nonconvex.
    pub fn rastrigin(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("rastrigin: dimension must be positive"));
        }
        Ok(Problem {
            family: Family::Rastrigin,
            dim,
            smoothness: Smoothness { value: 2.0 + 40.0 * PI * PI, global: true },
            convex: false,
            f_star: Some(0.0),
            solution: SolutionSet::Unknown,
        })
    }

    /// `Σ 100 (xᵢ₊₁ − xᵢ²)² + (1 − xᵢ)²`, global minimum 0 at `(1, …, 1)`.
    ///
    /// The gradient is not globally Lipschitz. The reported constant is a
    /// Gershgorin bound on the Hessian over `‖x‖∞ ≤ ROSENBROCK_BOX`.
    pub fn rosenbrock(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("rosenbrock: dimension must be at least 2"));
        }
        let r = ROSENBROCK_BOX;
        // diag: 1200r² + 400r + 2 + 200, off-diagonals: 400r on each side
        let local = 1200.0 * r * r + 1200.0 * r + 202.0;
        Ok(Problem {
            family: Family::Rosenbrock,
            dim,
            smoothness: Smoothness { value: local, global: false },
            convex: false,
            f_star: Some(0.0),
            solution: SolutionSet::Unknown,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn solution_set(&self) -> &SolutionSet {
        &self.solution
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// The smoothness constant `L`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.smoothness.value
    }

    /// Short identifier used in logs, e.g. `quadratic-d2`.
    pub fn id(&self) -> String {
        format!("{}-d{}", self.family.name(), self.dim)
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        check_dim(self.dim, x.len(), "eval_value")?;
        Ok(match &self.family {
            Family::Quadratic { q, center } => {
                let r = x - center;
                0.5 * r.dot(&(q * &r))
            }
            Family::LeastSquares { a, b } => 0.5 * (a * x - b).norm_squared(),
            Family::Logistic { a, labels } => {
                let z = a * x;
                z.iter().zip(labels.iter()).map(|(&z, &y)| softplus(-y * z)).sum()
            }
            Family::Rastrigin => {
                10.0 * self.dim as f64
                    + x.iter().map(|&v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
            }
            Family::Rosenbrock => (0..self.dim - 1)
                .map(|i| {
                    let t = x[i + 1] - x[i] * x[i];
                    100.0 * t * t + (1.0 - x[i]) * (1.0 - x[i])
                })
                .sum(),
        })
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.len(), "eval_grad")?;
        Ok(match &self.family {
            Family::Quadratic { q, center } => q * (x - center),
            Family::LeastSquares { a, b } => a.tr_mul(&(a * x - b)),
            Family::Logistic { a, labels } => {
                let z = a * x;
                let w = Vector::from_fn(z.len(), |i, _| -labels[i] * sigmoid(-labels[i] * z[i]));
                a.tr_mul(&w)
            }
            Family::Rastrigin => x.map(|v| 2.0 * v + 20.0 * PI * (2.0 * PI * v).sin()),
            Family::Rosenbrock => {
                let mut g = Vector::zeros(self.dim);
                for i in 0..self.dim - 1 {
                    let t = x[i + 1] - x[i] * x[i];
                    g[i] += -400.0 * x[i] * t - 2.0 * (1.0 - x[i]);
                    g[i + 1] += 200.0 * t;
                }
                g
            }
        })
    }

    /// Metric projection `P_S(u)` onto the minimizer set.
    pub fn project(&self, u: &Vector) -> Result<Vector> {
        check_dim(self.dim, u.len(), "project_solution_set")?;
        match &self.solution {
            SolutionSet::Affine { base, normal_basis } => {
                let r = u - base;
                Ok(u - normal_basis * normal_basis.tr_mul(&r))
            }
            SolutionSet::Singleton(p) => Ok(p.clone()),
            SolutionSet::Unknown => Err(Error::Unsupported(format!(
                "{} has no closed-form solution set",
                self.id()
            ))),
        }
    }

    /// Largest value of `⟨u − x*, p − x*⟩` over `n_samples` random points
    /// `p ∈ S`. A correct projection `x* = P_S(u)` gives a value at or below
    /// rounding level.
    pub fn check_variational_inequality(
        &self,
        u: &Vector,
        xstar: &Vector,
        n_samples: usize,
        rng_seed: u64,
    ) -> Result<f64> {
        check_dim(self.dim, u.len(), "variational inequality anchor")?;
        check_dim(self.dim, xstar.len(), "variational inequality point")?;
        if n_samples == 0 {
            return Err(invalid("variational inequality: n_samples must be positive"));
        }
        let residual = u - xstar;
        match &self.solution {
            SolutionSet::Singleton(p) => Ok(residual.dot(&(p - xstar))),
            SolutionSet::Affine { base, normal_basis } => {
                let spread = 10.0 * (1.0 + (u - base).norm());
                let stream = RngStream::new(rng_seed, 0);
                let mut gen = stream.generator_at(0);
                let mut worst = f64::NEG_INFINITY;
                for _ in 0..n_samples {
                    let z = Vector::from_fn(self.dim, |_, _| {
                        spread * gen.sample::<f64, _>(StandardNormal)
                    });
                    let w = &z - normal_basis * normal_basis.tr_mul(&z);
                    let p = base + w;
                    worst = worst.max(residual.dot(&(p - xstar)));
                }
                Ok(worst)
            }
            SolutionSet::Unknown => Err(Error::Unsupported(format!(
                "{} has no closed-form solution set",
                self.id()
            ))),
        }
    }

    /// Number of summands for finite-sum families (rows of `A`).
    pub fn component_count(&self) -> Option<usize> {
        match &self.family {
            Family::LeastSquares { a, .. } | Family::Logistic { a, .. } => Some(a.nrows()),
            _ => None,
        }
    }

    /// `Σ_{i ∈ rows} ∇fᵢ(x)` for finite-sum families.
    pub fn partial_gradient(&self, x: &Vector, rows: &[usize]) -> Result<Vector> {
        check_dim(self.dim, x.len(), "partial_gradient")?;
        let mut g = Vector::zeros(self.dim);
        match &self.family {
            Family::LeastSquares { a, b } => {
                for &i in rows {
                    let row = a.row(i);
                    let r = row.dot(&x.transpose()) - b[i];
                    g += r * row.transpose();
                }
            }
            Family::Logistic { a, labels } => {
                for &i in rows {
                    let row = a.row(i);
                    let y = labels[i];
                    let z = row.dot(&x.transpose());
                    g += (-y * sigmoid(-y * z)) * row.transpose();
                }
            }
            _ => {
                return Err(Error::Unsupported(format!("{} is not a finite sum", self.id())));
            }
        }
        Ok(g)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn diag(xs: &[f64]) -> Matrix {
        Matrix::from_diagonal(&v(xs))
    }

    fn half_x1_sq() -> Problem {
        Problem::quadratic(diag(&[1.0, 0.0]), v(&[0.0, 0.0])).unwrap()
    }

    fn half_norm_sq() -> Problem {
        Problem::quadratic(Matrix::identity(2, 2), v(&[0.0, 0.0])).unwrap()
    }

    /// Central finite differences, independent of the analytic gradients.
    fn fd_gradient(p: &Problem, x: &Vector) -> Vector {
        let h = 1e-5 * (1.0 + x.norm());
        Vector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (p.value(&xp).unwrap() - p.value(&xm).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn values_at_reference_points() {
        assert_eq!(half_x1_sq().value(&v(&[3.0, 4.0])).unwrap(), 4.5);
        for d in [1, 2, 5] {
            assert_eq!(Problem::rastrigin(d).unwrap().value(&Vector::zeros(d)).unwrap(), 0.0);
        }
        assert_eq!(Problem::rosenbrock(2).unwrap().value(&v(&[1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn gradients_at_reference_points() {
        assert_eq!(half_x1_sq().gradient(&v(&[3.0, 4.0])).unwrap(), v(&[3.0, 0.0]));
        assert_eq!(half_norm_sq().gradient(&v(&[3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
        let rosen = Problem::rosenbrock(2).unwrap();
        let g = rosen.gradient(&v(&[0.0, 0.0])).unwrap();
        let fd = fd_gradient(&rosen, &v(&[0.0, 0.0]));
        assert_relative_eq!(fd[0], -2.0, epsilon = 1e-6);
        assert_relative_eq!(fd[1], 0.0, epsilon = 1e-6);
        assert_eq!(g, v(&[-2.0, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = half_x1_sq();
        assert!(matches!(p.value(&v(&[1.0])), Err(Error::InvalidArgument(_))));
        assert!(matches!(p.gradient(&v(&[1.0, 2.0, 3.0])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn lipschitz_constants() {
        assert_relative_eq!(half_x1_sq().lipschitz_constant(), 1.0, epsilon = 1e-14);
        let q = Problem::quadratic(diag(&[4.0, 1.0, 0.25]), Vector::zeros(3)).unwrap();
        assert_relative_eq!(q.lipschitz_constant(), 4.0, epsilon = 1e-14);

        // λ_max of AᵀA = [[10,14],[14,20]] from the 2×2 characteristic polynomial.
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (tr, det) = (30.0_f64, 10.0 * 20.0 - 14.0 * 14.0);
        let oracle = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        let ls = Problem::least_squares(a.clone(), v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(ls.lipschitz_constant(), oracle, max_relative = 1e-12);
        assert_relative_eq!(oracle, 29.866, epsilon = 1e-3);

        let lg = Problem::logistic(a, v(&[1.0, -1.0])).unwrap();
        assert_relative_eq!(lg.lipschitz_constant(), 0.25 * oracle, max_relative = 1e-12);
        assert!(!Problem::rosenbrock(2).unwrap().smoothness().global);
    }

    #[test]
    fn projections() {
        assert_eq!(half_x1_sq().project(&v(&[3.0, 4.0])).unwrap(), v(&[0.0, 4.0]));
        assert_eq!(half_norm_sq().project(&v(&[3.0, 4.0])).unwrap(), v(&[0.0, 0.0]));

        // Minimum-norm solution of x₁ + x₂ = 2 via the pseudoinverse: Aᵀ(AAᵀ)⁻¹b.
        let ls = Problem::least_squares(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), v(&[2.0]))
            .unwrap();
        let p = ls.project(&v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
        assert_eq!(ls.solution_set().dimension(), Some(1));
        assert_relative_eq!(ls.f_star().unwrap(), 0.0, epsilon = 1e-24);

        let r = Problem::rosenbrock(2).unwrap();
        assert!(matches!(r.project(&v(&[0.0, 0.0])), Err(Error::Unsupported(_))));
    }

    #[test]
    fn catalog_shapes() {
        let q = Problem::quadratic(diag(&[1.0, 0.0]), Vector::zeros(2)).unwrap();
        assert_eq!(q.solution_set().kind(), "affine");
        assert_eq!(q.solution_set().dimension(), Some(1));
        let r = Problem::rosenbrock(2).unwrap();
        assert!(!r.is_convex());
        assert_eq!(r.f_star(), Some(0.0));
        assert_eq!(r.solution_set().kind(), "unknown");
        assert_eq!(half_norm_sq().solution_set().kind(), "singleton");
    }

    #[test]
    fn non_psd_rejected_and_near_psd_clipped() {
        assert!(Problem::quadratic(diag(&[1.0, -0.1]), Vector::zeros(2)).is_err());
        let nonsym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Problem::quadratic(nonsym, Vector::zeros(2)).is_err());
        let p = Problem::quadratic(diag(&[1.0, -1e-12]), Vector::zeros(2)).unwrap();
        assert_eq!(p.solution_set().dimension(), Some(1));
        // the clipped Q has an exact null direction
        let g = p.gradient(&v(&[0.0, 7.0])).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn variational_inequality() {
        let p = half_x1_sq();
        let u = v(&[3.0, 4.0]);
        assert_eq!(p.check_variational_inequality(&u, &v(&[0.0, 4.0]), 100, 7).unwrap(), 0.0);
        // ⟨(3,4), (0,t)⟩ = 4t is positive for any sampled t > 0
        assert!(p.check_variational_inequality(&u, &v(&[0.0, 0.0]), 100, 7).unwrap() > 0.0);
        let s = half_norm_sq();
        assert_eq!(s.check_variational_inequality(&u, &v(&[0.0, 0.0]), 10, 1).unwrap(), 0.0);
        let r = Problem::rastrigin(2).unwrap();
        assert!(r.check_variational_inequality(&u, &u, 10, 1).is_err());
    }

    #[test]
    fn partial_gradient_sums_to_full() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.3, 3.0]);
        let ls = Problem::least_squares(a.clone(), v(&[1.0, 0.0, -2.0])).unwrap();
        let lg = Problem::logistic(a, v(&[1.0, -1.0, 1.0])).unwrap();
        let x = v(&[0.2, -0.7]);
        for p in [ls, lg] {
            let full = p.gradient(&x).unwrap();
            let parts = p.partial_gradient(&x, &[0, 1, 2]).unwrap();
            assert!((full - parts).norm() < 1e-12);
        }
        assert!(half_x1_sq().partial_gradient(&x, &[0]).is_err());
    }

    fn sample_problems() -> Vec<Problem> {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5]);
        vec![
            Problem::quadratic(
                Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
                v(&[1.0, -1.0, 2.0]),
            )
            .unwrap(),
            Problem::least_squares(a.clone(), v(&[1.0, 2.0, 3.0])).unwrap(),
            Problem::logistic(a, v(&[1.0, -1.0, 1.0])).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(xs in prop::collection::vec(-10.0f64..10.0, 3)) {
            for p in sample_problems().into_iter()
                .chain([Problem::rastrigin(3).unwrap(), Problem::rosenbrock(3).unwrap()])
            {
                let x = Vector::from_iterator(p.dim(), xs.iter().copied().take(p.dim()));
                let g = p.gradient(&x).unwrap();
                let fd = fd_gradient(&p, &x);
                let rel = (&g - &fd).norm() / g.norm().max(1.0);
                prop_assert!(rel < 1e-5, "{} rel err {rel:e}", p.id());
            }
        }

        #[test]
        fn convex_families_satisfy_smoothness_inequalities(
            xs in prop::collection::vec(-10.0f64..10.0, 3),
            ys in prop::collection::vec(-10.0f64..10.0, 3),
        ) {
            for p in sample_problems() {
                let x = Vector::from_iterator(p.dim(), xs.iter().copied().take(p.dim()));
                let y = Vector::from_iterator(p.dim(), ys.iter().copied().take(p.dim()));
                let l = p.lipschitz_constant();
                let (gx, gy) = (p.gradient(&x).unwrap(), p.gradient(&y).unwrap());
                let dg = &gx - &gy;
                let dx = &x - &y;
                prop_assert!(dg.norm() <= l * dx.norm() * (1.0 + 1e-9) + 1e-12);
                let inner = dg.dot(&dx);
                prop_assert!(inner >= -1e-9 * (dg.norm() * dx.norm()).max(1e-12));
                prop_assert!(inner >= dg.norm_squared() / l - 1e-9 * inner.abs().max(1e-12));
                if let Some(fs) = p.f_star() {
                    let gap = p.value(&x).unwrap() - fs;
                    prop_assert!(gx.norm_squared() / (2.0 * l) <= gap * (1.0 + 1e-9) + 1e-12);
                }
                if let Ok(px) = p.project(&x) {
                    let lhs = gx.dot(&(&x - &px));
                    prop_assert!(lhs >= gx.norm_squared() / l - 1e-9 * lhs.abs().max(1e-12));
                }
            }
        }

        #[test]
        fn projection_is_idempotent(us in prop::collection::vec(-50.0f64..50.0, 3)) {
            for p in sample_problems().into_iter().filter(|p| p.project(&Vector::zeros(p.dim())).is_ok()) {
                let u = Vector::from_iterator(p.dim(), us.iter().copied().take(p.dim()));
                let once = p.project(&u).unwrap();
                let twice = p.project(&once).unwrap();
                prop_assert!((&once - &twice).norm() <= 1e-12 * (1.0 + once.norm()));
                // points of S are critical
                prop_assert!(p.gradient(&once).unwrap().norm() <= 1e-9 * (1.0 + u.norm()));
            }
        }
    }
}
