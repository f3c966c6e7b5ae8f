//! Target potentials `U(θ) = -log P(x, θ)` (up to an additive constant).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{MfviError, Result};

/// Step for central-difference gradients of black-box potentials.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Step for finite-difference Hessians used in convexity probing.
pub const FD_HESS_STEP: f64 = 1e-4;
/// Number of quasi-random points used to probe black-box convexity.
pub const HESSIAN_PROBES: usize = 64;

/// `U(θ) = ½ θᵀAθ + bᵀθ + offset`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticModel {
    dim: usize,
    /// Row-major `dim × dim`.
    a: Vec<f64>,
    b: Vec<f64>,
    offset: f64,
}

impl QuadraticModel {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(MfviError::InvalidArgument("empty model".into()));
        }
        if a.len() != dim || a.iter().any(|row| row.len() != dim) {
            return Err(MfviError::DimensionMismatch {
                expected: dim,
                got: a.len(),
            });
        }
        let flat: Vec<f64> = a.into_iter().flatten().collect();
        if flat.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(MfviError::NonFinite("model coefficients".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (flat[i * dim + j] - flat[j * dim + i]).abs() > 1e-12 {
                    return Err(MfviError::InvalidArgument("A not symmetric".into()));
                }
            }
        }
        Ok(Self {
            dim,
            a: flat,
            b,
            offset: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    pub fn b(&self, i: usize) -> f64 {
        self.b[i]
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn b_vec(&self) -> &[f64] {
        &self.b
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let d = self.dim;
        let mut quad = 0.0;
        for i in 0..d {
            let row = &self.a[i * d..(i + 1) * d];
            let ai: f64 = row.iter().zip(theta).map(|(a, t)| a * t).sum();
            quad += theta[i] * ai;
        }
        0.5 * quad + self.b.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>() + self.offset
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                self.a[i * d..(i + 1) * d]
                    .iter()
                    .zip(theta)
                    .map(|(a, t)| a * t)
                    .sum::<f64>()
                    + self.b[i]
            })
            .collect()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.a)
    }

    /// Smallest eigenvalue of `A`.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A potential known only through evaluators.
#[derive(Clone)]
pub struct BlackBoxModel {
    name: String,
    dim: usize,
    value: Arc<ScalarFn>,
    gradient: Option<Arc<VectorFn>>,
    offset: f64,
}

impl fmt::Debug for BlackBoxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("offset", &self.offset)
            .finish()
    }
}

impl BlackBoxModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            gradient: None,
            offset: 0.0,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    fn raw_value(&self, theta: &[f64]) -> f64 {
        (self.value)(theta) + self.offset
    }

    fn raw_gradient(&self, theta: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(theta),
            None => central_difference(|t| (self.value)(t), theta, FD_GRAD_STEP),
        }
    }
}

fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + step;
            let up = f(&x);
            x[i] = theta[i] - step;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// A target potential.
#[derive(Debug, Clone)]
pub enum Model {
    Quadratic(QuadraticModel),
    BlackBox(BlackBoxModel),
}

/// Result of a γ-convexity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    /// Exact for quadratic models; a sampled estimate otherwise.
    pub exact: bool,
}

impl GammaEstimate {
    pub fn is_positive(&self) -> bool {
        self.gamma > 0.0
    }
}

impl From<QuadraticModel> for Model {
    fn from(m: QuadraticModel) -> Self {
        Model::Quadratic(m)
    }
}

impl From<BlackBoxModel> for Model {
    fn from(m: BlackBoxModel) -> Self {
        Model::BlackBox(m)
    }
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic(q) => q.dim(),
            Model::BlackBox(b) => b.dim(),
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticModel> {
        match self {
            Model::Quadratic(q) => Some(q),
            Model::BlackBox(_) => None,
        }
    }

    /// The same potential shifted by an additive constant.
    pub fn with_offset(&self, c: f64) -> Self {
        match self {
            Model::Quadratic(q) => Model::Quadratic(QuadraticModel {
                offset: q.offset + c,
                ..q.clone()
            }),
            Model::BlackBox(b) => Model::BlackBox(BlackBoxModel {
                offset: b.offset + c,
                ..b.clone()
            }),
        }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(MfviError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// `U(θ)`.
    pub fn neg_log_p(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta)?;
        let v = match self {
            Model::Quadratic(q) => q.value(theta),
            Model::BlackBox(b) => b.raw_value(theta),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MfviError::NonFinite(format!("U({theta:?}) = {v}")))
        }
    }

    /// `∇U(θ)`; central differences for black-box models without a gradient.
    pub fn grad_neg_log_p(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let g = match self {
            Model::Quadratic(q) => q.gradient(theta),
            Model::BlackBox(b) => b.raw_gradient(theta),
        };
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(MfviError::NonFinite(format!("∇U({theta:?})")))
        }
    }

    /// Convexity modulus: the smallest eigenvalue of `A` for quadratic
    /// models, otherwise the smallest finite-difference Hessian eigenvalue
    /// over quasi-random probes inside `domain` (one interval per coordinate).
    pub fn gamma_estimate(&self, domain: &[(f64, f64)]) -> Result<GammaEstimate> {
        let est = match self {
            Model::Quadratic(q) => GammaEstimate {
                gamma: q.min_eigenvalue(),
                exact: true,
            },
            Model::BlackBox(_) => {
                let d = self.dim();
                if domain.len() != d {
                    return Err(MfviError::DimensionMismatch {
                        expected: d,
                        got: domain.len(),
                    });
                }
                let mut gamma = f64::INFINITY;
                for p in 0..HESSIAN_PROBES {
                    let theta: Vec<f64> = domain
                        .iter()
                        .enumerate()
                        .map(|(i, &(lo, hi))| lo + (hi - lo) * halton(p + 1, PRIMES[i % PRIMES.len()]))
                        .collect();
                    let h = self.fd_hessian(&theta)?;
                    let lam = SymmetricEigen::new(h)
                        .eigenvalues
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min);
                    gamma = gamma.min(lam);
                }
                GammaEstimate {
                    gamma,
                    exact: false,
                }
            }
        };
        if !est.is_positive() {
            log::warn!(
                "target is not positive definite (gamma estimate {}); uniqueness guarantees do not apply",
                est.gamma
            );
        }
        Ok(est)
    }

    fn fd_hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let d = theta.len();
        let mut h = DMatrix::zeros(d, d);
        let mut x = theta.to_vec();
        for j in 0..d {
            x[j] = theta[j] + FD_HESS_STEP;
            let up = self.grad_neg_log_p(&x)?;
            x[j] = theta[j] - FD_HESS_STEP;
            let down = self.grad_neg_log_p(&x)?;
            x[j] = theta[j];
            for i in 0..d {
                h[(i, j)] = (up[i] - down[i]) / (2.0 * FD_HESS_STEP);
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
fn halton(mut index: usize, base: u32) -> f64 {
    let b = base as usize;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

/// Built-in black-box potentials, addressed by name.
pub mod catalog {
    use super::{BlackBoxModel, Model};
    use crate::error::{MfviError, Result};

    pub const NAMES: &[&str] = &["double_well"];

    /// Looks up a catalog potential; `coupling` is its cross-coordinate weight.
    pub fn build(name: &str, dim: usize, coupling: f64) -> Result<Model> {
        if dim == 0 {
            return Err(MfviError::InvalidArgument("catalog model needs dim >= 1".into()));
        }
        match name {
            "double_well" => Ok(double_well(dim, coupling).into()),
            other => Err(MfviError::InvalidArgument(format!(
                "unknown catalog model '{other}' (available: {})",
                NAMES.join(", ")
            ))),
        }
    }

    /// `U(θ) = Σ (θ_i² − 1)²/4 + coupling · Σ θ_i θ_{i+1}`: bimodal per
    /// coordinate, non-convex near the origin.
    pub fn double_well(dim: usize, coupling: f64) -> BlackBoxModel {
        BlackBoxModel::new("double_well", dim, move |t: &[f64]| {
            let wells: f64 = t.iter().map(|x| (x * x - 1.0).powi(2) / 4.0).sum();
            let chain: f64 = t.windows(2).map(|w| w[0] * w[1]).sum();
            wells + coupling * chain
        })
        .with_gradient(move |t: &[f64]| {
            let d = t.len();
            (0..d)
                .map(|i| {
                    let mut g = t[i] * (t[i] * t[i] - 1.0);
                    if i > 0 {
                        g += coupling * t[i - 1];
                    }
                    if i + 1 < d {
                        g += coupling * t[i + 1];
                    }
                    g
                })
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn q(a: Vec<Vec<f64>>, b: Vec<f64>) -> Model {
        QuadraticModel::new(a, b).unwrap().into()
    }

    fn coupled() -> Model {
        q(vec![vec![1.0, 0.5], vec![0.5, 1.0]], vec![0.0, 0.0])
    }

    #[test]
    fn neg_log_p_examples() {
        let id = q(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        assert_eq!(id.neg_log_p(&[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(id.neg_log_p(&[1.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(coupled().neg_log_p(&[1.0, 1.0]).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let id = q(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        assert_eq!(id.grad_neg_log_p(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        let diag = q(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![-2.0, 4.0]);
        assert_eq!(diag.grad_neg_log_p(&[1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(coupled().grad_neg_log_p(&[1.0, 0.0]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn gamma_examples() {
        let dom = [(-3.0, 3.0); 2];
        let id = q(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
        assert_abs_diff_eq!(id.gamma_estimate(&dom).unwrap().gamma, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coupled().gamma_estimate(&dom).unwrap().gamma, 0.5, epsilon = 1e-12);
        let diag = q(vec![vec![2.0, 0.0], vec![0.0, 4.0]], vec![0.0, 0.0]);
        let g = diag.gamma_estimate(&dom).unwrap();
        assert_abs_diff_eq!(g.gamma, 2.0, epsilon = 1e-12);
        assert!(g.exact);
    }

    #[test]
    fn black_box_gamma_on_double_well_is_negative() {
        let m: Model = catalog::double_well(2, 0.3).into();
        let g = m.gamma_estimate(&[(-2.0, 2.0); 2]).unwrap();
        assert!(!g.exact);
        assert!(g.gamma < 0.0);
    }

    #[test]
    fn black_box_gamma_matches_quadratic() {
        let bb: Model = BlackBoxModel::new("quad", 2, |t: &[f64]| {
            0.5 * (t[0] * t[0] + t[0] * t[1] + t[1] * t[1])
        })
        .into();
        let g = bb.gamma_estimate(&[(-3.0, 3.0); 2]).unwrap();
        assert_abs_diff_eq!(g.gamma, 0.5, epsilon = 1e-4);
    }

    #[test]
    fn rejects_asymmetric_and_misshapen() {
        let err = QuadraticModel::new(vec![vec![1.0, 0.2], vec![0.3, 1.0]], vec![0.0, 0.0]);
        assert_eq!(err, Err(MfviError::InvalidArgument("A not symmetric".into())));
        assert!(QuadraticModel::new(vec![vec![1.0]], vec![0.0, 0.0]).is_err());
        assert!(coupled().neg_log_p(&[1.0]).is_err());
    }

    #[test]
    fn non_finite_black_box_is_reported() {
        let bb: Model = BlackBoxModel::new("bad", 1, |t: &[f64]| t[0].ln()).into();
        assert!(matches!(bb.neg_log_p(&[-1.0]), Err(MfviError::NonFinite(_))));
    }

    #[test]
    fn offset_shifts_value_only() {
        let m = coupled().with_offset(2.5);
        assert_abs_diff_eq!(m.neg_log_p(&[1.0, 1.0]).unwrap(), 4.0, epsilon = 1e-15);
        assert_eq!(m.grad_neg_log_p(&[1.0, 0.0]).unwrap(), vec![1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn quadratic_gradient_matches_fd(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let m = q(
                vec![vec![2.0, 0.3, -0.1], vec![0.3, 1.5, 0.4], vec![-0.1, 0.4, 1.0]],
                vec![0.5, -1.0, 0.25],
            );
            let t = [x, y, z];
            let g = m.grad_neg_log_p(&t).unwrap();
            let fd = central_difference(|p| m.neg_log_p(p).unwrap(), &t, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn black_box_fd_gradient_matches_analytic(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let analytic: Model = catalog::double_well(2, 0.4).into();
            let dw = catalog::double_well(2, 0.4);
            let fd_only: Model = BlackBoxModel::new("dw", 2, move |t: &[f64]| (dw.value)(t)).into();
            let a = analytic.grad_neg_log_p(&[x, y]).unwrap();
            let b = fd_only.grad_neg_log_p(&[x, y]).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-4 * u.abs().max(1.0));
            }
        }

        // γ-convexity along segments, with γ the smallest eigenvalue
        #[test]
        fn gamma_convexity_inequality(
            x1 in -3.0f64..3.0, y1 in -3.0f64..3.0,
            x2 in -3.0f64..3.0, y2 in -3.0f64..3.0,
            t in 0.0f64..1.0,
        ) {
            let m = coupled();
            let gamma = m.gamma_estimate(&[(-3.0, 3.0); 2]).unwrap().gamma;
            let p = [x1, y1];
            let r = [x2, y2];
            let mid = [(1.0 - t) * x1 + t * x2, (1.0 - t) * y1 + t * y2];
            let dist2 = (x1 - x2).powi(2) + (y1 - y2).powi(2);
            let lhs = m.neg_log_p(&mid).unwrap();
            let rhs = (1.0 - t) * m.neg_log_p(&p).unwrap() + t * m.neg_log_p(&r).unwrap()
                - 0.5 * gamma * t * (1.0 - t) * dist2;
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }
}
