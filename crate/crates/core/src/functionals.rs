//! The mean-field objective `J(ν) = E_ν[U] − Σ_i H(ν_i)`, the conditional
//! potentials `Ψ_i(·; ν_{−i})` and the per-coordinate objectives `J_i`.
//!
//! All values carry the model's unknown additive constant; only differences
//! within one model are meaningful.

use rand::Rng;

use crate::error::{MfviError, Result};
use crate::measure::{Grid1D, GridMeasure1D, ProductMeasure};
use crate::model::Model;
use crate::par;
use crate::rng::CounterRng;

/// Largest dimension handled by tensor-product quadrature.
pub const MAX_TENSOR_DIM: usize = 3;
/// Default Monte Carlo sample count for `Ψ_i` when `d > 3`.
pub const DEFAULT_MC_DRAWS: usize = 100_000;
/// Cells whose probability mass falls below this are skipped in quadrature.
const QUADRATURE_MASS_CUTOFF: f64 = 1e-18;

/// How `Ψ_i` is integrated for black-box models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsiOptions {
    /// Monte Carlo settings; required when a black-box model has `d > 3`.
    pub monte_carlo: Option<MonteCarlo>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub draws: usize,
    pub seed: u64,
}

impl PsiOptions {
    pub fn with_monte_carlo(seed: u64) -> Self {
        Self {
            monte_carlo: Some(MonteCarlo {
                draws: DEFAULT_MC_DRAWS,
                seed,
            }),
        }
    }
}

/// `Ψ_i` and `∂_iΨ_i` sampled at the cell centers of coordinate `i`'s grid.
///
/// Off-grid evaluation uses cubic Hermite interpolation of the samples, which
/// is exact for the parabolic profiles of quadratic models; beyond the outer
/// centers the end cell's quadratic Taylor expansion is used.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiProfile {
    pub coordinate: usize,
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PsiProfile {
    /// `Δx Σ_j Ψ(x_j) ρ(x_j)`.
    pub fn expectation(&self, m: &GridMeasure1D) -> f64 {
        let dx = m.grid().dx();
        if *m.grid() == self.grid {
            dx * self
                .values
                .iter()
                .zip(m.density())
                .map(|(v, r)| v * r)
                .sum::<f64>()
        } else {
            dx * m
                .density()
                .iter()
                .enumerate()
                .map(|(j, r)| self.value_at(m.grid().center(j)) * r)
                .sum::<f64>()
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        self.eval(x).2
    }

    /// Value, first and second derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.values.len();
        let h = self.grid.dx();
        let first = self.grid.center(0);
        let last = self.grid.center(n - 1);
        if x < first || x > last {
            let (j, t) = if x < first { (0, 0.0) } else { (n - 2, 1.0) };
            let (v, s, c) = self.hermite(j, t, h);
            let dx = x - if x < first { first } else { last };
            return (v + s * dx + 0.5 * c * dx * dx, s + c * dx, c);
        }
        let s = (x - first) / h;
        let j = (s.floor() as usize).min(n - 2);
        self.hermite(j, s - j as f64, h)
    }

    fn hermite(&self, j: usize, t: f64, h: f64) -> (f64, f64, f64) {
        let (v0, v1) = (self.values[j], self.values[j + 1]);
        let (s0, s1) = (self.slopes[j] * h, self.slopes[j + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * v0
            + (t3 - 2.0 * t2 + t) * s0
            + (-2.0 * t3 + 3.0 * t2) * v1
            + (t3 - t2) * s1;
        let d1 = (6.0 * t2 - 6.0 * t) * v0
            + (3.0 * t2 - 4.0 * t + 1.0) * s0
            + (-6.0 * t2 + 6.0 * t) * v1
            + (3.0 * t2 - 2.0 * t) * s1;
        let d2 = (12.0 * t - 6.0) * v0
            + (6.0 * t - 4.0) * s0
            + (-12.0 * t + 6.0) * v1
            + (6.0 * t - 2.0) * s1;
        (value, d1 / h, d2 / (h * h))
    }
}

fn check_dims(model: &Model, nu: &ProductMeasure) -> Result<()> {
    if model.dim() != nu.dim() {
        return Err(MfviError::DimensionMismatch {
            expected: model.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// `Ψ_i(x; ν_{−i}) = E_{−i}[U]` and its slope on coordinate `i`'s grid.
pub fn psi_profile(
    model: &Model,
    i: usize,
    nu: &ProductMeasure,
    opts: &PsiOptions,
) -> Result<PsiProfile> {
    check_dims(model, nu)?;
    if i >= nu.dim() {
        return Err(MfviError::InvalidArgument(format!(
            "coordinate {i} out of range for d = {}",
            nu.dim()
        )));
    }
    let grid = *nu.marginal(i).grid();
    match model {
        Model::Quadratic(q) => {
            let (a2, a1, a0) = quadratic_psi_coefficients(q, i, &nu.means(), &nu.second_moments());
            let xs = grid.centers();
            Ok(PsiProfile {
                coordinate: i,
                grid,
                values: xs.iter().map(|x| 0.5 * a2 * x * x + a1 * x + a0).collect(),
                slopes: xs.iter().map(|x| a2 * x + a1).collect(),
            })
        }
        Model::BlackBox(_) => {
            let d = nu.dim();
            if d > MAX_TENSOR_DIM {
                match opts.monte_carlo {
                    Some(mc) => monte_carlo_profile(model, i, nu, grid, mc),
                    None => Err(MfviError::QuadratureOverflow { dim: d }),
                }
            } else {
                tensor_profile(model, i, nu, grid)
            }
        }
    }
}

/// Coefficients `(a2, a1, a0)` with `Ψ_i(x) = ½a2 x² + a1 x + a0`.
fn quadratic_psi_coefficients(
    q: &crate::model::QuadraticModel,
    i: usize,
    means: &[f64],
    second: &[f64],
) -> (f64, f64, f64) {
    let d = q.dim();
    let mut lin = q.b(i);
    let mut c = q.offset();
    for j in (0..d).filter(|&j| j != i) {
        lin += q.a(i, j) * means[j];
        c += 0.5 * q.a(j, j) * second[j] + q.b(j) * means[j];
        for k in (0..d).filter(|&k| k != i && k != j) {
            c += 0.5 * q.a(j, k) * means[j] * means[k];
        }
    }
    (q.a(i, i), lin, c)
}

/// `(position, mass)` pairs carrying non-negligible probability.
fn support(m: &GridMeasure1D) -> Vec<(f64, f64)> {
    let dx = m.grid().dx();
    m.density()
        .iter()
        .enumerate()
        .map(|(j, r)| (m.grid().center(j), dx * r))
        .filter(|&(_, w)| w > QUADRATURE_MASS_CUTOFF)
        .collect()
}

fn tensor_profile(model: &Model, i: usize, nu: &ProductMeasure, grid: Grid1D) -> Result<PsiProfile> {
    let d = nu.dim();
    let others: Vec<usize> = (0..d).filter(|&j| j != i).collect();
    let supports: Vec<Vec<(f64, f64)>> = others.iter().map(|&j| support(nu.marginal(j))).collect();
    // enumerate the tensor nodes once
    let mut nodes: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for s in &supports {
        nodes = nodes
            .into_iter()
            .flat_map(|(pt, w)| {
                s.iter().map(move |&(x, wx)| {
                    let mut p = pt.clone();
                    p.push(x);
                    (p, w * wx)
                })
            })
            .collect();
    }
    let total: f64 = nodes.iter().map(|(_, w)| w).sum();
    let xs = grid.centers();
    let rows = par::map_range_min(xs.len(), 2, |j| -> Result<(f64, f64)> {
        let mut theta = vec![0.0; d];
        theta[i] = xs[j];
        let (mut v, mut s) = (0.0, 0.0);
        for (pt, w) in &nodes {
            for (slot, &k) in others.iter().enumerate() {
                theta[k] = pt[slot];
            }
            v += w * model.neg_log_p(&theta)?;
            s += w * model.grad_neg_log_p(&theta)?[i];
        }
        Ok((v / total, s / total))
    });
    let (values, slopes) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(PsiProfile {
        coordinate: i,
        grid,
        values,
        slopes,
    })
}

fn monte_carlo_profile(
    model: &Model,
    i: usize,
    nu: &ProductMeasure,
    grid: Grid1D,
    mc: MonteCarlo,
) -> Result<PsiProfile> {
    let d = nu.dim();
    let qfs: Vec<_> = nu.marginals().iter().map(GridMeasure1D::quantile_fn).collect();
    let draws: Vec<Vec<f64>> = (0..mc.draws)
        .map(|s| {
            let mut rng = CounterRng::new(mc.seed, &[i as u64, s as u64]);
            (0..d)
                .map(|j| if j == i { 0.0 } else { qfs[j].eval(rng.random::<f64>()) })
                .collect()
        })
        .collect();
    let xs = grid.centers();
    let rows = par::map_range_min(xs.len(), 2, |j| -> Result<(f64, f64)> {
        let (mut v, mut s) = (0.0, 0.0);
        let mut theta = vec![0.0; d];
        for draw in &draws {
            theta.copy_from_slice(draw);
            theta[i] = xs[j];
            v += model.neg_log_p(&theta)?;
            s += model.grad_neg_log_p(&theta)?[i];
        }
        let n = draws.len() as f64;
        Ok((v / n, s / n))
    });
    let (values, slopes) = rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(PsiProfile {
        coordinate: i,
        grid,
        values,
        slopes,
    })
}

/// `E_ν[U]`.
pub fn expected_potential(model: &Model, nu: &ProductMeasure, opts: &PsiOptions) -> Result<f64> {
    check_dims(model, nu)?;
    match model {
        Model::Quadratic(q) => {
            let m = nu.means();
            let s = nu.second_moments();
            let d = q.dim();
            let mut e = q.offset();
            for j in 0..d {
                e += 0.5 * q.a(j, j) * s[j] + q.b(j) * m[j];
                for k in (0..d).filter(|&k| k != j) {
                    e += 0.5 * q.a(j, k) * m[j] * m[k];
                }
            }
            Ok(e)
        }
        Model::BlackBox(_) => Ok(psi_profile(model, 0, nu, opts)?.expectation(nu.marginal(0))),
    }
}

/// `J(ν) = E_ν[U] − Σ_i H(ν_i)`.
pub fn objective_j(model: &Model, nu: &ProductMeasure, opts: &PsiOptions) -> Result<f64> {
    Ok(expected_potential(model, nu, opts)? - nu.entropy())
}

/// `J_i(ν_i; ν_{−i}) = ∫Ψ_i dν_i − H(ν_i)`, with `ν_{−i}` taken from `nu`.
pub fn objective_ji(
    model: &Model,
    i: usize,
    nu_i: &GridMeasure1D,
    nu: &ProductMeasure,
    opts: &PsiOptions,
) -> Result<f64> {
    let psi = psi_profile(model, i, nu, opts)?;
    Ok(objective_ji_with(&psi, nu_i))
}

/// `J_i` against a precomputed profile.
pub fn objective_ji_with(psi: &PsiProfile, nu_i: &GridMeasure1D) -> f64 {
    psi.expectation(nu_i) - nu_i.entropy()
}
