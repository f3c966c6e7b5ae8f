//! The coupled Fokker–Planck system
//!
//! ```text
//! ∂_t ρ_i = ∂_x( ρ_i ∂_xΨ_i(·; ρ_{−i}) + ∂_x ρ_i ),   no flux at the walls,
//! ```
//!
//! discretized by finite volumes with exponentially fitted (Scharfetter–Gummel,
//! equivalently Chang–Cooper) face fluxes
//!
//! ```text
//! F_{j+½} = [B(w_j) ρ_j − B(−w_j) ρ_{j+1}] / Δx,   w_j = Ψ(x_{j+1}) − Ψ(x_j),   B(w) = w / (eʷ − 1).
//! ```
//!
//! The flux vanishes exactly on `ρ ∝ exp(−Ψ)` sampled at the cell centers, so
//! the discrete Gibbs measure of a profile is stationary to round-off. The
//! coordinates are coupled Jacobi-style: every coordinate sees the others at
//! the start of the step, with profiles refreshed every `refresh_every` steps.

use serde::{Deserialize, Serialize};

use crate::error::{MfviError, Result};
use crate::functionals::{objective_j, psi_profile, PsiOptions, PsiProfile};
use crate::linalg::solve_tridiagonal;
use crate::measure::{GridMeasure1D, ProductMeasure};
use crate::model::Model;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FpScheme {
    /// Backward Euler with frozen coefficients; unconditionally positive.
    #[default]
    Implicit,
    /// Forward Euler; rejected when the step breaks positivity.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpConfig {
    pub dt: f64,
    pub scheme: FpScheme,
    /// Recompute the `Ψ_i` every this many steps.
    pub refresh_every: usize,
    /// Keep a snapshot every this many steps (`0`: first and last only).
    pub output_every: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: FpScheme::Implicit,
            refresh_every: 1,
            output_every: 0,
        }
    }
}

impl FpConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(MfviError::InvalidArgument("FpConfig.dt must be positive".into()));
        }
        if self.refresh_every == 0 {
            return Err(MfviError::InvalidArgument(
                "FpConfig.refresh_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `B(w) = w / (eʷ − 1)`, continuous at zero.
fn bernoulli(w: f64) -> f64 {
    if w.abs() < 1e-8 {
        1.0 - 0.5 * w
    } else {
        w / w.exp_m1()
    }
}

/// Face weights for one coordinate: `F_{j+½} = (a_j ρ_j − c_j ρ_{j+1}) / Δx`.
#[derive(Debug, Clone)]
struct FaceWeights {
    a: Vec<f64>,
    c: Vec<f64>,
}

impl FaceWeights {
    fn from_profile(psi: &PsiProfile) -> Result<Self> {
        let (a, c): (Vec<f64>, Vec<f64>) = psi
            .values
            .windows(2)
            .map(|w| {
                let dw = w[1] - w[0];
                (bernoulli(dw), bernoulli(-dw))
            })
            .unzip();
        if a.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(MfviError::NonFinite(format!(
                "drift weights of coordinate {}",
                psi.coordinate
            )));
        }
        Ok(Self { a, c })
    }

    /// Face fluxes times `Δx`, walls excluded.
    fn scaled_fluxes(&self, rho: &[f64]) -> Vec<f64> {
        (0..self.a.len())
            .map(|j| self.a[j] * rho[j] - self.c[j] * rho[j + 1])
            .collect()
    }

    /// Largest explicit step that keeps every diagonal entry nonnegative.
    fn explicit_limit(&self, dx: f64) -> f64 {
        let n = self.a.len() + 1;
        let worst = (0..n)
            .map(|j| {
                let out_right = if j + 1 < n { self.a[j] } else { 0.0 };
                let out_left = if j > 0 { self.c[j - 1] } else { 0.0 };
                out_right + out_left
            })
            .fold(0.0, f64::max);
        dx * dx / worst.max(2.0)
    }

    fn step(&self, rho: &[f64], dt: f64, dx: f64, scheme: FpScheme) -> Result<Vec<f64>> {
        let n = rho.len();
        let r = dt / (dx * dx);
        match scheme {
            FpScheme::Explicit => {
                let f = self.scaled_fluxes(rho);
                Ok((0..n)
                    .map(|j| {
                        let right = if j + 1 < n { f[j] } else { 0.0 };
                        let left = if j > 0 { f[j - 1] } else { 0.0 };
                        rho[j] - r * (right - left)
                    })
                    .collect())
            }
            FpScheme::Implicit => {
                let mut diag = vec![1.0; n];
                for j in 0..n - 1 {
                    diag[j] += r * self.a[j];
                    diag[j + 1] += r * self.c[j];
                }
                let upper: Vec<f64> = self.c.iter().map(|c| -r * c).collect();
                let lower: Vec<f64> = self.a.iter().map(|a| -r * a).collect();
                let mut x = rho.to_vec();
                solve_tridiagonal(&lower, &diag, &upper, &mut x)?;
                Ok(x)
            }
        }
    }
}

/// The evolving product density at a given step.
#[derive(Debug, Clone)]
pub struct FpState {
    pub step: usize,
    pub t: f64,
    pub measure: ProductMeasure,
}

impl FpState {
    pub fn new(measure: ProductMeasure) -> Self {
        Self {
            step: 0,
            t: 0.0,
            measure,
        }
    }
}

fn weights_for(model: &Model, nu: &ProductMeasure, opts: &PsiOptions) -> Result<Vec<FaceWeights>> {
    par::map_range_min(nu.dim(), 4, |i| {
        FaceWeights::from_profile(&psi_profile(model, i, nu, opts)?)
    })
    .into_iter()
    .collect()
}

fn advance(
    state: &FpState,
    weights: &[FaceWeights],
    cfg: &FpConfig,
) -> Result<FpState> {
    let nu = &state.measure;
    if cfg.scheme == FpScheme::Explicit {
        for (i, w) in weights.iter().enumerate() {
            let limit = w.explicit_limit(nu.marginal(i).grid().dx());
            if cfg.dt > limit {
                return Err(MfviError::CflViolation { dt: cfg.dt, limit });
            }
        }
    }
    let updated = par::map_range_min(nu.dim(), 4, |i| -> Result<GridMeasure1D> {
        let m = nu.marginal(i);
        let rho = weights[i].step(m.density(), cfg.dt, m.grid().dx(), cfg.scheme)?;
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(MfviError::NonFinite(format!("density of coordinate {i}")));
        }
        Ok(GridMeasure1D::from_unnormalized(rho, *m.grid()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(FpState {
        step: state.step + 1,
        t: state.t + cfg.dt,
        measure: ProductMeasure::new(updated)?,
    })
}

/// One time step with freshly computed profiles.
pub fn fp_step(model: &Model, state: &FpState, cfg: &FpConfig, opts: &PsiOptions) -> Result<FpState> {
    cfg.validate()?;
    let weights = weights_for(model, &state.measure, opts)?;
    advance(state, &weights, cfg)
}

/// `max_i Σ_j |F_{j+½} − F_{j−½}|`: the L1 norm of the discrete `∂_tρ_i`,
/// worst coordinate.
pub fn stationary_residual(model: &Model, nu: &ProductMeasure, opts: &PsiOptions) -> Result<f64> {
    let weights = weights_for(model, nu, opts)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let m = nu.marginal(i);
            let dx = m.grid().dx();
            let f = w.scaled_fluxes(m.density());
            let n = m.density().len();
            (0..n)
                .map(|j| {
                    let right = if j + 1 < n { f[j] } else { 0.0 };
                    let left = if j > 0 { f[j - 1] } else { 0.0 };
                    (right - left).abs() / dx
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct FpSnapshot {
    pub step: usize,
    pub t: f64,
    pub measure: ProductMeasure,
    pub objective: f64,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FpTrajectory {
    pub config: FpConfig,
    pub snapshots: Vec<FpSnapshot>,
    /// Largest `|mass_i(t) − mass_i(0)|` seen at any step.
    pub max_mass_drift: f64,
    /// Smallest density entry seen at any step.
    pub min_density: f64,
    /// [`stationary_residual`] of the final state.
    pub final_residual: f64,
}

impl FpTrajectory {
    pub fn last(&self) -> &FpSnapshot {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    /// The latest snapshot taken at or before `t`.
    pub fn at(&self, t: f64) -> &FpSnapshot {
        self.snapshots
            .iter()
            .take_while(|s| s.t <= t + 1e-9)
            .last()
            .unwrap_or(&self.snapshots[0])
    }

    pub fn positivity_preserved(&self) -> bool {
        self.min_density >= 0.0
    }
}

/// Integrates to `t_end` in `⌈t_end / dt⌉` steps.
pub fn fp_run(
    model: &Model,
    nu0: &ProductMeasure,
    cfg: &FpConfig,
    t_end: f64,
    opts: &PsiOptions,
) -> Result<FpTrajectory> {
    cfg.validate()?;
    if !(t_end >= 0.0) {
        return Err(MfviError::InvalidArgument("horizon must be nonnegative".into()));
    }
    let n_steps = (t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let masses0: Vec<f64> = nu0.marginals().iter().map(GridMeasure1D::mass).collect();
    let snapshot = |s: &FpState| -> Result<FpSnapshot> {
        Ok(FpSnapshot {
            step: s.step,
            t: s.t,
            objective: objective_j(model, &s.measure, opts)?,
            masses: s.measure.marginals().iter().map(GridMeasure1D::mass).collect(),
            measure: s.measure.clone(),
        })
    };
    let mut state = FpState::new(nu0.clone());
    let mut snapshots = vec![snapshot(&state)?];
    let mut max_mass_drift: f64 = 0.0;
    let mut min_density = nu0
        .marginals()
        .iter()
        .flat_map(|m| m.density().iter().copied())
        .fold(f64::INFINITY, f64::min);
    let mut weights = Vec::new();
    for k in 0..n_steps {
        if k % cfg.refresh_every == 0 {
            weights = weights_for(model, &state.measure, opts)?;
        }
        state = advance(&state, &weights, cfg)?;
        for (m, m0) in state.measure.marginals().iter().zip(&masses0) {
            max_mass_drift = max_mass_drift.max((m.mass() - m0).abs());
            min_density = m.density().iter().copied().fold(min_density, f64::min);
        }
        let last = k + 1 == n_steps;
        if last || (cfg.output_every > 0 && (k + 1) % cfg.output_every == 0) {
            snapshots.push(snapshot(&state)?);
        }
    }
    if min_density < 0.0 {
        log::warn!("Fokker–Planck density went negative (min {min_density:e})");
    }
    let final_residual = stationary_residual(model, &state.measure, opts)?;
    Ok(FpTrajectory {
        config: *cfg,
        snapshots,
        max_mass_drift,
        min_density,
        final_residual,
    })
}
