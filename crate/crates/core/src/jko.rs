//! Coordinate-wise Wasserstein minimizing movements.
//!
//! Each inner step minimizes `V_i(ν) = ½W2(ν_i^{k−1}, ν)² + h·J_i(ν; ν_{−i})`
//! over 1D measures. In quantile coordinates `Q` the transport term is an
//! explicit quadratic, and the problem becomes smooth and finite:
//!
//! ```text
//! V(Q) = (1/2K) Σ (Q_k − P_k)² + h [ (1/K) Σ Ψ_i(Q_k) − (1/K) Σ log(K (Q_{k+1} − Q_k)) ]
//! ```
//!
//! where the entropy is that of the measure spreading mass `1/K` uniformly
//! between consecutive quantiles. The minimizer is found by descent
//! along the gradient preconditioned with the banded Hessian, with Armijo
//! backtracking and a pool-adjacent-violators projection after every trial
//! step.

use serde::{Deserialize, Serialize};

use crate::error::{MfviError, Result};
use crate::functionals::{objective_j, objective_ji_with, psi_profile, PsiOptions, PsiProfile};
use crate::linalg::SymPentadiagonal;
use crate::measure::{default_quantile_count, w2, GridMeasure1D, ProductMeasure, QuantileMeasure1D};
use crate::model::Model;
use crate::monotone::pav_in_place;

/// A sweep counts as stationary when every coordinate moves less than this.
pub const STATIONARY_MOVE: f64 = 1e-6;
/// Consecutive stationary sweeps that end a run early.
pub const STATIONARY_SWEEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JkoConfig {
    /// Time step `h`.
    pub h: f64,
    /// Quantile resolution; `None` means four levels per grid cell.
    pub quantile_count: Option<usize>,
    /// Stop when the relative decrease of `V` falls below this.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    /// First trial step length of the line search.
    pub initial_rate: f64,
    pub shrink: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Optional hard cap on the number of sweeps in [`jko_run`].
    pub max_sweeps: Option<usize>,
    /// Largest overshoot of the grid read-out, relative to `h·max(|J_i|, 1)`,
    /// accepted from an inner step. Reading quantiles out onto the grid
    /// perturbs the entropy by up to about `Δx²/24` depending on the sub-cell
    /// offset, so near rest an exact quantile step can raise the grid `J_i`
    /// slightly. Accepted overshoots are reported as ledger slack; `0` rejects
    /// them all.
    pub energy_tol: f64,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            quantile_count: None,
            inner_tol: 1e-10,
            inner_max_iters: 100,
            initial_rate: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_sweeps: None,
            energy_tol: 1e-3,
        }
    }
}

impl JkoConfig {
    pub fn with_h(h: f64) -> Self {
        Self {
            h,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MfviError::InvalidArgument(format!("JkoConfig.{msg}")));
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad("h must be positive");
        }
        if !(self.inner_tol > 0.0) {
            return bad("inner_tol must be positive");
        }
        if let Some(k) = self.quantile_count {
            if k < 64 {
                return bad("quantile_count must be at least 64");
            }
        }
        if self.inner_max_iters == 0 {
            return bad("inner_max_iters must be at least 1");
        }
        if !(self.initial_rate > 0.0) {
            return bad("initial_rate must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        if !(self.energy_tol >= 0.0) {
            return bad("energy_tol must be nonnegative");
        }
        if self.max_sweeps == Some(0) {
            return bad("max_sweeps must be at least 1");
        }
        Ok(())
    }

    fn quantiles_for(&self, m: &GridMeasure1D) -> usize {
        self.quantile_count
            .unwrap_or_else(|| default_quantile_count(m.grid()))
    }
}

/// The discretized movement functional for one coordinate.
struct QuantileObjective<'a> {
    prev: &'a [f64],
    psi: &'a PsiProfile,
    h: f64,
}

impl QuantileObjective<'_> {
    fn k(&self) -> usize {
        self.prev.len()
    }

    /// Quantile-discretized `J_i`; infinite when `Q` is not strictly spread.
    fn free_energy(&self, q: &[f64]) -> f64 {
        let kf = self.k() as f64;
        let potential: f64 = q.iter().map(|&x| self.psi.value_at(x)).sum();
        let mut entropy = 0.0;
        for pair in q.windows(2) {
            let gap = pair[1] - pair[0];
            if !(gap > 0.0) {
                return f64::INFINITY;
            }
            entropy += (kf * gap).ln();
        }
        (potential - entropy) / kf
    }

    fn value(&self, q: &[f64]) -> f64 {
        let k = self.k() as f64;
        let transport: f64 = q
            .iter()
            .zip(self.prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (2.0 * k);
        let fe = self.free_energy(q);
        if fe.is_finite() {
            transport + self.h * fe
        } else {
            f64::INFINITY
        }
    }

    /// Gradient and the positive-definite banded curvature model.
    fn gradient_and_curvature(&self, q: &[f64]) -> (Vec<f64>, SymPentadiagonal) {
        let k = self.k();
        let kf = k as f64;
        let hk = self.h / kf;
        let mut g = vec![0.0; k];
        let mut hess = SymPentadiagonal::zeros(k);
        for l in 0..k {
            let (_, slope, curv) = self.psi.eval(q[l]);
            g[l] += (q[l] - self.prev[l]) / kf + hk * slope;
            hess.diag[l] += 1.0 / kf + hk * curv.max(0.0);
        }
        for lo in 0..k - 1 {
            let d = q[lo + 1] - q[lo];
            g[lo + 1] -= hk / d;
            g[lo] += hk / d;
            let w = hk / (d * d);
            hess.diag[lo] += w;
            hess.diag[lo + 1] += w;
            hess.off1[lo] -= w;
        }
        (g, hess)
    }
}

/// Diagnostics of one inner minimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerStepReport {
    pub coordinate: usize,
    pub iterations: usize,
    /// `V` at the starting point (not moving).
    pub v_start: f64,
    /// `V` at the returned point.
    pub v_end: f64,
    /// W2 between the input and output grid marginals.
    pub moved: f64,
    /// How far the grid read-out overshoots `½W2² + h·J_i ≤ h·J_i(input)`;
    /// zero for steps that satisfy it outright.
    pub excess: f64,
    /// True when no decrease was found and the input was returned unchanged.
    pub fell_back: bool,
}

/// Result of one inner step: the new marginal and solver diagnostics.
#[derive(Debug, Clone)]
pub struct InnerStep {
    pub measure: GridMeasure1D,
    pub report: InnerStepReport,
}

/// Minimizes `V_i` for coordinate `i`, holding the other marginals of `prev`.
pub fn jko_inner_step(
    model: &Model,
    i: usize,
    prev: &ProductMeasure,
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<GridMeasure1D> {
    Ok(jko_inner_step_detailed(model, i, prev, cfg, opts)?.measure)
}

pub fn jko_inner_step_detailed(
    model: &Model,
    i: usize,
    prev: &ProductMeasure,
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<InnerStep> {
    let current = prev.marginal(i);
    if cfg.h == 0.0 {
        return Ok(InnerStep {
            measure: current.clone(),
            report: InnerStepReport {
                coordinate: i,
                iterations: 0,
                v_start: 0.0,
                v_end: 0.0,
                moved: 0.0,
                excess: 0.0,
                fell_back: true,
            },
        });
    }
    cfg.validate()?;
    let p = current.to_quantile(cfg.quantiles_for(current)).into_values();
    let (_, step) = inner_step_from_quantiles(model, i, prev, &p, cfg, opts)?;
    Ok(step)
}

/// The inner minimization started from quantiles `p` of coordinate `i`.
/// Returns the minimizing quantiles along with their grid density.
fn inner_step_from_quantiles(
    model: &Model,
    i: usize,
    prev: &ProductMeasure,
    p: &[f64],
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<(Vec<f64>, InnerStep)> {
    let current = prev.marginal(i);
    let psi = psi_profile(model, i, prev, opts)?;
    let obj = QuantileObjective {
        prev: p,
        psi: &psi,
        h: cfg.h,
    };
    let v_start = obj.value(p);
    if !v_start.is_finite() {
        return Err(MfviError::NonFinite(format!(
            "movement objective at the starting quantiles of coordinate {i}"
        )));
    }

    let mut q = p.to_vec();
    let mut v = v_start;
    let mut iterations = 0;
    let mut collapsed = false;
    let spread = |x: &[f64]| x[x.len() - 1] > x[0];
    while iterations < cfg.inner_max_iters {
        iterations += 1;
        let (g, hess) = obj.gradient_and_curvature(&q);
        let dir: Vec<f64> = match hess.solve(&g) {
            Some(s) => s.into_iter().map(|x| -x).collect(),
            None => g.iter().map(|x| -x).collect(),
        };
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            break;
        }
        // Newton decrement: predicted remaining decrease
        if -0.5 * slope <= cfg.inner_tol * v.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mut alpha = cfg.initial_rate;
        let mut accepted = None;
        while alpha > 1e-14 {
            let mut trial: Vec<f64> = q.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            pav_in_place(&mut trial);
            if !spread(&trial) && spread(&q) {
                collapsed = true;
            } else {
                let vt = obj.value(&trial);
                if vt.is_finite() && vt <= v + cfg.sufficient_decrease * alpha * slope {
                    accepted = Some((trial, vt));
                    break;
                }
            }
            alpha *= cfg.shrink;
        }
        let Some((trial, vt)) = accepted else {
            if collapsed {
                return Err(MfviError::MonotonicityCollapse);
            }
            break;
        };
        let rel = (v - vt) / vt.abs().max(f64::MIN_POSITIVE);
        q = trial;
        v = vt;
        if rel < cfg.inner_tol {
            break;
        }
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(MfviError::NonFinite(format!("quantiles of coordinate {i}")));
    }
    let fallback = |reason: &str| {
        log::debug!("inner step on coordinate {i} kept its input: {reason}");
        let step = InnerStep {
            measure: current.clone(),
            report: InnerStepReport {
                coordinate: i,
                iterations,
                v_start,
                v_end: v_start,
                moved: 0.0,
                excess: 0.0,
                fell_back: true,
            },
        };
        (p.to_vec(), step)
    };
    if !(v < v_start) {
        return Ok(fallback("no decrease in quantile coordinates"));
    }
    let (lo, hi) = (current.grid().x_min(), current.grid().x_max());
    for x in q.iter_mut() {
        *x = x.clamp(lo, hi);
    }
    let measure = QuantileMeasure1D::new(q.clone())?.to_density(*current.grid())?;
    // The grid read-out must satisfy the movement inequality up to a bounded
    // overshoot, which is recorded so that the telescoped ledger stays exact.
    let moved = w2(current, &measure, cfg.quantiles_for(current));
    let j_before = objective_ji_with(&psi, current);
    let before = cfg.h * j_before;
    let after = 0.5 * moved * moved + cfg.h * objective_ji_with(&psi, &measure);
    let allowance = cfg.h * cfg.energy_tol * j_before.abs().max(1.0);
    let excess = (after - before).max(0.0);
    if !(excess <= allowance) {
        return Ok(fallback("grid read-out does not decrease the movement functional"));
    }
    Ok((
        q,
        InnerStep {
            measure,
            report: InnerStepReport {
                coordinate: i,
                iterations,
                v_start,
                v_end: v,
                moved,
                excess,
                fell_back: false,
            },
        },
    ))
}

/// `V_i(candidate) = ½W2(prev_i, candidate)² + h·J_i(candidate; prev_{−i})`
/// evaluated with grid quantities.
pub fn movement_objective(
    model: &Model,
    i: usize,
    prev: &ProductMeasure,
    candidate: &GridMeasure1D,
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<f64> {
    let psi = psi_profile(model, i, prev, opts)?;
    let k = cfg.quantiles_for(candidate);
    let d = w2(prev.marginal(i), candidate, k);
    Ok(0.5 * d * d + cfg.h * objective_ji_with(&psi, candidate))
}

/// One Gauss–Seidel sweep together with per-coordinate diagnostics.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub measure: ProductMeasure,
    pub w2_steps: Vec<f64>,
    pub reports: Vec<InnerStepReport>,
}

/// Applies the inner step to coordinates `0..d` in order, each seeing the
/// already-updated earlier coordinates.
pub fn jko_sweep(
    model: &Model,
    prev: &ProductMeasure,
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<ProductMeasure> {
    Ok(jko_sweep_detailed(model, prev, cfg, opts)?.measure)
}

pub fn jko_sweep_detailed(
    model: &Model,
    prev: &ProductMeasure,
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<SweepResult> {
    if cfg.h == 0.0 {
        return Ok(SweepResult {
            measure: prev.clone(),
            w2_steps: vec![0.0; prev.dim()],
            reports: (0..prev.dim())
                .map(|i| InnerStepReport {
                    coordinate: i,
                    iterations: 0,
                    v_start: 0.0,
                    v_end: 0.0,
                    moved: 0.0,
                    excess: 0.0,
                    fell_back: true,
                })
                .collect(),
        });
    }
    cfg.validate()?;
    let mut quantiles = initial_quantiles(prev, cfg);
    sweep_with_quantiles(model, prev, &mut quantiles, cfg, opts)
}

fn initial_quantiles(nu: &ProductMeasure, cfg: &JkoConfig) -> Vec<Vec<f64>> {
    nu.marginals()
        .iter()
        .map(|m| m.to_quantile(cfg.quantiles_for(m)).into_values())
        .collect()
}

/// A sweep that carries each coordinate's quantiles from step to step, so the
/// grid density is only a read-out and repeated steps do not pay a
/// density-to-quantile round trip.
fn sweep_with_quantiles(
    model: &Model,
    prev: &ProductMeasure,
    quantiles: &mut [Vec<f64>],
    cfg: &JkoConfig,
    opts: &PsiOptions,
) -> Result<SweepResult> {
    let mut nu = prev.clone();
    let mut w2_steps = Vec::with_capacity(nu.dim());
    let mut reports = Vec::with_capacity(nu.dim());
    for i in 0..nu.dim() {
        let (q, step) = inner_step_from_quantiles(model, i, &nu, &quantiles[i], cfg, opts)?;
        w2_steps.push(step.report.moved);
        quantiles[i] = q;
        reports.push(step.report);
        nu.set_marginal(i, step.measure);
    }
    Ok(SweepResult {
        measure: nu,
        w2_steps,
        reports,
    })
}

/// State after sweep `k` (time `t = k·h`); `k = 0` is the initial measure.
#[derive(Debug, Clone)]
pub struct JkoStep {
    pub k: usize,
    pub t: f64,
    pub measure: ProductMeasure,
    /// W2 movement of each coordinate during this sweep (zeros at `k = 0`).
    pub w2_steps: Vec<f64>,
    pub objective: f64,
    pub fallbacks: usize,
    /// Sum of the inner steps' excesses during this sweep.
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct JkoTrajectory {
    pub config: JkoConfig,
    pub steps: Vec<JkoStep>,
    /// True when the run ended early on the stationarity rule.
    pub stationary: bool,
}

impl JkoTrajectory {
    pub fn h(&self) -> f64 {
        self.config.h
    }

    /// Number of sweeps performed.
    pub fn sweeps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn last(&self) -> &JkoStep {
        self.steps.last().expect("trajectory holds the initial state")
    }

    /// Piecewise-constant interpolation: `ν_h(t) = ν^k` for `t ∈ [kh, (k+1)h)`.
    /// Times past the last sweep return the final state.
    pub fn at(&self, t: f64) -> &ProductMeasure {
        let k = (t / self.config.h + 1e-9).floor().max(0.0) as usize;
        &self.steps[k.min(self.steps.len() - 1)].measure
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }
}

/// Number of sweeps needed to reach horizon `t_end`: `⌈T/h⌉`, at least one.
pub fn sweeps_for_horizon(h: f64, t_end: f64) -> usize {
    ((t_end / h - 1e-9).ceil().max(1.0)) as usize
}

/// Runs sweeps up to time `t_end`, stopping early once every coordinate has
/// moved less than [`STATIONARY_MOVE`] for [`STATIONARY_SWEEPS`] sweeps.
pub fn jko_run(
    model: &Model,
    nu0: &ProductMeasure,
    cfg: &JkoConfig,
    t_end: f64,
    opts: &PsiOptions,
) -> Result<JkoTrajectory> {
    cfg.validate()?;
    let mut n = sweeps_for_horizon(cfg.h, t_end);
    if let Some(cap) = cfg.max_sweeps {
        n = n.min(cap);
    }
    let mut steps = vec![JkoStep {
        k: 0,
        t: 0.0,
        measure: nu0.clone(),
        w2_steps: vec![0.0; nu0.dim()],
        objective: objective_j(model, nu0, opts)?,
        fallbacks: 0,
        slack: 0.0,
    }];
    let mut quantiles = initial_quantiles(nu0, cfg);
    let mut quiet = 0;
    let mut stationary = false;
    for k in 1..=n {
        let prev = &steps.last().unwrap().measure;
        let sweep = sweep_with_quantiles(model, prev, &mut quantiles, cfg, opts)?;
        let still = sweep.w2_steps.iter().all(|&w| w < STATIONARY_MOVE);
        steps.push(JkoStep {
            k,
            t: k as f64 * cfg.h,
            objective: objective_j(model, &sweep.measure, opts)?,
            fallbacks: sweep.reports.iter().filter(|r| r.fell_back).count(),
            slack: sweep.reports.iter().map(|r| r.excess).sum(),
            measure: sweep.measure,
            w2_steps: sweep.w2_steps,
        });
        quiet = if still { quiet + 1 } else { 0 };
        if quiet >= STATIONARY_SWEEPS {
            stationary = true;
            break;
        }
    }
    Ok(JkoTrajectory {
        config: *cfg,
        steps,
        stationary,
    })
}
