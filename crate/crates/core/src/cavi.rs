//! Coordinate ascent: each update replaces `ν_i` by the Gibbs measure
//! `∝ exp(−Ψ_i(·; ν_{−i}))`, the exact minimizer of `J_i` on the grid.

use serde::Serialize;

use crate::error::{MfviError, Result};
use crate::functionals::{objective_j, psi_profile, PsiOptions, PsiProfile};
use crate::measure::{default_quantile_count, w2, GridMeasure1D, ProductMeasure};
use crate::model::Model;

/// Weights whose largest entry falls below this are considered underflowed.
const UNDERFLOW_LIMIT: f64 = 1e-280;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaviSweep {
    pub sweep: usize,
    pub objective: f64,
    pub w2_move: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CaviTrace {
    pub sweeps: Vec<CaviSweep>,
}

impl CaviTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.sweeps.iter().map(|s| s.objective).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CaviOutcome {
    pub measure: ProductMeasure,
    pub trace: CaviTrace,
    /// Objective of the starting measure.
    pub initial_objective: f64,
    /// False when the sweep budget ran out before the movement tolerance was met.
    pub converged: bool,
}

/// Normalized `exp(−Ψ)` on the profile's grid.
pub fn gibbs_measure(psi: &PsiProfile) -> Result<GridMeasure1D> {
    let raw: Vec<f64> = psi.values.iter().map(|v| (-v).exp()).collect();
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let weights = if peak.is_finite() && peak >= UNDERFLOW_LIMIT {
        raw
    } else {
        // recenter on the minimum of Ψ
        let min = psi.min_value();
        let shifted: Vec<f64> = psi.values.iter().map(|v| (-(v - min)).exp()).collect();
        let peak = shifted.iter().copied().fold(0.0, f64::max);
        if !(peak.is_finite() && peak >= UNDERFLOW_LIMIT) {
            return Err(MfviError::Underflow {
                coordinate: psi.coordinate,
            });
        }
        shifted
    };
    GridMeasure1D::normalize(&weights, psi.grid)
}

/// The exact block minimizer of `J_i` given the other marginals of `nu`.
pub fn cavi_update(
    model: &Model,
    i: usize,
    nu: &ProductMeasure,
    opts: &PsiOptions,
) -> Result<GridMeasure1D> {
    gibbs_measure(&psi_profile(model, i, nu, opts)?)
}

/// Gauss–Seidel sweeps over coordinates `order` (normally `0..d`) until every
/// coordinate moves less than `tol` in W2, or `max_sweeps` is reached.
pub fn cavi_solve_ordered(
    model: &Model,
    nu0: &ProductMeasure,
    tol: f64,
    max_sweeps: usize,
    order: &[usize],
    opts: &PsiOptions,
) -> Result<CaviOutcome> {
    if !(tol > 0.0) {
        return Err(MfviError::InvalidArgument("tol must be positive".into()));
    }
    if max_sweeps == 0 {
        return Err(MfviError::InvalidArgument("max_sweeps must be at least 1".into()));
    }
    let initial_objective = objective_j(model, nu0, opts)?;
    let mut nu = nu0.clone();
    let mut trace = CaviTrace::default();
    let mut converged = false;
    for sweep in 1..=max_sweeps {
        let mut moves = vec![0.0; nu.dim()];
        for &i in order {
            let updated = cavi_update(model, i, &nu, opts)?;
            moves[i] = w2(nu.marginal(i), &updated, default_quantile_count(updated.grid()));
            nu.set_marginal(i, updated);
        }
        trace.sweeps.push(CaviSweep {
            sweep,
            objective: objective_j(model, &nu, opts)?,
            means: nu.means(),
            variances: nu.variances(),
            w2_move: moves.clone(),
        });
        if moves.iter().all(|&m| m < tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("CAVI sweep budget ({max_sweeps}) exhausted before reaching tol = {tol}");
    }
    Ok(CaviOutcome {
        measure: nu,
        trace,
        initial_objective,
        converged,
    })
}

/// [`cavi_solve_ordered`] in the natural order `0, 1, …, d−1`.
pub fn cavi_solve(
    model: &Model,
    nu0: &ProductMeasure,
    tol: f64,
    max_sweeps: usize,
    opts: &PsiOptions,
) -> Result<CaviOutcome> {
    let order: Vec<usize> = (0..nu0.dim()).collect();
    cavi_solve_ordered(model, nu0, tol, max_sweeps, &order, opts)
}
