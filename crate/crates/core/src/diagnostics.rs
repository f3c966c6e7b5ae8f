//! Cross-checks between the solvers and convergence diagnostics for the
//! minimizing-movement runs.

use serde::Serialize;

use crate::cavi::cavi_solve;
use crate::error::{MfviError, Result};
use crate::fp::{fp_run, FpConfig};
use crate::functionals::{objective_j, PsiOptions};
use crate::jko::{jko_run, JkoConfig, JkoTrajectory};
use crate::measure::ProductMeasure;
use crate::model::Model;
use crate::par;
use crate::sde::{mkv_run, SdeConfig};

/// Largest pairwise per-coordinate W2 allowed between two grid methods.
pub const GRID_AGREEMENT: f64 = 1e-2;
/// Same, for any pair involving the particle method.
pub const SDE_AGREEMENT: f64 = 5e-2;
/// Per-halving shrink factor required by [`HStudy::verdict`].
pub const MIN_REFINEMENT_RATIO: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// `½W2²` moved by coordinate `i` during sweep `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub k: usize,
    pub i: usize,
    pub half_w2_sq: f64,
}

/// The telescoped energy inequality `Σ_k Σ_i ½W2² ≤ h (J_first − J_last)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationLedger {
    pub h: f64,
    pub entries: Vec<LedgerEntry>,
    pub cumulative: f64,
    pub bound: f64,
    /// Allowances granted by the inner steps' acceptance checks, summed.
    pub slack: f64,
    pub violated: bool,
}

impl DissipationLedger {
    pub fn verdict(&self) -> Verdict {
        Verdict::from_bool(!self.violated)
    }
}

pub fn dissipation_check(traj: &JkoTrajectory) -> DissipationLedger {
    let h = traj.h();
    let mut entries = Vec::new();
    for step in &traj.steps[1..] {
        for (i, w) in step.w2_steps.iter().enumerate() {
            entries.push(LedgerEntry {
                k: step.k,
                i,
                half_w2_sq: 0.5 * w * w,
            });
        }
    }
    let cumulative: f64 = entries.iter().map(|e| e.half_w2_sq).sum();
    let j_first = traj.steps[0].objective;
    let bound = h * (j_first - traj.last().objective);
    let slack: f64 = traj.steps.iter().map(|s| s.slack).sum();
    DissipationLedger {
        h,
        entries,
        cumulative,
        bound,
        slack,
        violated: cumulative > bound + slack,
    }
}

/// Second moments along a run against the budget implied by the ledger:
/// `√s_i^k ≤ √s_i^0 + √(2k (h (J^0 − J^k) + slack_k))`, from the triangle
/// inequality for W2 and Cauchy–Schwarz over the `k` steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentBound {
    /// Largest `√s_i^k / bound_i^k` over the run.
    pub worst_ratio: f64,
    pub holds: bool,
}

pub fn second_moment_bound(traj: &JkoTrajectory) -> MomentBound {
    let h = traj.h();
    let j0 = traj.steps[0].objective;
    let root0: Vec<f64> = traj.steps[0]
        .measure
        .marginals()
        .iter()
        .map(|m| m.second_moment().sqrt())
        .collect();
    let mut worst: f64 = 0.0;
    let mut slack = 0.0;
    for step in &traj.steps[1..] {
        let k = step.k as f64;
        slack += step.slack;
        let budget = (h * (j0 - step.objective) + slack).max(0.0);
        let extra = (2.0 * k * budget).sqrt();
        for (m, r0) in step.measure.marginals().iter().zip(&root0) {
            let bound = r0 + extra;
            let ratio = m.second_moment().sqrt() / bound.max(f64::MIN_POSITIVE);
            worst = worst.max(ratio);
        }
    }
    MomentBound {
        worst_ratio: worst,
        holds: worst <= 1.0 + 1e-12,
    }
}

/// `J^{k−1} − J^k − Σ_i W2(ν_i^{k−1}, ν_i^k)²/h` per sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyResidual {
    pub residuals: Vec<f64>,
    /// `median_k |residual_k| / |J^0|`.
    pub median_relative: f64,
}

pub fn energy_dissipation_residual(traj: &JkoTrajectory) -> EnergyResidual {
    let h = traj.h();
    let residuals: Vec<f64> = traj
        .steps
        .windows(2)
        .map(|w| {
            let moved: f64 = w[1].w2_steps.iter().map(|d| d * d).sum();
            w[0].objective - w[1].objective - moved / h
        })
        .collect();
    let scale = traj.steps[0].objective.abs().max(f64::MIN_POSITIVE);
    let mut rel: Vec<f64> = residuals.iter().map(|r| r.abs() / scale).collect();
    rel.sort_by(f64::total_cmp);
    let median_relative = match rel.len() {
        0 => 0.0,
        n if n % 2 == 1 => rel[n / 2],
        n => 0.5 * (rel[n / 2 - 1] + rel[n / 2]),
    };
    EnergyResidual {
        residuals,
        median_relative,
    }
}

/// One row of the refinement table: `W2(ν_h(t), ν_{h/2}(t))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub h: f64,
    pub t: f64,
    pub per_coordinate: Vec<f64>,
    pub product: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellVerdict {
    pub coordinate: usize,
    pub t: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HStudy {
    pub hs: Vec<f64>,
    pub times: Vec<f64>,
    pub rows: Vec<GapRow>,
}

impl HStudy {
    fn column(&self, t: f64, i: Option<usize>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.t == t)
            .map(|r| i.map_or(r.product, |i| r.per_coordinate[i]))
            .collect()
    }

    /// Whether the gaps at time `t` (coordinate `i`, or the product metric
    /// when `None`) shrink by at least `min_ratio` at every halving.
    pub fn shrinks(&self, t: f64, i: Option<usize>, min_ratio: f64) -> bool {
        self.column(t, i)
            .windows(2)
            .all(|w| w[1] < w[0] && w[0] >= min_ratio * w[1])
    }

    /// Successive gap ratios at time `t` in the product metric.
    pub fn ratios(&self, t: f64) -> Vec<f64> {
        self.column(t, None).windows(2).map(|w| w[0] / w[1]).collect()
    }

    /// Monotone decrease with [`MIN_REFINEMENT_RATIO`], per coordinate and time.
    pub fn cell_verdicts(&self) -> Vec<CellVerdict> {
        let d = self.rows.first().map_or(0, |r| r.per_coordinate.len());
        self.times
            .iter()
            .flat_map(|&t| {
                (0..d).map(move |i| CellVerdict {
                    coordinate: i,
                    t,
                    verdict: Verdict::from_bool(self.shrinks(t, Some(i), MIN_REFINEMENT_RATIO)),
                })
            })
            .collect()
    }

    pub fn verdict(&self) -> Verdict {
        Verdict::from_bool(self.cell_verdicts().iter().all(|c| c.verdict.passed()))
    }

    /// Largest gap at time `t` over all step sizes and coordinates.
    pub fn max_gap(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.t == t)
            .flat_map(|r| r.per_coordinate.iter().copied())
            .fold(0.0, f64::max)
    }
}

/// Runs the minimizing-movement scheme at every `h` in a halving sequence and
/// tabulates the gaps between consecutive step sizes at each time.
pub fn h_refinement_study(
    model: &Model,
    nu0: &ProductMeasure,
    hs: &[f64],
    times: &[f64],
    base: &JkoConfig,
    opts: &PsiOptions,
) -> Result<HStudy> {
    for w in hs.windows(2) {
        if (w[1] - 0.5 * w[0]).abs() > 1e-12 * w[0] {
            return Err(MfviError::InvalidArgument(format!(
                "step sizes must halve, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let runs = par::map_range_min(hs.len(), 2, |k| {
        let cfg = JkoConfig { h: hs[k], ..*base };
        jko_run(model, nu0, &cfg, horizon, opts)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (k, pair) in runs.windows(2).enumerate() {
        for &t in times {
            let per_coordinate = pair[0].at(t).w2_per_coordinate(pair[1].at(t))?;
            let product = per_coordinate.iter().map(|d| d * d).sum::<f64>().sqrt();
            rows.push(GapRow {
                h: hs[k],
                t,
                per_coordinate,
                product,
            });
        }
    }
    Ok(HStudy {
        hs: hs.to_vec(),
        times: times.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cavi,
    Jko,
    Fp,
    Sde,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cavi, Method::Jko, Method::Fp, Method::Sde];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cavi => "cavi",
            Method::Jko => "jko",
            Method::Fp => "fp",
            Method::Sde => "sde",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Method::Sde
    }
}

/// Solver settings for [`compare_all`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareConfig {
    pub cavi_tol: f64,
    pub cavi_max_sweeps: usize,
    pub jko: JkoConfig,
    pub jko_horizon: f64,
    pub fp: FpConfig,
    pub fp_horizon: f64,
    pub sde: SdeConfig,
    pub sde_horizon: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            cavi_tol: 1e-8,
            cavi_max_sweeps: 500,
            jko: JkoConfig::default(),
            jko_horizon: 20.0,
            fp: FpConfig::default(),
            fp_horizon: 20.0,
            sde: SdeConfig::default(),
            sde_horizon: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub methods: Vec<Method>,
    pub summaries: Vec<MethodSummary>,
    /// `distances[a][b][i]`: W2 between methods `a` and `b` on coordinate `i`.
    pub distances: Vec<Vec<Vec<f64>>>,
    pub grid_threshold: f64,
    pub sde_threshold: f64,
    pub verdict: Verdict,
    #[serde(skip)]
    pub measures: Vec<ProductMeasure>,
}

impl AgreementReport {
    /// Builds the report from final measures, all of which must live on the
    /// same grids.
    pub fn from_measures(
        model: &Model,
        results: Vec<(Method, ProductMeasure)>,
        opts: &PsiOptions,
    ) -> Result<Self> {
        let Some((_, first)) = results.first() else {
            return Err(MfviError::InvalidArgument("nothing to compare".into()));
        };
        let grids = first.grids();
        if results.iter().any(|(_, m)| m.grids() != grids) {
            return Err(MfviError::GridMismatch);
        }
        let n = results.len();
        let d = first.dim();
        let mut distances = vec![vec![vec![0.0; d]; n]; n];
        let mut ok = true;
        for a in 0..n {
            for b in a + 1..n {
                let w = results[a].1.w2_per_coordinate(&results[b].1)?;
                let limit = if results[a].0.is_stochastic() || results[b].0.is_stochastic() {
                    SDE_AGREEMENT
                } else {
                    GRID_AGREEMENT
                };
                ok &= w.iter().all(|&x| x < limit);
                distances[a][b] = w.clone();
                distances[b][a] = w;
            }
        }
        let summaries = results
            .iter()
            .map(|(method, m)| {
                Ok(MethodSummary {
                    method: *method,
                    means: m.means(),
                    variances: m.variances(),
                    objective: objective_j(model, m, opts)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (methods, measures) = results.into_iter().unzip();
        Ok(Self {
            methods,
            summaries,
            distances,
            grid_threshold: GRID_AGREEMENT,
            sde_threshold: SDE_AGREEMENT,
            verdict: Verdict::from_bool(ok),
            measures,
        })
    }

    pub fn distance(&self, a: Method, b: Method) -> Option<&[f64]> {
        let ia = self.methods.iter().position(|&m| m == a)?;
        let ib = self.methods.iter().position(|&m| m == b)?;
        Some(&self.distances[ia][ib])
    }
}

fn tagged<T>(method: Method, r: Result<T>) -> Result<T> {
    r.map_err(|e| MfviError::SolverFailure {
        method: method.name().to_string(),
        source: Box::new(e),
    })
}

/// Runs the four solvers from `nu0` and compares their end states.
pub fn compare_all(
    model: &Model,
    nu0: &ProductMeasure,
    cfg: &CompareConfig,
    opts: &PsiOptions,
) -> Result<AgreementReport> {
    let ((cavi, jko), (fp, sde)) = par::join(
        || {
            par::join(
                || {
                    tagged(
                        Method::Cavi,
                        cavi_solve(model, nu0, cfg.cavi_tol, cfg.cavi_max_sweeps, opts).map(|o| o.measure),
                    )
                },
                || {
                    tagged(
                        Method::Jko,
                        jko_run(model, nu0, &cfg.jko, cfg.jko_horizon, opts).map(|t| t.last().measure.clone()),
                    )
                },
            )
        },
        || {
            par::join(
                || {
                    tagged(
                        Method::Fp,
                        fp_run(model, nu0, &cfg.fp, cfg.fp_horizon, opts).map(|t| t.last().measure.clone()),
                    )
                },
                || {
                    tagged(
                        Method::Sde,
                        mkv_run(model, nu0, &cfg.sde, cfg.sde_horizon, opts).map(|o| o.averaged),
                    )
                },
            )
        },
    );
    AgreementReport::from_measures(
        model,
        vec![
            (Method::Cavi, cavi?),
            (Method::Jko, jko?),
            (Method::Fp, fp?),
            (Method::Sde, sde?),
        ],
        opts,
    )
}
