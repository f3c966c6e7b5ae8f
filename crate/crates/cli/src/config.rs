//! Run configuration: JSON in, validated and fully resolved config out.

use std::path::{Path, PathBuf};

use mfvi_core::fp::FpConfig;
use mfvi_core::functionals::PsiOptions;
use mfvi_core::jko::JkoConfig;
use mfvi_core::model::catalog;
use mfvi_core::sde::SdeConfig;
use mfvi_core::{Grid1D, Model, ProductMeasure, QuadraticModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const DEFAULT_X_MIN: f64 = -8.0;
pub const DEFAULT_X_MAX: f64 = 8.0;
pub const DEFAULT_CELLS: usize = 512;
pub const DEFAULT_HS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Catalog models above this dimension switch `Ψ` to Monte Carlo.
const TENSOR_QUADRATURE_MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Quadratic {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(default)]
        b: Option<Vec<f64>>,
    },
    Catalog {
        name: String,
        dim: usize,
        #[serde(default)]
        coupling: f64,
    },
}

impl ModelSpec {
    fn dim(&self) -> usize {
        match self {
            ModelSpec::Quadratic { a, .. } => a.len(),
            ModelSpec::Catalog { dim, .. } => *dim,
        }
    }

    fn build(&self) -> Result<Model, CliError> {
        match self {
            ModelSpec::Quadratic { a, b } => {
                let b = b.clone().unwrap_or_else(|| vec![0.0; a.len()]);
                Ok(QuadraticModel::new(a.clone(), b).map_err(CliError::invalid)?.into())
            }
            ModelSpec::Catalog { name, dim, coupling } => {
                catalog::build(name, *dim, *coupling).map_err(CliError::invalid)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    #[serde(rename = "M")]
    pub cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: DEFAULT_X_MIN,
            x_max: DEFAULT_X_MAX,
            cells: DEFAULT_CELLS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum GridInput {
    Shared(GridSpec),
    PerCoordinate(Vec<GridSpec>),
}

/// Gaussian starting marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaviBlock {
    pub enabled: bool,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CaviBlock {
    fn default() -> Self {
        Self {
            enabled: true,
            tol: 1e-8,
            max_sweeps: 500,
        }
    }
}

/// A time-stepping solver: its own settings plus the horizon to run to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverBlock<C> {
    pub enabled: bool,
    pub horizon: f64,
    #[serde(flatten)]
    pub settings: C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub hs: Vec<f64>,
    pub times: Vec<f64>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            hs: DEFAULT_HS.to_vec(),
            times: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub traces: bool,
    pub snapshots: bool,
    pub report: bool,
    /// Extra times at which marginals are written, besides the final state.
    pub snapshot_times: Vec<f64>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            traces: true,
            snapshots: true,
            report: true,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<ModelSpec>,
    grid: Option<GridInput>,
    init: Option<InitSpec>,
    cavi: Option<CaviBlock>,
    jko: Option<Map<String, Value>>,
    fp: Option<Map<String, Value>>,
    sde: Option<Map<String, Value>>,
    study_h: Option<StudySpec>,
    seed: Option<u64>,
    output: Option<OutputSpec>,
}

/// The fully resolved configuration, echoed verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub grid: Vec<GridSpec>,
    pub init: InitSpec,
    pub cavi: CaviBlock,
    pub jko: SolverBlock<JkoConfig>,
    pub fp: SolverBlock<FpConfig>,
    pub sde: SolverBlock<SdeConfig>,
    pub study_h: StudySpec,
    pub seed: u64,
    pub output: OutputSpec,
}

/// Splits the `enabled` and `horizon` keys off a solver block and reads the
/// rest as the solver's own settings.
fn solver_block<C: DeserializeOwned + Default>(
    name: &str,
    raw: Option<Map<String, Value>>,
    default_horizon: f64,
) -> Result<SolverBlock<C>, CliError> {
    let mut map = raw.unwrap_or_default();
    let enabled = match map.remove("enabled") {
        None => true,
        Some(Value::Bool(b)) => b,
        Some(_) => return Err(CliError::Validation(format!("{name}.enabled must be a boolean"))),
    };
    let horizon = match map.remove("horizon") {
        None => default_horizon,
        Some(v) => v
            .as_f64()
            .ok_or_else(|| CliError::Validation(format!("{name}.horizon must be a number")))?,
    };
    let settings = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Validation(format!("{name}: {e}")))?;
    Ok(SolverBlock {
        enabled,
        horizon,
        settings,
    })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut model = raw
        .model
        .ok_or_else(|| CliError::Validation("a model block is required".into()))?;
    if let ModelSpec::Quadratic { a, b: b @ None } = &mut model {
        *b = Some(vec![0.0; a.len()]);
    }
    let dim = model.dim();
    let grid = match raw.grid {
        None => vec![GridSpec::default(); dim],
        Some(GridInput::Shared(g)) => vec![g; dim],
        Some(GridInput::PerCoordinate(gs)) => gs,
    };
    let init = raw.init.unwrap_or_default();
    let init = InitSpec {
        means: if init.means.is_empty() { vec![0.0; dim] } else { init.means },
        variances: if init.variances.is_empty() { vec![1.0; dim] } else { init.variances },
    };
    let seed = raw.seed.unwrap_or(0);
    let mut sde: SolverBlock<SdeConfig> = solver_block("sde", raw.sde, 10.0)?;
    sde.settings.seed = seed;
    let cfg = RunConfig {
        model,
        grid,
        init,
        cavi: raw.cavi.unwrap_or_default(),
        jko: solver_block("jko", raw.jko, 20.0)?,
        fp: solver_block("fp", raw.fp, 20.0)?,
        sde,
        study_h: raw.study_h.unwrap_or_default(),
        seed,
        output: raw.output.unwrap_or_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        let model = self.model()?;
        let d = model.dim();
        if self.grid.len() != d {
            return bad(format!("grid lists {} coordinates, model has {d}", self.grid.len()));
        }
        self.grids()?;
        if self.init.means.len() != d || self.init.variances.len() != d {
            return bad(format!("init needs {d} means and {d} variances"));
        }
        if self.init.variances.iter().any(|v| !(*v > 0.0)) {
            return bad("init variances must be positive".into());
        }
        if !(self.cavi.tol > 0.0) || self.cavi.max_sweeps == 0 {
            return bad("cavi needs tol > 0 and max_sweeps >= 1".into());
        }
        self.jko.settings.validate().map_err(CliError::invalid)?;
        self.fp.settings.validate().map_err(CliError::invalid)?;
        self.sde.settings.validate().map_err(CliError::invalid)?;
        for (name, t) in [("jko", self.jko.horizon), ("fp", self.fp.horizon), ("sde", self.sde.horizon)] {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("{name}.horizon must be positive"));
            }
        }
        if self.sde.horizon <= self.sde.settings.burn_in {
            return bad("sde.horizon must exceed SdeConfig.burn_in".into());
        }
        let hs = &self.study_h.hs;
        if hs.is_empty() || hs.iter().any(|h| !(*h > 0.0)) {
            return bad("study_h.hs must be nonempty and positive".into());
        }
        if hs.windows(2).any(|w| (w[0] / w[1] - 2.0).abs() > 1e-9) {
            return bad("study_h.hs must be a halving sequence".into());
        }
        if self.study_h.times.iter().any(|t| !(*t >= 0.0)) {
            return bad("study_h.times must be nonnegative".into());
        }
        if self.output.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            return bad("output.snapshot_times must be nonnegative".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, CliError> {
        self.model.build()
    }

    pub fn grids(&self) -> Result<Vec<Grid1D>, CliError> {
        self.grid
            .iter()
            .map(|g| Grid1D::new(g.x_min, g.x_max, g.cells).map_err(CliError::invalid))
            .collect()
    }

    pub fn initial_measure(&self) -> Result<ProductMeasure, CliError> {
        let params: Vec<(f64, f64)> = self
            .init
            .means
            .iter()
            .copied()
            .zip(self.init.variances.iter().copied())
            .collect();
        ProductMeasure::gaussian(&self.grids()?, &params).map_err(CliError::invalid)
    }

    pub fn psi_options(&self) -> PsiOptions {
        match self.model {
            ModelSpec::Catalog { dim, .. } if dim > TENSOR_QUADRATURE_MAX_DIM => {
                PsiOptions::with_monte_carlo(self.seed)
            }
            _ => PsiOptions::default(),
        }
    }

    /// Applies the `--seed` override everywhere the seed is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sde.settings.seed = seed;
    }
}
