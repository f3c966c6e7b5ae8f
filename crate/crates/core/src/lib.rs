//! Mean-field variational inference for log-concave targets on one-dimensional
//! grids, through four routes that should agree at convergence: coordinate
//! ascent, coordinate-wise minimizing movements, the coupled Fokker–Planck
//! system and the McKean–Vlasov particle system.

pub mod cavi;
pub mod diagnostics;
pub mod fp;
pub mod error;
pub mod functionals;
pub mod jko;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod monotone;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod sde;

pub use error::{MfviError, Result};
pub use measure::{Grid1D, GridMeasure1D, ProductMeasure, QuantileMeasure1D};
pub use model::{BlackBoxModel, Model, QuadraticModel};
