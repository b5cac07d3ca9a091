//! Explicit solution of the consumption–investment problem for spread
//! (pair) trading with an Ornstein–Uhlenbeck spread, plus the numerical
//! machinery used to check it: a finite-difference PDE solver, an HJB
//! residual checker and a Monte Carlo simulator of the controlled wealth.

pub mod error;
pub mod fd;
pub mod model;
pub mod montecarlo;
pub mod pde_oracle;
pub mod policy;
pub mod quadrature;
pub mod riccati;
pub mod value;
pub mod verify;

pub use error::{Error, ParamError, Result};
pub use model::{build_model, DerivedConstants, Model, ModelParams};
pub use riccati::RiccatiFamily;
pub use value::{TimeSlice, ValueFunction, ValuePoint, WealthPartials};
pub use montecarlo::{ObjectiveEstimate, PolicyRun, SimConfig, WealthScheme};
pub use policy::{Control, FeedbackPolicy, PolicyKind};
pub use verify::{grid_scale, verify_all, CheckResult, VerifyConfig};
