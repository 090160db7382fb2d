//! Functional unknown-input observers.
//!
//! Two families are covered: integrator chains with a time-varying output row,
//! observed through the reduced `w`-system and its fundamental matrix, and
//! MIMO LTI plants with unknown inputs, observed by a derivative-free
//! functional observer `x_bar = Q x`.

pub mod config;
pub mod error;
pub mod linalg;
pub mod ltv_gpebo;
pub mod placement;
pub mod presets;
pub mod sim_engine;
pub mod system_model;
pub mod time_expr;
pub mod uio_synth;

pub use error::{Error, ErrorClass, Result};
pub use linalg::Complex64;
pub use system_model::{LtiSystem, LtvCanonicalSystem, RelativeDegreeProfile};
pub use time_expr::{SourceExpr, TimeExpr};
pub use uio_synth::{FunctionalObserverRealization, QMode, UioGains};
