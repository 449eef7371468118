//! Exact discrete Malliavin calculus on marked binomial processes.
//!
//! Everything here works on the fully enumerated sample space {0..m}^T, so
//! every operator is an exact table and every identity can be checked to
//! machine precision.

pub mod basis;
pub mod chaos;
pub mod cli;
pub mod config_space;
pub mod error;
pub mod hedging;
pub mod malliavin;
pub mod measure_change;
pub mod stein;
pub mod verify;

mod tensor;

pub use basis::{build_basis, OrthogonalBasis};
pub use chaos::{ChaosCoefficients, Kernel, Support};
pub use config_space::{Configuration, ModelParams, PathFunctional, Space};
pub use error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        "0.0000000000000000e0".to_string()
    } else {
        format!("{x:.16e}")
    }
}
