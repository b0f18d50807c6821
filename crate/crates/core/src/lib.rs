//! Kernel quantum state estimation for continuous-variable systems.
//!
//! The pipeline runs from analytic reference states, through simulated
//! quadrature data and nonparametric tomogram / characteristic-function
//! estimates, to density-matrix kernels and trace functionals.

pub mod error;
pub mod harness;
pub mod io;
pub mod kcfe;
pub mod kde;
pub mod pool;
pub mod reconstruction;
pub mod special;
pub mod sampling;
pub mod states;

pub use error::{KqseError, Result};
pub use num_complex::Complex64;
pub use states::{OpticalSetting, PhaseSetting, ReferenceState};
