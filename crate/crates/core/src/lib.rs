//! Reproducing kernels on right quaternionic Hilbert spaces.
//!
//! The crate is layered bottom-up: [`quaternion`] arithmetic, [`qlinalg`] dense
//! quaternionic linear algebra, [`special`] functions, [`poly`] basis families,
//! [`kernels`] (series and closed-form kernels, coherent-state vectors),
//! [`measures`] (measures on H, C, R and their quadrature rules), [`pov`]
//! (localization operators, POV measures and the discretized Naimark extension)
//! and the [`cli`] batch driver.

pub mod cli;
pub mod error;
pub mod kernels;
pub mod measures;
pub mod qlinalg;
pub mod quaternion;
pub mod poly;
pub mod pov;
pub mod special;

pub use error::{Error, Result};
pub use qlinalg::{QMatrix, QVector};
pub use quaternion::{PolarForm, Quaternion};
