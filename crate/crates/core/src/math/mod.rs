//! Shared numerical building blocks.

pub mod kernel;
pub mod normal;
pub mod rng;
pub mod spline;
pub mod tridiag;

pub use kernel::{BinnedKde2d, NwRegression};
pub use normal::{norm_cdf, norm_pdf};
pub use rng::normal_pair;
pub use spline::MonotoneCubic;
pub use tridiag::solve_tridiagonal;
