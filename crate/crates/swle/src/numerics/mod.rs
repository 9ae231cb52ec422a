//! Shared numerical kernels: adaptive quadrature, bracketed root finding,
//! chi-square tails, dense solves, finite differences, and seedable sampling.

pub mod fd;
pub mod linalg;
pub mod quad;
pub mod rng;
pub mod roots;
pub mod special;

pub use quad::{integrate, integrate_default, integrate_many, QuadratureResult};
pub use roots::{find_root, find_root_scan};
pub use special::chi_square_sf;
