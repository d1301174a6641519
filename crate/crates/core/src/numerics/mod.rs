//! Small dense linear algebra, seeded random streams and Gaussian quadrature.

mod matrix;
mod quadrature;
mod rng;

pub use matrix::DenseMatrix;
pub use quadrature::{gauss_hermite_expect, hermite_rule};
pub use rng::{SeededRng, Stream};
