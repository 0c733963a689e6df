//! Numerical laboratory for conformal structures on the k-torus: the space of
//! unit-determinant symmetric positive-definite forms with its affine-invariant
//! metric, translation dynamics and their Jacobian cocycles, a Denjoy-type
//! circle construction, disjoint wandering-ball systems with a blow-up
//! similarity model, distortion accounting along orbits, and a trapping-region
//! search that certifies a fixed point of the return map.

// validation guards are written `!(x > 0.0)` so NaN fails them; the
// positive form `x <= 0.0` would wave NaN through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod confspace;
pub mod distortion;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod plot;
pub mod records;
pub mod sample;
pub mod trap;

pub use error::Error;

/// Crate result alias; every fallible operation reports through [`Error`].
pub type Result<T> = std::result::Result<T, Error>;

/// Library version, embedded in experiment reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
