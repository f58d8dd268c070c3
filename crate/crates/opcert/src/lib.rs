//! Numerical certification of operator concavity and convexity.
//!
//! The crate is layered bottom-up:
//!
//! * [`matcore`]: Hermitian matrices, spectral decomposition, one-variable
//!   matrix functions, Loewner margins, seeded positive definite sampling.
//! * [`funcalc`]: multivariate functional calculus on commuting tuples and
//!   the left/right multiplication superoperators.
//! * [`frechet`]: divided differences, Loewner matrices, and the Frechet
//!   differential of matrix power functions together with its inverse.
//! * [`perspective`]: the scalar kernel catalog, fixed-node quadrature for
//!   the kernels' integral representations, operator perspectives, and the
//!   nested two-stage perspective pipeline.
//! * [`certify`]: randomized Loewner-order trials that certify each
//!   concavity/convexity claim, plus deterministic crosschecks.
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! certification reports are emitted in `f64`.

pub mod certify;
pub mod error;
pub mod frechet;
pub mod funcalc;
pub mod matcore;
pub mod perspective;
pub mod tol;

pub use error::{OpcertError, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar types the numerical core accepts.
///
/// `RealField` supplies the elementary functions (powf, ln_1p, sqrt) and
/// the `num_traits` conversions move literals and report values across the
/// f32/f64 boundary without ambiguity.
pub trait Real: RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an f64 literal into the working scalar type.
pub(crate) fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("literal not representable in scalar type")
}

pub type Hermitian64 = matcore::HermitianMatrix<f64>;
pub type Spectral64 = matcore::SpectralDecomposition<f64>;
pub type CMatrix64 = matcore::CMatrix<f64>;
