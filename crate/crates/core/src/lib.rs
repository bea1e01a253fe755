//! Numerical laboratory for the one-phase Stefan problem in the flat regime.
//!
//! The crate simulates graphical free boundaries of the one-phase Stefan
//! problem, evaluates closed-form sub/supersolution barriers, transforms
//! temperature graphs through the partial hodograph map, solves the
//! oblique-derivative linearized parabolic problem, and measures the
//! regularity diagnostics (oscillation decay, anisotropic Hölder norms,
//! improvement of flatness) that the free-boundary theory predicts.
//!
//! All numerics are generic over the scalar type through the [`Real`]
//! trait; the type aliases at the crate root fix `f64` as the working
//! precision.

pub mod barriers;
pub mod fields;
pub mod flatness;
pub mod geometry;
pub mod hodograph;
pub mod linalg;
pub mod oblique;
pub mod stefan;
pub mod suite;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar for all grid and barrier arithmetic: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal or constant.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant converts to scalar")
    }

    /// Widening view used by reports and special functions.
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Error function, evaluated through `f64` (both supported scalars
    /// embed losslessly).
    fn erf(self) -> Self {
        Self::of(libm::erf(self.f64()))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Working precision used by the concrete aliases below.
pub type Scalar = f64;

/// Space-time point at working precision.
pub type Point = geometry::SpaceTimePoint<Scalar>;
/// Axis-aligned space-time region at working precision.
pub type Region = geometry::Region<Scalar>;
/// Anisotropic ball at working precision.
pub type Ball = geometry::AnisotropicBall<Scalar>;
/// Grid specification at working precision.
pub type Grid = fields::GridSpec<Scalar>;
/// Space-time scalar field at working precision.
pub type Field = fields::ScalarField<Scalar>;
/// Moving linear profile at working precision.
pub type Profile = flatness::LinearProfile<Scalar>;
/// Time-dependent coefficient data at working precision.
pub type Coefficients = oblique::CoefficientPath<Scalar>;
/// Stefan simulator state at working precision.
pub type StefanState = stefan::StefanState<Scalar>;
