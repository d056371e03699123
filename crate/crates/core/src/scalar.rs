//! Scalar abstraction for the geometry and propagation math.
//!
//! The link-budget formulas are ordinary floating-point arithmetic, so they
//! are written against a small trait instead of `f64` directly. The protocol
//! stack (wire codec, decision engine, simulator) always instantiates `f64`
//! via the default type parameters; `f32` exists for callers that embed the
//! math elsewhere.

use core::fmt::Debug;
use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar the model math is generic over.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Default + 'static {
    /// Converts an `f64` constant (speed of light, unit factors) into `Self`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}
