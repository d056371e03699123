//! Control plane for networks of reconfigurable reflecting surfaces.
//!
//! A transmitter that loses its link asks a station for help; the station
//! picks reflecting surfaces from its registry, steers them with scheduled
//! pattern switches, and confirms (or denies) the service. This crate
//! provides the pieces end to end:
//!
//! - [`wire`]: the binary message codec (an IPv6-framed control protocol)
//! - [`model`]: geometry, link budgets, and the shared physical types
//! - [`nodes`]: per-entity state machines (transmitter, surface, server)
//! - [`irss`]: the station's registry, chain optimizer, and localization
//! - [`graphroute`]: connectivity graphs, relay routing, handover planning
//! - [`sim`]: a deterministic event simulator tying all of it together
//!
//! Numeric code in [`model`] is generic over the scalar type so budgets can
//! run in `f32` where memory or SIMD width matters; everything downstream
//! instantiates `f64`. The aliases below pin the two supported precisions.

pub mod graphroute;
pub mod irss;
pub mod model;
pub mod nodes;
pub mod scalar;
pub mod sim;
pub mod wire;

/// Double-precision position, the instantiation the rest of the crate uses.
pub type Position64 = model::Position<f64>;
/// Single-precision position for memory-bound bulk geometry.
pub type Position32 = model::Position<f32>;
/// Double-precision surface descriptor.
pub type IrsnDescriptor64 = model::IrsnDescriptor<f64>;
/// Single-precision surface descriptor.
pub type IrsnDescriptor32 = model::IrsnDescriptor<f32>;
/// Double-precision radio parameters.
pub type RadioParams64 = model::RadioParams<f64>;
/// Single-precision radio parameters.
pub type RadioParams32 = model::RadioParams<f32>;
