//! Solution manifolds of differential equations with implicitly defined,
//! state-dependent delays: segment spaces, complement fields, the flattening
//! map `T` with inverse `Y`, and a method-of-steps integrator.

pub mod complement;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod report;
pub mod scenario;
pub mod segment;
pub mod transform;
pub mod verify;

pub use error::{DomainViolation, Error, Result};
pub use model::{ModelSpec, StatePoint};
pub use segment::{Interval, ScalarSegment, SegmentNorms, SegmentView, VectorSegment};
