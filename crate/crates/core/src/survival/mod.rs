//! Counting-process data model and step-function hazard calculus.

mod data;
mod hazard;

pub use data::{nelson_aalen, Arm, Cause, Cohort, EventRecord, Population};
pub use hazard::{
    aalen_johansen, backward_residual, duhamel_residual, integration_by_parts_residual,
    product_integral, product_integral_left, stieltjes_integral, CumulativeHazard,
};
