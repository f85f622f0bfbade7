//! Identification of critical (voltage, time) cases in seasonal MV feeder
//! measurement histories, for downstream PV hosting-capacity studies.
//!
//! Stages, in pipeline order: [`ingest`], [`bad_data`], [`grouping`],
//! [`critical`]. [`synth`] generates feeders with planted structure and
//! [`pipeline`] runs everything end to end.

pub mod bad_data;
pub mod critical;
pub mod grouping;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod plots;
pub mod synth;

pub use model::{MeasurementDataset, NodeId, SampleRef, Topology};
