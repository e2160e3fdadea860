//! Trial harness around the alignment controllers: scenario files, the
//! deterministic simulation loop, metrics, CSV logging and SVG plots.

pub mod logio;
pub mod metrics;
pub mod plots;
pub mod scenario;
pub mod trial;
