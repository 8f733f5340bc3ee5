//! Day-ahead market clearing and settlement under national, zonal and nodal designs.

pub mod calibration;
pub mod clearing;
pub mod cost;
pub mod ingestion;
pub mod lp;
pub mod pipeline;
pub mod policy;
pub mod redispatch;
pub mod report;
pub mod scenario;
pub mod settlement;
pub mod welfare;
