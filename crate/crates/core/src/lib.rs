pub mod credits;
pub mod flow;
pub mod ingest;
pub mod latency;
pub mod model;
pub mod order;
pub mod par;
pub mod queue;
pub mod stats;
pub mod store;
pub mod synth;
