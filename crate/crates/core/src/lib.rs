pub mod channel;
pub mod config;
pub mod masac;
pub mod metrics;
pub mod offload;
pub mod pathsel;
pub mod rng;
pub mod simengine;
pub mod topology;
pub mod workload;
