pub mod consensus;
pub mod grouping;
pub mod model;
pub mod netsim;
pub mod probes;
pub mod classifier;
pub mod analytics;
pub mod blocker;
pub mod cli;
pub mod pipeline;
