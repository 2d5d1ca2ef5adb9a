pub mod buffer;
pub mod dsl;
pub mod envs;
pub mod net;
pub mod pipeline;
pub mod retrain;
pub mod sac;
pub mod train;
pub mod types;
