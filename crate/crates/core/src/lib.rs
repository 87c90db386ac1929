pub mod arch;
pub mod classical;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
