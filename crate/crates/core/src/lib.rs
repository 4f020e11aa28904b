pub mod apps;
pub mod bundles;
pub mod evolution;
pub mod harness;
pub mod synthesis;
pub mod task;
pub mod verifier;
