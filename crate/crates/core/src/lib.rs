pub mod analysis;
pub mod bench;
pub mod cli;
pub mod runtime;
pub mod sim;
