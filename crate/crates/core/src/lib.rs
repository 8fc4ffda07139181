pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod losses;
pub mod nets;
pub mod tensor;
pub mod train;
