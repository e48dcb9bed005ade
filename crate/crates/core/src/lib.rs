pub mod nn;
pub mod model;
pub mod objective;
pub mod data;
pub mod training;
pub mod evaluation;
pub mod cli;
