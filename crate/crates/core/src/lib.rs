pub mod error;
pub mod groups;
pub mod reps;
pub mod fourier;
pub mod nn;
pub mod likelihood;
pub mod kernelproj;
pub mod tasks;
pub mod verify;
pub mod cli;
