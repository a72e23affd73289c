pub mod blob;
pub mod energy;
pub mod error;
pub mod model;
pub mod nas;
pub mod network;
pub mod neuron;
pub mod quant;
pub mod reference;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
