pub mod bins;
pub mod config;
pub mod ddm;
pub mod error;
pub mod experiments;
pub mod keyrate;
pub mod link;
pub mod receiver;
pub mod sift;
pub mod sim;
pub mod stability;
pub mod waveform;

pub use error::{Error, Result};
