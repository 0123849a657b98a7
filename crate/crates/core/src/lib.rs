pub mod backbone;
pub mod checkpoint;
pub mod cia;
pub mod dataset;
pub mod episode;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod params;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
