pub mod bench;
pub mod error;
pub mod fedsim;
pub mod hashing;
pub mod memtrack;
pub mod group_stream;
pub mod partition;
pub mod record_format;
pub mod stats;

pub use error::{Error, Result};
