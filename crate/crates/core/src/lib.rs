pub mod benders;
pub mod error;
pub mod evaluation;
pub mod lp;
pub mod market_data;
pub mod oracle;
pub mod pipeline;
pub mod scenario;
pub mod sddp;
pub mod station;
pub mod synthetic;

pub use error::{Error, Result};
