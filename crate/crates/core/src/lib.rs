pub mod bsde;
pub mod clearing;
pub mod eqg;
pub mod error;
pub mod mean_field;
pub mod model;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};
