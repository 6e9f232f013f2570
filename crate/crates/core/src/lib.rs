pub mod error;
pub mod io;
mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod placement;
pub mod pod;
pub mod qr;
pub mod reconstruct;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
