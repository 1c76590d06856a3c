mod build;
mod profile;
mod record;

pub use build::*;
pub use profile::*;
pub use record::*;
