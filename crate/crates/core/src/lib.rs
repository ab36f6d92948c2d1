pub mod error;
pub mod events;
pub mod flow;
pub mod flownet;
pub mod image;
pub mod init;
pub mod io_util;
pub mod lk;
pub mod metrics;
pub mod profiler;
pub mod ssm;
pub mod stssm;
pub mod tensor;
pub mod voxel;

pub use error::{Error, Result};
