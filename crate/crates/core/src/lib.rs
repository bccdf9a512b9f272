pub mod cli;
pub mod dspchain;
pub mod error;
pub mod fitkit;
pub mod par;
pub mod photonstats;
pub mod pipeline;
pub mod response;
pub mod specfun;

pub use error::ParamError;
pub use par::Execution;
