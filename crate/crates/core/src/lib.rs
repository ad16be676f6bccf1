pub mod channel;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod pipeline;
pub mod rf;
pub mod sdr;
pub mod solver;
