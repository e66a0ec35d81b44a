//! Vector-length-agnostic long-vector emulator, cycle cost model and
//! vectorization metrics, with a synthetic CFD element-assembly mini-app that
//! exercises all of them.

pub mod costmodel;
pub mod isa;
pub mod kernels;
pub mod metrics;
pub mod tracefmt;
pub mod vvm;
