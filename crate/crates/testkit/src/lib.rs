//! Reference implementations that production code is checked against.
//!
//! Nothing here shares code with `epialloc-core`; each oracle is written from
//! the defining formula with plain loops so that agreement is meaningful.

pub mod dense;
pub mod dopri;
pub mod enumerate;
pub mod posterior;
