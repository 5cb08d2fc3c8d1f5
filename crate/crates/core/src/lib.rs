#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod episode;
pub mod hash;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod scene;
pub mod sim;
pub mod train;
