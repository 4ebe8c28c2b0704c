//! Annotation-free bias discovery and fine-grained mode reweighting on
//! synthetic biased classification data.

pub mod datagen;
pub mod diagnostics;
pub mod experiment;
pub mod fgccdb;
pub mod metrics;
pub mod modes;
pub mod mst;
pub mod nn;
pub mod rng;
