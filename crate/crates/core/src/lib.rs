//! relukit: constructive deep ReLU network approximators with explicit
//! depth and free-parameter accounting, covering-number capacity bounds,
//! and a small ERM harness for depth-selection experiments on synthetic
//! regression data.

pub mod capacity;
pub mod composite;
pub mod datagen;
pub mod erm;
pub mod error;
pub mod gates;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod poly;
pub mod smooth;
pub mod sweep;

pub use error::{Error, Result};
pub use net::{compose, identity_net, pad_output_depth, parallel, stack, ReluNet};
