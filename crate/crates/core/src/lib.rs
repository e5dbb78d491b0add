//! Numerical core for fault-injection experiments on small convolutional
//! networks.
//!
//! Everything here is a pure function of its inputs plus an explicit seeded
//! random stream, and needs nothing beyond `alloc`. File formats, dataset
//! loading, parallel sweeps and the command line live in the `ablate` crate.
//!
//! * [`tensor`] and [`layers`]: dense f32 tensors and forward/backward passes
//!   for conv2d, maxpool, dense, relu, dropout and softmax cross-entropy.
//! * [`model`]: architectures, parameter storage, inference and per-layer
//!   descriptive statistics; [`train`] runs minibatch SGD with momentum.
//! * [`perturb`]: synapse knockout, node knockout and Gaussian weight
//!   mutation applied to one layer of a network copy.
//! * [`stats`]: top-k accuracy, Wilcoxon rank-sum, least-squares fits.
//! * [`data`]: in-memory datasets and the synthetic pattern generator.
//! * [`rng`]: xoshiro256** streams and per-trial seed derivation.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod perturb;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod train;

pub use data::{synth_dataset, Dataset, SynthSpec, SyntheticSplit};
pub use error::{Error, Result};
pub use model::{desk_architecture, Architecture, LayerKind, LayerParams, LayerSpec, Network};
pub use perturb::{PerturbationReceipt, PerturbationSpec, Treatment};
pub use rng::{derive_seed, Rng};
pub use stats::{DescriptiveStats, FitResult, TestMethod, TestResult};
pub use tensor::Tensor;
pub use train::{train, EpochStats, TrainConfig};
