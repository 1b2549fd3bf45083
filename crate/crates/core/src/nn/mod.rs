//! Differentiable computation and the desk-scale spectral classifier.
//!
//! [`tensor`] is a self-contained reverse-mode tape whose primitives are all
//! validated against central finite differences. [`layers`] assembles the
//! network blocks on top of it, [`train`] runs the toy classification loop,
//! and [`checkpoint`] persists parameters.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod sampling;
pub mod tensor;
pub mod train;

pub use layers::{Activation, BasisMode, SaLayerConfig, WfLayerConfig};
pub use params::{Bindings, ParamId, ParamStore};
pub use sampling::farthest_point_sampling;
pub use tensor::{finite_diff_check, Tape, TensorId};
pub use train::{
    synth_dataset, total_loss, train_toy, EpochMetrics, NetConfig, Network, SynthDatasetConfig,
    TrainConfig, TrainOutcome, Variant,
};
