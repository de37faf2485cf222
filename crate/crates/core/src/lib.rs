//! Adversarial domain randomization for procedural renderers.
//!
//! The crate trains a small classifier on procedurally rendered scenes
//! while a categorical sampling policy over the renderer's discrete
//! parameter grid learns, by REINFORCE, to concentrate on whatever the
//! classifier currently gets wrong. A uniform-sampling baseline, an
//! unlabeled-target domain-adaptation variant, and generalization-bound
//! arithmetic for weighted multi-source training round out the toolbox.
//!
//! Everything is generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); the `*64`/`*32` aliases below pin the common
//! concrete choices. All randomness descends from a single seed through
//! named streams ([`rng::Stream`]), so runs are reproducible bit for bit.

pub mod adversary;
pub mod error;
pub mod io;
pub mod learner;
pub mod policy;
pub mod render;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod theory;

pub use adversary::{
    run_dr, run_vadra, run_vadra_da, DaConfig, DrConfig, RewardSign, RunMetrics, VadraConfig,
};
pub use error::{Error, Result};
pub use learner::{LearnerState, LossKind, SampleLabel};
pub use policy::{PolicyState, ThetaDraw};
pub use render::{LabeledSample, RenderSpace, Task};
pub use scalar::Real;
pub use tensor::Tensor;
pub use theory::{multi_source_bound, single_source_bound, BoundInputs, BoundReport};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Space64 = render::RenderSpace<f64>;
pub type Learner64 = learner::LearnerState<f64>;
pub type Policy64 = policy::PolicyState<f64>;
pub type Metrics64 = adversary::RunMetrics<f64>;
pub type Bound64 = theory::BoundInputs<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Space32 = render::RenderSpace<f32>;
pub type Learner32 = learner::LearnerState<f32>;
pub type Policy32 = policy::PolicyState<f32>;
pub type Metrics32 = adversary::RunMetrics<f32>;
pub type Bound32 = theory::BoundInputs<f32>;
