//! Stream-level conditional flow matching with Gaussian-process streams.
//!
//! A generative model is trained by regressing a vector field onto the
//! velocities of random streams that connect source and target samples.
//! Streams are Gaussian processes pinned at observed points; their position
//! and velocity at any time have a closed-form joint Gaussian law.

pub mod assignment;
pub mod coupling;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod gp_stream;
pub mod kernels;
pub mod ode;
pub mod points;
pub mod rng;
pub mod trainer;
pub mod vector_field;

pub use coupling::{Batch, GroupIndex};
pub use datasets::{Dataset, DatasetSpec, DatasetVariant, GaussianMixture, PointSampler};
pub use error::{Error, Result};
pub use gp_stream::{ConditionalGaussian, MeanFunction, ObservationSet, StreamModel, StreamSample};
pub use kernels::{Blocks, GramBundle, KernelSpec};
pub use points::Points;
pub use vector_field::{Activation, AdamConfig, AdamState, Architecture, VectorFieldModel};
pub use trainer::{train, train_multimarginal, Algorithm, CovariateMode, LossTrace, TrainConfig, VarianceScheme};
pub use ode::{generate, IntegratorSpec, Trajectory};
pub use eval::{w2, RunMetrics};
