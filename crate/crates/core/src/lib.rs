//! Unsupervised image restoration by generator inversion.
//!
//! A style-modulated generator is inverted against a degraded target through
//! a differentiable model of the degradation. Optimization runs in three
//! phases over progressively larger latent spaces (one global code, one code
//! per layer, one code per filter) with normalized gradient descent and a
//! multiresolution perceptual loss.

pub mod bench;
pub mod degrade;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod image;
pub mod inversion;
pub mod kernels;
pub mod perceptual;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use generator::{
    GeneratorConfig, GeneratorWeights, Latent, LatentFilterwise, LatentGlobal, LatentLayerwise, Variant,
};
pub use image::Image;
pub use tape::{Graph, Surrogate, Var};
pub use tensor::Tensor;
