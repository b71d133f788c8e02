//! Multi-person human motion generation with a transformer generator trained
//! as a conditional Wasserstein GAN.
//!
//! The pipeline, end to end:
//!
//! 1. [`gp`] draws temporally correlated latent sequences from a Gaussian
//!    process prior, one independent channel at a time.
//! 2. [`generator`] maps a latent sequence plus an action label to a
//!    multi-person motion sequence by alternating attention over the person
//!    axis (interaction) and the time axis (temporal).
//! 3. [`discriminator`] scores sequences with a spatial-temporal graph
//!    convolutional critic conditioned on the label via an inner-product
//!    projection.
//! 4. [`training`] runs the Wasserstein objective with gradient penalty.
//! 5. [`evaluation`] trains an action recognizer of the same graph
//!    convolutional family and reports Frechet feature distances and label
//!    accuracy of generated motions.
//!
//! [`data`] holds the skeleton/motion types, the procedural dataset used by
//! the tests, and the binary serialization format. [`tensor`] is the
//! reverse-mode autodiff engine everything runs on. [`config`] ties the knobs
//! together for the command-line driver.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod gp;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
