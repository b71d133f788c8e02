//! Gaussian process prior over latent sequences.
//!
//! Each of the `C0` latent channels is an independent zero-mean Gaussian
//! process over the `T` frame indices with a squared-exponential kernel
//! `k(i, j) = exp(-(i - j)^2 / (2 l^2))`. Channels get different length
//! scales `l` drawn from a log-uniform grid, so one latent vector mixes
//! slowly and quickly varying coordinates. Sampling is exact: Cholesky on
//! the jitter-regularized kernel matrix, then a correlated draw per channel.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A `T x C0` latent sequence: one row per frame, one column per channel.
pub type LatentSequence = Array2<f64>;

/// Default diagonal jitter added to each kernel before factorization.
pub const CHOLESKY_JITTER: f64 = 1e-6;

/// Number of retries with doubled jitter after the first attempt fails.
pub const CHOLESKY_RETRIES: usize = 3;

fn default_jitter() -> f64 {
    CHOLESKY_JITTER
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GpConfig {
    /// Sequence length T.
    pub frames: usize,
    /// Latent channels C0.
    pub channels: usize,
    /// Shortest length scale on the grid, in frames.
    pub length_scale_min: f64,
    /// Longest length scale on the grid, in frames.
    pub length_scale_max: f64,
    /// Diagonal regularization added to the kernel before factorization;
    /// doubled on each retry if the factorization fails.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl GpConfig {
    /// Default spectrum for a given size: scales from 2 frames up to the full
    /// sequence length, so the prior mixes near-frame-rate and whole-sequence
    /// correlations.
    pub fn new(frames: usize, channels: usize) -> Self {
        GpConfig {
            frames,
            channels,
            length_scale_min: 2.0,
            length_scale_max: (frames as f64).max(2.0),
            jitter: CHOLESKY_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 {
            return Err(Error::config("gp: frames and channels must be positive"));
        }
        let scales_ok =
            self.length_scale_min > 0.0 && self.length_scale_max >= self.length_scale_min;
        if !scales_ok {
            return Err(Error::config(format!(
                "gp: invalid length scale range [{}, {}]",
                self.length_scale_min, self.length_scale_max
            )));
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return Err(Error::config(format!(
                "gp: jitter must be a positive finite value, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Per-channel length scales on a log-uniform grid over
/// `[length_scale_min, length_scale_max]`, lowest first.
pub fn channel_length_scales(cfg: &GpConfig) -> Vec<f64> {
    let lo = cfg.length_scale_min.ln();
    let hi = cfg.length_scale_max.ln();
    let denom = (cfg.channels - 1).max(1) as f64;
    (0..cfg.channels)
        .map(|c| (lo + (hi - lo) * c as f64 / denom).exp())
        .collect()
}

/// Squared-exponential kernel matrix over frame indices `0..frames`:
/// `K[i][j] = exp(-(i - j)^2 / (2 l^2))`. Symmetric with unit diagonal.
pub fn kernel_matrix(frames: usize, length_scale: f64) -> Array2<f64> {
    assert!(length_scale > 0.0, "length scale must be positive");
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    Array2::from_shape_fn((frames, frames), |(i, j)| {
        let d = i as f64 - j as f64;
        (-d * d * inv).exp()
    })
}

fn cholesky_with_jitter(k: &Array2<f64>, jitter: f64, length_scale: f64) -> Result<DMatrix<f64>> {
    let t = k.nrows();
    let base = DMatrix::from_fn(t, t, |i, j| k[(i, j)]);
    let mut jitter = jitter;
    for _ in 0..=CHOLESKY_RETRIES {
        let mut m = base.clone();
        for i in 0..t {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(ch.l());
        }
        jitter *= 2.0;
    }
    Err(Error::numerical(format!(
        "gp kernel not positive definite at length scale {} even with jitter {}",
        length_scale,
        jitter / 2.0
    )))
}

/// Prior with precomputed per-channel Cholesky factors. Construction does all
/// factorizations once; sampling is a matrix-vector product per channel.
pub struct GpPrior {
    cfg: GpConfig,
    factors: Vec<DMatrix<f64>>,
}

impl GpPrior {
    pub fn new(cfg: &GpConfig) -> Result<Self> {
        cfg.validate()?;
        let scales = channel_length_scales(cfg);
        let mut factors = Vec::with_capacity(scales.len());
        for &l in &scales {
            let k = kernel_matrix(cfg.frames, l);
            factors.push(cholesky_with_jitter(&k, cfg.jitter, l)?);
        }
        Ok(GpPrior {
            cfg: cfg.clone(),
            factors,
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.cfg
    }

    /// Draws one latent sequence. Channels are sampled in order, each
    /// consuming `frames` standard normals from `rng`, so a given stream
    /// position always yields the same sequence.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentSequence {
        let t = self.cfg.frames;
        let mut out = Array2::<f64>::zeros((t, self.cfg.channels));
        let mut eps = vec![0.0f64; t];
        for (c, l) in self.factors.iter().enumerate() {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            for i in 0..t {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * eps[j];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }

    /// Draws a batch stacked as `[batch, frames, channels]`.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Array3<f64> {
        let mut out = Array3::<f64>::zeros((batch, self.cfg.frames, self.cfg.channels));
        for b in 0..batch {
            out.index_axis_mut(ndarray::Axis(0), b)
                .assign(&self.sample(rng));
        }
        out
    }
}

/// One-shot draw without keeping the factorization around.
pub fn sample_latent<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Result<LatentSequence> {
    Ok(GpPrior::new(cfg)?.sample(rng))
}
