//! Run configuration: one TOML document wiring every stage together.
//!
//! A run is fully described by (this document, input files). The SHA-256
//! hash of the document text is threaded into every artifact a run writes
//! (checkpoints, metric reports, manifests) so outputs can always be traced
//! back to the exact configuration that produced them.

use crate::data::synth::SynthSpec;
use crate::data::SkeletonTopology;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, RecognizerTrainConfig};
use crate::generator::GeneratorConfig;
use crate::gp::GpConfig;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

fn default_output_dir() -> String {
    "runs".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Where commands place their outputs; overridable per invocation.
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub synth: SynthSpec,
    pub gp: GpConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub recognizer: RecognizerTrainConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

/// Hex SHA-256 of a configuration document's exact text.
pub fn config_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Parses and validates a TOML document, returning the configuration
    /// together with the document hash.
    pub fn from_toml_str(text: &str) -> Result<(RunConfig, String)> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, config_hash(text)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(RunConfig, String)> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(e, format!("reading {}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// The skeleton every dataset in this system lives on.
    pub fn topology(&self) -> SkeletonTopology {
        SkeletonTopology::toy5()
    }

    /// Section-level checks plus cross-section consistency: every section
    /// must agree on persons, frames, channels, and class count.
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.generator.validate()?;
        let topo = self.topology();
        self.discriminator.validate(&topo)?;

        let mismatch = |what: &str, a: usize, b: usize, where_: &str| {
            Error::config(format!(
                "config: {what} disagree: {a} vs {b} ({where_})"
            ))
        };
        if self.gp.frames != self.generator.frames {
            return Err(mismatch(
                "frames",
                self.gp.frames,
                self.generator.frames,
                "gp vs generator",
            ));
        }
        if self.gp.channels != self.generator.latent_channels {
            return Err(mismatch(
                "latent channels",
                self.gp.channels,
                self.generator.latent_channels,
                "gp vs generator",
            ));
        }
        if self.synth.persons() != self.generator.persons {
            return Err(mismatch(
                "persons",
                self.synth.persons(),
                self.generator.persons,
                "synth vs generator",
            ));
        }
        if self.generator.persons != self.discriminator.persons {
            return Err(mismatch(
                "persons",
                self.generator.persons,
                self.discriminator.persons,
                "generator vs discriminator",
            ));
        }
        if self.synth.classes.len() != self.generator.class_count {
            return Err(mismatch(
                "class counts",
                self.synth.classes.len(),
                self.generator.class_count,
                "synth vs generator",
            ));
        }
        if self.generator.class_count != self.discriminator.class_count {
            return Err(mismatch(
                "class counts",
                self.generator.class_count,
                self.discriminator.class_count,
                "generator vs discriminator",
            ));
        }
        if self.generator.frames != self.discriminator.frames {
            return Err(mismatch(
                "frames",
                self.generator.frames,
                self.discriminator.frames,
                "generator vs discriminator",
            ));
        }
        if self.generator.joints != topo.joint_count {
            return Err(mismatch(
                "joints",
                self.generator.joints,
                topo.joint_count,
                "generator vs skeleton",
            ));
        }
        if self.generator.dims != self.discriminator.dims {
            return Err(mismatch(
                "joint dimensions",
                self.generator.dims,
                self.discriminator.dims,
                "generator vs discriminator",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_toml() -> String {
        r#"
output_dir = "out"

[synth]
classes = ["wave", "walk"]
samples_per_class = 8
frames = 12
seed = 1
noise_std = 0.01

[gp]
frames = 12
channels = 6
length_scale_min = 2.0
length_scale_max = 12.0

[generator]
latent_channels = 6
persons = 1
frames = 12
joints = 5
dims = 3
representation = "joint_positions"
class_count = 2
dim = 16
heads = 2
layers = 1
mlp_ratio = 2
positional = "learned"
shared_latent = true

[discriminator]
persons = 1
frames = 12
joints = 5
dims = 3
class_count = 2
stage_channels = [8, 12]
stage_coarsen = [true, true]
temporal_kernel = 4
temporal_stride = 2
spatial_subsets = 2
leaky_slope = 0.2

[training]
iterations = 10
batch_size = 4
critic_steps = 2
learning_rate = 0.0002
beta1 = 0.0
beta2 = 0.999
penalty_weight = 10.0
divergence_limit = 1000000.0
seed = 0

[recognizer]
epochs = 4
batch_size = 8
learning_rate = 0.05
momentum = 0.9
seed = 0

[evaluation]
samples_per_class = 4
batch_size = 4
seed = 0
"#
        .to_string()
    }

    #[test]
    fn parses_and_hashes() {
        let text = valid_toml();
        let (cfg, hash) = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.output_dir, "out");
        assert_eq!(cfg.generator.class_count, 2);
        assert_eq!(hash.len(), 64);
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
        // hash covers the text, not the parsed value
        let (_, hash2) = RunConfig::from_toml_str(&(text.clone() + "\n# note\n")).unwrap();
        assert_ne!(hash, hash2);
        // same text, same hash
        assert_eq!(hash, RunConfig::from_toml_str(&text).unwrap().1);
    }

    #[test]
    fn optional_sections_take_defaults() {
        let text = valid_toml();
        // drop the [training] section entirely
        let stripped: String = {
            let start = text.find("[training]").unwrap();
            let end = text.find("[recognizer]").unwrap();
            format!("{}{}", &text[..start], &text[end..])
        };
        let (cfg, _) = RunConfig::from_toml_str(&stripped).unwrap();
        assert_eq!(cfg.training, TrainConfig::default());
    }

    #[test]
    fn cross_section_mismatches_are_rejected() {
        let base = valid_toml();
        for (from, to, needle) in [
            ("channels = 6", "channels = 7", "latent channels"),
            ("frames = 12\nchannels", "frames = 13\nchannels", "frames"),
            ("class_count = 2\ndim = 16", "class_count = 3\ndim = 16", "class count"),
            ("joints = 5\ndims = 3\nrepresentation", "joints = 6\ndims = 3\nrepresentation", "joints"),
        ] {
            let text = base.replacen(from, to, 1);
            assert_ne!(text, base, "edit {from:?} did not apply");
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            let msg = format!("{err}");
            assert!(
                msg.contains(needle),
                "expected {needle:?} in error, got: {msg}"
            );
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "bogus_key = 1\n".to_string() + &valid_toml();
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let (cfg, _) = RunConfig::from_toml_str(&valid_toml()).unwrap();
        let text = cfg.to_toml_string().unwrap();
        let (back, _) = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
