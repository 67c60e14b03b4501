//! Run configuration: a single TOML file with full validation.
//!
//! The file has two sections. `[run]` drives extraction, training, and
//! evaluation; `[simulate]` drives dataset generation. Unknown keys are
//! rejected everywhere. The file's content hash is stored in trained
//! model bundles so a model can be traced back to its configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::Modality;
use crate::eval::{EvalSettings, OverallScheme, Protocol};
use crate::features::{FeatureSchema, PerModality};
use crate::forest::ForestParams;
use crate::pipeline::WindowParams;
use crate::simulate::{SimConfig, SimError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    run: Option<RunSection>,
    simulate: Option<SimConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default = "default_protocol")]
    protocol: Protocol,
    #[serde(default = "default_window")]
    window_s: f64,
    #[serde(default = "default_hop")]
    hop_s: f64,
    #[serde(default = "default_repeats")]
    repeats: usize,
    #[serde(default = "default_seed")]
    master_seed: u64,
    #[serde(default = "default_fusion")]
    fusion: bool,
    #[serde(default = "default_scheme")]
    overall_scheme: OverallScheme,
    #[serde(default = "default_fraction")]
    holdout_train_fraction: f64,
    forest: Option<PerModality<ForestParams>>,
    features: Option<PerModality<FeatureSchema>>,
    #[serde(default)]
    paths: Paths,
}

fn default_protocol() -> Protocol {
    Protocol::Loso
}
fn default_window() -> f64 {
    8.0
}
fn default_hop() -> f64 {
    4.0
}
fn default_repeats() -> usize {
    10
}
fn default_seed() -> u64 {
    42
}
fn default_fusion() -> bool {
    true
}
fn default_scheme() -> OverallScheme {
    OverallScheme::Weighted
}
fn default_fraction() -> f64 {
    0.8
}

/// Default input/output locations; command-line arguments override them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Resolved `[run]` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub window: WindowParams,
    pub eval: EvalSettings,
    pub schemas: PerModality<FeatureSchema>,
    pub paths: Paths,
}

/// A parsed and validated configuration file.
#[derive(Debug)]
pub struct LoadedConfig {
    pub run: Option<RunConfig>,
    pub simulate: Option<SimConfig>,
    /// Truncated SHA-256 of the raw file bytes.
    pub hash: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("window parameters invalid: window_s = {window_s}, hop_s = {hop_s} (need window_s > 0, 0 < hop_s <= window_s)")]
    BadWindow { window_s: f64, hop_s: f64 },
    #[error("repeats must be at least 1")]
    BadRepeats,
    #[error("holdout_train_fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("forest parameter {name} for {modality} must be positive")]
    BadForestParam {
        modality: Modality,
        name: &'static str,
    },
    #[error("no feature schema: provide [run.features.<modality>] or a [simulate] section to derive channels from")]
    MissingFeatureSchema,
    #[error("config has no [run] section, which this command requires")]
    MissingRunSection,
    #[error("config has no [simulate] section, which this command requires")]
    MissingSimulateSection,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Truncated SHA-256 of raw bytes; stable across platforms.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let hash = content_hash(&bytes);
    let text = String::from_utf8_lossy(&bytes);
    let file: ConfigFile = toml::from_str(&text).map_err(|source| ConfigError::Toml {
        path: path.to_path_buf(),
        source: Box::new(source),
    })?;

    let mut warnings = Vec::new();
    if let Some(sim) = &file.simulate {
        sim.validate()?;
    }

    let run = match file.run {
        None => None,
        Some(section) => {
            if !(section.window_s > 0.0
                && section.hop_s > 0.0
                && section.hop_s <= section.window_s
                && section.window_s.is_finite())
            {
                return Err(ConfigError::BadWindow {
                    window_s: section.window_s,
                    hop_s: section.hop_s,
                });
            }
            if section.repeats == 0 {
                return Err(ConfigError::BadRepeats);
            }
            if !(section.holdout_train_fraction > 0.0 && section.holdout_train_fraction < 1.0) {
                return Err(ConfigError::BadFraction(section.holdout_train_fraction));
            }

            let forest_params = section
                .forest
                .unwrap_or_else(|| PerModality::splat(ForestParams::default()));
            for (modality, p) in forest_params.iter() {
                for (name, value) in [
                    ("n_trees", p.n_trees),
                    ("max_depth", p.max_depth),
                    ("min_samples_leaf", p.min_samples_leaf),
                    ("mtry", p.mtry.unwrap_or(1)),
                ] {
                    if value == 0 {
                        return Err(ConfigError::BadForestParam { modality, name });
                    }
                }
            }
            let counts: Vec<usize> =
                forest_params.iter().map(|(_, p)| p.n_trees).collect();
            if counts.windows(2).any(|w| w[0] != w[1]) {
                warnings.push(format!(
                    "per-modality tree counts differ ({} / {} / {}): pooled fusion will \
                     weigh modalities by tree count and no longer match the \
                     confidence-sum rule",
                    counts[0], counts[1], counts[2]
                ));
            }

            let schemas = match section.features {
                Some(schemas) => schemas,
                None => match &file.simulate {
                    Some(sim) => sim
                        .emissions
                        .map(|_, em| FeatureSchema::with_default_stats(em.channel_names())),
                    None => return Err(ConfigError::MissingFeatureSchema),
                },
            };
            if let Some(sim) = &file.simulate {
                for (m, schema) in schemas.iter() {
                    let sim_channels = sim.emissions.get(m).channel_names();
                    if schema.channels != sim_channels {
                        warnings.push(format!(
                            "feature channels for {m} differ from the simulator's \
                             emission channels"
                        ));
                    }
                }
            }

            Some(RunConfig {
                window: WindowParams {
                    window_s: section.window_s,
                    hop_s: section.hop_s,
                },
                eval: EvalSettings {
                    protocol: section.protocol,
                    repeats: section.repeats,
                    master_seed: section.master_seed,
                    forest_params,
                    fusion: section.fusion,
                    overall: section.overall_scheme,
                    holdout_train_fraction: section.holdout_train_fraction,
                },
                schemas,
                paths: section.paths,
            })
        }
    };

    Ok(LoadedConfig {
        run,
        simulate: file.simulate,
        hash,
        warnings,
    })
}
