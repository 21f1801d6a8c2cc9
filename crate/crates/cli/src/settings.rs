use std::path::Path;

use anyhow::Context;
use llsh_core::{QueryConfig, SynthConfig, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::Profile;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSettings {
    pub code_len: usize,
    pub num_tables: usize,
    pub normalize_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSettings {
    pub knn_k: usize,
    pub kmeans_k: usize,
    pub kmeans_iterations: usize,
}

/// Every tunable of the pipeline. Resolved as profile defaults, then the `--config`
/// file, then command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub profile: Profile,
    pub seed: u64,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub variant: Variant,
    pub query: QueryConfig,
    pub baseline: BaselineSettings,
    pub synth: SynthConfig,
}

impl Settings {
    pub fn for_profile(profile: Profile) -> Self {
        let (code_len, train) = match profile {
            Profile::Desk => (16, TrainConfig::desk()),
            Profile::Paper => (32, TrainConfig::default()),
        };
        Self {
            profile,
            seed: 0,
            encoder: EncoderSettings {
                code_len,
                num_tables: 8,
                normalize_input: true,
            },
            train,
            variant: Variant::Full,
            query: QueryConfig::default(),
            baseline: BaselineSettings {
                knn_k: 5,
                kmeans_k: 32,
                kmeans_iterations: 300,
            },
            synth: SynthConfig::default(),
        }
    }

    pub fn resolve(profile: Option<Profile>, config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
                if !value.is_object() {
                    return Err(UsageError(format!("config {}: expected a JSON object", path.display())).into());
                }
                Some(value)
            }
            None => None,
        };
        let file_profile = file
            .as_ref()
            .and_then(|v| v.get("profile"))
            .map(|p| serde_json::from_value::<Profile>(p.clone()))
            .transpose()
            .map_err(|e| UsageError(format!("config profile: {e}")))?;
        let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut merged = serde_json::to_value(Self::for_profile(profile)).expect("settings serialize");
        if let Some(file) = file {
            merge(&mut merged, file);
        }
        merged["profile"] = serde_json::to_value(profile).expect("profile serializes");
        let mut settings: Settings = serde_json::from_value(merged)
            .map_err(|e| UsageError(format!("config {}: {e}", config.unwrap().display())))?;
        if let Some(seed) = seed {
            settings.seed = seed;
        }
        settings.train.seed = settings.seed;
        settings.synth.seed = settings.seed;
        Ok(settings)
    }
}

/// Overlays `patch` onto `base`, recursing into objects; other values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
