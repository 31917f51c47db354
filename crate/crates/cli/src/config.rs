use std::path::{Path, PathBuf};

use ramia_core::game_sim::SimConfig;
use ramia_core::pipeline::{ScorerConfig, TrimPolicy};
use ramia_core::range_engine::TrimBranch;
use ramia_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Run configuration. Either `simulator` or the `data` paths supply the inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulator: Option<SimConfig>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default = "default_trim")]
    pub trim: TrimPolicy,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub mia: MiaSettings,
    #[serde(default)]
    pub repeat: RepeatSettings,
}

fn default_trim() -> TrimPolicy {
    TrimPolicy::Sweep { branch: TrimBranch::Synthetic, step: 5.0 }
}

/// Input files for runs on externally produced data. Relative paths are
/// resolved against the config file's directory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub ranges: Option<PathBuf>,
    pub attack_sets: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub column_means: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub positional_fill: Option<PathBuf>,
    pub calibration_ranges: Option<PathBuf>,
    pub calibration_attack_sets: Option<PathBuf>,
    pub calibration_labels: Option<PathBuf>,
    pub ref_members: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub include_mode_imputed: bool,
    #[serde(default)]
    pub member_density: Option<f64>,
    /// Defaults to a value derived from the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// First id for freshly sampled records; defaults to one past the largest known id.
    #[serde(default)]
    pub id_base: Option<u64>,
}

fn default_n_samples() -> usize {
    20
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            n_samples: default_n_samples(),
            include_mode_imputed: false,
            member_density: None,
            seed: None,
            id_base: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_fpr_targets")]
    pub fpr_targets: Vec<f64>,
}

fn default_fpr_targets() -> Vec<f64> {
    vec![0.01, 0.001]
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { fpr_targets: default_fpr_targets() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiaSettings {
    /// Hamming distances of the point queries in simulator degradation runs.
    #[serde(default = "default_distances")]
    pub distances: Vec<usize>,
}

fn default_distances() -> Vec<usize> {
    vec![0, 1, 2, 4]
}

impl Default for MiaSettings {
    fn default() -> Self {
        Self { distances: default_distances() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatSettings {
    /// Sampler seeds; the simulated world stays fixed.
    #[serde(default = "default_repeat_seeds")]
    pub seeds: Vec<u64>,
}

fn default_repeat_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl Default for RepeatSettings {
    fn default() -> Self {
        Self { seeds: default_repeat_seeds() }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.resolve(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let check = |r: ramia_core::Result<()>| r.map_err(|e| e.to_string());
        if let Some(sim) = &self.simulator {
            check(sim.validate())?;
        }
        check(self.trim.validate())?;
        if self.sampler.n_samples == 0 {
            return Err("sampler.n_samples must be at least 1".into());
        }
        if let Some(d) = self.sampler.member_density {
            if !(0.0..=1.0).contains(&d) {
                return Err(format!("sampler.member_density {d} outside [0, 1]"));
            }
        }
        if self.eval.fpr_targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err("eval.fpr_targets must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.scorer.a) || !(self.scorer.gamma > 0.0) {
            return Err("scorer needs a in [0, 1] and gamma > 0".into());
        }
        Ok(())
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or_else(|| derive_seed(self.seed, 0x05A3_D1E5))
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..12].to_string()
    }
}

impl DataPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.candidates,
            &mut self.signals,
            &mut self.sidecar,
            &mut self.ranges,
            &mut self.attack_sets,
            &mut self.labels,
            &mut self.population,
            &mut self.column_means,
            &mut self.pools,
            &mut self.vocabulary,
            &mut self.positional_fill,
            &mut self.calibration_ranges,
            &mut self.calibration_attack_sets,
            &mut self.calibration_labels,
            &mut self.ref_members,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_hash() {
        let cfg: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.sampler.n_samples, 20);
        assert_eq!(cfg.eval.fpr_targets, vec![0.01, 0.001]);
        let mut other = cfg.clone();
        assert_eq!(cfg.hash(), other.hash());
        other.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 12);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"simulator": {"n_record": 4}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_config() {
        let mut paths = DataPaths { ranges: Some("r.json".into()), ..Default::default() };
        paths.resolve(Path::new("/x"));
        assert_eq!(paths.ranges.unwrap(), PathBuf::from("/x/r.json"));
    }
}
