//! Run configuration: one TOML document with `sim`, `data`, `arch`, `train`,
//! `bayes` and `eval` sections layered over a named preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchitectureConfig;
use crate::protocol::{NoiseRamp, TrainConfig};
use crate::simulator::{hex_sha256, SimConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 32×32 stamps, small network, compressed schedule.
    Desk,
    /// 64×64 stamps, reference network, full schedule.
    Faithful,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Faithful => "faithful",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "faithful" => Ok(Preset::Faithful),
            _ => Err(Error::Config(format!(
                "unknown preset '{s}' (expected desk or faithful)"
            ))),
        }
    }
}

/// Dataset sizes and the seed all simulated data derives from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Scenes per training set (one noiseless, one noisy).
    pub train_count: usize,
    /// Isolated and blended scenes per evaluation regime.
    pub eval_isolated: usize,
    pub eval_blended: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub mc_samples: usize,
    pub seed: u64,
    /// Stamps per prediction batch.
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub grid_step: f64,
    /// Proportion up to which the curves cover the isolated share of the
    /// mixed evaluation set.
    pub curve_split: f64,
    pub histogram_bins: usize,
    pub confidence_level: f64,
    /// Records drawn in the ellipticity scatter plots.
    pub scatter_points: usize,
    pub seed: u64,
}

/// Co-training runs that check whether learning mean and covariance
/// jointly from scratch diverges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Noisy isolated scenes in the probe's training set.
    pub train_count: usize,
    pub epochs: usize,
    pub seeds: usize,
    /// Runs that must diverge for the probe to pass.
    pub min_divergences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub sim: SimConfig,
    pub data: DataConfig,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub bayes: BayesConfig,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            sim: SimConfig::desk(),
            data: DataConfig {
                train_count: 8000,
                eval_isolated: 2000,
                eval_blended: 3000,
                seed: 2024,
            },
            arch: ArchitectureConfig::desk(),
            train: TrainConfig {
                stage1_epochs: 12,
                stage2_epochs: 5,
                batch_size: 64,
                stage1_lr: 1e-3,
                stage2_lr: 3e-4,
                ramp: NoiseRamp {
                    step_fraction: 0.25,
                    step_epochs: 1,
                    total_epochs: 4,
                },
                seed: 2024,
                ..TrainConfig::default()
            },
            bayes: BayesConfig {
                mc_samples: 50,
                seed: 2024,
                batch_size: 64,
            },
            eval: EvalConfig {
                grid_step: 0.01,
                curve_split: 0.4,
                histogram_bins: 40,
                confidence_level: 0.9,
                scatter_points: 120,
                seed: 2024,
            },
            probe: ProbeConfig {
                train_count: 2000,
                epochs: 10,
                seeds: 5,
                min_divergences: 3,
            },
        }
    }

    pub fn faithful() -> Self {
        let desk = Self::desk();
        Self {
            preset: Preset::Faithful,
            sim: SimConfig::default(),
            data: DataConfig {
                train_count: 50_000,
                ..desk.data
            },
            arch: ArchitectureConfig::reference(),
            train: TrainConfig {
                seed: 2024,
                ..TrainConfig::default()
            },
            ..desk
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Faithful => Self::faithful(),
        }
    }

    /// Parses a document whose keys override the preset it names
    /// (`preset = "desk"` when absent). Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("config: preset must be a string".into())),
        };
        let mut base = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user, "")?;
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn content_hash(&self) -> String {
        hex_sha256(self.to_toml().as_bytes())
    }

    /// Replaces every seed by `seed`; the modules derive independent streams
    /// from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.bayes.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.arch.stamp_size != self.sim.stamp_size {
            return Err(Error::Config(format!(
                "arch.stamp_size {} differs from sim.stamp_size {}",
                self.arch.stamp_size, self.sim.stamp_size
            )));
        }
        if self.data.train_count == 0 || self.data.eval_isolated == 0 || self.data.eval_blended == 0
        {
            return Err(Error::Config("data: counts must be positive".into()));
        }
        if self.bayes.mc_samples < 2 {
            return Err(Error::Config(format!(
                "bayes.mc_samples = {}: decomposition requires K >= 2",
                self.bayes.mc_samples
            )));
        }
        if self.bayes.batch_size == 0 {
            return Err(Error::Config("bayes.batch_size must be at least 1".into()));
        }
        let e = &self.eval;
        if !(e.grid_step > 0.0 && e.grid_step <= 1.0)
            || !(e.curve_split > 0.0 && e.curve_split <= 1.0)
        {
            return Err(Error::Config(
                "eval: grid_step and curve_split must be in (0, 1]".into(),
            ));
        }
        if self.probe.train_count == 0
            || self.probe.epochs == 0
            || self.probe.min_divergences > self.probe.seeds
        {
            return Err(Error::Config(
                "probe: need positive counts and min_divergences <= seeds".into(),
            ));
        }
        if !(e.confidence_level > 0.0 && e.confidence_level < 1.0) || e.histogram_bins == 0 {
            return Err(Error::Config(
                "eval: need confidence_level in (0, 1) and histogram_bins >= 1".into(),
            ));
        }
        // TOML integers are signed 64-bit.
        for (name, s) in [
            ("data", self.data.seed),
            ("train", self.train.seed),
            ("bayes", self.bayes.seed),
            ("eval", self.eval.seed),
        ] {
            if s > i64::MAX as u64 {
                return Err(Error::Config(format!("{name}.seed must be below 2^63")));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, user: toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &path)?,
            (Some(toml::Value::Table(_)), _) => {
                return Err(Error::Config(format!("config: {path} must be a table")))
            }
            (Some(slot), v) => *slot = v,
            (None, _) => return Err(Error::Config(format!("config: unknown key '{path}'"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [RunConfig::desk(), RunConfig::faithful()] {
            p.validate().unwrap();
            let back = RunConfig::from_toml_str(&p.to_toml()).unwrap();
            assert_eq!(back, p);
            assert_eq!(back.content_hash(), p.content_hash());
        }
        assert_ne!(
            RunConfig::desk().content_hash(),
            RunConfig::faithful().content_hash()
        );
    }

    #[test]
    fn overrides_layer_over_preset() {
        let c = RunConfig::from_toml_str("[train]\nbatch_size = 16\n[bayes]\nmc_samples = 10\n")
            .unwrap();
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.bayes.mc_samples, 10);
        assert_eq!(c.sim, SimConfig::desk());
        let f = RunConfig::from_toml_str("preset = \"faithful\"\n").unwrap();
        assert_eq!(f, RunConfig::faithful());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        for bad in [
            "[train]\nbatchsize = 3\n",
            "[nonsense]\nx = 1\n",
            "colour = 1\n",
            "[bayes]\nmc_samples = 1\n",
            "preset = \"huge\"\n",
            "[sim]\nstamp_size = 48\n",
            "train = 3\n",
        ] {
            let e = RunConfig::from_toml_str(bad).unwrap_err();
            assert_eq!(e.category(), "config", "{bad}: {e}");
        }
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let c = RunConfig::desk().with_seed(77);
        assert_eq!(
            (c.data.seed, c.train.seed, c.bayes.seed, c.eval.seed),
            (77, 77, 77, 77)
        );
        assert_ne!(c.content_hash(), RunConfig::desk().content_hash());
    }
}
