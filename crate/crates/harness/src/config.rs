//! Run configuration: every knob of a training run, serialised as TOML next
//! to the run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use segweight_core::dataio::{SplitPolicy, SplitSizes};
use segweight_core::metareweight::{Hyper, Mode};
use segweight_core::noisegen::{Importance, NoiseSpec};
use segweight_core::segnet::NetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, IoContext, Result};

/// Where the images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Directory written by `gen` (or any `images/` + `masks/` + manifest
    /// layout); `None` generates the synthetic corpus in memory.
    pub dir: Option<PathBuf>,
    /// Synthetic corpus size.
    pub size: usize,
    /// Synthetic corpus seed.
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { dir: None, size: 240, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// K, the clean pool size.
    pub clean: usize,
    /// M, the noisy pool size.
    pub noisy: usize,
    pub validation: usize,
    pub test: usize,
    pub policy: SplitPolicy,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { clean: 24, noisy: 176, validation: 20, test: 20, policy: SplitPolicy::Disjoint, seed: 0 }
    }
}

impl SplitConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes { clean: self.clean, noisy: self.noisy, validation: self.validation, test: self.test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    /// `7-vertex`, `3-vertex`, `axis-aligned`, `maximal` or `maximal:<band>`.
    pub noise: String,
    pub importance: Importance,
    pub net: NetConfig,
    pub hyper: Hyper,
    /// Weight-map raster dumps every this many iterations (0 = off).
    pub snapshot_every: usize,
    /// Checkpoint and resumable state every this many iterations (0 = end only).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Reweight,
            out_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            noise: String::from("3-vertex"),
            importance: Importance::AngleLength,
            net: NetConfig::default(),
            hyper: desk_hyper(),
            snapshot_every: 0,
            checkpoint_every: 500,
        }
    }
}

/// Optimiser settings used at the 24×24 desk scale: the core defaults
/// with both step sizes raised to 1e-3.
pub fn desk_hyper() -> Hyper {
    Hyper { alpha: 1e-3, eta: 1e-3, ..Hyper::default() }
}

impl RunConfig {
    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let spec = NoiseSpec::parse(&self.noise, self.net.image_side)
            .ok_or_else(|| HarnessError::contract(format!("unknown noise kind {:?}", self.noise)))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Sets the network, sampler and split seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.net.seed = seed;
        self.hyper.seed = seed;
        self.split.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.hyper.validate()?;
        self.noise_spec()?;
        if self.mode.needs_clean() && self.split.clean == 0 {
            return Err(HarnessError::contract(format!("mode {} needs a clean pool (K >= 1)", self.mode.name())));
        }
        if self.corpus.dir.is_none() && self.corpus.size == 0 {
            return Err(HarnessError::contract("synthetic corpus size must be >= 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::contract(format!("cannot serialise config: {e}")))
    }

    /// Parses a possibly partial file; absent keys take [`RunConfig::default`] values.
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let over: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut base = toml::Table::try_from(RunConfig::default()).map_err(|e| e.to_string())?;
        merge(&mut base, over);
        base.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::from_toml(&text).map_err(|e| HarnessError::format(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).at(path)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
