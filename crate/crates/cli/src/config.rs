use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use windadapt::experiments::{ArchConfig, ExperimentConfig};
use windadapt::features::ForestConfig;
use windadapt::ingest::{ImputePolicy, SynthConfig};
use windadapt::train::TrainConfig;

/// Where a domain's hourly samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSource {
    Files {
        generation: PathBuf,
        weather: PathBuf,
        /// Generation column; defaults to the domain name.
        #[serde(default)]
        country: Option<String>,
    },
    Synth {
        synth: SynthConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domains: BTreeMap<String, DomainSource>,
    /// Domain whose data ranks the features; defaults to the first by name.
    pub source: Option<String>,
    pub n_bins: usize,
    pub window: usize,
    pub k: usize,
    pub train_frac: f64,
    pub impute: ImputePolicy,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub seed: u64,
    pub n_seeds: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            domains: BTreeMap::new(),
            source: None,
            n_bins: e.n_bins,
            window: e.window,
            k: e.k,
            train_frac: e.train_frac,
            impute: ImputePolicy::default(),
            arch: e.arch,
            train: e.train,
            forest: e.forest,
            seed: 0,
            n_seeds: e.n_seeds,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for src in cfg.domains.values_mut() {
            if let DomainSource::Files {
                generation, weather, ..
            } = src
            {
                *generation = base.join(&*generation);
                *weather = base.join(&*weather);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.window == 0 || self.k == 0 {
            bail!("window and k must be positive");
        }
        if let Some(s) = &self.source {
            if !self.domains.contains_key(s) {
                bail!("source domain {s:?} is not defined in the config");
            }
        }
        Ok(())
    }

    pub fn source_name(&self) -> Result<String> {
        match &self.source {
            Some(s) => Ok(s.clone()),
            None => self
                .domains
                .keys()
                .next()
                .cloned()
                .context("the config defines no domains"),
        }
    }

    pub fn domain(&self, name: &str) -> Result<&DomainSource> {
        self.domains.get(name).with_context(|| {
            let known: Vec<&str> = self.domains.keys().map(String::as_str).collect();
            format!("unknown domain {name:?} (config defines {known:?})")
        })
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            n_bins: self.n_bins,
            window: self.window,
            k: self.k,
            train_frac: self.train_frac,
            arch: self.arch,
            train: self.train.clone(),
            forest: self.forest.clone(),
            features: None,
            root_seed: self.seed,
            n_seeds: self.n_seeds,
            saturation_frac: 0.95,
        }
    }
}

/// Applies `key=value` overrides to a synthetic-domain config.
pub fn apply_synth_overrides(cfg: &mut SynthConfig, pairs: &[String]) -> Result<()> {
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .with_context(|| format!("--synth expects key=value, got {pair:?}"))?;
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .with_context(|| format!("--synth {key}: {value:?} is not a number"))
        };
        let int = || -> Result<u64> {
            value
                .parse::<u64>()
                .with_context(|| format!("--synth {key}: {value:?} is not a non-negative integer"))
        };
        match key {
            "n_hours" | "hours" => cfg.n_hours = int()? as usize,
            "n_features" | "features" => cfg.n_features = int()? as usize,
            "shift" => cfg.shift = num()?,
            "noise_sd" | "noise" => cfg.noise_sd = num()?,
            "cut_in" => cfg.power_curve.cut_in = num()?,
            "rated" => cfg.power_curve.rated = num()?,
            "seed" => cfg.seed = int()?,
            other => bail!(
                "unknown --synth key {other:?} (expected n_hours, n_features, shift, noise_sd, cut_in, rated or seed)"
            ),
        }
    }
    cfg.validate()?;
    Ok(())
}
