//! The comparison studies: the source x target adaptation matrix, partial
//! versus full fine-tuning, all versus selected features, and convergence of
//! adapted versus from-scratch training.
//!
//! Every run is seeded from `ExperimentConfig::root_seed`; results carry the
//! root seed, a hash of the configuration and hashes of the checkpoints they
//! were computed from.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{adapt_model, AdaptMode};
use crate::error::{Error, Result};
use crate::features::{fit_forest, select_top_k, ForestConfig};
use crate::ingest::AlignedSeries;
use crate::labeling::{make_bins, split_chronological, window, BinSpec, WindowedDataset};
use crate::nn::{from_bytes, to_bytes, Architecture};
use crate::train::{epochs_to_saturation, evaluate, train_source, History, TrainConfig};
use crate::Model;

/// A named region's merged hourly data. Any domain can act as source or target.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub name: String,
    pub series: AlignedSeries,
}

impl DomainSpec {
    pub fn new(name: impl Into<String>, series: AlignedSeries) -> Self {
        DomainSpec {
            name: name.into(),
            series,
        }
    }
}

/// Network widths; window, feature and class counts come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub kernel: usize,
    pub c1: usize,
    pub c2: usize,
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let a = Architecture::new(1, 1, 2);
        ArchConfig {
            kernel: a.kernel,
            c1: a.c1,
            c2: a.c2,
            hidden: a.hidden,
        }
    }
}

impl ArchConfig {
    pub fn architecture(&self, window: usize, features: usize, classes: usize) -> Architecture {
        Architecture {
            window,
            features,
            kernel: self.kernel,
            c1: self.c1,
            c2: self.c2,
            hidden: self.hidden,
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_bins: usize,
    pub window: usize,
    /// Number of forest-selected features fed to the network.
    pub k: usize,
    pub train_frac: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    /// Explicit feature indices; when absent the top `k` by forest
    /// importance on the first (source) domain are used.
    pub features: Option<Vec<usize>>,
    pub root_seed: u64,
    pub n_seeds: usize,
    pub saturation_frac: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_bins: 6,
            window: 24,
            k: 6,
            train_frac: 0.8,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            features: None,
            root_seed: 0,
            n_seeds: 5,
            saturation_frac: 0.95,
        }
    }
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn bin_spec(&self) -> Result<BinSpec> {
        make_bins(self.n_bins)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Deterministic sub-seed for a labelled run under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn pct(acc: f64) -> f64 {
    100.0 * acc
}

/// Chronological train/test windows of one domain.
#[derive(Debug, Clone)]
pub struct PreparedDomain {
    pub name: String,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

pub fn prepare_domain(
    domain: &DomainSpec,
    feature_indices: &[usize],
    spec: &BinSpec,
    cfg: &ExperimentConfig,
) -> Result<PreparedDomain> {
    let ds = window(&domain.series.samples, cfg.window, feature_indices, spec, &domain.name)?;
    let (train, test) = split_chronological(&ds, cfg.train_frac)?;
    Ok(PreparedDomain {
        name: domain.name.clone(),
        train,
        test,
    })
}

/// Ranks a domain's features with a forest fit on the hourly samples of the
/// training fraction only. Returns the top `k`, importance-descending.
pub fn rank_features(
    domain: &DomainSpec,
    k: usize,
    spec: &BinSpec,
    cfg: &ExperimentConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let samples = &domain.series.samples;
    let n_train = ((cfg.train_frac * samples.len() as f64).floor() as usize).max(1);
    let x: Vec<Vec<f64>> = samples[..n_train].iter().map(|s| s.features.clone()).collect();
    let y = samples[..n_train]
        .iter()
        .map(|s| spec.assign_bin(s.capacity_factor))
        .collect::<Result<Vec<_>>>()?;
    let forest = fit_forest(&x, &y, spec.n_bins(), &cfg.forest)?;
    let top = select_top_k(&forest.importances, k)?;
    Ok((top, forest.importances))
}

/// The network's input columns: explicit or forest-selected, ascending.
pub fn resolve_features(
    source: &DomainSpec,
    spec: &BinSpec,
    cfg: &ExperimentConfig,
) -> Result<Vec<usize>> {
    let mut idx = match &cfg.features {
        Some(f) => f.clone(),
        None => rank_features(source, cfg.k, spec, cfg)?.0,
    };
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

fn check_shared_features(domains: &[&DomainSpec]) -> Result<()> {
    let names = &domains[0].series.feature_names;
    let mut seen = std::collections::HashSet::new();
    for d in domains {
        if !seen.insert(d.name.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate domain name {:?}", d.name)));
        }
        if &d.series.feature_names != names {
            return Err(Error::InvalidConfig(format!(
                "domain {:?} has a different feature set from {:?}",
                d.name, domains[0].name
            )));
        }
    }
    Ok(())
}

/// A trained source model as it crosses to the target side: only the
/// serialized checkpoint is carried over.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub domain: String,
    pub seed: u64,
    pub checkpoint: Vec<u8>,
    pub checkpoint_hash: String,
    pub history: History,
}

impl SourceModel {
    pub fn load(&self) -> Result<Model> {
        from_bytes(&self.checkpoint)
    }
}

pub fn train_source_model(
    source: &PreparedDomain,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SourceModel> {
    let arch = cfg.arch.architecture(
        cfg.window,
        source.train.n_features(),
        source.train.n_classes(),
    );
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (model, history) = train_source::<f64>(&source.train, &source.test, arch, &tcfg)?;
    let checkpoint = to_bytes(&model);
    Ok(SourceModel {
        domain: source.name.clone(),
        seed,
        checkpoint_hash: sha256_hex(&checkpoint),
        checkpoint,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub source: String,
    pub target: String,
    pub acc_without: f64,
    pub acc_with: f64,
    pub diff: f64,
    pub seed: u64,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub domains: Vec<String>,
    /// Off-diagonal cells in source-major order.
    pub cells: Vec<MatrixCell>,
    pub root_seed: u64,
    pub config_hash: String,
    pub feature_indices: Vec<usize>,
}

impl MatrixResult {
    pub fn get(&self, source: &str, target: &str) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.source == source && c.target == target)
    }

    /// One row per source; for each target the without / with / diff
    /// percentages, `N/A` on the diagonal.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["source".to_string()];
        for t in &self.domains {
            header.extend([format!("{t}_without"), format!("{t}_with"), format!("{t}_diff")]);
        }
        header.extend(["root_seed".into(), "config_hash".into()]);
        writeln!(w, "{}", header.join(","))?;
        for s in &self.domains {
            let mut row = vec![s.clone()];
            for t in &self.domains {
                match self.get(s, t) {
                    Some(c) => row.extend([
                        format!("{:.2}", c.acc_without),
                        format!("{:.2}", c.acc_with),
                        format!("{:.2}", c.diff),
                    ]),
                    None => row.extend(["N/A".to_string(), "N/A".into(), "N/A".into()]),
                }
            }
            row.extend([self.root_seed.to_string(), self.config_hash.clone()]);
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// For every ordered pair of distinct domains: train on the source train
/// split, evaluate the untouched model on the target test split, adapt the
/// head on the target train split and evaluate again.
pub fn run_matrix(domains: &[DomainSpec], cfg: &ExperimentConfig) -> Result<MatrixResult> {
    if domains.len() < 2 {
        return Err(Error::InvalidConfig("the matrix needs at least two domains".into()));
    }
    check_shared_features(&domains.iter().collect::<Vec<_>>())?;
    let spec = cfg.bin_spec()?;
    let features = resolve_features(&domains[0], &spec, cfg)?;
    let prepared = domains
        .iter()
        .map(|d| prepare_domain(d, &features, &spec, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for src in &prepared {
        let seed = derive_seed(cfg.root_seed, &format!("matrix/source/{}", src.name));
        let source = train_source_model(src, cfg, seed)?;
        for tgt in prepared.iter().filter(|t| t.name != src.name) {
            let without = evaluate(&source.load()?, &tgt.test)?.accuracy;
            let tcfg = TrainConfig {
                seed: derive_seed(cfg.root_seed, &format!("matrix/adapt/{}/{}", src.name, tgt.name)),
                ..cfg.train.clone()
            };
            let (adapted, _) =
                adapt_model(source.load()?, &tgt.train, &tgt.test, AdaptMode::Partial, &tcfg)?;
            let with = evaluate(&adapted, &tgt.test)?.accuracy;
            cells.push(MatrixCell {
                source: src.name.clone(),
                target: tgt.name.clone(),
                acc_without: pct(without),
                acc_with: pct(with),
                diff: pct(with) - pct(without),
                seed,
                checkpoint_hash: source.checkpoint_hash.clone(),
            });
        }
    }
    Ok(MatrixResult {
        domains: domains.iter().map(|d| d.name.clone()).collect(),
        cells,
        root_seed: cfg.root_seed,
        config_hash: cfg.hash(),
        feature_indices: features,
    })
}

/// Everything measured for one (source, target, seed) replicate.
#[derive(Debug, Clone)]
pub struct PairStudy {
    pub seed: u64,
    pub checkpoint_hash: String,
    pub source_history: History,
    /// Untouched source model on the target test split.
    pub acc_without: f64,
    pub partial: History,
    pub acc_partial: f64,
    pub full: History,
    pub acc_full: f64,
    pub scratch: History,
    pub acc_scratch: f64,
}

impl PairStudy {
    pub fn saturation(&self, frac: f64) -> (usize, usize) {
        (
            epochs_to_saturation(&self.partial, frac),
            epochs_to_saturation(&self.scratch, frac),
        )
    }
}

/// Runs selected by `which`: partial, full and from-scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRuns {
    pub partial: bool,
    pub full: bool,
    pub scratch: bool,
}

impl PairRuns {
    pub const ALL: PairRuns = PairRuns {
        partial: true,
        full: true,
        scratch: true,
    };
}

fn empty_history() -> History {
    History {
        initial_eval_acc: f64::NAN,
        records: Vec::new(),
        best_epoch: 0,
    }
}

/// One replicate: a source model, its zero-shot accuracy on the target, then
/// partial and full adaptation from the same checkpoint and a from-scratch
/// run on the target, all sharing the target splits and one training seed.
pub fn run_pair_study(
    source: &PreparedDomain,
    target: &PreparedDomain,
    cfg: &ExperimentConfig,
    seed: u64,
    runs: PairRuns,
) -> Result<PairStudy> {
    let src = train_source_model(source, cfg, derive_seed(seed, "source"))?;
    let acc_without = evaluate(&src.load()?, &target.test)?.accuracy;
    let tcfg = TrainConfig {
        seed: derive_seed(seed, "target"),
        ..cfg.train.clone()
    };
    let adapt_run = |mode| -> Result<(History, f64)> {
        let (m, h) = adapt_model(src.load()?, &target.train, &target.test, mode, &tcfg)?;
        Ok((h, evaluate(&m, &target.test)?.accuracy))
    };
    let (partial, acc_partial) = if runs.partial {
        adapt_run(AdaptMode::Partial)?
    } else {
        (empty_history(), f64::NAN)
    };
    let (full, acc_full) = if runs.full {
        adapt_run(AdaptMode::Full)?
    } else {
        (empty_history(), f64::NAN)
    };
    let (scratch, acc_scratch) = if runs.scratch {
        let arch = src.load()?.arch;
        let (m, h) = train_source::<f64>(&target.train, &target.test, arch, &tcfg)?;
        (h, evaluate(&m, &target.test)?.accuracy)
    } else {
        (empty_history(), f64::NAN)
    };
    Ok(PairStudy {
        seed,
        checkpoint_hash: src.checkpoint_hash,
        source_history: src.history,
        acc_without,
        partial,
        acc_partial,
        full,
        acc_full,
        scratch,
        acc_scratch,
    })
}

fn prepare_pair(
    source: &DomainSpec,
    target: &DomainSpec,
    cfg: &ExperimentConfig,
) -> Result<(PreparedDomain, PreparedDomain)> {
    check_shared_features(&[source, target])?;
    let spec = cfg.bin_spec()?;
    let features = resolve_features(source, &spec, cfg)?;
    Ok((
        prepare_domain(source, &features, &spec, cfg)?,
        prepare_domain(target, &features, &spec, cfg)?,
    ))
}

fn replicate_seeds(cfg: &ExperimentConfig, tag: &str) -> Vec<u64> {
    (0..cfg.n_seeds.max(1))
        .map(|r| derive_seed(cfg.root_seed, &format!("{tag}/{r}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialFullRow {
    pub seed: u64,
    pub acc_partial: f64,
    pub acc_full: f64,
    pub difference: f64,
    pub partial_seconds_per_epoch: f64,
    pub full_seconds_per_epoch: f64,
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialFullResult {
    pub source: String,
    pub target: String,
    pub rows: Vec<PartialFullRow>,
    pub acc_partial: f64,
    pub acc_full: f64,
    /// `acc_full - acc_partial`, in points.
    pub difference: f64,
    pub root_seed: u64,
    pub config_hash: String,
}

impl PartialFullResult {
    /// Accuracy columns first; timing columns last.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "source,target,seed,partial,full,difference,root_seed,config_hash,checkpoint_hash,partial_seconds_per_epoch,full_seconds_per_epoch"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.2},{:.2},{:.2},{},{},{},{:.4},{:.4}",
                self.source,
                self.target,
                r.seed,
                r.acc_partial,
                r.acc_full,
                r.difference,
                self.root_seed,
                self.config_hash,
                r.checkpoint_hash,
                r.partial_seconds_per_epoch,
                r.full_seconds_per_epoch
            )?;
        }
        writeln!(
            w,
            "{},{},mean,{:.2},{:.2},{:.2},{},{},,,",
            self.source, self.target, self.acc_partial, self.acc_full, self.difference, self.root_seed, self.config_hash
        )
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Feeds one pretrained checkpoint to both adaptation modes, over
/// `cfg.n_seeds` replicates.
pub fn run_partial_vs_full(
    source: &DomainSpec,
    target: &DomainSpec,
    cfg: &ExperimentConfig,
) -> Result<PartialFullResult> {
    let (src, tgt) = prepare_pair(source, target, cfg)?;
    let runs = PairRuns {
        scratch: false,
        ..PairRuns::ALL
    };
    let rows = replicate_seeds(cfg, &format!("partial_vs_full/{}/{}", source.name, target.name))
        .into_iter()
        .map(|seed| {
            let s = run_pair_study(&src, &tgt, cfg, seed, runs)?;
            Ok(PartialFullRow {
                seed,
                acc_partial: pct(s.acc_partial),
                acc_full: pct(s.acc_full),
                difference: pct(s.acc_full) - pct(s.acc_partial),
                partial_seconds_per_epoch: s.partial.seconds_per_epoch(),
                full_seconds_per_epoch: s.full.seconds_per_epoch(),
                checkpoint_hash: s.checkpoint_hash,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let acc_partial = mean(rows.iter().map(|r| r.acc_partial));
    let acc_full = mean(rows.iter().map(|r| r.acc_full));
    Ok(PartialFullResult {
        source: source.name.clone(),
        target: target.name.clone(),
        acc_partial,
        acc_full,
        difference: mean(rows.iter().map(|r| r.difference)),
        rows,
        root_seed: cfg.root_seed,
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAblation {
    pub domain: String,
    pub acc_all: f64,
    pub acc_selected: f64,
    /// `acc_all - acc_selected`, in points.
    pub difference: f64,
    /// Selected feature indices, importance-descending.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
    pub importances: Vec<f64>,
    pub seed: u64,
    pub root_seed: u64,
    pub config_hash: String,
}

impl FeatureAblation {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "domain,all,selected,difference,k,selected_features,seed,root_seed,config_hash")?;
        writeln!(
            w,
            "{},{:.2},{:.2},{:.2},{},{},{},{},{}",
            self.domain,
            self.acc_all,
            self.acc_selected,
            self.difference,
            self.selected.len(),
            self.selected_names.join(";"),
            self.seed,
            self.root_seed,
            self.config_hash
        )
    }
}

/// Trains on every feature and on the top `k` by forest importance, with the
/// same seed and the same chronological splits.
pub fn run_feature_ablation(
    domain: &DomainSpec,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<FeatureAblation> {
    let n = domain.series.n_features();
    if k > n {
        return Err(Error::KOutOfRange { k, n_features: n });
    }
    let spec = cfg.bin_spec()?;
    let (selected, importances) = rank_features(domain, k, &spec, cfg)?;
    let seed = derive_seed(cfg.root_seed, &format!("features/{}", domain.name));
    let accuracy = |features: &[usize]| -> Result<f64> {
        let mut features = features.to_vec();
        features.sort_unstable();
        let d = prepare_domain(domain, &features, &spec, cfg)?;
        Ok(train_source_model(&d, cfg, seed)?.history.best_eval_acc())
    };
    let all: Vec<usize> = (0..n).collect();
    let acc_all = pct(accuracy(&all)?);
    let acc_selected = pct(accuracy(&selected)?);
    Ok(FeatureAblation {
        domain: domain.name.clone(),
        acc_all,
        acc_selected,
        difference: acc_all - acc_selected,
        selected_names: selected
            .iter()
            .map(|&i| domain.series.feature_names[i].clone())
            .collect(),
        selected,
        importances,
        seed,
        root_seed: cfg.root_seed,
        config_hash: cfg.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub source: String,
    pub target: String,
    pub scratch: History,
    pub adapted: History,
    pub saturation_scratch: usize,
    pub saturation_adapted: usize,
    pub seed: u64,
    pub checkpoint_hash: String,
    pub root_seed: u64,
    pub config_hash: String,
}

impl ConvergenceResult {
    /// Paired curves by epoch (epoch 0 is the starting model). Cells past a
    /// run's final epoch are empty; timing columns come last.
    pub fn write_curves_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "epoch,scratch_loss,scratch_eval_acc,adapted_loss,adapted_eval_acc,scratch_seconds,adapted_seconds"
        )?;
        writeln!(
            w,
            "0,,{},,{},,",
            self.scratch.initial_eval_acc, self.adapted.initial_eval_acc
        )?;
        let n = self.scratch.records.len().max(self.adapted.records.len());
        for e in 0..n {
            let cells = |h: &History| match h.records.get(e) {
                Some(r) => (r.loss.to_string(), r.eval_acc.to_string(), format!("{:.6}", r.seconds)),
                None => (String::new(), String::new(), String::new()),
            };
            let (sl, sa, ss) = cells(&self.scratch);
            let (al, aa, as_) = cells(&self.adapted);
            writeln!(w, "{},{sl},{sa},{al},{aa},{ss},{as_}", e + 1)?;
        }
        Ok(())
    }
}

/// From-scratch training on the target versus partial adaptation of a
/// source model, on the same target splits and seed.
pub fn run_convergence_comparison(
    source: &DomainSpec,
    target: &DomainSpec,
    cfg: &ExperimentConfig,
) -> Result<ConvergenceResult> {
    let (src, tgt) = prepare_pair(source, target, cfg)?;
    let seed = derive_seed(cfg.root_seed, &format!("curves/{}/{}", source.name, target.name));
    let runs = PairRuns {
        full: false,
        ..PairRuns::ALL
    };
    let s = run_pair_study(&src, &tgt, cfg, seed, runs)?;
    Ok(ConvergenceResult {
        source: source.name.clone(),
        target: target.name.clone(),
        saturation_scratch: epochs_to_saturation(&s.scratch, cfg.saturation_frac),
        saturation_adapted: epochs_to_saturation(&s.partial, cfg.saturation_frac),
        scratch: s.scratch,
        adapted: s.partial,
        seed,
        checkpoint_hash: s.checkpoint_hash,
        root_seed: cfg.root_seed,
        config_hash: cfg.hash(),
    })
}

/// Replicates of the full pair study for a source/target pair.
pub fn run_pair_replicates(
    source: &DomainSpec,
    target: &DomainSpec,
    cfg: &ExperimentConfig,
) -> Result<Vec<PairStudy>> {
    let (src, tgt) = prepare_pair(source, target, cfg)?;
    replicate_seeds(cfg, &format!("pair/{}/{}", source.name, target.name))
        .into_iter()
        .map(|seed| run_pair_study(&src, &tgt, cfg, seed, PairRuns::ALL))
        .collect()
}

/// Reproducibility record written next to experiment outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub root_seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every checkpoint and output file, keyed by name.
    pub hashes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(root_seed: u64, config: &C) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        Manifest {
            root_seed,
            config_hash: sha256_hex(config.to_string().as_bytes()),
            config,
            ..Manifest::default()
        }
    }

    pub fn record_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_recomputation() {
        let c = MatrixCell {
            source: "DE".into(),
            target: "FR".into(),
            acc_without: 53.25,
            acc_with: 67.25,
            diff: 67.25 - 53.25,
            seed: 0,
            checkpoint_hash: String::new(),
        };
        assert!((c.diff - 14.00).abs() < 1e-9);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.k = 5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn matrix_csv_marks_diagonal() {
        let m = MatrixResult {
            domains: vec!["A".into(), "B".into()],
            cells: vec![
                MatrixCell {
                    source: "A".into(),
                    target: "B".into(),
                    acc_without: 50.0,
                    acc_with: 60.0,
                    diff: 10.0,
                    seed: 1,
                    checkpoint_hash: "h".into(),
                },
                MatrixCell {
                    source: "B".into(),
                    target: "A".into(),
                    acc_without: 40.0,
                    acc_with: 45.5,
                    diff: 5.5,
                    seed: 2,
                    checkpoint_hash: "g".into(),
                },
            ],
            root_seed: 3,
            config_hash: "c".into(),
            feature_indices: vec![0],
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "source,A_without,A_with,A_diff,B_without,B_with,B_diff,root_seed,config_hash");
        assert_eq!(lines[1], "A,N/A,N/A,N/A,50.00,60.00,10.00,3,c");
        assert_eq!(lines[2], "B,40.00,45.50,5.50,N/A,N/A,N/A,3,c");
    }
}
