mod config;

use std::cell::RefCell;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use windadapt::adapt::{adapt_with_mask, make_freeze_mask, AdaptMode};
use windadapt::experiments::{
    derive_seed, prepare_domain, run_convergence_comparison, run_feature_ablation, run_matrix,
    run_partial_vs_full, sha256_hex, DomainSpec, Manifest,
};
use windadapt::features::{correlation_matrix, write_correlation_csv, write_importances_csv};
use windadapt::ingest::{
    merge_hourly, parse_generation_csv, parse_weather_csv, read_aligned_csv, synth_domain,
    write_aligned_csv, write_generation_csv, write_weather_csv, AlignedSeries, SynthConfig,
};
use windadapt::labeling::{histogram, make_bins, write_histogram_csv};
use windadapt::nn::{load_checkpoint, save_checkpoint};
use windadapt::train::{evaluate, train_source, History};
use windadapt::{Error, Model};

use crate::config::{apply_synth_overrides, DomainSource, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "windadapt", version, about = "Domain-adaptive wind power classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of capacity-factor classes.
    #[arg(long, global = true, value_name = "N")]
    bins: Option<usize>,
    /// Window length in hours.
    #[arg(long, global = true, value_name = "W")]
    window: Option<usize>,
    /// Number of selected features.
    #[arg(long, global = true, value_name = "K")]
    k: Option<usize>,
    /// Synthetic-domain overrides, e.g. `--synth shift=1.0 seed=7`.
    #[arg(long, global = true, num_args = 1.., value_name = "KEY=VALUE")]
    synth: Vec<String>,
    /// Append every input file the command opens to this file.
    #[arg(long, global = true, value_name = "PATH")]
    audit: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge generation and weather data into hourly samples.
    Prepare {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Rank features with a random forest and write the selection.
    Features {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Train a model on a source domain.
    Train {
        #[arg(long)]
        domain: Option<String>,
    },
    /// Fine-tune a checkpoint on a target domain.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value = "partial", value_name = "partial|full")]
        mode: AdaptMode,
        /// Let batch-norm running statistics update in partial mode.
        #[arg(long)]
        update_bn_stats: bool,
    },
    /// Accuracy and confusion matrix of a checkpoint on a domain's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: String,
    },
    /// Adaptation matrix over every ordered pair of domains.
    Matrix,
    /// Partial-vs-full or all-vs-selected-features comparison.
    Ablate {
        #[command(subcommand)]
        which: Ablation,
    },
    /// Paired convergence curves: from scratch versus adapted.
    Curves {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
    },
    /// Write a synthetic domain as generation and weather CSVs.
    Synth {
        #[arg(long, default_value = "synth")]
        name: String,
    },
}

#[derive(Subcommand, Debug)]
enum Ablation {
    Network {
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
    },
    Features {
        #[arg(long)]
        domain: Option<String>,
    },
}

struct Ctx {
    cfg: RunConfig,
    synth: Vec<String>,
    opened: RefCell<Vec<PathBuf>>,
}

impl Ctx {
    fn opening(&self, path: &Path) -> PathBuf {
        self.opened.borrow_mut().push(path.to_path_buf());
        path.to_path_buf()
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.cfg.out.join(sub);
        fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
        Ok(d)
    }

    fn aligned_path(&self, name: &str) -> PathBuf {
        self.cfg.out.join("data").join(format!("{name}.aligned.csv"))
    }

    fn synth_config(&self, base: Option<&SynthConfig>) -> Result<SynthConfig> {
        let mut s = base.cloned().unwrap_or_default();
        apply_synth_overrides(&mut s, &self.synth)?;
        Ok(s)
    }

    /// Builds a domain's samples from its raw source (files or generator).
    fn build(&self, name: &str) -> Result<AlignedSeries> {
        let src = match self.cfg.domains.get(name) {
            Some(s) => s.clone(),
            None if !self.synth.is_empty() => DomainSource::Synth {
                synth: SynthConfig::default(),
            },
            None => {
                self.cfg.domain(name)?;
                unreachable!()
            }
        };
        match src {
            DomainSource::Files {
                generation,
                weather,
                country,
            } => {
                let country = country.unwrap_or_else(|| name.to_string());
                let gen = parse_generation_csv(&self.opening(&generation), &country)?;
                let wx = parse_weather_csv(&self.opening(&weather))?;
                for notice in &wx.notices {
                    eprintln!("note: {notice}");
                }
                Ok(merge_hourly(&gen, &wx, self.cfg.impute)?)
            }
            DomainSource::Synth { synth } => Ok(synth_domain(&self.synth_config(Some(&synth))?)?),
        }
    }

    /// The prepared samples of a domain, preparing them first if needed.
    fn aligned(&self, name: &str) -> Result<AlignedSeries> {
        let path = self.aligned_path(name);
        if path.exists() {
            return Ok(read_aligned_csv(&self.opening(&path))?);
        }
        self.prepare(name)
    }

    fn prepare(&self, name: &str) -> Result<AlignedSeries> {
        let series = self.build(name)?;
        self.dir("data")?;
        let path = self.aligned_path(name);
        write_aligned_csv(&path, &series)?;
        let spec = make_bins(self.cfg.n_bins)?;
        let counts = histogram(&series.samples, &spec)?;
        write_histogram_csv(&self.cfg.out.join("data").join(format!("{name}.histogram.csv")), &spec, &counts)?;
        let summary = serde_json::json!({
            "domain": name,
            "rows": series.samples.len(),
            "dropped": series.dropped,
            "features": series.feature_names,
        });
        write_text(
            &self.cfg.out.join("data").join(format!("{name}.prepare.json")),
            &(serde_json::to_string_pretty(&summary)? + "\n"),
        )?;
        println!(
            "{name}: {} rows ({} dropped) -> {}",
            series.samples.len(),
            series.dropped,
            path.display()
        );
        Ok(series)
    }

    fn domain_spec(&self, name: &str) -> Result<DomainSpec> {
        Ok(DomainSpec::new(name, self.aligned(name)?))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn selected_path(ctx: &Ctx, name: &str) -> PathBuf {
    ctx.cfg.out.join("features").join(format!("{name}.selected.txt"))
}

fn cmd_features(ctx: &Ctx, name: &str) -> Result<Vec<String>> {
    let domain = ctx.domain_spec(name)?;
    let exp = ctx.cfg.experiment();
    let spec = make_bins(exp.n_bins)?;
    let (top, importances) =
        windadapt::experiments::rank_features(&domain, exp.k, &spec, &exp)?;
    let names = &domain.series.feature_names;
    let selected: Vec<String> = top.iter().map(|&i| names[i].clone()).collect();
    let dir = ctx.dir("features")?;
    write_importances_csv(&dir.join(format!("{name}.importances.csv")), names, &importances)?;
    write_text(&selected_path(ctx, name), &(selected.join("\n") + "\n"))?;
    let corr = correlation_matrix(&domain.series, &top)?;
    write_correlation_csv(&dir.join(format!("{name}.correlation.csv")), &selected, &corr)?;
    println!("{name}: selected {}", selected.join(", "));
    Ok(selected)
}

fn read_lines(ctx: &Ctx, path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(ctx.opening(path))
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn indices_of(series: &AlignedSeries, names: &[String], what: &Path) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            series.feature_index(n).ok_or_else(|| {
                Error::ArchMismatch(format!("feature {n:?} listed in {} is absent from the data", what.display()))
                    .into()
            })
        })
        .collect()
}

fn features_sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("features.txt")
}

fn save_history(h: &History, path: &Path) -> Result<()> {
    Ok(h.save_csv(path)?)
}

fn cmd_train(ctx: &Ctx, name: &str) -> Result<()> {
    let series = ctx.aligned(name)?;
    let sel = selected_path(ctx, name);
    let selected = if sel.exists() {
        read_lines(ctx, &sel)?
    } else {
        cmd_features(ctx, name)?
    };
    let mut idx = indices_of(&series, &selected, &sel)?;
    idx.sort_unstable();
    let exp = ctx.cfg.experiment();
    let spec = make_bins(exp.n_bins)?;
    let domain = DomainSpec::new(name, series);
    let d = prepare_domain(&domain, &idx, &spec, &exp)?;
    let arch = exp.arch.architecture(exp.window, idx.len(), spec.n_bins());
    let seed = derive_seed(exp.root_seed, &format!("train/{name}"));
    let tcfg = windadapt::train::TrainConfig {
        seed,
        ..exp.train.clone()
    };
    let (model, history) = train_source::<f64>(&d.train, &d.test, arch, &tcfg)?;

    let dir = ctx.dir("models")?;
    let ckpt = dir.join(format!("{name}.wadp"));
    save_checkpoint(&model, &ckpt)?;
    let names: Vec<&str> = idx.iter().map(|&i| domain.series.feature_names[i].as_str()).collect();
    write_text(&features_sidecar(&ckpt), &(names.join("\n") + "\n"))?;
    let hist = dir.join(format!("{name}.history.csv"));
    save_history(&history, &hist)?;

    let mut manifest = Manifest::new(exp.root_seed, &ctx.cfg);
    manifest.seeds.insert(format!("train/{name}"), seed);
    manifest.record_file("checkpoint", &ckpt)?;
    manifest.write(&dir.join(format!("{name}.manifest.json")))?;
    println!(
        "{name}: best eval accuracy {:.4} at epoch {} of {} -> {}",
        history.best_eval_acc(),
        history.best_epoch,
        history.records.len(),
        ckpt.display()
    );
    Ok(())
}

/// Loads a checkpoint and the target windows in the checkpoint's feature
/// order. Only the checkpoint, its feature list and the target data are read.
fn checkpoint_and_target(
    ctx: &Ctx,
    checkpoint: &Path,
    target: &str,
) -> Result<(Model, windadapt::experiments::PreparedDomain)> {
    let model: Model = load_checkpoint(&ctx.opening(checkpoint))?;
    let sidecar = features_sidecar(checkpoint);
    let names = read_lines(ctx, &sidecar)?;
    let series = ctx.aligned(target)?;
    let idx = indices_of(&series, &names, &sidecar)?;
    let mut exp = ctx.cfg.experiment();
    exp.window = model.arch.window;
    let spec = make_bins(ctx.cfg.n_bins)?;
    let d = prepare_domain(&DomainSpec::new(target, series), &idx, &spec, &exp)?;
    windadapt::train::check_arch(&model.arch, &d.train)?;
    Ok((model, d))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_adapt(ctx: &Ctx, checkpoint: &Path, target: &str, mode: AdaptMode, update_bn: bool) -> Result<()> {
    let (model, d) = checkpoint_and_target(ctx, checkpoint, target)?;
    let mut mask = make_freeze_mask(mode, &model.arch);
    if update_bn {
        mask.bn_stats_frozen = false;
    }
    let seed = derive_seed(ctx.cfg.seed, &format!("adapt/{target}/{mode}"));
    let tcfg = windadapt::train::TrainConfig {
        seed,
        ..ctx.cfg.train.clone()
    };
    let before = evaluate(&model, &d.test)?.accuracy;
    let (adapted, history) = adapt_with_mask(model, &d.train, &d.test, &mask, &tcfg)?;
    let after = evaluate(&adapted, &d.test)?.accuracy;

    let dir = ctx.dir("models")?;
    let out = dir.join(format!("{}.{target}.{mode}.wadp", stem(checkpoint)));
    save_checkpoint(&adapted, &out)?;
    fs::copy(features_sidecar(checkpoint), features_sidecar(&out))
        .context("cannot copy the feature list")?;
    save_history(&history, &out.with_extension("history.csv"))?;
    let mut manifest = Manifest::new(ctx.cfg.seed, &ctx.cfg);
    manifest.seeds.insert(format!("adapt/{target}/{mode}"), seed);
    manifest.record_file("pretrained", checkpoint)?;
    manifest.record_file("adapted", &out)?;
    manifest.write(&out.with_extension("manifest.json"))?;
    println!(
        "{target} ({mode}): accuracy {:.4} -> {:.4} -> {}",
        before,
        after,
        out.display()
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx, checkpoint: &Path, domain: &str) -> Result<()> {
    let (model, d) = checkpoint_and_target(ctx, checkpoint, domain)?;
    let e = evaluate(&model, &d.test)?;
    let dir = ctx.dir("eval")?;
    let base = format!("{}.{domain}", stem(checkpoint));
    write_with(&dir.join(format!("{base}.confusion.csv")), |w| e.write_confusion_csv(w))?;
    write_text(
        &dir.join(format!("{base}.accuracy.txt")),
        &format!("{}\n", e.accuracy),
    )?;
    println!("{domain}: accuracy {:.4} on {} test windows", e.accuracy, d.test.len());
    Ok(())
}

fn results_manifest(ctx: &Ctx, name: &str, files: &[&Path]) -> Result<()> {
    let dir = ctx.dir("results")?;
    let mut m = Manifest::new(ctx.cfg.seed, &ctx.cfg);
    for f in files {
        m.record_file(&f.file_name().unwrap().to_string_lossy(), f)?;
    }
    m.write(&dir.join(format!("{name}.manifest.json")))?;
    Ok(())
}

fn cmd_matrix(ctx: &Ctx) -> Result<()> {
    let source = ctx.cfg.source_name()?;
    let mut names: Vec<String> = vec![source.clone()];
    names.extend(ctx.cfg.domains.keys().filter(|n| **n != source).cloned());
    let domains = names.iter().map(|n| ctx.domain_spec(n)).collect::<Result<Vec<_>>>()?;
    let result = run_matrix(&domains, &ctx.cfg.experiment())?;
    let path = ctx.dir("results")?.join("matrix.csv");
    write_with(&path, |w| result.write_csv(w))?;
    let cells = ctx.cfg.out.join("results").join("matrix_cells.json");
    write_text(&cells, &(serde_json::to_string_pretty(&result.cells)? + "\n"))?;
    results_manifest(ctx, "matrix", &[&path, &cells])?;
    for c in &result.cells {
        println!(
            "{} -> {}: without {:.2}  with {:.2}  diff {:+.2}",
            c.source, c.target, c.acc_without, c.acc_with, c.diff
        );
    }
    Ok(())
}

fn cmd_ablate_network(ctx: &Ctx, source: &str, target: &str) -> Result<()> {
    let r = run_partial_vs_full(&ctx.domain_spec(source)?, &ctx.domain_spec(target)?, &ctx.cfg.experiment())?;
    let path = ctx.dir("results")?.join(format!("partial_vs_full.{source}.{target}.csv"));
    write_with(&path, |w| r.write_csv(w))?;
    results_manifest(ctx, &format!("partial_vs_full.{source}.{target}"), &[])?;
    println!(
        "{source} -> {target}: partial {:.2}  full {:.2}  difference {:+.2}",
        r.acc_partial, r.acc_full, r.difference
    );
    Ok(())
}

fn cmd_ablate_features(ctx: &Ctx, domain: &str) -> Result<()> {
    let r = run_feature_ablation(&ctx.domain_spec(domain)?, ctx.cfg.k, &ctx.cfg.experiment())?;
    let path = ctx.dir("results")?.join(format!("feature_ablation.{domain}.csv"));
    write_with(&path, |w| r.write_csv(w))?;
    results_manifest(ctx, &format!("feature_ablation.{domain}"), &[&path])?;
    println!(
        "{domain}: all {:.2}  selected {:.2}  difference {:+.2}",
        r.acc_all, r.acc_selected, r.difference
    );
    Ok(())
}

fn cmd_curves(ctx: &Ctx, source: &str, target: &str) -> Result<()> {
    let r = run_convergence_comparison(
        &ctx.domain_spec(source)?,
        &ctx.domain_spec(target)?,
        &ctx.cfg.experiment(),
    )?;
    let dir = ctx.dir("results")?;
    let curves = dir.join(format!("curves.{source}.{target}.csv"));
    write_with(&curves, |w| r.write_curves_csv(w))?;
    let summary = dir.join(format!("curves.{source}.{target}.summary.csv"));
    write_text(
        &summary,
        &format!(
            "run,epochs_to_saturation,best_eval_acc,root_seed,config_hash,checkpoint_hash\nscratch,{},{},{},{},\nadapted,{},{},{},{},{}\n",
            r.saturation_scratch,
            r.scratch.best_eval_acc(),
            r.root_seed,
            r.config_hash,
            r.saturation_adapted,
            r.adapted.best_eval_acc(),
            r.root_seed,
            r.config_hash,
            r.checkpoint_hash
        ),
    )?;
    results_manifest(ctx, &format!("curves.{source}.{target}"), &[&summary])?;
    println!(
        "{source} -> {target}: epochs to saturation scratch {} adapted {}",
        r.saturation_scratch, r.saturation_adapted
    );
    Ok(())
}

fn cmd_synth(ctx: &Ctx, name: &str) -> Result<()> {
    let base = match ctx.cfg.domains.get(name) {
        Some(DomainSource::Synth { synth }) => Some(synth.clone()),
        Some(DomainSource::Files { .. }) => bail!("domain {name:?} is file-backed, not synthetic"),
        None => None,
    };
    let cfg = ctx.synth_config(base.as_ref())?;
    let series = synth_domain(&cfg)?;
    let dir = ctx.dir("synth")?;
    let gen = dir.join(format!("{name}_generation.csv"));
    let wx = dir.join(format!("{name}_weather.csv"));
    write_generation_csv(&gen, name, &series)?;
    write_weather_csv(&wx, &series)?;
    let digest = sha256_hex(&fs::read(&gen)?);
    println!("{name}: {} hours -> {} ({digest})", series.samples.len(), dir.display());
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(b) = cli.bins {
        cfg.n_bins = b;
    }
    if let Some(w) = cli.window {
        cfg.window = w;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_domain(ctx: &Ctx, d: &Option<String>) -> Result<String> {
    match d {
        Some(d) => Ok(d.clone()),
        None if ctx.cfg.domains.is_empty() && !ctx.synth.is_empty() => Ok("synth".into()),
        None => ctx.cfg.source_name(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ctx = Ctx {
        cfg,
        synth: cli.synth.clone(),
        opened: RefCell::new(Vec::new()),
    };
    if let Some(p) = &cli.config {
        ctx.opening(p);
    }
    let result = match &cli.command {
        Command::Prepare { domain } => ctx.prepare(&default_domain(&ctx, domain)?).map(|_| ()),
        Command::Features { domain } => cmd_features(&ctx, &default_domain(&ctx, domain)?).map(|_| ()),
        Command::Train { domain } => cmd_train(&ctx, &default_domain(&ctx, domain)?),
        Command::Adapt {
            checkpoint,
            domain,
            mode,
            update_bn_stats,
        } => cmd_adapt(&ctx, checkpoint, domain, *mode, *update_bn_stats),
        Command::Eval { checkpoint, domain } => cmd_eval(&ctx, checkpoint, domain),
        Command::Matrix => cmd_matrix(&ctx),
        Command::Ablate {
            which: Ablation::Network { source, target },
        } => cmd_ablate_network(&ctx, source, target),
        Command::Ablate {
            which: Ablation::Features { domain },
        } => cmd_ablate_features(&ctx, &default_domain(&ctx, domain)?),
        Command::Curves { source, target } => cmd_curves(&ctx, source, target),
        Command::Synth { name } => cmd_synth(&ctx, name),
    };
    if let Some(audit) = &cli.audit {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(audit)
            .with_context(|| format!("cannot open audit log {}", audit.display()))?;
        for p in ctx.opened.borrow().iter() {
            writeln!(f, "{}", p.display())?;
        }
    }
    result
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let diverged = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::NumericalDivergence(_))));
    if diverged {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
