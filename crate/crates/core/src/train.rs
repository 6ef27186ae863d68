//! Supervised training loop, evaluation and convergence measures.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::WindowedDataset;
use crate::nn::{
    adam_step, softmax_cross_entropy, AdamState, Architecture, FreezeMask, Gradients, Mode,
    ModelParams, Tensor,
};
use crate::scalar::Scalar;

/// Windows per forward pass when only inference is needed.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` drop in mean training loss before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.min_delta > 0.0) {
            return Err(Error::InvalidConfig("min_delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Eval accuracy of the starting model, before any update ("epoch 0").
    pub initial_eval_acc: f64,
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

impl History {
    pub fn eval_accs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eval_acc).collect()
    }

    pub fn best_eval_acc(&self) -> f64 {
        self.records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .map_or(self.initial_eval_acc, |r| r.eval_acc)
    }

    /// Mean wall-clock seconds per epoch.
    pub fn seconds_per_epoch(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.seconds).sum::<f64>() / self.records.len() as f64
    }

    /// CSV with columns `epoch,loss,train_acc,eval_acc,seconds`. Timing is
    /// confined to the last column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,train_acc,eval_acc,seconds")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{:.6}",
                r.epoch, r.loss, r.train_acc, r.eval_acc, r.seconds
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }
}

/// Smallest epoch (from 1) whose eval accuracy reaches `frac` of the best
/// eval accuracy in the history. Returns 0 for an empty history.
pub fn epochs_to_saturation(h: &History, frac: f64) -> usize {
    debug_assert!(frac > 0.0 && frac <= 1.0);
    let best = h
        .records
        .iter()
        .map(|r| r.eval_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    h.records
        .iter()
        .find(|r| r.eval_acc >= frac * best)
        .map_or(0, |r| r.epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn write_confusion_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.confusion.len();
        let header: Vec<String> = (0..n).map(|j| format!("pred_{j}")).collect();
        writeln!(w, "true,{}", header.join(","))?;
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Ensures the model can consume the dataset's windows and labels.
pub fn check_arch(arch: &Architecture, ds: &WindowedDataset) -> Result<()> {
    let mut problems = Vec::new();
    if arch.window != ds.window_len() {
        problems.push(format!("window {} vs data {}", arch.window, ds.window_len()));
    }
    if arch.features != ds.n_features() {
        problems.push(format!("features {} vs data {}", arch.features, ds.n_features()));
    }
    if arch.classes != ds.n_classes() {
        problems.push(format!("classes {} vs data {}", arch.classes, ds.n_classes()));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::ArchMismatch(problems.join(", ")))
    }
}

/// Stacks the given windows into a `B x W x F` tensor.
pub fn batch_tensor<T: Scalar>(ds: &WindowedDataset, idx: &[usize]) -> Tensor<T> {
    let (w, f) = (ds.window_len(), ds.n_features());
    let mut data = Vec::with_capacity(idx.len() * w * f);
    for &i in idx {
        data.extend(ds.x(i).iter().map(|&v| T::of(v)));
    }
    Tensor::from_vec(&[idx.len(), w, f], data).expect("window size is fixed")
}

fn gather_rows<T: Scalar>(feats: &[T], width: usize, idx: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        data.extend_from_slice(&feats[i * width..(i + 1) * width]);
    }
    Tensor::from_vec(&[idx.len(), width], data).expect("row width is fixed")
}

/// Eval-mode trunk output for every window, row-major `|ds| x (C2 * W')`.
fn trunk_features<T: Scalar>(model: &ModelParams<T>, ds: &WindowedDataset) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(ds.len() * model.arch.flat_len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        out.extend(model.features(&batch_tensor(ds, chunk))?.into_data());
    }
    Ok(out)
}

fn tally(logits: &Tensor<f64>, labels: &[usize], confusion: &mut [Vec<usize>]) -> usize {
    let n = confusion.len();
    let mut correct = 0;
    for (row, &y) in logits.data().chunks(n).zip(labels) {
        let p = argmax(row);
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    correct
}

fn finish(correct: usize, total: usize, confusion: Vec<Vec<usize>>) -> Evaluation {
    Evaluation {
        accuracy: correct as f64 / total as f64,
        confusion,
    }
}

fn to_f64<T: Scalar>(t: Tensor<T>) -> Tensor<f64> {
    let shape = t.shape().to_vec();
    Tensor::from_vec(&shape, t.into_data().into_iter().map(|v| v.as_f64()).collect())
        .expect("same shape")
}

/// Accuracy (argmax of eval-mode logits) and the `N x N` confusion matrix.
pub fn evaluate<T: Scalar>(model: &ModelParams<T>, ds: &WindowedDataset) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    check_arch(&model.arch, ds)?;
    let n = model.arch.classes;
    let mut confusion = vec![vec![0; n]; n];
    let mut correct = 0;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let logits = to_f64(model.logits(&batch_tensor(ds, chunk))?);
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
        correct += tally(&logits, &labels, &mut confusion);
    }
    Ok(finish(correct, ds.len(), confusion))
}

fn evaluate_head<T: Scalar>(
    model: &ModelParams<T>,
    feats: &[T],
    ds: &WindowedDataset,
) -> Result<Evaluation> {
    let n = model.arch.classes;
    let width = model.arch.flat_len();
    let mut confusion = vec![vec![0; n]; n];
    let mut correct = 0;
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (logits, _) = model.head_forward(&gather_rows(feats, width, chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.label(i)).collect();
        correct += tally(&to_f64(logits), &labels, &mut confusion);
    }
    Ok(finish(correct, ds.len(), confusion))
}

/// Trunk activations cached for a frozen trunk.
struct FrozenTrunk<T> {
    train: Vec<T>,
    eval: Vec<T>,
}

/// Trains `model` under `mask`, returning the weights of the epoch with the
/// best eval accuracy (earliest on ties) and the per-epoch history.
///
/// When the trunk is frozen (no conv/BN parameter trainable and BN
/// statistics fixed) its activations are computed once and only the dense
/// head is run per batch; the updates are identical to the full path.
pub fn fit<T: Scalar>(
    mut model: ModelParams<T>,
    train: &WindowedDataset,
    eval: &WindowedDataset,
    cfg: &TrainConfig,
    mask: &FreezeMask,
) -> Result<(ModelParams<T>, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset"));
    }
    check_arch(&model.arch, train)?;
    check_arch(&model.arch, eval)?;

    let frozen = if mask.trunk_frozen() {
        Some(FrozenTrunk {
            train: trunk_features(&model, train)?,
            eval: trunk_features(&model, eval)?,
        })
    } else {
        None
    };
    let evaluate_now = |m: &ModelParams<T>| match &frozen {
        Some(f) => evaluate_head(m, &f.eval, eval),
        None => evaluate(m, eval),
    };

    let mode = if mask.bn_stats_frozen { Mode::Eval } else { Mode::Train };
    let window = model.arch.window;
    let width = model.arch.flat_len();
    let mut state = AdamState::new(&model, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let initial_eval_acc = evaluate_now(&model)?.accuracy;
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            // a single value per channel has no batch variance to normalize by
            if mode == Mode::Train && batch.len() * window < 2 {
                continue;
            }
            let labels: Vec<usize> = batch.iter().map(|&i| train.label(i)).collect();
            let (logits, loss, grads) = match &frozen {
                Some(f) => {
                    let (logits, cache) = model.head_forward(&gather_rows(&f.train, width, batch))?;
                    let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
                    let mut grads = Gradients::zeros(&model.arch);
                    model.head_backward(&cache, &grad, &mut grads)?;
                    (logits, loss, grads)
                }
                None => {
                    let x = batch_tensor(train, batch);
                    let (logits, cache) = model.forward_cached(&x, mode)?;
                    let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
                    (logits, loss, model.backward(&cache, &grad)?)
                }
            };
            loss_sum += loss.as_f64() * batch.len() as f64;
            seen += batch.len();
            correct += logits
                .data()
                .chunks(model.arch.classes)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            adam_step(&mut model, &grads, &mut state, mask);
        }
        if seen == 0 {
            return Err(Error::BatchTooSmall(train.len()));
        }
        let loss = loss_sum / seen as f64;
        if !loss.is_finite() {
            return Err(Error::NumericalDivergence("training loss"));
        }
        let eval_acc = evaluate_now(&model)?.accuracy;
        records.push(EpochRecord {
            epoch,
            loss,
            train_acc: correct as f64 / seen as f64,
            eval_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(acc, _, _)| eval_acc > *acc) {
            best = Some((eval_acc, epoch, model.clone()));
        }
        if loss < best_loss - cfg.min_delta {
            best_loss = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        History {
            initial_eval_acc,
            records,
            best_epoch,
        },
    ))
}

/// Trains a freshly initialized network (seeded by `cfg.seed`) with every
/// parameter group trainable.
pub fn train_source<T: Scalar>(
    train: &WindowedDataset,
    eval: &WindowedDataset,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, History)> {
    let model = ModelParams::init(arch, cfg.seed)?;
    fit(model, train, eval, cfg, &FreezeMask::all_trainable())
}
