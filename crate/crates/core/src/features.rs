//! Random-forest feature ranking (Gini importance) and Pearson correlation.

use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AlignedSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means `ceil(sqrt(F))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn split_width(&self, n_features: usize) -> Result<usize> {
        let m = self
            .features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize);
        if m == 0 || m > n_features {
            return Err(Error::InvalidConfig(format!(
                "features_per_split {m} outside [1, {n_features}]"
            )));
        }
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        /// Parent Gini minus the size-weighted Gini of the children.
        impurity_decrease: f64,
        n_samples: usize,
    },
    Leaf {
        class_counts: Vec<usize>,
    },
}

impl TreeNode {
    /// Majority class of the leaf reached by `row` (ties to the lowest class).
    pub fn predict(&self, row: &[f64]) -> usize {
        match self {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
            TreeNode::Leaf { class_counts } => argmax_first(class_counts),
        }
    }

    pub fn n_splits(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.n_splits() + right.n_splits(),
            TreeNode::Leaf { .. } => 0,
        }
    }

    fn accumulate_importance(&self, out: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            left,
            right,
            impurity_decrease,
            n_samples,
            ..
        } = self
        {
            out[*feature] += *n_samples as f64 * impurity_decrease;
            left.accumulate_importance(out);
            right.accumulate_importance(out);
        }
    }
}

fn argmax_first(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Gini impurity `1 - sum p_c^2`.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Column-major training view.
struct Columns<'a> {
    cols: Vec<Vec<f64>>,
    y: &'a [usize],
    n_classes: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Number of samples going left after sorting by the feature.
    n_left: usize,
}

struct Builder<'a, 'c, R> {
    data: &'c Columns<'a>,
    cfg: &'c ForestConfig,
    split_width: usize,
    rng: &'c mut R,
}

impl<R: Rng> Builder<'_, '_, R> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.data.n_classes];
        for &i in idx {
            counts[self.data.y[i]] += 1;
        }
        counts
    }

    fn best_split(&mut self, idx: &[usize], parent_counts: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let nf = self.data.cols.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let parent = gini(parent_counts);
        let parent_sumsq: f64 = parent_counts.iter().map(|&c| (c * c) as f64).sum();

        let mut feats = index::sample(self.rng, nf, self.split_width).into_vec();
        feats.sort_unstable();

        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for f in feats {
            let col = &self.data.cols[f];
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], self.data.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0usize; self.data.n_classes];
            let mut right = parent_counts.to_vec();
            let (mut sq_l, mut sq_r) = (0.0f64, parent_sumsq);
            for k in 0..n - 1 {
                let c = pairs[k].1;
                sq_l += (2 * left[c] + 1) as f64;
                sq_r -= (2 * right[c] - 1) as f64;
                left[c] += 1;
                right[c] -= 1;
                let nl = k + 1;
                let nr = n - nl;
                if pairs[k].0 == pairs[k + 1].0 || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (nlf, nrf) = (nl as f64, nr as f64);
                let g_l = 1.0 - sq_l / (nlf * nlf);
                let g_r = 1.0 - sq_r / (nrf * nrf);
                let gain = parent - (nlf * g_l + nrf * g_r) / n as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                        gain,
                        n_left: nl,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return TreeNode::Leaf {
                class_counts: counts,
            };
        }
        let Some(split) = self.best_split(&idx, &counts) else {
            return TreeNode::Leaf {
                class_counts: counts,
            };
        };
        let col = &self.data.cols[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| col[i] <= split.threshold);
        debug_assert_eq!(l.len(), split.n_left);
        let n_samples = idx.len();
        drop(idx);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
            impurity_decrease: split.gain,
            n_samples,
        }
    }
}

fn to_columns<'a>(x: &[Vec<f64>], y: &'a [usize], n_classes: usize) -> Result<Columns<'a>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("no training samples"));
    }
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} labels",
            x.len(),
            y.len()
        )));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }
    let nf = x[0].len();
    if nf == 0 || x.iter().any(|r| r.len() != nf) {
        return Err(Error::ShapeMismatch("ragged or empty feature rows".into()));
    }
    let cols = (0..nf).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    Ok(Columns { cols, y, n_classes })
}

/// Grows one CART classification tree on all rows of `x`.
pub fn build_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    cfg: &ForestConfig,
    rng: &mut R,
) -> Result<TreeNode> {
    let data = to_columns(x, y, n_classes)?;
    let split_width = cfg.split_width(data.cols.len())?;
    let mut b = Builder {
        data: &data,
        cfg,
        split_width,
        rng,
    };
    Ok(b.grow((0..x.len()).collect(), 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub importances: Vec<f64>,
    pub config: ForestConfig,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Fits `n_trees` trees, each on its own bootstrap resample and RNG stream.
/// Importances are per-tree normalized mean impurity decreases, averaged over
/// trees and renormalized to sum to one.
pub fn fit_forest(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ForestConfig) -> Result<Forest> {
    let data = to_columns(x, y, n_classes)?;
    let nf = data.cols.len();
    let split_width = cfg.split_width(nf)?;
    let n = x.len();

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut per_tree = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = tree_rng(cfg.seed, t);
        let idx: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut b = Builder {
            data: &data,
            cfg,
            split_width,
            rng: &mut rng,
        };
        let tree = b.grow(idx, 0);
        let mut imp = vec![0.0; nf];
        tree.accumulate_importance(&mut imp);
        per_tree.push(imp);
        trees.push(tree);
    }

    let mut importances = vec![0.0; nf];
    for imp in &per_tree {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for (acc, v) in importances.iter_mut().zip(imp) {
                *acc += v / total;
            }
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Forest {
        trees,
        importances,
        config: cfg.clone(),
    })
}

impl Forest {
    /// Majority vote over trees; ties to the lowest class.
    pub fn predict(&self, row: &[f64], n_classes: usize) -> usize {
        let mut votes = vec![0; n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        argmax_first(&votes)
    }
}

/// Indices of the `k` largest importances, descending; ties to the lower index.
pub fn select_top_k(importances: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > importances.len() {
        return Err(Error::KOutOfRange {
            k,
            n_features: importances.len(),
        });
    }
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Pearson correlation of the selected features, accumulated in one pass
/// with running co-moments.
pub fn correlation_matrix(series: &AlignedSeries, feature_indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    if series.samples.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two samples"));
    }
    let k = feature_indices.len();
    let mut mean = vec![0.0; k];
    let mut comoment = vec![vec![0.0; k]; k];
    let mut delta = vec![0.0; k];
    for (n, s) in series.samples.iter().enumerate() {
        let n = (n + 1) as f64;
        for (a, &f) in feature_indices.iter().enumerate() {
            delta[a] = s.features[f] - mean[a];
            mean[a] += delta[a] / n;
        }
        for a in 0..k {
            let after_a = s.features[feature_indices[a]] - mean[a];
            for b in a..k {
                comoment[a][b] += delta[b] * after_a;
            }
        }
    }
    for (a, &f) in feature_indices.iter().enumerate() {
        if comoment[a][a] <= 0.0 {
            return Err(Error::DegenerateFeature(series.feature_names[f].clone()));
        }
    }
    let mut corr = vec![vec![0.0; k]; k];
    for a in 0..k {
        corr[a][a] = 1.0;
        for b in a + 1..k {
            let r = (comoment[a][b] / (comoment[a][a] * comoment[b][b]).sqrt()).clamp(-1.0, 1.0);
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    Ok(corr)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// `feature,importance` rows, importance-descending.
pub fn write_importances_csv(path: &Path, names: &[String], importances: &[f64]) -> Result<()> {
    let mut out = String::from("feature,importance\n");
    for i in select_top_k(importances, importances.len())? {
        out.push_str(&format!("{},{}\n", names[i], importances[i]));
    }
    write_text(path, &out)
}

pub fn write_correlation_csv(path: &Path, names: &[String], corr: &[Vec<f64>]) -> Result<()> {
    let mut out = format!("feature,{}\n", names.join(","));
    for (name, row) in names.iter().zip(corr) {
        out.push_str(name);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}
