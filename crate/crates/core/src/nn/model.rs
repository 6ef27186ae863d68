//! The Conv-BN-ReLU-Conv-BN-ReLU-FC-ReLU-FC classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    batchnorm_backward, batchnorm_normalize, conv1d_backward, conv1d_forward, dense_backward,
    dense_forward, relu, relu_backward, update_running_stats, BnCache, BnParams, Mode,
};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    /// Window length `W` (hours).
    pub window: usize,
    /// Input feature channels `F`.
    pub features: usize,
    /// Convolution kernel size `K` (odd; same padding, stride 1).
    pub kernel: usize,
    pub c1: usize,
    pub c2: usize,
    /// Hidden width of the first fully connected layer.
    pub hidden: usize,
    /// Output classes `N`.
    pub classes: usize,
}

impl Architecture {
    /// Default widths: K = 3, C1 = 32, C2 = 64, H = 128.
    pub fn new(window: usize, features: usize, classes: usize) -> Self {
        Architecture {
            window,
            features,
            kernel: 3,
            c1: 32,
            c2: 64,
            hidden: 128,
            classes,
        }
    }

    /// Temporal length after the convolutions (unchanged under same padding).
    pub fn conv_len(&self) -> usize {
        self.window
    }

    pub fn flat_len(&self) -> usize {
        self.c2 * self.conv_len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.window,
            self.features,
            self.kernel,
            self.c1,
            self.c2,
            self.hidden,
            self.classes,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("zero dimension in {self:?}")));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("kernel size {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Element count of every learnable group, in [`ParamGroup::ALL`] order.
    pub fn group_len(&self, g: ParamGroup) -> usize {
        use ParamGroup::*;
        match g {
            Conv1W => self.c1 * self.features * self.kernel,
            Conv1B | Bn1Gamma | Bn1Beta => self.c1,
            Conv2W => self.c2 * self.c1 * self.kernel,
            Conv2B | Bn2Gamma | Bn2Beta => self.c2,
            Fc1W => self.hidden * self.flat_len(),
            Fc1B => self.hidden,
            Fc2W => self.classes * self.hidden,
            Fc2B => self.classes,
        }
    }
}

/// Learnable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Conv1W,
    Conv1B,
    Bn1Gamma,
    Bn1Beta,
    Conv2W,
    Conv2B,
    Bn2Gamma,
    Bn2Beta,
    Fc1W,
    Fc1B,
    Fc2W,
    Fc2B,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 12] = [
        ParamGroup::Conv1W,
        ParamGroup::Conv1B,
        ParamGroup::Bn1Gamma,
        ParamGroup::Bn1Beta,
        ParamGroup::Conv2W,
        ParamGroup::Conv2B,
        ParamGroup::Bn2Gamma,
        ParamGroup::Bn2Beta,
        ParamGroup::Fc1W,
        ParamGroup::Fc1B,
        ParamGroup::Fc2W,
        ParamGroup::Fc2B,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        use ParamGroup::*;
        match self {
            Conv1W => "conv1_w",
            Conv1B => "conv1_b",
            Bn1Gamma => "bn1.gamma",
            Bn1Beta => "bn1.beta",
            Conv2W => "conv2_w",
            Conv2B => "conv2_b",
            Bn2Gamma => "bn2.gamma",
            Bn2Beta => "bn2.beta",
            Fc1W => "fc1_w",
            Fc1B => "fc1_b",
            Fc2W => "fc2_w",
            Fc2B => "fc2_b",
        }
    }

    pub fn is_head(self) -> bool {
        matches!(
            self,
            ParamGroup::Fc1W | ParamGroup::Fc1B | ParamGroup::Fc2W | ParamGroup::Fc2B
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub conv1_w: Tensor<T>,
    pub conv1_b: Vec<T>,
    pub bn1: BnParams<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Vec<T>,
    pub bn2: BnParams<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Vec<T>,
}

/// One gradient buffer per [`ParamGroup`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    groups: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Gradients {
            groups: ParamGroup::ALL
                .iter()
                .map(|&g| vec![T::zero(); arch.group_len(g)])
                .collect(),
        }
    }

    pub fn get(&self, g: ParamGroup) -> &[T] {
        &self.groups[g.index()]
    }

    pub fn get_mut(&mut self, g: ParamGroup) -> &mut Vec<T> {
        &mut self.groups[g.index()]
    }
}

/// Intermediate activations of the convolutional trunk.
#[derive(Debug, Clone)]
pub struct TrunkCache<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    y1: Tensor<T>,
    a1: Tensor<T>,
    bn2: BnCache<T>,
    y2: Tensor<T>,
}

/// Intermediate activations of the dense head.
#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    feats: Tensor<T>,
    h_pre: Tensor<T>,
    h: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    trunk: TrunkCache<T>,
    head: HeadCache<T>,
}

fn he_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// `B x W x F` windows to channel-first `B x F x W`.
pub fn to_channel_first<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, w, f) = x.dims3("model input")?;
    let mut out = Tensor::zeros(&[b, f, w]);
    let (src, dst) = (x.data(), out.data_mut());
    for bi in 0..b {
        for t in 0..w {
            for c in 0..f {
                dst[(bi * f + c) * w + t] = src[(bi * w + t) * f + c];
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> ModelParams<T> {
    /// He-normal conv/FC weights (std `sqrt(2 / fan_in)`), zero biases,
    /// identity batch norm.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = arch.kernel;
        let conv1_w = he_normal(&mut rng, &[arch.c1, arch.features, k], arch.features * k);
        let conv2_w = he_normal(&mut rng, &[arch.c2, arch.c1, k], arch.c1 * k);
        let fc1_w = he_normal(&mut rng, &[arch.hidden, arch.flat_len()], arch.flat_len());
        let fc2_w = he_normal(&mut rng, &[arch.classes, arch.hidden], arch.hidden);
        Ok(ModelParams {
            arch,
            conv1_w,
            conv1_b: vec![T::zero(); arch.c1],
            bn1: BnParams::new(arch.c1),
            conv2_w,
            conv2_b: vec![T::zero(); arch.c2],
            bn2: BnParams::new(arch.c2),
            fc1_w,
            fc1_b: vec![T::zero(); arch.hidden],
            fc2_w,
            fc2_b: vec![T::zero(); arch.classes],
        })
    }

    pub fn group(&self, g: ParamGroup) -> &[T] {
        use ParamGroup::*;
        match g {
            Conv1W => self.conv1_w.data(),
            Conv1B => &self.conv1_b,
            Bn1Gamma => &self.bn1.gamma,
            Bn1Beta => &self.bn1.beta,
            Conv2W => self.conv2_w.data(),
            Conv2B => &self.conv2_b,
            Bn2Gamma => &self.bn2.gamma,
            Bn2Beta => &self.bn2.beta,
            Fc1W => self.fc1_w.data(),
            Fc1B => &self.fc1_b,
            Fc2W => self.fc2_w.data(),
            Fc2B => &self.fc2_b,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [T] {
        use ParamGroup::*;
        match g {
            Conv1W => self.conv1_w.data_mut(),
            Conv1B => &mut self.conv1_b,
            Bn1Gamma => &mut self.bn1.gamma,
            Bn1Beta => &mut self.bn1.beta,
            Conv2W => self.conv2_w.data_mut(),
            Conv2B => &mut self.conv2_b,
            Bn2Gamma => &mut self.bn2.gamma,
            Bn2Beta => &mut self.bn2.beta,
            Fc1W => self.fc1_w.data_mut(),
            Fc1B => &mut self.fc1_b,
            Fc2W => self.fc2_w.data_mut(),
            Fc2B => &mut self.fc2_b,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, w, f) = x.dims3("model input")?;
        if w != self.arch.window || f != self.arch.features {
            return Err(Error::ShapeMismatch(format!(
                "input windows are {w}x{f}, model expects {}x{}",
                self.arch.window, self.arch.features
            )));
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn trunk(
        &self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, TrunkCache<T>, [Option<(Vec<T>, Vec<T>)>; 2])> {
        self.check_input(x)?;
        let input = to_channel_first(x)?;
        let c1 = conv1d_forward(&input, &self.conv1_w, &self.conv1_b)?;
        let (y1, bn1, s1) = batchnorm_normalize(&c1, &self.bn1, mode)?;
        let a1 = relu(&y1);
        let c2 = conv1d_forward(&a1, &self.conv2_w, &self.conv2_b)?;
        let (y2, bn2, s2) = batchnorm_normalize(&c2, &self.bn2, mode)?;
        let b = x.shape()[0];
        let feats = relu(&y2).reshape(&[b, self.arch.flat_len()])?;
        Ok((
            feats,
            TrunkCache {
                input,
                bn1,
                y1,
                a1,
                bn2,
                y2,
            },
            [s1, s2],
        ))
    }

    /// Flattened trunk output in eval mode, `B x (C2 * W')`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.trunk(x, Mode::Eval)?.0)
    }

    pub fn head_forward(&self, feats: &Tensor<T>) -> Result<(Tensor<T>, HeadCache<T>)> {
        let h_pre = dense_forward(feats, &self.fc1_w, &self.fc1_b)?;
        let h = relu(&h_pre);
        let logits = dense_forward(&h, &self.fc2_w, &self.fc2_b)?;
        if !logits.all_finite() {
            return Err(Error::NumericalDivergence("logits"));
        }
        Ok((
            logits,
            HeadCache {
                feats: feats.clone(),
                h_pre,
                h,
            },
        ))
    }

    /// Head gradients written into `grads`; returns the gradient with respect
    /// to the trunk features.
    pub fn head_backward(
        &self,
        cache: &HeadCache<T>,
        grad_logits: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let (gh, gw2, gb2) = dense_backward(&cache.h, &self.fc2_w, grad_logits)?;
        let gh_pre = relu_backward(&cache.h_pre, &gh);
        let (gfeats, gw1, gb1) = dense_backward(&cache.feats, &self.fc1_w, &gh_pre)?;
        *grads.get_mut(ParamGroup::Fc2W) = gw2.into_data();
        *grads.get_mut(ParamGroup::Fc2B) = gb2;
        *grads.get_mut(ParamGroup::Fc1W) = gw1.into_data();
        *grads.get_mut(ParamGroup::Fc1B) = gb1;
        Ok(gfeats)
    }

    /// Full forward pass returning logits and the activations needed by
    /// [`ModelParams::backward`]. In train mode the batch-norm running
    /// statistics are updated.
    pub fn forward_cached(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (feats, trunk, [s1, s2]) = self.trunk(x, mode)?;
        let (logits, head) = self.head_forward(&feats)?;
        if let Some((m, v)) = s1 {
            update_running_stats(&mut self.bn1, &m, &v);
        }
        if let Some((m, v)) = s2 {
            update_running_stats(&mut self.bn2, &m, &v);
        }
        Ok((logits, ForwardCache { trunk, head }))
    }

    /// Logits for a `B x W x F` batch.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x, mode)?.0)
    }

    /// Eval-mode logits; never mutates the model.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.features(x)?;
        Ok(self.head_forward(&feats)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros(&self.arch);
        let gfeats = self.head_backward(&cache.head, grad_logits, &mut grads)?;
        let tc = &cache.trunk;
        let gy2 = relu_backward(&tc.y2, &gfeats.reshape(tc.y2.shape())?);
        let (gc2, ggamma2, gbeta2) = batchnorm_backward(&tc.bn2, &gy2)?;
        let (ga1, gw2, gb2) = conv1d_backward(&tc.a1, &self.conv2_w, &gc2)?;
        let gy1 = relu_backward(&tc.y1, &ga1);
        let (gc1, ggamma1, gbeta1) = batchnorm_backward(&tc.bn1, &gy1)?;
        let (_, gw1, gb1) = conv1d_backward(&tc.input, &self.conv1_w, &gc1)?;
        *grads.get_mut(ParamGroup::Conv1W) = gw1.into_data();
        *grads.get_mut(ParamGroup::Conv1B) = gb1;
        *grads.get_mut(ParamGroup::Bn1Gamma) = ggamma1;
        *grads.get_mut(ParamGroup::Bn1Beta) = gbeta1;
        *grads.get_mut(ParamGroup::Conv2W) = gw2.into_data();
        *grads.get_mut(ParamGroup::Conv2B) = gb2;
        *grads.get_mut(ParamGroup::Bn2Gamma) = ggamma2;
        *grads.get_mut(ParamGroup::Bn2Beta) = gbeta2;
        Ok(grads)
    }

    /// Pre-activation values of every ReLU for a batch, in train or eval
    /// normalization. Used to keep finite-difference probes off the kinks.
    pub fn relu_inputs(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        let (feats, trunk, _) = self.trunk(x, mode)?;
        let (_, head) = self.head_forward(&feats)?;
        let mut out = trunk.y1.into_data();
        out.extend(trunk.y2.into_data());
        out.extend(head.h_pre.into_data());
        Ok(out)
    }

    pub fn n_params(&self) -> usize {
        ParamGroup::ALL.iter().map(|&g| self.group(g).len()).sum()
    }
}
