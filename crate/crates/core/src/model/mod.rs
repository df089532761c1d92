//! QSELD network: quaternion convolution stack, bidirectional GRU, and
//! parallel SED and DOA branches.
//!
//! ```text
//! [B, 2, T, M/2] quaternion input
//!   (QConv2d(P) → split ReLU → split BN → freq max-pool) × L
//!   → [B, P, T, 2] → [B, T, 8P]
//!   → BiGRU(Q) → [B, T, 2Q]
//!   ├─ Dense(R) → Dense(N, sigmoid)   SED
//!   └─ Dense(R) → Dense(3N, tanh)     DOA
//! ```
//!
//! The real baseline keeps the stack but replaces each quaternion convolution
//! by a real one with `2P` filters acting on the `4C` real planes.

pub mod checkpoint;
pub mod data;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{derive_seed, rng_from_seed};
use crate::optim::gradcheck::{check_input_smooth, check_params_smooth, quat_from_stacked, random_quat, GradReport};
use crate::optim::loss::{seld_loss, seld_loss_terms, LossConfig, SeldLoss};
use crate::params::{join, Parameterized};
use crate::qnn::activation::{split_activation, split_activation_backward, Activation};
use crate::qnn::batchnorm::{BatchNorm, BatchNormCache, Mode, SplitBatchNorm};
use crate::qnn::conv::{QConv2d, KERNEL};
use crate::qnn::dense::{Dense, DenseCache};
use crate::qnn::gru::{BiGru, BiGruCache};
use crate::qnn::pool::{max_pool_freq, max_pool_freq_backward, max_pool_freq_real, max_pool_freq_real_backward, PoolIndices};
use crate::qnn::real_conv::Conv2d;
use crate::quat::QuatTensor;
use crate::tensor::{frames_to_maps, maps_to_frames, RealTensor};

/// Quaternion input channels: magnitude and phase.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frontend {
    #[default]
    Quaternion,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QseldConfig {
    /// `P`, quaternion filters per convolution layer.
    pub filters: usize,
    pub conv_layers: usize,
    pub pool_factors: Vec<usize>,
    /// `T`, frames per sequence.
    pub frames: usize,
    /// `M`, STFT window length.
    pub window: usize,
    /// `Q`, GRU hidden size per direction.
    pub hidden: usize,
    /// `R`, width of the first dense layer in each branch.
    pub fc: usize,
    /// `N`, event classes.
    pub classes: usize,
    pub doa_weight: f64,
    pub frontend: Frontend,
}

impl Default for QseldConfig {
    fn default() -> Self {
        QseldConfig::desk()
    }
}

impl QseldConfig {
    pub fn desk() -> Self {
        QseldConfig {
            filters: 2,
            conv_layers: 3,
            pool_factors: vec![4, 2, 2],
            frames: 8,
            window: 64,
            hidden: 16,
            fc: 16,
            classes: 3,
            doa_weight: 5.0,
            frontend: Frontend::Quaternion,
        }
    }

    pub fn paper() -> Self {
        QseldConfig {
            filters: 64,
            conv_layers: 3,
            pool_factors: vec![8, 8, 2],
            frames: 512,
            window: 512,
            hidden: 128,
            fc: 32,
            classes: 11,
            doa_weight: 5.0,
            frontend: Frontend::Quaternion,
        }
    }

    /// Smallest configuration used for full-model gradient checks.
    pub fn gradcheck_desk() -> Self {
        QseldConfig { hidden: 4, fc: 4, classes: 2, ..QseldConfig::desk() }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(QseldConfig::desk()),
            "paper" => Ok(QseldConfig::paper()),
            "gradcheck" => Ok(QseldConfig::gradcheck_desk()),
            other => Err(Error::config(format!("unknown model preset {other:?} (desk, paper, gradcheck)"))),
        }
    }

    pub fn bins(&self) -> usize {
        self.window / 2
    }

    /// Real planes per frequency column after the last block: `4P` for the
    /// quaternion stack, `2P` for the real baseline.
    pub fn frontend_maps(&self) -> usize {
        match self.frontend {
            Frontend::Quaternion => 4 * self.filters,
            Frontend::Real => 2 * self.filters,
        }
    }

    /// Width of each reshaped frame fed to the GRU.
    pub fn frame_features(&self) -> usize {
        2 * self.frontend_maps()
    }

    /// Convolution stack output as `[T, 2, 4P]`.
    pub fn qcnn_output_shape(&self) -> [usize; 3] {
        [self.frames, 2, self.frontend_maps()]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("filters", self.filters),
            ("conv_layers", self.conv_layers),
            ("frames", self.frames),
            ("hidden", self.hidden),
            ("fc", self.fc),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.window < 16 || !self.window.is_multiple_of(2) {
            return Err(Error::config(format!("window must be even and at least 16, got {}", self.window)));
        }
        if self.pool_factors.len() != self.conv_layers {
            return Err(Error::config(format!(
                "{} pool factors given for {} convolution layers",
                self.pool_factors.len(),
                self.conv_layers
            )));
        }
        let mut f = self.bins();
        for (i, &p) in self.pool_factors.iter().enumerate() {
            if p == 0 || !f.is_multiple_of(p) {
                return Err(Error::config(format!(
                    "pool factor {p} of layer {i} does not divide the {f} frequency bins reaching it"
                )));
            }
            f /= p;
        }
        if f != 2 {
            return Err(Error::config(format!(
                "pool factors {:?} must reduce {} bins to 2 (product {} = M/4), they leave {f}",
                self.pool_factors,
                self.bins(),
                self.bins() / 2
            )));
        }
        LossConfig { doa_weight: self.doa_weight }.validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { doa_weight: self.doa_weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvBlock {
    Quaternion { conv: QConv2d, bn: SplitBatchNorm, pool: usize },
    Real { conv: Conv2d, bn: BatchNorm, pool: usize },
}

#[derive(Debug, Clone)]
enum BlockCache {
    Quaternion { input: QuatTensor, pre: QuatTensor, act: QuatTensor, bn: BatchNormCache, idx: PoolIndices },
    Real { input: RealTensor, pre: RealTensor, act: RealTensor, bn: BatchNormCache, idx: Vec<usize> },
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    frontend_shape: Vec<usize>,
    gru: Vec<BiGruCache>,
    sed_fc: DenseCache,
    sed_out: DenseCache,
    doa_fc: DenseCache,
    doa_out: DenseCache,
}

impl ForwardCache {
    /// True when both passes took the same branch at every ReLU and every
    /// max-pool window, i.e. the network is the same smooth function at both
    /// points.
    pub fn same_branches(&self, other: &ForwardCache) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| match (a, b) {
                (BlockCache::Quaternion { pre: pa, idx: ia, .. }, BlockCache::Quaternion { pre: pb, idx: ib, .. }) => {
                    ia == ib && (0..4).all(|k| signs_match(pa.plane(k), pb.plane(k)))
                }
                (BlockCache::Real { pre: pa, idx: ia, .. }, BlockCache::Real { pre: pb, idx: ib, .. }) => {
                    ia == ib && signs_match(pa.data(), pb.data())
                }
                _ => false,
            })
    }
}

fn signs_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
}

/// Network outputs: `sed` is `[B, T, N]` in (0, 1), `doa` is `[B, T, 3N]` in
/// (−1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub sed: RealTensor,
    pub doa: RealTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QseldModel {
    pub config: QseldConfig,
    pub blocks: Vec<ConvBlock>,
    pub gru: BiGru,
    pub sed_fc: Dense,
    pub sed_out: Dense,
    pub doa_fc: Dense,
    pub doa_out: Dense,
}

impl QseldModel {
    pub fn new(config: QseldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.conv_layers);
        let mut in_ch = INPUT_CHANNELS;
        for (i, &pool) in config.pool_factors.iter().enumerate() {
            let s = derive_seed(seed, i as u64);
            blocks.push(match config.frontend {
                Frontend::Quaternion => {
                    let conv = QConv2d::new(in_ch, config.filters, s)?;
                    in_ch = config.filters;
                    ConvBlock::Quaternion { conv, bn: SplitBatchNorm::new(config.filters), pool }
                }
                Frontend::Real => {
                    let maps = if i == 0 { 4 * INPUT_CHANNELS } else { in_ch };
                    let conv = Conv2d::new(maps, 2 * config.filters, s);
                    in_ch = 2 * config.filters;
                    ConvBlock::Real { conv, bn: BatchNorm::new(2 * config.filters), pool }
                }
            });
        }
        let d = config.frame_features();
        let (q, r, n) = (config.hidden, config.fc, config.classes);
        Ok(QseldModel {
            gru: BiGru::new(d, q, derive_seed(seed, 100)),
            sed_fc: Dense::new(2 * q, r, Activation::Linear, derive_seed(seed, 101)),
            sed_out: Dense::new(r, n, Activation::Sigmoid, derive_seed(seed, 102)),
            doa_fc: Dense::new(2 * q, r, Activation::Linear, derive_seed(seed, 103)),
            doa_out: Dense::new(r, 3 * n, Activation::Tanh, derive_seed(seed, 104)),
            blocks,
            config,
        })
    }

    fn check_input(&self, input: &QuatTensor) -> Result<usize> {
        let &[b, c, t, f] = input.shape() else {
            return Err(Error::shape(format!("model input must be [B, 2, T, F], got {:?}", input.shape())));
        };
        if c != INPUT_CHANNELS || t != self.config.frames || f != self.config.bins() {
            return Err(Error::shape(format!(
                "model input {:?} does not match [B, {INPUT_CHANNELS}, {}, {}]",
                input.shape(),
                self.config.frames,
                self.config.bins()
            )));
        }
        if b == 0 {
            return Err(Error::shape("model input has an empty batch"));
        }
        Ok(b)
    }

    /// Convolution stack output as frames `[B, T, 8P]`.
    fn frontend_forward(&self, input: &QuatTensor, mode: Mode) -> Result<(RealTensor, Vec<BlockCache>, Vec<usize>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut q = input.clone();
        let mut r = match self.config.frontend {
            Frontend::Real => Some(input.to_real_maps()?),
            Frontend::Quaternion => None,
        };
        for block in &self.blocks {
            match block {
                ConvBlock::Quaternion { conv, bn, pool } => {
                    let pre = conv.forward(&q)?;
                    let act = split_activation(&pre, Activation::Relu);
                    let (normed, bn_cache) = bn.forward(&act, mode)?;
                    let (pooled, idx) = max_pool_freq(&normed, *pool)?;
                    caches.push(BlockCache::Quaternion { input: q, pre, act, bn: bn_cache, idx });
                    q = pooled;
                }
                ConvBlock::Real { conv, bn, pool } => {
                    let x = r.take().expect("real stack carries real maps");
                    let pre = conv.forward(&x)?;
                    let act = RealTensor::from_vec(pre.shape(), Activation::Relu.apply_slice(pre.data()))?;
                    let (normed, bn_cache) = bn.forward(&act, mode)?;
                    let (pooled, idx) = max_pool_freq_real(&normed, *pool)?;
                    caches.push(BlockCache::Real { input: x, pre, act, bn: bn_cache, idx });
                    r = Some(pooled);
                }
            }
        }
        let maps = match r {
            Some(r) => r,
            None => q.to_real_maps()?,
        };
        let shape = maps.shape().to_vec();
        Ok((maps_to_frames(&maps)?, caches, shape))
    }

    pub fn forward(&self, input: &QuatTensor, mode: Mode) -> Result<(Outputs, ForwardCache)> {
        let b = self.check_input(input)?;
        let (t, n) = (self.config.frames, self.config.classes);
        let (frames, blocks, frontend_shape) = self.frontend_forward(input, mode)?;
        let d = self.config.frame_features();
        let per_clip: Vec<(RealTensor, BiGruCache)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let seq = RealTensor::from_vec(&[t, d], frames.data()[bi * t * d..(bi + 1) * t * d].to_vec())?;
                self.gru.forward(&seq)
            })
            .collect::<Result<_>>()?;
        let q2 = 2 * self.config.hidden;
        let mut h = Vec::with_capacity(b * t * q2);
        let mut gru = Vec::with_capacity(b);
        for (out, cache) in per_clip {
            h.extend_from_slice(out.data());
            gru.push(cache);
        }
        let h = RealTensor::from_vec(&[b * t, q2], h)?;
        let sed_fc = self.sed_fc.forward(&h)?;
        let sed_out = self.sed_out.forward(&sed_fc.output)?;
        let doa_fc = self.doa_fc.forward(&h)?;
        let doa_out = self.doa_out.forward(&doa_fc.output)?;
        let outputs = Outputs {
            sed: sed_out.output.clone().reshape(&[b, t, n])?,
            doa: doa_out.output.clone().reshape(&[b, t, 3 * n])?,
        };
        Ok((outputs, ForwardCache { blocks, frontend_shape, gru, sed_fc, sed_out, doa_fc, doa_out }))
    }

    /// Gradients of all parameters and of the input, given output gradients
    /// `[B, T, N]` and `[B, T, 3N]`.
    pub fn backward(&self, cache: &ForwardCache, grad_sed: &[f64], grad_doa: &[f64]) -> Result<(QseldModel, QuatTensor)> {
        let b = cache.gru.len();
        let (t, n) = (self.config.frames, self.config.classes);
        if grad_sed.len() != b * t * n || grad_doa.len() != b * t * 3 * n {
            return Err(Error::shape("output gradients do not match the cached batch"));
        }
        let g_sed = RealTensor::from_vec(&[b * t, n], grad_sed.to_vec())?;
        let g_doa = RealTensor::from_vec(&[b * t, 3 * n], grad_doa.to_vec())?;
        let (g, sed_out) = self.sed_out.backward(&cache.sed_out, &g_sed)?;
        let (g_h_sed, sed_fc) = self.sed_fc.backward(&cache.sed_fc, &g)?;
        let (g, doa_out) = self.doa_out.backward(&cache.doa_out, &g_doa)?;
        let (g_h_doa, doa_fc) = self.doa_fc.backward(&cache.doa_fc, &g)?;
        let g_h: Vec<f64> = g_h_sed.data().iter().zip(g_h_doa.data()).map(|(a, c)| a + c).collect();

        let q2 = 2 * self.config.hidden;
        let d = self.config.frame_features();
        let per_clip: Vec<(RealTensor, BiGru)> = cache
            .gru
            .par_iter()
            .enumerate()
            .map(|(bi, gc)| {
                let g = RealTensor::from_vec(&[t, q2], g_h[bi * t * q2..(bi + 1) * t * q2].to_vec())?;
                self.gru.backward(gc, &g)
            })
            .collect::<Result<_>>()?;
        let mut g_frames = Vec::with_capacity(b * t * d);
        let mut per_clip = per_clip.into_iter();
        let (first, mut gru) = per_clip.next().expect("non-empty batch");
        g_frames.extend_from_slice(first.data());
        for (gin, grads) in per_clip {
            g_frames.extend_from_slice(gin.data());
            crate::params::accumulate(&mut gru, &grads);
        }
        let g_maps = frames_to_maps(&RealTensor::from_vec(&[b, t, d], g_frames)?, cache.frontend_shape[1])?;

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        let mut g_q = match self.config.frontend {
            Frontend::Quaternion => Some(QuatTensor::from_real_maps(&g_maps)?),
            Frontend::Real => None,
        };
        let mut g_r = match self.config.frontend {
            Frontend::Real => Some(g_maps),
            Frontend::Quaternion => None,
        };
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            match (block, bc) {
                (ConvBlock::Quaternion { conv, bn, pool }, BlockCache::Quaternion { input, pre, act, bn: bn_cache, idx }) => {
                    let g = g_q.take().expect("quaternion gradient");
                    let g = max_pool_freq_backward(&g, idx, act.shape())?;
                    let (g, bn_g) = bn.backward(bn_cache, &g)?;
                    let g = split_activation_backward(pre, act, &g, Activation::Relu);
                    let (g, conv_g) = conv.backward(input, &g)?;
                    block_grads.push(ConvBlock::Quaternion { conv: conv_g, bn: bn_g, pool: *pool });
                    g_q = Some(g);
                }
                (ConvBlock::Real { conv, bn, pool }, BlockCache::Real { input, pre, act, bn: bn_cache, idx }) => {
                    let g = g_r.take().expect("real gradient");
                    let g = max_pool_freq_real_backward(&g, idx, act.shape())?;
                    let (g, bn_g) = bn.backward(bn_cache, &g)?;
                    let g = RealTensor::from_vec(
                        pre.shape(),
                        Activation::Relu.backward_slice(pre.data(), act.data(), g.data()),
                    )?;
                    let (g, conv_g) = conv.backward(input, &g)?;
                    block_grads.push(ConvBlock::Real { conv: conv_g, bn: bn_g, pool: *pool });
                    g_r = Some(g);
                }
                _ => return Err(Error::shape("forward cache does not match the model")),
            }
        }
        block_grads.reverse();
        let g_input = match (g_q, g_r) {
            (Some(q), _) => q,
            (None, Some(r)) => QuatTensor::from_real_maps(&r)?,
            (None, None) => unreachable!("one frontend gradient is always present"),
        };
        let grads = QseldModel {
            config: self.config.clone(),
            blocks: block_grads,
            gru,
            sed_fc,
            sed_out,
            doa_fc,
            doa_out,
        };
        Ok((grads, g_input))
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// averages.
    pub fn update_running(&mut self, cache: &ForwardCache) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            match (block, bc) {
                (ConvBlock::Quaternion { bn, .. }, BlockCache::Quaternion { bn: c, .. }) => bn.update_running(c),
                (ConvBlock::Real { bn, .. }, BlockCache::Real { bn: c, .. }) => bn.update_running(c),
                _ => {}
            }
        }
    }

    /// Loss and gradients for one batch.
    pub fn loss_and_grads(&self, batch: &Batch, mode: Mode) -> Result<(SeldLoss, QseldModel, ForwardCache)> {
        let (out, cache) = self.forward(&batch.input, mode)?;
        let loss = self.loss(&out, batch)?;
        let (grads, _) = self.backward(&cache, &loss.grad_sed, &loss.grad_doa)?;
        Ok((loss, grads, cache))
    }

    pub fn loss(&self, out: &Outputs, batch: &Batch) -> Result<SeldLoss> {
        seld_loss(
            &self.config.loss_config(),
            out.sed.data(),
            &batch.sed,
            out.doa.data(),
            &batch.doa,
            self.config.classes,
        )
    }

    /// Trainable reals in the convolution stack.
    pub fn frontend_param_count(&self) -> usize {
        let mut n = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&format!("block{i}"), &mut |_, _, d| n += d.len());
        }
        n
    }

    pub fn param_count(&self) -> usize {
        crate::params::param_count(self)
    }
}

impl Parameterized for ConvBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            ConvBlock::Quaternion { conv, bn, .. } => {
                conv.visit_params(&join(prefix, "conv"), f);
                bn.visit_params(&join(prefix, "bn"), f);
            }
            ConvBlock::Real { conv, bn, .. } => {
                conv.visit_params(&join(prefix, "conv"), f);
                bn.visit_params(&join(prefix, "bn"), f);
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            ConvBlock::Quaternion { conv, bn, .. } => {
                conv.visit_params_mut(&join(prefix, "conv"), f);
                bn.visit_params_mut(&join(prefix, "bn"), f);
            }
            ConvBlock::Real { conv, bn, .. } => {
                conv.visit_params_mut(&join(prefix, "conv"), f);
                bn.visit_params_mut(&join(prefix, "bn"), f);
            }
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        match self {
            ConvBlock::Quaternion { bn, .. } => bn.visit_buffers(&join(prefix, "bn"), f),
            ConvBlock::Real { bn, .. } => bn.visit_buffers(&join(prefix, "bn"), f),
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            ConvBlock::Quaternion { bn, .. } => bn.visit_buffers_mut(&join(prefix, "bn"), f),
            ConvBlock::Real { bn, .. } => bn.visit_buffers_mut(&join(prefix, "bn"), f),
        }
    }
}

impl Parameterized for QseldModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.gru.visit_params(&join(prefix, "gru"), f);
        self.sed_fc.visit_params(&join(prefix, "sed_fc"), f);
        self.sed_out.visit_params(&join(prefix, "sed_out"), f);
        self.doa_fc.visit_params(&join(prefix, "doa_fc"), f);
        self.doa_out.visit_params(&join(prefix, "doa_out"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.gru.visit_params_mut(&join(prefix, "gru"), f);
        self.sed_fc.visit_params_mut(&join(prefix, "sed_fc"), f);
        self.sed_out.visit_params_mut(&join(prefix, "sed_out"), f);
        self.doa_fc.visit_params_mut(&join(prefix, "doa_fc"), f);
        self.doa_out.visit_params_mut(&join(prefix, "doa_out"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// A training batch: input `[B, 2, T, F]`, SED targets `[B, T, N]` in {0, 1}
/// and DOA targets `[B, T, 3N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: QuatTensor,
    pub sed: Vec<f64>,
    pub doa: Vec<f64>,
}

/// Full-model gradient check on the smallest desk configuration, in training
/// mode, over every parameter and every input entry. Entries whose stencil
/// crosses a ReLU or max-pool boundary are skipped and counted.
pub fn gradcheck_desk_model(seed: u64) -> Result<GradReport> {
    let config = QseldConfig::gradcheck_desk();
    let model = QseldModel::new(config.clone(), derive_seed(seed, 1))?;
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let (b, t, f, n) = (2, config.frames, config.bins(), config.classes);
    let input = random_quat(&mut rng, &[b, INPUT_CHANNELS, t, f], 1.0);
    let sed: Vec<f64> = (0..b * t * n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
    let mut doa = vec![0.0; b * t * 3 * n];
    for (i, &a) in sed.iter().enumerate() {
        if a == 1.0 {
            let theta: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let phi: f64 = rng.random_range(-1.0..1.0);
            doa[3 * i..3 * i + 3].copy_from_slice(&crate::synth::direction_vector(theta, phi));
        }
    }
    let batch = Batch { input: input.clone(), sed, doa };
    let (out, cache) = model.forward(&input, Mode::Train)?;
    let loss = model.loss(&out, &batch)?;
    let (grads, g_input) = model.backward(&cache, &loss.grad_sed, &loss.grad_doa)?;
    let total = |m: &QseldModel, x: &QuatTensor| -> Result<(Vec<f64>, bool)> {
        let (out, probe) = m.forward(x, Mode::Train)?;
        let terms = seld_loss_terms(
            &config.loss_config(),
            out.sed.data(),
            &batch.sed,
            out.doa.data(),
            &batch.doa,
            config.classes,
        )?;
        Ok((terms, probe.same_branches(&cache)))
    };
    let params = check_params_smooth(&model, &grads, |m| total(m, &input))?;
    let inputs = check_input_smooth(&input.to_stacked(), &g_input.to_stacked(), "input", |v| {
        total(&model, &quat_from_stacked(input.shape(), v)?)
    })?;
    Ok(params.merge(inputs))
}

/// Weight and bias reals of one quaternion convolution layer.
pub fn qconv_param_count(in_channels: usize, filters: usize) -> usize {
    4 * (in_channels * KERNEL * KERNEL * filters) + 4 * filters
}
