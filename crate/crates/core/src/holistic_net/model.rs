use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv, Tensor};
use super::{LossKind, SupervisionWeights};
use crate::error::{Error, Result};
use crate::segmentation::{CrispSegmentation, Dims, ProbSegmentation};
use crate::synth_data::{derived_rng, Image};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WDHN";
pub const CHECKPOINT_VERSION: u32 = 1;

const NORM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub scales: usize,
    pub channels: usize,
    pub classes: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            channels: 16,
            classes: 5,
            input_channels: 2,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.scales > 8 {
            return Err(Error::invalid_arg("scales", format!("{} is outside 1..=8", self.scales)));
        }
        if self.channels == 0 {
            return Err(Error::invalid_arg("channels", "must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::invalid_arg("classes", "must be at least 2"));
        }
        if self.input_channels == 0 {
            return Err(Error::invalid_arg("input_channels", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    stem: Conv,
    blocks: Vec<(Conv, Conv)>,
    heads: Vec<Conv>,
    fusion: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let c = cfg.channels;
        let mut offset = 0;
        let mut conv = |in_c, out_c, k| {
            let cv = Conv { in_c, out_c, k, offset };
            offset += cv.param_len();
            cv
        };
        let stem = conv(cfg.input_channels, c, 3);
        let blocks = (0..cfg.scales).map(|_| (conv(c, c, 3), conv(c, c, 3))).collect();
        let heads = (0..cfg.scales).map(|_| conv(c, cfg.classes, 1)).collect();
        let fusion = offset;
        Self {
            stem,
            blocks,
            heads,
            fusion,
            total: fusion + cfg.classes * cfg.scales,
        }
    }

    fn norm_count(&self) -> usize {
        1 + 2 * self.blocks.len()
    }
}

/// Multi-scale network: a stem convolution, then per scale an optional 2x2
/// max pool, a residual block (conv, norm, ELU, conv, norm, skip, ELU) and a
/// 1x1 prediction head. Head outputs are upsampled to full resolution and
/// fused per class with weights `w[l][s]` before a softmax.
///
/// Normalisation shifts and scales are frozen buffers set by
/// [`HolisticModel::calibrate`], not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct HolisticModel {
    config: NetworkConfig,
    layout: Layout,
    params: Vec<f64>,
    norms: Vec<f64>,
}

/// Network outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Per-scale logits at full resolution, voxel-major `h * w * |L|`.
    pub scale_logits: Vec<Vec<f64>>,
    pub fused_probs: ProbSegmentation,
}

struct BlockCache {
    input: Tensor,
    pool_arg: Option<Vec<u32>>,
    na: Tensor,
    ea: Tensor,
    residual: Tensor,
    out: Tensor,
}

struct Cache {
    input: Tensor,
    stem_pre: Tensor,
    blocks: Vec<BlockCache>,
    upsampled: Vec<Tensor>,
    fused_probs: Vec<f64>,
    scale_probs: Vec<Vec<f64>>,
    /// Pre-normalisation activations, in norm order.
    pre_norm: Vec<Tensor>,
}

impl HolisticModel {
    /// Random initialisation: He-normal convolutions, zero biases, fusion
    /// weights `1 / S`, identity normalisation.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = derived_rng(config.seed, u64::MAX);
        let convs = std::iter::once(layout.stem)
            .chain(layout.blocks.iter().flat_map(|(a, b)| [*a, *b]))
            .chain(layout.heads.iter().copied());
        for conv in convs {
            let fan_in = (conv.in_c * conv.k * conv.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for p in &mut params[conv.offset..conv.offset + conv.weight_len()] {
                *p = normal.sample(&mut rng);
            }
        }
        let s = config.scales as f64;
        params[layout.fusion..].iter_mut().for_each(|w| *w = 1.0 / s);
        let c = config.channels;
        let mut norms = vec![0.0; layout.norm_count() * 2 * c];
        for k in 0..layout.norm_count() {
            norms[k * 2 * c + c..(k + 1) * 2 * c].fill(1.0);
        }
        Ok(Self {
            config,
            layout,
            params,
            norms,
        })
    }

    /// [`HolisticModel::new`] followed by [`HolisticModel::calibrate`].
    pub fn initialise(config: NetworkConfig, calibration: &[&Image]) -> Result<Self> {
        let mut m = Self::new(config)?;
        m.calibrate(calibration)?;
        Ok(m)
    }

    /// Sets each normalisation to the per-channel mean and standard
    /// deviation of its input over `images`, one layer at a time.
    pub fn calibrate(&mut self, images: &[&Image]) -> Result<()> {
        if images.is_empty() {
            return Ok(());
        }
        let c = self.config.channels;
        for k in 0..self.layout.norm_count() {
            let mut sum = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut count = 0.0;
            for img in images {
                let x = self.input_tensor(img)?;
                let cache = self.run(&x)?;
                let t = &cache.pre_norm[k];
                for ch in 0..c {
                    for &v in t.plane(ch) {
                        sum[ch] += v;
                        sq[ch] += v * v;
                    }
                }
                count += (t.h * t.w) as f64;
            }
            let base = k * 2 * c;
            for ch in 0..c {
                let mean = sum[ch] / count;
                let var = (sq[ch] / count - mean * mean).max(0.0);
                self.norms[base + ch] = mean;
                self.norms[base + c + ch] = 1.0 / (var.sqrt() + NORM_FLOOR);
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Fusion weight `w[l][s]`, `s` zero-based.
    pub fn fusion_weight(&self, l: usize, s: usize) -> f64 {
        self.params[self.layout.fusion + l * self.config.scales + s]
    }

    pub fn set_fusion_weight(&mut self, l: usize, s: usize, v: f64) {
        self.params[self.layout.fusion + l * self.config.scales + s] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    fn norm(&self, k: usize) -> (&[f64], &[f64]) {
        let c = self.config.channels;
        let base = k * 2 * c;
        (&self.norms[base..base + c], &self.norms[base + c..base + 2 * c])
    }

    fn input_tensor(&self, img: &Image) -> Result<Tensor> {
        if img.channels != self.config.input_channels {
            return Err(Error::mismatch("network input channels", self.config.input_channels, img.channels));
        }
        let f = 1usize << (self.config.scales - 1);
        if img.height % f != 0 || img.width % f != 0 {
            return Err(Error::invalid_arg(
                "image",
                format!("{}x{} is not divisible by {f}", img.height, img.width),
            ));
        }
        Ok(Tensor {
            c: img.channels,
            h: img.height,
            w: img.width,
            data: img.data.iter().map(|&v| f64::from(v)).collect(),
        })
    }

    fn run(&self, x: &Tensor) -> Result<Cache> {
        let p = &self.params;
        let mut pre_norm = Vec::with_capacity(self.layout.norm_count());

        let mut stem_pre = self.layout.stem.forward(p, x);
        pre_norm.push(stem_pre.clone());
        let (sh, sc) = self.norm(0);
        layers::normalise(&mut stem_pre, sh, sc);
        let mut current = layers::elu_tensor(&stem_pre);

        let mut blocks = Vec::with_capacity(self.config.scales);
        let mut upsampled = Vec::with_capacity(self.config.scales);
        for (s, (ca, cb)) in self.layout.blocks.iter().enumerate() {
            let (input, pool_arg) = if s == 0 {
                (current, None)
            } else {
                let (y, arg) = layers::max_pool(&current);
                (y, Some(arg))
            };
            let mut na = ca.forward(p, &input);
            pre_norm.push(na.clone());
            let (sh, sc) = self.norm(1 + 2 * s);
            layers::normalise(&mut na, sh, sc);
            let ea = layers::elu_tensor(&na);
            let mut nb = cb.forward(p, &ea);
            pre_norm.push(nb.clone());
            let (sh, sc) = self.norm(2 + 2 * s);
            layers::normalise(&mut nb, sh, sc);
            let mut residual = nb;
            for (r, v) in residual.data.iter_mut().zip(&input.data) {
                *r += v;
            }
            let out = layers::elu_tensor(&residual);
            let logits = self.layout.heads[s].forward(p, &out);
            upsampled.push(layers::upsample(&logits, 1 << s));
            current = out.clone();
            blocks.push(BlockCache {
                input,
                pool_arg,
                na,
                ea,
                residual,
                out,
            });
        }

        let (l, n) = (self.config.classes, x.h * x.w);
        let mut fused = Tensor::zeros(l, x.h, x.w);
        for (s, up) in upsampled.iter().enumerate() {
            for k in 0..l {
                let w = self.fusion_weight(k, s);
                for (f, u) in fused.plane_mut(k).iter_mut().zip(up.plane(k)) {
                    *f += w * u;
                }
            }
        }
        let fused_probs = layers::softmax_voxel_major(&fused);
        if fused_probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch: 0,
                reason: "non-finite activations".into(),
            });
        }
        let scale_probs = upsampled.iter().map(layers::softmax_voxel_major).collect();
        debug_assert_eq!(fused_probs.len(), n * l);
        Ok(Cache {
            input: x.clone(),
            stem_pre,
            blocks,
            upsampled,
            fused_probs,
            scale_probs,
            pre_norm,
        })
    }

    fn dims_of(&self, x: &Tensor) -> Dims {
        Dims::d2(x.h, x.w)
    }

    pub fn forward(&self, image: &Image) -> Result<ForwardOutput> {
        let x = self.input_tensor(image)?;
        let cache = self.run(&x)?;
        let dims = self.dims_of(&x);
        let l = self.config.classes;
        let n = x.h * x.w;
        let scale_logits = cache
            .upsampled
            .iter()
            .map(|t| {
                let mut v = vec![0.0; n * l];
                for k in 0..l {
                    for (i, &z) in t.plane(k).iter().enumerate() {
                        v[i * l + k] = z;
                    }
                }
                v
            })
            .collect();
        Ok(ForwardOutput {
            scale_logits,
            fused_probs: ProbSegmentation::new(dims, l, cache.fused_probs)?,
        })
    }

    /// Fused probabilities.
    pub fn predict(&self, image: &Image) -> Result<ProbSegmentation> {
        Ok(self.forward(image)?.fused_probs)
    }

    /// Probabilities of every scale head, full resolution.
    pub fn predict_scales(&self, image: &Image) -> Result<Vec<ProbSegmentation>> {
        let x = self.input_tensor(image)?;
        let cache = self.run(&x)?;
        cache
            .scale_probs
            .into_iter()
            .map(|p| ProbSegmentation::new(self.dims_of(&x), self.config.classes, p))
            .collect()
    }

    /// Deep-supervision loss on one image.
    pub fn loss(&self, image: &Image, g: &CrispSegmentation, kind: &LossKind, weights: &SupervisionWeights) -> Result<f64> {
        let x = self.input_tensor(image)?;
        let cache = self.run(&x)?;
        let dims = self.dims_of(&x);
        let l = self.config.classes;
        let fused = ProbSegmentation::unconstrained(dims.clone(), l, cache.fused_probs)?;
        let scales = cache
            .scale_probs
            .into_iter()
            .map(|p| ProbSegmentation::unconstrained(dims.clone(), l, p))
            .collect::<Result<Vec<_>>>()?;
        super::weighted_loss(&fused, &scales, g, kind, weights)
    }

    /// Deep-supervision loss on one image and its gradient with respect to
    /// every parameter, fusion weights included.
    pub fn loss_and_gradient(
        &self,
        image: &Image,
        g: &CrispSegmentation,
        kind: &LossKind,
        weights: &SupervisionWeights,
    ) -> Result<(f64, Vec<f64>)> {
        let x = self.input_tensor(image)?;
        if g.dims().axes() != [x.h, x.w] || g.num_labels() != self.config.classes {
            return Err(Error::mismatch("ground truth", format!("{}x{}", x.h, x.w), g.dims()));
        }
        weights.check(self.config.scales)?;
        let cache = self.run(&x)?;
        let dims = self.dims_of(&x);
        let l = self.config.classes;
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];

        let fused = ProbSegmentation::unconstrained(dims.clone(), l, cache.fused_probs.clone())?;
        let (fused_loss, fused_dp) = kind.loss_and_grad(&fused, g)?;
        let mut total = weights.fused * fused_loss;

        let mut dfused = Tensor::zeros(l, x.h, x.w);
        layers::softmax_backward_into(&cache.fused_probs, &fused_dp, weights.fused, &mut dfused);

        let mut dup: Vec<Tensor> = Vec::with_capacity(self.config.scales);
        for (s, up) in cache.upsampled.iter().enumerate() {
            let mut d = up.same_shape();
            for k in 0..l {
                let widx = self.layout.fusion + k * self.config.scales + s;
                let w = p[widx];
                let dz = dfused.plane(k);
                grad[widx] += dz.iter().zip(up.plane(k)).map(|(a, b)| a * b).sum::<f64>();
                for (t, z) in d.plane_mut(k).iter_mut().zip(dz) {
                    *t = w * z;
                }
            }
            let sp = ProbSegmentation::unconstrained(dims.clone(), l, cache.scale_probs[s].clone())?;
            let (ls, dps) = kind.loss_and_grad(&sp, g)?;
            total += weights.scales[s] * ls;
            layers::softmax_backward_into(&cache.scale_probs[s], &dps, weights.scales[s], &mut d);
            dup.push(d);
        }

        // Stages back to front; `carry` is the gradient reaching a stage's
        // output from the next stage's pooling.
        let mut carry: Option<Tensor> = None;
        for s in (0..self.config.scales).rev() {
            let b = &cache.blocks[s];
            let dlogits = layers::upsample_backward(&dup[s], 1 << s);
            let mut dout = self.layout.heads[s]
                .backward(p, &b.out, &dlogits, &mut grad, true)
                .expect("input gradient requested");
            if let Some(c) = carry.take() {
                for (a, v) in dout.data.iter_mut().zip(&c.data) {
                    *a += v;
                }
            }
            layers::elu_backward(&b.residual, &mut dout);
            let dres = dout;
            let mut dnb = dres.clone();
            let (_, scb) = self.norm(2 + 2 * s);
            layers::normalise_backward(&mut dnb, scb);
            let (ca, cb) = self.layout.blocks[s];
            let mut dea = cb.backward(p, &b.ea, &dnb, &mut grad, true).expect("input gradient");
            layers::elu_backward(&b.na, &mut dea);
            let (_, sca) = self.norm(1 + 2 * s);
            layers::normalise_backward(&mut dea, sca);
            let mut dinput = ca.backward(p, &b.input, &dea, &mut grad, true).expect("input gradient");
            for (a, v) in dinput.data.iter_mut().zip(&dres.data) {
                *a += v;
            }
            match &b.pool_arg {
                Some(arg) => {
                    let prev = &cache.blocks[s - 1].out;
                    let mut dprev = prev.same_shape();
                    layers::max_pool_backward(&dinput, arg, &mut dprev);
                    carry = Some(dprev);
                }
                None => carry = Some(dinput),
            }
        }
        let mut dstem = carry.expect("at least one scale");
        layers::elu_backward(&cache.stem_pre, &mut dstem);
        let (_, sc0) = self.norm(0);
        layers::normalise_backward(&mut dstem, sc0);
        self.layout.stem.backward(p, &cache.input, &dstem, &mut grad, false);

        Ok((total, grad))
    }

    /// Serialises to the `WDHN` checkpoint format: magic, version (u32),
    /// scales, channels, classes, input channels (u32), seed (u64), then the
    /// parameters and the normalisation buffers as little-endian f64, in
    /// declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(32 + 8 * (self.params.len() + self.norms.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.scales, c.channels, c.classes, c.input_channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        for v in self.params.iter().chain(&self.norms) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::Format(format!("checkpoint: {r}"));
        if buf.len() < 32 || &buf[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing WDHN header"));
        }
        let u32_at = |k: usize| u32::from_le_bytes(buf[k..k + 4].try_into().expect("4 bytes"));
        if u32_at(4) != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let config = NetworkConfig {
            scales: u32_at(8) as usize,
            channels: u32_at(12) as usize,
            classes: u32_at(16) as usize,
            input_channels: u32_at(20) as usize,
            seed: u64::from_le_bytes(buf[24..32].try_into().expect("8 bytes")),
        };
        let mut model = Self::new(config)?;
        let (np, nn) = (model.params.len(), model.norms.len());
        if buf.len() != 32 + 8 * (np + nn) {
            return Err(bad(&format!("expected {} bytes, found {}", 32 + 8 * (np + nn), buf.len())));
        }
        let values: Vec<f64> = buf[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.params.copy_from_slice(&values[..np]);
        model.norms.copy_from_slice(&values[np..]);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
