//! Forward-only MBConv backbone (EfficientNet family layout).
//!
//! Batch normalisation is expected to be folded into the preceding convolution
//! before weights reach this module, so every convolution carries a bias and
//! there is no normalisation layer.
//!
//! Parameter names, for global block index `i`:
//!
//! ```text
//! stem.conv.{weight,bias}          [stem, 3, 3, 3]
//! blocks.{i}.expand.{weight,bias}  [in*e, in, 1, 1]   (absent when expansion == 1)
//! blocks.{i}.dw.{weight,bias}      [in*e, 1, k, k]
//! blocks.{i}.se.reduce.{weight,bias} [sq, in*e, 1, 1] (absent when se_ratio == 0)
//! blocks.{i}.se.expand.{weight,bias} [in*e, sq, 1, 1]
//! blocks.{i}.project.{weight,bias} [out, in*e, 1, 1]
//! head.conv.{weight,bias}          [head, last, 1, 1]
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::WeightArchive;
use super::{FeatureError, FeatureVector};
use crate::imagecore::{SeededRng, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Swish,
    /// Test mode: makes every non-gating stage linear.
    Identity,
}

impl Activation {
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Swish => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub se_ratio: f64,
}

impl StageConfig {
    pub fn new(blocks: usize, channels: usize, stride: usize, expansion: usize, kernel: usize, se_ratio: f64) -> Self {
        Self {
            blocks,
            channels,
            stride,
            expansion,
            kernel,
            se_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stages: Vec<StageConfig>,
    pub stem_channels: usize,
    pub head_channels: usize,
    pub input_size: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// One MBConv block after expanding stage repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub squeeze: usize,
}

impl BlockSpec {
    pub fn expanded(&self) -> usize {
        self.in_channels * self.expansion
    }

    pub fn residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }
}

impl BackboneConfig {
    /// Desk-scale configuration: three small stages and a 1280-wide head.
    pub fn nano() -> Self {
        Self {
            stages: vec![
                StageConfig::new(1, 8, 1, 4, 3, 0.25),
                StageConfig::new(2, 16, 2, 4, 3, 0.25),
                StageConfig::new(2, 24, 2, 4, 5, 0.25),
            ],
            stem_channels: 8,
            head_channels: 1280,
            input_size: 224,
            activation: Activation::Swish,
        }
    }

    /// EfficientNet-B0 layout, for archives exported from a pretrained model.
    pub fn efficientnet_b0() -> Self {
        Self {
            stages: vec![
                StageConfig::new(1, 16, 1, 1, 3, 0.25),
                StageConfig::new(2, 24, 2, 6, 3, 0.25),
                StageConfig::new(2, 40, 2, 6, 5, 0.25),
                StageConfig::new(3, 80, 2, 6, 3, 0.25),
                StageConfig::new(3, 112, 1, 6, 5, 0.25),
                StageConfig::new(4, 192, 2, 6, 5, 0.25),
                StageConfig::new(1, 320, 1, 6, 3, 0.25),
            ],
            stem_channels: 32,
            head_channels: 1280,
            input_size: 224,
            activation: Activation::Swish,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "nano" => Some(Self::nano()),
            "b0" | "efficientnet-b0" => Some(Self::efficientnet_b0()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if self.stem_channels == 0 || self.head_channels == 0 || self.input_size == 0 {
            return bad("stem, head and input sizes must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.channels == 0 || s.expansion == 0 {
                return bad(format!("stage {i}: blocks, channels and expansion must be positive"));
            }
            if !matches!(s.stride, 1 | 2) {
                return bad(format!("stage {i}: stride {} not in {{1, 2}}", s.stride));
            }
            if s.kernel % 2 == 0 {
                return bad(format!("stage {i}: kernel {} must be odd", s.kernel));
            }
            if !(0.0..=1.0).contains(&s.se_ratio) {
                return bad(format!("stage {i}: se_ratio {} outside [0, 1]", s.se_ratio));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        let mut out = Vec::new();
        let mut in_ch = self.stem_channels;
        for s in &self.stages {
            for r in 0..s.blocks {
                let squeeze = if s.se_ratio > 0.0 {
                    ((in_ch as f64 * s.se_ratio) as usize).max(1)
                } else {
                    0
                };
                out.push(BlockSpec {
                    index: out.len(),
                    in_channels: in_ch,
                    out_channels: s.channels,
                    stride: if r == 0 { s.stride } else { 1 },
                    expansion: s.expansion,
                    kernel: s.kernel,
                    squeeze,
                });
                in_ch = s.channels;
            }
        }
        out
    }

    fn last_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.channels)
    }

    /// Every parameter the forward pass reads, with its shape, in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut p = Vec::new();
        let mut conv = |name: String, out: usize, inp: usize, k: usize| {
            p.push((format!("{name}.weight"), vec![out, inp, k, k]));
            p.push((format!("{name}.bias"), vec![out]));
        };
        conv("stem.conv".into(), self.stem_channels, 3, 3);
        for b in self.blocks() {
            let e = b.expanded();
            let pre = format!("blocks.{}", b.index);
            if b.expansion != 1 {
                conv(format!("{pre}.expand"), e, b.in_channels, 1);
            }
            conv(format!("{pre}.dw"), e, 1, b.kernel);
            if b.squeeze > 0 {
                conv(format!("{pre}.se.reduce"), b.squeeze, e, 1);
                conv(format!("{pre}.se.expand"), e, b.squeeze, 1);
            }
            conv(format!("{pre}.project"), b.out_channels, e, 1);
        }
        conv("head.conv".into(), self.head_channels, self.last_channels(), 1);
        p
    }
}

/// Archive of zero-valued parameters for `cfg`.
pub fn zero_archive(cfg: &BackboneConfig) -> WeightArchive {
    let mut a = WeightArchive::new();
    for (name, shape) in cfg.parameter_shapes() {
        let n = shape.iter().product();
        a.insert(name, shape, vec![0.0; n]).expect("unique parameter names");
    }
    a.metadata.insert("source".into(), "zero".into());
    a
}

/// Seeded random parameters: He-uniform weights scaled by fan-in, zero biases.
/// Projection weights use half the variance so residual stacks stay bounded.
pub fn random_archive(cfg: &BackboneConfig, seed: u64) -> WeightArchive {
    let mut rng = SeededRng::derive(seed, &[0x5745_4947]);
    let mut a = WeightArchive::new();
    for (name, shape) in cfg.parameter_shapes() {
        let n: usize = shape.iter().product();
        let values = if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let gain = if name.contains(".project.") { 3.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
        };
        a.insert(name, shape, values).expect("unique parameter names");
    }
    a.metadata.insert("source".into(), format!("random:{seed}"));
    a
}

struct Conv {
    weight: Vec<f32>,
    bias: Vec<f32>,
    out: usize,
    inp: usize,
    k: usize,
}

struct Block {
    spec: BlockSpec,
    expand: Option<Conv>,
    dw: Conv,
    se: Option<(Conv, Conv)>,
    project: Conv,
}

/// Backbone with weights bound and shape-checked against a configuration.
pub struct Backbone {
    cfg: BackboneConfig,
    stem: Conv,
    blocks: Vec<Block>,
    head: Conv,
}

fn fetch(archive: &WeightArchive, name: &str, out: usize, inp: usize, k: usize) -> Result<Conv, FeatureError> {
    let wname = format!("{name}.weight");
    let bname = format!("{name}.bias");
    let w = archive
        .get(&wname)
        .ok_or_else(|| FeatureError::MissingParameter(wname.clone()))?;
    if w.shape != [out, inp, k, k] {
        return Err(FeatureError::ShapeMismatch(wname));
    }
    let b = archive
        .get(&bname)
        .ok_or_else(|| FeatureError::MissingParameter(bname.clone()))?;
    if b.shape != [out] {
        return Err(FeatureError::ShapeMismatch(bname));
    }
    Ok(Conv {
        weight: w.values.clone(),
        bias: b.values.clone(),
        out,
        inp,
        k,
    })
}

/// Feature map in CHW layout.
struct Map {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

fn out_size(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

/// Dense convolution with "same" padding `k / 2`.
fn conv_full(x: &Map, conv: &Conv, stride: usize, act: Activation) -> Map {
    let (k, pad) = (conv.k, (conv.k / 2) as isize);
    let (oh, ow) = (out_size(x.h, k, stride), out_size(x.w, k, stride));
    let mut data = vec![0.0f32; conv.out * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = conv.bias[o];
                for i in 0..conv.inp {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let wv = conv.weight[((o * conv.inp + i) * k + ky) * k + kx];
                            acc += wv * x.data[(i * x.h + iy as usize) * x.w + ix as usize];
                        }
                    }
                }
                plane[oy * ow + ox] = act.apply(acc);
            }
        }
    });
    Map {
        c: conv.out,
        h: oh,
        w: ow,
        data,
    }
}

fn conv_pointwise(x: &Map, conv: &Conv, act: Option<Activation>) -> Map {
    let n = x.h * x.w;
    let mut data = vec![0.0f32; conv.out * n];
    data.par_chunks_mut(n).enumerate().for_each(|(o, plane)| {
        plane.fill(conv.bias[o]);
        let row = &conv.weight[o * conv.inp..(o + 1) * conv.inp];
        for (i, &wv) in row.iter().enumerate() {
            let src = &x.data[i * n..(i + 1) * n];
            for (p, &s) in plane.iter_mut().zip(src) {
                *p += wv * s;
            }
        }
        if let Some(act) = act {
            for p in plane.iter_mut() {
                *p = act.apply(*p);
            }
        }
    });
    Map {
        c: conv.out,
        h: x.h,
        w: x.w,
        data,
    }
}

fn conv_depthwise(x: &Map, conv: &Conv, stride: usize, act: Activation) -> Map {
    let (k, pad) = (conv.k, (conv.k / 2) as isize);
    let (oh, ow) = (out_size(x.h, k, stride), out_size(x.w, k, stride));
    let mut data = vec![0.0f32; x.c * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(c, plane)| {
        let src = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
        let wk = &conv.weight[c * k * k..(c + 1) * k * k];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = conv.bias[c];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        acc += wk[ky * k + kx] * src[iy as usize * x.w + ix as usize];
                    }
                }
                plane[oy * ow + ox] = act.apply(acc);
            }
        }
    });
    Map {
        c: x.c,
        h: oh,
        w: ow,
        data,
    }
}

fn channel_means(x: &Map) -> Vec<f32> {
    let n = x.h * x.w;
    x.data
        .chunks_exact(n)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32)
        .collect()
}

fn dense(conv: &Conv, v: &[f32]) -> Vec<f32> {
    (0..conv.out)
        .map(|o| {
            conv.weight[o * conv.inp..(o + 1) * conv.inp]
                .iter()
                .zip(v)
                .fold(conv.bias[o], |acc, (w, x)| acc + w * x)
        })
        .collect()
}

fn squeeze_excite(x: &mut Map, reduce: &Conv, expand: &Conv, act: Activation) {
    let pooled = channel_means(x);
    let hidden: Vec<f32> = dense(reduce, &pooled).into_iter().map(|v| act.apply(v)).collect();
    let gates: Vec<f32> = dense(expand, &hidden)
        .into_iter()
        .map(|v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    let n = x.h * x.w;
    for (plane, g) in x.data.chunks_exact_mut(n).zip(gates) {
        for v in plane {
            *v *= g;
        }
    }
}

impl Backbone {
    pub fn new(cfg: &BackboneConfig, archive: &WeightArchive) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let stem = fetch(archive, "stem.conv", cfg.stem_channels, 3, 3)?;
        let mut blocks = Vec::new();
        for spec in cfg.blocks() {
            let e = spec.expanded();
            let pre = format!("blocks.{}", spec.index);
            let expand = if spec.expansion != 1 {
                Some(fetch(archive, &format!("{pre}.expand"), e, spec.in_channels, 1)?)
            } else {
                None
            };
            let dw = fetch(archive, &format!("{pre}.dw"), e, 1, spec.kernel)?;
            let se = if spec.squeeze > 0 {
                Some((
                    fetch(archive, &format!("{pre}.se.reduce"), spec.squeeze, e, 1)?,
                    fetch(archive, &format!("{pre}.se.expand"), e, spec.squeeze, 1)?,
                ))
            } else {
                None
            };
            let project = fetch(archive, &format!("{pre}.project"), spec.out_channels, e, 1)?;
            blocks.push(Block {
                spec,
                expand,
                dw,
                se,
                project,
            });
        }
        let head = fetch(archive, "head.conv", cfg.head_channels, cfg.last_channels(), 1)?;
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.head_channels
    }

    /// Stem, MBConv stages, head 1x1 conv, global average pool.
    pub fn forward(&self, t: &Tensor3) -> Result<FeatureVector, FeatureError> {
        let size = self.cfg.input_size;
        if t.channels() != 3 || t.height() != size || t.width() != size {
            return Err(FeatureError::InputShape {
                expected: [3, size, size],
                got: [t.channels(), t.height(), t.width()],
            });
        }
        let act = self.cfg.activation;
        let input = Map {
            c: 3,
            h: t.height(),
            w: t.width(),
            data: t.data().to_vec(),
        };
        let mut x = conv_full(&input, &self.stem, 2, act);
        for b in &self.blocks {
            let expanded = match &b.expand {
                Some(c) => conv_pointwise(&x, c, Some(act)),
                None => Map {
                    c: x.c,
                    h: x.h,
                    w: x.w,
                    data: x.data.clone(),
                },
            };
            let mut y = conv_depthwise(&expanded, &b.dw, b.spec.stride, act);
            if let Some((reduce, expand)) = &b.se {
                squeeze_excite(&mut y, reduce, expand, act);
            }
            let mut out = conv_pointwise(&y, &b.project, None);
            if b.spec.residual() {
                for (o, i) in out.data.iter_mut().zip(&x.data) {
                    *o += i;
                }
            }
            x = out;
        }
        let head = conv_pointwise(&x, &self.head, Some(act));
        FeatureVector::new(channel_means(&head))
    }
}

/// One-shot forward: binds `archive` to `cfg` and runs a single input.
pub fn backbone_forward(t: &Tensor3, cfg: &BackboneConfig, archive: &WeightArchive) -> Result<FeatureVector, FeatureError> {
    Backbone::new(cfg, archive)?.forward(t)
}
