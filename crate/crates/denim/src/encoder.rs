//! The latent-code producer: a small convolutional backbone over the
//! low-resolution stack plus a 1x1 vectorizer head. The head output is
//! GeLU-activated, mean-pooled over space, and reshaped row-major into the
//! k x k latent matrix.
//!
//! Convolution stages are 3x3, stride 2, zero-padded with "same" spatial
//! semantics before the stride (output side = ceil(input/2)), each followed
//! by the exact GeLU.

use crate::dncm::LatentCode;
use crate::error::{Error, Result};
use crate::image::ImageStack;
use crate::matrix::{gelu_prime_scalar, gelu_scalar, Matrix};
use crate::rng::SplitMix64;

/// One 3x3 stride-2 convolution stage. Weight layout is
/// `[ky][kx][cin][cout]`, row-major flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvStage {
    fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; 9 * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }
}

/// Weights of the convolutional backbone and the 1x1 vectorizer head.
/// Head layout: `head_weights[cin][j]` with j in 0..k*k, plus k*k biases.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub k: usize,
    pub stages: Vec<ConvStage>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

/// Channel widths of the default three-stage backbone.
pub const DEFAULT_WIDTHS: [usize; 3] = [16, 32, 64];

impl EncoderParams {
    /// Deterministic initialization: conv and head weights i.i.d. uniform in
    /// [-a, a] with a = sqrt(1/fan_in), biases zero, drawn stage by stage
    /// from a single SplitMix64 stream.
    pub fn init(n_settings: usize, k: usize, widths: &[usize], seed: u64) -> Self {
        assert!(!widths.is_empty(), "need at least one conv stage");
        let mut rng = SplitMix64::new(seed);
        let mut stages = Vec::with_capacity(widths.len());
        let mut in_ch = 3 * n_settings;
        for &out_ch in widths {
            let fan_in = 9 * in_ch;
            let a = (1.0 / fan_in as f64).sqrt();
            let weights = (0..9 * in_ch * out_ch).map(|_| rng.uniform(-a, a)).collect();
            stages.push(ConvStage {
                in_ch,
                out_ch,
                weights,
                bias: vec![0.0; out_ch],
            });
            in_ch = out_ch;
        }
        let a = (1.0 / in_ch as f64).sqrt();
        let head_weights = (0..in_ch * k * k).map(|_| rng.uniform(-a, a)).collect();
        Self {
            k,
            stages,
            head_weights,
            head_bias: vec![0.0; k * k],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stages[0].in_ch
    }

    pub fn last_width(&self) -> usize {
        self.stages.last().unwrap().out_ch
    }

    pub fn parameter_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.weights.len() + s.bias.len())
            .sum::<usize>()
            + self.head_weights.len()
            + self.head_bias.len()
    }
}

/// Gradients of `encode` w.r.t. every encoder tensor; shapes mirror
/// `EncoderParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub stages: Vec<ConvStage>,
    pub head_weights: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(enc: &EncoderParams) -> Self {
        Self {
            stages: enc.stages.iter().map(|s| ConvStage::zeros(s.in_ch, s.out_ch)).collect(),
            head_weights: vec![0.0; enc.head_weights.len()],
            head_bias: vec![0.0; enc.head_bias.len()],
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        for (a, b) in self.stages.iter_mut().zip(&other.stages) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        for (x, y) in self.head_weights.iter_mut().zip(&other.head_weights) {
            *x += y;
        }
        for (x, y) in self.head_bias.iter_mut().zip(&other.head_bias) {
            *x += y;
        }
    }
}

/// Spatial feature map, channel-interleaved like `ImageStack`.
#[derive(Debug, Clone)]
pub(crate) struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub ch: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    fn zeros(h: usize, w: usize, ch: usize) -> Self {
        Self { h, w, ch, data: vec![0.0; h * w * ch] }
    }
}

/// Bilinear resize of every channel independently to a `side` x `side`
/// square, sampling at half-pixel centers with edge clamping.
pub fn downsample(img: &ImageStack, side: usize) -> ImageStack {
    assert!(side >= 1);
    let ch = img.channels();
    let mut out = ImageStack::zeros(side, side, img.settings);
    let sy_scale = img.height as f64 / side as f64;
    let sx_scale = img.width as f64 / side as f64;
    for oy in 0..side {
        let sy = (oy as f64 + 0.5) * sy_scale - 0.5;
        let y0 = sy.floor().max(0.0) as usize;
        let y0 = y0.min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = (sy - y0 as f64).clamp(0.0, 1.0);
        for ox in 0..side {
            let sx = (ox as f64 + 0.5) * sx_scale - 0.5;
            let x0 = sx.floor().max(0.0) as usize;
            let x0 = x0.min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = (sx - x0 as f64).clamp(0.0, 1.0);
            let p00 = img.pixel(y0, x0);
            let p01 = img.pixel(y0, x1);
            let p10 = img.pixel(y1, x0);
            let p11 = img.pixel(y1, x1);
            let base = (oy * side + ox) * ch;
            for c in 0..ch {
                let top = p00[c] * (1.0 - fx) + p01[c] * fx;
                let bot = p10[c] * (1.0 - fx) + p11[c] * fx;
                out.data[base + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn conv_out_side(n: usize) -> usize {
    n.div_ceil(2)
}

/// Forward one conv stage; returns (pre-activation, activation).
fn stage_forward(x: &FeatureMap, s: &ConvStage) -> (FeatureMap, FeatureMap) {
    debug_assert_eq!(x.ch, s.in_ch);
    let oh = conv_out_side(x.h);
    let ow = conv_out_side(x.w);
    let mut pre = FeatureMap::zeros(oh, ow, s.out_ch);
    for oy in 0..oh {
        for ox in 0..ow {
            let out_base = (oy * ow + ox) * s.out_ch;
            let out_px = &mut pre.data[out_base..out_base + s.out_ch];
            out_px.copy_from_slice(&s.bias);
            for ky in 0..3 {
                let iy = 2 * oy + ky;
                if iy == 0 || iy > x.h {
                    continue; // zero padding
                }
                let iy = iy - 1;
                for kx in 0..3 {
                    let ix = 2 * ox + kx;
                    if ix == 0 || ix > x.w {
                        continue;
                    }
                    let ix = ix - 1;
                    let in_base = (iy * x.w + ix) * x.ch;
                    for cin in 0..s.in_ch {
                        let xv = x.data[in_base + cin];
                        if xv == 0.0 {
                            continue;
                        }
                        let wbase = ((ky * 3 + kx) * s.in_ch + cin) * s.out_ch;
                        let wrow = &s.weights[wbase..wbase + s.out_ch];
                        for (o, w) in out_px.iter_mut().zip(wrow) {
                            *o += xv * w;
                        }
                    }
                }
            }
        }
    }
    let mut act = pre.clone();
    for v in &mut act.data {
        *v = gelu_scalar(*v);
    }
    (pre, act)
}

struct ForwardTrace {
    /// Input to stage i (inputs[0] is the image itself).
    inputs: Vec<FeatureMap>,
    /// Pre-activation of stage i.
    pre: Vec<FeatureMap>,
    /// Pre-activation of the 1x1 head.
    head_pre: FeatureMap,
}

fn forward_trace(lr: &ImageStack, enc: &EncoderParams) -> Result<ForwardTrace> {
    if lr.channels() != enc.in_channels() {
        return Err(Error::Dimension {
            context: "encoder input",
            expected: format!("{} channels", enc.in_channels()),
            got: format!("{} channels", lr.channels()),
        });
    }
    let mut inputs = Vec::with_capacity(enc.stages.len());
    let mut pres = Vec::with_capacity(enc.stages.len());
    let mut cur = FeatureMap {
        h: lr.height,
        w: lr.width,
        ch: lr.channels(),
        data: lr.data.clone(),
    };
    for s in &enc.stages {
        let (pre, act) = stage_forward(&cur, s);
        inputs.push(cur);
        pres.push(pre);
        cur = act;
    }
    // 1x1 head on the final activation.
    let k2 = enc.k * enc.k;
    let cin = enc.last_width();
    let mut head_pre = FeatureMap::zeros(cur.h, cur.w, k2);
    for p in 0..cur.h * cur.w {
        let x = &cur.data[p * cin..(p + 1) * cin];
        let out = &mut head_pre.data[p * k2..(p + 1) * k2];
        out.copy_from_slice(&enc.head_bias);
        for (c, &xv) in x.iter().enumerate() {
            let wrow = &enc.head_weights[c * k2..(c + 1) * k2];
            for (o, w) in out.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
    }
    inputs.push(cur);
    Ok(ForwardTrace { inputs, pre: pres, head_pre })
}

/// Mean-pool a feature map over space.
pub(crate) fn pool_mean(f: &FeatureMap) -> Vec<f64> {
    let n = (f.h * f.w) as f64;
    let mut out = vec![0.0; f.ch];
    for p in 0..f.h * f.w {
        for c in 0..f.ch {
            out[c] += f.data[p * f.ch + c];
        }
    }
    for v in &mut out {
        *v /= n;
    }
    out
}

/// Run the backbone and head: conv stages, 1x1 head, GeLU, global average
/// pool, row-major reshape into the k x k latent matrix.
pub fn encode(lr: &ImageStack, enc: &EncoderParams) -> Result<LatentCode> {
    let trace = forward_trace(lr, enc)?;
    let activated = FeatureMap {
        h: trace.head_pre.h,
        w: trace.head_pre.w,
        ch: trace.head_pre.ch,
        data: trace.head_pre.data.iter().map(|&v| gelu_scalar(v)).collect(),
    };
    let pooled = pool_mean(&activated);
    let d = Matrix::from_vec(enc.k, enc.k, pooled)?;
    LatentCode::new(d)
}

/// Exact reverse-mode gradients of `encode` w.r.t. every encoder tensor,
/// given the upstream gradient w.r.t. the latent matrix d.
pub fn encode_grad(
    lr: &ImageStack,
    enc: &EncoderParams,
    upstream: &Matrix,
) -> Result<EncoderGrads> {
    if upstream.shape() != (enc.k, enc.k) {
        return Err(Error::Dimension {
            context: "encode_grad upstream",
            expected: format!("{}x{}", enc.k, enc.k),
            got: format!("{}x{}", upstream.rows(), upstream.cols()),
        });
    }
    let trace = forward_trace(lr, enc)?;
    let mut grads = EncoderGrads::zeros_like(enc);

    // Pool + head backward.
    let hp = &trace.head_pre;
    let inv_n = 1.0 / (hp.h * hp.w) as f64;
    let k2 = enc.k * enc.k;
    let cin = enc.last_width();
    let feat = &trace.inputs[enc.stages.len()];
    let mut g_feat = FeatureMap::zeros(feat.h, feat.w, cin);
    for p in 0..hp.h * hp.w {
        let x = &feat.data[p * cin..(p + 1) * cin];
        for j in 0..k2 {
            let g_pre = upstream.data()[j] * inv_n * gelu_prime_scalar(hp.data[p * k2 + j]);
            if g_pre == 0.0 {
                continue;
            }
            grads.head_bias[j] += g_pre;
            for (c, &xv) in x.iter().enumerate() {
                grads.head_weights[c * k2 + j] += xv * g_pre;
                g_feat.data[p * cin + c] += enc.head_weights[c * k2 + j] * g_pre;
            }
        }
    }

    // Conv stages, last to first.
    let mut g_out = g_feat;
    for (si, s) in enc.stages.iter().enumerate().rev() {
        let x = &trace.inputs[si];
        let pre = &trace.pre[si];
        let gs = &mut grads.stages[si];
        let mut g_in = FeatureMap::zeros(x.h, x.w, x.ch);
        let (oh, ow) = (pre.h, pre.w);
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = (oy * ow + ox) * s.out_ch;
                for cout in 0..s.out_ch {
                    let g = g_out.data[out_base + cout]
                        * gelu_prime_scalar(pre.data[out_base + cout]);
                    if g == 0.0 {
                        continue;
                    }
                    gs.bias[cout] += g;
                    for ky in 0..3 {
                        let iy = 2 * oy + ky;
                        if iy == 0 || iy > x.h {
                            continue;
                        }
                        let iy = iy - 1;
                        for kx in 0..3 {
                            let ix = 2 * ox + kx;
                            if ix == 0 || ix > x.w {
                                continue;
                            }
                            let ix = ix - 1;
                            let in_base = (iy * x.w + ix) * x.ch;
                            for cin in 0..s.in_ch {
                                let widx = ((ky * 3 + kx) * s.in_ch + cin) * s.out_ch + cout;
                                gs.weights[widx] += x.data[in_base + cin] * g;
                                g_in.data[in_base + cin] += s.weights[widx] * g;
                            }
                        }
                    }
                }
            }
        }
        g_out = g_in;
    }
    Ok(grads)
}
