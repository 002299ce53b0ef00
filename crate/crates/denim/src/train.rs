//! End-to-end optimization of the projection matrices (and optionally the
//! encoder) under the squared-Frobenius reconstruction loss, with AdamW and
//! a synthetic von Kries multi-WB data generator.

use crate::dncm::{DncmParams, LatentCode};
use crate::encoder::{downsample, encode, encode_grad, EncoderGrads, EncoderParams, DEFAULT_WIDTHS};
use crate::error::{Error, Result};
use crate::image::{CanonicalImage, ImageStack};
use crate::matrix::{matmul, Matrix};
use crate::rng::SplitMix64;

/// Optimizer and pipeline configuration for a training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub low_res_side: usize,
    pub k: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    /// Channel widths of the encoder backbone.
    pub encoder_widths: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            batch_size: 16,
            steps: 1000,
            low_res_side: 256,
            k: 32,
            seed: 0,
            freeze_encoder: false,
            encoder_widths: DEFAULT_WIDTHS.to_vec(),
        }
    }
}

/// One training example: a multi-setting stack and its ground-truth AWB
/// image.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub stack: ImageStack,
    pub target: CanonicalImage,
}

/// Per-setting RGB gain triplets for the diagonal (von Kries) illuminant
/// simulator, keyed by setting letter.
#[derive(Debug, Clone)]
pub struct WbSimConfig {
    gains: Vec<(char, [f64; 3])>,
}

impl Default for WbSimConfig {
    fn default() -> Self {
        // Plausible rendition gains relative to a daylight-neutral image:
        // warm illuminants push red up and blue down, cool ones the reverse.
        Self {
            gains: vec![
                ('t', [1.35, 1.00, 0.62]),
                ('f', [1.15, 1.02, 0.82]),
                ('d', [1.00, 1.00, 1.00]),
                ('c', [0.94, 1.00, 1.10]),
                ('s', [0.88, 0.98, 1.22]),
            ],
        }
    }
}

impl WbSimConfig {
    pub fn new(gains: Vec<(char, [f64; 3])>) -> Self {
        assert!(gains.iter().all(|(_, g)| g.iter().all(|&v| v > 0.0)));
        Self { gains }
    }

    pub fn gain(&self, letter: char) -> Result<[f64; 3]> {
        self.gains
            .iter()
            .find(|(l, _)| *l == letter)
            .map(|(_, g)| *g)
            .ok_or(Error::UnknownSetting(letter))
    }
}

/// Squared Frobenius norm of the difference, summed over all pixels and
/// channels. No averaging.
pub fn loss(pred: &CanonicalImage, gt: &CanonicalImage) -> Result<f64> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Dimension {
            context: "loss images",
            expected: format!("{}x{}", gt.height, gt.width),
            got: format!("{}x{}", pred.height, pred.width),
        });
    }
    Ok(pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Build a stack whose channel-block j is `base` scaled per channel by
/// setting j's gain triplet, clamped to [0, 1]; the target is `base`.
pub fn synthesize_sample(
    base: &CanonicalImage,
    sim: &WbSimConfig,
    settings: &[char],
) -> Result<TrainSample> {
    let n = settings.len();
    let gains: Vec<[f64; 3]> = settings
        .iter()
        .map(|&l| sim.gain(l))
        .collect::<Result<_>>()?;
    let mut stack = ImageStack::zeros(base.height, base.width, n);
    let pixels = base.height * base.width;
    for p in 0..pixels {
        let px = &base.data[p * 3..p * 3 + 3];
        let out = &mut stack.data[p * 3 * n..(p + 1) * 3 * n];
        for (j, g) in gains.iter().enumerate() {
            for c in 0..3 {
                out[j * 3 + c] = (px[c] * g[c]).clamp(0.0, 1.0);
            }
        }
    }
    Ok(TrainSample {
        stack,
        target: base.clone(),
    })
}

/// Gradients of the loss w.r.t. the six projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DncmGrads {
    pub pc: Matrix,
    pub qc: Matrix,
    pub rc: Matrix,
    pub pa: Matrix,
    pub qa: Matrix,
    pub ra: Matrix,
}

impl DncmGrads {
    pub fn zeros_like(p: &DncmParams) -> Self {
        Self {
            pc: Matrix::zeros(p.pc.rows(), p.pc.cols()),
            qc: Matrix::zeros(p.qc.rows(), p.qc.cols()),
            rc: Matrix::zeros(p.rc.rows(), p.rc.cols()),
            pa: Matrix::zeros(p.pa.rows(), p.pa.cols()),
            qa: Matrix::zeros(p.qa.rows(), p.qa.cols()),
            ra: Matrix::zeros(p.ra.rows(), p.ra.cols()),
        }
    }

    fn accumulate(&mut self, other: &DncmGrads) {
        for (a, b) in [
            (&mut self.pc, &other.pc),
            (&mut self.qc, &other.qc),
            (&mut self.rc, &other.rc),
            (&mut self.pa, &other.pa),
            (&mut self.qa, &other.qa),
            (&mut self.ra, &other.ra),
        ] {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// Gradients of one batch. The encoder entry is absent (not zero) when the
/// encoder is frozen.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dncm: DncmGrads,
    pub encoder: Option<EncoderGrads>,
    pub loss_sum: f64,
}

/// Matrix-level forward pass for one sample: unfold, the canonical chain
/// with the latent injected, then the AWB chain. Intermediates are kept for
/// the backward pass.
struct SampleTrace {
    a: Matrix,      // HW x 3N (unfolded stack)
    ap: Matrix,     // a . Pc
    ad: Matrix,     // ap . d
    aq: Matrix,     // ad . Qc
    canon: Matrix,  // aq . Rc
    cp: Matrix,     // canon . Pa
    cq: Matrix,     // cp . Qa
    pred: Matrix,   // cq . Ra
}

fn forward_sample(stack: &ImageStack, d: &LatentCode, p: &DncmParams) -> Result<SampleTrace> {
    let a = Matrix::from_vec(
        stack.height * stack.width,
        stack.channels(),
        stack.data.clone(),
    )?;
    let ap = matmul(&a, &p.pc)?;
    let ad = matmul(&ap, &d.d)?;
    let aq = matmul(&ad, &p.qc)?;
    let canon = matmul(&aq, &p.rc)?;
    let cp = matmul(&canon, &p.pa)?;
    let cq = matmul(&cp, &p.qa)?;
    let pred = matmul(&cq, &p.ra)?;
    Ok(SampleTrace { a, ap, ad, aq, canon, cp, cq, pred })
}

/// Reverse pass for one sample. Returns the projection-matrix gradients, the
/// gradient w.r.t. the latent matrix, and the sample loss.
fn backward_sample(
    trace: &SampleTrace,
    target: &Matrix,
    d: &LatentCode,
    p: &DncmParams,
) -> Result<(DncmGrads, Matrix, f64)> {
    let mut g_pred = trace.pred.clone();
    let mut loss_sum = 0.0;
    for (g, t) in g_pred.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss_sum += diff * diff;
        *g = 2.0 * diff;
    }

    let g_ra = matmul(&trace.cq.transpose(), &g_pred)?;
    let g_cq = matmul(&g_pred, &p.ra.transpose())?;
    let g_qa = matmul(&trace.cp.transpose(), &g_cq)?;
    let g_cp = matmul(&g_cq, &p.qa.transpose())?;
    let g_pa = matmul(&trace.canon.transpose(), &g_cp)?;
    let g_canon = matmul(&g_cp, &p.pa.transpose())?;
    let g_rc = matmul(&trace.aq.transpose(), &g_canon)?;
    let g_aq = matmul(&g_canon, &p.rc.transpose())?;
    let g_qc = matmul(&trace.ad.transpose(), &g_aq)?;
    let g_ad = matmul(&g_aq, &p.qc.transpose())?;
    let g_d = matmul(&trace.ap.transpose(), &g_ad)?;
    let g_ap = matmul(&g_ad, &d.d.transpose())?;
    let g_pc = matmul(&trace.a.transpose(), &g_ap)?;

    Ok((
        DncmGrads { pc: g_pc, qc: g_qc, rc: g_rc, pa: g_pa, qa: g_qa, ra: g_ra },
        g_d,
        loss_sum,
    ))
}

/// Exact gradients of the summed batch loss for all trainable tensors.
/// Samples are processed and accumulated in index order, so the result is
/// deterministic.
pub fn backward(
    batch: &[&TrainSample],
    params: &DncmParams,
    enc: &EncoderParams,
    low_res_side: usize,
    freeze_encoder: bool,
) -> Result<Gradients> {
    let mut dncm = DncmGrads::zeros_like(params);
    let mut enc_grads = if freeze_encoder {
        None
    } else {
        Some(EncoderGrads::zeros_like(enc))
    };
    let mut loss_sum = 0.0;
    for sample in batch {
        let lowres = downsample(&sample.stack, low_res_side);
        let d = encode(&lowres, enc)?;
        let trace = forward_sample(&sample.stack, &d, params)?;
        let target = Matrix::from_vec(
            sample.target.height * sample.target.width,
            3,
            sample.target.data.clone(),
        )?;
        let (g, g_d, l) = backward_sample(&trace, &target, &d, params)?;
        dncm.accumulate(&g);
        loss_sum += l;
        if let Some(acc) = enc_grads.as_mut() {
            acc.accumulate(&encode_grad(&lowres, enc, &g_d)?);
        }
    }
    Ok(Gradients { dncm, encoder: enc_grads, loss_sum })
}

/// First and second moment buffers, one pair per trainable tensor, plus the
/// shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One decoupled-weight-decay Adam step over a set of tensors:
/// theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta.
pub fn adamw_step(
    tensors: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    assert_eq!(tensors.len(), grads.len());
    assert_eq!(tensors.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((theta, g), (m, v)) in tensors
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!(theta.len(), g.len());
        for i in 0..theta.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            theta[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * theta[i];
        }
    }
}

/// One point of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss_sum: f64,
    pub loss_per_pixel: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: DncmParams,
    pub encoder: EncoderParams,
    pub curve: Vec<LossPoint>,
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,loss_sum,loss_per_pixel\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss_sum, p.loss_per_pixel));
    }
    out
}

/// Run `cfg.steps` optimizer steps over seeded-shuffled mini-batches with
/// wraparound. The latent of each sample is recomputed every step unless the
/// encoder is frozen, in which case it is computed once and cached.
pub fn train(dataset: &[TrainSample], cfg: &TrainConfig) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_settings = dataset[0].stack.settings;
    let mut seeder = SplitMix64::new(cfg.seed);
    let mut params = DncmParams::init(cfg.k, n_settings, seeder.next_u64())?;
    let enc = EncoderParams::init(n_settings, cfg.k, &cfg.encoder_widths, seeder.next_u64());
    let mut enc = enc;
    let mut shuffle_rng = SplitMix64::new(seeder.next_u64());

    // Low-res inputs never change; latents are additionally cacheable when
    // the encoder is frozen.
    let lowres: Vec<ImageStack> = dataset
        .iter()
        .map(|s| downsample(&s.stack, cfg.low_res_side))
        .collect();
    let frozen_latents: Option<Vec<LatentCode>> = if cfg.freeze_encoder {
        Some(lowres.iter().map(|lr| encode(lr, &enc)).collect::<Result<_>>()?)
    } else {
        None
    };
    let targets: Vec<Matrix> = dataset
        .iter()
        .map(|s| Matrix::from_vec(s.target.height * s.target.width, 3, s.target.data.clone()))
        .collect::<Result<_>>()?;

    let dncm_sizes = [
        params.pc.data().len(),
        params.qc.data().len(),
        params.rc.data().len(),
        params.pa.data().len(),
        params.qa.data().len(),
        params.ra.data().len(),
    ];
    let mut dncm_state = AdamState::new(&dncm_sizes);
    let mut enc_state = if cfg.freeze_encoder {
        None
    } else {
        let mut sizes: Vec<usize> = Vec::new();
        for s in &enc.stages {
            sizes.push(s.weights.len());
            sizes.push(s.bias.len());
        }
        sizes.push(enc.head_weights.len());
        sizes.push(enc.head_bias.len());
        Some(AdamState::new(&sizes))
    };

    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        // Next batch, reshuffling with wraparound when the epoch runs out.
        let mut batch_idx = Vec::with_capacity(cfg.batch_size);
        while batch_idx.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..dataset.len()).collect();
                shuffle_rng.shuffle(&mut order);
            }
            batch_idx.push(order.pop().unwrap());
        }

        let mut grads = DncmGrads::zeros_like(&params);
        let mut enc_grads = if cfg.freeze_encoder {
            None
        } else {
            Some(EncoderGrads::zeros_like(&enc))
        };
        let mut loss_sum = 0.0;
        let mut batch_pixels = 0usize;
        for &i in &batch_idx {
            let sample = &dataset[i];
            let d = match &frozen_latents {
                Some(ds) => ds[i].clone(),
                None => encode(&lowres[i], &enc)?,
            };
            let trace = forward_sample(&sample.stack, &d, &params)?;
            let (g, g_d, l) = backward_sample(&trace, &targets[i], &d, &params)?;
            grads.accumulate(&g);
            loss_sum += l;
            batch_pixels += sample.stack.height * sample.stack.width;
            if let Some(acc) = enc_grads.as_mut() {
                acc.accumulate(&encode_grad(&lowres[i], &enc, &g_d)?);
            }
        }

        adamw_step(
            &mut [
                params.pc.data_mut(),
                params.qc.data_mut(),
                params.rc.data_mut(),
                params.pa.data_mut(),
                params.qa.data_mut(),
                params.ra.data_mut(),
            ],
            &[
                grads.pc.data(),
                grads.qc.data(),
                grads.rc.data(),
                grads.pa.data(),
                grads.qa.data(),
                grads.ra.data(),
            ],
            &mut dncm_state,
            cfg,
        );
        if let (Some(eg), Some(es)) = (enc_grads.as_ref(), enc_state.as_mut()) {
            let mut tensors: Vec<&mut [f64]> = Vec::new();
            let mut gs: Vec<&[f64]> = Vec::new();
            for (s, g) in enc.stages.iter_mut().zip(&eg.stages) {
                tensors.push(&mut s.weights);
                gs.push(&g.weights);
                tensors.push(&mut s.bias);
                gs.push(&g.bias);
            }
            tensors.push(&mut enc.head_weights);
            gs.push(&eg.head_weights);
            tensors.push(&mut enc.head_bias);
            gs.push(&eg.head_bias);
            adamw_step(&mut tensors, &gs, es, cfg);
        }

        curve.push(LossPoint {
            step,
            loss_sum,
            loss_per_pixel: loss_sum / batch_pixels as f64,
        });
    }
    Ok(TrainResult { params, encoder: enc, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dncm::dncm_c;

    fn random_image(h: usize, w: usize, rng: &mut SplitMix64) -> CanonicalImage {
        CanonicalImage::new(h, w, (0..h * w * 3).map(|_| rng.next_f64()).collect()).unwrap()
    }

    fn random_stack(h: usize, w: usize, n: usize, rng: &mut SplitMix64) -> ImageStack {
        ImageStack::new(h, w, n, (0..h * w * 3 * n).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = CanonicalImage::new(1, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let b = CanonicalImage::new(1, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
        assert_eq!(loss(&a, &b).unwrap(), 3.0);

        let mut rng = SplitMix64::new(1);
        let x = random_image(3, 2, &mut rng);
        let y = random_image(3, 2, &mut rng);
        let mut want = 0.0;
        for i in 0..x.data.len() {
            want += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
        }
        assert!((loss(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_dim_mismatch() {
        let a = CanonicalImage::zeros(1, 2);
        let b = CanonicalImage::zeros(2, 1);
        assert!(loss(&a, &b).is_err());
    }

    #[test]
    fn synthesize_unity_gains_copy_base() {
        let mut rng = SplitMix64::new(2);
        let base = random_image(2, 2, &mut rng);
        let sim = WbSimConfig::new(vec![('t', [1.0; 3]), ('d', [1.0; 3])]);
        let s = synthesize_sample(&base, &sim, &['t', 'd']).unwrap();
        for p in 0..4 {
            let px = &base.data[p * 3..p * 3 + 3];
            assert_eq!(&s.stack.data[p * 6..p * 6 + 3], px);
            assert_eq!(&s.stack.data[p * 6 + 3..p * 6 + 6], px);
        }
        assert_eq!(s.target, base);
    }

    #[test]
    fn synthesize_hand_gain() {
        let base = CanonicalImage::new(1, 1, vec![0.2, 0.2, 0.2]).unwrap();
        let sim = WbSimConfig::new(vec![('x', [2.0, 1.0, 0.5])]);
        let s = synthesize_sample(&base, &sim, &['x']).unwrap();
        assert_eq!(s.stack.data, vec![0.4, 0.2, 0.1]);
    }

    #[test]
    fn synthesize_unknown_letter_is_error() {
        let base = CanonicalImage::zeros(1, 1);
        let sim = WbSimConfig::default();
        assert!(matches!(
            synthesize_sample(&base, &sim, &['z']),
            Err(Error::UnknownSetting('z'))
        ));
    }

    #[test]
    fn synthesize_inverse_gain_recovers_base() {
        let mut rng = SplitMix64::new(3);
        // base small enough that no gain clamps
        let base = CanonicalImage::new(
            2,
            2,
            (0..12).map(|_| rng.next_f64() * 0.4).collect(),
        )
        .unwrap();
        let sim = WbSimConfig::default();
        let letters = ['t', 'd', 's'];
        let s = synthesize_sample(&base, &sim, &letters).unwrap();
        for (j, &l) in letters.iter().enumerate() {
            let g = sim.gain(l).unwrap();
            for p in 0..4 {
                for c in 0..3 {
                    let v = s.stack.data[p * 9 + j * 3 + c] / g[c];
                    assert!((v - base.data[p * 3 + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_loss_batch_gives_zero_dncm_grads() {
        // Identity construction with target equal to the first setting block
        // reaches zero loss, so every gradient vanishes.
        let mut rng = SplitMix64::new(4);
        let base = random_image(3, 3, &mut rng);
        let stack = ImageStack::from_canonical(&base);
        let sample = TrainSample { stack, target: base };
        let params = DncmParams::identity(4, 1).unwrap();
        let d = LatentCode::identity(4);
        let trace = forward_sample(&sample.stack, &d, &params).unwrap();
        let target = Matrix::from_vec(9, 3, sample.target.data.clone()).unwrap();
        let (g, g_d, l) = backward_sample(&trace, &target, &d, &params).unwrap();
        assert!(l.abs() < 1e-20);
        for m in [&g.pc, &g.qc, &g.rc, &g.pa, &g.qa, &g.ra, &g_d] {
            assert!(m.data().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn dncm_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(5);
        let stack = random_stack(2, 2, 2, &mut rng);
        let target = random_image(2, 2, &mut rng);
        let params = DncmParams::init(4, 2, 6).unwrap();
        let d = LatentCode::new(Matrix::from_vec(
            4,
            4,
            (0..16).map(|_| rng.uniform(-0.5, 0.5)).collect(),
        ).unwrap())
        .unwrap();
        let target_m = Matrix::from_vec(4, 3, target.data.clone()).unwrap();

        let trace = forward_sample(&stack, &d, &params).unwrap();
        let (grads, g_d, _) = backward_sample(&trace, &target_m, &d, &params).unwrap();

        let loss_of = |p: &DncmParams, dd: &LatentCode| -> f64 {
            let t = forward_sample(&stack, dd, p).unwrap();
            t.pred
                .data()
                .iter()
                .zip(target_m.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };

        let h = 1e-5;
        let fields: [(fn(&DncmParams) -> &Matrix, fn(&mut DncmParams) -> &mut Matrix, &Matrix); 6] = [
            (|p| &p.pc, |p| &mut p.pc, &grads.pc),
            (|p| &p.qc, |p| &mut p.qc, &grads.qc),
            (|p| &p.rc, |p| &mut p.rc, &grads.rc),
            (|p| &p.pa, |p| &mut p.pa, &grads.pa),
            (|p| &p.qa, |p| &mut p.qa, &grads.qa),
            (|p| &p.ra, |p| &mut p.ra, &grads.ra),
        ];
        for (getter, setter, analytic) in fields {
            let len = getter(&params).data().len();
            for _ in 0..10 {
                let i = rng.next_index(len);
                let mut pp = params.clone();
                setter(&mut pp).data_mut()[i] += h;
                let mut pm = params.clone();
                setter(&mut pm).data_mut()[i] -= h;
                let fd = (loss_of(&pp, &d) - loss_of(&pm, &d)) / (2.0 * h);
                let got = analytic.data()[i];
                let denom = fd.abs().max(1e-7);
                assert!(
                    (got - fd).abs() / denom < 1e-4 || (got - fd).abs() < 1e-7,
                    "analytic {} vs fd {}",
                    got,
                    fd
                );
            }
        }
        // latent gradient too
        for _ in 0..10 {
            let i = rng.next_index(16);
            let mut dp = d.clone();
            dp.d.data_mut()[i] += h;
            let mut dm = d.clone();
            dm.d.data_mut()[i] -= h;
            let fd = (loss_of(&params, &dp) - loss_of(&params, &dm)) / (2.0 * h);
            let got = g_d.data()[i];
            let denom = fd.abs().max(1e-7);
            assert!((got - fd).abs() / denom < 1e-4 || (got - fd).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_reports_encoder_grads_absent_when_frozen() {
        let mut rng = SplitMix64::new(7);
        let sample = TrainSample {
            stack: random_stack(4, 4, 1, &mut rng),
            target: random_image(4, 4, &mut rng),
        };
        let params = DncmParams::init(4, 1, 1).unwrap();
        let enc = EncoderParams::init(1, 4, &[4], 2);
        let frozen = backward(&[&sample], &params, &enc, 4, true).unwrap();
        assert!(frozen.encoder.is_none());
        let live = backward(&[&sample], &params, &enc, 4, false).unwrap();
        assert!(live.encoder.is_some());
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_noop() {
        let mut theta = vec![1.0, -2.0, 0.5];
        let grads = vec![0.0; 3];
        let mut state = AdamState::new(&[3]);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        adamw_step(&mut [&mut theta], &[&grads], &mut state, &cfg);
        assert_eq!(theta, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adamw_first_step_hand_value() {
        // theta=1, g=1, lr=1e-4, wd=0: mhat=1, vhat=1, so
        // theta' = 1 - 1e-4 / (1 + eps).
        let mut theta = vec![1.0];
        let grads = vec![1.0];
        let mut state = AdamState::new(&[1]);
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
        adamw_step(&mut [&mut theta], &[&grads], &mut state, &cfg);
        let want = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((theta[0] - want).abs() < 1e-15, "{}", theta[0]);
        assert!((theta[0] - 0.9999).abs() < 1e-7);
    }

    #[test]
    fn adamw_lr_zero_changes_nothing() {
        let mut theta = vec![0.3, -0.7];
        let grads = vec![1.5, -2.5];
        let mut state = AdamState::new(&[2]);
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        adamw_step(&mut [&mut theta], &[&grads], &mut state, &cfg);
        assert_eq!(theta, vec![0.3, -0.7]);
    }

    fn identity_task_dataset(rng: &mut SplitMix64, count: usize) -> Vec<TrainSample> {
        (0..count)
            .map(|_| {
                let base = random_image(4, 4, rng);
                TrainSample {
                    stack: ImageStack::from_canonical(&base),
                    target: base,
                }
            })
            .collect()
    }

    #[test]
    fn train_steps_zero_returns_init_params() {
        let mut rng = SplitMix64::new(8);
        let dataset = identity_task_dataset(&mut rng, 2);
        let cfg = TrainConfig {
            steps: 0,
            k: 4,
            low_res_side: 4,
            freeze_encoder: true,
            encoder_widths: vec![4],
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&dataset, &cfg).unwrap();
        let mut seeder = SplitMix64::new(3);
        let init = DncmParams::init(4, 1, seeder.next_u64()).unwrap();
        assert_eq!(out.params, init);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn train_empty_dataset_is_error() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(&[], &cfg), Err(Error::EmptyDataset)));
    }

    #[test]
    fn train_is_deterministic() {
        let mut rng = SplitMix64::new(9);
        let dataset = identity_task_dataset(&mut rng, 3);
        let cfg = TrainConfig {
            steps: 5,
            k: 4,
            batch_size: 2,
            low_res_side: 4,
            encoder_widths: vec![4],
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&dataset, &cfg).unwrap();
        let b = train(&dataset, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn freeze_leaves_encoder_bitwise_unchanged() {
        let mut rng = SplitMix64::new(10);
        let dataset = identity_task_dataset(&mut rng, 2);
        let cfg = TrainConfig {
            steps: 8,
            k: 4,
            batch_size: 2,
            low_res_side: 4,
            freeze_encoder: true,
            encoder_widths: vec![4],
            seed: 12,
            ..TrainConfig::default()
        };
        let out = train(&dataset, &cfg).unwrap();
        let mut seeder = SplitMix64::new(12);
        let _ = seeder.next_u64();
        let init_enc = EncoderParams::init(1, 4, &[4], seeder.next_u64());
        assert_eq!(out.encoder, init_enc);
    }

    #[test]
    fn identity_task_loss_decreases() {
        // Full-batch training on an identity-solvable task: loss should drop
        // monotonically over the first 50 steps in at least 9 of 10 seeds.
        let mut monotone = 0;
        for seed in 0..10u64 {
            let mut rng = SplitMix64::new(100 + seed);
            let dataset = identity_task_dataset(&mut rng, 1);
            let cfg = TrainConfig {
                steps: 50,
                k: 4,
                batch_size: 1,
                lr: 1e-3,
                weight_decay: 0.0,
                low_res_side: 4,
                freeze_encoder: true,
                encoder_widths: vec![4],
                seed,
                ..TrainConfig::default()
            };
            let out = train(&dataset, &cfg).unwrap();
            let ok = out
                .curve
                .windows(2)
                .all(|w| w[1].loss_sum <= w[0].loss_sum + 1e-12);
            if ok {
                monotone += 1;
            }
        }
        assert!(monotone >= 9, "monotone in {}/10 runs", monotone);
    }

    #[test]
    fn trained_params_apply_via_engine() {
        // The trainer's matrix-level forward and the engine's per-pixel path
        // compute the same function.
        let mut rng = SplitMix64::new(13);
        let stack = random_stack(3, 3, 2, &mut rng);
        let params = DncmParams::init(4, 2, 14).unwrap();
        let d = LatentCode::new(Matrix::from_vec(
            4,
            4,
            (0..16).map(|_| rng.uniform(-0.5, 0.5)).collect(),
        ).unwrap())
        .unwrap();
        let trace = forward_sample(&stack, &d, &params).unwrap();
        let engine = dncm_c(&stack, &d, &params, 1).unwrap();
        for (a, b) in trace.canon.data().iter().zip(&engine.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
