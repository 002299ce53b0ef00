//! End-to-end inference assembly (stack -> latent -> canonical -> AWB) and
//! the efficiency benchmark harness comparing the naive per-pixel chain with
//! precomposed inference.

use crate::dncm::{
    apply_map_canonical, apply_map_stack, dncm_a, dncm_c, precompose_a, precompose_c, DncmParams,
    LatentCode,
};
use crate::encoder::{downsample, encode, EncoderParams};
use crate::error::{Error, Result};
use crate::image::{CanonicalImage, ImageStack};
use crate::matrix::mul_count;
use crate::rng::SplitMix64;
use std::time::Instant;

/// The five supported white-balance setting letters: tungsten, fluorescent,
/// daylight, cloudy, shade.
pub const SETTING_LETTERS: [char; 5] = ['t', 'f', 'd', 'c', 's'];

/// Letters must come from the supported set, be non-empty, and contain no
/// duplicates.
pub fn validate_settings(letters: &[char]) -> Result<()> {
    if letters.is_empty() {
        return Err(Error::Dimension {
            context: "settings",
            expected: "at least one setting letter".to_string(),
            got: "none".to_string(),
        });
    }
    for (i, &l) in letters.iter().enumerate() {
        if !SETTING_LETTERS.contains(&l) {
            return Err(Error::UnknownSetting(l));
        }
        if letters[..i].contains(&l) {
            return Err(Error::DuplicateSetting(l));
        }
    }
    Ok(())
}

/// Inference-side configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub settings: Vec<char>,
    pub low_res_side: usize,
    pub use_precompose: bool,
    pub threads: usize,
}

impl PipelineConfig {
    pub fn new(
        settings: Vec<char>,
        low_res_side: usize,
        use_precompose: bool,
        threads: usize,
    ) -> Result<Self> {
        validate_settings(&settings)?;
        Ok(Self { settings, low_res_side, use_precompose, threads })
    }
}

/// Channel-interleave per-setting images, in the given order, into a stack.
pub fn assemble_stack(images: &[&CanonicalImage], order: &[char]) -> Result<ImageStack> {
    validate_settings(order)?;
    if images.len() != order.len() {
        return Err(Error::Dimension {
            context: "assemble_stack",
            expected: format!("{} images for settings {:?}", order.len(), order),
            got: format!("{} images", images.len()),
        });
    }
    let (h, w) = (images[0].height, images[0].width);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::Dimension {
                context: "assemble_stack",
                expected: format!("{}x{}", h, w),
                got: format!("{}x{}", img.height, img.width),
            });
        }
    }
    let n = images.len();
    let mut stack = ImageStack::zeros(h, w, n);
    for p in 0..h * w {
        let out = &mut stack.data[p * 3 * n..(p + 1) * 3 * n];
        for (j, img) in images.iter().enumerate() {
            out[j * 3..j * 3 + 3].copy_from_slice(&img.data[p * 3..p * 3 + 3]);
        }
    }
    Ok(stack)
}

/// Both outputs of the full pipeline, plus the latent it ran under.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub canonical: CanonicalImage,
    pub awb: CanonicalImage,
    pub latent: LatentCode,
}

/// Run both mapping stages under an externally supplied latent.
pub fn run_pipeline_with_latent(
    stack: &ImageStack,
    d: &LatentCode,
    params: &DncmParams,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let (canonical, awb) = if cfg.use_precompose {
        let map_c = precompose_c(d, params)?;
        let canonical = apply_map_stack(stack, &map_c, cfg.threads)?;
        let map_a = precompose_a(params)?;
        let awb = apply_map_canonical(&canonical, &map_a, cfg.threads)?;
        (canonical, awb)
    } else {
        let canonical = dncm_c(stack, d, params, cfg.threads)?;
        let awb = dncm_a(&canonical, params, cfg.threads)?;
        (canonical, awb)
    };
    Ok(PipelineOutput { canonical, awb, latent: d.clone() })
}

/// Full pipeline: downsample the stack, encode the latent, then map to the
/// canonical and AWB images.
pub fn run_pipeline(
    stack: &ImageStack,
    params: &DncmParams,
    enc: &EncoderParams,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let lowres = downsample(stack, cfg.low_res_side);
    let d = encode(&lowres, enc)?;
    run_pipeline_with_latent(stack, &d, params, cfg)
}

/// Per-pixel multiply count of the naive canonical chain
/// (row . Pc . d . Qc . Rc).
pub fn naive_muls_per_pixel(n_settings: usize, k: usize) -> u64 {
    mul_count(&[(1, 3 * n_settings), (3 * n_settings, k), (k, k), (k, k), (k, 3)])
        .expect("chain is well-formed")
}

/// Per-pixel multiply count of the precomposed canonical map
/// (row . M, with M = Pc . d . Qc . Rc collapsed offline).
pub fn precomposed_muls_per_pixel(n_settings: usize) -> u64 {
    mul_count(&[(1, 3 * n_settings), (3 * n_settings, 3)]).expect("chain is well-formed")
}

/// Timing protocol: `warmups` untimed runs, then the median wall time of
/// `runs` timed runs.
#[derive(Debug, Clone, Copy)]
pub struct BenchProtocol {
    pub warmups: usize,
    pub runs: usize,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self { warmups: 2, runs: 5 }
    }
}

/// One timed configuration.
#[derive(Debug, Clone)]
pub struct BenchVariant {
    pub label: &'static str,
    pub height: usize,
    pub width: usize,
    pub wall_time_seconds: f64,
    pub pixels_per_second: f64,
    /// Total multiplies over the whole image, from the closed form.
    pub mul_count: u64,
    pub parameter_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub variants: Vec<BenchVariant>,
}

impl BenchReport {
    /// Naive-over-precomposed wall-time ratio at one resolution.
    pub fn speedup(&self, height: usize, width: usize) -> Option<f64> {
        let find = |label: &str| {
            self.variants
                .iter()
                .find(|v| v.label == label && v.height == height && v.width == width)
        };
        let naive = find("naive")?;
        let fast = find("precomposed")?;
        Some(naive.wall_time_seconds / fast.wall_time_seconds)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "variant,height,width,wall_time_seconds,pixels_per_second,mul_count,parameter_count\n",
        );
        for v in &self.variants {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.0},{},{}\n",
                v.label,
                v.height,
                v.width,
                v.wall_time_seconds,
                v.pixels_per_second,
                v.mul_count,
                v.parameter_count
            ));
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn time_runs(proto: &BenchProtocol, mut f: impl FnMut()) -> f64 {
    for _ in 0..proto.warmups {
        f();
    }
    let mut times = Vec::with_capacity(proto.runs);
    for _ in 0..proto.runs.max(1) {
        let start = Instant::now();
        f();
        times.push(start.elapsed().as_secs_f64());
    }
    median(times)
}

/// Time naive-chain vs precomposed canonical inference over each resolution
/// on a synthetic random stack; multiply counts come from the closed form,
/// never from timing.
pub fn bench(
    resolutions: &[(usize, usize)],
    params: &DncmParams,
    enc: &EncoderParams,
    cfg: &PipelineConfig,
    proto: &BenchProtocol,
) -> Result<BenchReport> {
    if resolutions.is_empty() {
        return Err(Error::Dimension {
            context: "bench resolutions",
            expected: "at least one resolution".to_string(),
            got: "none".to_string(),
        });
    }
    let n = params.n_settings;
    let param_count = params.parameter_count() + enc.parameter_count();
    let mut rng = SplitMix64::new(0x42454e4348); // "BENCH"
    let mut report = BenchReport::default();
    for &(h, w) in resolutions {
        let stack = ImageStack::new(h, w, n, (0..h * w * 3 * n).map(|_| rng.next_f64()).collect())?;
        let lowres = downsample(&stack, cfg.low_res_side);
        let d = encode(&lowres, enc)?;
        let pixels = (h * w) as u64;

        let naive_time = time_runs(proto, || {
            let out = dncm_c(&stack, &d, params, cfg.threads).unwrap();
            std::hint::black_box(&out.data);
        });
        report.variants.push(BenchVariant {
            label: "naive",
            height: h,
            width: w,
            wall_time_seconds: naive_time,
            pixels_per_second: pixels as f64 / naive_time,
            mul_count: naive_muls_per_pixel(n, params.k) * pixels,
            parameter_count: param_count,
        });

        let map_c = precompose_c(&d, params)?;
        let fast_time = time_runs(proto, || {
            let out = apply_map_stack(&stack, &map_c, cfg.threads).unwrap();
            std::hint::black_box(&out.data);
        });
        report.variants.push(BenchVariant {
            label: "precomposed",
            height: h,
            width: w,
            wall_time_seconds: fast_time,
            pixels_per_second: pixels as f64 / fast_time,
            mul_count: precomposed_muls_per_pixel(n) * pixels,
            parameter_count: param_count,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::unfold;

    fn random_image(h: usize, w: usize, rng: &mut SplitMix64) -> CanonicalImage {
        CanonicalImage::new(h, w, (0..h * w * 3).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn settings_validation() {
        assert!(validate_settings(&['t', 'd', 's']).is_ok());
        assert!(matches!(validate_settings(&[]), Err(Error::Dimension { .. })));
        assert!(matches!(validate_settings(&['x']), Err(Error::UnknownSetting('x'))));
        assert!(matches!(
            validate_settings(&['t', 't']),
            Err(Error::DuplicateSetting('t'))
        ));
    }

    #[test]
    fn assemble_single_image_is_the_image() {
        let mut rng = SplitMix64::new(1);
        let img = random_image(2, 3, &mut rng);
        let stack = assemble_stack(&[&img], &['d']).unwrap();
        assert_eq!(stack.settings, 1);
        assert_eq!(stack.data, img.data);
    }

    #[test]
    fn assemble_two_images_blocks_in_order() {
        let a = CanonicalImage::new(1, 1, vec![0.1, 0.2, 0.3]).unwrap();
        let b = CanonicalImage::new(1, 1, vec![0.4, 0.5, 0.6]).unwrap();
        let stack = assemble_stack(&[&a, &b], &['t', 'd']).unwrap();
        assert_eq!(stack.data, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn assemble_row_is_concatenation_of_pixels() {
        let mut rng = SplitMix64::new(2);
        let a = random_image(3, 2, &mut rng);
        let b = random_image(3, 2, &mut rng);
        let stack = assemble_stack(&[&a, &b], &['t', 's']).unwrap();
        let pm = unfold(&stack);
        for p in 0..6 {
            let row = &pm.data[p * 6..(p + 1) * 6];
            assert_eq!(&row[..3], &a.data[p * 3..p * 3 + 3]);
            assert_eq!(&row[3..], &b.data[p * 3..p * 3 + 3]);
        }
    }

    #[test]
    fn assemble_rejects_mismatches() {
        let a = CanonicalImage::zeros(1, 1);
        let b = CanonicalImage::zeros(2, 1);
        assert!(assemble_stack(&[&a, &b], &['t', 'd']).is_err());
        assert!(assemble_stack(&[&a], &['t', 'd']).is_err());
    }

    #[test]
    fn identity_params_pass_first_setting_through() {
        let mut rng = SplitMix64::new(3);
        let a = random_image(3, 3, &mut rng);
        let b = random_image(3, 3, &mut rng);
        let stack = assemble_stack(&[&a, &b], &['d', 's']).unwrap();
        let params = DncmParams::identity(8, 2).unwrap();
        let cfg = PipelineConfig::new(vec!['d', 's'], 4, false, 1).unwrap();
        let out =
            run_pipeline_with_latent(&stack, &LatentCode::identity(8), &params, &cfg).unwrap();
        assert_eq!(out.awb.data, a.data);
        assert_eq!(out.canonical.data, a.data);
    }

    #[test]
    fn precompose_paths_agree() {
        let mut rng = SplitMix64::new(4);
        let imgs: Vec<CanonicalImage> = (0..3).map(|_| random_image(8, 8, &mut rng)).collect();
        let refs: Vec<&CanonicalImage> = imgs.iter().collect();
        let stack = assemble_stack(&refs, &['t', 'd', 's']).unwrap();
        let params = DncmParams::init(8, 3, 5).unwrap();
        let enc = EncoderParams::init(3, 8, &[4, 8], 6);
        let slow_cfg = PipelineConfig::new(vec!['t', 'd', 's'], 4, false, 1).unwrap();
        let fast_cfg = PipelineConfig { use_precompose: true, ..slow_cfg.clone() };
        let slow = run_pipeline(&stack, &params, &enc, &slow_cfg).unwrap();
        let fast = run_pipeline(&stack, &params, &enc, &fast_cfg).unwrap();
        for (a, b) in slow.awb.data.iter().zip(&fast.awb.data) {
            let scale = a.abs().max(b.abs()).max(1.0);
            assert!((a - b).abs() / scale < 1e-9);
        }
        assert_eq!(slow.latent.d, fast.latent.d);
    }

    #[test]
    fn mul_counts_follow_closed_form() {
        assert_eq!(naive_muls_per_pixel(5, 32), 2624);
        assert_eq!(precomposed_muls_per_pixel(5), 45);
        // Doubling both sides quadruples total pixel work.
        let base = naive_muls_per_pixel(2, 8) * 16 * 16;
        let doubled = naive_muls_per_pixel(2, 8) * 32 * 32;
        assert_eq!(doubled, 4 * base);
    }

    #[test]
    fn bench_reports_all_variants() {
        let params = DncmParams::init(4, 2, 7).unwrap();
        let enc = EncoderParams::init(2, 4, &[4], 8);
        let cfg = PipelineConfig::new(vec!['t', 'd'], 4, false, 1).unwrap();
        let proto = BenchProtocol { warmups: 0, runs: 1 };
        let report = bench(&[(16, 16), (32, 32)], &params, &enc, &cfg, &proto).unwrap();
        assert_eq!(report.variants.len(), 4);
        for v in &report.variants {
            assert!(v.wall_time_seconds > 0.0);
            assert!(v.pixels_per_second > 0.0);
            assert!(v.mul_count > 0);
            assert!(v.parameter_count > 0);
        }
        let naive16 = &report.variants[0];
        assert_eq!(naive16.mul_count, naive_muls_per_pixel(2, 4) * 256);
        assert!(report.speedup(16, 16).is_some());
    }

    #[test]
    fn bench_rejects_empty_resolutions() {
        let params = DncmParams::init(4, 1, 0).unwrap();
        let enc = EncoderParams::init(1, 4, &[4], 0);
        let cfg = PipelineConfig::new(vec!['d'], 4, false, 1).unwrap();
        assert!(bench(&[], &params, &enc, &cfg, &BenchProtocol::default()).is_err());
    }
}
