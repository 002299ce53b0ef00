//! The two deterministic color-mapping stages: the canonical mapping (fusing
//! the N white-balance renditions under an image-adaptive latent matrix) and
//! the AWB mapping (a fusion-free 3-channel map), plus the precomposed fast
//! path that collapses each chain into a single small matrix per image.

use crate::error::{Error, Result};
use crate::image::{CanonicalImage, ImageStack};
use crate::matrix::{matmul, Matrix};
use crate::rng::SplitMix64;

/// The k x k image-adaptive latent matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub d: Matrix,
}

impl LatentCode {
    pub fn new(d: Matrix) -> Result<Self> {
        if d.rows() != d.cols() {
            return Err(Error::Dimension {
                context: "LatentCode::new",
                expected: "square matrix".to_string(),
                got: format!("{}x{}", d.rows(), d.cols()),
            });
        }
        Ok(Self { d })
    }

    pub fn identity(k: usize) -> Self {
        Self { d: Matrix::identity(k) }
    }

    pub fn k(&self) -> usize {
        self.d.rows()
    }
}

/// The learnable projection matrices of both mapping stages. The canonical
/// set (Pc: 3N x k, Qc: k x k, Rc: k x 3) and the AWB set (Pa: 3 x k,
/// Qa: k x k, Ra: k x 3) are distinct parameters; nothing is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct DncmParams {
    pub k: usize,
    pub n_settings: usize,
    pub pc: Matrix,
    pub qc: Matrix,
    pub rc: Matrix,
    pub pa: Matrix,
    pub qa: Matrix,
    pub ra: Matrix,
}

impl DncmParams {
    /// Deterministic pseudo-random initialization. Each matrix is filled
    /// i.i.d. uniform in [-a, a] with a = sqrt(1/fan_in), fan_in being the
    /// matrix's input dimension (its row count), drawn from a single
    /// SplitMix64 stream in the fixed order Pc, Qc, Rc, Pa, Qa, Ra.
    pub fn init(k: usize, n_settings: usize, seed: u64) -> Result<Self> {
        if k < 3 {
            return Err(Error::LatentTooSmall(k));
        }
        let mut rng = SplitMix64::new(seed);
        let mut fill = |rows: usize, cols: usize| -> Matrix {
            let a = (1.0 / rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.uniform(-a, a)).collect();
            Matrix::from_vec(rows, cols, data).unwrap()
        };
        Ok(Self {
            pc: fill(3 * n_settings, k),
            qc: fill(k, k),
            rc: fill(k, 3),
            pa: fill(3, k),
            qa: fill(k, k),
            ra: fill(k, 3),
            k,
            n_settings,
        })
    }

    /// Parameters that make both stages pass the first rendition through
    /// unchanged: Pc embeds the first three channels, Rc/Ra extract them,
    /// and every square factor is the identity.
    pub fn identity(k: usize, n_settings: usize) -> Result<Self> {
        if k < 3 {
            return Err(Error::LatentTooSmall(k));
        }
        let mut pc = Matrix::zeros(3 * n_settings, k);
        let mut rc = Matrix::zeros(k, 3);
        let mut pa = Matrix::zeros(3, k);
        let mut ra = Matrix::zeros(k, 3);
        for i in 0..3 {
            pc.set(i, i, 1.0);
            rc.set(i, i, 1.0);
            pa.set(i, i, 1.0);
            ra.set(i, i, 1.0);
        }
        Ok(Self {
            pc,
            qc: Matrix::identity(k),
            rc,
            pa,
            qa: Matrix::identity(k),
            ra,
            k,
            n_settings,
        })
    }

    pub fn parameter_count(&self) -> usize {
        [&self.pc, &self.qc, &self.rc, &self.pa, &self.qa, &self.ra]
            .iter()
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    fn check_latent(&self, d: &LatentCode) -> Result<()> {
        if d.k() != self.k {
            return Err(Error::Dimension {
                context: "latent code",
                expected: format!("{}x{}", self.k, self.k),
                got: format!("{}x{}", d.k(), d.k()),
            });
        }
        Ok(())
    }

    fn check_stack(&self, img: &ImageStack) -> Result<()> {
        if img.settings != self.n_settings {
            return Err(Error::Dimension {
                context: "image stack vs Pc",
                expected: format!("{} settings ({} channels)", self.n_settings, 3 * self.n_settings),
                got: format!("{} settings ({} channels)", img.settings, img.channels()),
            });
        }
        Ok(())
    }
}

/// Row-vector times row-major matrix: out[j] = sum_i v[i] * m[i][j].
#[inline]
fn vec_mat(v: &[f64], m: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(v.len(), m.rows());
    debug_assert_eq!(out.len(), m.cols());
    out.fill(0.0);
    let cols = m.cols();
    let data = m.data();
    for (i, &vi) in v.iter().enumerate() {
        let row = &data[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[j] += vi * row[j];
        }
    }
}

/// Apply a per-pixel map to every pixel, partitioning pixels across
/// `threads` workers. Each output cell is written by exactly one worker, so
/// results are bitwise independent of the thread count.
fn for_each_pixel<F>(input: &[f64], in_ch: usize, out_ch: usize, threads: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let pixels = input.len() / in_ch;
    let mut out = vec![0.0; pixels * out_ch];
    let threads = threads.max(1).min(pixels.max(1));
    if threads <= 1 || pixels == 0 {
        for p in 0..pixels {
            f(&input[p * in_ch..(p + 1) * in_ch], &mut out[p * out_ch..(p + 1) * out_ch]);
        }
        return out;
    }
    let chunk = pixels.div_ceil(threads);
    std::thread::scope(|scope| {
        for (wi, out_chunk) in out.chunks_mut(chunk * out_ch).enumerate() {
            let f = &f;
            let start = wi * chunk;
            scope.spawn(move || {
                for (p, out_px) in out_chunk.chunks_mut(out_ch).enumerate() {
                    let px = start + p;
                    f(&input[px * in_ch..(px + 1) * in_ch], out_px);
                }
            });
        }
    });
    out
}

/// Canonical mapping: per pixel, the chain row . Pc . d . Qc . Rc evaluated
/// left to right. Output values are left unclamped; clamping happens only at
/// image encoding.
pub fn dncm_c(
    img: &ImageStack,
    d: &LatentCode,
    params: &DncmParams,
    threads: usize,
) -> Result<CanonicalImage> {
    params.check_stack(img)?;
    params.check_latent(d)?;
    let k = params.k;
    let in_ch = img.channels();
    let data = for_each_pixel(&img.data, in_ch, 3, threads, |px, out| {
        let mut t1 = vec![0.0; k];
        let mut t2 = vec![0.0; k];
        vec_mat(px, &params.pc, &mut t1);
        vec_mat(&t1, &d.d, &mut t2);
        vec_mat(&t2, &params.qc, &mut t1);
        vec_mat(&t1, &params.rc, out);
    });
    CanonicalImage::new(img.height, img.width, data)
}

/// AWB mapping: per pixel, the chain row . Pa . Qa . Ra. Fusion-free: the
/// input already has exactly three channels and no latent is injected.
pub fn dncm_a(canon: &CanonicalImage, params: &DncmParams, threads: usize) -> Result<CanonicalImage> {
    let k = params.k;
    let data = for_each_pixel(&canon.data, 3, 3, threads, |px, out| {
        let mut t1 = vec![0.0; k];
        let mut t2 = vec![0.0; k];
        vec_mat(px, &params.pa, &mut t1);
        vec_mat(&t1, &params.qa, &mut t2);
        vec_mat(&t2, &params.ra, out);
    });
    CanonicalImage::new(canon.height, canon.width, data)
}

/// Collapse the canonical chain into a single 3N x 3 map: Pc . d . Qc . Rc.
pub fn precompose_c(d: &LatentCode, params: &DncmParams) -> Result<Matrix> {
    params.check_latent(d)?;
    let m = matmul(&params.pc, &d.d)?;
    let m = matmul(&m, &params.qc)?;
    matmul(&m, &params.rc)
}

/// Collapse the AWB chain into a single 3 x 3 map: Pa . Qa . Ra.
pub fn precompose_a(params: &DncmParams) -> Result<Matrix> {
    let m = matmul(&params.pa, &params.qa)?;
    matmul(&m, &params.ra)
}

/// Apply a precomposed 3N x 3 map to a stack.
pub fn apply_map_stack(img: &ImageStack, map: &Matrix, threads: usize) -> Result<CanonicalImage> {
    if map.rows() != img.channels() || map.cols() != 3 {
        return Err(Error::Dimension {
            context: "precomposed stack map",
            expected: format!("{}x3", img.channels()),
            got: format!("{}x{}", map.rows(), map.cols()),
        });
    }
    let in_ch = img.channels();
    let map_data = map.data();
    // Three explicit accumulators keep the hot loop register-resident.
    let data = for_each_pixel(&img.data, in_ch, 3, threads, |px, out| {
        let (mut r, mut g, mut b) = (0.0, 0.0, 0.0);
        for (i, &v) in px.iter().enumerate() {
            let row = &map_data[i * 3..i * 3 + 3];
            r += v * row[0];
            g += v * row[1];
            b += v * row[2];
        }
        out[0] = r;
        out[1] = g;
        out[2] = b;
    });
    CanonicalImage::new(img.height, img.width, data)
}

/// Apply a precomposed 3 x 3 map to a canonical image.
pub fn apply_map_canonical(
    img: &CanonicalImage,
    map: &Matrix,
    threads: usize,
) -> Result<CanonicalImage> {
    if map.rows() != 3 || map.cols() != 3 {
        return Err(Error::Dimension {
            context: "precomposed canonical map",
            expected: "3x3".to_string(),
            got: format!("{}x{}", map.rows(), map.cols()),
        });
    }
    let data = for_each_pixel(&img.data, 3, 3, threads, |px, out| {
        vec_mat(px, map, out);
    });
    CanonicalImage::new(img.height, img.width, data)
}
