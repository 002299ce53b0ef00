//! Binary parameter and stack formats.
//!
//! Parameter files ("DNIM"): magic, version byte, k and N as 32-bit
//! little-endian unsigned, then the six projection matrices in the order
//! Pc, Qc, Rc, Pa, Qa, Ra as row-major 64-bit little-endian floats, followed
//! by the encoder section: stage count, per-stage channel dims, then each
//! stage's weights and biases and the head weights and biases, all row-major
//! 64-bit little-endian. Round-trips are bit-exact.
//!
//! Stack files ("DSTK"): magic, version byte, H, W, N as 32-bit
//! little-endian unsigned, then H*W*3N floats, pixel row-major,
//! channel-interleaved.

use crate::dncm::DncmParams;
use crate::encoder::{ConvStage, EncoderParams};
use crate::error::{Error, ParamFileError, Result};
use crate::image::ImageStack;
use crate::matrix::Matrix;
use std::io::Write;
use std::path::Path;

const PARAM_MAGIC: &[u8; 4] = b"DNIM";
const STACK_MAGIC: &[u8; 4] = b"DSTK";
const VERSION: u8 = 1;

fn write_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn write_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ParamFileError> {
        if self.pos + n > self.buf.len() {
            return Err(ParamFileError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, ParamFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, ParamFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, ParamFileError> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> std::result::Result<(), ParamFileError> {
        if self.pos != self.buf.len() {
            return Err(ParamFileError::BadDims);
        }
        Ok(())
    }
}

/// Serialize DNCM and encoder parameters into the DNIM byte layout.
pub fn encode_params(params: &DncmParams, enc: &EncoderParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAM_MAGIC);
    buf.push(VERSION);
    write_u32(&mut buf, params.k as u32);
    write_u32(&mut buf, params.n_settings as u32);
    for m in [&params.pc, &params.qc, &params.rc, &params.pa, &params.qa, &params.ra] {
        write_f64s(&mut buf, m.data());
    }
    write_u32(&mut buf, enc.stages.len() as u32);
    for s in &enc.stages {
        write_u32(&mut buf, s.in_ch as u32);
        write_u32(&mut buf, s.out_ch as u32);
    }
    for s in &enc.stages {
        write_f64s(&mut buf, &s.weights);
        write_f64s(&mut buf, &s.bias);
    }
    write_f64s(&mut buf, &enc.head_weights);
    write_f64s(&mut buf, &enc.head_bias);
    buf
}

/// Parse the DNIM byte layout.
pub fn decode_params(buf: &[u8]) -> std::result::Result<(DncmParams, EncoderParams), ParamFileError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != PARAM_MAGIC {
        return Err(ParamFileError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(ParamFileError::BadVersion(version));
    }
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    if k < 3 || n == 0 {
        return Err(ParamFileError::BadDims);
    }
    let mat = |rows: usize, cols: usize, r: &mut Reader| -> std::result::Result<Matrix, ParamFileError> {
        let data = r.f64s(rows * cols)?;
        Matrix::from_vec(rows, cols, data).map_err(|_| ParamFileError::BadDims)
    };
    let pc = mat(3 * n, k, &mut r)?;
    let qc = mat(k, k, &mut r)?;
    let rc = mat(k, 3, &mut r)?;
    let pa = mat(3, k, &mut r)?;
    let qa = mat(k, k, &mut r)?;
    let ra = mat(k, 3, &mut r)?;
    let params = DncmParams { k, n_settings: n, pc, qc, rc, pa, qa, ra };

    let stage_count = r.u32()? as usize;
    if stage_count == 0 {
        return Err(ParamFileError::BadDims);
    }
    let mut dims = Vec::with_capacity(stage_count);
    for _ in 0..stage_count {
        let in_ch = r.u32()? as usize;
        let out_ch = r.u32()? as usize;
        if in_ch == 0 || out_ch == 0 {
            return Err(ParamFileError::BadDims);
        }
        dims.push((in_ch, out_ch));
    }
    if dims[0].0 != 3 * n {
        return Err(ParamFileError::BadDims);
    }
    for w in dims.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(ParamFileError::BadDims);
        }
    }
    let mut stages = Vec::with_capacity(stage_count);
    for &(in_ch, out_ch) in &dims {
        let weights = r.f64s(9 * in_ch * out_ch)?;
        let bias = r.f64s(out_ch)?;
        stages.push(ConvStage { in_ch, out_ch, weights, bias });
    }
    let last = dims.last().unwrap().1;
    let head_weights = r.f64s(last * k * k)?;
    let head_bias = r.f64s(k * k)?;
    r.done()?;
    Ok((params, EncoderParams { k, stages, head_weights, head_bias }))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    // Write to a sibling temp file and rename so a failed write never leaves
    // a partial output behind.
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    let tmp = tempfile_path(dir, path);
    let mut f = std::fs::File::create(&tmp)?;
    if let Err(e) = f.write_all(bytes).and_then(|_| f.sync_all()) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    drop(f);
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    Ok(())
}

fn tempfile_path(dir: &Path, target: &Path) -> std::path::PathBuf {
    let stem = target
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    dir.join(format!(".{}.{}.{}.tmp", stem, std::process::id(), nanos))
}

/// Atomic byte write with the crate's error type; shared with the image
/// writer.
pub(crate) fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn save_params(path: &Path, params: &DncmParams, enc: &EncoderParams) -> Result<()> {
    write_atomic(path, &encode_params(params, enc)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_params(path: &Path) -> Result<(DncmParams, EncoderParams)> {
    let buf = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_params(&buf).map_err(|kind| Error::ParamFile {
        path: path.to_path_buf(),
        kind,
    })
}

pub fn save_stack(path: &Path, stack: &ImageStack) -> Result<()> {
    let mut buf = Vec::with_capacity(13 + 8 * stack.data.len());
    buf.extend_from_slice(STACK_MAGIC);
    buf.push(VERSION);
    write_u32(&mut buf, stack.height as u32);
    write_u32(&mut buf, stack.width as u32);
    write_u32(&mut buf, stack.settings as u32);
    write_f64s(&mut buf, &stack.data);
    write_atomic(path, &buf).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_stack(path: &Path) -> Result<ImageStack> {
    let fail = |kind| Error::StackFile {
        path: path.to_path_buf(),
        kind,
    };
    let buf = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let parse = |r: &mut Reader| -> std::result::Result<ImageStack, ParamFileError> {
        if r.take(4)? != STACK_MAGIC {
            return Err(ParamFileError::BadMagic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(ParamFileError::BadVersion(version));
        }
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let n = r.u32()? as usize;
        if h == 0 || w == 0 || n == 0 {
            return Err(ParamFileError::BadDims);
        }
        let data = r.f64s(h * w * 3 * n)?;
        r.done()?;
        ImageStack::new(h, w, n, data).map_err(|_| ParamFileError::BadDims)
    };
    parse(&mut r).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use tempfile::tempdir;

    #[test]
    fn params_roundtrip_is_bitwise() {
        let params = DncmParams::init(8, 3, 55).unwrap();
        let enc = EncoderParams::init(3, 8, &[4, 6], 56);
        let bytes = encode_params(&params, &enc);
        let (p2, e2) = decode_params(&bytes).unwrap();
        assert_eq!(params, p2);
        assert_eq!(enc, e2);
        assert_eq!(bytes, encode_params(&p2, &e2));
    }

    #[test]
    fn params_file_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.dnim");
        let params = DncmParams::init(4, 1, 7).unwrap();
        let enc = EncoderParams::init(1, 4, &[4], 8);
        save_params(&path, &params, &enc).unwrap();
        let (p2, e2) = load_params(&path).unwrap();
        assert_eq!(params, p2);
        assert_eq!(enc, e2);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct_errors() {
        let params = DncmParams::init(4, 1, 7).unwrap();
        let enc = EncoderParams::init(1, 4, &[4], 8);
        let mut bytes = encode_params(&params, &enc);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_params(&wrong), Err(ParamFileError::BadMagic)));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_params(&bytes), Err(ParamFileError::Truncated)));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let params = DncmParams::init(4, 1, 7).unwrap();
        let enc = EncoderParams::init(1, 4, &[4], 8);
        let mut bytes = encode_params(&params, &enc);
        bytes.push(0);
        assert!(decode_params(&bytes).is_err());
    }

    #[test]
    fn stack_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("input.dstk");
        let mut rng = SplitMix64::new(5);
        let data = (0..2 * 3 * 3 * 2).map(|_| rng.next_f64()).collect();
        let stack = ImageStack::new(2, 3, 2, data).unwrap();
        save_stack(&path, &stack).unwrap();
        assert_eq!(load_stack(&path).unwrap(), stack);
    }
}
