//! Binary PPM (P6, maxval 255) reader and writer.
//!
//! Bytes map linearly to [0, 1] on load; on save, values are clamped to
//! [0, 1] and rounded half-up to 8 bits. Writes go to a temp file renamed on
//! success so no partial file is left on error.

use crate::error::{Error, PpmError, Result};
use crate::image::CanonicalImage;
use std::path::Path;

fn parse(buf: &[u8]) -> std::result::Result<CanonicalImage, PpmError> {
    if buf.len() < 2 || &buf[0..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace (with '#' comments to end of line), then digits.
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => return Err(PpmError::MalformedHeader),
            }
        }
        let mut value = 0usize;
        let mut any = false;
        while let Some(b) = buf.get(pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or(PpmError::MalformedHeader)?;
            any = true;
            pos += 1;
        }
        if !any {
            return Err(PpmError::MalformedHeader);
        }
        *field = value;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(PpmError::MalformedHeader);
    }
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval as u32));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match buf.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::MalformedHeader),
    }
    let expected = width * height * 3;
    let payload = &buf[pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let data = payload[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(CanonicalImage {
        height,
        width,
        data,
    })
}

pub fn load_image(path: &Path) -> Result<CanonicalImage> {
    let buf = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse(&buf).map_err(|kind| Error::Ppm {
        path: path.to_path_buf(),
        kind,
    })
}

/// Clamp to [0,1] and round half-up to a byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

pub fn encode(img: &CanonicalImage) -> Vec<u8> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.reserve(img.data.len());
    buf.extend(img.data.iter().map(|&v| quantize(v)));
    buf
}

pub fn save_image(path: &Path, img: &CanonicalImage) -> Result<()> {
    crate::checkpoint::write_bytes_atomic(path, &encode(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn single_red_pixel() {
        let buf = b"P6\n1 1\n255\n\xff\x00\x00";
        let img = parse(buf).unwrap();
        assert_eq!((img.height, img.width), (1, 1));
        assert_eq!(img.data, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let buf = b"P6\n# made by hand\n2 1\n# another\n255\n\x00\x00\x00\xff\xff\xff";
        let img = parse(buf).unwrap();
        assert_eq!((img.height, img.width), (1, 2));
    }

    #[test]
    fn roundtrip_lossless_for_8bit_exact_images() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| (i * 17 % 256) as f64 / 255.0).collect();
        let img = CanonicalImage::new(2, 3, data).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(img, back);
        // saving again produces identical bytes
        let first = std::fs::read(&path).unwrap();
        save_image(&path, &back).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128); // 127.5 rounds half-up
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn error_variants_are_distinct() {
        assert!(matches!(parse(b"P5\n1 1\n255\n\x00"), Err(PpmError::BadMagic)));
        assert!(matches!(parse(b"P6\nabc"), Err(PpmError::MalformedHeader)));
        assert!(matches!(
            parse(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"),
            Err(PpmError::UnsupportedMaxval(65535))
        ));
        assert!(matches!(
            parse(b"P6\n2 2\n255\n\x00\x00\x00"),
            Err(PpmError::Truncated { .. })
        ));
    }
}
