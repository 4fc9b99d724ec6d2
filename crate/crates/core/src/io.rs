//! File formats: binary PGM/PPM images, k-space files, masks, parameter blobs
//! and CSV tables. Every decoder rejects truncated input and trailing bytes.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::operators::KSpaceMask;
use crate::tensor::Tensor;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::from(e).at(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).at(path))
}

/// Parses a binary PNM header, returning `(magic, width, height, maxval, payload offset)`.
fn pnm_header(bytes: &[u8]) -> Result<(u8, usize, usize, usize, usize)> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(Error::format("not a binary PGM (P5) or PPM (P6) file"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format("truncated image header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("malformed image header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("malformed image header"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format("image has zero extent"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::format(format!("unsupported maxval {maxval} (expected 255 or 65535)")));
    }
    Ok((bytes[1], w, h, maxval, pos + 1))
}

/// Decodes P5 to shape `[h, w]` and P6 to `[3, h, w]`, values in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let (magic, w, h, maxval, offset) = pnm_header(bytes)?;
    let channels = if magic == b'6' { 3 } else { 1 };
    let bps = if maxval > 255 { 2 } else { 1 };
    let expected = channels * w * h * bps;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(Error::format(format!("truncated payload: {} of {expected} bytes", payload.len())));
    }
    if payload.len() > expected {
        return Err(Error::format(format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    let samples: Vec<f64> = if bps == 1 {
        payload.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / maxval as f64)
            .collect()
    };
    if channels == 1 {
        return Tensor::new(&[h, w], samples);
    }
    // interleaved RGB to channel-first
    let mut data = vec![0.0; samples.len()];
    for (i, px) in samples.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c];
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Encodes `[w]`, `[h, w]`, `[1, h, w]` as P5 and `[3, h, w]` as P6, clamping to
/// `[0, 1]` and rounding to the nearest level.
pub fn encode_pnm(image: &Tensor, maxval: usize) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::invalid(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let (c, h, w) = match *image.shape() {
        [w] => (1, 1, w),
        [h, w] => (1, h, w),
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => return Err(Error::shape(format!("cannot store shape {:?} as an image", image.shape()))),
    };
    let mut out = format!("P{}\n{w} {h}\n{maxval}\n", if c == 3 { 6 } else { 5 }).into_bytes();
    let d = image.data();
    for i in 0..h * w {
        for ch in 0..c {
            let q = (d[ch * h * w + i].clamp(0.0, 1.0) * maxval as f64).round() as u16;
            if maxval == 255 {
                out.push(q as u8);
            } else {
                out.extend_from_slice(&q.to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_pnm(&read(path)?).map_err(|e| e.at(path))
}

pub fn save_image(path: impl AsRef<Path>, image: &Tensor, maxval: usize) -> Result<()> {
    let path = path.as_ref();
    write(path, &encode_pnm(image, maxval)?)
}

const KSPACE_MAGIC: &[u8; 4] = b"KSPC";

/// `"KSPC"`, `u32` height and width, then row-major `(re, im)` little-endian `f64` pairs.
pub fn encode_kspace(h: usize, w: usize, samples: &[Complex64]) -> Result<Vec<u8>> {
    if samples.len() != h * w {
        return Err(Error::shape(format!("{} samples for a {h}×{w} k-space", samples.len())));
    }
    if samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite {
            what: "in k-space samples".into(),
        });
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::invalid("k-space extent exceeds u32"));
    let mut out = Vec::with_capacity(12 + 16 * h * w);
    out.extend_from_slice(KSPACE_MAGIC);
    out.extend_from_slice(&to_u32(h)?.to_le_bytes());
    out.extend_from_slice(&to_u32(w)?.to_le_bytes());
    for v in samples {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_kspace(bytes: &[u8]) -> Result<(usize, usize, Vec<Complex64>)> {
    if bytes.len() < 12 || &bytes[..4] != KSPACE_MAGIC {
        return Err(Error::format("bad k-space magic"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = 12 + 16 * h * w;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "k-space of {h}×{w} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
    let samples: Vec<Complex64> = bytes[12..]
        .chunks_exact(16)
        .map(|c| Complex64::new(f(&c[..8]), f(&c[8..])))
        .collect();
    if samples.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite {
            what: "in k-space samples".into(),
        });
    }
    Ok((h, w, samples))
}

pub fn load_kspace(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Complex64>)> {
    let path = path.as_ref();
    decode_kspace(&read(path)?).map_err(|e| e.at(path))
}

pub fn save_kspace(path: impl AsRef<Path>, h: usize, w: usize, samples: &[Complex64]) -> Result<()> {
    write(path.as_ref(), &encode_kspace(h, w, samples)?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<KSpaceMask> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("mask file is not UTF-8").at(path))?;
    KSpaceMask::from_text(&text).map_err(|e| e.at(path))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &KSpaceMask) -> Result<()> {
    write(path.as_ref(), mask.to_text().as_bytes())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<GeneratorParams> {
    let path = path.as_ref();
    GeneratorParams::from_bytes(&read(path)?).map_err(|e| e.at(path))
}

pub fn save_params(path: impl AsRef<Path>, params: &GeneratorParams) -> Result<()> {
    write(path.as_ref(), &params.to_bytes())
}

pub fn save_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write(path.as_ref(), text.as_bytes())
}

pub fn load_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    String::from_utf8(read(path)?).map_err(|_| Error::format("file is not UTF-8").at(path))
}
