//! Binary PPM (P6) and PGM (P5) images with maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PnmHeader {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Byte offset of the pixel payload.
    pub data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<PnmHeader> {
    let bad = |reason: &str| Error::format("PNM header", path, reason);
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(bad("missing P5/P6 magic"));
    }
    let channels = match bytes[1] {
        b'6' => 3,
        b'5' => 1,
        other => return Err(bad(&format!("unsupported magic P{}", other as char))),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval != 255 {
        return Err(bad(&format!("unsupported maxval {maxval} (only 255)")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

/// Reads only the header (for dataset statistics).
pub fn read_header(path: impl AsRef<Path>) -> Result<PnmHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    parse_header(&bytes, path)
}

/// Loads a P6 or P5 image as `[channels,H,W]` with values in `[0,1]`.
pub fn load_pnm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let hdr = parse_header(&bytes, path)?;
    let (c, h, w) = (hdr.channels, hdr.height, hdr.width);
    let payload = &bytes[hdr.data_offset..];
    if payload.len() < c * h * w {
        return Err(Error::format(
            "PNM payload",
            path,
            format!("expected {} bytes, found {}", c * h * w, payload.len()),
        ));
    }
    let scale = T::from_f64_lossy(255.0);
    // Interleaved HWC on disk, planar CHW in memory.
    Tensor::new(
        vec![c, h, w],
        (0..c * h * w)
            .map(|i| {
                let (ch, pix) = (i / (h * w), i % (h * w));
                T::from_u8(payload[pix * c + ch]).expect("u8 fits") / scale
            })
            .collect(),
    )
}

/// Loads a colour image; greyscale files are replicated to three channels.
pub fn load_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let t = load_pnm::<T>(path)?;
    let (c, h, w) = t.chw()?;
    if c == 3 {
        return Ok(t);
    }
    let plane = t.data();
    Tensor::new(vec![3, h, w], (0..3).flat_map(|_| plane.iter().copied()).collect())
}

/// `[0,1]` to byte, rounding half up and clamping.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let scaled = (v.to_f64_lossy() * 255.0 + 0.5).floor();
    if scaled.is_nan() {
        0
    } else {
        scaled.clamp(0.0, 255.0) as u8
    }
}

fn write_pnm(path: &Path, magic: &str, w: usize, h: usize, payload: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "{magic}\n{w} {h}\n255\n")?;
    f.write_all(payload)?;
    Ok(())
}

/// Writes a `[3,H,W]` image as binary PPM.
pub fn save_ppm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!("save_ppm needs 3 channels, got {c}")));
    }
    let d = img.data();
    let payload: Vec<u8> = (0..h * w)
        .flat_map(|p| (0..3).map(move |ch| quantize(d[ch * h * w + p])))
        .collect();
    write_pnm(path.as_ref(), "P6", w, h, &payload)
}

/// Writes a single `[H,W]` (or `[1,H,W]`) plane as binary PGM.
pub fn save_pgm<T: Scalar>(path: impl AsRef<Path>, plane: &Tensor<T>) -> Result<()> {
    let (h, w) = match plane.shape() {
        &[h, w] | &[1, h, w] => (h, w),
        other => {
            return Err(Error::InvalidArgument(format!(
                "save_pgm needs one plane, got {other:?}"
            )))
        }
    };
    let payload: Vec<u8> = plane.data().iter().map(|&v| quantize(v)).collect();
    write_pnm(path.as_ref(), "P5", w, h, &payload)
}

/// Rescales each channel of a `[C,H,W]` map to `[0,1]`; flat channels
/// become 0.5.
pub fn normalize_min_max<T: Scalar>(maps: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = maps.chw()?;
    let mut out = maps.data().to_vec();
    for plane in out.chunks_mut(h * w).take(c) {
        let lo = plane.iter().copied().fold(T::infinity(), T::min);
        let hi = plane.iter().copied().fold(T::neg_infinity(), T::max);
        let span = hi - lo;
        for v in plane.iter_mut() {
            *v = if span > T::zero() {
                (*v - lo) / span
            } else {
                T::from_f64_lossy(0.5)
            };
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Writes one min-max normalised PGM per channel of a residual map.
pub fn save_residual_pgms<T: Scalar>(
    dir: impl AsRef<Path>,
    stem: &str,
    maps: &Tensor<T>,
) -> Result<Vec<std::path::PathBuf>> {
    let norm = normalize_min_max(maps)?;
    let (c, h, w) = norm.chw()?;
    let mut written = Vec::with_capacity(c);
    for k in 0..c {
        let plane = Tensor::new(vec![h, w], norm.data()[k * h * w..(k + 1) * h * w].to_vec())?;
        let path = dir.as_ref().join(format!("{stem}_residual{k}.pgm"));
        save_pgm(&path, &plane)?;
        written.push(path);
    }
    Ok(written)
}
