//! Image ingestion, luma extraction, and PSNR between planes.
//!
//! Everything downstream operates on [`LumaPlane`]: row-major 8-bit luma
//! samples. Color inputs are reduced to luma with the BT.601 full-range
//! matrix (the JPEG convention), `Y = round(0.299 R + 0.587 G + 0.114 B)`.

use std::fs;
use std::path::Path;

use crate::{Error, Result, MSE_FLOOR, PEAK};

/// A single 8-bit luma plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaPlane {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl LumaPlane {
    /// Builds a plane, checking `samples.len() == width * height`.
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::DimensionMismatch("plane size overflows".into()))?;
        if samples.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} plane needs {} samples, got {}",
                width,
                height,
                expected,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Builds a plane from a per-pixel function (used by tests and synthesis).
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            samples,
        }
    }

    /// Uniform plane at `level`.
    pub fn flat(width: usize, height: usize, level: u8) -> Self {
        Self {
            width,
            height,
            samples: vec![level; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Sample at (x, y); coordinates are clamped to the plane, which gives
    /// edge replication when reading past the border.
    pub fn sample_clamped(&self, x: usize, y: usize) -> u8 {
        let x = x.min(self.width - 1);
        let y = y.min(self.height - 1);
        self.samples[y * self.width + x]
    }

    /// Crops or edge-pads to `width x height` (top-left anchored). Used to
    /// align decoder output that a codec padded to a block multiple.
    pub fn resized_to(&self, width: usize, height: usize) -> LumaPlane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        LumaPlane::from_fn(width, height, |x, y| self.sample_clamped(x, y))
    }
}

/// Input formats accepted by [`load_luma`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary PGM (`P5`, maxval 255).
    Pgm,
    /// 8-bit PNG; gray, gray+alpha, RGB or RGBA (alpha ignored).
    Png,
    /// Headerless 8-bit luma, dimensions supplied by the caller.
    RawY8 { width: usize, height: usize },
}

/// Guesses a format from the file extension. Raw `.y8`/`.raw`/`.yuv` files
/// need explicit dimensions.
pub fn format_for_path(path: &Path, raw_dims: Option<(usize, usize)>) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "pnm" => Ok(ImageFormat::Pgm),
        "png" => Ok(ImageFormat::Png),
        "y8" | "raw" | "yuv" => match raw_dims {
            Some((width, height)) => Ok(ImageFormat::RawY8 { width, height }),
            None => Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "raw luma input needs explicit --width/--height".into(),
            }),
        },
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("unrecognized extension '{other}'"),
        }),
    }
}

/// BT.601 full-range luma, rounded and clamped to [0, 255].
pub fn bt601_luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Loads a luma plane from `path` in the declared `format`.
pub fn load_luma(path: &Path, format: ImageFormat) -> Result<LumaPlane> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => decode_pgm(path, &bytes),
        ImageFormat::Png => decode_png(path, &bytes),
        ImageFormat::RawY8 { width, height } => {
            if bytes.len() != width * height {
                return Err(Error::DimensionMismatch(format!(
                    "{}: raw luma declared {}x{} ({} bytes) but file holds {} bytes",
                    path.display(),
                    width,
                    height,
                    width * height,
                    bytes.len()
                )));
            }
            LumaPlane::new(width, height, bytes)
        }
    }
}

/// Loads a plane, sniffing PGM/PNG magic bytes and falling back to raw luma
/// when the byte count matches `raw_dims`. Used for decoder output whose
/// container is up to the adapter script.
pub fn load_luma_sniffed(path: &Path, raw_dims: Option<(usize, usize)>) -> Result<LumaPlane> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(path, &bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return decode_png(path, &bytes);
    }
    if let Some((width, height)) = raw_dims {
        if bytes.len() == width * height {
            return LumaPlane::new(width, height, bytes);
        }
    }
    Err(Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: "not PGM or PNG, and size does not match raw luma dimensions".into(),
    })
}

/// Writes a plane as binary PGM (P5, maxval 255).
pub fn write_pgm(plane: &LumaPlane, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(plane.samples().len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", plane.width(), plane.height()).as_bytes());
    out.extend_from_slice(plane.samples());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<LumaPlane> {
    let header_err = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        format: "PGM",
        reason: reason.into(),
    };

    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(header_err("missing P5 magic"));
    }
    pos += 2;

    // Three whitespace-separated tokens follow: width, height, maxval.
    // '#' starts a comment running to end of line.
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(b) = bytes.get(pos) {
                        pos += 1;
                        if *b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(header_err("truncated header")),
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(header_err("expected decimal field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| header_err("field out of range"))?;
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(header_err("missing separator before pixel data")),
    }

    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("PGM maxval {maxval} (only 255 supported)"),
        });
    }
    let expected = width.checked_mul(height).ok_or_else(|| {
        Error::DimensionMismatch(format!("{}: PGM size overflows", path.display()))
    })?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(header_err("pixel data shorter than declared dimensions"));
    }
    LumaPlane::new(width, height, payload[..expected].to_vec())
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<LumaPlane> {
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };

    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| unsupported(format!("PNG decode: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| unsupported(format!("PNG decode: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(format!(
            "PNG bit depth {:?} (only 8-bit supported)",
            info.bit_depth
        )));
    }
    let width = info.width as usize;
    let height = info.height as usize;
    let data = &buf[..info.buffer_size()];

    let samples = match info.color_type {
        png::ColorType::Grayscale => data.to_vec(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).map(|px| px[0]).collect(),
        png::ColorType::Rgb => data
            .chunks_exact(3)
            .map(|px| bt601_luma(px[0], px[1], px[2]))
            .collect(),
        png::ColorType::Rgba => data
            .chunks_exact(4)
            .map(|px| bt601_luma(px[0], px[1], px[2]))
            .collect(),
        other => {
            return Err(unsupported(format!("PNG color type {other:?}")));
        }
    };
    LumaPlane::new(width, height, samples)
}

/// Mean squared error between two planes of identical dimensions.
pub fn mse(reference: &LumaPlane, test: &LumaPlane) -> Result<f64> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let sq_err: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sq_err / reference.samples().len() as f64)
}

/// Converts an MSE to PSNR in dB, flooring the MSE at [`MSE_FLOOR`] so the
/// lossless case stays finite.
pub fn psnr_from_mse(mse: f64) -> f64 {
    10.0 * (PEAK * PEAK / mse.max(MSE_FLOOR)).log10()
}

/// PSNR in dB between two planes of identical dimensions.
pub fn psnr(reference: &LumaPlane, test: &LumaPlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(reference, test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("qtarget-pixels-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(bytes).unwrap();
        path
    }

    #[test]
    fn pgm_direct_bytes() {
        let path = tmp_file("tiny.pgm", b"P5 2 2 255 \x00\xff\x80\x40");
        let plane = load_luma(&path, ImageFormat::Pgm).unwrap();
        assert_eq!(plane.width(), 2);
        assert_eq!(plane.height(), 2);
        assert_eq!(plane.samples(), &[0, 255, 128, 64]);
    }

    #[test]
    fn pgm_with_comment_and_newlines() {
        let path = tmp_file("comment.pgm", b"P5\n# cam 3\n2 1\n255\n\x0a\x0b");
        let plane = load_luma(&path, ImageFormat::Pgm).unwrap();
        assert_eq!(plane.samples(), &[0x0a, 0x0b]);
    }

    #[test]
    fn pgm_bad_maxval_rejected() {
        let path = tmp_file("sixteen.pgm", b"P5 1 1 65535 \x00\x00");
        assert!(matches!(
            load_luma(&path, ImageFormat::Pgm),
            Err(Error::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn pgm_truncated_payload_rejected() {
        let path = tmp_file("short.pgm", b"P5 4 4 255 \x00\x01");
        assert!(load_luma(&path, ImageFormat::Pgm).is_err());
    }

    #[test]
    fn raw_y8_dimension_mismatch() {
        let path = tmp_file("ten.y8", &[0u8; 10]);
        let err = load_luma(
            &path,
            ImageFormat::RawY8 {
                width: 3,
                height: 3,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn raw_y8_exact() {
        let path = tmp_file("nine.y8", &[7u8; 9]);
        let plane = load_luma(
            &path,
            ImageFormat::RawY8 {
                width: 3,
                height: 3,
            },
        )
        .unwrap();
        assert_eq!(plane.samples(), &[7u8; 9]);
    }

    fn write_png(
        name: &str,
        color: png::ColorType,
        data: &[u8],
        w: u32,
        h: u32,
    ) -> std::path::PathBuf {
        let path = tmp_file(name, b"");
        let file = fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(file, w, h);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().unwrap();
        writer.write_image_data(data).unwrap();
        path
    }

    #[test]
    fn png_rgb_bt601() {
        // Pure red: 0.299 * 255 = 76.245 -> 76.
        let path = write_png("red.png", png::ColorType::Rgb, &[255, 0, 0], 1, 1);
        let plane = load_luma(&path, ImageFormat::Png).unwrap();
        assert_eq!(plane.samples(), &[76]);
    }

    #[test]
    fn png_rgba_alpha_ignored() {
        let path = write_png("ga.png", png::ColorType::Rgba, &[0, 255, 0, 12], 1, 1);
        let plane = load_luma(&path, ImageFormat::Png).unwrap();
        // 0.587 * 255 = 149.685 -> 150
        assert_eq!(plane.samples(), &[150]);
    }

    #[test]
    fn png_grayscale_passthrough() {
        let path = write_png("g.png", png::ColorType::Grayscale, &[1, 2, 3, 4], 2, 2);
        let plane = load_luma(&path, ImageFormat::Png).unwrap();
        assert_eq!(plane.samples(), &[1, 2, 3, 4]);
    }

    #[test]
    fn psnr_identical_hits_floor_cap() {
        let a = LumaPlane::flat(8, 8, 37);
        let cap = 10.0 * (PEAK * PEAK / MSE_FLOOR).log10();
        assert_eq!(psnr(&a, &a).unwrap(), cap);
    }

    #[test]
    fn psnr_unit_error() {
        let a = LumaPlane::flat(16, 16, 100);
        let b = LumaPlane::flat(16, 16, 101);
        let expected = 10.0 * 65025f64.log10(); // 48.1308...
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-4);
    }

    #[test]
    fn psnr_maximal_error_is_zero() {
        let a = LumaPlane::flat(4, 4, 0);
        let b = LumaPlane::flat(4, 4, 255);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn psnr_symmetric() {
        let a = LumaPlane::from_fn(9, 7, |x, y| (x * 31 + y * 7) as u8);
        let b = LumaPlane::from_fn(9, 7, |x, y| (x * 13 + y * 29) as u8);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        // +e on every pixel, no clamping: PSNR = 10 log10(255^2 / e^2).
        for e in [1u8, 2, 5, 20] {
            let a = LumaPlane::from_fn(12, 12, |x, y| (x + y) as u8 + 40);
            let b = LumaPlane::from_fn(12, 12, |x, y| (x + y) as u8 + 40 + e);
            let expected = 10.0 * (PEAK * PEAK / (e as f64 * e as f64)).log10();
            assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = LumaPlane::flat(4, 4, 0);
        let b = LumaPlane::flat(4, 5, 0);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn resize_crops_and_pads() {
        let a = LumaPlane::from_fn(4, 4, |x, y| (y * 4 + x) as u8);
        let cropped = a.resized_to(2, 2);
        assert_eq!(cropped.samples(), &[0, 1, 4, 5]);
        let padded = a.resized_to(5, 4);
        assert_eq!(padded.sample_clamped(4, 0), a.sample_clamped(3, 0));
    }
}
