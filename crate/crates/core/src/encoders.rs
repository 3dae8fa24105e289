//! Encoder adapters.
//!
//! Two invocation styles sit behind [`EncoderAdapter`]:
//!
//! * the built-in *reference encoder*, an analytic DCT quantize-reconstruct
//!   loop whose distortion equals the LE statistic exactly (via Parseval),
//!   making hermetic end-to-end tests possible; and
//! * *external* command-line encoders described by a small JSON config with
//!   `{input}`/`{output}`/`{qp}` placeholders.
//!
//! PSNR is always recomputed from reconstructed pixels, never parsed from
//! encoder logs, so numbers are comparable across encoders.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::pixels::{self, LumaPlane};
use crate::transform::{block_partition, dct8x8, idct8x8, quantize_coeffs};
use crate::{Error, Result};

/// Outcome of one encode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub qp: i32,
    /// Luma PSNR between source and reconstruction, in dB.
    pub psnr: f64,
    /// Encoder-reported lambda, when the adapter exposes one.
    pub lambda: Option<f64>,
    /// Compressed size in bytes, when known.
    pub bytes: Option<u64>,
}

/// QP range of the built-in reference encoder.
pub const REFERENCE_QP_RANGE: (i32, i32) = (4, 40);

/// Quantizer step of the reference encoder: doubles every 6 QP, hitting
/// exactly 8/16/32 at QP 22/28/34.
pub fn reference_q_step(qp: i32) -> f64 {
    2f64.powf((qp - 4) as f64 / 6.0)
}

/// Encodes with the built-in reference encoder: forward DCT, quantize every
/// coefficient to the nearest multiple of the step, inverse DCT.
///
/// Distortion is measured over the padded block domain in floating point (no
/// rounding, no clamping), which keeps
/// `PSNR = 10*log10(255^2) - 10*LE(q_step)` an identity at every QP.
pub fn reference_encode(plane: &LumaPlane, qp: i32) -> Result<EncodeResult> {
    let (min, max) = REFERENCE_QP_RANGE;
    if qp < min || qp > max {
        return Err(Error::QpOutOfRange { qp, min, max });
    }
    let step = reference_q_step(qp);

    let blocks = block_partition(plane);
    let mut sq_err = 0.0f64;
    for block in &blocks {
        let coeffs = dct8x8(block);
        let rec = idct8x8(&quantize_coeffs(&coeffs, step));
        for (i, &px) in block.iter().enumerate() {
            let d = px as f64 - rec[i];
            sq_err += d * d;
        }
    }
    let mse = sq_err / (blocks.len() * 64) as f64;
    Ok(EncodeResult {
        qp,
        psnr: pixels::psnr_from_mse(mse),
        lambda: None,
        bytes: None,
    })
}

/// Config for driving an external encoder binary.
///
/// `encode_cmd` runs with `{input}` (a binary PGM), `{output}`, `{qp}`,
/// `{width}` and `{height}` substituted, via `sh -c`. When `decode_cmd` is
/// present it reconstructs `{output}` from the encoded `{input}`; otherwise
/// the encode output itself is read back as the reconstruction. Reconstructed
/// files may be PGM, PNG, or raw 8-bit luma of the source dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEncoderConfig {
    pub encoder_id: String,
    pub qp_range: (i32, i32),
    pub encode_cmd: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode_cmd: Option<String>,
    /// Per-process timeout in seconds; default 120.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<u64>,
}

impl ExternalEncoderConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExternalEncoderConfig =
            serde_json::from_str(&text).map_err(|e| Error::ModelFile {
                path: path.to_path_buf(),
                reason: format!("adapter JSON parse: {e}"),
            })?;
        if cfg.qp_range.0 > cfg.qp_range.1 {
            return Err(Error::ModelFile {
                path: path.to_path_buf(),
                reason: format!("empty qp_range {:?}", cfg.qp_range),
            });
        }
        Ok(cfg)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_s.unwrap_or(120))
    }
}

static JOB_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Runs one external encode (and decode, if configured) in an isolated
/// subdirectory of `workdir`, and measures luma PSNR against the source.
/// The subdirectory is removed on success and kept for inspection on failure.
pub fn external_encode(
    cfg: &ExternalEncoderConfig,
    plane: &LumaPlane,
    qp: i32,
    workdir: &Path,
) -> Result<EncodeResult> {
    let (min, max) = cfg.qp_range;
    if qp < min || qp > max {
        return Err(Error::QpOutOfRange { qp, min, max });
    }

    let job = JOB_COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = workdir.join(format!("job-{job}-qp{qp}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let result = run_external(cfg, plane, qp, &dir);
    if result.is_ok() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    result
}

fn run_external(
    cfg: &ExternalEncoderConfig,
    plane: &LumaPlane,
    qp: i32,
    dir: &Path,
) -> Result<EncodeResult> {
    let input = dir.join("input.pgm");
    let encoded = dir.join("encoded.bin");
    pixels::write_pgm(plane, &input)?;

    let fill = |template: &str, input: &Path, output: &Path| {
        template
            .replace("{input}", &input.display().to_string())
            .replace("{output}", &output.display().to_string())
            .replace("{qp}", &qp.to_string())
            .replace("{width}", &plane.width().to_string())
            .replace("{height}", &plane.height().to_string())
    };

    run_command(&fill(&cfg.encode_cmd, &input, &encoded), dir, cfg.timeout())?;
    if !encoded.exists() {
        return Err(Error::BadEncoderOutput(format!(
            "encode command produced no output at {}",
            encoded.display()
        )));
    }
    let bytes = std::fs::metadata(&encoded)
        .map_err(|e| Error::io(&encoded, e))?
        .len();

    let recon_path = match &cfg.decode_cmd {
        Some(decode_cmd) => {
            let decoded = dir.join("decoded.out");
            run_command(&fill(decode_cmd, &encoded, &decoded), dir, cfg.timeout())?;
            decoded
        }
        None => encoded.clone(),
    };

    let recon = pixels::load_luma_sniffed(&recon_path, Some((plane.width(), plane.height())))?;
    // Codecs may pad to block multiples; compare at source dimensions.
    let recon = recon.resized_to(plane.width(), plane.height());
    let psnr = pixels::psnr(plane, &recon)?;

    Ok(EncodeResult {
        qp,
        psnr,
        lambda: None,
        bytes: Some(bytes),
    })
}

fn run_command(cmdline: &str, dir: &Path, timeout: Duration) -> Result<()> {
    let stdout_path = dir.join("stdout.log");
    let stderr_path = dir.join("stderr.log");
    let stdout = std::fs::File::create(&stdout_path).map_err(|e| Error::io(&stdout_path, e))?;
    let stderr = std::fs::File::create(&stderr_path).map_err(|e| Error::io(&stderr_path, e))?;

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmdline)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::from(stdout))
        .stderr(Stdio::from(stderr))
        .spawn()
        .map_err(|e| Error::ProcessFailed {
            code: None,
            tail: format!("spawn `{cmdline}`: {e}"),
        })?;

    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if started.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::ProcessTimeout(timeout.as_secs()));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                return Err(Error::ProcessFailed {
                    code: None,
                    tail: format!("wait `{cmdline}`: {e}"),
                })
            }
        }
    };

    if !status.success() {
        let mut tail = String::new();
        for path in [&stderr_path, &stdout_path] {
            if let Ok(text) = std::fs::read_to_string(path) {
                let trimmed = text.trim();
                if !trimmed.is_empty() {
                    let start = trimmed.len().saturating_sub(1024);
                    tail.push_str(&trimmed[start..]);
                    tail.push('\n');
                }
            }
        }
        return Err(Error::ProcessFailed {
            code: status.code(),
            tail: format!("`{cmdline}`: {}", tail.trim()),
        });
    }
    Ok(())
}

/// An encoder behind a uniform interface.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderAdapter {
    Reference,
    External(ExternalEncoderConfig),
}

impl EncoderAdapter {
    pub fn encoder_id(&self) -> &str {
        match self {
            EncoderAdapter::Reference => "reference",
            EncoderAdapter::External(cfg) => &cfg.encoder_id,
        }
    }

    pub fn qp_range(&self) -> (i32, i32) {
        match self {
            EncoderAdapter::Reference => REFERENCE_QP_RANGE,
            EncoderAdapter::External(cfg) => cfg.qp_range,
        }
    }

    /// Encodes `plane` at `qp`. External adapters need a `workdir`; the
    /// reference encoder ignores it.
    pub fn encode(
        &self,
        plane: &LumaPlane,
        qp: i32,
        workdir: Option<&Path>,
    ) -> Result<EncodeResult> {
        match self {
            EncoderAdapter::Reference => reference_encode(plane, qp),
            EncoderAdapter::External(cfg) => {
                let dir: PathBuf = match workdir {
                    Some(d) => d.to_path_buf(),
                    None => std::env::temp_dir(),
                };
                external_encode(cfg, plane, qp, &dir)
            }
        }
    }
}

/// Whether quality rises or falls as the raw QP value grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisDirection {
    /// JPEG-style: larger QP means better quality.
    QualityIncreasing,
    /// HEVC/AV1-style: larger QP means worse quality.
    QualityDecreasing,
}

/// Normalizes one QP axis so it starts at 0 with quality decreasing as the
/// transformed QP grows: quality-increasing axes map `qp -> max - qp`,
/// quality-decreasing axes map `qp -> qp - min`.
pub fn align_qp_axis(qps: &[i32], direction: AxisDirection) -> Vec<i32> {
    if qps.is_empty() {
        return Vec::new();
    }
    match direction {
        AxisDirection::QualityIncreasing => {
            let max = *qps.iter().max().unwrap();
            qps.iter().map(|&q| max - q).collect()
        }
        AxisDirection::QualityDecreasing => {
            let min = *qps.iter().min().unwrap();
            qps.iter().map(|&q| q - min).collect()
        }
    }
}

/// Aligns two encoders' QP axes onto the shared start-at-0,
/// quality-decreasing convention so their distortion curves are comparable.
pub fn align_qp_axes(
    qps_a: &[i32],
    direction_a: AxisDirection,
    qps_b: &[i32],
    direction_b: AxisDirection,
) -> (Vec<i32>, Vec<i32>) {
    (
        align_qp_axis(qps_a, direction_a),
        align_qp_axis(qps_b, direction_b),
    )
}
