//! Control-accuracy metrics and the evaluation harness.
//!
//! The two headline metrics are deliberately asymmetric: `diff_percent`
//! measures *bias* (how far the mean achieved PSNR sits from the target —
//! symmetric misses cancel), while `quality_variance` measures *spread
//! around the target itself*, not around the sample mean. An estimator that
//! always lands 2 dB high scores 0 on neither.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::predict_qp;
use crate::encoders::EncoderAdapter;
use crate::models::PsnrLeModelSet;
use crate::pixels;
use crate::util::parallel_map;
use crate::{Error, Result};

/// Control difference: `|mean(psnrs) - target| / target * 100`.
pub fn diff_percent(psnrs: &[f64], target: f64) -> Result<f64> {
    if psnrs.is_empty() {
        return Err(Error::EmptyInput("diff_percent psnr list"));
    }
    if target <= 0.0 || target.is_nan() {
        return Err(Error::InvalidTarget(target));
    }
    let mean = psnrs.iter().sum::<f64>() / psnrs.len() as f64;
    Ok((mean - target).abs() / target * 100.0)
}

/// Quality variance about the *target*: `sum((target - psnr_i)^2) / (N - 1)`.
pub fn quality_variance(psnrs: &[f64], target: f64) -> Result<f64> {
    if psnrs.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: psnrs.len(),
        });
    }
    let sum: f64 = psnrs.iter().map(|p| (target - p) * (target - p)).sum();
    Ok(sum / (psnrs.len() - 1) as f64)
}

/// Fraction of images strictly below `threshold`. Hitting the threshold
/// exactly is not a bad case.
pub fn bad_case_ratio(psnrs: &[f64], threshold: f64) -> Result<f64> {
    if psnrs.is_empty() {
        return Err(Error::EmptyInput("bad_case_ratio psnr list"));
    }
    let bad = psnrs.iter().filter(|&&p| p < threshold).count();
    Ok(bad as f64 / psnrs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub bad_case_threshold: f64,
    /// Histogram bin width in dB.
    pub bin_width: f64,
    /// Histogram half-span around the target in dB.
    pub span: f64,
    pub parallelism: usize,
    /// Working directory root for external adapters.
    pub workdir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bad_case_threshold: 39.0,
            bin_width: 0.5,
            span: 5.0,
            parallelism: 1,
            workdir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerImageEval {
    pub image_id: String,
    pub qp: i32,
    pub achieved_psnr: f64,
    pub clamped: bool,
    pub pixels: usize,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub target_psnr: f64,
    pub per_image: Vec<PerImageEval>,
    pub diff_percent: f64,
    /// Absent with one image (the N-1 divisor needs two).
    pub variance: Option<f64>,
    pub bad_case_ratio: f64,
    pub histogram: Vec<HistogramBin>,
    /// `total bytes * 8 / total pixels` over images whose adapter reported a
    /// size; absent otherwise.
    pub mean_bitrate_bpp: Option<f64>,
    pub failures: Vec<(String, String)>,
}

/// Runs the full control loop over a corpus at one target: predict the QP,
/// encode with it, measure the achieved PSNR, aggregate the metrics.
/// Per-image failures are excluded from the metrics and listed in the report.
pub fn evaluate(
    corpus: &[(String, PathBuf)],
    target_psnr: f64,
    model_set: &PsnrLeModelSet,
    adapter: &EncoderAdapter,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("evaluation corpus"));
    }

    let outcomes = parallel_map(corpus, opts.parallelism, |(image_id, path)| {
        let run = || -> Result<PerImageEval> {
            let format = pixels::format_for_path(path, None)?;
            let plane = pixels::load_luma(path, format)?;
            let decision = predict_qp(&plane, target_psnr, model_set)?;
            let enc = adapter.encode(&plane, decision.qp, opts.workdir.as_deref())?;
            Ok(PerImageEval {
                image_id: image_id.clone(),
                qp: decision.qp,
                achieved_psnr: enc.psnr,
                clamped: decision.clamped,
                pixels: plane.width() * plane.height(),
                bytes: enc.bytes,
            })
        };
        run().map_err(|e| (image_id.clone(), e.to_string()))
    });

    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(ev) => per_image.push(ev),
            Err(f) => failures.push(f),
        }
    }
    if per_image.is_empty() {
        return Err(Error::EmptyInput("no image evaluated successfully"));
    }

    let psnrs: Vec<f64> = per_image.iter().map(|e| e.achieved_psnr).collect();
    let diff = diff_percent(&psnrs, target_psnr)?;
    let variance = if psnrs.len() >= 2 {
        Some(quality_variance(&psnrs, target_psnr)?)
    } else {
        None
    };
    let bad = bad_case_ratio(&psnrs, opts.bad_case_threshold)?;
    let histogram = build_histogram(&psnrs, target_psnr, opts.bin_width, opts.span);

    let with_bytes: Vec<&PerImageEval> = per_image.iter().filter(|e| e.bytes.is_some()).collect();
    let mean_bitrate_bpp = if with_bytes.is_empty() {
        None
    } else {
        let bits: f64 = with_bytes
            .iter()
            .map(|e| e.bytes.unwrap() as f64 * 8.0)
            .sum();
        let px: f64 = with_bytes.iter().map(|e| e.pixels as f64).sum();
        Some(bits / px)
    };

    Ok(EvalReport {
        target_psnr,
        per_image,
        diff_percent: diff,
        variance,
        bad_case_ratio: bad,
        histogram,
        mean_bitrate_bpp,
        failures,
    })
}

/// Bins of `bin_width` dB spanning `[target - span, target + span]`.
/// Values outside the span land in the end bins, so counts always sum to
/// the number of images.
fn build_histogram(psnrs: &[f64], target: f64, bin_width: f64, span: f64) -> Vec<HistogramBin> {
    let n_bins = ((2.0 * span / bin_width).round() as usize).max(1);
    let lo = target - span;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * bin_width,
            hi: lo + (i + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for &p in psnrs {
        let idx = (((p - lo) / bin_width).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        bins[idx].count += 1;
    }
    bins
}

/// Macro-averages across per-target reports (the standard protocol sweeps
/// targets and averages the headline metrics).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MacroAverages {
    pub mean_diff_percent: f64,
    pub mean_variance: Option<f64>,
}

pub fn macro_average(reports: &[EvalReport]) -> Result<MacroAverages> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("macro_average reports"));
    }
    let mean_diff_percent =
        reports.iter().map(|r| r.diff_percent).sum::<f64>() / reports.len() as f64;
    let variances: Vec<f64> = reports.iter().filter_map(|r| r.variance).collect();
    let mean_variance = if variances.is_empty() {
        None
    } else {
        Some(variances.iter().sum::<f64>() / variances.len() as f64)
    };
    Ok(MacroAverages {
        mean_diff_percent,
        mean_variance,
    })
}

/// Combined accuracy over several test sets evaluated at the *same* target.
/// Both weightings are reported, because they disagree whenever set sizes
/// differ: per-set averaging gives each set one vote, pooling gives each
/// image one vote.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CrossSetSummary {
    /// Mean of the per-set diff%.
    pub set_weighted_diff_percent: f64,
    /// diff% over the union of all images.
    pub image_weighted_diff_percent: f64,
    /// Mean of the per-set variances (sets with one image are skipped).
    pub set_weighted_variance: Option<f64>,
    /// Variance over the union of all images.
    pub image_weighted_variance: Option<f64>,
}

pub fn cross_set_summary(reports: &[EvalReport]) -> Result<CrossSetSummary> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("cross_set_summary reports"));
    }
    let target = reports[0].target_psnr;
    if reports.iter().any(|r| r.target_psnr != target) {
        return Err(Error::DegenerateFit(
            "cross_set_summary needs a shared target PSNR".into(),
        ));
    }

    let set_weighted_diff_percent =
        reports.iter().map(|r| r.diff_percent).sum::<f64>() / reports.len() as f64;
    let variances: Vec<f64> = reports.iter().filter_map(|r| r.variance).collect();
    let set_weighted_variance = if variances.is_empty() {
        None
    } else {
        Some(variances.iter().sum::<f64>() / variances.len() as f64)
    };

    let pooled: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.per_image.iter().map(|e| e.achieved_psnr))
        .collect();
    let image_weighted_diff_percent = diff_percent(&pooled, target)?;
    let image_weighted_variance = if pooled.len() >= 2 {
        Some(quality_variance(&pooled, target)?)
    } else {
        None
    };

    Ok(CrossSetSummary {
        set_weighted_diff_percent,
        image_weighted_diff_percent,
        set_weighted_variance,
        image_weighted_variance,
    })
}

/// Per-image rows as CSV.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("image_id,qp,achieved_psnr,clamped,bytes\n");
    for e in &report.per_image {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.image_id.replace([',', '\n', '\r'], "_"),
            e.qp,
            e.achieved_psnr,
            e.clamped,
            e.bytes.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Histogram as CSV (`bin_low,bin_high,count`), ready for plotting.
pub fn write_histogram_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count\n");
    for b in &report.histogram {
        out.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Full report as JSON.
pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Summaries for a multi-target run, one row per target plus the macro row.
pub fn write_targets_summary_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let macro_avg = macro_average(reports)?;
    let mut out =
        String::from("target_psnr,images,diff_percent,variance,bad_case_ratio,mean_bitrate_bpp\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.target_psnr,
            r.per_image.len(),
            r.diff_percent,
            r.variance.map(|v| v.to_string()).unwrap_or_default(),
            r.bad_case_ratio,
            r.mean_bitrate_bpp
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ));
    }
    out.push_str(&format!(
        "average,,{},{},,\n",
        macro_avg.mean_diff_percent,
        macro_avg
            .mean_variance
            .map(|v| v.to_string())
            .unwrap_or_default()
    ));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
