//! The inference pipeline: image -> LE -> predicted anchor PSNRs ->
//! per-image lambda model -> QP for a target PSNR.
//!
//! [`predict_qp`] runs, in order:
//!
//! 1. one shared forward-DCT pass producing LE at the model set's steps;
//! 2. each anchor line turns its LE into a predicted PSNR at that anchor's QP;
//! 3. the QP-lambda map turns anchor QPs into lambdas;
//! 4. a least-squares fit through the `(lambda, PSNR)` anchors yields the
//!    per-image model `PSNR = a*log10(lambda) + b`;
//! 5. solving for the target PSNR gives the lambda, and
//! 6. the map's inverse (rounded, clamped) gives the integer QP.
//!
//! No encode happens anywhere in this path; the whole budget is one DCT pass
//! over the image plus a handful of scalar operations.

use std::path::PathBuf;

use serde::Serialize;

use crate::models::{fit_dlambda, lambda_for_target, DLambdaModel, PsnrLeModelSet, QpRounding};
use crate::pixels::{self, LumaPlane};
use crate::transform::{compute_le, QuantMode};
use crate::util::parallel_map;
use crate::{Error, Result};

/// Predicted anchor PSNRs closer together than this are treated as a flat
/// quality model (a degenerate fit) rather than a broken one. Reference-model
/// anchors on a losslessly-quantizable image agree to ~1e-3 dB; genuinely
/// inconsistent anchors disagree by whole dB.
const FLAT_PSNR_SPREAD_DB: f64 = 0.01;

/// One anchor's intermediates, kept for audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnchorPrediction {
    pub qp: i32,
    pub q_step: u32,
    pub le: f64,
    pub predicted_psnr: f64,
    pub lambda: f64,
}

/// The outcome of [`predict_qp`], carrying every intermediate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlDecision {
    /// Chosen integer QP, within the model set's range.
    pub qp: i32,
    /// The lambda solving the per-image model for the target (pre-clamping).
    pub lambda: f64,
    /// Real-valued QP before rounding.
    pub raw_qp: f64,
    /// Per-image model; absent on the flat degenerate path.
    pub dlambda: Option<DLambdaModel>,
    pub predicted_points: Vec<AnchorPrediction>,
    pub clamped: bool,
    pub warnings: Vec<String>,
}

/// Predicts the QP that drives `plane` to `target_psnr` under the encoder
/// described by `model_set`, without encoding.
pub fn predict_qp(
    plane: &LumaPlane,
    target_psnr: f64,
    model_set: &PsnrLeModelSet,
) -> Result<ControlDecision> {
    if !(target_psnr > 0.0 && target_psnr < 100.0) {
        return Err(Error::InvalidTarget(target_psnr));
    }

    let le = compute_le(plane, &model_set.q_steps(), QuantMode::Centered)?;

    let mut anchors = Vec::with_capacity(model_set.entries.len());
    for entry in &model_set.entries {
        let le_val = le
            .le_for(entry.q_step)
            .ok_or(Error::MissingQStep(entry.q_step))?;
        anchors.push(AnchorPrediction {
            qp: entry.qp,
            q_step: entry.q_step,
            le: le_val,
            predicted_psnr: entry.a * le_val + entry.b,
            lambda: model_set.qp_lambda.lambda_from_qp(entry.qp)?,
        });
    }

    let pairs: Vec<(f64, f64)> = anchors
        .iter()
        .map(|a| (a.lambda, a.predicted_psnr))
        .collect();
    let psnr_lo = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let psnr_hi = pairs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);

    let mut warnings = Vec::new();
    if target_psnr < psnr_lo || target_psnr > psnr_hi {
        warnings.push(format!(
            "target {target_psnr:.2} dB outside the anchor span [{psnr_lo:.2}, {psnr_hi:.2}] dB; extrapolating"
        ));
    }

    match fit_dlambda(&pairs) {
        Ok(model) => {
            let lambda = lambda_for_target(&model, target_psnr);
            if lambda.is_finite() && lambda > 0.0 {
                let choice = model_set.qp_lambda.qp_from_lambda(
                    lambda,
                    QpRounding::Nearest,
                    model_set.qp_range,
                )?;
                if choice.clamped {
                    warnings.push(format!(
                        "raw QP {:.2} outside range [{}, {}]; clamped to {}",
                        choice.raw, model_set.qp_range.0, model_set.qp_range.1, choice.qp
                    ));
                }
                Ok(ControlDecision {
                    qp: choice.qp,
                    lambda,
                    raw_qp: choice.raw,
                    dlambda: Some(model),
                    predicted_points: anchors,
                    clamped: choice.clamped,
                    warnings,
                })
            } else {
                // |a| was tiny; the solved lambda over/underflowed.
                let at_max = lambda.is_infinite() && lambda > 0.0;
                flat_decision(
                    model_set,
                    target_psnr,
                    at_max,
                    Some(model),
                    anchors,
                    warnings,
                )
            }
        }
        Err(Error::NonDecreasingQuality { a, points }) => {
            if psnr_hi - psnr_lo < FLAT_PSNR_SPREAD_DB {
                // All anchors predict the same quality: the model is flat,
                // not broken. Any QP lands at that quality, so pick the end.
                let mean = (psnr_lo + psnr_hi) / 2.0;
                flat_decision(
                    model_set,
                    target_psnr,
                    target_psnr <= mean,
                    None,
                    anchors,
                    warnings,
                )
            } else {
                Err(Error::NonDecreasingQuality { a, points })
            }
        }
        Err(e) => Err(e),
    }
}

/// Degenerate path: the per-image quality model is flat, so the target is
/// either trivially met (every QP suffices -> coarsest) or unreachable
/// (-> finest). Either way the decision is clamped and explained.
fn flat_decision(
    model_set: &PsnrLeModelSet,
    target_psnr: f64,
    reachable: bool,
    model: Option<DLambdaModel>,
    anchors: Vec<AnchorPrediction>,
    mut warnings: Vec<String>,
) -> Result<ControlDecision> {
    let qp = if reachable {
        model_set.qp_range.1
    } else {
        model_set.qp_range.0
    };
    let lambda = model_set.qp_lambda.lambda_from_qp(qp)?;
    warnings.push(format!(
        "flat quality model: every anchor predicts ~the same PSNR; target {target_psnr:.2} dB is {}; clamped to qp {qp}",
        if reachable { "met at any QP" } else { "unreachable" }
    ));
    Ok(ControlDecision {
        qp,
        lambda,
        raw_qp: qp as f64,
        dlambda: model,
        predicted_points: anchors,
        clamped: true,
        warnings,
    })
}

/// [`predict_qp`] over many planes with a bounded worker pool. Output order
/// matches input order and is independent of `parallelism`; item failures do
/// not fail the batch.
pub fn predict_qp_batch(
    planes: &[LumaPlane],
    target_psnr: f64,
    model_set: &PsnrLeModelSet,
    parallelism: usize,
) -> Vec<Result<ControlDecision>> {
    parallel_map(planes, parallelism, |plane| {
        predict_qp(plane, target_psnr, model_set)
    })
}

/// Path-based batch: each worker loads its image (format by extension,
/// `raw_dims` for headerless luma) and predicts. Unreadable items error
/// individually.
pub fn predict_qp_batch_paths(
    paths: &[PathBuf],
    raw_dims: Option<(usize, usize)>,
    target_psnr: f64,
    model_set: &PsnrLeModelSet,
    parallelism: usize,
) -> Vec<Result<ControlDecision>> {
    parallel_map(paths, parallelism, |path| {
        let format = pixels::format_for_path(path, raw_dims)?;
        let plane = pixels::load_luma(path, format)?;
        predict_qp(&plane, target_psnr, model_set)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{reference_encode, reference_q_step, REFERENCE_QP_RANGE};
    use crate::models::{hevc_log_linear, PsnrLeEntry};
    use crate::synth;
    use crate::transform::forward_dct_block_count;
    use crate::{MSE_FLOOR, PEAK};

    /// The model set training on the reference encoder converges to: exact
    /// anchor lines at the integer-step QPs.
    fn reference_model_set() -> PsnrLeModelSet {
        let b = 10.0 * (PEAK * PEAK).log10();
        let entries = [(8u32, 22), (16, 28), (32, 34)]
            .into_iter()
            .map(|(q_step, qp)| PsnrLeEntry {
                q_step,
                qp,
                a: -10.0,
                b,
                r2: Some(1.0),
            })
            .collect();
        let set = PsnrLeModelSet {
            encoder_id: "reference".into(),
            qp_range: REFERENCE_QP_RANGE,
            qp_lambda: hevc_log_linear(),
            entries,
        };
        set.validate().unwrap();
        set
    }

    #[test]
    fn rejects_bad_targets() {
        let set = reference_model_set();
        let p = LumaPlane::flat(8, 8, 0);
        assert!(matches!(
            predict_qp(&p, 0.0, &set),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            predict_qp(&p, 100.0, &set),
            Err(Error::InvalidTarget(_))
        ));
        assert!(matches!(
            predict_qp(&p, -5.0, &set),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn flat_plane_clamps_to_coarsest_qp() {
        let set = reference_model_set();
        let p = LumaPlane::flat(64, 64, 128);
        let d = predict_qp(&p, 40.0, &set).unwrap();
        assert_eq!(d.qp, set.qp_range.1);
        assert!(d.clamped);
        assert!(!d.warnings.is_empty());
        assert!(d.dlambda.is_none());
        assert!(d.lambda > 0.0);
        for a in &d.predicted_points {
            assert!(a.predicted_psnr > 88.0);
            assert_eq!(a.le, MSE_FLOOR.log10());
        }
    }

    #[test]
    fn flat_plane_unreachable_target_clamps_to_finest_qp() {
        let set = reference_model_set();
        let p = LumaPlane::flat(64, 64, 128);
        // The floor cap is 88.13 dB; ask for more.
        let d = predict_qp(&p, 95.0, &set).unwrap();
        assert_eq!(d.qp, set.qp_range.0);
        assert!(d.clamped);
    }

    #[test]
    fn genuinely_rising_anchors_error() {
        // Anchor intercepts rigged so a flat image predicts sharply rising
        // quality along lambda; that is a broken model, not a flat one.
        let set = PsnrLeModelSet {
            encoder_id: "broken".into(),
            qp_range: (4, 40),
            qp_lambda: hevc_log_linear(),
            entries: vec![
                PsnrLeEntry {
                    q_step: 8,
                    qp: 10,
                    a: -10.0,
                    b: 30.0,
                    r2: None,
                },
                PsnrLeEntry {
                    q_step: 16,
                    qp: 20,
                    a: -10.0,
                    b: 40.0,
                    r2: None,
                },
                PsnrLeEntry {
                    q_step: 32,
                    qp: 30,
                    a: -10.0,
                    b: 50.0,
                    r2: None,
                },
            ],
        };
        set.validate().unwrap();
        let p = LumaPlane::flat(32, 32, 128);
        match predict_qp(&p, 40.0, &set) {
            Err(Error::NonDecreasingQuality { a, points }) => {
                assert!(a > 0.0);
                assert_eq!(points.len(), 3);
            }
            other => panic!("expected NonDecreasingQuality, got {other:?}"),
        }
    }

    #[test]
    fn noise_plane_lands_near_target() {
        let set = reference_model_set();
        let plane = synth::noise_plane(256, 256, 30.0, 0, 0x600d);
        let target = 40.0;
        let d = predict_qp(&plane, target, &set).unwrap();
        assert!(!d.clamped);

        // Oracle: the chosen QP must beat or match both neighbors, up to
        // half of one QP's dB step of rounding asymmetry.
        let err_at = |qp: i32| (reference_encode(&plane, qp).unwrap().psnr - target).abs();
        let here = err_at(d.qp);
        for neighbor in [d.qp - 1, d.qp + 1] {
            if neighbor < REFERENCE_QP_RANGE.0 || neighbor > REFERENCE_QP_RANGE.1 {
                continue;
            }
            let there = err_at(neighbor);
            let step = (reference_encode(&plane, d.qp).unwrap().psnr
                - reference_encode(&plane, neighbor).unwrap().psnr)
                .abs();
            assert!(
                here <= there + 0.5 * step,
                "qp {} err {here:.3} vs neighbor {} err {there:.3} (step {step:.3})",
                d.qp,
                neighbor
            );
        }
    }

    #[test]
    fn qp_monotone_in_target() {
        let set = reference_model_set();
        let plane = synth::noise_plane(128, 128, 25.0, 1, 77);
        let d_hi = predict_qp(&plane, 42.0, &set).unwrap();
        let d_lo = predict_qp(&plane, 38.0, &set).unwrap();
        assert!(d_hi.qp <= d_lo.qp);
        assert!(d_hi.raw_qp <= d_lo.raw_qp, "pre-rounding monotonicity");
    }

    #[test]
    fn raw_qp_monotone_across_target_sweep() {
        let set = reference_model_set();
        let plane = synth::noise_plane(96, 96, 40.0, 0, 3);
        let mut prev_raw = f64::INFINITY;
        let mut prev_qp = i32::MAX;
        for t in 35..=45 {
            let d = predict_qp(&plane, t as f64, &set).unwrap();
            assert!(d.raw_qp <= prev_raw);
            assert!(d.qp <= prev_qp);
            prev_raw = d.raw_qp;
            prev_qp = d.qp;
        }
    }

    #[test]
    fn audit_fields_reconstruct_decision() {
        let set = reference_model_set();
        let plane = synth::noise_plane(64, 64, 22.0, 2, 11);
        let target = 39.0;
        let d = predict_qp(&plane, target, &set).unwrap();
        let m = d.dlambda.as_ref().unwrap();
        let lambda_again = 10f64.powf((target - m.b) / m.a);
        assert_eq!(d.lambda, lambda_again);
        let choice = set
            .qp_lambda
            .qp_from_lambda(d.lambda, QpRounding::Nearest, set.qp_range)
            .unwrap();
        assert_eq!(choice.qp, d.qp);
        assert_eq!(choice.raw, d.raw_qp);
        // anchors recompute from the model set
        for (anchor, entry) in d.predicted_points.iter().zip(&set.entries) {
            assert_eq!(anchor.predicted_psnr, entry.a * anchor.le + entry.b);
        }
    }

    #[test]
    fn exactly_one_dct_pass() {
        let set = reference_model_set();
        let plane = synth::noise_plane(120, 72, 18.0, 1, 5);
        let blocks = (120usize.div_ceil(8)) * (72usize.div_ceil(8));
        let before = forward_dct_block_count();
        predict_qp(&plane, 40.0, &set).unwrap();
        assert_eq!(forward_dct_block_count() - before, blocks as u64);
    }

    #[test]
    fn batch_of_one_equals_single() {
        let set = reference_model_set();
        let plane = synth::noise_plane(64, 64, 15.0, 0, 9);
        let single = predict_qp(&plane, 41.0, &set).unwrap();
        let batch = predict_qp_batch(std::slice::from_ref(&plane), 41.0, &set, 1);
        assert_eq!(batch.len(), 1);
        assert_eq!(*batch[0].as_ref().unwrap(), single);
    }

    #[test]
    fn batch_parallelism_is_invisible() {
        let set = reference_model_set();
        let planes: Vec<LumaPlane> = (0..12)
            .map(|i| synth::noise_plane(48, 48, 8.0 + i as f64 * 4.0, i % 3, 1000 + i as u64))
            .collect();
        let seq = predict_qp_batch(&planes, 38.0, &set, 1);
        let par = predict_qp_batch(&planes, 38.0, &set, 8);
        assert_eq!(seq.len(), par.len());
        for (a, b) in seq.iter().zip(par.iter()) {
            assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
        }
    }

    #[test]
    fn batch_paths_isolates_failures() {
        let set = reference_model_set();
        let dir = std::env::temp_dir().join(format!("qtarget-control-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("ok.pgm");
        pixels::write_pgm(&synth::noise_plane(32, 32, 20.0, 0, 4), &good).unwrap();
        let missing = dir.join("nope.pgm");
        let results = predict_qp_batch_paths(&[good, missing], None, 40.0, &set, 4);
        assert!(results[0].is_ok());
        assert!(results[1].is_err());
    }

    #[test]
    fn reference_q_step_alignment_with_anchors() {
        // The anchors used by the reference model sit exactly on integer steps.
        assert_eq!(reference_q_step(22), 8.0);
        assert_eq!(reference_q_step(28), 16.0);
        assert_eq!(reference_q_step(34), 32.0);
    }
}
