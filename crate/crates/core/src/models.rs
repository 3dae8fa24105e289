//! Linear model machinery: least-squares fits, the pooled PSNR-LE model set,
//! the per-image quality/lambda line, and QP <-> lambda maps.
//!
//! Two kinds of lines live here and it pays to keep them apart:
//!
//! * [`PsnrLeEntry`] lines are *content-independent*. Each maps LE at one
//!   quantizer step to the PSNR a given encoder produces at one fixed QP,
//!   pooled over a training corpus. A trio of them (a [`PsnrLeModelSet`])
//!   ships per encoder.
//! * [`DLambdaModel`] is *per image*: `PSNR = a * log10(lambda) + b`, fitted
//!   from the anchor points the model set predicts for that image. Solving it
//!   for a target PSNR gives the lambda, and the QP-lambda map turns that
//!   into the QP to encode with.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::transform::LeVector;
use crate::{Error, Result, PEAK};

/// A fitted line `y = a*x + b`. `r2` is absent for two-point fits and for
/// fits where the total sum of squares is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub a: f64,
    pub b: f64,
    pub r2: Option<f64>,
}

impl Line {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Ordinary least squares over `(x, y)` points.
///
/// Errors with [`Error::VerticalFit`] when every x is identical and
/// [`Error::TooFewPoints`] below two points.
pub fn fit_line(points: &[(f64, f64)]) -> Result<Line> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::VerticalFit);
    }
    let a = sxy / sxx;
    let b = mean_y - a * mean_x;

    let r2 = if n == 2 {
        None
    } else {
        let ss_tot: f64 = points
            .iter()
            .map(|&(_, y)| (y - mean_y) * (y - mean_y))
            .sum();
        if ss_tot == 0.0 {
            None
        } else {
            let ss_res: f64 = points
                .iter()
                .map(|&(x, y)| {
                    let r = y - (a * x + b);
                    r * r
                })
                .sum();
            Some(1.0 - ss_res / ss_tot)
        }
    };
    Ok(Line { a, b, r2 })
}

/// One trained anchor: at quantizer step `q_step`, the encoder at `qp`
/// produces `PSNR = a * LE + b` (goodness of fit `r2`, pooled over the
/// training corpus).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrLeEntry {
    pub q_step: u32,
    pub qp: i32,
    pub a: f64,
    pub b: f64,
    pub r2: Option<f64>,
}

impl PsnrLeEntry {
    pub fn line(&self) -> Line {
        Line {
            a: self.a,
            b: self.b,
            r2: self.r2,
        }
    }
}

/// QP <-> lambda relationship of an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QpLambdaMap {
    /// `QP = c1 * ln(lambda) + c2`, the HEVC-family closed form.
    LogLinear { c1: f64, c2: f64 },
    /// Sorted `(qp, lambda)` knots, linear in log-lambda between knots.
    Table { table: Vec<(i32, f64)> },
}

/// The HEVC-family log-linear map with the standard constants.
pub fn hevc_log_linear() -> QpLambdaMap {
    QpLambdaMap::LogLinear {
        c1: 4.2005,
        c2: 13.7122,
    }
}

/// Rounding policy when converting a real-valued QP to an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QpRounding {
    /// Nearest integer; exact halves go to the *lower* QP, which for a
    /// quality-decreasing axis is the quality-safe side.
    #[default]
    Nearest,
    Floor,
    Ceil,
}

/// Result of a lambda -> QP conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpChoice {
    pub qp: i32,
    /// The pre-rounding real-valued QP.
    pub raw: f64,
    /// True when the rounded QP fell outside the range and was clamped.
    pub clamped: bool,
}

impl QpLambdaMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            QpLambdaMap::LogLinear { c1, .. } => {
                if *c1 <= 0.0 || c1.is_nan() {
                    return Err(Error::InvalidModelSet(format!(
                        "log-linear map needs c1 > 0, got {c1}"
                    )));
                }
            }
            QpLambdaMap::Table { table } => {
                if table.len() < 2 {
                    return Err(Error::InvalidModelSet(
                        "table map needs at least two knots".into(),
                    ));
                }
                for w in table.windows(2) {
                    if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
                        return Err(Error::InvalidModelSet(
                            "table qp and lambda must both be strictly increasing".into(),
                        ));
                    }
                }
                if table[0].1 <= 0.0 {
                    return Err(Error::InvalidModelSet(
                        "table lambda must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Integer QP domain of the map, when it has one (table kind).
    pub fn domain(&self) -> Option<(i32, i32)> {
        match self {
            QpLambdaMap::LogLinear { .. } => None,
            QpLambdaMap::Table { table } => Some((table[0].0, table[table.len() - 1].0)),
        }
    }

    /// Lambda for an integer QP. Exact at table knots, log-lambda
    /// interpolated between them; errors outside a table's domain.
    pub fn lambda_from_qp(&self, qp: i32) -> Result<f64> {
        match self {
            QpLambdaMap::LogLinear { c1, c2 } => Ok(((qp as f64 - c2) / c1).exp()),
            QpLambdaMap::Table { table } => {
                let (min, max) = self.domain().expect("table has a domain");
                if qp < min || qp > max {
                    return Err(Error::QpOutsideDomain { qp, min, max });
                }
                if let Some(&(_, l)) = table.iter().find(|&&(k, _)| k == qp) {
                    return Ok(l);
                }
                let i = table.partition_point(|&(k, _)| k < qp);
                let (q0, l0) = table[i - 1];
                let (q1, l1) = table[i];
                let t = (qp - q0) as f64 / (q1 - q0) as f64;
                Ok((l0.ln() + t * (l1.ln() - l0.ln())).exp())
            }
        }
    }

    /// Real-valued QP for a lambda; the exact functional inverse of
    /// [`Self::lambda_from_qp`] before any rounding. Table maps extrapolate
    /// past their end knots with the end segment's slope.
    pub fn raw_qp_from_lambda(&self, lambda: f64) -> Result<f64> {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidLambda(lambda));
        }
        match self {
            QpLambdaMap::LogLinear { c1, c2 } => Ok(c1 * lambda.ln() + c2),
            QpLambdaMap::Table { table } => {
                let ln_l = lambda.ln();
                // Pick the segment whose lambda range holds ln_l; end
                // segments extend outward.
                let mut i = table.partition_point(|&(_, l)| l.ln() < ln_l);
                i = i.clamp(1, table.len() - 1);
                let (q0, l0) = table[i - 1];
                let (q1, l1) = table[i];
                let t = (ln_l - l0.ln()) / (l1.ln() - l0.ln());
                Ok(q0 as f64 + t * (q1 - q0) as f64)
            }
        }
    }

    /// Integer QP for a lambda, rounded per `rounding` and clamped into
    /// `qp_range`. Clamping is reported in the result, never an error.
    pub fn qp_from_lambda(
        &self,
        lambda: f64,
        rounding: QpRounding,
        qp_range: (i32, i32),
    ) -> Result<QpChoice> {
        let raw = self.raw_qp_from_lambda(lambda)?;
        let rounded = match rounding {
            // ceil(x - 0.5) is round-nearest with halves toward -inf,
            // i.e. ties go to the lower QP.
            QpRounding::Nearest => (raw - 0.5).ceil(),
            QpRounding::Floor => raw.floor(),
            QpRounding::Ceil => raw.ceil(),
        };
        let (min, max) = qp_range;
        let clamped = rounded < min as f64 || rounded > max as f64;
        let qp = rounded.clamp(min as f64, max as f64) as i32;
        Ok(QpChoice { qp, raw, clamped })
    }
}

/// A trained, content-independent model set for one encoder: the QP-lambda
/// map, the usable QP range, and one PSNR-LE anchor line per quantizer step.
///
/// Serialized as
/// `{encoder_id, qp_range:[min,max], qp_lambda:{...}, entries:[{q_step, qp, a, b, r2}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsnrLeModelSet {
    pub encoder_id: String,
    pub qp_range: (i32, i32),
    pub qp_lambda: QpLambdaMap,
    pub entries: Vec<PsnrLeEntry>,
}

impl PsnrLeModelSet {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModelSet(msg));
        if self.qp_range.0 > self.qp_range.1 {
            return bad(format!("empty qp_range {:?}", self.qp_range));
        }
        if self.entries.len() < 2 {
            return bad(format!("need >= 2 entries, got {}", self.entries.len()));
        }
        for w in self.entries.windows(2) {
            if w[1].q_step <= w[0].q_step {
                return bad("entry q_steps must be strictly increasing".into());
            }
        }
        for e in &self.entries {
            if e.qp < self.qp_range.0 || e.qp > self.qp_range.1 {
                return bad(format!(
                    "entry qp {} outside qp_range {:?}",
                    e.qp, self.qp_range
                ));
            }
            if !(e.a.is_finite() && e.a < 0.0) {
                return bad(format!(
                    "entry (q_step {}, qp {}) has slope {} >= 0; PSNR must fall as LE rises",
                    e.q_step, e.qp, e.a
                ));
            }
        }
        self.qp_lambda.validate()?;
        if let Some((dmin, dmax)) = self.qp_lambda.domain() {
            if dmin > self.qp_range.0 || dmax < self.qp_range.1 {
                return bad(format!(
                    "qp_lambda table domain [{dmin}, {dmax}] does not cover qp_range {:?}",
                    self.qp_range
                ));
            }
        }
        Ok(())
    }

    pub fn q_steps(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.q_step).collect()
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let set: PsnrLeModelSet = serde_json::from_str(json)
            .map_err(|e| Error::InvalidModelSet(format!("model JSON parse: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::ModelFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model set serializes")
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// IDs of the model sets compiled into the library.
pub fn bundled_model_ids() -> &'static [&'static str] {
    &["libaom", "x265", "hm"]
}

/// Loads a bundled model set by id (`libaom`, `x265`, `hm`).
pub fn bundled_model(id: &str) -> Option<PsnrLeModelSet> {
    let json = match id {
        "libaom" => include_str!("../data/libaom.json"),
        "x265" => include_str!("../data/x265.json"),
        "hm" => include_str!("../data/hm.json"),
        _ => return None,
    };
    Some(PsnrLeModelSet::from_json_str(json).expect("bundled model valid"))
}

/// Predicted PSNR per anchor: for each entry, `a * LE(q_step) + b`.
/// Returns `(qp, predicted_psnr)` in entry order.
pub fn predict_psnr_from_le(set: &PsnrLeModelSet, le: &LeVector) -> Result<Vec<(i32, f64)>> {
    set.entries
        .iter()
        .map(|e| {
            let le_val = le.le_for(e.q_step).ok_or(Error::MissingQStep(e.q_step))?;
            Ok((e.qp, e.a * le_val + e.b))
        })
        .collect()
}

/// The per-image distortion line `PSNR = a * log10(lambda) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DLambdaModel {
    pub a: f64,
    pub b: f64,
    pub r2: Option<f64>,
    /// The `(log10(lambda), PSNR)` pairs the fit consumed.
    pub source_points: Vec<(f64, f64)>,
}

/// Fits the per-image line from `(lambda, PSNR)` pairs.
///
/// A fit with `a >= 0` claims quality does not drop as lambda grows, which
/// means the inputs are broken; that is reported as
/// [`Error::NonDecreasingQuality`] carrying the offending points.
pub fn fit_dlambda(pairs: &[(f64, f64)]) -> Result<DLambdaModel> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: pairs.len(),
        });
    }
    for &(lambda, _) in pairs {
        if lambda <= 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidLambda(lambda));
        }
    }
    let points: Vec<(f64, f64)> = pairs.iter().map(|&(l, p)| (l.log10(), p)).collect();
    let line = fit_line(&points)?;
    if line.a >= 0.0 {
        return Err(Error::NonDecreasingQuality { a: line.a, points });
    }
    Ok(DLambdaModel {
        a: line.a,
        b: line.b,
        r2: line.r2,
        source_points: points,
    })
}

/// Solves the per-image line for a target PSNR: `lambda = 10^((target - b)/a)`.
pub fn lambda_for_target(model: &DLambdaModel, target_psnr: f64) -> f64 {
    10f64.powf((target_psnr - model.b) / model.a)
}

/// Converts the PSNR-form line `PSNR = a*log10(lambda) + b` into the MSE-form
/// power model `D = alpha * lambda^beta`.
pub fn mse_model_from_psnr_model(a: f64, b: f64) -> Result<(f64, f64)> {
    if a == 0.0 {
        return Err(Error::DegenerateFit(
            "cannot convert a zero-slope quality model".into(),
        ));
    }
    let beta = -a / 10.0;
    let alpha = 10f64.powf((10.0 * (PEAK * PEAK).log10() - b) / 10.0);
    Ok((alpha, beta))
}

/// Inverse of [`mse_model_from_psnr_model`].
pub fn psnr_model_from_mse_model(alpha: f64, beta: f64) -> (f64, f64) {
    let a = -10.0 * beta;
    let b = 10.0 * (PEAK * PEAK).log10() - 10.0 * alpha.log10();
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixels::LumaPlane;
    use crate::transform::{compute_le, QuantMode};

    #[test]
    fn fit_line_two_points() {
        let l = fit_line(&[(0.0, 1.0), (1.0, 3.0)]).unwrap();
        assert_eq!(l.a, 2.0);
        assert_eq!(l.b, 1.0);
        assert_eq!(l.r2, None);
    }

    #[test]
    fn fit_line_collinear() {
        let l = fit_line(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert!((l.a - 1.0).abs() < 1e-12);
        assert!(l.b.abs() < 1e-12);
        assert!((l.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_line_hand_computed() {
        let l = fit_line(&[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        assert!((l.a - 0.5).abs() < 1e-12);
        assert!((l.b - 1.0 / 6.0).abs() < 1e-12);
        assert!((l.r2.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fit_line_point_order_invariant() {
        let pts = [(0.5, 2.0), (1.5, 2.2), (3.0, 4.1), (-1.0, 0.3)];
        let mut rev = pts;
        rev.reverse();
        let a = fit_line(&pts).unwrap();
        let b = fit_line(&rev).unwrap();
        assert!((a.a - b.a).abs() < 1e-12);
        assert!((a.b - b.b).abs() < 1e-12);
    }

    #[test]
    fn fit_line_vertical_errors() {
        assert!(matches!(
            fit_line(&[(1.0, 0.0), (1.0, 5.0), (1.0, 9.0)]),
            Err(Error::VerticalFit)
        ));
    }

    #[test]
    fn fit_line_flat_y_has_no_r2() {
        let l = fit_line(&[(0.0, 3.0), (1.0, 3.0), (2.0, 3.0)]).unwrap();
        assert_eq!(l.a, 0.0);
        assert_eq!(l.r2, None);
    }

    #[test]
    fn log_linear_map_evaluates() {
        let map = hevc_log_linear();
        let l14 = map.lambda_from_qp(14).unwrap();
        assert!((l14 - 1.0709173877809206).abs() < 1e-12);
        // qp == c2 gives lambda 1 (exponent zero); c2 is not an integer so
        // probe the raw inverse instead.
        assert!((map.raw_qp_from_lambda(1.0).unwrap() - 13.7122).abs() < 1e-12);
    }

    #[test]
    fn log_linear_roundtrip_all_qps() {
        let map = hevc_log_linear();
        for qp in 0..=51 {
            let lambda = map.lambda_from_qp(qp).unwrap();
            let choice = map
                .qp_from_lambda(lambda, QpRounding::Nearest, (0, 51))
                .unwrap();
            assert_eq!(choice.qp, qp);
            assert!(!choice.clamped);
        }
    }

    #[test]
    fn map_monotone_in_qp() {
        let maps = [
            hevc_log_linear(),
            bundled_model("libaom").unwrap().qp_lambda,
        ];
        for map in maps {
            let (lo, hi) = map.domain().unwrap_or((0, 51));
            let mut prev = f64::NEG_INFINITY;
            for qp in lo..=hi {
                let l = map.lambda_from_qp(qp).unwrap();
                assert!(l > prev, "lambda not increasing at qp {qp}");
                prev = l;
            }
        }
    }

    #[test]
    fn table_map_interpolates_in_log_lambda() {
        let map = QpLambdaMap::Table {
            table: vec![(10, 2.0), (20, 32.0)],
        };
        let l = map.lambda_from_qp(15).unwrap();
        assert!((l - 8.0).abs() < 1e-12);
        // exact at knots
        assert_eq!(map.lambda_from_qp(10).unwrap(), 2.0);
        assert_eq!(map.lambda_from_qp(20).unwrap(), 32.0);
        // outside domain errors
        assert!(matches!(
            map.lambda_from_qp(21),
            Err(Error::QpOutsideDomain { .. })
        ));
    }

    #[test]
    fn table_map_roundtrip_at_knots() {
        let set = bundled_model("libaom").unwrap();
        if let QpLambdaMap::Table { ref table } = set.qp_lambda {
            for &(qp, lambda) in table {
                let choice = set
                    .qp_lambda
                    .qp_from_lambda(lambda, QpRounding::Nearest, set.qp_range)
                    .unwrap();
                assert_eq!(choice.qp, qp);
            }
        } else {
            panic!("libaom map should be a table");
        }
    }

    #[test]
    fn qp_rounding_ties_go_lower() {
        let map = hevc_log_linear();
        // lambda = 1 -> raw qp = 13.7122 -> nearest integer 14
        let c = map
            .qp_from_lambda(1.0, QpRounding::Nearest, (0, 51))
            .unwrap();
        assert_eq!(c.qp, 14);
        // construct an exact .5: raw = c1*ln(l)+c2 = 14.5
        let lambda_half = ((14.5 - 13.7122) / 4.2005f64).exp();
        let c = map
            .qp_from_lambda(lambda_half, QpRounding::Nearest, (0, 51))
            .unwrap();
        assert_eq!(c.qp, 14, "ties round toward the lower QP");
    }

    #[test]
    fn qp_clamps_with_flag() {
        let map = hevc_log_linear();
        let c = map
            .qp_from_lambda(1e-9, QpRounding::Nearest, (10, 40))
            .unwrap();
        assert_eq!(c.qp, 10);
        assert!(c.clamped);
        let c = map
            .qp_from_lambda(1e9, QpRounding::Nearest, (10, 40))
            .unwrap();
        assert_eq!(c.qp, 40);
        assert!(c.clamped);
    }

    #[test]
    fn bundled_models_parse_and_validate() {
        for id in bundled_model_ids() {
            let set = bundled_model(id).unwrap();
            assert_eq!(&set.encoder_id, id);
            assert_eq!(set.entries.len(), 3);
            set.validate().unwrap();
        }
        assert!(bundled_model("jpeg2000").is_none());
    }

    #[test]
    fn predict_from_le_uses_anchor_lines() {
        let set = bundled_model("libaom").unwrap();
        let le = LeVector::from_entries(
            vec![
                crate::transform::LeEntry { q_step: 8, le: 0.0 },
                crate::transform::LeEntry {
                    q_step: 16,
                    le: 1.0,
                },
                crate::transform::LeEntry {
                    q_step: 32,
                    le: 0.5,
                },
            ],
            1,
        )
        .unwrap();
        let preds = predict_psnr_from_le(&set, &le).unwrap();
        assert_eq!(preds[0], (14, 49.11));
        assert!((preds[1].1 - 38.92).abs() < 1e-12); // -11.18 + 50.10
        assert_eq!(preds[1].0, 28);
    }

    #[test]
    fn predict_is_affine_in_le() {
        let set = bundled_model("x265").unwrap();
        let mk = |v: f64| {
            LeVector::from_entries(
                set.q_steps()
                    .iter()
                    .map(|&q| crate::transform::LeEntry { q_step: q, le: v })
                    .collect(),
                1,
            )
            .unwrap()
        };
        let p1 = predict_psnr_from_le(&set, &mk(1.5)).unwrap();
        let p2 = predict_psnr_from_le(&set, &mk(0.25)).unwrap();
        for (e, (x, y)) in set.entries.iter().zip(p1.iter().zip(p2.iter())) {
            assert!((x.1 - y.1 - e.a * (1.5 - 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_missing_q_step_errors() {
        let set = bundled_model("hm").unwrap();
        let le = LeVector::from_entries(vec![crate::transform::LeEntry { q_step: 8, le: 0.0 }], 1)
            .unwrap();
        assert!(matches!(
            predict_psnr_from_le(&set, &le),
            Err(Error::MissingQStep(16))
        ));
    }

    #[test]
    fn flat_image_prediction_substitutes() {
        // A floored LE of -4 through a line (a=-10, b=50) gives 90 dB.
        let entry = PsnrLeEntry {
            q_step: 8,
            qp: 22,
            a: -10.0,
            b: 50.0,
            r2: None,
        };
        assert_eq!(entry.line().eval(-4.0), 90.0);
    }

    #[test]
    fn dlambda_two_points() {
        let m = fit_dlambda(&[(1.0, 50.0), (10.0, 40.0)]).unwrap();
        assert!((m.a + 10.0).abs() < 1e-12);
        assert!((m.b - 50.0).abs() < 1e-12);
        assert_eq!(m.r2, None);
    }

    #[test]
    fn dlambda_collinear_three_points() {
        let m = fit_dlambda(&[(1.0, 50.0), (10.0, 40.0), (100.0, 30.0)]).unwrap();
        assert!((m.a + 10.0).abs() < 1e-12);
        assert!((m.b - 50.0).abs() < 1e-12);
        assert!((m.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dlambda_rejects_rising_quality() {
        let err = fit_dlambda(&[(1.0, 40.0), (10.0, 50.0)]).unwrap_err();
        match err {
            Error::NonDecreasingQuality { a, points } => {
                assert!((a - 10.0).abs() < 1e-12);
                assert_eq!(points.len(), 2);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn dlambda_rejects_nonpositive_lambda() {
        assert!(fit_dlambda(&[(0.0, 50.0), (10.0, 40.0)]).is_err());
        assert!(fit_dlambda(&[(-2.0, 50.0), (10.0, 40.0)]).is_err());
    }

    #[test]
    fn lambda_for_target_closed_form() {
        let m = DLambdaModel {
            a: -10.0,
            b: 50.0,
            r2: None,
            source_points: vec![],
        };
        assert_eq!(lambda_for_target(&m, 50.0), 1.0);
        assert!((lambda_for_target(&m, 40.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_for_target_matches_anchor_line() {
        // Anchor (16, 28) of the libaom set at LE = 1 predicts 38.92 dB; a
        // per-image model through that point at slope -11.18 must return to
        // lambda = 10 for the same target.
        let m = DLambdaModel {
            a: -11.18,
            b: 50.10,
            r2: None,
            source_points: vec![],
        };
        let lambda = lambda_for_target(&m, 38.92);
        assert!((lambda - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mse_form_conversion() {
        let b = 10.0 * 65025f64.log10();
        let (alpha, beta) = mse_model_from_psnr_model(-10.0, b).unwrap();
        assert!((alpha - 1.0).abs() < 1e-12);
        assert!((beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_form_roundtrip_and_sign() {
        for (a, b) in [(-10.27, 49.11), (-11.43, 50.70), (-3.0, 20.0)] {
            let (alpha, beta) = mse_model_from_psnr_model(a, b).unwrap();
            assert!(beta > 0.0);
            let (a2, b2) = psnr_model_from_mse_model(alpha, beta);
            assert!((a - a2).abs() <= 1e-12 * a.abs());
            assert!((b - b2).abs() <= 1e-12 * b.abs());
        }
        assert!(mse_model_from_psnr_model(0.0, 50.0).is_err());
    }

    #[test]
    fn psnr_and_mse_forms_agree_pointwise() {
        let (a, b) = (-10.27, 49.11);
        let (alpha, beta) = mse_model_from_psnr_model(a, b).unwrap();
        for lambda in [0.01f64, 0.5, 1.0, 7.3, 1200.0] {
            let via_psnr = a * lambda.log10() + b;
            let via_mse = 10.0 * (PEAK * PEAK / (alpha * lambda.powf(beta))).log10();
            assert!((via_psnr - via_mse).abs() < 1e-9);
        }
    }

    #[test]
    fn model_set_rejects_bad_shapes() {
        let mut set = bundled_model("x265").unwrap();
        set.entries[0].a = 0.5;
        assert!(set.validate().is_err());

        let mut set = bundled_model("x265").unwrap();
        set.entries[1].q_step = set.entries[0].q_step;
        assert!(set.validate().is_err());

        let mut set = bundled_model("x265").unwrap();
        set.entries[0].qp = 99;
        assert!(set.validate().is_err());

        let mut set = bundled_model("libaom").unwrap();
        set.qp_range = (0, 80); // table only covers 0..=63
        assert!(set.validate().is_err());
    }

    #[test]
    fn model_set_json_roundtrip() {
        let set = bundled_model("libaom").unwrap();
        let json = set.to_json();
        let back = PsnrLeModelSet::from_json_str(&json).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn flat_plane_le_through_models() {
        let p = LumaPlane::flat(16, 16, 128);
        let le = compute_le(&p, &[8, 16, 32], QuantMode::Centered).unwrap();
        let set = bundled_model("hm").unwrap();
        let preds = predict_psnr_from_le(&set, &le).unwrap();
        for (_, psnr) in preds {
            assert!(psnr > 88.0, "floored LE should predict very high quality");
        }
    }
}
