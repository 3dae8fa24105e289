//! 8x8 block partitioning, forward/inverse DCT, and the LE statistic.
//!
//! LE is the log-domain quantization error of the *original* image: partition
//! into 8x8 blocks, take the DCT, quantize every coefficient at a step
//! `q_step`, and record `log10` of the mean squared coefficient error. Because
//! the transform here is orthonormal, that coefficient-domain MSE equals the
//! pixel-domain MSE of the quantize-and-reconstruct image exactly (Parseval),
//! which is what makes LE a faithful distortion proxy and gives the test
//! suite an independent oracle.
//!
//! All arithmetic is f64; one forward DCT pass serves every `q_step`.

use std::cell::Cell;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::pixels::LumaPlane;
use crate::{Error, Result, MSE_FLOOR};

/// One 8x8 block of DCT coefficients, row-major frequency order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBlock(pub [f64; 64]);

/// Per-`q_step` log quantization error of one plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeVector {
    entries: Vec<LeEntry>,
    block_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeEntry {
    pub q_step: u32,
    pub le: f64,
}

impl LeVector {
    pub fn entries(&self) -> &[LeEntry] {
        &self.entries
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn le_for(&self, q_step: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.q_step == q_step)
            .map(|e| e.le)
    }

    pub fn q_steps(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.q_step).collect()
    }

    /// Builds a vector from precomputed entries (used when reloading sweep
    /// records from disk). Enforces the strictly-increasing step invariant.
    pub fn from_entries(entries: Vec<LeEntry>, block_count: usize) -> Result<Self> {
        if entries.is_empty() || entries.windows(2).any(|w| w[1].q_step <= w[0].q_step) {
            return Err(Error::InvalidQStepList);
        }
        if entries.iter().any(|e| e.q_step < 1) {
            return Err(Error::InvalidQStepList);
        }
        let floor = MSE_FLOOR.log10();
        if let Some(bad) = entries.iter().find(|e| !e.le.is_finite() || e.le < floor) {
            return Err(Error::DegenerateFit(format!(
                "LE {} below the floor {floor} (q_step {})",
                bad.le, bad.q_step
            )));
        }
        Ok(Self {
            entries,
            block_count,
        })
    }
}

/// How coefficient quantization error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    /// Round-to-nearest error `c - q*round(c/q)` in [-q/2, q/2], the JPEG-style
    /// reading. Default, and the mode under which the Parseval identity holds
    /// against an actual quantize-reconstruct encode.
    #[default]
    Centered,
    /// Non-negative remainder `(c + q/2) mod q` in [0, q). Kept so the
    /// remainder-form definition of the statistic stays reproducible; not
    /// consistent with a real quantizer (exact multiples score q^2/4, not 0).
    Literal,
}

thread_local! {
    static FORWARD_DCT_BLOCKS: Cell<u64> = const { Cell::new(0) };
}

/// Number of forward 8x8 DCTs this thread has executed. The control pipeline
/// promises exactly one forward pass per image; tests assert it on deltas of
/// this counter.
pub fn forward_dct_block_count() -> u64 {
    FORWARD_DCT_BLOCKS.with(|c| c.get())
}

// Orthonormal DCT-II basis: row 0 is 1/sqrt(8), rows 1..8 are
// 0.5 * cos(pi * i * (2j+1) / 16). C * C^T = I, so the 2D transform
// C X C^T preserves the sum of squares.
static BASIS: LazyLock<[[f64; 8]; 8]> = LazyLock::new(|| {
    let mut c = [[1.0 / 8f64.sqrt(); 8]; 8];
    for (i, row) in c.iter_mut().enumerate().skip(1) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.5 * (std::f64::consts::PI * i as f64 * (2.0 * j as f64 + 1.0) / 16.0).cos();
        }
    }
    c
});

/// Splits a plane into 8x8 pixel blocks, raster order. Partial border blocks
/// are padded by edge replication, so every plane yields
/// `ceil(w/8) * ceil(h/8)` full blocks.
pub fn block_partition(plane: &LumaPlane) -> Vec<[u8; 64]> {
    let bw = plane.width().div_ceil(8);
    let bh = plane.height().div_ceil(8);
    let mut blocks = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0u8; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane.sample_clamped(bx * 8 + x, by * 8 + y);
                }
            }
            blocks.push(block);
        }
    }
    blocks
}

/// Forward orthonormal 2D DCT of one block, after a -128 level shift.
#[allow(clippy::needless_range_loop)] // index form mirrors the matrix product
pub fn dct8x8(block: &[u8; 64]) -> CoeffBlock {
    FORWARD_DCT_BLOCKS.with(|c| c.set(c.get() + 1));
    let basis = &*BASIS;

    let mut shifted = [0.0f64; 64];
    for (dst, &src) in shifted.iter_mut().zip(block.iter()) {
        *dst = src as f64 - 128.0;
    }

    // rows: tmp = C * X
    let mut tmp = [0.0f64; 64];
    for u in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += basis[u][y] * shifted[y * 8 + j];
            }
            tmp[u * 8 + j] = acc;
        }
    }
    // cols: Y = tmp * C^T
    let mut out = [0.0f64; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += tmp[u * 8 + j] * basis[v][j];
            }
            out[u * 8 + v] = acc;
        }
    }
    CoeffBlock(out)
}

/// Inverse of [`dct8x8`]: returns real-valued samples with the +128 level
/// shift restored, without rounding or clamping.
#[allow(clippy::needless_range_loop)] // index form mirrors the matrix product
pub fn idct8x8(coeffs: &CoeffBlock) -> [f64; 64] {
    let basis = &*BASIS;
    // tmp = C^T * Y
    let mut tmp = [0.0f64; 64];
    for y in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += basis[u][y] * coeffs.0[u * 8 + v];
            }
            tmp[y * 8 + v] = acc;
        }
    }
    // X = tmp * C
    let mut out = [0.0f64; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += tmp[y * 8 + v] * basis[v][x];
            }
            out[y * 8 + x] = acc + 128.0;
        }
    }
    out
}

/// Quantizes every coefficient to the nearest multiple of `q_step`
/// (half away from zero). `q_step` may be fractional; the reference encoder
/// uses non-integer steps between its integer anchors.
pub fn quantize_coeffs(coeffs: &CoeffBlock, q_step: f64) -> CoeffBlock {
    let mut out = [0.0f64; 64];
    for (dst, &c) in out.iter_mut().zip(coeffs.0.iter()) {
        *dst = q_step * (c / q_step).round();
    }
    CoeffBlock(out)
}

fn coeff_error(c: f64, q_step: f64, mode: QuantMode) -> f64 {
    match mode {
        QuantMode::Centered => c - q_step * (c / q_step).round(),
        QuantMode::Literal => (c + q_step / 2.0).rem_euclid(q_step),
    }
}

/// Mean squared quantization error over a set of coefficient blocks:
/// the per-coefficient error squared, summed, divided by `blocks * 64`.
pub fn quant_error_mse(blocks: &[CoeffBlock], q_step: u32, mode: QuantMode) -> Result<f64> {
    if q_step < 1 {
        return Err(Error::InvalidQStep(q_step));
    }
    if blocks.is_empty() {
        return Err(Error::EmptyInput(
            "quant_error_mse needs at least one block",
        ));
    }
    Ok(quant_error_mse_unchecked(blocks, q_step as f64, mode))
}

fn quant_error_mse_unchecked(blocks: &[CoeffBlock], q_step: f64, mode: QuantMode) -> f64 {
    let mut sum = 0.0f64;
    for block in blocks {
        for &c in block.0.iter() {
            let e = coeff_error(c, q_step, mode);
            sum += e * e;
        }
    }
    sum / blocks.len() as f64 / 64.0
}

/// Computes LE at each `q_step`, sharing a single forward-DCT pass.
///
/// `q_steps` must be nonempty, strictly increasing, each >= 1.
/// LE = log10(max(MSE, [`MSE_FLOOR`])), so a losslessly quantizable plane
/// reports `log10(MSE_FLOOR)` rather than -inf.
pub fn compute_le(plane: &LumaPlane, q_steps: &[u32], mode: QuantMode) -> Result<LeVector> {
    if q_steps.is_empty() || q_steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidQStepList);
    }
    if q_steps[0] < 1 {
        return Err(Error::InvalidQStep(q_steps[0]));
    }

    let coeff_blocks: Vec<CoeffBlock> = block_partition(plane).iter().map(dct8x8).collect();
    let entries = q_steps
        .iter()
        .map(|&q| LeEntry {
            q_step: q,
            le: quant_error_mse_unchecked(&coeff_blocks, q as f64, mode)
                .max(MSE_FLOOR)
                .log10(),
        })
        .collect();
    Ok(LeVector {
        entries,
        block_count: coeff_blocks.len(),
    })
}
