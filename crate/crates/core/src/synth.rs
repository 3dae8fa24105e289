//! Seeded synthetic test images.
//!
//! Everything here is deterministic in the seed so sweeps, corpora and
//! regression tests reproduce bit-for-bit: the generator is a hand-rolled
//! splitmix64 rather than an external RNG whose stream could change across
//! versions.

use crate::pixels::LumaPlane;

/// splitmix64: tiny, seedable, stable forever.
#[derive(Debug, Clone)]
pub struct SeededRng(u64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Kinds of synthetic planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Uniform gray.
    Flat { level: u8 },
    /// Linear ramp; `angle` in {0: horizontal, 1: vertical, 2: diagonal}.
    Gradient { angle: u8 },
    /// Gaussian noise of standard deviation `sigma` around mid-gray,
    /// box-smoothed `smooth` times with radius 1 (band-limits the spectrum).
    Noise { sigma: f64, smooth: usize },
}

/// Generates one plane. The same (kind, dims, seed) always yields the same
/// samples.
pub fn generate(kind: SynthKind, width: usize, height: usize, seed: u64) -> LumaPlane {
    match kind {
        SynthKind::Flat { level } => LumaPlane::flat(width, height, level),
        SynthKind::Gradient { angle } => gradient_plane(width, height, angle),
        SynthKind::Noise { sigma, smooth } => noise_plane(width, height, sigma, smooth, seed),
    }
}

fn gradient_plane(width: usize, height: usize, angle: u8) -> LumaPlane {
    let wmax = (width - 1).max(1) as f64;
    let hmax = (height - 1).max(1) as f64;
    LumaPlane::from_fn(width, height, |x, y| {
        let t = match angle % 3 {
            0 => x as f64 / wmax,
            1 => y as f64 / hmax,
            _ => (x as f64 / wmax + y as f64 / hmax) / 2.0,
        };
        (t * 255.0).round() as u8
    })
}

/// Band-limited Gaussian noise around mid-gray. `smooth` box-blur passes of
/// radius 1 concentrate the energy at low frequencies; the field is rescaled
/// to `sigma` afterwards so smoothing changes the spectrum, not the contrast.
pub fn noise_plane(width: usize, height: usize, sigma: f64, smooth: usize, seed: u64) -> LumaPlane {
    let mut rng = SeededRng::new(seed);
    let mut field: Vec<f64> = (0..width * height).map(|_| rng.next_gaussian()).collect();

    for _ in 0..smooth {
        field = box_blur(&field, width, height);
    }

    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let scale = if var > 0.0 { sigma / var.sqrt() } else { 0.0 };

    let samples = field
        .iter()
        .map(|v| (128.0 + (v - mean) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    LumaPlane::new(width, height, samples).expect("sized by construction")
}

fn box_blur(field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |x: i64, y: i64| {
        let x = x.clamp(0, width as i64 - 1) as usize;
        let y = y.clamp(0, height as i64 - 1) as usize;
        field[y * width + x]
    };
    let mut out = vec![0.0; field.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    acc += at(x + dx, y + dy);
                }
            }
            out[y as usize * width + x as usize] = acc / 9.0;
        }
    }
    out
}

/// A deterministic mixed corpus: band-limited noise at several contrasts and
/// smoothness levels, with gradients sprinkled in. Diverse enough that pooled
/// fits are meaningful and no two images share an LE value.
pub fn default_corpus(
    seed: u64,
    count: usize,
    width: usize,
    height: usize,
) -> Vec<(String, LumaPlane)> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let image_seed = seed.wrapping_mul(0x100000001b3).wrapping_add(i as u64);
        let (name, kind) = corpus_kind(i);
        out.push((
            format!("{name}_{i:03}"),
            generate(kind, width, height, image_seed),
        ));
    }
    out
}

fn corpus_kind(i: usize) -> (&'static str, SynthKind) {
    // Every 7th image is a gradient; the rest cycle through noise contrasts
    // and smoothing radii.
    if i % 7 == 6 {
        return (
            "gradient",
            SynthKind::Gradient {
                angle: (i / 7) as u8,
            },
        );
    }
    let sigmas = [6.0, 12.0, 20.0, 32.0, 48.0, 64.0];
    let sigma = sigmas[i % sigmas.len()];
    let smooth = (i / 2) % 3;
    ("noise", SynthKind::Noise { sigma, smooth })
}

/// Noise-only corpus in the contrast band where quantization error tracks the
/// step size smoothly (sigma well above the finest step). This is the
/// texture regime the control loop is built for; very low-contrast or
/// single-ramp content saturates instead and exercises the clamp paths.
pub fn textured_corpus(
    seed: u64,
    count: usize,
    width: usize,
    height: usize,
) -> Vec<(String, LumaPlane)> {
    let sigmas = [12.0, 18.0, 26.0, 36.0, 48.0, 60.0];
    (0..count)
        .map(|i| {
            let image_seed = seed
                .wrapping_mul(0x9e3779b9)
                .wrapping_add(i as u64 * 977 + 13);
            let kind = SynthKind::Noise {
                sigma: sigmas[i % sigmas.len()],
                smooth: (i / 3) % 3,
            };
            (
                format!("tex_{i:03}"),
                generate(kind, width, height, image_seed),
            )
        })
        .collect()
}
