//! Shared fixtures for the integration tests: seeded test contours and an
//! independent brute-force wavelet oracle that shares no code with the crate.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAME_MS: f64 = 5.0;
pub const CONTOUR_FRAMES: usize = 1000;
pub const CONTOURS: u64 = 20;

/// Normalized log-F0 stand-in: four sinusoids with log-uniform periods in
/// [25 ms, 5 s], random amplitudes and phases, z-normalized.
pub fn contour(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_4700 + seed);
    let comps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let period_ms = (25f64.ln() + rng.random::<f64>() * (5000f64 / 25.0).ln()).exp();
            let amp = 0.2 + rng.random::<f64>();
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            (period_ms / FRAME_MS, amp, phase)
        })
        .collect();
    let raw: Vec<f64> = (0..CONTOUR_FRAMES)
        .map(|t| {
            comps
                .iter()
                .map(|(p, a, ph)| a * (std::f64::consts::TAU * t as f64 / p + ph).sin())
                .sum()
        })
        .collect();
    znorm(&raw)
}

pub fn sinusoid(period_ms: f64, frames: usize) -> Vec<f64> {
    let p = period_ms / FRAME_MS;
    (0..frames)
        .map(|t| (std::f64::consts::TAU * t as f64 / p).sin())
        .collect()
}

pub fn znorm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - m) / s).collect()
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Brute-force wavelet oracle. The Mexican hat is evaluated directly at every
/// offset out to 8 scale widths (where it is below 1e-12 of its peak), the
/// signal is extended by mirror symmetry about the half-sample boundary,
/// and no kernel correction is applied.
pub mod oracle {
    pub const SCALES: usize = 10;

    pub fn hat(x: f64) -> f64 {
        let c = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
        c * (1.0 - x * x) * (-x * x / 2.0).exp()
    }

    /// Width of scale `i` (1..=10) in frames.
    pub fn tau(i: usize, frame_ms: f64) -> f64 {
        5.0 * 2f64.powi(i as i32 + 1) / frame_ms
    }

    pub fn weight(i: usize) -> f64 {
        1.0 / (i as f64 + 2.5).powf(2.5)
    }

    fn mirrored(f: &[f64], j: i64) -> f64 {
        let n = f.len() as i64;
        let mut k = j.rem_euclid(2 * n);
        if k >= n {
            k = 2 * n - 1 - k;
        }
        f[k as usize]
    }

    /// Unweighted transform at one scale.
    pub fn transform(f: &[f64], tau: f64) -> Vec<f64> {
        let reach = (8.0 * tau).ceil() as i64;
        (0..f.len() as i64)
            .map(|t| {
                let s: f64 = (-reach..=reach)
                    .map(|d| mirrored(f, t + d) * hat(d as f64 / tau))
                    .sum();
                s / tau.sqrt()
            })
            .collect()
    }

    /// `T x 10` weighted coefficients.
    pub fn decompose(f: &[f64], frame_ms: f64) -> Vec<[f64; SCALES]> {
        let cols: Vec<Vec<f64>> = (1..=SCALES)
            .map(|i| {
                transform(f, tau(i, frame_ms))
                    .into_iter()
                    .map(|v| v * weight(i))
                    .collect()
            })
            .collect();
        (0..f.len())
            .map(|t| std::array::from_fn(|c| cols[c][t]))
            .collect()
    }

    pub fn recompose(m: &[[f64; SCALES]]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().enumerate().map(|(c, v)| v * weight(c + 1)).sum())
            .collect()
    }

    /// 1-based column with the largest summed squared coefficient.
    pub fn max_energy_column(m: &[[f64; SCALES]]) -> usize {
        (0..SCALES)
            .map(|c| (c, m.iter().map(|r| r[c] * r[c]).sum::<f64>()))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a })
            .0
            + 1
    }
}

/// Oracle round-trip correlation for `contour(0..20)`.
pub const ORACLE_R: [f64; CONTOURS as usize] = [
    0.767172, 0.915328, 0.560557, 0.764596, 0.976404, 0.905483, 0.835924, 0.932414, 0.810486, 0.782437,
    0.563757, 0.901068, 0.837046, 0.722416, 0.874946, 0.949911, 0.655215, 0.903286, 0.916632, 0.894092,
];

/// Fidelity floor: the worst oracle correlation over the 20 contours,
/// rounded down.
pub const R0: f64 = 0.5605;

/// Oracle max-energy columns of pure sinusoids over 1000 frames.
pub const ORACLE_COL_25MS: usize = 1;
pub const ORACLE_COL_5S: usize = 8;
