//! Deterministic inputs for the kernel benchmarks.

use spvc::nn::Tensor;

/// Smooth, non-constant fill so no kernel hits a fast path on zeros.
pub fn filled(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Normalized log-F0 stand-in of `frames` frames.
pub fn contour(frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|t| {
            let t = t as f64;
            (t / 40.0).sin() + 0.3 * (t / 3.0).sin()
        })
        .collect()
}
