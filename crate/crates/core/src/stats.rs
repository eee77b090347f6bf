//! Pooled moments shared by the speaker, scale and MCEP statistics.

/// Population mean and standard deviation (ddof = 0) of `values`, two-pass.
/// Returns `None` for an empty input.
pub fn mean_std<I>(values: I) -> Option<(f64, f64, usize)>
where
    I: IntoIterator<Item = f64> + Clone,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.into_iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / n as f64).sqrt(), n))
}

/// A spread this small relative to the mean is rounding noise from a
/// constant input, not variance.
pub(crate) fn is_degenerate(mean: f64, std: f64) -> bool {
    !(std.is_finite() && std > 1e-12 * mean.abs().max(1.0))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values() {
        let (m, s, n) = mean_std([1.0, 3.0]).unwrap();
        assert_eq!((m, s, n), (2.0, 1.0, 2));
        assert!(mean_std(std::iter::empty::<f64>()).is_none());
    }

    #[test]
    fn correlation_bounds() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b: Vec<f64> = a.iter().map(|v| -2.0 * v).collect();
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).is_none());
    }
}
