use super::PipelineError;
use crate::features::UtteranceFeatures;
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mcd_db: f64,
    pub f0_rmse_hz: f64,
    /// `None` when either contour is constant over the mutually voiced frames.
    pub f0_corr: Option<f64>,
    pub voiced_frames: usize,
}

/// Mel-cepstral distortion over all frames and F0 error over frames voiced
/// in both utterances.
pub fn metrics(reference: &UtteranceFeatures, hyp: &UtteranceFeatures) -> Result<Metrics, PipelineError> {
    if reference.frames() != hyp.frames() {
        return Err(PipelineError::Metrics(format!(
            "frame counts differ: {} vs {}",
            reference.frames(),
            hyp.frames()
        )));
    }
    if reference.mcep_dim() != hyp.mcep_dim() {
        return Err(PipelineError::Metrics(format!(
            "mcep dims differ: {} vs {}",
            reference.mcep_dim(),
            hyp.mcep_dim()
        )));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let mcd_sum: f64 = reference
        .mcep()
        .rows()
        .into_iter()
        .zip(hyp.mcep().rows())
        .map(|(a, b)| {
            let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (2.0 * ss).sqrt()
        })
        .sum();
    let mcd_db = k * mcd_sum / reference.frames() as f64;

    let (a, b): (Vec<f64>, Vec<f64>) = reference
        .f0()
        .iter()
        .zip(hyp.f0())
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if a.is_empty() {
        return Err(PipelineError::Metrics(
            "no mutually voiced frames; F0 correlation is undefined".into(),
        ));
    }
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(Metrics {
        mcd_db,
        f0_rmse_hz: mse.sqrt(),
        f0_corr: pearson(&a, &b),
        voiced_frames: a.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn utt(f0: Vec<f64>, mcep: Array2<f64>) -> UtteranceFeatures {
        let t = f0.len();
        UtteranceFeatures::new(5.0, 16_000, f0, mcep, Array2::zeros((t, 1))).unwrap()
    }

    #[test]
    fn identical_utterances() {
        let u = utt(
            vec![100.0, 0.0, 120.0, 130.0],
            Array2::from_shape_fn((4, 3), |(t, d)| (t + d) as f64 * 0.1),
        );
        let m = metrics(&u, &u).unwrap();
        assert_eq!(m.mcd_db, 0.0);
        assert_eq!(m.f0_rmse_hz, 0.0);
        assert!((m.f0_corr.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.voiced_frames, 3);
    }

    #[test]
    fn single_frame_unit_difference() {
        let a = utt(vec![100.0], Array2::zeros((1, 24)));
        let mut c = Array2::zeros((1, 24));
        c[(0, 7)] = 1.0;
        let b = utt(vec![100.0], c);
        let m = metrics(&a, &b).unwrap();
        assert!((m.mcd_db - 6.141_85).abs() < 1e-5, "{}", m.mcd_db);
        assert!((m.mcd_db - 10.0 / std::f64::consts::LN_10 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.f0_corr, None);
    }

    #[test]
    fn symmetric() {
        let a = utt(vec![100.0, 110.0, 0.0], Array2::from_elem((3, 2), 0.3));
        let b = utt(vec![90.0, 130.0, 80.0], Array2::from_shape_fn((3, 2), |(t, d)| (t * d) as f64));
        let (ab, ba) = (metrics(&a, &b).unwrap(), metrics(&b, &a).unwrap());
        assert_eq!(ab.mcd_db, ba.mcd_db);
        assert_eq!(ab.f0_rmse_hz, ba.f0_rmse_hz);
        assert!((ab.f0_rmse_hz - 250f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = utt(vec![100.0, 0.0], Array2::zeros((2, 2)));
        let b = utt(vec![0.0, 100.0], Array2::zeros((2, 2)));
        assert!(matches!(metrics(&a, &b), Err(PipelineError::Metrics(_))));
        let c = utt(vec![100.0], Array2::zeros((1, 2)));
        assert!(metrics(&a, &c).is_err());
    }
}
