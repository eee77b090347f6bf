//! Frame-synchronous vocoder features and the VCF1 container.
//!
//! A VCF1 file is a fixed 32-byte little-endian header followed by three
//! row-major `f64` payloads:
//!
//! ```text
//! "VCF1" | u32 version=1 | f64 frame_period_ms | u32 sample_rate_hz
//!        | u32 T | u32 D_mcep | u32 D_ap
//! f64 f0[T] | f64 mcep[T * D_mcep] | f64 ap[T * D_ap]
//! ```

use std::io::{Read, Write};

use ndarray::Array2;
use thiserror::Error;

pub const VCF_MAGIC: &[u8; 4] = b"VCF1";
pub const VCF_VERSION: u32 = 1;
pub const VCF_HEADER_LEN: usize = 32;

pub const DEFAULT_FRAME_PERIOD_MS: f64 = 5.0;
pub const DEFAULT_MCEP_DIM: usize = 24;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("utterance has no frames")]
    Empty,
    #[error("frame count mismatch: f0 has {f0} frames, mcep {mcep}, ap {ap}")]
    FrameMismatch { f0: usize, mcep: usize, ap: usize },
    #[error("invalid f0 at frame {frame}: {value} (must be 0.0 or finite and positive)")]
    InvalidF0 { frame: usize, value: f64 },
    #[error("non-finite {field} value at frame {frame}, dim {dim}")]
    NonFinite {
        field: &'static str,
        frame: usize,
        dim: usize,
    },
    #[error("invalid frame period {0} ms")]
    FramePeriod(f64),
    #[error("sample rate must be positive")]
    SampleRate,
    #[error("bad magic {0:?}, expected \"VCF1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported VCF version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after declared payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One utterance worth of vocoder features, all sharing the same frame axis.
///
/// Invariants are checked at construction and the value is immutable
/// afterwards, so every live instance is writable.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    frame_period_ms: f64,
    sample_rate_hz: u32,
    f0: Vec<f64>,
    mcep: Array2<f64>,
    ap: Array2<f64>,
}

impl UtteranceFeatures {
    pub fn new(
        frame_period_ms: f64,
        sample_rate_hz: u32,
        f0: Vec<f64>,
        mcep: Array2<f64>,
        ap: Array2<f64>,
    ) -> Result<Self, FeatureError> {
        if !(frame_period_ms.is_finite() && frame_period_ms > 0.0) {
            return Err(FeatureError::FramePeriod(frame_period_ms));
        }
        if sample_rate_hz == 0 {
            return Err(FeatureError::SampleRate);
        }
        if f0.is_empty() {
            return Err(FeatureError::Empty);
        }
        if f0.len() != mcep.nrows() || f0.len() != ap.nrows() {
            return Err(FeatureError::FrameMismatch {
                f0: f0.len(),
                mcep: mcep.nrows(),
                ap: ap.nrows(),
            });
        }
        if let Some((frame, &value)) = f0
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v == 0.0 || (v.is_finite() && **v > 0.0)))
        {
            return Err(FeatureError::InvalidF0 { frame, value });
        }
        check_finite("mcep", &mcep)?;
        check_finite("ap", &ap)?;
        Ok(Self {
            frame_period_ms,
            sample_rate_hz,
            f0,
            mcep,
            ap,
        })
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    /// T × D_mcep.
    pub fn mcep(&self) -> &Array2<f64> {
        &self.mcep
    }

    /// T × D_ap, carried opaque.
    pub fn ap(&self) -> &Array2<f64> {
        &self.ap
    }

    pub fn mcep_dim(&self) -> usize {
        self.mcep.ncols()
    }

    pub fn ap_dim(&self) -> usize {
        self.ap.ncols()
    }

    pub fn voicing(&self) -> VoicingMask {
        VoicingMask::from_f0(&self.f0)
    }

    /// Same utterance with the F0 contour replaced.
    pub fn with_f0(&self, f0: Vec<f64>) -> Result<Self, FeatureError> {
        Self::new(
            self.frame_period_ms,
            self.sample_rate_hz,
            f0,
            self.mcep.clone(),
            self.ap.clone(),
        )
    }

    /// Same utterance with the MCEP matrix replaced.
    pub fn with_mcep(&self, mcep: Array2<f64>) -> Result<Self, FeatureError> {
        Self::new(
            self.frame_period_ms,
            self.sample_rate_hz,
            self.f0.clone(),
            mcep,
            self.ap.clone(),
        )
    }
}

fn check_finite(field: &'static str, m: &Array2<f64>) -> Result<(), FeatureError> {
    for ((frame, dim), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(FeatureError::NonFinite { field, frame, dim });
        }
    }
    Ok(())
}

/// Per-frame voicing decision, `voiced[t] == (f0[t] > 0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoicingMask {
    voiced: Vec<bool>,
}

impl VoicingMask {
    pub fn from_f0(f0: &[f64]) -> Self {
        Self {
            voiced: f0.iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn from_flags(voiced: Vec<bool>) -> Self {
        Self { voiced }
    }

    pub fn len(&self) -> usize {
        self.voiced.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voiced.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.voiced
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }
}

/// Summary of an utterance for inspection; never fails.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDiagnostics {
    pub frame_count: usize,
    pub voiced_frames: usize,
    pub voiced_fraction: f64,
    pub mcep_dim: usize,
    pub ap_dim: usize,
    pub f0_nan: usize,
    pub f0_nonfinite: usize,
    pub mcep_nan: usize,
    pub mcep_nonfinite: usize,
    pub ap_nan: usize,
    pub ap_nonfinite: usize,
}

pub fn validate(feat: &UtteranceFeatures) -> FeatureDiagnostics {
    let count = |it: &mut dyn Iterator<Item = &f64>| {
        let (mut nan, mut nonfinite) = (0, 0);
        for v in it {
            if v.is_nan() {
                nan += 1;
            }
            if !v.is_finite() {
                nonfinite += 1;
            }
        }
        (nan, nonfinite)
    };
    let (f0_nan, f0_nonfinite) = count(&mut feat.f0.iter());
    let (mcep_nan, mcep_nonfinite) = count(&mut feat.mcep.iter());
    let (ap_nan, ap_nonfinite) = count(&mut feat.ap.iter());
    let voiced_frames = feat.f0.iter().filter(|&&v| v > 0.0).count();
    FeatureDiagnostics {
        frame_count: feat.frames(),
        voiced_frames,
        voiced_fraction: voiced_frames as f64 / feat.frames() as f64,
        mcep_dim: feat.mcep_dim(),
        ap_dim: feat.ap_dim(),
        f0_nan,
        f0_nonfinite,
        mcep_nan,
        mcep_nonfinite,
        ap_nan,
        ap_nonfinite,
    }
}

/// Encoded size in bytes of a VCF1 file.
pub fn encoded_len(frames: usize, mcep_dim: usize, ap_dim: usize) -> usize {
    VCF_HEADER_LEN + 8 * frames * (1 + mcep_dim + ap_dim)
}

pub fn encode_features(feat: &UtteranceFeatures) -> Vec<u8> {
    let t = feat.frames();
    let mut buf = Vec::with_capacity(encoded_len(t, feat.mcep_dim(), feat.ap_dim()));
    buf.extend_from_slice(VCF_MAGIC);
    buf.extend_from_slice(&VCF_VERSION.to_le_bytes());
    buf.extend_from_slice(&feat.frame_period_ms.to_le_bytes());
    buf.extend_from_slice(&feat.sample_rate_hz.to_le_bytes());
    for n in [t, feat.mcep_dim(), feat.ap_dim()] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for v in feat
        .f0
        .iter()
        .chain(feat.mcep.iter())
        .chain(feat.ap.iter())
    {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Writes `feat` as one VCF1 record. The whole record is encoded before the
/// first byte reaches `sink`.
pub fn write_features<W: Write>(feat: &UtteranceFeatures, mut sink: W) -> Result<(), FeatureError> {
    let buf = encode_features(feat);
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(mut source: R) -> Result<UtteranceFeatures, FeatureError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_features(&bytes)
}

pub fn decode_features(bytes: &[u8]) -> Result<UtteranceFeatures, FeatureError> {
    if bytes.len() < 4 {
        return Err(FeatureError::Truncated {
            expected: VCF_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != VCF_MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    if bytes.len() < VCF_HEADER_LEN {
        return Err(FeatureError::Truncated {
            expected: VCF_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VCF_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let frame_period_ms = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let sample_rate_hz = u32_at(16);
    let t = u32_at(20) as usize;
    let d_mcep = u32_at(24) as usize;
    let d_ap = u32_at(28) as usize;

    let expected = encoded_len(t, d_mcep, d_ap);
    if bytes.len() < expected {
        return Err(FeatureError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FeatureError::TrailingBytes(bytes.len() - expected));
    }

    let mut values = bytes[VCF_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let f0: Vec<f64> = values.by_ref().take(t).collect();
    let mcep: Vec<f64> = values.by_ref().take(t * d_mcep).collect();
    let ap: Vec<f64> = values.collect();
    let mcep = Array2::from_shape_vec((t, d_mcep), mcep).expect("length checked above");
    let ap = Array2::from_shape_vec((t, d_ap), ap).expect("length checked above");
    if let Some(frame) = f0.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite {
            field: "f0",
            frame,
            dim: 0,
        });
    }
    UtteranceFeatures::new(frame_period_ms, sample_rate_hz, f0, mcep, ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sample(t: usize, d_mcep: usize, d_ap: usize) -> UtteranceFeatures {
        let f0 = (0..t)
            .map(|i| if i % 3 == 0 { 0.0 } else { 100.0 + i as f64 })
            .collect();
        let mcep = Array2::from_shape_fn((t, d_mcep), |(i, j)| (i * 31 + j) as f64 * 0.01 - 1.0);
        let ap = Array2::from_shape_fn((t, d_ap), |(i, j)| -((i + j) as f64));
        UtteranceFeatures::new(5.0, 16_000, f0, mcep, ap).unwrap()
    }

    #[test]
    fn single_frame_file_size() {
        // 32-byte header + 8 * (1 f0 + 24 mcep + 0 ap)
        let feat = sample(1, 24, 0);
        let mut buf = Vec::new();
        write_features(&feat, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 25);
        assert_eq!(buf.len(), 232);
        assert_eq!(&buf[..4], b"VCF1");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let feat = sample(17, 24, 5);
        let mut buf = Vec::new();
        write_features(&feat, &mut buf).unwrap();
        let back = read_features(&buf[..]).unwrap();
        assert_eq!(back, feat);
        for (a, b) in back.mcep().iter().zip(feat.mcep().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn nan_mcep_never_reaches_a_sink() {
        let mut mcep = Array2::zeros((2, 24));
        mcep[[1, 3]] = f64::NAN;
        let err = UtteranceFeatures::new(5.0, 16_000, vec![100.0, 0.0], mcep, Array2::zeros((2, 0)));
        assert!(matches!(
            err,
            Err(FeatureError::NonFinite { field: "mcep", frame: 1, dim: 3 })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut buf = encode_features(&sample(3, 4, 1));
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&buf), Err(FeatureError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn unsupported_version() {
        let mut buf = encode_features(&sample(3, 4, 1));
        buf[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_features(&buf), Err(FeatureError::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_by_one_frame() {
        let feat = sample(100, 24, 0);
        let buf = encode_features(&feat);
        // header still says T=100, payload holds 99 frames
        let short = &buf[..encoded_len(99, 24, 0)];
        assert!(matches!(
            decode_features(short),
            Err(FeatureError::Truncated { .. })
        ));
        assert!(matches!(
            decode_features(&buf[..10]),
            Err(FeatureError::Truncated { .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = encode_features(&sample(4, 2, 0));
        buf.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_features(&buf), Err(FeatureError::TrailingBytes(8))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut buf = encode_features(&sample(4, 2, 0));
        let off = VCF_HEADER_LEN + 8 * 4;
        buf[off..off + 8].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_features(&buf),
            Err(FeatureError::NonFinite { field: "mcep", .. })
        ));
        let mut buf = encode_features(&sample(4, 2, 0));
        buf[VCF_HEADER_LEN..VCF_HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_features(&buf),
            Err(FeatureError::NonFinite { field: "f0", .. })
        ));
    }

    #[test]
    fn constructor_invariants() {
        let z = |t| Array2::<f64>::zeros((t, 1));
        assert!(matches!(
            UtteranceFeatures::new(5.0, 16_000, vec![], z(0), z(0)),
            Err(FeatureError::Empty)
        ));
        assert!(matches!(
            UtteranceFeatures::new(5.0, 16_000, vec![1.0, 2.0], z(2), z(3)),
            Err(FeatureError::FrameMismatch { .. })
        ));
        assert!(matches!(
            UtteranceFeatures::new(5.0, 16_000, vec![-1.0], z(1), z(1)),
            Err(FeatureError::InvalidF0 { frame: 0, .. })
        ));
        assert!(matches!(
            UtteranceFeatures::new(0.0, 16_000, vec![1.0], z(1), z(1)),
            Err(FeatureError::FramePeriod(_))
        ));
    }

    #[test]
    fn diagnostics() {
        let f = |f0: Vec<f64>| {
            let t = f0.len();
            UtteranceFeatures::new(5.0, 16_000, f0, Array2::zeros((t, 24)), Array2::zeros((t, 0)))
                .unwrap()
        };
        let d = validate(&f(vec![120.0; 10]));
        assert_eq!(d.voiced_fraction, 1.0);
        assert_eq!(d.frame_count, 10);
        let d = validate(&f(vec![0.0, 0.0, 100.0, 0.0]));
        assert_eq!(d.voiced_fraction, 0.25);
        assert_eq!(d.voiced_frames, 1);
        assert_eq!(d.mcep_nan + d.ap_nonfinite + d.f0_nan, 0);
    }
}
