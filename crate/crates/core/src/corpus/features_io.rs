//! Binary feature files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 4     | magic `FDLP`                           |
//! | 2     | format version (u16, currently 1)      |
//! | 2     | band count (u16)                       |
//! | 4     | frame count (u32)                      |
//! | 4     | frame rate in Hz (f32)                 |
//! | 8     | masked start frame (i64, -1 if none)   |
//! | 8     | masked end frame (i64, -1 if none)     |
//! | 4 n   | frames, row-major f32                  |

use std::path::Path;

use ndarray::Array2;

use crate::dsp::FdlpSpectrogram;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FDLP";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

pub fn encode_features(spec: &FdlpSpectrogram) -> Result<Vec<u8>> {
    let bands = u16::try_from(spec.band_count())
        .map_err(|_| Error::Contract(format!("{} bands do not fit the format", spec.band_count())))?;
    let frames = u32::try_from(spec.frame_count())
        .map_err(|_| Error::Contract(format!("{} frames do not fit the format", spec.frame_count())))?;
    let (start, end) = match &spec.masked_frame_range {
        Some(r) => (r.start as i64, r.end as i64),
        None => (-1, -1),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * spec.frames.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&bands.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&spec.frame_rate_hz.to_le_bytes());
    out.extend_from_slice(&start.to_le_bytes());
    out.extend_from_slice(&end.to_le_bytes());
    for v in spec.frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses a complete feature file; `origin` only labels errors.
pub fn decode_features(bytes: &[u8], origin: &Path) -> Result<FdlpSpectrogram> {
    let bad = |reason: String| Error::format(origin, reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing FDLP magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let four = |o: usize| -> [u8; 4] { bytes[o..o + 4].try_into().expect("4 bytes") };
    let eight = |o: usize| -> [u8; 8] { bytes[o..o + 8].try_into().expect("8 bytes") };
    let version = u16_at(4);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let bands = u16_at(6) as usize;
    let frames = u32::from_le_bytes(four(8)) as usize;
    let frame_rate_hz = f32::from_le_bytes(four(12));
    let start = i64::from_le_bytes(eight(16));
    let end = i64::from_le_bytes(eight(24));
    let expected = HEADER_LEN + 4 * bands * frames;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let masked_frame_range = match (start, end) {
        (-1, -1) => None,
        (s, e) if 0 <= s && s <= e && e as usize <= frames => Some(s as usize..e as usize),
        (s, e) => return Err(bad(format!("invalid masked range {s}..{e}"))),
    };
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let frames = Array2::from_shape_vec((frames, bands), values).map_err(|e| bad(e.to_string()))?;
    Ok(FdlpSpectrogram {
        frames,
        frame_rate_hz,
        masked_frame_range,
    })
}

pub fn write_features(path: &Path, spec: &FdlpSpectrogram) -> Result<()> {
    let bytes = encode_features(spec)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_features(path: &Path) -> Result<FdlpSpectrogram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(masked: Option<std::ops::Range<usize>>) -> FdlpSpectrogram {
        let frames = Array2::from_shape_fn((37, 20), |(t, b)| (t as f32 * 0.1 - b as f32).sin() * 3.0);
        FdlpSpectrogram::new(frames, masked)
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.fdlp");
        let b = dir.path().join("b.fdlp");
        let spec = sample(Some(10..37));
        write_features(&a, &spec).unwrap();
        let back = read_features(&a).unwrap();
        assert_eq!(back, spec);
        write_features(&b, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_features(&sample(None)).unwrap();
        assert_eq!(&bytes[..4], b"FDLP");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 20);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 37);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 100.0);
        assert_eq!(i64::from_le_bytes(bytes[16..24].try_into().unwrap()), -1);
        assert_eq!(i64::from_le_bytes(bytes[24..32].try_into().unwrap()), -1);
        assert_eq!(bytes.len(), 32 + 37 * 20 * 4);
    }

    #[test]
    fn no_mask_sentinel_round_trips() {
        let bytes = encode_features(&sample(None)).unwrap();
        let back = decode_features(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.masked_frame_range, None);
    }

    #[test]
    fn truncated_and_bad_magic_rejected() {
        let bytes = encode_features(&sample(Some(0..5))).unwrap();
        for cut in [0, 10, 31, 32, bytes.len() - 1] {
            assert!(decode_features(&bytes[..cut], Path::new("x")).is_err(), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_features(&wrong, Path::new("x")).unwrap_err().to_string().contains("magic"));
        let mut wrong = bytes;
        wrong[4] = 2;
        assert!(decode_features(&wrong, Path::new("x")).unwrap_err().to_string().contains("version"));
    }

    proptest! {
        #[test]
        fn encode_decode_is_exact(
            values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 20..200),
            masked in prop::option::of((0usize..5, 0usize..5)),
        ) {
            let frames = values.len() / 4;
            let data = Array2::from_shape_vec((frames, 4), values[..frames * 4].to_vec()).unwrap();
            let range = masked.map(|(a, b)| a.min(frames)..(a + b).min(frames));
            let spec = FdlpSpectrogram::new(data, range);
            let bytes = encode_features(&spec).unwrap();
            let back = decode_features(&bytes, Path::new("x")).unwrap();
            prop_assert_eq!(encode_features(&back).unwrap(), bytes);
            prop_assert_eq!(back, spec);
        }
    }
}
