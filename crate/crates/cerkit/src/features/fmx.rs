//! The FMX feature-matrix file: magic `FMX1`, little-endian `u32` frame count,
//! `u32` feature count, `u32` frame shift in ms, then `T·F` little-endian
//! `f32` values row-major. Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureError, FeatureMatrix};

const MAGIC: &[u8; 4] = b"FMX1";
const HEADER_LEN: usize = 16;

/// Serialize a feature matrix.
pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    if m.num_frames == 0 {
        return Err(FeatureError::EmptyMatrix);
    }
    if m.num_frames > u32::MAX as usize || m.num_features > u32::MAX as usize {
        return Err(FeatureError::InvalidConfig {
            detail: format!("dimensions {}x{} overflow u32", m.num_frames, m.num_features),
        });
    }
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite {
            what: format!("feature matrix for {}", path.display()),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + m.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.num_frames as u32).to_le_bytes());
    out.extend_from_slice(&(m.num_features as u32).to_le_bytes());
    out.extend_from_slice(&m.frame_shift_ms.to_le_bytes());
    for v in &m.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Deserialize a feature matrix.
pub fn read_features(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::Parse {
            offset: bytes.len() as u64,
            detail: format!("truncated header, {} of {HEADER_LEN} bytes", bytes.len()),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FeatureError::BadMagic {
            expected: "FMX1".into(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let num_frames = read_u32(4) as usize;
    let num_features = read_u32(8) as usize;
    let frame_shift_ms = read_u32(12);
    let expected = num_frames
        .checked_mul(num_features)
        .and_then(|n| n.checked_mul(4))
        .ok_or(FeatureError::Parse {
            offset: 4,
            detail: format!("dimensions {num_frames}x{num_features} overflow"),
        })?;
    if bytes.len() != HEADER_LEN + expected {
        return Err(FeatureError::Parse {
            offset: bytes.len().min(HEADER_LEN + expected) as u64,
            detail: format!(
                "payload is {} bytes, header promises {expected}",
                bytes.len() - HEADER_LEN
            ),
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::Parse {
            offset: (HEADER_LEN + bad * 4) as u64,
            detail: "non-finite feature value".into(),
        });
    }
    FeatureMatrix::new(num_frames, num_features, values, frame_shift_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(t: usize, f: usize, seed: u64) -> FeatureMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values = (0..t * f).map(|_| rng.random::<f32>() * 10.0 - 5.0).collect();
        FeatureMatrix::new(t, f, values, 10).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmx");
        let m = random_matrix(98, 13, 3);
        write_features(&path, &m).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_frame_matrix_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix::new(0, 13, vec![], 10).unwrap();
        let err = write_features(&dir.path().join("z.fmx"), &m).unwrap_err();
        assert!(matches!(err, FeatureError::EmptyMatrix));
    }

    #[test]
    fn wrong_magic_names_expected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmx");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x0a\x00\x00\x00AAAA").unwrap();
        let err = read_features(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("FMX1"), "{msg}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmx");
        let m = random_matrix(4, 3, 1);
        write_features(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(matches!(err, FeatureError::Parse { .. }), "{err}");
    }
}
