//! The `UPBK` binary matrix format.
//!
//! Layout (all little-endian): 4-byte magic `UPBK`, `u32` version, `u64` row
//! count, `u64` dim, then `rows × dim` IEEE-754 `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::FeatureMatrix;

pub const MAGIC: &[u8; 4] = b"UPBK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "shorter than the UPBK header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "row count overflows"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(rows, dim, data)
}

pub fn write_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Rounds every entry through `f32`, the precision the format stores.
pub fn snap_to_f32(m: &FeatureMatrix) -> FeatureMatrix {
    let data = m.as_slice().iter().map(|&v| v as f32 as f64).collect();
    FeatureMatrix::new(m.rows(), m.dim(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], b"UPBK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 3);
        assert_eq!(b.len(), 24 + 6 * 4);
        assert_eq!(f32::from_le_bytes(b[24..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_corruption() {
        let m = FeatureMatrix::new(1, 2, vec![1., 2.]).unwrap();
        let b = encode(&m);
        let p = Path::new("mem");
        assert!(decode(&b[..b.len() - 1], p).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad, p).is_err());
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2, p), Err(Error::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn empty_matrix_roundtrip() {
        let m = FeatureMatrix::zeros(0, 5);
        let back = decode(&encode(&m), Path::new("mem")).unwrap();
        assert_eq!((back.rows(), back.dim()), (0, 5));
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact_for_f32_values(
            (rows, dim, data) in (0usize..6, 1usize..6).prop_flat_map(|(r, d)| {
                (Just(r), Just(d), prop::collection::vec(-1e6f32..1e6, r * d))
            })
        ) {
            let m = FeatureMatrix::new(rows, dim, data.iter().map(|&v| v as f64).collect()).unwrap();
            let back = decode(&encode(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
