//! The `DEFA` embedding container.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "DEFA"
//! 4       4             version (u32 LE) = 1
//! 8       4             count (u32 LE)
//! 12      4             dim (u32 LE)
//! 16      4·count·dim   f32 LE payload, row-major
//! ...                   count ids, each UTF-8 and terminated by '\n'
//! ```
//!
//! The file ends exactly after the last id.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::IoError;

pub const MAGIC: [u8; 4] = *b"DEFA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    data: Vec<f32>,
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingFile {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self, IoError> {
        if data.len() != ids.len() * dim {
            return Err(IoError::Invalid(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        if ids.len() > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(IoError::Invalid("count or dim exceeds u32".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains('\n') {
                return Err(IoError::InvalidId { row: i });
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(IoError::DuplicateId(id.clone()));
            }
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(IoError::NonFinite {
                row: pos / dim.max(1),
                col: pos % dim.max(1),
            });
        }
        Ok(Self { dim, data, ids, index })
    }

    /// Narrows f64 rows to the on-disk f32 representation.
    pub fn from_rows(ids: Vec<String>, dim: usize, rows: &[Vec<f64>]) -> Result<Self, IoError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(IoError::Invalid(format!("row {i} has dim {}, expected {dim}", r.len())));
            }
            data.extend(r.iter().map(|&x| x as f32));
        }
        Self::new(ids, dim, data)
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + 4 * self.data.len() + self.ids.iter().map(|s| s.len() + 1).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(id.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IoError> {
        if bytes.len() < HEADER_LEN {
            return Err(IoError::Truncated {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(IoError::BadMagic(magic));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != VERSION {
            return Err(IoError::UnsupportedVersion(version));
        }
        let count = word(8) as u64;
        let dim = word(12) as u64;
        let payload_end = HEADER_LEN as u64 + 4 * count * dim;
        // every id takes at least two bytes (one character and the newline)
        let min_len = payload_end + 2 * count;
        if (bytes.len() as u64) < min_len {
            return Err(IoError::Truncated {
                expected: min_len,
                actual: bytes.len() as u64,
            });
        }
        let payload_end = payload_end as usize;
        let (count, dim) = (count as usize, dim as usize);
        let data: Vec<f32> = bytes[HEADER_LEN..payload_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();

        let tail = &bytes[payload_end..];
        let mut ids = Vec::with_capacity(count);
        let mut start = 0;
        while ids.len() < count {
            let Some(rel) = tail[start..].iter().position(|&b| b == b'\n') else {
                return Err(IoError::Truncated {
                    expected: (payload_end + tail.len() + 1) as u64,
                    actual: bytes.len() as u64,
                });
            };
            let raw = &tail[start..start + rel];
            let id = std::str::from_utf8(raw).map_err(|_| IoError::InvalidId { row: ids.len() })?;
            ids.push(id.to_string());
            start += rel + 1;
        }
        if start != tail.len() {
            return Err(IoError::TrailingBytes {
                extra: (tail.len() - start) as u64,
            });
        }
        Self::new(ids, dim, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| IoError::io(path.as_ref(), e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let bytes = fs::read(path.as_ref()).map_err(|e| IoError::io(path.as_ref(), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(count: usize, dim: usize) -> EmbeddingFile {
        let ids = (0..count).map(|i| format!("img_{i}")).collect();
        let data = (0..count * dim).map(|i| (i as f32 * 0.731).sin()).collect();
        EmbeddingFile::new(ids, dim, data).unwrap()
    }

    #[test]
    fn empty_file_is_sixteen_bytes() {
        let f = sample(0, 8);
        let b = f.to_bytes();
        assert_eq!(b.len(), 16);
        assert_eq!(EmbeddingFile::from_bytes(&b).unwrap(), f);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let f = sample(10, 8);
        let b = f.to_bytes();
        assert_eq!(
            b.len(),
            16 + 4 * 80 + f.ids().iter().map(|s| s.len() + 1).sum::<usize>()
        );
        let g = EmbeddingFile::from_bytes(&b).unwrap();
        assert_eq!(g.to_bytes(), b);
        assert_eq!(g.position("img_3"), Some(3));
    }

    #[test]
    fn rejects_bad_magic_version_and_duplicates() {
        let mut b = sample(2, 3).to_bytes();
        b[0] = b'X';
        assert!(matches!(EmbeddingFile::from_bytes(&b), Err(IoError::BadMagic(m)) if &m == b"XEFA"));

        let mut b = sample(2, 3).to_bytes();
        b[4] = 2;
        assert!(matches!(
            EmbeddingFile::from_bytes(&b),
            Err(IoError::UnsupportedVersion(2))
        ));

        let dup = EmbeddingFile::new(vec!["a".into(), "a".into()], 1, vec![0.0, 1.0]);
        assert!(matches!(dup, Err(IoError::DuplicateId(_))));
    }

    #[test]
    fn rejects_trailing_and_missing_newline() {
        let mut b = sample(2, 3).to_bytes();
        b.push(b'x');
        assert!(matches!(
            EmbeddingFile::from_bytes(&b),
            Err(IoError::TrailingBytes { extra: 1 })
        ));
        let mut b = sample(2, 3).to_bytes();
        b.pop();
        assert!(matches!(EmbeddingFile::from_bytes(&b), Err(IoError::Truncated { .. })));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut b = sample(2, 3).to_bytes();
        b[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingFile::from_bytes(&b),
            Err(IoError::NonFinite { row: 0, col: 0 })
        ));
    }

    proptest! {
        #[test]
        fn every_truncation_is_rejected(count in 0usize..6, dim in 0usize..5, frac in 0.0f64..1.0) {
            let f = sample(count, dim);
            let b = f.to_bytes();
            let cut = ((b.len() as f64) * frac) as usize;
            prop_assert!(EmbeddingFile::from_bytes(&b[..cut]).is_err());
        }
    }
}
