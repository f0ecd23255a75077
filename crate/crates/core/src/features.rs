//! Pooled feature table: one vector per (token, layer), with the labels and
//! group metadata the probes need.
//!
//! Stored as `.tpft` (little-endian): `"TPFT" u16 version u16 flags u32 dim
//! u64 rows`, then per row `u32 layer`, four u16-length-prefixed UTF-8
//! strings (token id, tone, speaker, dialect) and `dim` f32 values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::corpus::ToneLabel;

pub const MAGIC: [u8; 4] = *b"TPFT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub token_id: String,
    /// 1-based transformer layer (0 for the front-end output when stored).
    pub layer: u32,
    pub vector: Vec<f32>,
    pub tone: ToneLabel,
    pub speaker_id: String,
    pub dialect: String,
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a feature table (bad magic)")]
    BadMagic,
    #[error("unsupported feature table version {0}")]
    VersionMismatch(u16),
    #[error("feature table truncated")]
    Truncated,
    #[error("malformed feature table: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: Vec<PooledFeature>,
}

/// Row-major matrix of one layer's features with aligned metadata.
#[derive(Debug, Clone)]
pub struct LayerView<'a> {
    pub layer: u32,
    pub dim: usize,
    pub rows: Vec<&'a PooledFeature>,
}

impl FeatureTable {
    pub fn layers(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.rows.iter().map(|r| r.layer).collect();
        set.into_iter().collect()
    }

    pub fn classes(&self) -> Vec<ToneLabel> {
        let set: BTreeSet<&ToneLabel> = self.rows.iter().map(|r| &r.tone).collect();
        set.into_iter().cloned().collect()
    }

    /// Rows of one layer keyed by token id.
    pub fn layer_index(&self, layer: u32) -> BTreeMap<&str, &PooledFeature> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer)
            .map(|r| (r.token_id.as_str(), r))
            .collect()
    }

    pub fn layer_view(&self, layer: u32) -> LayerView<'_> {
        LayerView {
            layer,
            dim: self.dim,
            rows: self.rows.iter().filter(|r| r.layer == layer).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FeatureError> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for r in &self.rows {
            if r.vector.len() != self.dim {
                return Err(FeatureError::Malformed(format!(
                    "row {} layer {} has {} values, table dim is {}",
                    r.token_id,
                    r.layer,
                    r.vector.len(),
                    self.dim
                )));
            }
            out.extend_from_slice(&r.layer.to_le_bytes());
            for s in [r.token_id.as_str(), r.tone.as_str(), &r.speaker_id, &r.dialect] {
                let len =
                    u16::try_from(s.len()).map_err(|_| FeatureError::Malformed(format!("string too long: {s:.32}")))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            for v in &r.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], FeatureError> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or(FeatureError::Truncated)?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(FeatureError::BadMagic);
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(FeatureError::VersionMismatch(version));
        }
        take(2)?;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut rows = Vec::with_capacity((n as usize).min(1 << 16));
        for _ in 0..n {
            let layer = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let mut strings: [String; 4] = Default::default();
            for s in strings.iter_mut() {
                let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
                *s = std::str::from_utf8(take(len)?)
                    .map_err(|_| FeatureError::Malformed("string is not UTF-8".into()))?
                    .to_owned();
            }
            let raw = take(dim.checked_mul(4).ok_or(FeatureError::Truncated)?)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let [token_id, tone, speaker_id, dialect] = strings;
            rows.push(PooledFeature {
                token_id,
                layer,
                vector,
                tone: ToneLabel::new(tone),
                speaker_id,
                dialect,
            });
        }
        if pos != bytes.len() {
            return Err(FeatureError::Malformed("trailing bytes".into()));
        }
        Ok(FeatureTable { dim, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, layer: u32, v: &[f32]) -> PooledFeature {
        PooledFeature {
            token_id: id.into(),
            layer,
            vector: v.to_vec(),
            tone: "H".into(),
            speaker_id: "s1".into(),
            dialect: "north".into(),
        }
    }

    #[test]
    fn binary_roundtrip() {
        let t = FeatureTable {
            dim: 2,
            rows: vec![row("u#1", 1, &[1.0, -2.5]), row("u#1", 2, &[0.0, f32::MIN_POSITIVE])],
        };
        let bytes = t.to_bytes().unwrap();
        assert_eq!(FeatureTable::from_bytes(&bytes).unwrap(), t);
        assert!(matches!(
            FeatureTable::from_bytes(&bytes[..bytes.len() - 1]),
            Err(FeatureError::Truncated)
        ));
        assert_eq!(t.layers(), vec![1, 2]);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let t = FeatureTable {
            dim: 3,
            rows: vec![row("u#1", 1, &[1.0])],
        };
        assert!(t.to_bytes().is_err());
    }
}
