//! Per-utterance layer-embedding files (`.tpeb`), token-to-frame alignment
//! and mean pooling.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "TPEB"  u16 version  u16 flags  u32 num_layers  u32 dim  u32 num_frames
//! f64 frame_stride  f64 frame_offset  u16 id_len  id_len bytes of UTF-8
//! num_layers blocks of num_frames x dim f32, row-major
//! ```
//!
//! Flag bit 0 marks that the first block is layer 0 (the convolutional
//! front-end output). Without it, block `i` holds transformer layer `i + 1`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::ToneToken;
use crate::features::{FeatureTable, PooledFeature};

pub const MAGIC: [u8; 4] = *b"TPEB";
pub const VERSION: u16 = 1;
pub const FLAG_HAS_LAYER0: u16 = 0x0001;
pub const FILE_EXTENSION: &str = "tpeb";

const FIXED_HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 4 + 8 + 8 + 2;

#[derive(Debug, Error)]
pub enum EmbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not an embedding file")]
    BadMagic,
    #[error("unsupported embedding file version {0} (expected {VERSION})")]
    VersionMismatch(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("layer shape mismatch: {0}")]
    LayerShape(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("layer {layer} out of range {first}..={last}")]
    LayerOutOfRange { layer: u32, first: u32, last: u32 },
    #[error("token `{token}` belongs to utterance `{expected}` but the file holds `{found}`")]
    UtteranceMismatch {
        token: String,
        expected: String,
        found: String,
    },
    #[error("no embedding file for utterance `{utterance}` (looked for {path})")]
    MissingFile { utterance: String, path: PathBuf },
}

pub type Result<T, E = EmbError> = std::result::Result<T, E>;

/// Hidden states of every layer for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub utterance_id: String,
    pub flags: u16,
    pub dim: usize,
    pub num_frames: usize,
    pub frame_stride: f64,
    pub frame_offset: f64,
    /// One `num_frames * dim` row-major block per stored layer.
    pub layers: Vec<Vec<f32>>,
}

impl EmbeddingFile {
    pub fn new(
        utterance_id: impl Into<String>,
        dim: usize,
        num_frames: usize,
        frame_stride: f64,
        frame_offset: f64,
        layers: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let f = EmbeddingFile {
            utterance_id: utterance_id.into(),
            flags: 0,
            dim,
            num_frames,
            frame_stride,
            frame_offset,
            layers,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn with_layer0(mut self) -> Self {
        self.flags |= FLAG_HAS_LAYER0;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_layer0(&self) -> bool {
        self.flags & FLAG_HAS_LAYER0 != 0
    }

    /// Inclusive range of addressable layer numbers.
    pub fn layer_span(&self) -> (u32, u32) {
        let n = self.layers.len() as u32;
        if self.has_layer0() {
            (0, n.saturating_sub(1))
        } else {
            (1, n)
        }
    }

    pub fn layer(&self, layer: u32) -> Result<&[f32]> {
        let (first, last) = self.layer_span();
        if layer < first || layer > last || self.layers.is_empty() {
            return Err(EmbError::LayerOutOfRange { layer, first, last });
        }
        Ok(&self.layers[(layer - first) as usize])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(EmbError::InvalidHeader("num_layers must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(EmbError::InvalidHeader("dim must be at least 1".into()));
        }
        if !(self.frame_stride > 0.0 && self.frame_stride.is_finite()) {
            return Err(EmbError::InvalidHeader(format!(
                "frame_stride must be positive, got {}",
                self.frame_stride
            )));
        }
        if !self.frame_offset.is_finite() {
            return Err(EmbError::InvalidHeader("frame_offset must be finite".into()));
        }
        if self.utterance_id.len() > u16::MAX as usize {
            return Err(EmbError::InvalidHeader("utterance id too long".into()));
        }
        for (name, v) in [
            ("dim", self.dim),
            ("num_frames", self.num_frames),
            ("num_layers", self.layers.len()),
        ] {
            if v > u32::MAX as usize {
                return Err(EmbError::InvalidHeader(format!("{name} exceeds u32")));
            }
        }
        let expected = self.num_frames * self.dim;
        for (i, block) in self.layers.iter().enumerate() {
            if block.len() != expected {
                return Err(EmbError::LayerShape(format!(
                    "block {i} has {} values, expected {} frames x {} dim",
                    block.len(),
                    self.num_frames,
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let id = self.utterance_id.as_bytes();
        let payload = self.layers.len() * self.num_frames * self.dim * 4;
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + id.len() + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_frames as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_stride.to_le_bytes());
        out.extend_from_slice(&self.frame_offset.to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for block in &self.layers {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EmbError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(EmbError::VersionMismatch(version));
        }
        let flags = r.u16()?;
        let num_layers = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let num_frames = r.u32()? as usize;
        let frame_stride = f64::from_le_bytes(r.array()?);
        let frame_offset = f64::from_le_bytes(r.array()?);
        let id_len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| EmbError::InvalidHeader("utterance id is not UTF-8".into()))?
            .to_owned();

        let block_values = (num_frames as u64) * (dim as u64);
        let expected = (r.pos as u128) + (num_layers as u128) * (block_values as u128) * 4;
        let found = bytes.len() as u64;
        if (found as u128) < expected {
            return Err(EmbError::Truncated {
                expected: u64::try_from(expected).unwrap_or(u64::MAX),
                found,
            });
        }
        let expected = expected as u64;
        if found > expected {
            return Err(EmbError::LayerShape(format!(
                "{} trailing bytes after {num_layers} layers of {num_frames}x{dim}",
                found - expected
            )));
        }
        let block_len = block_values as usize;
        let layers = (0..num_layers)
            .map(|_| {
                let raw = r.take(block_len * 4)?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect())
            })
            .collect::<Result<Vec<Vec<f32>>>>()?;
        let file = EmbeddingFile {
            utterance_id: id,
            flags,
            dim,
            num_frames,
            frame_stride,
            frame_offset,
            layers,
        };
        file.validate()?;
        Ok(file)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(EmbError::Truncated {
                expected: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

pub fn write_embedding_file(file: &EmbeddingFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = file.to_bytes()?;
    std::fs::write(path, bytes).map_err(|source| EmbError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| EmbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingFile::from_bytes(&bytes)
}

/// Path of an utterance's embedding file inside a model directory.
pub fn embedding_path(model_dir: &Path, utterance_id: &str) -> PathBuf {
    model_dir.join(format!("{utterance_id}.{FILE_EXTENSION}"))
}

/// Half-open range of frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRange {
    pub first: usize,
    pub last_exclusive: usize,
}

impl FrameRange {
    pub fn count(&self) -> usize {
        self.last_exclusive - self.first
    }
}

#[inline]
fn frame_center(i: usize, stride: f64, offset: f64) -> f64 {
    offset + i as f64 * stride + stride / 2.0
}

/// Smallest frame index in `0..=n` whose center is at or after `t`.
fn first_center_at_or_after(t: f64, stride: f64, offset: f64, n: usize) -> usize {
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if frame_center(mid, stride, offset) < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Frames whose center `offset + i*stride + stride/2` lies in `[start, end)`,
/// clipped to `[0, num_frames)`. `None` when no frame qualifies.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negations also reject NaN
pub fn frame_range_for_segment(
    start: f64,
    end: f64,
    stride: f64,
    offset: f64,
    num_frames: usize,
) -> Option<FrameRange> {
    if !(start < end) || !(stride > 0.0) || !stride.is_finite() || !offset.is_finite() {
        return None;
    }
    let first = first_center_at_or_after(start, stride, offset, num_frames);
    let last_exclusive = first_center_at_or_after(end, stride, offset, num_frames);
    (first < last_exclusive).then_some(FrameRange { first, last_exclusive })
}

/// A token that produced no feature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropRecord {
    pub token_id: String,
    pub utterance_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pooled {
    Feature(PooledFeature),
    Dropped(DropRecord),
}

fn mean_rows(block: &[f32], dim: usize, range: FrameRange) -> Vec<f32> {
    let mut acc = vec![0f64; dim];
    for row in block[range.first * dim..range.last_exclusive * dim].chunks_exact(dim) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = range.count() as f64;
    acc.into_iter().map(|s| (s / n) as f32).collect()
}

/// Mean of the token's frames at `layer`. Tokens without any frame center
/// inside their span are dropped, not errors.
pub fn pool_token(emb: &EmbeddingFile, token: &ToneToken, layer: u32) -> Result<Pooled> {
    if token.utterance_id != emb.utterance_id {
        return Err(EmbError::UtteranceMismatch {
            token: token.token_id.clone(),
            expected: token.utterance_id.clone(),
            found: emb.utterance_id.clone(),
        });
    }
    let block = emb.layer(layer)?;
    let range = frame_range_for_segment(
        token.start,
        token.end,
        emb.frame_stride,
        emb.frame_offset,
        emb.num_frames,
    );
    let Some(range) = range else {
        return Ok(Pooled::Dropped(drop_record(
            token,
            "no frame center inside the token span",
        )));
    };
    let vector = mean_rows(block, emb.dim, range);
    if vector.iter().any(|v| !v.is_finite()) {
        return Ok(Pooled::Dropped(drop_record(token, "pooled vector is not finite")));
    }
    Ok(Pooled::Feature(PooledFeature {
        token_id: token.token_id.clone(),
        layer,
        vector,
        tone: token.tone.clone(),
        speaker_id: token.speaker_id.clone(),
        dialect: token.dialect.clone(),
    }))
}

fn drop_record(token: &ToneToken, reason: &str) -> DropRecord {
    log::debug!("dropping token {}: {reason}", token.token_id);
    DropRecord {
        token_id: token.token_id.clone(),
        utterance_id: token.utterance_id.clone(),
        reason: reason.to_owned(),
    }
}

#[derive(Debug, Clone)]
pub struct PoolReport {
    pub table: FeatureTable,
    pub drops: Vec<DropRecord>,
}

/// Pool every token at every requested layer, reading `<dir>/<utterance>.tpeb`.
///
/// A token is dropped as a whole if any layer fails to pool. Rows are sorted
/// by `(token_id, layer)`; drops by token id.
/// Features, drops and frame count for one utterance.
type UtterancePool = (Vec<PooledFeature>, Vec<DropRecord>, usize);

pub fn pool_corpus(tokens: &[ToneToken], embedding_dir: &Path, layers: &[u32]) -> Result<PoolReport> {
    let mut by_utt: BTreeMap<&str, Vec<&ToneToken>> = BTreeMap::new();
    for t in tokens {
        by_utt.entry(t.utterance_id.as_str()).or_default().push(t);
    }
    let groups: Vec<(&str, Vec<&ToneToken>)> = by_utt.into_iter().collect();

    let pooled: Vec<Result<UtterancePool>> = groups
        .par_iter()
        .map(|(utt, toks)| {
            let path = embedding_path(embedding_dir, utt);
            if !path.is_file() {
                return Err(EmbError::MissingFile {
                    utterance: (*utt).to_owned(),
                    path,
                });
            }
            let emb = read_embedding_file(&path)?;
            let mut rows = Vec::new();
            let mut drops = Vec::new();
            'token: for tok in toks {
                let mut per_layer = Vec::with_capacity(layers.len());
                for &layer in layers {
                    match pool_token(&emb, tok, layer)? {
                        Pooled::Feature(f) => per_layer.push(f),
                        Pooled::Dropped(d) => {
                            drops.push(d);
                            continue 'token;
                        }
                    }
                }
                rows.extend(per_layer);
            }
            Ok((rows, drops, emb.dim))
        })
        .collect();

    let mut rows = Vec::new();
    let mut drops = Vec::new();
    let mut dim: Option<usize> = None;
    for r in pooled {
        let (r_rows, r_drops, d) = r?;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(EmbError::LayerShape(format!(
                    "embedding files disagree on dim ({prev} vs {d})"
                )))
            }
            _ => {}
        }
        rows.extend(r_rows);
        drops.extend(r_drops);
    }
    rows.sort_by(|a, b| a.token_id.cmp(&b.token_id).then(a.layer.cmp(&b.layer)));
    drops.sort_by(|a, b| a.token_id.cmp(&b.token_id));
    if !drops.is_empty() {
        log::info!("{} tokens dropped during pooling", drops.len());
    }
    Ok(PoolReport {
        table: FeatureTable {
            dim: dim.unwrap_or(0),
            rows,
        },
        drops,
    })
}

pub fn write_drop_report(path: impl AsRef<Path>, drops: &[DropRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["token_id", "utterance_id", "reason"])?;
    for d in drops {
        w.write_record([&d.token_id, &d.utterance_id, &d.reason])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(layers: usize, dim: usize, frames: usize) -> EmbeddingFile {
        EmbeddingFile::new("utt", dim, frames, 0.02, 0.0, vec![vec![0.0; dim * frames]; layers]).unwrap()
    }

    fn token(start: f64, end: f64) -> ToneToken {
        ToneToken {
            token_id: "utt#1".into(),
            utterance_id: "utt".into(),
            speaker_id: "s".into(),
            dialect: "d".into(),
            tone: "H".into(),
            start,
            end,
        }
    }

    #[test]
    fn zeros_roundtrip_byte_identical() {
        let f = zeros(2, 4, 3);
        let bytes = f.to_bytes().unwrap();
        assert_eq!(bytes.len(), FIXED_HEADER_LEN + 3 + 2 * 3 * 4 * 4);
        let back = EmbeddingFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_with_missing_layer_is_truncated() {
        let mut bytes = zeros(2, 4, 3).to_bytes().unwrap();
        // claim 3 layers
        bytes[8..12].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            EmbeddingFile::from_bytes(&bytes),
            Err(EmbError::Truncated { .. })
        ));
    }

    #[test]
    fn format_errors() {
        let bytes = zeros(1, 2, 2).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingFile::from_bytes(&bad), Err(EmbError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4..6].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            EmbeddingFile::from_bytes(&bad),
            Err(EmbError::VersionMismatch(2))
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(EmbeddingFile::from_bytes(&bad), Err(EmbError::LayerShape(_))));
        assert!(matches!(
            EmbeddingFile::from_bytes(&bytes[..10]),
            Err(EmbError::Truncated { .. })
        ));
        let shape = EmbeddingFile::new("u", 2, 2, 0.02, 0.0, vec![vec![0.0; 4], vec![0.0; 3]]);
        assert!(matches!(shape, Err(EmbError::LayerShape(_))));
        let stride = EmbeddingFile::new("u", 2, 2, 0.0, 0.0, vec![vec![0.0; 4]]);
        assert!(matches!(stride, Err(EmbError::InvalidHeader(_))));
    }

    #[test]
    fn frame_range_examples() {
        assert_eq!(
            frame_range_for_segment(0.10, 0.16, 0.02, 0.0, 100),
            Some(FrameRange {
                first: 5,
                last_exclusive: 8
            })
        );
        assert_eq!(frame_range_for_segment(0.011, 0.019, 0.02, 0.0, 100), None);
        assert_eq!(
            frame_range_for_segment(0.0, 10.0, 0.02, 0.0, 50),
            Some(FrameRange {
                first: 0,
                last_exclusive: 50
            })
        );
        // offset shifts the grid
        assert_eq!(
            frame_range_for_segment(0.10, 0.16, 0.02, 0.015, 100),
            Some(FrameRange {
                first: 4,
                last_exclusive: 7
            })
        );
        assert_eq!(frame_range_for_segment(0.2, 0.1, 0.02, 0.0, 100), None);
    }

    #[test]
    fn boundary_center_goes_to_one_side() {
        // center of frame 5 is 0.11: a token ending there excludes it, one starting there includes it
        let c = frame_center(5, 0.02, 0.0);
        let left = frame_range_for_segment(0.05, c, 0.02, 0.0, 100).unwrap();
        let right = frame_range_for_segment(c, 0.2, 0.02, 0.0, 100).unwrap();
        assert_eq!(left.last_exclusive, 5);
        assert_eq!(right.first, 5);
    }

    #[test]
    fn pool_two_frames() {
        let dim = 4;
        let mut block = vec![0f32; 10 * dim];
        block[5 * dim..6 * dim].fill(1.0);
        block[6 * dim..7 * dim].fill(3.0);
        let emb = EmbeddingFile::new("utt", dim, 10, 0.02, 0.0, vec![block]).unwrap();
        let Pooled::Feature(f) = pool_token(&emb, &token(0.10, 0.14), 1).unwrap() else {
            panic!("dropped")
        };
        assert_eq!(f.vector, vec![2.0; 4]);
        let Pooled::Feature(f) = pool_token(&emb, &token(0.12, 0.14), 1).unwrap() else {
            panic!("dropped")
        };
        assert_eq!(f.vector, vec![3.0; 4]);
    }

    #[test]
    fn pool_errors_and_drops() {
        let emb = zeros(2, 2, 10);
        assert!(matches!(
            pool_token(&emb, &token(0.0, 0.1), 3),
            Err(EmbError::LayerOutOfRange { .. })
        ));
        assert!(matches!(
            pool_token(&emb, &token(0.0, 0.1), 0),
            Err(EmbError::LayerOutOfRange { .. })
        ));
        let mut other = token(0.0, 0.1);
        other.utterance_id = "x".into();
        assert!(matches!(
            pool_token(&emb, &other, 1),
            Err(EmbError::UtteranceMismatch { .. })
        ));
        assert!(matches!(
            pool_token(&emb, &token(0.011, 0.019), 1).unwrap(),
            Pooled::Dropped(_)
        ));
        let with0 = zeros(3, 2, 10).with_layer0();
        assert_eq!(with0.layer_span(), (0, 2));
        assert!(pool_token(&with0, &token(0.0, 0.1), 0).is_ok());
    }
}
