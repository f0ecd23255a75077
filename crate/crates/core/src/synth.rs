//! Synthetic corpora for exercising the pipeline end to end.
//!
//! Each tone class gets a unit-norm prototype. A layer-`l` frame inside a
//! token of class `c` is drawn around `class_separation[l-1] * prototype(c)`
//! plus the speaker's offset; frames outside tokens are offset plus noise.
//! A dialect may map classes onto other classes' prototypes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, ManifestEntry, DEFAULT_TIER};
use crate::embstore::{self, EmbeddingFile};
use crate::textgrid::{Interval, IntervalTier, TextGrid};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Emb(#[from] embstore::EmbError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("spec JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

fn default_tokens_per_utterance() -> usize {
    10
}
fn default_stride() -> f64 {
    0.02
}
fn default_model_tag() -> String {
    "synth".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub language: String,
    pub inventory: Vec<String>,
    pub n_speakers: usize,
    pub n_dialects: usize,
    pub tokens_per_speaker: usize,
    #[serde(default = "default_tokens_per_utterance")]
    pub tokens_per_utterance: usize,
    pub dim: usize,
    pub n_layers: usize,
    #[serde(default = "default_stride")]
    pub frame_stride: f64,
    /// One entry per layer, layer 1 first.
    pub class_separation: Vec<f64>,
    pub noise_std: f64,
    #[serde(default)]
    pub speaker_offset_std: f64,
    /// Share of the frame noise variance held constant across one segment,
    /// in [0, 1). The per-frame marginal stays N(mean, noise_std).
    #[serde(default)]
    pub frame_correlation: f64,
    /// Dialect index -> class permutation: tokens of class `c` from that
    /// dialect are drawn around prototype `perm[c]`.
    #[serde(default)]
    pub dialect_permutations: BTreeMap<usize, Vec<usize>>,
    pub seed: u64,
    #[serde(default = "default_model_tag")]
    pub model_tag: String,
}

impl SynthSpec {
    /// A small four-class spec with equal separation on every layer.
    pub fn uniform(separation: f64, n_layers: usize, seed: u64) -> Self {
        SynthSpec {
            language: "synth".into(),
            inventory: ["L", "H", "R", "F"].map(String::from).to_vec(),
            n_speakers: 8,
            n_dialects: 2,
            tokens_per_speaker: 40,
            tokens_per_utterance: default_tokens_per_utterance(),
            dim: 8,
            n_layers,
            frame_stride: default_stride(),
            class_separation: vec![separation; n_layers],
            noise_std: 0.1,
            speaker_offset_std: 0.0,
            frame_correlation: 0.0,
            dialect_permutations: BTreeMap::new(),
            seed,
            model_tag: default_model_tag(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let k = self.inventory.len();
        if k < 2 {
            return bad("inventory needs at least 2 tones".into());
        }
        let mut sorted = self.inventory.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != k || self.inventory.iter().any(|t| t.is_empty()) {
            return bad("inventory labels must be distinct and non-empty".into());
        }
        if self.class_separation.len() != self.n_layers {
            return bad(format!(
                "class_separation has {} entries for {} layers",
                self.class_separation.len(),
                self.n_layers
            ));
        }
        if self.class_separation.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("class_separation values must be finite and >= 0".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return bad("noise_std must be > 0".into());
        }
        if !(self.speaker_offset_std.is_finite() && self.speaker_offset_std >= 0.0) {
            return bad("speaker_offset_std must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.frame_correlation) {
            return bad("frame_correlation must be in [0, 1)".into());
        }
        if !(self.frame_stride.is_finite() && self.frame_stride > 0.0) {
            return bad("frame_stride must be > 0".into());
        }
        if self.n_layers == 0 || self.dim == 0 || self.n_speakers == 0 || self.tokens_per_utterance == 0 {
            return bad("n_layers, dim, n_speakers and tokens_per_utterance must be positive".into());
        }
        if self.n_dialects == 0 || self.n_dialects > self.n_speakers {
            return bad("n_dialects must be in 1..=n_speakers".into());
        }
        for (d, perm) in &self.dialect_permutations {
            if *d >= self.n_dialects {
                return bad(format!("permutation for unknown dialect {d}"));
            }
            let mut p = perm.clone();
            p.sort_unstable();
            if p != (0..k).collect::<Vec<_>>() {
                return bad(format!("dialect {d} mapping is not a permutation of 0..{k}"));
            }
        }
        if self.model_tag.is_empty() || self.model_tag.contains(['/', '\\']) {
            return bad("model_tag must be a plain directory name".into());
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec serializes");
        s.push('\n');
        s
    }
}

/// Copy of `base` where dialect 0 maps every class to the next class's
/// prototype.
pub fn dialect_shift_spec(base: &SynthSpec) -> Result<SynthSpec> {
    if base.n_dialects < 2 {
        return Err(SynthError::InvalidSpec(format!(
            "dialect shift needs at least 2 dialects, spec has {}",
            base.n_dialects
        )));
    }
    let k = base.inventory.len();
    let mut spec = base.clone();
    spec.dialect_permutations
        .insert(0, (0..k).map(|c| (c + 1) % k).collect());
    Ok(spec)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToneTally {
    pub count: usize,
    pub seconds: f64,
}

/// Generator-side counts, for checking ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub language: String,
    pub model_tag: String,
    pub n_utterances: usize,
    pub n_tokens: usize,
    pub per_tone: BTreeMap<String, ToneTally>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub manifest_path: PathBuf,
    pub embedding_dir: PathBuf,
    pub summary: SynthSummary,
}

pub fn speaker_id(s: usize) -> String {
    format!("spk{s:03}")
}

pub fn dialect_id(d: usize) -> String {
    format!("d{d}")
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Segment {
    start_ms: u64,
    end_ms: u64,
    class: Option<usize>,
}

/// Write `<language>.csv`, `textgrids/`, `emb/<model_tag>/`, `spec.json` and
/// `summary.json` under `out_dir`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Generated> {
    spec.validate()?;
    let k = spec.inventory.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");

    let prototypes: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(&mut rng, spec.dim)).collect();
    let offsets: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..spec.dim)
                .map(|_| spec.speaker_offset_std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let tg_dir = out_dir.join("textgrids");
    let emb_dir = out_dir.join("emb").join(&spec.model_tag);
    mkdir(&tg_dir)?;
    mkdir(&emb_dir)?;

    let mut entries = Vec::new();
    let mut summary = SynthSummary {
        language: spec.language.clone(),
        model_tag: spec.model_tag.clone(),
        per_tone: spec
            .inventory
            .iter()
            .map(|t| (t.clone(), ToneTally::default()))
            .collect(),
        ..Default::default()
    };
    let mut total_ms = 0u64;
    let mut tone_ms = vec![0u64; k];

    for (s, offset) in offsets.iter().enumerate() {
        let dialect = s % spec.n_dialects;
        let perm = spec.dialect_permutations.get(&dialect);
        let mut classes: Vec<usize> = (0..spec.tokens_per_speaker).map(|i| i % k).collect();
        classes.shuffle(&mut rng);

        for (u, chunk) in classes.chunks(spec.tokens_per_utterance).enumerate() {
            let utt = format!("{}_u{u:03}", speaker_id(s));
            let mut segments = Vec::new();
            let mut t = 0u64;
            for &c in chunk {
                let gap = rng.random_range(20..=100u64);
                segments.push(Segment {
                    start_ms: t,
                    end_ms: t + gap,
                    class: None,
                });
                t += gap;
                let dur = rng.random_range(60..=400u64);
                segments.push(Segment {
                    start_ms: t,
                    end_ms: t + dur,
                    class: Some(c),
                });
                t += dur;
                tone_ms[c] += dur;
                total_ms += dur;
                summary.per_tone.get_mut(&spec.inventory[c]).unwrap().count += 1;
                summary.n_tokens += 1;
            }
            let tail = rng.random_range(20..=100u64);
            segments.push(Segment {
                start_ms: t,
                end_ms: t + tail,
                class: None,
            });
            t += tail;
            let xmax = t as f64 / 1000.0;

            let grid = TextGrid {
                xmin: 0.0,
                xmax,
                tiers: vec![IntervalTier {
                    name: DEFAULT_TIER.into(),
                    xmin: 0.0,
                    xmax,
                    intervals: segments
                        .iter()
                        .map(|g| {
                            Interval::new(
                                g.start_ms as f64 / 1000.0,
                                g.end_ms as f64 / 1000.0,
                                g.class.map(|c| spec.inventory[c].as_str()).unwrap_or(""),
                            )
                        })
                        .collect(),
                }],
            };
            let tg_name = format!("{utt}.TextGrid");
            write_file(&tg_dir.join(&tg_name), grid.to_long_string().as_bytes())?;

            let num_frames = (xmax / spec.frame_stride).ceil() as usize;
            // Class mean per frame, from the segment holding the frame center.
            // Segment index per frame, from the segment holding the frame center.
            let frame_segment: Vec<Option<usize>> = (0..num_frames)
                .map(|i| {
                    let center = i as f64 * spec.frame_stride + spec.frame_stride / 2.0;
                    segments
                        .iter()
                        .position(|g| center >= g.start_ms as f64 / 1000.0 && center < g.end_ms as f64 / 1000.0)
                })
                .collect();
            let frame_class: Vec<Option<usize>> = frame_segment
                .iter()
                .map(|g| g.and_then(|g| segments[g].class).map(|c| perm.map_or(c, |p| p[c])))
                .collect();
            let rho = spec.frame_correlation;
            let layers: Vec<Vec<f32>> = spec
                .class_separation
                .iter()
                .map(|&sep| {
                    let shared: Vec<Vec<f64>> = if rho > 0.0 {
                        (0..segments.len())
                            .map(|_| (0..spec.dim).map(|_| rho.sqrt() * noise.sample(&mut rng)).collect())
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let own = (1.0 - rho).sqrt();
                    let mut block = Vec::with_capacity(num_frames * spec.dim);
                    for (proto, seg) in frame_class.iter().zip(&frame_segment) {
                        for j in 0..spec.dim {
                            let mut mean = offset[j] + proto.map_or(0.0, |p| sep * prototypes[p][j]);
                            if let (Some(g), false) = (seg, shared.is_empty()) {
                                mean += shared[*g][j];
                            }
                            block.push((mean + own * noise.sample(&mut rng)) as f32);
                        }
                    }
                    block
                })
                .collect();
            let emb = EmbeddingFile::new(&utt, spec.dim, num_frames, spec.frame_stride, 0.0, layers)?;
            embstore::write_embedding_file(&emb, embstore::embedding_path(&emb_dir, &utt))?;

            entries.push(ManifestEntry {
                utterance_id: utt,
                audio_path: PathBuf::new(),
                textgrid_path: PathBuf::from("textgrids").join(tg_name),
                speaker_id: speaker_id(s),
                dialect: dialect_id(dialect),
                context: None,
            });
            summary.n_utterances += 1;
        }
    }

    for (c, tone) in spec.inventory.iter().enumerate() {
        summary.per_tone.get_mut(tone).unwrap().seconds = tone_ms[c] as f64 / 1000.0;
    }
    summary.total_seconds = total_ms as f64 / 1000.0;

    let manifest = CorpusManifest {
        language: spec.language.clone(),
        base_dir: out_dir.to_path_buf(),
        entries,
    };
    let manifest_path = out_dir.join(format!("{}.csv", spec.language));
    let mut buf = Vec::new();
    manifest.write_csv(&mut buf)?;
    write_file(&manifest_path, &buf)?;
    write_file(&out_dir.join("spec.json"), spec.to_json().as_bytes())?;
    let mut s = serde_json::to_string_pretty(&summary)?;
    s.push('\n');
    write_file(&out_dir.join("summary.json"), s.as_bytes())?;

    Ok(Generated {
        manifest_path,
        embedding_dir: emb_dir,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgrid::parse_textgrid;

    #[test]
    fn validation() {
        let mut s = SynthSpec::uniform(1.0, 3, 1);
        assert!(s.validate().is_ok());
        s.class_separation.pop();
        assert!(s.validate().is_err());
        let mut s = SynthSpec::uniform(1.0, 3, 1);
        s.noise_std = 0.0;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::uniform(1.0, 3, 1);
        s.dialect_permutations.insert(0, vec![0, 0, 1, 2]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn dialect_shift() {
        let base = SynthSpec::uniform(1.0, 2, 1);
        let s = dialect_shift_spec(&base).unwrap();
        assert_eq!(s.dialect_permutations[&0], vec![1, 2, 3, 0]);
        assert!(s.validate().is_ok());
        let mut one = base.clone();
        one.n_dialects = 1;
        assert!(dialect_shift_spec(&one).is_err());
    }

    #[test]
    fn generated_files_validate() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SynthSpec::uniform(2.0, 2, 9);
        spec.n_speakers = 2;
        spec.tokens_per_speaker = 12;
        let g = generate(&spec, dir.path()).unwrap();
        assert_eq!(g.summary.n_tokens, 24);
        assert_eq!(g.summary.n_utterances, 4);
        assert_eq!(g.summary.per_tone["L"].count, 6);
        let manifest = CorpusManifest::load(&g.manifest_path).unwrap();
        assert_eq!(manifest.language, "synth");
        for e in &manifest.entries {
            let parsed = parse_textgrid(&std::fs::read(manifest.resolve(&e.textgrid_path)).unwrap()).unwrap();
            assert!(parsed.warnings.is_empty());
            let emb =
                embstore::read_embedding_file(embstore::embedding_path(&g.embedding_dir, &e.utterance_id)).unwrap();
            assert_eq!(emb.num_layers(), 2);
            assert!(emb.num_frames as f64 * 0.02 >= parsed.grid.xmax - 1e-9);
        }
    }
}
