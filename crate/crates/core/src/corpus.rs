//! Corpus ingestion: manifest CSV, tone-token extraction from TextGrids,
//! duration thresholding and per-tone accounting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textgrid::{self, ParseError, TIME_TOLERANCE};

/// Default minimum token duration in seconds.
pub const DEFAULT_MIN_DURATION: f64 = 0.050;

/// Default name of the annotation tier holding tone labels.
pub const DEFAULT_TIER: &str = "tones";

pub const MANIFEST_HEADER: [&str; 6] = [
    "utterance_id",
    "audio_path",
    "textgrid_path",
    "speaker_id",
    "dialect",
    "context",
];

pub const TOKEN_HEADER: [&str; 7] = [
    "token_id",
    "utterance_id",
    "speaker_id",
    "dialect",
    "tone",
    "start",
    "end",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest is missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate utterance_id `{0}` in manifest")]
    DuplicateUtterance(String),
    #[error("manifest row {row}: empty `{field}`")]
    EmptyField { row: usize, field: &'static str },
    #[error("utterance `{utterance}` ({path}): {source}")]
    TextGrid {
        utterance: String,
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("utterance `{utterance}`: tier `{tier}` not found")]
    TierNotFound { utterance: String, tier: String },
    #[error("invalid tone inventory: {0}")]
    InvalidInventory(String),
    #[error("token file row {row}: {message}")]
    BadToken { row: usize, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A tone label from a declared inventory.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToneLabel(String);

impl ToneLabel {
    pub fn new(label: impl Into<String>) -> Self {
        ToneLabel(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ToneLabel {
    fn from(s: &str) -> Self {
        ToneLabel(s.to_owned())
    }
}

/// The contrastive tones of one language, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToneInventory {
    pub name: String,
    pub labels: Vec<ToneLabel>,
}

impl ToneInventory {
    pub fn new(name: impl Into<String>, labels: &[&str]) -> Result<Self> {
        let labels: Vec<ToneLabel> = labels.iter().map(|l| ToneLabel::from(l.trim())).collect();
        if labels.is_empty() || labels.iter().any(|l| l.as_str().is_empty()) {
            return Err(CorpusError::InvalidInventory("empty label".into()));
        }
        let unique: HashSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(CorpusError::InvalidInventory("duplicate label".into()));
        }
        Ok(ToneInventory {
            name: name.into(),
            labels,
        })
    }

    pub fn angami() -> Self {
        Self::new("angami", &["T1", "T2", "T3", "T4"]).unwrap()
    }

    pub fn ao() -> Self {
        Self::new("ao", &["L", "M", "H"]).unwrap()
    }

    pub fn mizo() -> Self {
        Self::new("mizo", &["L", "H", "R", "F"]).unwrap()
    }

    /// Accepts a preset name (`angami`, `ao`, `mizo`) or a comma-separated
    /// label list such as `L,H,R,F`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim().to_ascii_lowercase().as_str() {
            "angami" | "tenyidie" => Ok(Self::angami()),
            "ao" => Ok(Self::ao()),
            "mizo" => Ok(Self::mizo()),
            _ => {
                let labels: Vec<&str> = spec.split(',').collect();
                Self::new("custom", &labels)
            }
        }
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l.as_str() == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub textgrid_path: PathBuf,
    pub speaker_id: String,
    pub dialect: String,
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub language: String,
    /// Directory that relative paths in the manifest are resolved against.
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    /// Load a manifest CSV. The language defaults to the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let language = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_reader(file, base_dir, language)
    }

    pub fn from_reader(reader: impl Read, base_dir: PathBuf, language: String) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let column = |name: &str| headers.iter().position(|h| h == name);
        let mut idx = [0usize; 5];
        for (slot, name) in idx.iter_mut().zip(MANIFEST_HEADER.iter()) {
            *slot = column(name).ok_or_else(|| CorpusError::MissingColumn((*name).into()))?;
        }
        let ctx_idx = column("context");

        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 2;
            let field = |k: usize| record.get(idx[k]).unwrap_or("").to_owned();
            let entry = ManifestEntry {
                utterance_id: field(0),
                audio_path: PathBuf::from(field(1)),
                textgrid_path: PathBuf::from(field(2)),
                speaker_id: field(3),
                dialect: field(4),
                context: ctx_idx
                    .and_then(|c| record.get(c))
                    .filter(|c| !c.is_empty())
                    .map(str::to_owned),
            };
            for (value, name) in [
                (&entry.utterance_id, "utterance_id"),
                (&entry.speaker_id, "speaker_id"),
                (&entry.dialect, "dialect"),
            ] {
                if value.is_empty() {
                    return Err(CorpusError::EmptyField { row, field: name });
                }
            }
            if entry.textgrid_path.as_os_str().is_empty() {
                return Err(CorpusError::EmptyField {
                    row,
                    field: "textgrid_path",
                });
            }
            if !seen.insert(entry.utterance_id.clone()) {
                return Err(CorpusError::DuplicateUtterance(entry.utterance_id));
            }
            entries.push(entry);
        }
        Ok(CorpusManifest {
            language,
            base_dir,
            entries,
        })
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.utterance_id.as_str(),
                &e.audio_path.to_string_lossy(),
                &e.textgrid_path.to_string_lossy(),
                &e.speaker_id,
                &e.dialect,
                e.context.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|source| CorpusError::Io {
            path: PathBuf::from("<manifest>"),
            source,
        })?;
        Ok(())
    }
}

/// One annotated tone-bearing segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneToken {
    pub token_id: String,
    pub utterance_id: String,
    pub speaker_id: String,
    pub dialect: String,
    pub tone: ToneLabel,
    pub start: f64,
    pub end: f64,
}

impl ToneToken {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A non-fatal ingestion note tied to an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestDiagnostic {
    pub utterance_id: String,
    pub message: String,
}

impl fmt::Display for IngestDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.utterance_id, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub tokens: Vec<ToneToken>,
    pub diagnostics: Vec<IngestDiagnostic>,
}

/// Extract one token per labelled interval of `tier_name` whose label is in
/// `inventory`. Token ids are `<utterance_id>#<1-based interval index>`.
///
/// TextGrids are parsed in parallel; output follows manifest order.
pub fn extract_tokens(manifest: &CorpusManifest, tier_name: &str, inventory: &ToneInventory) -> Result<Extraction> {
    let per_entry: Vec<Result<Extraction>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let path = manifest.resolve(&entry.textgrid_path);
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            let parsed = textgrid::parse_textgrid(&bytes).map_err(|source| CorpusError::TextGrid {
                utterance: entry.utterance_id.clone(),
                path: path.clone(),
                source,
            })?;
            tokens_from_grid(entry, &parsed, tier_name, inventory)
        })
        .collect();

    let mut out = Extraction::default();
    for r in per_entry {
        let e = r?;
        out.tokens.extend(e.tokens);
        out.diagnostics.extend(e.diagnostics);
    }
    Ok(out)
}

fn tokens_from_grid(
    entry: &ManifestEntry,
    parsed: &textgrid::Parsed,
    tier_name: &str,
    inventory: &ToneInventory,
) -> Result<Extraction> {
    let note = |message: String| IngestDiagnostic {
        utterance_id: entry.utterance_id.clone(),
        message,
    };
    let mut diagnostics: Vec<IngestDiagnostic> = parsed.warnings.iter().map(|w| note(w.to_string())).collect();
    let found = parsed
        .grid
        .tier_by_name(tier_name)
        .ok_or_else(|| CorpusError::TierNotFound {
            utterance: entry.utterance_id.clone(),
            tier: tier_name.to_owned(),
        })?;
    if let Some(w) = found.warning() {
        diagnostics.push(note(w));
    }
    let mut tokens = Vec::new();
    for (i, iv) in found.tier.intervals.iter().enumerate() {
        if iv.is_spacer() {
            continue;
        }
        let label = iv.label.trim();
        if !inventory.contains(label) {
            diagnostics.push(note(format!(
                "interval {} label \"{}\" is not in the {} inventory; skipped",
                i + 1,
                iv.label,
                inventory.name
            )));
            continue;
        }
        tokens.push(ToneToken {
            token_id: format!("{}#{}", entry.utterance_id, i + 1),
            utterance_id: entry.utterance_id.clone(),
            speaker_id: entry.speaker_id.clone(),
            dialect: entry.dialect.clone(),
            tone: ToneLabel::from(label),
            start: iv.start,
            end: iv.end,
        });
    }
    Ok(Extraction { tokens, diagnostics })
}

#[derive(Debug, Clone)]
pub struct DurationFilter {
    pub kept: Vec<ToneToken>,
    pub removed: usize,
}

/// Keep tokens with `end - start >= min_duration` (inclusive, up to the
/// shared time tolerance). Order is preserved.
pub fn filter_by_duration(tokens: Vec<ToneToken>, min_duration: f64) -> DurationFilter {
    let before = tokens.len();
    let kept: Vec<ToneToken> = tokens
        .into_iter()
        .filter(|t| passes_threshold(t.duration(), min_duration))
        .collect();
    DurationFilter {
        removed: before - kept.len(),
        kept,
    }
}

fn passes_threshold(duration: f64, min_duration: f64) -> bool {
    duration >= min_duration - TIME_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneCount {
    pub tone: ToneLabel,
    pub count: usize,
    pub minutes: f64,
}

/// Per-tone token counts and total durations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusAccounting {
    pub per_tone: Vec<ToneCount>,
    pub total_count: usize,
    pub total_minutes: f64,
}

/// Accounting with tones in lexicographic order.
pub fn accounting(tokens: &[ToneToken]) -> CorpusAccounting {
    let mut by_tone: BTreeMap<&ToneLabel, (usize, f64)> = BTreeMap::new();
    for t in tokens {
        let e = by_tone.entry(&t.tone).or_default();
        e.0 += 1;
        e.1 += t.duration();
    }
    let rows = by_tone
        .into_iter()
        .map(|(tone, (count, secs))| ToneCount {
            tone: tone.clone(),
            count,
            minutes: secs / 60.0,
        })
        .collect();
    CorpusAccounting::from_rows(rows)
}

/// Accounting with tones in inventory order; tones without tokens get zero
/// rows, tones outside the inventory follow in lexicographic order.
pub fn accounting_for(tokens: &[ToneToken], inventory: &ToneInventory) -> CorpusAccounting {
    let base = accounting(tokens);
    let mut rows: Vec<ToneCount> = inventory
        .labels
        .iter()
        .map(|l| {
            base.per_tone
                .iter()
                .find(|r| &r.tone == l)
                .cloned()
                .unwrap_or(ToneCount {
                    tone: l.clone(),
                    count: 0,
                    minutes: 0.0,
                })
        })
        .collect();
    rows.extend(
        base.per_tone
            .into_iter()
            .filter(|r| !inventory.labels.contains(&r.tone)),
    );
    CorpusAccounting::from_rows(rows)
}

impl CorpusAccounting {
    fn from_rows(per_tone: Vec<ToneCount>) -> Self {
        CorpusAccounting {
            total_count: per_tone.iter().map(|r| r.count).sum(),
            total_minutes: per_tone.iter().map(|r| r.minutes).sum(),
            per_tone,
        }
    }

    /// `tone,tokens,duration_min` rows plus a `total` row; minutes to 2 decimals.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tone", "tokens", "duration_min"])?;
        for r in &self.per_tone {
            w.write_record([r.tone.as_str(), &r.count.to_string(), &format!("{:.2}", r.minutes)])?;
        }
        w.write_record([
            "total",
            &self.total_count.to_string(),
            &format!("{:.2}", self.total_minutes),
        ])?;
        w.flush().map_err(io_err(Path::new("<accounting>")))?;
        Ok(())
    }
}

pub fn write_tokens(writer: impl Write, tokens: &[ToneToken]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TOKEN_HEADER)?;
    for t in tokens {
        w.write_record([
            t.token_id.as_str(),
            &t.utterance_id,
            &t.speaker_id,
            &t.dialect,
            t.tone.as_str(),
            &format!("{:.6}", t.start),
            &format!("{:.6}", t.end),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("<tokens>")))?;
    Ok(())
}

pub fn write_tokens_file(path: impl AsRef<Path>, tokens: &[ToneToken]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    write_tokens(std::io::BufWriter::new(file), tokens)
}

pub fn read_tokens(reader: impl Read) -> Result<Vec<ToneToken>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(TOKEN_HEADER.iter()) {
        *slot = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| CorpusError::MissingColumn((*name).into()))?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let time = |k: usize| -> Result<f64> {
            get(k)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CorpusError::BadToken {
                    row,
                    message: format!("invalid {} `{}`", TOKEN_HEADER[k], get(k)),
                })
        };
        let token = ToneToken {
            token_id: get(0).to_owned(),
            utterance_id: get(1).to_owned(),
            speaker_id: get(2).to_owned(),
            dialect: get(3).to_owned(),
            tone: ToneLabel::from(get(4)),
            start: time(5)?,
            end: time(6)?,
        };
        if token.token_id.is_empty() || token.tone.as_str().is_empty() {
            return Err(CorpusError::BadToken {
                row,
                message: "empty token_id or tone".into(),
            });
        }
        if token.end <= token.start {
            return Err(CorpusError::BadToken {
                row,
                message: format!("end {} not after start {}", token.end, token.start),
            });
        }
        out.push(token);
    }
    Ok(out)
}

pub fn read_tokens_file(path: impl AsRef<Path>) -> Result<Vec<ToneToken>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    read_tokens(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgrid::{Interval, IntervalTier, TextGrid};

    fn tok(id: &str, tone: &str, start: f64, end: f64) -> ToneToken {
        ToneToken {
            token_id: id.into(),
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            dialect: "d".into(),
            tone: tone.into(),
            start,
            end,
        }
    }

    fn manifest_csv(rows: &str) -> String {
        format!("{}\n{rows}", MANIFEST_HEADER.join(","))
    }

    #[test]
    fn manifest_two_rows() {
        let csv = manifest_csv("u1,a1.wav,u1.TextGrid,s1,north,frame\nu2,a2.wav,u2.TextGrid,s2,south,\n");
        let m = CorpusManifest::from_reader(csv.as_bytes(), PathBuf::new(), "mizo".into()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].context.as_deref(), Some("frame"));
        assert_eq!(m.entries[1].context, None);
    }

    #[test]
    fn manifest_missing_column() {
        let csv = "utterance_id,audio_path,textgrid_path,dialect,context\nu1,a,b,d,\n";
        let err = CorpusManifest::from_reader(csv.as_bytes(), PathBuf::new(), "x".into()).unwrap_err();
        assert!(
            matches!(&err, CorpusError::MissingColumn(c) if c == "speaker_id"),
            "{err}"
        );
        assert!(err.to_string().contains("speaker_id"));
    }

    #[test]
    fn manifest_duplicate_id() {
        let csv = manifest_csv("u1,a,b,s,d,\nu1,a,c,s,d,\n");
        let err = CorpusManifest::from_reader(csv.as_bytes(), PathBuf::new(), "x".into()).unwrap_err();
        assert!(err.to_string().contains("u1"));
        assert!(matches!(err, CorpusError::DuplicateUtterance(_)));
    }

    #[test]
    fn manifest_empty_speaker() {
        let csv = manifest_csv("u1,a,b,,d,\n");
        let err = CorpusManifest::from_reader(csv.as_bytes(), PathBuf::new(), "x".into()).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::EmptyField {
                field: "speaker_id",
                ..
            }
        ));
    }

    fn grid(labels: &[(f64, f64, &str)]) -> textgrid::Parsed {
        textgrid::Parsed {
            grid: TextGrid {
                xmin: 0.0,
                xmax: 0.5,
                tiers: vec![IntervalTier {
                    name: "tones".into(),
                    xmin: 0.0,
                    xmax: 0.5,
                    intervals: labels.iter().map(|&(a, b, l)| Interval::new(a, b, l)).collect(),
                }],
            },
            warnings: vec![],
        }
    }

    fn entry(id: &str, speaker: &str) -> ManifestEntry {
        ManifestEntry {
            utterance_id: id.into(),
            audio_path: "a.wav".into(),
            textgrid_path: "g.TextGrid".into(),
            speaker_id: speaker.into(),
            dialect: "d".into(),
            context: None,
        }
    }

    #[test]
    fn spacer_skipped() {
        let g = grid(&[(0.0, 0.2, "H"), (0.2, 0.3, ""), (0.3, 0.5, "L")]);
        let e = tokens_from_grid(&entry("u1", "s1"), &g, "tones", &ToneInventory::mizo()).unwrap();
        let tones: Vec<_> = e.tokens.iter().map(|t| t.tone.as_str()).collect();
        assert_eq!(tones, ["H", "L"]);
        assert_eq!(e.tokens[1].token_id, "u1#3");
        assert!(e.diagnostics.is_empty());
    }

    #[test]
    fn out_of_inventory_warns() {
        let g = grid(&[(0.0, 0.2, "H"), (0.2, 0.3, "X"), (0.3, 0.5, "L")]);
        let e = tokens_from_grid(&entry("u1", "s1"), &g, "tones", &ToneInventory::mizo()).unwrap();
        assert_eq!(e.tokens.len(), 2);
        assert_eq!(e.diagnostics.len(), 1);
        assert!(e.diagnostics[0].message.contains("\"X\""));
    }

    #[test]
    fn missing_tier() {
        let g = grid(&[(0.0, 0.2, "H")]);
        let err = tokens_from_grid(&entry("u1", "s1"), &g, "Tones", &ToneInventory::mizo()).unwrap_err();
        assert!(matches!(err, CorpusError::TierNotFound { .. }));
    }

    #[test]
    fn duration_threshold_inclusive() {
        let toks = vec![
            tok("a", "H", 0.0, 0.049),
            tok("b", "H", 0.0, 0.050),
            tok("c", "H", 0.0, 0.051),
        ];
        let f = filter_by_duration(toks.clone(), DEFAULT_MIN_DURATION);
        let ids: Vec<_> = f.kept.iter().map(|t| t.token_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(f.removed, 1);
        let all = filter_by_duration(toks.clone(), 0.0);
        assert_eq!(all.kept, toks);
        assert_eq!(all.removed, 0);
    }

    #[test]
    fn threshold_boundary_with_float_noise() {
        // 0.35 - 0.3 is 0.04999999999999993 in binary
        let f = filter_by_duration(vec![tok("a", "H", 0.3, 0.35)], 0.05);
        assert_eq!(f.kept.len(), 1);
    }

    #[test]
    fn accounting_cases() {
        let empty = accounting(&[]);
        assert_eq!(empty.total_count, 0);
        assert_eq!(empty.total_minutes, 0.0);
        assert!(empty.per_tone.is_empty());

        let toks = vec![
            tok("a", "H", 0.0, 0.1),
            tok("b", "H", 1.0, 1.1),
            tok("c", "H", 2.0, 2.1),
        ];
        let acc = accounting(&toks);
        assert_eq!(acc.per_tone.len(), 1);
        assert_eq!(acc.per_tone[0].count, 3);
        assert!((acc.per_tone[0].minutes - 0.3 / 60.0).abs() < 1e-12);
        let mut buf = Vec::new();
        acc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("H,3,0.01"), "{text}");
        assert!(text.contains("total,3,0.01"));
    }

    #[test]
    fn accounting_in_inventory_order() {
        let toks = vec![tok("a", "R", 0.0, 0.1), tok("b", "L", 0.0, 0.2)];
        let acc = accounting_for(&toks, &ToneInventory::mizo());
        let order: Vec<_> = acc.per_tone.iter().map(|r| r.tone.as_str()).collect();
        assert_eq!(order, ["L", "H", "R", "F"]);
        assert_eq!(acc.total_count, 2);
    }

    #[test]
    fn token_csv_roundtrip() {
        let toks = vec![tok("u#1", "H", 0.125, 0.25), tok("u#3", "L", 0.5, 0.75)];
        let mut buf = Vec::new();
        write_tokens(&mut buf, &toks).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("token_id,utterance_id,speaker_id,dialect,tone,start,end\n"));
        assert!(text.contains("u#1,u,s,d,H,0.125000,0.250000"));
        assert_eq!(read_tokens(buf.as_slice()).unwrap(), toks);
    }

    #[test]
    fn inventory_parsing() {
        assert_eq!(ToneInventory::parse("Mizo").unwrap(), ToneInventory::mizo());
        let custom = ToneInventory::parse("A, B ,C").unwrap();
        assert_eq!(custom.labels.len(), 3);
        assert!(custom.contains("B"));
        assert!(ToneInventory::parse("A,A").is_err());
        assert!(ToneInventory::parse("A,,B").is_err());
    }
}
