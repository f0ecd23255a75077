//! The whole probing protocol for one model directory: ingest, duration
//! filter, pooling, fold plans, layer sweep and reports.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{self, CorpusAccounting, CorpusManifest, ToneInventory, ToneToken};
use crate::embstore::{self, DropRecord};
use crate::evalreport::{self, AggregateResult, BestLayer, LayerResult, SweepContext};
use crate::features::FeatureTable;
use crate::folds::{self, FoldMode, FoldPlan};
use crate::svm::SvmConfig;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Emb(#[from] embstore::EmbError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Folds(#[from] folds::FoldError),
    #[error(transparent)]
    Eval(#[from] evalreport::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no tone inventory given and `{0}` is not a known language preset")]
    NoInventory(String),
    #[error("no tokens left after filtering and pooling")]
    NoTokens,
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub manifest: PathBuf,
    /// Directory of `.tpeb` files for one model.
    pub embedding_dir: PathBuf,
    pub out_dir: PathBuf,
    pub tier: String,
    pub min_duration: f64,
    /// Preset name or comma-separated labels; defaults to the language preset.
    pub inventory: Option<String>,
    /// Defaults to the manifest file stem.
    pub language: Option<String>,
    /// Defaults to the embedding directory name.
    pub model_tag: Option<String>,
    pub layers: Vec<u32>,
    pub k: usize,
    pub modes: Vec<FoldMode>,
    pub train_dialects: Option<usize>,
    pub seed: u64,
    pub svm: SvmConfig,
}

impl ProtocolConfig {
    pub fn new(manifest: impl Into<PathBuf>, embedding_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        ProtocolConfig {
            manifest: manifest.into(),
            embedding_dir: embedding_dir.into(),
            out_dir: out_dir.into(),
            tier: corpus::DEFAULT_TIER.into(),
            min_duration: corpus::DEFAULT_MIN_DURATION,
            inventory: None,
            language: None,
            model_tag: None,
            layers: (1..=12).collect(),
            k: folds::DEFAULT_K,
            modes: vec![FoldMode::SpeakerIndependent],
            train_dialects: None,
            seed: folds::DEFAULT_SEED,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub language: String,
    pub model_tag: String,
    pub accounting: CorpusAccounting,
    pub removed_short: usize,
    pub drops: Vec<DropRecord>,
    pub plans: Vec<FoldPlan>,
    pub results: Vec<LayerResult>,
    pub aggregates: Vec<AggregateResult>,
    pub best: Vec<BestLayer>,
}

/// `spec` if given, otherwise the preset named after the language.
pub fn resolve_inventory(spec: Option<&str>, language: &str) -> Result<ToneInventory> {
    match spec {
        Some(s) => Ok(ToneInventory::parse(s)?),
        None => ToneInventory::parse(language)
            .ok()
            .filter(|inv| inv.name != "custom")
            .ok_or_else(|| ProtocolError::NoInventory(language.to_owned())),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ProtocolError + '_ {
    move |source| ProtocolError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run_paper_protocol(cfg: &ProtocolConfig) -> Result<ProtocolOutcome> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(io(&cfg.out_dir))?;
    let mut manifest = CorpusManifest::load(&cfg.manifest)?;
    if let Some(lang) = &cfg.language {
        manifest = manifest.with_language(lang.clone());
    }
    let language = manifest.language.clone();
    let model_tag = cfg.model_tag.clone().unwrap_or_else(|| {
        cfg.embedding_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let inventory = resolve_inventory(cfg.inventory.as_deref(), &language)?;

    let extraction = corpus::extract_tokens(&manifest, &cfg.tier, &inventory)?;
    for d in &extraction.diagnostics {
        log::warn!("{d}");
    }
    let filtered = corpus::filter_by_duration(extraction.tokens, cfg.min_duration);
    log::info!(
        "{language}: {} tokens kept, {} below {:.3} s",
        filtered.kept.len(),
        filtered.removed,
        cfg.min_duration
    );
    let accounting = corpus::accounting_for(&filtered.kept, &inventory);
    let p = cfg.out_dir.join("tokens.csv");
    corpus::write_tokens_file(&p, &filtered.kept)?;
    let p = cfg.out_dir.join("accounting.csv");
    let f = std::fs::File::create(&p).map_err(io(&p))?;
    accounting.write_csv(f)?;

    let report = embstore::pool_corpus(&filtered.kept, &cfg.embedding_dir, &cfg.layers)?;
    if !report.drops.is_empty() {
        log::warn!("{} tokens dropped during pooling", report.drops.len());
    }
    let p = cfg.out_dir.join("features.tpft");
    report.table.write(&p)?;
    let p = cfg.out_dir.join("drops.csv");
    embstore::write_drop_report(&p, &report.drops).map_err(io(&p))?;

    let dropped: std::collections::BTreeSet<&str> = report.drops.iter().map(|d| d.token_id.as_str()).collect();
    let pooled: Vec<ToneToken> = filtered
        .kept
        .iter()
        .filter(|t| !dropped.contains(t.token_id.as_str()))
        .cloned()
        .collect();
    if pooled.is_empty() {
        return Err(ProtocolError::NoTokens);
    }

    let ctx = SweepContext {
        model_tag: model_tag.clone(),
        language: language.clone(),
    };
    let mut plans = Vec::new();
    let mut results = Vec::new();
    for mode in &cfg.modes {
        let plan = match mode {
            FoldMode::SpeakerIndependent => folds::build_speaker_folds(&pooled, cfg.k, cfg.seed)?,
            FoldMode::DialectIndependent => folds::build_dialect_folds(&pooled, cfg.train_dialects, cfg.seed)?,
        };
        plan.write(cfg.out_dir.join(format!("plan_{}.json", mode.as_str())))?;
        results.extend(evalreport::run_sweep(
            &report.table,
            &plan,
            &cfg.layers,
            &cfg.svm,
            &ctx,
        )?);
        plans.push(plan);
    }
    evalreport::sort_results(&mut results);
    evalreport::write_results_json(&cfg.out_dir.join("results.json"), &results)?;
    evalreport::emit_reports(&results, &cfg.out_dir.join("reports"))?;

    let aggregates = evalreport::aggregate(&results);
    let best = evalreport::best_layers(&aggregates);
    for b in &best {
        log::info!(
            "{} / {} / {}: best layer {} (macro-F1 {:.4})",
            b.model_tag,
            b.language,
            b.mode,
            b.layer,
            b.mean_f1
        );
    }
    Ok(ProtocolOutcome {
        language,
        model_tag,
        accounting,
        removed_short: filtered.removed,
        drops: report.drops,
        plans,
        results,
        aggregates,
        best,
    })
}

/// Load a feature table written by `run_paper_protocol` or `pool`.
pub fn load_features(path: &Path) -> Result<FeatureTable> {
    Ok(FeatureTable::read(path)?)
}
