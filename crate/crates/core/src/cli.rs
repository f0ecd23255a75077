//! Command-line front end. Data goes to files, logs to stderr.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus::{self, CorpusManifest, DEFAULT_MIN_DURATION, DEFAULT_TIER};
use crate::embstore;
use crate::evalreport::{self, SweepContext};
use crate::features::FeatureTable;
use crate::folds::{self, FoldMode, FoldPlan, DEFAULT_K, DEFAULT_SEED};
use crate::protocol::{self, ProtocolConfig};
use crate::svm::{SvmConfig, DEFAULT_C, DEFAULT_MAX_EPOCHS, DEFAULT_TOLERANCE};
use crate::synth::{self, SynthSpec};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(
    name = "toneprobe",
    version,
    about = "Layer-wise tone probing of speech model embeddings"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Never changes outputs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Extract tone tokens from TextGrids and apply the duration threshold.
    Ingest(IngestArgs),
    /// Mean-pool token frames per layer from embedding files.
    Pool(PoolArgs),
    /// Build a cross-validation fold plan.
    Folds(FoldsArgs),
    /// Train and score one probe per (layer, fold).
    Eval(EvalArgs),
    /// Write CSV tables and SVG plots from sweep results.
    Report(ReportArgs),
    /// Generate a synthetic corpus with embeddings.
    Synth(SynthArgs),
    /// Run ingest, pool, folds, eval and report for one model directory.
    RunPaperProtocol(ProtocolArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Pool(_) => "pool",
            Command::Folds(_) => "folds",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
            Command::Synth(_) => "synth",
            Command::RunPaperProtocol(_) => "run-paper-protocol",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Manifest CSV; the language defaults to its file stem.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = DEFAULT_TIER)]
    pub tier: String,
    /// Minimum token duration in seconds (inclusive).
    #[arg(long = "min-dur", default_value_t = DEFAULT_MIN_DURATION)]
    pub min_dur: f64,
    /// Preset (angami, ao, mizo) or comma-separated labels.
    #[arg(long)]
    pub inventory: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PoolArgs {
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long = "emb-dir")]
    pub emb_dir: PathBuf,
    /// `1..12`, `1-12` or `1,4,8`.
    #[arg(long, default_value = "1..12", value_parser = parse_layer_list)]
    pub layers: LayerList,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Speaker,
    Dialect,
}

impl From<ModeArg> for FoldMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Speaker => FoldMode::SpeakerIndependent,
            ModeArg::Dialect => FoldMode::DialectIndependent,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FoldsArgs {
    #[arg(long)]
    pub tokens: PathBuf,
    /// Drop report from `pool`; listed tokens are left out of the plan.
    #[arg(long)]
    pub drops: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "speaker")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Dialect mode: train on every combination of exactly this many other dialects.
    #[arg(long = "train-dialects")]
    pub train_dialects: Option<usize>,
    #[arg(long, env = "TONEPROBE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SvmArgs {
    #[arg(long = "c", visible_alias = "C", default_value_t = DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long = "max-epochs", default_value_t = DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    #[arg(long = "no-standardize")]
    pub no_standardize: bool,
}

impl SvmArgs {
    fn config(&self, seed: u64) -> Result<SvmConfig> {
        if !(self.c.is_finite() && self.c > 0.0) {
            bail!("--c must be a positive number, got {}", self.c);
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            bail!("--tol must be a positive number, got {}", self.tol);
        }
        Ok(SvmConfig {
            c: self.c,
            tolerance: self.tol,
            max_epochs: self.max_epochs,
            seed,
            standardize: !self.no_standardize,
        })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub svm: SvmArgs,
    #[arg(long, env = "TONEPROBE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Default: every layer in the feature table.
    #[arg(long, value_parser = parse_layer_list)]
    pub layers: Option<LayerList>,
    /// Default: the feature file's parent directory name.
    #[arg(long = "model-tag")]
    pub model_tag: Option<String>,
    #[arg(long, default_value = "unknown")]
    pub language: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// One or more `results.json` files from `eval`.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolMode {
    Speaker,
    Dialect,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "emb-dir")]
    pub emb_dir: PathBuf,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = DEFAULT_TIER)]
    pub tier: String,
    #[arg(long = "min-dur", default_value_t = DEFAULT_MIN_DURATION)]
    pub min_dur: f64,
    #[arg(long)]
    pub inventory: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long = "model-tag")]
    pub model_tag: Option<String>,
    #[arg(long, default_value = "1..12", value_parser = parse_layer_list)]
    pub layers: LayerList,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "speaker")]
    pub mode: ProtocolMode,
    #[arg(long = "train-dialects")]
    pub train_dialects: Option<usize>,
    #[arg(long, env = "TONEPROBE_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub svm: SvmArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LayerList(pub Vec<u32>);

fn parse_layer_list(s: &str) -> Result<LayerList, String> {
    parse_layers(s).map(LayerList)
}

/// Parse `a..b` / `a-b` (inclusive) or a comma list into a sorted,
/// deduplicated layer list.
pub fn parse_layers(s: &str) -> Result<Vec<u32>, String> {
    let s = s.trim();
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("bad layer number `{t}`"));
    let mut set = BTreeSet::new();
    for part in s.split(',') {
        let range = part.split_once("..").or_else(|| part.split_once('-'));
        match range {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty layer range `{part}`"));
                }
                set.extend(a..=b);
            }
            None => {
                set.insert(num(part)?);
            }
        }
    }
    if set.is_empty() {
        return Err("no layers given".into());
    }
    Ok(set.into_iter().collect())
}

#[derive(Serialize)]
struct RunConfig<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    args: &'a Command,
}

fn write_run_config(dir: &Path, command: &Command) -> Result<()> {
    let cfg = RunConfig {
        tool: "toneprobe",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: command.name(),
        args: command,
    };
    let mut s = serde_json::to_string_pretty(&cfg)?;
    s.push('\n');
    let path = dir.join(RUN_CONFIG_FILE);
    std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_manifest(path: &Path, language: Option<&str>) -> Result<CorpusManifest> {
    let m = CorpusManifest::load(path)?;
    Ok(match language {
        Some(l) => m.with_language(l),
        None => m,
    })
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest, a.language.as_deref())?;
    let inventory = protocol::resolve_inventory(a.inventory.as_deref(), &manifest.language)?;
    let extraction = corpus::extract_tokens(&manifest, &a.tier, &inventory)?;
    for d in &extraction.diagnostics {
        log::warn!("{d}");
    }
    let filtered = corpus::filter_by_duration(extraction.tokens, a.min_dur);
    log::info!(
        "{}: kept {} tokens, removed {} shorter than {} s",
        manifest.language,
        filtered.kept.len(),
        filtered.removed,
        a.min_dur
    );
    create_dir(&a.out)?;
    corpus::write_tokens_file(a.out.join("tokens.csv"), &filtered.kept)?;
    let acc = corpus::accounting_for(&filtered.kept, &inventory);
    acc.write_csv(File::create(a.out.join("accounting.csv"))?)?;
    Ok(())
}

fn cmd_pool(a: &PoolArgs) -> Result<()> {
    let tokens = corpus::read_tokens_file(&a.tokens)?;
    let report = embstore::pool_corpus(&tokens, &a.emb_dir, &a.layers.0)?;
    log::info!(
        "pooled {} rows (dim {}), dropped {} tokens",
        report.table.rows.len(),
        report.table.dim,
        report.drops.len()
    );
    create_dir(&a.out)?;
    report.table.write(a.out.join("features.tpft"))?;
    embstore::write_drop_report(a.out.join("drops.csv"), &report.drops)?;
    Ok(())
}

fn read_dropped_ids(path: &Path) -> Result<BTreeSet<String>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let Some(id) = rec.get(0) {
            ids.insert(id.to_owned());
        }
    }
    Ok(ids)
}

fn cmd_folds(a: &FoldsArgs) -> Result<()> {
    let mut tokens = corpus::read_tokens_file(&a.tokens)?;
    if let Some(d) = &a.drops {
        let dropped = read_dropped_ids(d)?;
        tokens.retain(|t| !dropped.contains(&t.token_id));
    }
    let plan = match FoldMode::from(a.mode) {
        FoldMode::SpeakerIndependent => folds::build_speaker_folds(&tokens, a.k, a.seed)?,
        FoldMode::DialectIndependent => folds::build_dialect_folds(&tokens, a.train_dialects, a.seed)?,
    };
    match folds::validate_plan(&plan, &tokens) {
        Ok(stats) => log::info!("fold plan:\n{stats}"),
        Err(v) => {
            for x in &v {
                log::warn!("{x}");
            }
        }
    }
    create_dir(&a.out)?;
    plan.write(a.out.join("plan.json"))?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let features = FeatureTable::read(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let plan = FoldPlan::read(&a.plan).with_context(|| format!("reading {}", a.plan.display()))?;
    let layers = a.layers.clone().map_or_else(|| features.layers(), |l| l.0);
    let model_tag = a.model_tag.clone().unwrap_or_else(|| {
        a.features
            .canonicalize()
            .ok()
            .and_then(|p| {
                p.parent()
                    .and_then(|d| d.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
            })
            .unwrap_or_else(|| "model".into())
    });
    let ctx = SweepContext {
        model_tag,
        language: a.language.clone(),
    };
    let results = evalreport::run_sweep(&features, &plan, &layers, &a.svm.config(a.seed)?, &ctx)?;
    log::info!("{} (layer, fold) results", results.len());
    create_dir(&a.out)?;
    evalreport::write_results_json(&a.out.join("results.json"), &results)?;
    evalreport::write_long_csv(&a.out.join("results_long.csv"), &results)?;
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut all = Vec::new();
    for p in &a.results {
        all.extend(evalreport::read_results_json(p)?);
    }
    let written = evalreport::emit_reports(&all, &a.out_dir)?;
    for b in evalreport::best_layers(&evalreport::aggregate(&all)) {
        log::info!(
            "{} / {} / {}: best layer {} (macro-F1 {:.4})",
            b.model_tag,
            b.language,
            b.mode,
            b.layer,
            b.mean_f1
        );
    }
    log::info!("wrote {} files to {}", written.len(), a.out_dir.display());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec::read(&a.spec)?;
    let g = synth::generate(&spec, &a.out_dir)?;
    log::info!(
        "generated {} utterances, {} tokens; manifest {}",
        g.summary.n_utterances,
        g.summary.n_tokens,
        g.manifest_path.display()
    );
    Ok(())
}

fn cmd_protocol(a: &ProtocolArgs) -> Result<()> {
    let modes = match a.mode {
        ProtocolMode::Speaker => vec![FoldMode::SpeakerIndependent],
        ProtocolMode::Dialect => vec![FoldMode::DialectIndependent],
        ProtocolMode::Both => vec![FoldMode::SpeakerIndependent, FoldMode::DialectIndependent],
    };
    let cfg = ProtocolConfig {
        manifest: a.manifest.clone(),
        embedding_dir: a.emb_dir.clone(),
        out_dir: a.out_dir.clone(),
        tier: a.tier.clone(),
        min_duration: a.min_dur,
        inventory: a.inventory.clone(),
        language: a.language.clone(),
        model_tag: a.model_tag.clone(),
        layers: a.layers.0.clone(),
        k: a.k,
        modes,
        train_dialects: a.train_dialects,
        seed: a.seed,
        svm: a.svm.config(a.seed)?,
    };
    protocol::run_paper_protocol(&cfg)?;
    Ok(())
}

fn output_dir(command: &Command) -> &Path {
    match command {
        Command::Ingest(a) => &a.out,
        Command::Pool(a) => &a.out,
        Command::Folds(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Report(a) => &a.out_dir,
        Command::Synth(a) => &a.out_dir,
        Command::RunPaperProtocol(a) => &a.out_dir,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let exec = || -> Result<()> {
        match &cli.command {
            Command::Ingest(a) => cmd_ingest(a),
            Command::Pool(a) => cmd_pool(a),
            Command::Folds(a) => cmd_folds(a),
            Command::Eval(a) => cmd_eval(a),
            Command::Report(a) => cmd_report(a),
            Command::Synth(a) => cmd_synth(a),
            Command::RunPaperProtocol(a) => cmd_protocol(a),
        }?;
        write_run_config(output_dir(&cli.command), &cli.command)
    };
    match cli.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(exec),
        None => exec(),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
