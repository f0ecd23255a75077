//! Layer-by-fold probing sweep and its reports.

mod metrics;
pub mod plots;

pub use metrics::{confusion_and_metrics, mean_std, metrics_from_confusion, AggregateResult, Metrics, MetricsError};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureTable, PooledFeature};
use crate::folds::FoldPlan;
use crate::svm::{self, Matrix, OvrModel, SvmConfig, SvmError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results to aggregate or report")]
    Empty,
    #[error("no feature for plan token `{token}` at layer {layer}")]
    MissingFeature { token: String, layer: u32 },
    #[error("layer {layer}, fold {fold}: {source}")]
    Svm {
        layer: u32,
        fold: usize,
        #[source]
        source: SvmError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("plan has no evaluation instance {0}")]
    NoSuchInstance(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("results JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Scores of one trained probe on one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub model_tag: String,
    pub language: String,
    pub mode: String,
    pub layer: u32,
    /// Evaluation instance index within the plan.
    pub fold: usize,
    /// Fold held out for testing.
    pub test_fold: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<usize>>,
    pub per_class_recall: Vec<f64>,
}

/// Labels attached to every result of one sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepContext {
    pub model_tag: String,
    pub language: String,
}

/// Group fold results by (model, language, mode, layer).
pub fn aggregate(results: &[LayerResult]) -> Vec<AggregateResult> {
    let mut groups: BTreeMap<(&str, &str, &str, u32), Vec<&LayerResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((&r.model_tag, &r.language, &r.mode, r.layer))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((model, lang, mode, layer), rs)| {
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let f1: Vec<f64> = rs.iter().map(|r| r.macro_f1).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            let (mean_f1, std_f1) = mean_std(&f1);
            AggregateResult {
                model_tag: model.to_owned(),
                language: lang.to_owned(),
                mode: mode.to_owned(),
                layer,
                mean_accuracy,
                std_accuracy,
                mean_f1,
                std_f1,
                n_folds: rs.len(),
                single_fold: rs.len() < 2,
            }
        })
        .collect()
}

/// Layer with the highest mean F1; ties go to the lowest layer.
pub fn best_layer(aggregates: &[AggregateResult]) -> Result<(u32, f64)> {
    let mut sorted: Vec<&AggregateResult> = aggregates.iter().collect();
    sorted.sort_by_key(|a| a.layer);
    let mut best: Option<(u32, f64)> = None;
    for a in sorted {
        if best.is_none_or(|(_, f)| a.mean_f1 > f) {
            best = Some((a.layer, a.mean_f1));
        }
    }
    best.ok_or(EvalError::Empty)
}

/// Best layer of one (model, language, mode) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLayer {
    pub model_tag: String,
    pub language: String,
    pub mode: String,
    pub layer: u32,
    pub mean_f1: f64,
}

pub fn best_layers(aggregates: &[AggregateResult]) -> Vec<BestLayer> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<AggregateResult>> = BTreeMap::new();
    for a in aggregates {
        groups
            .entry((&a.model_tag, &a.language, &a.mode))
            .or_default()
            .push(a.clone());
    }
    groups
        .into_iter()
        .filter_map(|((model, lang, mode), aggs)| {
            let (layer, mean_f1) = best_layer(&aggs).ok()?;
            Some(BestLayer {
                model_tag: model.to_owned(),
                language: lang.to_owned(),
                mode: mode.to_owned(),
                layer,
                mean_f1,
            })
        })
        .collect()
}

struct LayerData<'a> {
    by_token: BTreeMap<&'a str, &'a PooledFeature>,
    classes: Vec<String>,
}

fn layer_data<'a>(features: &'a FeatureTable, plan: &FoldPlan, layer: u32) -> Result<LayerData<'a>> {
    let by_token = features.layer_index(layer);
    let mut classes = BTreeSet::new();
    for token in plan.tokens.keys() {
        let f = by_token.get(token.as_str()).ok_or_else(|| EvalError::MissingFeature {
            token: token.clone(),
            layer,
        })?;
        classes.insert(f.tone.as_str().to_owned());
    }
    Ok(LayerData {
        by_token,
        classes: classes.into_iter().collect(),
    })
}

fn gather(data: &LayerData<'_>, plan: &FoldPlan, dim: usize, folds: &[usize]) -> (Matrix, Vec<String>) {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (token, &f) in &plan.tokens {
        if folds.contains(&f) {
            let feat = data.by_token[token.as_str()];
            values.extend(feat.vector.iter().map(|&v| v as f64));
            labels.push(feat.tone.as_str().to_owned());
        }
    }
    let rows = labels.len();
    (
        Matrix::new(rows, dim, values).expect("feature rows share the table dim"),
        labels,
    )
}

fn train_instance(
    data: &LayerData<'_>,
    plan: &FoldPlan,
    dim: usize,
    layer: u32,
    instance: usize,
    config: &SvmConfig,
) -> Result<OvrModel> {
    let inst = plan
        .instances
        .get(instance)
        .ok_or(EvalError::NoSuchInstance(instance))?;
    let (x, y) = gather(data, plan, dim, &inst.train);
    svm::train_ovr(&x, &y, &data.classes, config).map_err(|source| EvalError::Svm {
        layer,
        fold: instance,
        source,
    })
}

/// The probe trained for one (layer, evaluation instance) cell. Only rows of
/// the instance's training folds are read.
pub fn train_cell(
    features: &FeatureTable,
    plan: &FoldPlan,
    layer: u32,
    instance: usize,
    config: &SvmConfig,
) -> Result<OvrModel> {
    let data = layer_data(features, plan, layer)?;
    train_instance(&data, plan, features.dim, layer, instance, config)
}

/// Train and evaluate one probe per (layer, evaluation instance).
///
/// Cells run on the current rayon pool; results come back sorted by
/// (layer, fold) whatever the schedule.
pub fn run_sweep(
    features: &FeatureTable,
    plan: &FoldPlan,
    layers: &[u32],
    config: &SvmConfig,
    ctx: &SweepContext,
) -> Result<Vec<LayerResult>> {
    let data: Vec<LayerData<'_>> = layers
        .iter()
        .map(|&l| layer_data(features, plan, l))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..layers.len())
        .flat_map(|li| (0..plan.instances.len()).map(move |fi| (li, fi)))
        .collect();

    let mut results = cells
        .par_iter()
        .map(|&(li, fi)| {
            let layer = layers[li];
            let d = &data[li];
            let model = train_instance(d, plan, features.dim, layer, fi, config)?;
            let test_fold = plan.instances[fi].test;
            let (x, truth) = gather(d, plan, features.dim, &[test_fold]);
            let predicted = model.predict(&x).map_err(|source| EvalError::Svm {
                layer,
                fold: fi,
                source,
            })?;
            let m = confusion_and_metrics(&truth, &predicted, &d.classes)?;
            log::debug!(
                "layer {layer} fold {fi}: acc {:.4} macro-F1 {:.4} (n={})",
                m.accuracy,
                m.macro_f1,
                truth.len()
            );
            Ok(LayerResult {
                model_tag: ctx.model_tag.clone(),
                language: ctx.language.clone(),
                mode: plan.mode.as_str().to_owned(),
                layer,
                fold: fi,
                test_fold,
                n_test: truth.len(),
                accuracy: m.accuracy,
                macro_f1: m.macro_f1,
                classes: d.classes.clone(),
                confusion: m.confusion,
                per_class_recall: m.per_class_recall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_results(&mut results);
    Ok(results)
}

pub fn sort_results(results: &mut [LayerResult]) {
    results.sort_by(|a, b| {
        (&a.model_tag, &a.language, &a.mode, a.layer, a.fold).cmp(&(
            &b.model_tag,
            &b.language,
            &b.mode,
            b.layer,
            b.fold,
        ))
    });
}

/// Fold-averaged per-class recall in percent, per (model, language, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub model_tag: String,
    pub language: String,
    pub mode: String,
    pub tones: Vec<String>,
    pub layers: Vec<u32>,
    /// `cells[tone][layer]`
    pub cells: Vec<Vec<f64>>,
}

pub fn heatmaps(results: &[LayerResult]) -> Vec<Heatmap> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<&LayerResult>> = BTreeMap::new();
    for r in results {
        groups.entry((&r.model_tag, &r.language, &r.mode)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((model, lang, mode), rs)| {
            let tones: Vec<String> = rs
                .iter()
                .flat_map(|r| r.classes.iter().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let layers: Vec<u32> = rs
                .iter()
                .map(|r| r.layer)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let cells = tones
                .iter()
                .map(|tone| {
                    layers
                        .iter()
                        .map(|&l| {
                            let recalls: Vec<f64> = rs
                                .iter()
                                .filter(|r| r.layer == l)
                                .filter_map(|r| r.classes.iter().position(|c| c == tone).map(|i| r.per_class_recall[i]))
                                .collect();
                            mean_std(&recalls).0 * 100.0
                        })
                        .collect()
                })
                .collect();
            Heatmap {
                model_tag: model.to_owned(),
                language: lang.to_owned(),
                mode: mode.to_owned(),
                tones,
                layers,
                cells,
            }
        })
        .collect()
}

pub const LONG_HEADER: [&str; 8] = [
    "model_tag",
    "language",
    "mode",
    "layer",
    "fold",
    "n_test",
    "accuracy",
    "macro_f1",
];
pub const AGGREGATE_HEADER: [&str; 9] = [
    "model_tag",
    "language",
    "mode",
    "layer",
    "mean_accuracy",
    "std_accuracy",
    "mean_f1",
    "std_f1",
    "n_folds",
];
pub const BEST_HEADER: [&str; 5] = ["model_tag", "language", "mode", "layer", "mean_f1"];
pub const HEATMAP_HEADER: [&str; 5] = ["model_tag", "language", "tone", "layer", "accuracy_pct"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_long_csv(path: &Path, results: &[LayerResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(LONG_HEADER)?;
    for r in results {
        w.write_record([
            r.model_tag.clone(),
            r.language.clone(),
            r.mode.clone(),
            r.layer.to_string(),
            r.fold.to_string(),
            r.n_test.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.macro_f1),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_aggregate_csv(path: &Path, aggregates: &[AggregateResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for a in aggregates {
        w.write_record([
            a.model_tag.clone(),
            a.language.clone(),
            a.mode.clone(),
            a.layer.to_string(),
            format!("{:.6}", a.mean_accuracy),
            format!("{:.6}", a.std_accuracy),
            format!("{:.6}", a.mean_f1),
            format!("{:.6}", a.std_f1),
            a.n_folds.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_heatmap_csv(path: &Path, maps: &[&Heatmap]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HEATMAP_HEADER)?;
    for m in maps {
        for (ti, tone) in m.tones.iter().enumerate() {
            for (li, layer) in m.layers.iter().enumerate() {
                w.write_record([
                    m.model_tag.clone(),
                    m.language.clone(),
                    tone.clone(),
                    layer.to_string(),
                    format!("{:.4}", m.cells[ti][li]),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn write_best_csv(path: &Path, best: &[BestLayer]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(BEST_HEADER)?;
    for b in best {
        w.write_record([
            b.model_tag.clone(),
            b.language.clone(),
            b.mode.clone(),
            b.layer.to_string(),
            format!("{:.6}", b.mean_f1),
        ])?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_results_json(path: &Path, results: &[LayerResult]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(results)?;
    s.push('\n');
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn read_results_json(path: &Path) -> Result<Vec<LayerResult>> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&s)?)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Write the long, aggregate and best-layer CSVs, the heatmap table, one layer-curve SVG
/// per model and one heatmap SVG per (model, language, mode). Returns the
/// written paths in creation order.
pub fn emit_reports(results: &[LayerResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut results = results.to_vec();
    sort_results(&mut results);
    let aggregates = aggregate(&results);
    let maps = heatmaps(&results);
    let modes: BTreeSet<&str> = results.iter().map(|r| r.mode.as_str()).collect();
    let mut written = Vec::new();

    let p = out_dir.join("results_long.csv");
    write_long_csv(&p, &results)?;
    written.push(p);
    let p = out_dir.join("aggregate.csv");
    write_aggregate_csv(&p, &aggregates)?;
    written.push(p);
    let p = out_dir.join("best_layers.csv");
    write_best_csv(&p, &best_layers(&aggregates))?;
    written.push(p);

    if modes.len() == 1 {
        let p = out_dir.join("heatmap.csv");
        write_heatmap_csv(&p, &maps.iter().collect::<Vec<_>>())?;
        written.push(p);
    } else {
        for mode in &modes {
            let p = out_dir.join(format!("heatmap_{}.csv", file_safe(mode)));
            write_heatmap_csv(&p, &maps.iter().filter(|m| m.mode == *mode).collect::<Vec<_>>())?;
            written.push(p);
        }
    }

    let models: BTreeSet<&str> = aggregates.iter().map(|a| a.model_tag.as_str()).collect();
    for model in models {
        let mut series = Vec::new();
        let mut groups: BTreeMap<(&str, &str), Vec<&AggregateResult>> = BTreeMap::new();
        for a in aggregates.iter().filter(|a| a.model_tag == model) {
            groups.entry((&a.language, &a.mode)).or_default().push(a);
        }
        for ((lang, mode), aggs) in groups {
            let owned: Vec<AggregateResult> = aggs.iter().map(|a| (*a).clone()).collect();
            let best = best_layer(&owned).ok().map(|b| b.0);
            let label = if modes.len() == 1 {
                lang.to_owned()
            } else {
                format!("{lang} ({mode})")
            };
            series.push(plots::CurveSeries {
                label,
                points: aggs.iter().map(|a| (a.layer, a.mean_f1, a.std_f1)).collect(),
                best_layer: best,
            });
        }
        let svg = plots::layer_curve_svg(&format!("Layer-wise macro F1: {model}"), &series);
        let p = out_dir.join(format!("layer_curve_{}.svg", file_safe(model)));
        std::fs::write(&p, svg).map_err(io_err(&p))?;
        written.push(p);
    }

    for m in &maps {
        let mut name = format!("heatmap_{}_{}", file_safe(&m.model_tag), file_safe(&m.language));
        if modes.len() > 1 {
            name.push('_');
            name.push_str(&file_safe(&m.mode));
        }
        let svg = plots::heatmap_svg(
            &format!("Tone accuracy (%) by layer: {} / {}", m.model_tag, m.language),
            &m.tones,
            &m.layers,
            &m.cells,
        );
        let p = out_dir.join(format!("{name}.svg"));
        std::fs::write(&p, svg).map_err(io_err(&p))?;
        written.push(p);
    }
    Ok(written)
}
