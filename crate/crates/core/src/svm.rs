//! Linear SVM probe: feature standardization, L2-regularized L1-loss (hinge)
//! binary SVMs trained by dual coordinate descent, and a one-vs-rest
//! multi-class wrapper.
//!
//! The bias is learned by augmenting every row with a constant 1, so it is
//! regularized together with the weights. The binary solver minimizes
//!
//! ```text
//! 0.5 * |w~|^2 + C * sum_i max(0, 1 - y_i * w~ . x~_i)
//! ```
//!
//! by maximizing its box-constrained dual one coordinate at a time while
//! keeping `w~ = sum_i alpha_i y_i x~_i` up to date.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("empty training set")]
    Empty,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("binary labels must be +1 or -1, found {0}")]
    InvalidLabel(f64),
    #[error("non-finite feature value in row {0}")]
    NonFinite(usize),
    #[error("C must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("class `{0}` is absent from the training rows")]
    ClassAbsent(String),
    #[error("label `{0}` is not one of the model classes")]
    UnknownLabel(String),
    #[error("at least two classes are required, got {0}")]
    TooFewClasses(usize),
}

pub type Result<T, E = SvmError> = std::result::Result<T, E>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SvmError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(SvmError::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Multiply every entry by `c`.
    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-feature centering and scaling to unit population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Constant columns keep scale 1 and are centered exactly to zero.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() == 0 {
            return Err(SvmError::Empty);
        }
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut scale = vec![1.0; x.cols()];
        for j in 0..x.cols() {
            let first = x.row(0)[j];
            if x.iter_rows().all(|r| r[j] == first) {
                mean[j] = first;
                continue;
            }
            let m = x.iter_rows().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter_rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                scale[j] = sd;
            }
        }
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim(),
                found: x.cols(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(out)
    }
}

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_EPOCHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: DEFAULT_C,
            tolerance: DEFAULT_TOLERANCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 42,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub tolerance: f64,
    pub epochs_run: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// Primal objective on (already transformed) training data.
    pub fn primal_objective(&self, x: &Matrix, y: &[f64]) -> f64 {
        let reg = 0.5 * (dot(&self.weights, &self.weights) + self.bias * self.bias);
        let loss: f64 = x
            .iter_rows()
            .zip(y)
            .map(|(r, &yi)| (1.0 - yi * self.decision(r)).max(0.0))
            .sum();
        reg + self.c * loss
    }
}

/// Trained binary model plus solver state useful for diagnostics.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub model: BinarySvm,
    pub alphas: Vec<f64>,
    /// Dual objective after each epoch.
    pub dual_trace: Vec<f64>,
    /// Largest projected-gradient magnitude seen in the last epoch.
    pub final_violation: f64,
}

fn check_finite(x: &Matrix) -> Result<()> {
    for (i, r) in x.iter_rows().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SvmError::NonFinite(i));
        }
    }
    Ok(())
}

/// Dual coordinate descent for one binary problem with labels in {-1, +1}.
///
/// Stops once the largest projected-gradient violation over a full pass is
/// below `tol`, or after `max_epochs` passes. Each pass visits coordinates in
/// a fresh permutation drawn from a ChaCha8 stream seeded with `seed`.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // negations also reject NaN
pub fn train_binary(x: &Matrix, y: &[f64], c: f64, tol: f64, max_epochs: usize, seed: u64) -> Result<BinaryFit> {
    let n = x.rows();
    if n == 0 {
        return Err(SvmError::Empty);
    }
    if y.len() != n {
        return Err(SvmError::LengthMismatch {
            rows: n,
            labels: y.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::InvalidC(c));
    }
    if !(tol > 0.0) {
        return Err(SvmError::InvalidTolerance(tol));
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(SvmError::SingleClass);
    }
    check_finite(x)?;

    let d = x.cols();
    // w[..d] weights, w[d] bias
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = x.iter_rows().map(|r| dot(r, r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut epochs = 0;
    let mut converged = false;
    let mut violation = f64::INFINITY;

    while epochs < max_epochs {
        order.shuffle(&mut rng);
        violation = 0.0f64;
        for &i in &order {
            let xi = x.row(i);
            let yi = y[i];
            let g = yi * (dot(&w[..d], xi) + w[d]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            violation = violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                let new = (old - g / qd[i]).clamp(0.0, c);
                alpha[i] = new;
                let step = (new - old) * yi;
                if step != 0.0 {
                    for (wj, xj) in w[..d].iter_mut().zip(xi) {
                        *wj += step * xj;
                    }
                    w[d] += step;
                }
            }
        }
        epochs += 1;
        trace.push(alpha.iter().sum::<f64>() - 0.5 * dot(&w, &w));
        if violation < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("dual coordinate descent stopped after {epochs} epochs (violation {violation:.3e})");
    }
    let bias = w.pop().unwrap_or(0.0);
    Ok(BinaryFit {
        model: BinarySvm {
            weights: w,
            bias,
            c,
            tolerance: tol,
            epochs_run: epochs,
            converged,
        },
        alphas: alpha,
        dual_trace: trace,
        final_violation: violation,
    })
}

/// One-vs-rest multi-class linear SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    /// Lexicographically ordered class labels.
    pub classes: Vec<String>,
    pub models: Vec<BinarySvm>,
    pub standardizer: Standardizer,
}

/// Train one binary SVM per class. `classes` lists every class the model must
/// know; each must occur in `labels`.
pub fn train_ovr<S: AsRef<str>>(x: &Matrix, labels: &[S], classes: &[S], config: &SvmConfig) -> Result<OvrModel> {
    if x.rows() == 0 {
        return Err(SvmError::Empty);
    }
    if labels.len() != x.rows() {
        return Err(SvmError::LengthMismatch {
            rows: x.rows(),
            labels: labels.len(),
        });
    }
    let mut classes: Vec<String> = classes.iter().map(|c| c.as_ref().to_owned()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::TooFewClasses(classes.len()));
    }
    let idx: Vec<usize> = labels
        .iter()
        .map(|l| {
            classes
                .binary_search_by(|c| c.as_str().cmp(l.as_ref()))
                .map_err(|_| SvmError::UnknownLabel(l.as_ref().to_owned()))
        })
        .collect::<Result<_>>()?;
    for (ci, c) in classes.iter().enumerate() {
        if !idx.contains(&ci) {
            return Err(SvmError::ClassAbsent(c.clone()));
        }
    }
    check_finite(x)?;

    let standardizer = if config.standardize {
        Standardizer::fit(x)?
    } else {
        Standardizer::identity(x.cols())
    };
    let xs = standardizer.apply(x)?;
    let models = (0..classes.len())
        .into_par_iter()
        .map(|ci| {
            let y: Vec<f64> = idx.iter().map(|&k| if k == ci { 1.0 } else { -1.0 }).collect();
            train_binary(&xs, &y, config.c, config.tolerance, config.max_epochs, config.seed).map(|f| f.model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvrModel {
        classes,
        models,
        standardizer,
    })
}

impl OvrModel {
    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// `n x classes` matrix of `w_c . x' + b_c` on standardized rows.
    pub fn decision_values(&self, x: &Matrix) -> Result<Matrix> {
        let xs = self.standardizer.apply(x)?;
        let k = self.classes.len();
        let mut out = Matrix::zeros(x.rows(), k);
        for i in 0..x.rows() {
            let r = xs.row(i);
            for (c, m) in self.models.iter().enumerate() {
                out.row_mut(i)[c] = m.decision(r);
            }
        }
        Ok(out)
    }

    /// Index of the highest-scoring class per row; ties go to the earlier class.
    pub fn predict_indices(&self, x: &Matrix) -> Result<Vec<usize>> {
        let dv = self.decision_values(x)?;
        Ok(dv
            .iter_rows()
            .take(x.rows())
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<&str>> {
        Ok(self
            .predict_indices(x)?
            .into_iter()
            .map(|i| self.classes[i].as_str())
            .collect())
    }

    /// Debug dump: classes, means, scales and per-class weights and bias.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct PerClass<'a> {
            class: &'a str,
            weights: &'a [f64],
            bias: f64,
        }
        #[derive(Serialize)]
        struct View<'a> {
            classes: &'a [String],
            means: &'a [f64],
            scales: &'a [f64],
            models: Vec<PerClass<'a>>,
        }
        let v = View {
            classes: &self.classes,
            means: &self.standardizer.mean,
            scales: &self.standardizer.scale,
            models: self
                .classes
                .iter()
                .zip(&self.models)
                .map(|(c, m)| PerClass {
                    class: c,
                    weights: &m.weights,
                    bias: m.bias,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&v).expect("model serializes")
    }
}
