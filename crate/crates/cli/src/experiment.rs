//! Cross-validated selection sweeps: reference training, certificate, coreset
//! selection per method, retraining and worst-case evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use drcs_core::{
    bandwidth_heuristic, baseline_select, cv_split, gram, gram_diag, greedy_exact, greedy_fixed_w, greedy_oneshot,
    load_libsvm, load_precomputed_csv, min_weighted_indicator, objectives_at, quadratic_form, radius, shift_radius, train, train_full, Baseline,
    BoundReport64, Criterion, Dataset64, GreedyProblem, KernelSpec, LossKind, Model64, QuadraticGapForm64, SelectionTrace64,
    SplitPlan, TrainOptions, ValidationScores,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelChoice {
    /// Bandwidth from the training-portion heuristic unless given.
    Rbf { bandwidth: Option<f64> },
    Linear,
    Precomputed { path: PathBuf },
}

impl FromStr for KernelChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "rbf" {
            return Ok(KernelChoice::Rbf { bandwidth: None });
        }
        if s == "linear" {
            return Ok(KernelChoice::Linear);
        }
        if let Some(bw) = s.strip_prefix("rbf:") {
            let bandwidth = bw.parse::<f64>().map_err(|_| CliError::Config(format!("bad rbf bandwidth `{bw}`")))?;
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(CliError::Config(format!("rbf bandwidth must be positive, got {bandwidth}")));
            }
            return Ok(KernelChoice::Rbf { bandwidth: Some(bandwidth) });
        }
        if let Some(path) = s.strip_prefix("precomputed:") {
            return Ok(KernelChoice::Precomputed { path: PathBuf::from(path) });
        }
        Err(CliError::Config(format!("unknown kernel `{s}` (expected rbf, rbf:<bandwidth>, linear or precomputed:<path>)")))
    }
}

/// How the regularization strength of the sum-form objective is chosen.
/// `Scaled(f)` means `lambda = f * n` for n training instances, which is the
/// per-instance strength `f` of the normalized objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "kebab-case")]
pub enum LambdaRule {
    Scaled(f64),
    CvBest,
    Explicit(f64),
}

impl FromStr for LambdaRule {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Config(format!("bad lambda rule `{s}` (expected n, n*<factor>, cv-best or a number)"));
        let positive = |v: f64| if v > 0.0 && v.is_finite() { Ok(v) } else { Err(bad()) };
        match s {
            "cv-best" => Ok(LambdaRule::CvBest),
            "n" => Ok(LambdaRule::Scaled(1.0)),
            _ => {
                if let Some(factor) = s.strip_prefix("n*") {
                    parse_factor(factor).ok_or_else(bad).and_then(positive).map(LambdaRule::Scaled)
                } else {
                    s.parse::<f64>().map_err(|_| bad()).and_then(positive).map(LambdaRule::Explicit)
                }
            }
        }
    }
}

/// Accepts plain numbers and `1e-<x>` with a fractional exponent such as `1e-1.5`.
fn parse_factor(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let exp = s.strip_prefix("1e")?.parse::<f64>().ok()?;
    Some(10f64.powf(exp))
}

impl LambdaRule {
    /// Sum-form lambda for `n` training instances; `cv_factor` resolves `CvBest`.
    pub fn resolve(self, n: usize, cv_factor: Option<f64>) -> Result<f64> {
        match self {
            LambdaRule::Scaled(f) => Ok(f * n as f64),
            LambdaRule::Explicit(v) => Ok(v),
            LambdaRule::CvBest => cv_factor
                .map(|f| f * n as f64)
                .ok_or_else(|| CliError::Config("cv-best lambda has not been cross-validated".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Exact,
    FixedW,
    OneShot,
}

impl FromStr for Algorithm {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "exact" => Ok(Algorithm::Exact),
            "2" | "fixed-w" => Ok(Algorithm::FixedW),
            "3" | "oneshot" => Ok(Algorithm::OneShot),
            _ => Err(CliError::Config(format!("unknown algorithm `{s}` (expected 1, 2 or 3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Drcs,
    Random,
    Herding,
    KCenter,
    Margin,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Drcs => "drcs",
            Method::Random => "random",
            Method::Herding => "herding",
            Method::KCenter => "kcenter",
            Method::Margin => "margin",
        }
    }

    fn baseline(self) -> Option<Baseline> {
        match self {
            Method::Drcs => None,
            Method::Random => Some(Baseline::Random),
            Method::Herding => Some(Baseline::Herding),
            Method::KCenter => Some(Baseline::KCenter),
            Method::Margin => Some(Baseline::Margin),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drcs" => Ok(Method::Drcs),
            "random" => Ok(Method::Random),
            "herding" => Ok(Method::Herding),
            "kcenter" => Ok(Method::KCenter),
            "margin" => Ok(Method::Margin),
            other => Err(CliError::Core(drcs_core::DrcsError::UnknownMethod(other.into()))),
        }
    }
}

/// Default cross-validation grid of per-instance strengths: `10^-4, 10^-3.5, ..., 1`.
pub fn default_cv_grid() -> Vec<f64> {
    (0..=8).map(|k| 10f64.powf(-4.0 + 0.5 * f64::from(k))).collect()
}

pub fn default_removal_grid() -> Vec<f64> {
    (0..10).map(|k| f64::from(k) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub kernel: KernelChoice,
    pub loss: LossKind,
    pub lambda_rule: LambdaRule,
    /// Shift factor; the training ball radius is `sqrt(n+) |a - 1|`.
    pub a: f64,
    /// Shift factor for the validation ball; defaults to `a`.
    pub q_factor: Option<f64>,
    pub folds: usize,
    pub methods: Vec<Method>,
    /// Fractions of the training portion to remove.
    pub grid: Vec<f64>,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Training portions larger than this fall back from the exact greedy to the fixed-weight one.
    pub exact_cap: usize,
    pub preserve_classes: bool,
    pub criterion: Criterion,
    pub min_max_scale: bool,
    pub tol: f64,
    /// Per-instance strengths tried by `cv-best`.
    pub cv_grid: Vec<f64>,
    /// Record wall-clock times; off by default so reports are reproducible byte for byte.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            kernel: KernelChoice::Rbf { bandwidth: None },
            loss: LossKind::Logistic,
            lambda_rule: LambdaRule::CvBest,
            a: 1.05,
            q_factor: None,
            folds: 5,
            methods: vec![Method::Drcs, Method::Random, Method::Herding, Method::KCenter, Method::Margin],
            grid: default_removal_grid(),
            seed: 0,
            algorithm: Algorithm::Exact,
            exact_cap: 400,
            preserve_classes: false,
            criterion: Criterion::Gap,
            min_max_scale: false,
            tol: 1e-8,
            cv_grid: default_cv_grid(),
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(CliError::Config(format!("shift factor a must be nonnegative, got {}", self.a)));
        }
        if let Some(q) = self.q_factor {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(CliError::Config(format!("q factor must be nonnegative, got {q}")));
            }
        }
        if self.folds < 2 {
            return Err(CliError::Config("need at least 2 folds".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("no methods given".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|&f| !(0.0..1.0).contains(&f)) {
            return Err(CliError::Config("removal fractions must lie in [0, 1)".into()));
        }
        if self.cv_grid.is_empty() || self.cv_grid.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(CliError::Config("cv grid must hold positive values".into()));
        }
        if !(self.tol > 0.0) {
            return Err(CliError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions<f64> {
        TrainOptions { tol: self.tol, seed: self.seed, ..TrainOptions::default() }
    }
}

pub fn load_dataset(path: &Path, min_max_scale: bool) -> Result<Dataset64> {
    let ds: Dataset64 = load_libsvm(path)?;
    Ok(if min_max_scale { ds.min_max_scaled() } else { ds })
}

/// Loads the precomputed Gram named by the kernel choice, if any.
pub fn load_kernel_matrix(kernel: &KernelChoice, n: usize) -> Result<Option<DMatrix<f64>>> {
    match kernel {
        KernelChoice::Precomputed { path } => {
            let k: DMatrix<f64> = load_precomputed_csv(path)?;
            if k.nrows() != n {
                return Err(CliError::Config(format!("precomputed kernel is {}x{}, dataset has {n} instances", k.nrows(), k.ncols())));
            }
            Ok(Some(k))
        }
        _ => Ok(None),
    }
}

/// A training portion, a validation portion and the Gram blocks between them.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset64,
    pub val: Dataset64,
    pub k_train: Arc<DMatrix<f64>>,
    /// `n_train x n_val`
    pub k_cross: DMatrix<f64>,
    pub k_val_diag: DVector<f64>,
    pub bandwidth: Option<f64>,
}

fn submatrix(k: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| k[(rows[i], cols[j])])
}

impl SplitData {
    /// Gram blocks for separate training and validation sets.
    pub fn from_sets(train: Dataset64, val: Dataset64, kernel: &KernelChoice) -> Result<Self> {
        let (spec, bandwidth) = match kernel {
            KernelChoice::Rbf { bandwidth } => {
                let bw = match bandwidth {
                    Some(bw) => *bw,
                    None => bandwidth_heuristic(&train.features)?,
                };
                (KernelSpec::rbf(bw)?, Some(bw))
            }
            KernelChoice::Linear => (KernelSpec::Linear, None),
            KernelChoice::Precomputed { .. } => {
                return Err(CliError::Config("a precomputed kernel needs index-based splits of one dataset".into()))
            }
        };
        let k_train = gram(&train.features, &train.features, &spec)?;
        let k_cross = gram(&train.features, &val.features, &spec)?;
        let k_val_diag = gram_diag(&val.features, &spec)?;
        Ok(Self { train, val, k_train: Arc::new(k_train), k_cross, k_val_diag, bandwidth })
    }

    /// Splits one dataset by index; `pre` is its full precomputed Gram, if any.
    pub fn from_indices(ds: &Dataset64, kernel: &KernelChoice, pre: Option<&DMatrix<f64>>, train_idx: &[usize], val_idx: &[usize]) -> Result<Self> {
        let train = ds.subset(train_idx);
        let val = ds.subset(val_idx);
        match (kernel, pre) {
            (KernelChoice::Precomputed { .. }, Some(k)) => Ok(Self {
                train,
                val,
                k_train: Arc::new(submatrix(k, train_idx, train_idx)),
                k_cross: submatrix(k, train_idx, val_idx),
                k_val_diag: DVector::from_iterator(val_idx.len(), val_idx.iter().map(|&i| k[(i, i)])),
                bandwidth: None,
            }),
            (KernelChoice::Precomputed { .. }, None) => Err(CliError::Config("precomputed kernel was not loaded".into())),
            _ => Self::from_sets(train, val, kernel),
        }
    }
}

/// Worst-case weighted accuracy over the validation ball of radius `q`:
/// `min_{w'} c^T w' / n'` with `c` the correctness indicator.
pub fn evaluate_worst_case_accuracy(model: &Model64, k_cross: &DMatrix<f64>, y_val: &[i8], q: f64) -> Result<f64> {
    let scores = model.decision_scores(k_cross)?;
    if scores.len() != y_val.len() {
        return Err(CliError::Config(format!("{} scores for {} validation labels", scores.len(), y_val.len())));
    }
    let correct = DVector::from_iterator(y_val.len(), y_val.iter().zip(scores.iter()).map(|(&y, &s)| if f64::from(y) * s > 0.0 { 1.0 } else { 0.0 }));
    let (value, _) = min_weighted_indicator(&correct, q)?;
    Ok((value / y_val.len() as f64).clamp(0.0, 1.0))
}

fn plain_accuracy(model: &Model64, k_cross: &DMatrix<f64>, y_val: &[i8]) -> Result<f64> {
    evaluate_worst_case_accuracy(model, k_cross, y_val, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCvResult {
    /// Chosen per-instance strength (sum-form lambda divided by n).
    pub best: f64,
    /// `(per-instance strength, mean validation accuracy)` for every grid entry.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid strength with the best mean plain validation accuracy of the
/// full-portion model across folds; ties go to the smaller strength.
pub fn lambda_cv(
    ds: &Dataset64,
    kernel: &KernelChoice,
    pre: Option<&DMatrix<f64>>,
    loss: LossKind,
    grid: &[f64],
    plan: &SplitPlan,
    opts: &TrainOptions<f64>,
) -> Result<LambdaCvResult> {
    if grid.is_empty() {
        return Err(CliError::Config("lambda grid is empty".into()));
    }
    let splits = (0..plan.folds)
        .map(|f| SplitData::from_indices(ds, kernel, pre, &plan.train_indices(f), &plan.validation_indices(f)))
        .collect::<Result<Vec<_>>>()?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(sorted.len());
    for &factor in &sorted {
        let mut total = 0.0;
        for split in &splits {
            let model = train_full(Arc::clone(&split.k_train), &split.train.labels, factor, loss, opts)?;
            total += plain_accuracy(&model, &split.k_cross, &split.val.labels)?;
        }
        scores.push((factor, total / splits.len() as f64));
    }
    let best_acc = scores.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);
    let best = scores.iter().find(|&&(_, a)| a >= best_acc - 1e-12).expect("nonempty grid").0;
    Ok(LambdaCvResult { best, scores })
}

/// Everything about one training/validation split that selection and
/// certification share.
#[derive(Debug, Clone)]
pub struct FoldContext {
    pub split: SplitData,
    /// Sum-form regularization strength.
    pub lambda: f64,
    pub reference: Model64,
    pub form: QuadraticGapForm64,
    pub s: f64,
    pub q: f64,
    pub validation: ValidationScores<f64>,
    pub opts: TrainOptions<f64>,
}

impl FoldContext {
    pub fn new(split: SplitData, loss: LossKind, lambda: f64, a: f64, q_factor: f64, opts: TrainOptions<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(CliError::Config(format!("lambda must be positive, got {lambda}")));
        }
        let n = split.train.n();
        let reference = train_full(Arc::clone(&split.k_train), &split.train.labels, lambda / n as f64, loss, &opts)?;
        let form = quadratic_form(&reference, &split.k_train, &split.train.label_vector(), lambda)?;
        let s = shift_radius(split.train.n_plus(), a);
        let q = shift_radius(split.val.n_plus(), q_factor);
        let validation = ValidationScores::new(&reference, &split.k_cross, split.k_val_diag.clone(), &split.val.labels, q)?;
        Ok(Self { split, lambda, reference, form, s, q, validation, opts })
    }

    pub fn n_train(&self) -> usize {
        self.split.train.n()
    }

    /// Removal count for a fraction of the training portion, leaving at least one instance.
    pub fn n_del(&self, fraction: f64) -> usize {
        let n = self.n_train();
        ((fraction * n as f64).round() as usize).min(n - 1)
    }

    /// Algorithm actually used: the exact greedy falls back to fixed weights above `exact_cap`.
    pub fn effective_algorithm(&self, algorithm: Algorithm, exact_cap: usize) -> Algorithm {
        if algorithm == Algorithm::Exact && self.n_train() > exact_cap {
            Algorithm::FixedW
        } else {
            algorithm
        }
    }

    pub fn select(&self, method: Method, algorithm: Algorithm, n_del: usize, seed: u64, preserve_classes: bool, criterion: Criterion) -> Result<SelectionTrace64> {
        let labels = &self.split.train.labels;
        match method.baseline() {
            Some(b) => {
                let scores = self.reference.training_scores();
                Ok(baseline_select(b, &self.split.k_train, &scores, labels, n_del, seed, preserve_classes)?)
            }
            None => {
                let p = GreedyProblem { form: &self.form, s: self.s, validation: Some(&self.validation), labels, preserve_classes, criterion };
                let mut trace = match algorithm {
                    Algorithm::Exact => greedy_exact(&p, n_del)?,
                    Algorithm::FixedW => greedy_fixed_w(&p, n_del)?,
                    Algorithm::OneShot => greedy_oneshot(&p, n_del)?,
                };
                trace.seed = seed;
                Ok(trace)
            }
        }
    }

    /// Retrains with unit weights on the retained instances.
    pub fn retrain(&self, mask: &[bool]) -> Result<Model64> {
        let m = mask.iter().filter(|&&k| k).count();
        let n = self.n_train();
        Ok(train(
            Arc::clone(&self.split.k_train),
            &self.split.train.labels,
            mask,
            &DVector::from_element(n, 1.0),
            self.lambda / m as f64,
            self.reference.loss,
            &self.opts,
        )?)
    }

    pub fn worst_case_accuracy(&self, model: &Model64) -> Result<f64> {
        evaluate_worst_case_accuracy(model, &self.split.k_cross, &self.split.val.labels, self.q)
    }

    pub fn certificate(&self, mask: &[bool]) -> Result<BoundReport64> {
        Ok(self.validation.report(&self.form, mask, self.s)?)
    }

    /// Normalized gap of the reference pair at `(mask, w)`, evaluated directly
    /// with the strength `lambda / E` of the reweighted problem, and the radius it implies.
    pub fn direct_gap(&self, mask: &[bool], w: &DVector<f64>) -> Result<(f64, f64)> {
        let u = DVector::from_iterator(mask.len(), mask.iter().zip(w.iter()).map(|(&k, &x)| if k { x } else { 0.0 }));
        let lambda_e = self.lambda / u.sum();
        let r = &self.reference;
        let obj = objectives_at(&r.gram, &r.labels, r.loss, lambda_e, &r.coefficients(), &r.alpha, &u)?;
        Ok((obj.gap, radius(obj.gap, lambda_e)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub fold: usize,
    pub method: String,
    pub m: usize,
    pub fraction_removed: f64,
    pub wc_accuracy: Option<f64>,
    pub certified_lb: Option<f64>,
    pub dg_max: Option<f64>,
    pub wall_ms: u64,
    pub status: String,
    /// Certified radius from the quadratic gap.
    pub radius: Option<f64>,
    /// Normalized direct gap at the maximizing weights and its radius.
    pub direct_gap: Option<f64>,
    pub radius_direct: Option<f64>,
    pub surely_correct: Option<usize>,
    pub surely_incorrect: Option<usize>,
    pub unknown: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    fold: usize,
    method: &'a str,
    m: usize,
    fraction_removed: f64,
    wc_accuracy: Option<f64>,
    certified_lb: Option<f64>,
    dg_max: Option<f64>,
    wall_ms: u64,
    status: &'a str,
}

impl ReportRow {
    fn new(fold: usize, method: Method, m: usize, fraction: f64) -> Self {
        Self {
            fold,
            method: method.name().into(),
            m,
            fraction_removed: fraction,
            wc_accuracy: None,
            certified_lb: None,
            dg_max: None,
            wall_ms: 0,
            status: "ok".into(),
            radius: None,
            direct_gap: None,
            radius_direct: None,
            surely_correct: None,
            surely_incorrect: None,
            unknown: None,
        }
    }

    fn failed(fold: usize, method: Method, m: usize, fraction: f64, err: &CliError) -> Self {
        Self { status: format!("error: {err}"), ..Self::new(fold, method, m, fraction) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldInfo {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    pub s: f64,
    pub q: f64,
    pub reference_gap: f64,
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub fraction_removed: f64,
    pub folds: usize,
    pub wc_accuracy_mean: f64,
    pub wc_accuracy_std: f64,
    pub certified_lb_mean: Option<f64>,
    pub certified_lb_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub lambda_cv: Option<LambdaCvResult>,
    pub folds: Vec<FoldInfo>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

impl RunReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method.name())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                fold: r.fold,
                method: &r.method,
                m: r.m,
                fraction_removed: r.fraction_removed,
                wc_accuracy: r.wc_accuracy,
                certified_lb: r.certified_lb,
                dg_max: r.dg_max,
                wall_ms: r.wall_ms,
                status: &r.status,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Report(e.to_string()))
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| CliError::io(&csv_path, e))?;
        let json_path = dir.join("report.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?).map_err(|e| CliError::io(&json_path, e))?;
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(cfg: &ExperimentConfig, rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for method in &cfg.methods {
        for &fraction in &cfg.grid {
            let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.method == method.name() && r.fraction_removed == fraction && r.is_ok()).collect();
            if ok.is_empty() {
                continue;
            }
            let acc: Vec<f64> = ok.iter().filter_map(|r| r.wc_accuracy).collect();
            let lb: Vec<f64> = ok.iter().filter_map(|r| r.certified_lb).collect();
            let (wc_accuracy_mean, wc_accuracy_std) = mean_std(&acc);
            let (certified_lb_mean, certified_lb_std) = if lb.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&lb);
                (Some(m), Some(s))
            };
            out.push(SummaryRow {
                method: method.name().into(),
                fraction_removed: fraction,
                folds: ok.len(),
                wc_accuracy_mean,
                wc_accuracy_std,
                certified_lb_mean,
                certified_lb_std,
            });
        }
    }
    out
}

fn elapsed_ms(start: Instant, timing: bool) -> u64 {
    if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// One method's rows on one fold; the trace is computed once for the largest
/// removal count and its prefixes give every smaller one.
fn method_rows(cfg: &ExperimentConfig, ctx: &FoldContext, fold: usize, method: Method, algorithm: Algorithm) -> Vec<ReportRow> {
    let counts: Vec<(f64, usize)> = cfg.grid.iter().map(|&f| (f, ctx.n_del(f))).collect();
    let max_del = counts.iter().map(|&(_, d)| d).max().unwrap_or(0);
    let n = ctx.n_train();
    let start = Instant::now();
    let trace = match ctx.select(method, algorithm, max_del, cfg.seed, cfg.preserve_classes, cfg.criterion) {
        Ok(t) => t,
        Err(e) => return counts.iter().map(|&(f, d)| ReportRow::failed(fold, method, n - d, f, &e)).collect(),
    };
    let select_ms = elapsed_ms(start, cfg.timing);
    counts
        .iter()
        .map(|&(fraction, n_del)| {
            let start = Instant::now();
            let row = (|| -> Result<ReportRow> {
                let coreset = trace.coreset(n, n_del)?;
                let model = ctx.retrain(&coreset.mask)?;
                let wc = ctx.worst_case_accuracy(&model)?;
                let mut row = ReportRow::new(fold, method, coreset.m, fraction);
                row.wc_accuracy = Some(wc);
                if method == Method::Drcs {
                    let cert = ctx.certificate(&coreset.mask)?;
                    let (direct, r_direct) = ctx.direct_gap(&coreset.mask, &cert.w_star)?;
                    row.certified_lb = Some(1.0 - cert.ub);
                    row.dg_max = Some(cert.dg_max);
                    row.radius = Some(cert.radius);
                    row.direct_gap = Some(direct);
                    row.radius_direct = Some(r_direct);
                    row.surely_correct = Some(cert.counts.surely_correct);
                    row.surely_incorrect = Some(cert.counts.surely_incorrect);
                    row.unknown = Some(cert.counts.unknown);
                }
                Ok(row)
            })()
            .unwrap_or_else(|e| ReportRow::failed(fold, method, n - n_del, fraction, &e));
            ReportRow { wall_ms: if cfg.timing { select_ms + elapsed_ms(start, true) } else { 0 }, ..row }
        })
        .collect()
}

/// Runs the full cross-validated sweep. Per-row numerical failures are kept
/// in the report with their status; configuration problems are errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset, cfg.min_max_scale)?;
    let pre = load_kernel_matrix(&cfg.kernel, ds.n())?;
    let plan = cv_split(&ds, cfg.folds, cfg.seed)?;
    let opts = cfg.train_options();
    let cv = match cfg.lambda_rule {
        LambdaRule::CvBest => Some(lambda_cv(&ds, &cfg.kernel, pre.as_ref(), cfg.loss, &cfg.cv_grid, &plan, &opts)?),
        _ => None,
    };
    let q_factor = cfg.q_factor.unwrap_or(cfg.a);

    let mut folds = Vec::with_capacity(cfg.folds);
    let mut rows = Vec::new();
    for fold in 0..cfg.folds {
        let split = SplitData::from_indices(&ds, &cfg.kernel, pre.as_ref(), &plan.train_indices(fold), &plan.validation_indices(fold))?;
        let n_train = split.train.n();
        let lambda = cfg.lambda_rule.resolve(n_train, cv.as_ref().map(|c| c.best))?;
        let bandwidth = split.bandwidth;
        let n_val = split.val.n();
        let ctx = match FoldContext::new(split, cfg.loss, lambda, cfg.a, q_factor, opts) {
            Ok(ctx) => ctx,
            Err(e) => {
                for &method in &cfg.methods {
                    for &f in &cfg.grid {
                        let n_del = ((f * n_train as f64).round() as usize).min(n_train - 1);
                        rows.push(ReportRow::failed(fold, method, n_train - n_del, f, &e));
                    }
                }
                continue;
            }
        };
        let algorithm = ctx.effective_algorithm(cfg.algorithm, cfg.exact_cap);
        folds.push(FoldInfo {
            fold,
            n_train,
            n_val,
            lambda,
            bandwidth,
            s: ctx.s,
            q: ctx.q,
            reference_gap: ctx.reference.certified_gap,
            algorithm,
        });
        for &method in &cfg.methods {
            rows.extend(method_rows(cfg, &ctx, fold, method, algorithm));
        }
    }
    let summary = summarize(cfg, &rows);
    Ok(RunReport { config: cfg.clone(), lambda_cv: cv, folds, rows, summary })
}
