//! Argument definitions and handlers for the `drcs` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use drcs_core::{cv_split, Criterion, CoresetVector, Dataset64, LossKind};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::experiment::{
    default_cv_grid, default_removal_grid, lambda_cv, load_dataset, load_kernel_matrix, run_experiment, Algorithm, ExperimentConfig,
    FoldContext, KernelChoice, LambdaRule, Method, SplitData,
};

#[derive(Debug, Parser)]
#[command(name = "drcs", version, about = "Coreset selection with certified worst-case accuracy under covariate shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Training data in LIBSVM format.
    #[arg(long)]
    pub dataset: PathBuf,
    /// rbf, rbf:<bandwidth>, linear or precomputed:<csv>.
    #[arg(long, default_value = "rbf")]
    pub kernel: String,
    /// logistic or hinge.
    #[arg(long, default_value = "logistic")]
    pub loss: String,
    /// n, n*<factor> (e.g. n*1e-3, n*1e-1.5), cv-best, or an explicit value.
    #[arg(long, default_value = "cv-best")]
    pub lambda_rule: String,
    /// Shift factor; the training weight ball has radius sqrt(n+)|a-1|.
    #[arg(long, default_value_t = 1.05)]
    pub a: f64,
    /// Shift factor for the validation weight ball (defaults to --a).
    #[arg(long)]
    pub q_factor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Folds for splitting and for cv-best.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Rescale every feature to [-1, 1].
    #[arg(long)]
    pub min_max_scale: bool,
    /// Duality-gap tolerance of the solver.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// 1 (exact greedy), 2 (fixed worst-case weights) or 3 (one shot).
    #[arg(long, default_value = "1")]
    pub algorithm: String,
    /// Above this many training instances algorithm 1 falls back to 2.
    #[arg(long, default_value_t = 400)]
    pub exact_cap: usize,
    /// Never remove the last instance of a class.
    #[arg(long)]
    pub preserve_classes: bool,
    /// Rank greedy candidates by the full error bound instead of the gap.
    #[arg(long)]
    pub rank_by_bound: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a coreset and write its trace.
    Select {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long, default_value = "drcs")]
        method: String,
        /// Fraction of instances to keep.
        #[arg(long)]
        keep_fraction: f64,
        /// Validation data for the recorded bounds (the training data is used otherwise).
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Directory for trace.json and selected.txt; prints the trace when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain on a coreset and report worst-case weighted validation accuracy.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        validation: PathBuf,
        /// Selected training indices, one per line (all instances when absent).
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Compute the certified error bound for a coreset.
    Certify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Cross-validated sweep over methods and removal fractions.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long, value_delimiter = ',', default_value = "drcs,random,herding,kcenter,margin")]
        method: Vec<String>,
        /// Removal fractions of the training portion.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value = "drcs-report")]
        out: PathBuf,
        /// Record wall-clock times (reports are then no longer reproducible byte for byte).
        #[arg(long)]
        timing: bool,
    },
    /// Choose the regularization strength by cross-validation.
    LambdaCv {
        #[command(flatten)]
        model: ModelArgs,
        /// Per-instance strengths to try (default 1e-4 .. 1 in half decades).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

struct Parsed {
    kernel: KernelChoice,
    loss: LossKind,
    lambda_rule: LambdaRule,
}

fn parse_model(m: &ModelArgs) -> Result<Parsed> {
    let loss = m.loss.parse::<LossKind>()?;
    if !(m.a >= 0.0 && m.a.is_finite()) {
        return Err(CliError::Config(format!("--a must be nonnegative, got {}", m.a)));
    }
    Ok(Parsed { kernel: m.kernel.parse()?, loss, lambda_rule: m.lambda_rule.parse()? })
}

fn warn_if_large(label: &str, radius: f64) {
    if radius > 1.0 {
        eprintln!("warning: {label} weight-ball radius {radius:.4} exceeds 1; weights may become negative and the bound assumes otherwise");
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    write_stdout(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_selection(path: &Path, n: usize) -> Result<CoresetVector> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut mask = vec![false; n];
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let i: usize = t.parse().map_err(|_| CliError::Config(format!("{}:{}: bad index `{t}`", path.display(), lineno + 1)))?;
        if i >= n || mask[i] {
            return Err(CliError::Config(format!("{}:{}: index {i} out of range or repeated", path.display(), lineno + 1)));
        }
        mask[i] = true;
    }
    let m = mask.iter().filter(|&&k| k).count();
    if m == 0 {
        return Err(CliError::Config(format!("{} selects no instances", path.display())));
    }
    Ok(CoresetVector { mask, m })
}

/// Builds the shared context for a training file and an optional validation file.
fn context(model: &ModelArgs, p: &Parsed, validation: Option<&Path>) -> Result<(FoldContext, Option<f64>)> {
    let train = load_dataset(&model.dataset, model.min_max_scale)?;
    let val: Dataset64 = match validation {
        Some(path) => load_dataset(path, model.min_max_scale)?,
        None => train.clone(),
    };
    let opts = drcs_core::TrainOptions { tol: model.tol, seed: model.seed, ..Default::default() };
    let cv = match p.lambda_rule {
        LambdaRule::CvBest => {
            let pre = load_kernel_matrix(&p.kernel, train.n())?;
            let plan = cv_split(&train, model.folds, model.seed)?;
            Some(lambda_cv(&train, &p.kernel, pre.as_ref(), p.loss, &default_cv_grid(), &plan, &opts)?.best)
        }
        _ => None,
    };
    let split = match &p.kernel {
        KernelChoice::Precomputed { .. } if validation.is_none() => {
            let pre = load_kernel_matrix(&p.kernel, train.n())?;
            let all: Vec<usize> = (0..train.n()).collect();
            SplitData::from_indices(&train, &p.kernel, pre.as_ref(), &all, &all)?
        }
        _ => SplitData::from_sets(train, val, &p.kernel)?,
    };
    let lambda = p.lambda_rule.resolve(split.train.n(), cv)?;
    let ctx = FoldContext::new(split, p.loss, lambda, model.a, model.q_factor.unwrap_or(model.a), opts)?;
    warn_if_large("training", ctx.s);
    Ok((ctx, cv))
}

fn criterion(s: &SelectionArgs) -> Criterion {
    if s.rank_by_bound {
        Criterion::Bound
    } else {
        Criterion::Gap
    }
}

#[derive(Serialize)]
struct EvaluateOutput {
    n_train: usize,
    m: usize,
    lambda: f64,
    q: f64,
    accuracy: f64,
    wc_accuracy: f64,
}

#[derive(Serialize)]
struct CertifyOutput<'a> {
    n_train: usize,
    m: usize,
    lambda: f64,
    s: f64,
    q: f64,
    #[serde(flatten)]
    report: &'a drcs_core::BoundReport64,
    certified_lb: f64,
    direct_gap: f64,
    radius_direct: f64,
}

#[derive(Serialize)]
struct LambdaCvOutput {
    /// Per-instance strength; a training portion of n instances uses lambda = factor * n.
    factor: f64,
    scores: Vec<CvScore>,
}

#[derive(Serialize)]
struct CvScore {
    factor: f64,
    accuracy: f64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select { model, selection, method, keep_fraction, validation, out } => {
            let p = parse_model(&model)?;
            let method: Method = method.parse()?;
            let algorithm: Algorithm = selection.algorithm.parse()?;
            if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
                return Err(CliError::Config(format!("--keep-fraction must lie in (0, 1], got {keep_fraction}")));
            }
            let (ctx, _) = context(&model, &p, validation.as_deref())?;
            let n = ctx.n_train();
            let n_del = ctx.n_del(1.0 - keep_fraction);
            let algorithm = ctx.effective_algorithm(algorithm, selection.exact_cap);
            let trace = ctx.select(method, algorithm, n_del, model.seed, selection.preserve_classes, criterion(&selection))?;
            let coreset = trace.coreset(n, n_del)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                    let trace_path = dir.join("trace.json");
                    std::fs::write(&trace_path, serde_json::to_string_pretty(&trace)?).map_err(|e| CliError::io(&trace_path, e))?;
                    let idx_path = dir.join("selected.txt");
                    std::fs::write(&idx_path, coreset.to_index_lines()).map_err(|e| CliError::io(&idx_path, e))?;
                    eprintln!("kept {} of {n} instances; wrote {} and {}", coreset.m, trace_path.display(), idx_path.display());
                }
                None => print_json(&trace)?,
            }
            Ok(())
        }
        Command::Evaluate { model, validation, selection } => {
            let p = parse_model(&model)?;
            let (ctx, _) = context(&model, &p, Some(&validation))?;
            let n = ctx.n_train();
            let coreset = match selection {
                Some(path) => read_selection(&path, n)?,
                None => CoresetVector::full(n),
            };
            let fitted = ctx.retrain(&coreset.mask)?;
            let accuracy = crate::experiment::evaluate_worst_case_accuracy(&fitted, &ctx.split.k_cross, &ctx.split.val.labels, 0.0)?;
            print_json(&EvaluateOutput { n_train: n, m: coreset.m, lambda: ctx.lambda, q: ctx.q, accuracy, wc_accuracy: ctx.worst_case_accuracy(&fitted)? })
        }
        Command::Certify { model, validation, selection } => {
            let p = parse_model(&model)?;
            let (ctx, _) = context(&model, &p, Some(&validation))?;
            let n = ctx.n_train();
            let coreset = match selection {
                Some(path) => read_selection(&path, n)?,
                None => CoresetVector::full(n),
            };
            let report = ctx.certificate(&coreset.mask)?;
            let (direct_gap, radius_direct) = ctx.direct_gap(&coreset.mask, &report.w_star)?;
            print_json(&CertifyOutput {
                n_train: n,
                m: coreset.m,
                lambda: ctx.lambda,
                s: ctx.s,
                q: ctx.q,
                certified_lb: 1.0 - report.ub,
                report: &report,
                direct_gap,
                radius_direct,
            })
        }
        Command::Sweep { model, selection, method, grid, out, timing } => {
            let p = parse_model(&model)?;
            let cfg = ExperimentConfig {
                kernel: p.kernel,
                loss: p.loss,
                lambda_rule: p.lambda_rule,
                a: model.a,
                q_factor: model.q_factor,
                folds: model.folds,
                methods: method.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?,
                grid: grid.unwrap_or_else(default_removal_grid),
                seed: model.seed,
                algorithm: selection.algorithm.parse()?,
                exact_cap: selection.exact_cap,
                preserve_classes: selection.preserve_classes,
                criterion: criterion(&selection),
                min_max_scale: model.min_max_scale,
                tol: model.tol,
                timing,
                ..ExperimentConfig::new(&model.dataset)
            };
            let report = run_experiment(&cfg)?;
            for f in &report.folds {
                warn_if_large(&format!("fold {} training", f.fold), f.s);
            }
            report.write(&out)?;
            let mut table = format!("{:<8} {:>8} {:>10} {:>10}\n", "method", "removed", "wc_acc", "cert_lb");
            for s in &report.summary {
                let lb = s.certified_lb_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                table += &format!("{:<8} {:>8.2} {:>10.4} {:>10}\n", s.method, s.fraction_removed, s.wc_accuracy_mean, lb);
            }
            write_stdout(&table)?;
            eprintln!("wrote {} and {}", out.join("report.csv").display(), out.join("report.json").display());
            match report.failures() {
                0 => Ok(()),
                k => Err(CliError::FailedRows(k)),
            }
        }
        Command::LambdaCv { model, grid } => {
            let p = parse_model(&model)?;
            let ds = load_dataset(&model.dataset, model.min_max_scale)?;
            let pre = load_kernel_matrix(&p.kernel, ds.n())?;
            let plan = cv_split(&ds, model.folds, model.seed)?;
            let opts = drcs_core::TrainOptions { tol: model.tol, seed: model.seed, ..Default::default() };
            let res = lambda_cv(&ds, &p.kernel, pre.as_ref(), p.loss, &grid.unwrap_or_else(default_cv_grid), &plan, &opts)?;
            print_json(&LambdaCvOutput {
                factor: res.best,
                scores: res.scores.into_iter().map(|(factor, accuracy)| CvScore { factor, accuracy }).collect(),
            })
        }
    }
}
