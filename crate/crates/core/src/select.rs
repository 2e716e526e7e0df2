//! Greedy coreset selection against the certified bound, plus baseline selectors.
//!
//! Every selector produces a removal order; removing its first `n_del`
//! entries yields the coreset for `m = n - n_del`, so one trace serves every
//! retained size up to its length.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{maximize_on_ball, QuadraticGapForm, ValidationScores};
use crate::error::{DrcsError, Result};
use crate::scalar::Scalar;

/// Retained-instance mask with `m = sum(mask)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoresetVector {
    pub mask: Vec<bool>,
    pub m: usize,
}

impl CoresetVector {
    pub fn full(n: usize) -> Self {
        Self { mask: vec![true; n], m: n }
    }

    pub fn from_removed(n: usize, removed: &[usize]) -> Result<Self> {
        let mut mask = vec![true; n];
        for &i in removed {
            if i >= n || !mask[i] {
                return Err(DrcsError::InvalidArgument(format!("removal index {i} is out of range or repeated")));
            }
            mask[i] = false;
        }
        Ok(Self { m: n - removed.len(), mask })
    }

    pub fn selected(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    /// One selected index per line.
    pub fn to_index_lines(&self) -> String {
        self.selected().iter().map(|i| format!("{i}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub removed: usize,
    /// Gap value that ranked this removal, when the method has one.
    pub dg: Option<T>,
    /// Certified error bound after the removal, when computed.
    pub ub: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace<T> {
    pub removal_order: Vec<usize>,
    pub per_step: Vec<StepRecord<T>>,
    pub method: String,
    pub seed: u64,
}

impl<T> SelectionTrace<T> {
    pub fn n_del(&self) -> usize {
        self.removal_order.len()
    }

    /// Coreset after the first `n_del` removals.
    pub fn coreset(&self, n: usize, n_del: usize) -> Result<CoresetVector> {
        if n_del > self.removal_order.len() {
            return Err(DrcsError::InvalidArgument(format!(
                "trace has {} removals, {n_del} requested",
                self.removal_order.len()
            )));
        }
        CoresetVector::from_removed(n, &self.removal_order[..n_del])
    }
}

/// Which quantity a greedy step minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// The maximized duality gap.
    #[default]
    Gap,
    /// The full error bound, with the gap as the secondary key.
    Bound,
}

/// Inputs shared by the three greedy algorithms.
#[derive(Debug, Clone, Copy)]
pub struct GreedyProblem<'a, T: Scalar> {
    pub form: &'a QuadraticGapForm<T>,
    /// Training weight-ball radius.
    pub s: T,
    /// Needed to record per-step bounds and for [`Criterion::Bound`].
    pub validation: Option<&'a ValidationScores<T>>,
    pub labels: &'a [i8],
    /// Never remove the last active instance of a class.
    pub preserve_classes: bool,
    pub criterion: Criterion,
}

/// Smallest value, ties (within a relative 1e-12) broken by smallest index.
pub fn argmin_with_ties<T: Scalar>(values: &[(usize, T)]) -> Option<usize> {
    let best = values.iter().map(|&(_, v)| v).fold(None, |acc: Option<T>, v| match acc {
        Some(a) if a <= v => Some(a),
        _ => Some(v),
    })?;
    let tol = T::lit(1e-12) * T::one().max(best.abs());
    values.iter().filter(|&&(_, v)| v <= best + tol).map(|&(i, _)| i).min()
}

struct ClassGuard<'a> {
    labels: &'a [i8],
    active: [usize; 2],
    enabled: bool,
}

impl<'a> ClassGuard<'a> {
    fn new(labels: &'a [i8], enabled: bool) -> Self {
        let pos = labels.iter().filter(|&&l| l > 0).count();
        Self { labels, active: [labels.len() - pos, pos], enabled }
    }

    fn slot(&self, i: usize) -> usize {
        usize::from(self.labels[i] > 0)
    }

    fn may_remove(&self, i: usize) -> bool {
        !self.enabled || self.active[self.slot(i)] > 1
    }

    fn remove(&mut self, i: usize) {
        let s = self.slot(i);
        self.active[s] -= 1;
    }
}

fn check_n_del(n: usize, n_del: usize) -> Result<()> {
    if n_del >= n {
        return Err(DrcsError::InvalidArgument(format!("cannot remove {n_del} of {n} instances")));
    }
    Ok(())
}

fn check_problem<T: Scalar>(p: &GreedyProblem<'_, T>, n_del: usize) -> Result<()> {
    let n = p.form.n();
    if p.labels.len() != n {
        return Err(DrcsError::DimensionMismatch(format!("{} labels for a form over {n}", p.labels.len())));
    }
    if p.criterion == Criterion::Bound && p.validation.is_none() {
        return Err(DrcsError::InvalidArgument("ranking by bound needs validation scores".into()));
    }
    check_n_del(n, n_del)
}

fn exhausted() -> DrcsError {
    DrcsError::InvalidArgument("no removable instance left without exhausting a class".into())
}

/// Picks among `(index, dg)` candidates according to the criterion.
fn choose<T: Scalar>(p: &GreedyProblem<'_, T>, cands: &[(usize, T)]) -> Option<usize> {
    match (p.criterion, p.validation) {
        (Criterion::Bound, Some(val)) => {
            let ubs: Vec<(usize, T)> = cands.iter().map(|&(i, dg)| (i, val.ub_for_gap(dg, p.form.lambda))).collect();
            let best_ub = ubs.iter().map(|&(_, u)| u).fold(T::infinity(), |a, b| a.min(b));
            let tied: Vec<(usize, T)> = cands.iter().zip(&ubs).filter(|(_, &(_, u))| u <= best_ub).map(|(&c, _)| c).collect();
            argmin_with_ties(&tied)
        }
        _ => argmin_with_ties(cands),
    }
}

fn record<T: Scalar>(p: &GreedyProblem<'_, T>, removed: usize, dg: T) -> StepRecord<T> {
    StepRecord { removed, dg: Some(dg), ub: p.validation.map(|v| v.ub_for_gap(dg, p.form.lambda)) }
}

/// Each step removes the instance whose removal gives the smallest maximized
/// gap over the weight ball, re-solving the ball problem for every candidate.
pub fn greedy_exact<T: Scalar>(p: &GreedyProblem<'_, T>, n_del: usize) -> Result<SelectionTrace<T>> {
    check_problem(p, n_del)?;
    let n = p.form.n();
    let mut mask = vec![true; n];
    let mut guard = ClassGuard::new(p.labels, p.preserve_classes);
    let mut trace = SelectionTrace { removal_order: Vec::with_capacity(n_del), per_step: Vec::with_capacity(n_del), method: "drcs-exact".into(), seed: 0 };
    for _ in 0..n_del {
        let cands: Vec<usize> = (0..n).filter(|&i| mask[i] && guard.may_remove(i)).collect();
        let values = cands
            .par_iter()
            .map(|&i| {
                let mut trial = mask.clone();
                trial[i] = false;
                maximize_on_ball(p.form, &trial, p.s).map(|b| (i, b.dg_max))
            })
            .collect::<Result<Vec<(usize, T)>>>()?;
        let pick = choose(p, &values).ok_or_else(exhausted)?;
        let dg = values.iter().find(|&&(i, _)| i == pick).expect("picked from candidates").1;
        mask[pick] = false;
        guard.remove(pick);
        trace.removal_order.push(pick);
        trace.per_step.push(record(p, pick, dg));
    }
    Ok(trace)
}

/// `q(u)` with `A u` kept up to date, so dropping one coordinate costs O(1)
/// to evaluate and O(n) to apply.
struct FixedWeightGap<'a, T: Scalar> {
    form: &'a QuadraticGapForm<T>,
    u: DVector<T>,
    au: DVector<T>,
    value: T,
}

impl<'a, T: Scalar> FixedWeightGap<'a, T> {
    fn new(form: &'a QuadraticGapForm<T>, u: DVector<T>) -> Self {
        let au = &form.a * &u;
        let value = u.dot(&au) + form.b.dot(&u) + form.c;
        Self { form, u, au, value }
    }

    /// `q(u - u_i e_i)`
    fn without(&self, i: usize) -> T {
        let ui = self.u[i];
        self.value - T::lit(2.0) * ui * self.au[i] + self.form.a[(i, i)] * ui * ui - self.form.b[i] * ui
    }

    fn remove(&mut self, i: usize) {
        let ui = self.u[i];
        self.value = self.without(i);
        self.au.axpy(-ui, &self.form.a.column(i), T::one());
        self.u[i] = T::zero();
    }
}

fn worst_weights<T: Scalar>(p: &GreedyProblem<'_, T>) -> Result<DVector<T>> {
    Ok(maximize_on_ball(p.form, &vec![true; p.form.n()], p.s)?.w_star)
}

/// Fixes the worst-case weights at the full-data maximizer and greedily removes
/// the instance that minimizes the gap at those weights.
pub fn greedy_fixed_w<T: Scalar>(p: &GreedyProblem<'_, T>, n_del: usize) -> Result<SelectionTrace<T>> {
    check_problem(p, n_del)?;
    let n = p.form.n();
    let mut gap = FixedWeightGap::new(p.form, worst_weights(p)?);
    let mut mask = vec![true; n];
    let mut guard = ClassGuard::new(p.labels, p.preserve_classes);
    let mut trace = SelectionTrace { removal_order: Vec::with_capacity(n_del), per_step: Vec::with_capacity(n_del), method: "drcs-fixed-w".into(), seed: 0 };
    for _ in 0..n_del {
        let values: Vec<(usize, T)> = (0..n).filter(|&i| mask[i] && guard.may_remove(i)).map(|i| (i, gap.without(i))).collect();
        let pick = choose(p, &values).ok_or_else(exhausted)?;
        let dg = gap.without(pick);
        gap.remove(pick);
        mask[pick] = false;
        guard.remove(pick);
        trace.removal_order.push(pick);
        trace.per_step.push(record(p, pick, dg));
    }
    Ok(trace)
}

/// Scores every instance once by the gap with only it removed (at the
/// full-data worst-case weights) and removes the `n_del` smallest.
pub fn greedy_oneshot<T: Scalar>(p: &GreedyProblem<'_, T>, n_del: usize) -> Result<SelectionTrace<T>> {
    check_problem(p, n_del)?;
    let n = p.form.n();
    let gap = FixedWeightGap::new(p.form, worst_weights(p)?);
    let mut pool: Vec<(usize, T)> = (0..n).map(|i| (i, gap.without(i))).collect();
    let mut guard = ClassGuard::new(p.labels, p.preserve_classes);
    let mut trace = SelectionTrace { removal_order: Vec::with_capacity(n_del), per_step: Vec::with_capacity(n_del), method: "drcs-oneshot".into(), seed: 0 };
    for _ in 0..n_del {
        let allowed: Vec<(usize, T)> = pool.iter().copied().filter(|&(i, _)| guard.may_remove(i)).collect();
        let pick = argmin_with_ties(&allowed).ok_or_else(exhausted)?;
        let dg = allowed.iter().find(|&&(i, _)| i == pick).expect("picked from candidates").1;
        pool.retain(|&(i, _)| i != pick);
        guard.remove(pick);
        trace.removal_order.push(pick);
        trace.per_step.push(StepRecord { removed: pick, dg: Some(dg), ub: None });
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Random,
    Herding,
    KCenter,
    Margin,
}

impl std::str::FromStr for Baseline {
    type Err = DrcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Baseline::Random),
            "herding" => Ok(Baseline::Herding),
            "kcenter" => Ok(Baseline::KCenter),
            "margin" => Ok(Baseline::Margin),
            other => Err(DrcsError::UnknownMethod(other.into())),
        }
    }
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::Herding => "herding",
            Baseline::KCenter => "kcenter",
            Baseline::Margin => "margin",
        }
    }
}

/// Takes removals from the front of a full priority order, skipping any
/// instance whose removal would exhaust its class when `preserve` is set.
pub fn removal_from_priority(priority: &[usize], labels: &[i8], n_del: usize, preserve: bool) -> Result<Vec<usize>> {
    let mut guard = ClassGuard::new(labels, preserve);
    let mut out = Vec::with_capacity(n_del);
    for &i in priority {
        if out.len() == n_del {
            break;
        }
        if guard.may_remove(i) {
            guard.remove(i);
            out.push(i);
        }
    }
    if out.len() < n_del {
        return Err(exhausted());
    }
    Ok(out)
}

/// Order in which k-center greedy covers the data in kernel distance,
/// starting from the point closest to the mean embedding.
pub fn kcenter_order<T: Scalar>(k: &DMatrix<T>) -> Vec<usize> {
    let n = k.nrows();
    let nf = T::from_usize_lossy(n);
    let to_mean: Vec<(usize, T)> = (0..n).map(|i| (i, k[(i, i)] - T::lit(2.0) * k.row(i).sum() / nf)).collect();
    let Some(first) = argmin_with_ties(&to_mean) else { return Vec::new() };
    let mut picked = vec![false; n];
    let mut order = Vec::with_capacity(n);
    // squared distance to the nearest picked center
    let mut dist = vec![T::infinity(); n];
    let mut next = first;
    loop {
        picked[next] = true;
        order.push(next);
        if order.len() == n {
            break;
        }
        for j in 0..n {
            let d = k[(j, j)] + k[(next, next)] - T::lit(2.0) * k[(j, next)];
            dist[j] = dist[j].min(d);
        }
        let far: Vec<(usize, T)> = (0..n).filter(|&j| !picked[j]).map(|j| (j, -dist[j])).collect();
        next = argmin_with_ties(&far).expect("unpicked points remain");
    }
    order
}

/// Kernel herding order: each pick minimizes the distance between the full-data
/// mean embedding and the mean of the picked points.
pub fn herding_order<T: Scalar>(k: &DMatrix<T>) -> Vec<usize> {
    let n = k.nrows();
    let nf = T::from_usize_lossy(n);
    let mu: Vec<T> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let mut picked = vec![false; n];
    // s[i] = sum over picked j of K[j, i]
    let mut s = vec![T::zero(); n];
    let mut order = Vec::with_capacity(n);
    for t in 0..n {
        let t1 = T::from_usize_lossy(t + 1);
        let vals: Vec<(usize, T)> = (0..n)
            .filter(|&i| !picked[i])
            .map(|i| (i, -T::lit(2.0) / t1 * mu[i] + (T::lit(2.0) * s[i] + k[(i, i)]) / (t1 * t1)))
            .collect();
        let pick = argmin_with_ties(&vals).expect("unpicked points remain");
        picked[pick] = true;
        order.push(pick);
        for (i, si) in s.iter_mut().enumerate() {
            *si += k[(pick, i)];
        }
    }
    order
}

/// Removal priority of a baseline over all n instances.
pub fn baseline_priority<T: Scalar>(method: Baseline, k: &DMatrix<T>, ref_scores: &DVector<T>, seed: u64) -> Result<Vec<usize>> {
    let n = k.nrows();
    if k.ncols() != n || ref_scores.len() != n {
        return Err(DrcsError::DimensionMismatch(format!("gram {}x{}, {} scores", k.nrows(), k.ncols(), ref_scores.len())));
    }
    Ok(match method {
        Baseline::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order
        }
        Baseline::Margin => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                let (a, b) = (ref_scores[i].abs(), ref_scores[j].abs());
                b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
            });
            order
        }
        // keep-orders reversed: the last point picked is the first removed
        Baseline::KCenter => kcenter_order(k).into_iter().rev().collect(),
        Baseline::Herding => herding_order(k).into_iter().rev().collect(),
    })
}

pub fn baseline_select<T: Scalar>(
    method: Baseline,
    k: &DMatrix<T>,
    ref_scores: &DVector<T>,
    labels: &[i8],
    n_del: usize,
    seed: u64,
    preserve_classes: bool,
) -> Result<SelectionTrace<T>> {
    check_n_del(k.nrows(), n_del)?;
    if labels.len() != k.nrows() {
        return Err(DrcsError::DimensionMismatch(format!("{} labels for {} instances", labels.len(), k.nrows())));
    }
    let priority = baseline_priority(method, k, ref_scores, seed)?;
    let removal_order = removal_from_priority(&priority, labels, n_del, preserve_classes)?;
    let per_step = removal_order.iter().map(|&i| StepRecord { removed: i, dg: None, ub: None }).collect();
    Ok(SelectionTrace { removal_order, per_step, method: method.name().into(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem<'a>(form: &'a QuadraticGapForm<f64>, labels: &'a [i8], s: f64) -> GreedyProblem<'a, f64> {
        GreedyProblem { form, s, validation: None, labels, preserve_classes: false, criterion: Criterion::Gap }
    }

    fn diag_form(d: &[f64]) -> QuadraticGapForm<f64> {
        QuadraticGapForm {
            a: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            b: DVector::zeros(d.len()),
            c: 0.0,
            lambda: 1.0,
        }
    }

    #[test]
    fn zero_removals_give_full_coreset() {
        let form = diag_form(&[1.0, 2.0]);
        let labels = [1, -1];
        let t = greedy_exact(&problem(&form, &labels, 0.1), 0).unwrap();
        assert!(t.removal_order.is_empty());
        assert_eq!(t.coreset(2, 0).unwrap(), CoresetVector::full(2));
    }

    #[test]
    fn all_removed_is_rejected() {
        let form = diag_form(&[1.0, 2.0]);
        let labels = [1, -1];
        assert!(greedy_fixed_w(&problem(&form, &labels, 0.1), 2).is_err());
    }

    #[test]
    fn oneshot_ties_remove_lowest_indices() {
        let form = diag_form(&[1.0; 5]);
        let labels = [1, -1, 1, -1, 1];
        let t = greedy_oneshot(&problem(&form, &labels, 0.0), 3).unwrap();
        assert_eq!(t.removal_order, vec![0, 1, 2]);
    }

    #[test]
    fn preserve_classes_keeps_one_of_each() {
        // with S = 0 the largest diagonal entry is the cheapest removal
        let form = diag_form(&[1.0, 1.0, 5.0, 5.0]);
        let labels = [1, 1, 1, -1];
        let free = greedy_fixed_w(&problem(&form, &labels, 0.0), 2).unwrap();
        assert_eq!(free.removal_order, vec![2, 3]);
        let p = GreedyProblem { preserve_classes: true, ..problem(&form, &labels, 0.0) };
        let kept = greedy_fixed_w(&p, 2).unwrap();
        assert_eq!(kept.removal_order, vec![2, 0]);
        assert!(greedy_fixed_w(&p, 3).is_err());
    }

    #[test]
    fn margin_keeps_smallest_score() {
        let k = DMatrix::<f64>::identity(3, 3);
        let scores = DVector::from_vec(vec![0.1, 2.0, -0.5]);
        let t = baseline_select(Baseline::Margin, &k, &scores, &[1, -1, 1], 2, 0, false).unwrap();
        assert_eq!(t.coreset(3, 2).unwrap().selected(), vec![0]);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let k = DMatrix::<f64>::identity(20, 20);
        let s = DVector::zeros(20);
        let labels: Vec<i8> = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let a = baseline_select(Baseline::Random, &k, &s, &labels, 10, 7, false).unwrap();
        let b = baseline_select(Baseline::Random, &k, &s, &labels, 10, 7, false).unwrap();
        let c = baseline_select(Baseline::Random, &k, &s, &labels, 10, 8, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.removal_order, c.removal_order);
    }

    #[test]
    fn herding_first_pick_maximizes_mean_similarity() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 1.0, 0.6, 0.1, 0.6, 1.0]);
        let means: Vec<f64> = (0..3).map(|i| k.row(i).sum() / 3.0).collect();
        let best = (0..3).max_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap()).unwrap();
        assert_eq!(herding_order(&k)[0], best);
    }

    #[test]
    fn kcenter_covers_far_point_early() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.1, 0.2, 5.0]);
        let k = crate::kernel::gram(&x, &x, &crate::kernel::KernelSpec::Linear).unwrap();
        let order = kcenter_order(&k);
        assert_eq!(order.len(), 4);
        assert_eq!(order[1], 3);
    }

    #[test]
    fn unknown_baseline_is_an_error() {
        assert_eq!("coreset".parse::<Baseline>(), Err(DrcsError::UnknownMethod("coreset".into())));
    }
}
