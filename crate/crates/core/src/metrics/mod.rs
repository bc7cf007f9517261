//! Confusion-matrix rates, AUC with its chance band, attacker probability
//! and the top-versus-bottom prevalence difference with its p-value.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

/// Low false-positive operating points reported with every metric set.
pub const FPR_TARGETS: [f64; 3] = [0.01, 0.05, 0.1];
pub const DEFAULT_PCT: f64 = 10.0;
pub const DEFAULT_N_PERM: usize = 1000;
pub const DEFAULT_N_SIGMA: f64 = 3.0;

/// A binary 2x2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(y_true: &[bool], y_pred: &[bool]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Shape("no predictions".into()));
        }
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rates derived from a confusion table; `None` where the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Rates {
    pub TPR: Option<f64>,
    pub FPR: Option<f64>,
    pub FAR: Option<f64>,
    pub TNR: Option<f64>,
    pub PPV: Option<f64>,
    pub NPV: Option<f64>,
    pub FNR: Option<f64>,
    pub ACC: Option<f64>,
    pub F1: Option<f64>,
    pub Advantage: Option<f64>,
}

impl Rates {
    pub fn from_confusion(c: &Confusion) -> Self {
        let Confusion { tp, fp, tn, fn_ } = *c;
        let tpr = ratio(tp, tp + fn_);
        let fpr = ratio(fp, fp + tn);
        Rates {
            TPR: tpr,
            FPR: fpr,
            FAR: ratio(fp, tp + fp),
            TNR: ratio(tn, fp + tn),
            PPV: ratio(tp, tp + fp),
            NPV: ratio(tn, tn + fn_),
            FNR: ratio(fn_, tp + fn_),
            ACC: ratio(tp + tn, tp + fp + tn + fn_),
            F1: ratio(2 * tp, 2 * tp + fp + fn_),
            Advantage: tpr.zip(fpr).map(|(t, f)| (t - f).abs()),
        }
    }
}

/// Rate fields from binary labels and predictions.
pub fn confusion_metrics(y_true: &[bool], y_pred: &[bool]) -> Result<Rates> {
    Ok(Rates::from_confusion(&Confusion::from_predictions(y_true, y_pred)?))
}

/// Full metric suite for a scored binary problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricSet {
    pub confusion: Confusion,
    #[serde(flatten)]
    pub rates: Rates,
    pub AUC: f64,
    pub AUC_null_lo: f64,
    pub AUC_null_hi: f64,
    pub FDIF: f64,
    pub PDIF: f64,
    /// Keys are the target false-positive rates rendered as strings.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub threshold: f64,
    pub pct: f64,
    pub n_perm: usize,
    pub pdif_seed: u64,
}

/// How to turn scores into a metric set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    /// Scores strictly above this are predicted positive.
    pub threshold: f64,
    pub pct: f64,
    pub n_perm: usize,
    pub n_sigma: f64,
    pub pdif_seed: u64,
}

impl MetricOptions {
    pub fn new(pdif_seed: u64) -> Self {
        Self {
            threshold: 0.5,
            pct: DEFAULT_PCT,
            n_perm: DEFAULT_N_PERM,
            n_sigma: DEFAULT_N_SIGMA,
            pdif_seed,
        }
    }
}

impl MetricSet {
    pub fn from_scores(scores: &[f64], labels: &[bool], opts: &MetricOptions) -> Result<Self> {
        let preds: Vec<bool> = scores.iter().map(|&s| s > opts.threshold).collect();
        let confusion = Confusion::from_predictions(labels, &preds)?;
        let n_pos = labels.iter().filter(|&&l| l).count();
        let n_neg = labels.len() - n_pos;
        let auc_value = auc(scores, labels)?;
        let (lo, hi) = auc_null_band(n_pos, n_neg, opts.n_sigma)?;
        let tpr_at_fpr = FPR_TARGETS
            .iter()
            .map(|&t| Ok((t.to_string(), tpr_at_fpr(scores, labels, t)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(MetricSet {
            confusion,
            rates: Rates::from_confusion(&confusion),
            AUC: auc_value,
            AUC_null_lo: lo,
            AUC_null_hi: hi,
            FDIF: fdif(scores, labels, opts.pct)?,
            PDIF: pdif(scores, labels, opts.pct, opts.n_perm, opts.pdif_seed)?,
            tpr_at_fpr,
            threshold: opts.threshold,
            pct: opts.pct,
            n_perm: opts.n_perm,
            pdif_seed: opts.pdif_seed,
        })
    }

    /// Recomputes the set from raw scores with the options recorded in it.
    pub fn recompute(&self, scores: &[f64], labels: &[bool]) -> Result<Self> {
        let opts = MetricOptions {
            threshold: self.threshold,
            pct: self.pct,
            n_perm: self.n_perm,
            n_sigma: DEFAULT_N_SIGMA,
            pdif_seed: self.pdif_seed,
        };
        MetricSet::from_scores(scores, labels, &opts)
    }
}

/// Probability that a random positive outscores a random negative, ties ½.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie blocks, then the Mann-Whitney U of the positives
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Macro-averaged one-vs-rest AUC of class probabilities; the positive
/// class alone when there are two. Classes absent from `labels` are skipped.
pub fn macro_auc(proba: &Matrix, labels: &[usize]) -> Result<f64> {
    if proba.rows() != labels.len() {
        return Err(Error::Shape(format!("{} probability rows for {} labels", proba.rows(), labels.len())));
    }
    let classes: Vec<usize> = if proba.cols() == 2 { vec![1] } else { (0..proba.cols()).collect() };
    let mut total = 0.0;
    let mut used = 0;
    for c in classes {
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let scores: Vec<f64> = (0..proba.rows()).map(|i| proba.get(i, c)).collect();
        if let Ok(a) = auc(&scores, &is_c) {
            total += a;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("labels hold a single class".into()));
    }
    Ok(total / used as f64)
}

/// `0.5 ± n_sigma * sd` of the AUC under no signal, clipped to [0, 1].
pub fn auc_null_band(n_pos: usize, n_neg: usize, n_sigma: f64) -> Result<(f64, f64)> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Argument("null band needs both classes".into()));
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let sd = ((p + n + 1.0) / (12.0 * p * n)).sqrt();
    Ok(((0.5 - n_sigma * sd).max(0.0), (0.5 + n_sigma * sd).min(1.0)))
}

/// Chance that a row flagged as a member really is one, given prior `a`.
pub fn attacker_probability(a: f64, tpr: f64, fpr: f64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Argument(format!("prior must lie in (0, 1], got {a}")));
    }
    if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&fpr) {
        return Err(Error::Argument("TPR and FPR must lie in [0, 1]".into()));
    }
    let hit = a * tpr;
    let den = hit + (1.0 - a) * fpr;
    if den == 0.0 {
        return Err(Error::UndefinedMetric("attacker probability has zero denominator".into()));
    }
    Ok(hit / den)
}

fn tail_indices(scores: &[f64], labels: &[bool], pct: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    if !(pct > 0.0 && pct <= 50.0) {
        return Err(Error::Argument(format!("pct must lie in (0, 50], got {pct}")));
    }
    let n = scores.len();
    let m = (pct / 100.0 * n as f64).ceil() as usize;
    if m == 0 || 2 * m > n {
        return Err(Error::Argument(format!("{n} rows are too few for {pct}% tails")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable: tied scores keep input order, so earlier rows rank higher
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let top = order[..m].to_vec();
    let bottom = order[n - m..].to_vec();
    Ok((top, bottom))
}

fn count_positive(idx: &[usize], labels: &[bool]) -> i64 {
    idx.iter().filter(|&&i| labels[i]).count() as i64
}

/// Positive prevalence among the top `pct`% of scores minus that among the
/// bottom `pct`%.
pub fn fdif(scores: &[f64], labels: &[bool], pct: f64) -> Result<f64> {
    let (top, bottom) = tail_indices(scores, labels, pct)?;
    let d = count_positive(&top, labels) - count_positive(&bottom, labels);
    Ok(d as f64 / top.len() as f64)
}

/// One-sided permutation p-value of `fdif`, `(count + 1) / (n_perm + 1)`.
pub fn pdif(scores: &[f64], labels: &[bool], pct: f64, n_perm: usize, seed_value: u64) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::Argument("n_perm must be positive".into()));
    }
    let (top, bottom) = tail_indices(scores, labels, pct)?;
    let observed = count_positive(&top, labels) - count_positive(&bottom, labels);
    let mut rng = seed::rng(seed_value);
    let mut perm = labels.to_vec();
    let mut count = 0usize;
    for _ in 0..n_perm {
        perm.shuffle(&mut rng);
        if count_positive(&top, &perm) - count_positive(&bottom, &perm) >= observed {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (n_perm + 1) as f64)
}

/// Highest TPR over score thresholds whose FPR does not exceed `target`.
pub fn tpr_at_fpr(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut best) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if fp as f64 / n_neg as f64 <= target {
            best = best.max(tp as f64 / n_pos as f64);
        }
    }
    Ok(best)
}
