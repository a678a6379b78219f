//! Weak learners, the prediction matrix they produce, the sequential
//! reweighting loop and heterogeneous ensemble training.
//!
//! Every learner sees a random subspace of the features (drawn from its own
//! seed) so that learners fit on the same rows still disagree. Predictions
//! are always exactly `-1` or `+1`; ties are resolved towards `+1`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{temporal_subsample, Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    DecisionTree,
    Knn,
    GaussianNb,
    LogisticRegression,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [
        LearnerKind::DecisionTree,
        LearnerKind::Knn,
        LearnerKind::GaussianNb,
        LearnerKind::LogisticRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::DecisionTree => "decision_tree",
            LearnerKind::Knn => "knn",
            LearnerKind::GaussianNb => "gaussian_nb",
            LearnerKind::LogisticRegression => "logistic_regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerParams {
    pub max_depth: usize,
    pub k: usize,
    /// Share of the features each learner is allowed to look at.
    pub feature_fraction: f64,
    /// kNN keeps at most this many reference points.
    pub knn_max_points: usize,
    pub lr_epochs: usize,
    pub lr_step: f64,
    pub lr_l2: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            k: 5,
            feature_fraction: 0.6,
            knn_max_points: 1000,
            lr_epochs: 200,
            lr_step: 0.5,
            lr_l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(Label),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    max_depth: usize,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(points: &[Vec<f64>], weights: &[f64]) -> Self {
        let d = points.first().map_or(0, Vec::len);
        let total: f64 = weights.iter().sum();
        let mut mean = vec![0.0; d];
        for (p, &w) in points.iter().zip(weights) {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += w * v / total;
            }
        }
        let mut var = vec![0.0; d];
        for (p, &w) in points.iter().zip(weights) {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += w * (v - m) * (v - m) / total;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    standardizer: Standardizer,
    /// Row-major standardized reference points.
    points: Vec<f64>,
    labels: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    log_prior: [f64; 2],
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    standardizer: Standardizer,
    coef: Vec<f64>,
    intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    DecisionTree(DecisionTree),
    Knn(Knn),
    GaussianNb(GaussianNb),
    LogisticRegression(LogisticRegression),
    /// Fitted on single-class data.
    Constant(Label),
}

/// A trained base predictor `h(x) -> {-1, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLearner {
    pub kind: LearnerKind,
    /// Input dimension the learner was trained on.
    pub n_features: usize,
    /// Indices of the features the model reads, in increasing order.
    pub features: Vec<usize>,
    pub model: Model,
}

impl WeakLearner {
    pub fn constant(kind: LearnerKind, n_features: usize, label: Label) -> Self {
        Self {
            kind,
            n_features,
            features: Vec::new(),
            model: Model::Constant(label),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let sub: Vec<f64> = self.features.iter().map(|&f| x[f]).collect();
        Ok(self.predict_projected(&sub))
    }

    fn predict_projected(&self, x: &[f64]) -> Label {
        match &self.model {
            Model::Constant(label) => *label,
            Model::DecisionTree(t) => t.predict(x),
            Model::Knn(m) => m.predict(x),
            Model::GaussianNb(m) => m.predict(x),
            Model::LogisticRegression(m) => m.predict(x),
        }
    }
}

impl DecisionTree {
    fn predict(&self, x: &[f64]) -> Label {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(label) => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    fn fit(x: &[Vec<f64>], y: &[Label], w: &[f64], max_depth: usize) -> Self {
        let mut tree = Self {
            max_depth,
            nodes: Vec::new(),
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, w, idx, 0);
        tree
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[Label], w: &[f64], idx: Vec<usize>, depth: usize) -> usize {
        let (neg, pos) = class_weights(&idx, y, w);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(neg, pos)));
        if depth >= self.max_depth || neg <= 0.0 || pos <= 0.0 {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, w, &idx, neg, pos) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = self.grow(x, y, w, l, depth + 1);
        let right = self.grow(x, y, w, r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn class_weights(idx: &[usize], y: &[Label], w: &[f64]) -> (f64, f64) {
    idx.iter().fold((0.0, 0.0), |(n, p), &i| match y[i] {
        Label::Negative => (n + w[i], p),
        Label::Positive => (n, p + w[i]),
    })
}

fn majority(neg: f64, pos: f64) -> Label {
    if pos >= neg {
        Label::Positive
    } else {
        Label::Negative
    }
}

/// Weighted Gini impurity times node weight.
fn impurity(neg: f64, pos: f64) -> f64 {
    let t = neg + pos;
    if t <= 0.0 {
        return 0.0;
    }
    t - (neg * neg + pos * pos) / t
}

fn best_split(
    x: &[Vec<f64>],
    y: &[Label],
    w: &[f64],
    idx: &[usize],
    neg: f64,
    pos: f64,
) -> Option<(usize, f64)> {
    let parent = impurity(neg, pos);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for f in 0..x[idx[0]].len() {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let (mut ln, mut lp) = (0.0, 0.0);
        for pair in order.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            match y[i] {
                Label::Negative => ln += w[i],
                Label::Positive => lp += w[i],
            }
            if x[i][f] == x[j][f] {
                continue;
            }
            let score = impurity(ln, lp) + impurity(neg - ln, pos - lp);
            if score < parent - 1e-12 && best.is_none_or(|(s, _, _)| score < s - 1e-15) {
                best = Some((score, f, 0.5 * (x[i][f] + x[j][f])));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl Knn {
    fn predict(&self, x: &[f64]) -> Label {
        let q = self.standardizer.apply(x);
        let d = q.len();
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks_exact(d.max(1))
            .take(self.labels.len())
            .enumerate()
            .map(|(i, p)| {
                let s: f64 = if d == 0 {
                    0.0
                } else {
                    p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum()
                };
                (s, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
        }
        let votes: i64 = dist[..self.k]
            .iter()
            .map(|&(_, i)| i64::from(self.labels[i].sign()))
            .sum();
        Label::from_sign(votes as f64)
    }
}

impl GaussianNb {
    fn fit(x: &[Vec<f64>], y: &[Label], w: &[f64]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut total = [0.0; 2];
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        let mut var = [vec![0.0; d], vec![0.0; d]];
        let slot = |l: Label| usize::from(l == Label::Positive);
        for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
            let c = slot(label);
            total[c] += wi;
            for (m, v) in mean[c].iter_mut().zip(row) {
                *m += wi * v;
            }
        }
        for c in 0..2 {
            for m in mean[c].iter_mut() {
                *m /= total[c];
            }
        }
        for ((row, &label), &wi) in x.iter().zip(y).zip(w) {
            let c = slot(label);
            for ((s, v), m) in var[c].iter_mut().zip(row).zip(&mean[c]) {
                *s += wi * (v - m) * (v - m);
            }
        }
        let mut max_var: f64 = 0.0;
        for c in 0..2 {
            for s in var[c].iter_mut() {
                *s /= total[c];
                max_var = max_var.max(*s);
            }
        }
        let eps = 1e-9 * max_var.max(1e-12);
        for c in 0..2 {
            for s in var[c].iter_mut() {
                *s += eps;
            }
        }
        let all = total[0] + total[1];
        Self {
            log_prior: [(total[0] / all).ln(), (total[1] / all).ln()],
            mean,
            var,
        }
    }

    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        let mut lp = self.log_prior[c];
        for ((v, m), s) in x.iter().zip(&self.mean[c]).zip(&self.var[c]) {
            lp -= 0.5 * ((v - m) * (v - m) / s + s.ln());
        }
        lp
    }

    fn predict(&self, x: &[f64]) -> Label {
        Label::from_sign(self.log_joint(1, x) - self.log_joint(0, x))
    }
}

impl LogisticRegression {
    fn fit(x: &[Vec<f64>], y: &[Label], w: &[f64], params: &LearnerParams) -> Self {
        let standardizer = Standardizer::fit(x, w);
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
        let d = standardizer.mean.len();
        let total: f64 = w.iter().sum();
        let mut coef = vec![0.0; d];
        let mut intercept = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..params.lr_epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for ((row, &label), &wi) in z.iter().zip(y).zip(w) {
                let t = if label == Label::Positive { 1.0 } else { 0.0 };
                let s = intercept + row.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
                let p = 1.0 / (1.0 + (-s).exp());
                let e = wi * (p - t) / total;
                for (g, v) in grad.iter_mut().zip(row) {
                    *g += e * v;
                }
                grad_b += e;
            }
            for (c, g) in coef.iter_mut().zip(&grad) {
                *c -= params.lr_step * (g + params.lr_l2 * *c);
            }
            intercept -= params.lr_step * grad_b;
        }
        Self {
            standardizer,
            coef,
            intercept,
        }
    }

    fn predict(&self, x: &[f64]) -> Label {
        let z = self.standardizer.apply(x);
        let s = self.intercept + z.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>();
        Label::from_sign(s)
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("sample weights must be finite and nonnegative"));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("sample weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// Draws `count` row indices with probability proportional to `weights`.
fn weighted_draws<R: Rng>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(weights.len() - 1)
        })
        .collect()
}

/// Fits one weak learner of `kind` on `data` under the sample distribution `weights`.
///
/// Trees, naive Bayes and logistic regression use the weights directly; kNN
/// resamples its reference points proportionally to them. Data whose
/// weighted rows all carry one label yields a constant learner.
pub fn fit(
    kind: LearnerKind,
    data: &Dataset,
    weights: &[f64],
    params: &LearnerParams,
    seed: u64,
) -> Result<WeakLearner> {
    if data.is_empty() {
        return Err(invalid("cannot fit on an empty dataset"));
    }
    check_weights(weights, data.len())?;
    if kind == LearnerKind::Knn && params.k > data.len() {
        return Err(invalid(format!(
            "k = {} exceeds the {} available rows",
            params.k,
            data.len()
        )));
    }
    if params.k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if !(params.feature_fraction > 0.0 && params.feature_fraction <= 1.0) {
        return Err(invalid("feature_fraction must lie in (0, 1]"));
    }
    let n_features = data.n_features();
    let mut rng = rng::stream(seed, "fit");

    let n_sub = ((n_features as f64 * params.feature_fraction).round() as usize).clamp(1, n_features.max(1));
    let mut features = if n_features == 0 {
        Vec::new()
    } else {
        index::sample(&mut rng, n_features, n_sub).into_vec()
    };
    features.sort_unstable();

    let rows = data.rows();
    let y: Vec<Label> = rows.iter().map(|r| r.label).collect();
    let (neg, pos) = class_weights(&(0..rows.len()).collect::<Vec<_>>(), &y, weights);
    if neg <= 0.0 || pos <= 0.0 {
        return Ok(WeakLearner::constant(kind, n_features, majority(neg, pos)));
    }
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| features.iter().map(|&f| r.features[f]).collect())
        .collect();

    let model = match kind {
        LearnerKind::DecisionTree => Model::DecisionTree(DecisionTree::fit(&x, &y, weights, params.max_depth)),
        LearnerKind::GaussianNb => Model::GaussianNb(GaussianNb::fit(&x, &y, weights)),
        LearnerKind::LogisticRegression => {
            Model::LogisticRegression(LogisticRegression::fit(&x, &y, weights, params))
        }
        LearnerKind::Knn => {
            let n = rows.len();
            let uniform = weights.iter().all(|w| (w - weights[0]).abs() <= 1e-15);
            let picked: Vec<usize> = if !uniform {
                weighted_draws(weights, n.min(params.knn_max_points), &mut rng)
            } else if n > params.knn_max_points {
                let mut v = index::sample(&mut rng, n, params.knn_max_points).into_vec();
                v.sort_unstable();
                v
            } else {
                (0..n).collect()
            };
            let labels: Vec<Label> = picked.iter().map(|&i| y[i]).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                return Ok(WeakLearner::constant(kind, n_features, labels[0]));
            }
            if params.k > picked.len() {
                return Err(invalid("k exceeds the number of kNN reference points"));
            }
            let ref_rows: Vec<Vec<f64>> = picked.iter().map(|&i| x[i].clone()).collect();
            let standardizer = Standardizer::fit(&ref_rows, &vec![1.0; ref_rows.len()]);
            let points = ref_rows.iter().flat_map(|r| standardizer.apply(r)).collect();
            Model::Knn(Knn {
                k: params.k,
                standardizer,
                points,
                labels,
            })
        }
    };
    Ok(WeakLearner {
        kind,
        n_features,
        features,
        model,
    })
}

/// `H[i][s] = h_i(x_s)`, stored row-major with entries in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    n_learners: usize,
    n_samples: usize,
    values: Vec<i8>,
}

impl PredictionMatrix {
    pub fn from_rows(rows: Vec<Vec<i8>>) -> Result<Self> {
        let n_learners = rows.len();
        let n_samples = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_learners * n_samples);
        for r in rows {
            if r.len() != n_samples {
                return Err(Error::DimensionMismatch {
                    expected: n_samples,
                    found: r.len(),
                });
            }
            if r.iter().any(|&v| v != 1 && v != -1) {
                return Err(invalid("prediction entries must be -1 or +1"));
            }
            values.extend(r);
        }
        Ok(Self {
            n_learners,
            n_samples,
            values,
        })
    }

    pub fn n_learners(&self) -> usize {
        self.n_learners
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.values[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn get(&self, i: usize, s: usize) -> i8 {
        self.values[i * self.n_samples + s]
    }

    /// `Corr(h_i, h_j) = sum_s h_i(x_s) h_j(x_s)`.
    pub fn correlation(&self, i: usize, j: usize) -> i64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum()
    }

    /// `Corr(h_i, y) = sum_s h_i(x_s) y_s`.
    pub fn label_correlation(&self, i: usize, labels: &[Label]) -> i64 {
        self.row(i)
            .iter()
            .zip(labels)
            .map(|(&a, l)| i64::from(a) * i64::from(l.sign()))
            .sum()
    }
}

pub fn predict_matrix(ensemble: &[WeakLearner], data: &Dataset) -> Result<PredictionMatrix> {
    if ensemble.is_empty() {
        return Err(invalid("ensemble is empty"));
    }
    let mut values = Vec::with_capacity(ensemble.len() * data.len());
    for learner in ensemble {
        if learner.n_features != data.n_features() {
            return Err(Error::DimensionMismatch {
                expected: learner.n_features,
                found: data.n_features(),
            });
        }
        for row in data.rows() {
            values.push(learner.predict(&row.features)?.sign());
        }
    }
    Ok(PredictionMatrix {
        n_learners: ensemble.len(),
        n_samples: data.len(),
        values,
    })
}

pub const EPSILON_MIN: f64 = 1e-12;

/// Sample distribution and per-learner statistics of the reweighting loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostState {
    pub distribution: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub real_weights: Vec<f64>,
    pub normalizers: Vec<f64>,
}

impl BoostState {
    pub fn uniform(n_samples: usize) -> Self {
        Self {
            distribution: vec![1.0 / n_samples as f64; n_samples],
            epsilons: Vec::new(),
            real_weights: Vec::new(),
            normalizers: Vec::new(),
        }
    }
}

/// One reweighting step after learner `h_i` with predictions `row`.
///
/// The weighted error sums `D(s)·|h(x_s)|` over misclassified samples and is
/// clamped to `[EPSILON_MIN, 1 - EPSILON_MIN]` before taking the log-odds.
pub fn boost_step(row: &[i8], labels: &[Label], state: &BoostState) -> Result<BoostState> {
    let n = state.distribution.len();
    if row.len() != n || labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if row.len() != n { row.len() } else { labels.len() },
        });
    }
    let eps: f64 = row
        .iter()
        .zip(labels)
        .zip(&state.distribution)
        .filter(|((&h, l), _)| h != l.sign())
        .map(|((&h, _), d)| d * f64::from(h).abs())
        .sum();
    let eps = eps.clamp(EPSILON_MIN, 1.0 - EPSILON_MIN);
    let w = 0.5 * ((1.0 - eps) / eps).ln();
    let mut next: Vec<f64> = row
        .iter()
        .zip(labels)
        .zip(&state.distribution)
        .map(|((&h, l), d)| d * (-w * l.value() * f64::from(h)).exp())
        .collect();
    let z: f64 = next.iter().sum();
    next.iter_mut().for_each(|d| *d /= z);
    let mut out = state.clone();
    out.distribution = next;
    out.epsilons.push(eps);
    out.real_weights.push(w);
    out.normalizers.push(z);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Sequential reweighting inside each temporal subset.
    Boosting,
    /// Independent uniform-weight fits per temporal subset.
    Subsampling,
}

/// Fractions of each learner kind in the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mix {
    pub decision_tree: f64,
    pub knn: f64,
    pub gaussian_nb: f64,
    pub logistic_regression: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Self {
            decision_tree: 0.5,
            knn: 0.5,
            gaussian_nb: 0.0,
            logistic_regression: 0.0,
        }
    }
}

impl Mix {
    pub fn fraction(&self, kind: LearnerKind) -> f64 {
        match kind {
            LearnerKind::DecisionTree => self.decision_tree,
            LearnerKind::Knn => self.knn,
            LearnerKind::GaussianNb => self.gaussian_nb,
            LearnerKind::LogisticRegression => self.logistic_regression,
        }
    }

    /// Largest-remainder apportionment of `n` learners.
    pub fn counts(&self, n: usize) -> [usize; 4] {
        let exact: Vec<f64> = LearnerKind::ALL.iter().map(|&k| self.fraction(k) * n as f64).collect();
        let mut counts = [0usize; 4];
        for (c, e) in counts.iter_mut().zip(&exact) {
            *c = e.floor() as usize;
        }
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_learners: usize,
    #[serde(default)]
    pub mix: Mix,
    pub variant: Variant,
    pub n_subsets: usize,
    #[serde(default)]
    pub params: LearnerParams,
    #[serde(default)]
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_learners == 0 {
            return Err(invalid("n_learners must be at least 1"));
        }
        if self.n_subsets == 0 {
            return Err(invalid("n_subsets must be at least 1"));
        }
        let fr: Vec<f64> = LearnerKind::ALL.iter().map(|&k| self.mix.fraction(k)).collect();
        if fr.iter().any(|f| !(*f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("mix fractions must be nonnegative and sum to 1"));
        }
        Ok(())
    }

    /// Learner kinds in training order.
    pub fn kinds(&self) -> Vec<LearnerKind> {
        let counts = self.mix.counts(self.n_learners);
        LearnerKind::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&k, c)| core::iter::repeat_n(k, c))
            .collect()
    }

    /// Temporal subset each learner is trained on (round-robin).
    pub fn subset_of(&self, learner: usize) -> usize {
        learner % self.n_subsets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub learners: Vec<WeakLearner>,
    /// Predictions of every learner on the full training set.
    pub predictions: PredictionMatrix,
    /// Final reweighting state per subset (boosting variant only).
    pub boost_states: Vec<BoostState>,
}

pub fn train_ensemble(config: &EnsembleConfig, train: &Dataset) -> Result<TrainedEnsemble> {
    config.validate()?;
    let subsets = temporal_subsample(train, config.n_subsets)?;
    let kinds = config.kinds();
    let mut slots: Vec<Option<WeakLearner>> = vec![None; kinds.len()];
    let mut boost_states = Vec::new();
    for (s, subset) in subsets.iter().enumerate() {
        let members: Vec<usize> = (0..kinds.len()).filter(|&i| config.subset_of(i) == s).collect();
        if members.is_empty() {
            continue;
        }
        let labels = subset.labels();
        let mut state = BoostState::uniform(subset.len());
        for &i in &members {
            let seed = rng::derive_indexed(config.seed, "learner", i as u64);
            let learner = fit(kinds[i], subset, &state.distribution, &config.params, seed)?;
            if config.variant == Variant::Boosting {
                let row: Vec<i8> = subset
                    .rows()
                    .iter()
                    .map(|r| learner.predict(&r.features).map(Label::sign))
                    .collect::<Result<_>>()?;
                state = boost_step(&row, &labels, &state)?;
            }
            slots[i] = Some(learner);
        }
        if config.variant == Variant::Boosting {
            boost_states.push(state);
        }
    }
    let learners: Vec<WeakLearner> = slots.into_iter().map(|l| l.expect("every learner is assigned a subset")).collect();
    let predictions = predict_matrix(&learners, train)?;
    Ok(TrainedEnsemble {
        learners,
        predictions,
        boost_states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Row;
    use alloc::string::String;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn dataset(points: &[(Vec<f64>, Label)]) -> Dataset {
        let d = points[0].0.len();
        let rows = points
            .iter()
            .enumerate()
            .map(|(i, (f, l))| Row {
                features: f.clone(),
                label: *l,
                date: i as i64,
            })
            .collect();
        Dataset::new(rows, (0..d).map(|i| format!("x{i}")).collect::<Vec<String>>()).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    use Label::{Negative as N, Positive as P};

    #[test]
    fn stump_splits_between_classes() {
        let d = dataset(&[
            (vec![-2.0], N),
            (vec![-1.0], N),
            (vec![1.0], P),
            (vec![2.0], P),
        ]);
        let params = LearnerParams {
            max_depth: 1,
            ..Default::default()
        };
        let h = fit(LearnerKind::DecisionTree, &d, &uniform(4), &params, 0).unwrap();
        match &h.model {
            Model::DecisionTree(t) => match t.nodes[0] {
                Node::Split { threshold, .. } => assert!(threshold > -1.0 && threshold < 1.0),
                _ => panic!("expected a split"),
            },
            _ => panic!("expected a tree"),
        }
        assert_eq!(h.predict(&[-0.5]).unwrap(), N);
        assert_eq!(h.predict(&[0.5]).unwrap(), P);
    }

    #[test]
    fn weighted_tree_follows_heavy_samples() {
        // the two mislabeled-looking points dominate the weight
        let d = dataset(&[
            (vec![0.0], N),
            (vec![1.0], N),
            (vec![2.0], P),
            (vec![3.0], P),
        ]);
        let params = LearnerParams {
            max_depth: 1,
            ..Default::default()
        };
        let w = [0.05, 0.45, 0.45, 0.05];
        let h = fit(LearnerKind::DecisionTree, &d, &w, &params, 0).unwrap();
        assert_eq!(h.predict(&[1.0]).unwrap(), N);
        assert_eq!(h.predict(&[2.0]).unwrap(), P);
    }

    #[test]
    fn knn_one_neighbor_identity() {
        let pts: Vec<(Vec<f64>, Label)> = (0..10)
            .map(|i| (vec![i as f64, (i * i) as f64 % 7.0], if i % 3 == 0 { P } else { N }))
            .collect();
        let d = dataset(&pts);
        let params = LearnerParams {
            k: 1,
            feature_fraction: 1.0,
            ..Default::default()
        };
        let h = fit(LearnerKind::Knn, &d, &uniform(10), &params, 4).unwrap();
        for (x, l) in &pts {
            assert_eq!(h.predict(x).unwrap(), *l);
        }
    }

    #[test]
    fn knn_k_too_large() {
        let d = dataset(&[(vec![0.0], N), (vec![1.0], P)]);
        let params = LearnerParams {
            k: 3,
            ..Default::default()
        };
        assert!(fit(LearnerKind::Knn, &d, &uniform(2), &params, 0).is_err());
    }

    #[test]
    fn knn_even_vote_ties_to_positive() {
        let d = dataset(&[(vec![0.0], N), (vec![1.0], P), (vec![10.0], N), (vec![11.0], N)]);
        let params = LearnerParams {
            k: 2,
            ..Default::default()
        };
        let h = fit(LearnerKind::Knn, &d, &uniform(4), &params, 0).unwrap();
        // nearest two of x=0.5 are one negative, one positive
        assert_eq!(h.predict(&[0.5]).unwrap(), P);
    }

    #[test]
    fn gaussian_nb_boundary_at_midpoint() {
        // two unit-variance Gaussians at -1 and +3, equal priors: Bayes boundary at 1
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = rng::stream(3, "gnb");
        let mut pts = Vec::new();
        for i in 0..20000 {
            let (mu, l) = if i % 2 == 0 { (-1.0, N) } else { (3.0, P) };
            pts.push((vec![mu + normal.sample(&mut rng)], l));
        }
        let d = dataset(&pts);
        let h = fit(LearnerKind::GaussianNb, &d, &uniform(pts.len()), &LearnerParams::default(), 0).unwrap();
        // locate the sign change by bisection
        let (mut lo, mut hi) = (-1.0, 3.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if h.predict(&[mid]).unwrap() == P {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((lo - 1.0).abs() < 0.05, "boundary at {lo}");
    }

    #[test]
    fn logistic_regression_separates_clusters() {
        let pts: Vec<(Vec<f64>, Label)> = (0..40)
            .map(|i| {
                let x = i as f64 / 4.0;
                (vec![x, 1.0], if x > 5.0 { P } else { N })
            })
            .collect();
        let d = dataset(&pts);
        let params = LearnerParams {
            feature_fraction: 1.0,
            lr_epochs: 2000,
            ..Default::default()
        };
        let h = fit(LearnerKind::LogisticRegression, &d, &uniform(40), &params, 0).unwrap();
        assert_eq!(h.predict(&[0.0, 1.0]).unwrap(), N);
        assert_eq!(h.predict(&[9.0, 1.0]).unwrap(), P);
    }

    #[test]
    fn single_class_gives_constant() {
        let d = dataset(&[(vec![0.0], P), (vec![1.0], P), (vec![2.0], P)]);
        for kind in LearnerKind::ALL {
            let params = LearnerParams {
                k: 1,
                ..Default::default()
            };
            let h = fit(kind, &d, &uniform(3), &params, 0).unwrap();
            assert_eq!(h.model, Model::Constant(P));
            assert_eq!(h.kind, kind);
        }
    }

    #[test]
    fn fit_rejects_unnormalized_weights() {
        let d = dataset(&[(vec![0.0], N), (vec![1.0], P)]);
        assert!(fit(LearnerKind::DecisionTree, &d, &[0.5, 0.6], &LearnerParams::default(), 0).is_err());
    }

    #[test]
    fn prediction_matrix_correlations() {
        let d = dataset(&[(vec![0.0], N), (vec![1.0], P), (vec![2.0], P)]);
        let c = WeakLearner::constant(LearnerKind::DecisionTree, 1, P);
        let m = predict_matrix(&[c.clone(), c.clone()], &d).unwrap();
        assert_eq!(m.row(0), &[1, 1, 1]);
        assert_eq!(m.correlation(0, 1), 3);

        let flipped = WeakLearner::constant(LearnerKind::DecisionTree, 1, N);
        let m = predict_matrix(&[c, flipped], &d).unwrap();
        assert_eq!(m.correlation(0, 1), -3);
        assert_eq!(m.label_correlation(0, &d.labels()), 1);
    }

    #[test]
    fn prediction_matrix_dimension_mismatch() {
        let d = dataset(&[(vec![0.0, 1.0], N), (vec![1.0, 0.0], P)]);
        let c = WeakLearner::constant(LearnerKind::Knn, 3, P);
        assert!(matches!(predict_matrix(&[c], &d), Err(Error::DimensionMismatch { .. })));
        assert!(predict_matrix(&[], &d).is_err());
    }

    #[test]
    fn boost_step_all_correct_keeps_uniform() {
        let labels = [P, N, P, N];
        let row = [1, -1, 1, -1];
        let s = boost_step(&row, &labels, &BoostState::uniform(4)).unwrap();
        assert_relative_eq!(s.epsilons[0], EPSILON_MIN);
        for d in &s.distribution {
            assert_relative_eq!(*d, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn boost_step_half_error_is_neutral() {
        let labels = [P, N, P, N];
        let row = [1, 1, -1, -1];
        let s = boost_step(&row, &labels, &BoostState::uniform(4)).unwrap();
        assert_relative_eq!(s.epsilons[0], 0.5);
        assert_relative_eq!(s.real_weights[0], 0.0);
        assert_eq!(s.distribution, vec![0.25; 4]);
    }

    #[test]
    fn boost_step_hand_computed() {
        // eps = 1/4, w = ln(3)/2, Z = sqrt(3)/2, D' = (1/6, 1/6, 1/6, 1/2)
        let labels = [P, P, N, N];
        let row = [1, 1, -1, 1];
        let s = boost_step(&row, &labels, &BoostState::uniform(4)).unwrap();
        assert_relative_eq!(s.epsilons[0], 0.25);
        assert_relative_eq!(s.real_weights[0], 0.5 * 3.0f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(s.normalizers[0], 3.0f64.sqrt() / 2.0, epsilon = 1e-15);
        let expect = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5];
        for (d, e) in s.distribution.iter().zip(expect) {
            assert_relative_eq!(*d, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn mix_apportionment() {
        let mix = Mix::default();
        assert_eq!(mix.counts(50), [25, 25, 0, 0]);
        let thirds = Mix {
            decision_tree: 1.0 / 3.0,
            knn: 1.0 / 3.0,
            gaussian_nb: 1.0 / 3.0,
            logistic_regression: 0.0,
        };
        assert_eq!(thirds.counts(10).iter().sum::<usize>(), 10);
        assert_eq!(thirds.counts(10), [4, 3, 3, 0]);
    }

    fn synthetic(seed: u64) -> Dataset {
        let spec = crate::dataset::SyntheticSpec {
            n_rows: 600,
            seed,
            ..Default::default()
        };
        let (train, _) = crate::dataset::generate_synthetic(&spec).unwrap();
        crate::dataset::rebalance(&train, crate::dataset::RebalanceMode::Undersample, seed).unwrap()
    }

    #[test]
    fn subsampling_partition_and_determinism() {
        let train = synthetic(1);
        let cfg = EnsembleConfig {
            n_learners: 4,
            mix: Mix::default(),
            variant: Variant::Subsampling,
            n_subsets: 2,
            params: LearnerParams::default(),
            seed: 9,
        };
        let per_subset: Vec<usize> = (0..2).map(|s| (0..4).filter(|&i| cfg.subset_of(i) == s).count()).collect();
        assert_eq!(per_subset, vec![2, 2]);
        let a = train_ensemble(&cfg, &train).unwrap();
        assert!(a.boost_states.is_empty());
        assert_eq!(a.predictions.n_learners(), 4);
        assert_eq!(a.predictions.n_samples(), train.len());
        assert_eq!(a, train_ensemble(&cfg, &train).unwrap());
    }

    #[test]
    fn boosting_single_learner_matches_plain_fit() {
        let train = synthetic(2);
        let cfg = EnsembleConfig {
            n_learners: 1,
            mix: Mix::default(),
            variant: Variant::Boosting,
            n_subsets: 1,
            params: LearnerParams::default(),
            seed: 3,
        };
        let e = train_ensemble(&cfg, &train).unwrap();
        let seed = rng::derive_indexed(3, "learner", 0);
        let plain = fit(cfg.kinds()[0], &train, &uniform(train.len()), &cfg.params, seed).unwrap();
        assert_eq!(e.learners[0], plain);
    }

    #[test]
    fn boosting_produces_negative_correlation() {
        // XOR-like data: a stump right on one half is wrong on the other, the
        // reweighted second stump is pushed to disagree with the first
        let mut pts = Vec::new();
        for i in 0..40 {
            let x = i as f64;
            let l = if (i / 10) % 2 == 0 { N } else { P };
            pts.push((vec![x], l));
        }
        let d = dataset(&pts);
        let cfg = EnsembleConfig {
            n_learners: 6,
            mix: Mix {
                decision_tree: 1.0,
                knn: 0.0,
                gaussian_nb: 0.0,
                logistic_regression: 0.0,
            },
            variant: Variant::Boosting,
            n_subsets: 1,
            params: LearnerParams {
                max_depth: 1,
                ..Default::default()
            },
            seed: 0,
        };
        let e = train_ensemble(&cfg, &d).unwrap();
        let h = &e.predictions;
        let negative = (0..6).any(|i| (0..6).any(|j| i != j && h.correlation(i, j) < 0));
        assert!(negative);
    }

    proptest! {
        #[test]
        fn boost_distribution_stays_normalized(
            rows in proptest::collection::vec(proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], 12), 1..8),
            label_bits in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let labels: Vec<Label> = label_bits.iter().map(|&b| if b { P } else { N }).collect();
            let mut s = BoostState::uniform(12);
            for r in &rows {
                s = boost_step(r, &labels, &s).unwrap();
                let sum: f64 = s.distribution.iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-10);
                prop_assert!(s.distribution.iter().all(|&d| d >= 0.0));
                prop_assert!(s.epsilons.iter().all(|&e| (0.0..=1.0).contains(&e)));
            }
        }
    }
}
