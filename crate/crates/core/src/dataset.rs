//! Labeled tabular data with ordinal dates: construction, synthetic
//! generation, class rebalancing and the temporal / stratified splits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Binary class label. `Positive` is the minority class of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(v: f64) -> Self {
        if v >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.sign())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: Label,
    /// Ordinal day number. Only its ordering is used.
    pub date: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<Row>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Row>, feature_names: Vec<String>) -> Result<Self> {
        let dim = feature_names.len();
        for row in &rows {
            if row.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.features.len(),
                });
            }
            if row.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite feature value"));
            }
        }
        Ok(Self {
            rows,
            feature_names,
        })
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn n_positive(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.label == Label::Positive)
            .count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.n_positive() as f64 / self.rows.len() as f64
    }

    /// New dataset made of the rows at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    fn class_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut neg = Vec::new();
        let mut pos = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            match r.label {
                Label::Negative => neg.push(i),
                Label::Positive => pos.push(i),
            }
        }
        (neg, pos)
    }
}

/// Parameters of the synthetic stand-in for the credit-rating data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_features: usize,
    pub positive_fraction_train: f64,
    pub positive_fraction_test: f64,
    pub n_periods: usize,
    pub seed: u64,
    /// Size of the test set relative to `n_rows`.
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,
}

fn default_test_ratio() -> f64 {
    0.4
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_rows: 4000,
            n_features: 12,
            positive_fraction_train: 0.09,
            positive_fraction_test: 0.12,
            n_periods: 8,
            seed: 7,
            test_ratio: default_test_ratio(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("positive_fraction_train", self.positive_fraction_train),
            ("positive_fraction_test", self.positive_fraction_test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if self.n_periods == 0 {
            return Err(invalid("n_periods must be at least 1"));
        }
        if self.n_features == 0 || self.n_rows < 2 {
            return Err(invalid("need at least one feature and two rows"));
        }
        if !(self.test_ratio > 0.0 && self.test_ratio.is_finite()) {
            return Err(invalid("test_ratio must be positive"));
        }
        Ok(())
    }
}

const DAYS_PER_PERIOD: i64 = 365;

/// Class-conditional means for one period.
struct PeriodModel {
    negative: Vec<f64>,
    positive: [Vec<f64>; 2],
}

fn period_models<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Vec<PeriodModel> {
    let d = spec.n_features;
    let unit = Normal::new(0.0, 1.0).unwrap();
    // informative directions; the trailing third of the features is noise
    let n_informative = (2 * d).div_ceil(3).max(1);
    let base_sep: Vec<f64> = (0..d)
        .map(|f| {
            if f < n_informative {
                let mag = 0.35 + 0.45 * rng.random::<f64>();
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            } else {
                0.0
            }
        })
        .collect();
    let mut drift = alloc::vec![0.0; d];
    // one extra period for the test set, which follows the training span
    (0..=spec.n_periods)
        .map(|_| {
            for v in drift.iter_mut() {
                *v += 0.3 * unit.sample(rng);
            }
            let sep: Vec<f64> = base_sep
                .iter()
                .map(|s| s * (0.4 + 1.2 * rng.random::<f64>()))
                .collect();
            let negative = drift.clone();
            let first = drift.iter().zip(&sep).map(|(m, s)| m + s).collect();
            // second mixture component stresses a different half of the signal
            let second = drift
                .iter()
                .zip(&sep)
                .enumerate()
                .map(|(f, (m, s))| if f % 2 == 0 { m + 1.6 * s } else { m + 0.2 * s })
                .collect();
            PeriodModel {
                negative,
                positive: [first, second],
            }
        })
        .collect()
}

fn draw_rows<R: Rng>(
    n: usize,
    positive_fraction: f64,
    periods: core::ops::Range<usize>,
    models: &[PeriodModel],
    rng: &mut R,
) -> Vec<Row> {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let n_pos = ((n as f64) * positive_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| {
            if i < n_pos {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    labels.shuffle(rng);
    let span = periods.end - periods.start;
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let period = periods.start + i * span / n;
            let date = period as i64 * DAYS_PER_PERIOD + rng.random_range(0..DAYS_PER_PERIOD);
            let model = &models[period];
            let mean = match label {
                Label::Negative => &model.negative,
                Label::Positive => &model.positive[usize::from(rng.random::<bool>())],
            };
            let features = mean.iter().map(|m| m + unit.sample(rng)).collect();
            Row {
                features,
                label,
                date,
            }
        })
        .collect()
}

/// Draws a train/test pair from drifting class-conditional Gaussian mixtures.
///
/// Training rows cover `n_periods` consecutive periods; test rows come from
/// the period right after. Positive counts are exact up to rounding.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut model_rng = rng::stream(spec.seed, "synthetic/model");
    let models = period_models(spec, &mut model_rng);
    let names: Vec<String> = (0..spec.n_features).map(|f| format!("f{f}")).collect();

    let mut rng_train = rng::stream(spec.seed, "synthetic/train");
    let train_rows = draw_rows(
        spec.n_rows,
        spec.positive_fraction_train,
        0..spec.n_periods,
        &models,
        &mut rng_train,
    );
    let n_test = ((spec.n_rows as f64) * spec.test_ratio).round().max(2.0) as usize;
    let mut rng_test = rng::stream(spec.seed, "synthetic/test");
    let test_rows = draw_rows(
        n_test,
        spec.positive_fraction_test,
        spec.n_periods..spec.n_periods + 1,
        &models,
        &mut rng_test,
    );
    Ok((
        Dataset::new(train_rows, names.clone())?,
        Dataset::new(test_rows, names)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceMode {
    Undersample,
    Oversample,
}

/// Equalizes class counts, returning the rows in shuffled order.
pub fn rebalance(d: &Dataset, mode: RebalanceMode, seed: u64) -> Result<Dataset> {
    let (neg, pos) = d.class_indices();
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut rng = rng::stream(seed, "rebalance");
    let (mut minority, mut majority) = if pos.len() <= neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut picked = match mode {
        RebalanceMode::Undersample => {
            majority.shuffle(&mut rng);
            majority.truncate(minority.len());
            minority.extend(majority);
            minority
        }
        RebalanceMode::Oversample => {
            let extra = majority.len() - minority.len();
            let draws: Vec<usize> = (0..extra)
                .map(|_| minority[rng.random_range(0..minority.len())])
                .collect();
            minority.extend(draws);
            minority.extend(majority);
            minority
        }
    };
    picked.shuffle(&mut rng);
    Ok(d.select(&picked))
}

/// Splits rows into `n_subsets` contiguous, date-ordered chunks of near-equal size.
pub fn temporal_subsample(d: &Dataset, n_subsets: usize) -> Result<Vec<Dataset>> {
    if n_subsets == 0 {
        return Err(invalid("n_subsets must be at least 1"));
    }
    if n_subsets > d.len() {
        return Err(invalid(format!(
            "cannot split {} rows into {n_subsets} subsets",
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by_key(|&i| d.rows[i].date);
    let base = d.len() / n_subsets;
    let extra = d.len() % n_subsets;
    let mut out = Vec::with_capacity(n_subsets);
    let mut start = 0;
    for k in 0..n_subsets {
        let size = base + usize::from(k < extra);
        out.push(d.select(&order[start..start + size]));
        start += size;
    }
    Ok(out)
}

/// Stratified shuffled split; both parts keep the input row order.
pub fn stratified_split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let (neg, pos) = d.class_indices();
    for (label, idx) in [(Label::Negative, &neg), (Label::Positive, &pos)] {
        if idx.len() < 2 {
            return Err(Error::TooFewInClass {
                label: label.sign(),
                count: idx.len(),
                required: 2,
            });
        }
    }
    let mut rng = rng::stream(seed, "stratified_split");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in [neg, pos] {
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * train_fraction)
            .round()
            .clamp(1.0, (idx.len() - 1) as f64) as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((d.select(&train), d.select(&test)))
}
