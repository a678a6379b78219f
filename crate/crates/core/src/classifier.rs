//! Strong classifier built from binary learner weights, its sign threshold,
//! and grid-search tuning of the regularization strength.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_split, Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::learners::{predict_matrix, train_ensemble, EnsembleConfig, PredictionMatrix, WeakLearner};
use crate::metrics::{pr_curve, precision_at_recall};
use crate::qubo::{brute_force_min, build, Bitstring};
use crate::rng;

/// Ensemble size at which the regularization strength is tuned.
pub const TUNING_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongClassifier {
    pub learners: Vec<WeakLearner>,
    pub weights: Bitstring,
    /// Decision offset subtracted from the weighted vote.
    pub threshold: f64,
}

impl StrongClassifier {
    pub fn new(learners: Vec<WeakLearner>, weights: Bitstring, threshold: f64) -> Result<Self> {
        if learners.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: learners.len(),
                found: weights.len(),
            });
        }
        if !threshold.is_finite() {
            return Err(invalid("threshold must be finite"));
        }
        if weights.count_ones() == 0 {
            log::warn!("strong classifier has no selected learner");
        }
        Ok(Self {
            learners,
            weights,
            threshold,
        })
    }

    /// Builds the classifier with the sign threshold computed on `train`.
    pub fn fit_threshold(learners: Vec<WeakLearner>, weights: Bitstring, train: &Dataset) -> Result<Self> {
        let t = compute_threshold(&learners, &weights, train)?;
        Self::new(learners, weights, t)
    }

    pub fn n_learners(&self) -> usize {
        self.learners.len()
    }

    /// No learner selected; every prediction then reduces to `sign(-T)`.
    pub fn is_degenerate(&self) -> bool {
        self.weights.count_ones() == 0
    }

    /// `sum_i w_i h_i(x)`.
    pub fn vote(&self, x: &[f64]) -> Result<f64> {
        let mut v = 0i64;
        for (l, &w) in self.learners.iter().zip(self.weights.bits()) {
            if w == 1 {
                v += i64::from(l.predict(x)?.sign());
            }
        }
        Ok(v as f64)
    }

    /// Label and margin `sum_i w_i h_i(x) - T`; a zero margin maps to +1.
    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let margin = self.vote(x)? - self.threshold;
        Ok((Label::from_sign(margin), margin))
    }

    pub fn margins(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.rows().iter().map(|r| self.predict(&r.features).map(|p| p.1)).collect()
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<Label>> {
        data.rows().iter().map(|r| self.predict(&r.features).map(|p| p.0)).collect()
    }

    /// Labels under an arbitrary real threshold in place of `T`.
    pub fn predict_with_threshold(&self, data: &Dataset, threshold: f64) -> Result<Vec<Label>> {
        data.rows()
            .iter()
            .map(|r| self.vote(&r.features).map(|v| Label::from_sign(v - threshold)))
            .collect()
    }
}

/// Sign of the mean normalized vote over the training samples, in {-1, 0, 1}.
pub fn compute_threshold(ensemble: &[WeakLearner], weights: &Bitstring, train: &Dataset) -> Result<f64> {
    let h = predict_matrix(ensemble, train)?;
    threshold_from_predictions(&h, weights)
}

/// Same as [`compute_threshold`] from a precomputed prediction matrix.
pub fn threshold_from_predictions(h: &PredictionMatrix, weights: &Bitstring) -> Result<f64> {
    if weights.len() != h.n_learners() {
        return Err(Error::DimensionMismatch {
            expected: h.n_learners(),
            found: weights.len(),
        });
    }
    // the 1/(S N) factor is positive, so the sign of the integer total decides
    let mut total = 0i64;
    for i in (0..h.n_learners()).filter(|&i| weights.get(i)) {
        total += h.row(i).iter().map(|&v| i64::from(v)).sum::<i64>();
    }
    Ok(total.signum() as f64)
}

/// `lambda_10 * 10 / N`.
pub fn scale_lambda(lambda_10: f64, n_learners: usize) -> f64 {
    lambda_10 * TUNING_SIZE as f64 / n_learners as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// Validation precision at the recall target; `None` when unreachable.
    pub precision: Option<f64>,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub lambda_10: f64,
    /// Value to use at the configured ensemble size.
    pub lambda: f64,
    pub grid: Vec<GridPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningOptions {
    pub train_fraction: f64,
    pub recall_target: f64,
    pub n_thresholds: usize,
}

impl Default for TuningOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            recall_target: crate::metrics::DEFAULT_RECALL_TARGET,
            n_thresholds: 200,
        }
    }
}

/// Grid search at ten learners on a stratified split, weights from the
/// exhaustive solver, scored by validation precision at the recall target.
///
/// Ties and unreachable targets resolve to the earliest grid value. The
/// winner is rescaled to `config.n_learners`.
pub fn tune_lambda(
    config: &EnsembleConfig,
    train: &Dataset,
    grid: &[f64],
    seed: u64,
    options: &TuningOptions,
) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if grid.iter().any(|l| !l.is_finite()) {
        return Err(invalid("lambda grid values must be finite"));
    }
    config.validate()?;
    let (fit_part, validation) = stratified_split(train, options.train_fraction, rng::derive(seed, "tune-split"))?;
    let small = EnsembleConfig {
        n_learners: TUNING_SIZE,
        ..config.clone()
    };
    let ensemble = train_ensemble(&small, &fit_part)?;
    let labels = fit_part.labels();
    let val_labels = validation.labels();
    let val_h = predict_matrix(&ensemble.learners, &validation)?;

    let mut points = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let q = build(&ensemble.predictions, &labels, lambda)?;
        let (w, _) = brute_force_min(&q)?;
        let t = threshold_from_predictions(&ensemble.predictions, &w)?;
        let margins: Vec<f64> = (0..val_h.n_samples())
            .map(|s| {
                let v: i64 = (0..val_h.n_learners())
                    .filter(|&i| w.get(i))
                    .map(|i| i64::from(val_h.get(i, s)))
                    .sum();
                v as f64 - t
            })
            .collect();
        let precision = pr_curve(&margins, &val_labels, options.n_thresholds)
            .ok()
            .and_then(|c| precision_at_recall(&c, options.recall_target).ok());
        log::debug!("lambda {lambda}: precision {precision:?}, {} selected", w.count_ones());
        points.push(GridPoint {
            lambda,
            precision,
            n_selected: w.count_ones(),
        });
    }
    let mut best = 0;
    for (k, p) in points.iter().enumerate() {
        if p.precision.unwrap_or(f64::NEG_INFINITY) > points[best].precision.unwrap_or(f64::NEG_INFINITY) {
            best = k;
        }
    }
    let lambda_10 = points[best].lambda;
    Ok(LambdaTuning {
        lambda_10,
        lambda: scale_lambda(lambda_10, config.n_learners),
        grid: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Row, SyntheticSpec};
    use crate::learners::{LearnerKind, Mix, Variant};
    use alloc::string::String;
    use alloc::vec;
    use proptest::prelude::*;
    use Label::{Negative as N, Positive as P};

    fn constant(label: Label) -> WeakLearner {
        WeakLearner::constant(LearnerKind::DecisionTree, 1, label)
    }

    fn points(xs: &[f64]) -> Dataset {
        let rows = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| Row {
                features: vec![x],
                label: if i % 2 == 0 { P } else { N },
                date: i as i64,
            })
            .collect();
        Dataset::new(rows, vec![String::from("x")]).unwrap()
    }

    fn bits(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    fn small_synthetic() -> (Dataset, Dataset) {
        generate_synthetic(&SyntheticSpec {
            n_rows: 600,
            n_features: 6,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn config(n: usize) -> EnsembleConfig {
        EnsembleConfig {
            n_learners: n,
            mix: Mix::default(),
            variant: Variant::Subsampling,
            n_subsets: 2,
            params: Default::default(),
            seed: 3,
        }
    }

    #[test]
    fn threshold_positive_and_degenerate() {
        let d = points(&[0.0, 1.0, 2.0]);
        let ens = vec![constant(P), constant(P)];
        assert_eq!(compute_threshold(&ens, &bits("10"), &d).unwrap(), 1.0);
        assert_eq!(compute_threshold(&ens, &bits("11"), &d).unwrap(), 1.0);
        assert_eq!(compute_threshold(&ens, &bits("00"), &d).unwrap(), 0.0);
    }

    #[test]
    fn threshold_hand_case() {
        // h1 = [+,+,-,+], h2 = [-,+,-,-]; mean of (h1+h2)/2 = (0+2-2+0)/8 = 0
        let h = PredictionMatrix::from_rows(vec![vec![1, 1, -1, 1], vec![-1, 1, -1, -1]]).unwrap();
        assert_eq!(threshold_from_predictions(&h, &bits("11")).unwrap(), 0.0);
        // h1 alone: (1+1-1+1)/4 = 0.5 > 0
        assert_eq!(threshold_from_predictions(&h, &bits("10")).unwrap(), 1.0);
        // h2 alone: (-1+1-1-1)/4 = -0.5 < 0
        assert_eq!(threshold_from_predictions(&h, &bits("01")).unwrap(), -1.0);
        assert!(threshold_from_predictions(&h, &bits("1")).is_err());
    }

    #[test]
    fn single_learner_delegates() {
        let (train, test) = small_synthetic();
        let ens = train_ensemble(&config(4), &train).unwrap();
        let c = StrongClassifier::new(ens.learners.clone(), bits("0010"), 0.0).unwrap();
        for r in test.rows() {
            assert_eq!(c.predict(&r.features).unwrap().0, ens.learners[2].predict(&r.features).unwrap());
        }
    }

    #[test]
    fn disagreeing_pair_ties_to_positive() {
        let c = StrongClassifier::new(vec![constant(P), constant(N)], bits("11"), 0.0).unwrap();
        assert_eq!(c.predict(&[0.3]).unwrap(), (P, 0.0));
        assert!(c.predict(&[0.3, 0.1]).is_err());
    }

    #[test]
    fn matches_direct_evaluation() {
        let (train, test) = small_synthetic();
        let ens = train_ensemble(&config(8), &train).unwrap();
        let w = bits("10110110");
        let c = StrongClassifier::fit_threshold(ens.learners.clone(), w.clone(), &train).unwrap();
        // oracle: per-sample loop over learners, threshold from an f64 mean
        let mut mean = 0.0;
        for r in train.rows() {
            let mut v = 0.0;
            for (i, l) in ens.learners.iter().enumerate() {
                v += f64::from(w.bits()[i]) * l.predict(&r.features).unwrap().value();
            }
            mean += v / 8.0;
        }
        mean /= train.len() as f64;
        let t = if mean > 0.0 { 1.0 } else if mean < 0.0 { -1.0 } else { 0.0 };
        assert_eq!(c.threshold, t);
        for r in test.rows() {
            let mut v = 0.0;
            for (i, l) in ens.learners.iter().enumerate() {
                v += f64::from(w.bits()[i]) * l.predict(&r.features).unwrap().value();
            }
            let expected = if v - t >= 0.0 { P } else { N };
            assert_eq!(c.predict(&r.features).unwrap().0, expected);
        }
    }

    #[test]
    fn degenerate_flagged() {
        let c = StrongClassifier::new(vec![constant(P)], bits("0"), 0.0).unwrap();
        assert!(c.is_degenerate());
        assert!(StrongClassifier::new(vec![constant(P)], bits("01"), 0.0).is_err());
    }

    #[test]
    fn lambda_scaling() {
        assert!((scale_lambda(0.8, 20) - 0.4).abs() < 1e-15);
        assert_eq!(scale_lambda(0.37, 10), 0.37);
    }

    #[test]
    fn tuning_grid_edge_cases() {
        let (train, _) = small_synthetic();
        let opts = TuningOptions::default();
        assert!(tune_lambda(&config(20), &train, &[], 1, &opts).is_err());
        let one = tune_lambda(&config(10), &train, &[0.05], 1, &opts).unwrap();
        assert_eq!(one.lambda_10, 0.05);
        assert_eq!(one.lambda, 0.05);
        let many = tune_lambda(&config(20), &train, &[0.0, 0.05, 0.2, 1e4], 1, &opts).unwrap();
        assert_eq!(many.grid.len(), 4);
        assert_eq!(many.lambda, many.lambda_10 / 2.0);
        // large lambda drives every weight to zero
        assert_eq!(many.grid[3].n_selected, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn subset_consistency(mask in proptest::collection::vec(0u8..2, 6), t in -1i8..=1) {
            let (train, test) = small_synthetic();
            let ens = train_ensemble(&config(6), &train).unwrap();
            let full = StrongClassifier::new(ens.learners.clone(), Bitstring::from_bits(mask.clone()).unwrap(), t as f64).unwrap();
            let sub_learners: Vec<_> = ens.learners.iter().zip(&mask).filter(|(_, &m)| m == 1).map(|(l, _)| l.clone()).collect();
            let k = sub_learners.len();
            let sub = StrongClassifier::new(sub_learners, Bitstring::ones(k), t as f64).unwrap();
            for r in test.rows().iter().take(40) {
                prop_assert_eq!(full.predict(&r.features).unwrap(), sub.predict(&r.features).unwrap());
            }
        }

        #[test]
        fn flipping_one_vote_moves_margin_by_two(votes in proptest::collection::vec(any::<bool>(), 1..8), flip in 0usize..8) {
            let flip = flip % votes.len();
            let make = |v: &[bool]| {
                let learners = v.iter().map(|&b| constant(if b { P } else { N })).collect();
                StrongClassifier::new(learners, Bitstring::ones(v.len()), 1.0).unwrap()
            };
            let mut flipped = votes.clone();
            flipped[flip] = !flipped[flip];
            let a = make(&votes).predict(&[0.0]).unwrap().1;
            let b = make(&flipped).predict(&[0.0]).unwrap().1;
            prop_assert_eq!((a - b).abs(), 2.0);
        }
    }
}
