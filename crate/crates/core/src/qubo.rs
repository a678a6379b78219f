//! QUBO matrices built from ensemble predictions, their cost function,
//! the relative gap and the exhaustive small-size oracle.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{invalid, Error, Result};
use crate::learners::PredictionMatrix;

/// Largest size accepted by [`brute_force_min`].
pub const BRUTE_FORCE_CAP: usize = 24;

/// Binary weight vector. Ordering is lexicographic starting at bit 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bitstring(Vec<u8>);

impl Bitstring {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("bits must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    /// Bit `i` is `(code >> i) & 1`.
    pub fn from_index(code: u64, n: usize) -> Self {
        Self((0..n).map(|i| ((code >> i) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = u8::from(value);
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] ^= 1;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(invalid(format!("unexpected character {other:?} in bitstring"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }
}

/// Dense symmetric cost matrix; the cost of `w` is `w^T Q w`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboMatrix {
    n: usize,
    q: Vec<f64>,
    pub lambda: f64,
    /// Number of training samples behind the correlations, 0 when unknown.
    pub n_samples: usize,
}

impl QuboMatrix {
    /// Wraps a row-major `n x n` matrix, which must be finite and symmetric.
    pub fn from_dense(n: usize, q: Vec<f64>, lambda: f64) -> Result<Self> {
        if q.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("QUBO entries must be finite"));
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (q[i * n + j], q[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(invalid(format!("Q is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            n,
            q,
            lambda,
            n_samples: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest absolute off-diagonal entry (0 for `n < 2`).
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                m = m.max(self.get(i, j).abs());
            }
        }
        m
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.q.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `sum_{i,j} Q_ij w_i w_j`, lengths assumed equal.
    pub fn energy(&self, w: &[u8]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            if w[i] == 0 {
                continue;
            }
            let row = &self.q[i * n..(i + 1) * n];
            let mut acc = row[i];
            for j in i + 1..n {
                if w[j] == 1 {
                    acc += 2.0 * row[j];
                }
            }
            total += acc;
        }
        total
    }

    /// Cost change from flipping bit `i` of `w`.
    pub fn flip_delta(&self, w: &[u8], i: usize) -> f64 {
        let n = self.n;
        let row = &self.q[i * n..(i + 1) * n];
        let mut field = row[i];
        for j in 0..n {
            if j != i && w[j] == 1 {
                field += 2.0 * row[j];
            }
        }
        if w[i] == 1 {
            -field
        } else {
            field
        }
    }

    pub fn to_file(&self) -> QuboFile {
        let mut entries = Vec::new();
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.get(i, j);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        QuboFile {
            n: self.n,
            lambda: self.lambda,
            entries,
        }
    }

    pub fn from_file(file: &QuboFile) -> Result<Self> {
        let n = file.n;
        let mut q = vec![0.0; n * n];
        for &(i, j, v) in &file.entries {
            if i > j || j >= n {
                return Err(invalid(format!(
                    "entry ({i}, {j}) is not in the upper triangle of a {n}x{n} matrix"
                )));
            }
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
        Self::from_dense(n, q, file.lambda)
    }
}

/// On-disk QUBO: upper-triangle entries `(i, j, Q_ij)` with `i <= j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuboFile {
    pub n: usize,
    pub lambda: f64,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Builds the QBoost QUBO from ensemble predictions on the training set.
///
/// Expanding the squared loss of the averaged vote `(1/N) sum_i w_i h_i`
/// against `y` and dropping the constant gives
/// `Q_ij = Corr(h_i, h_j) / N^2` off the diagonal and
/// `Q_ii = S / N^2 + lambda - 2 Corr(h_i, y) / N` on it, so that `w^T Q w`
/// equals the regularized loss minus `S` for every binary `w`.
pub fn build(h: &PredictionMatrix, labels: &[Label], lambda: f64) -> Result<QuboMatrix> {
    let n = h.n_learners();
    let s = h.n_samples();
    if labels.len() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            found: labels.len(),
        });
    }
    if n == 0 {
        return Err(invalid("no learners"));
    }
    if !lambda.is_finite() {
        return Err(invalid("lambda must be finite"));
    }
    let nf = n as f64;
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = s as f64 / (nf * nf) + lambda - 2.0 * h.label_correlation(i, labels) as f64 / nf;
        for j in i + 1..n {
            let v = h.correlation(i, j) as f64 / (nf * nf);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    Ok(QuboMatrix {
        n,
        q,
        lambda,
        n_samples: s,
    })
}

pub fn cost(q: &QuboMatrix, w: &Bitstring) -> Result<f64> {
    if w.len() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            found: w.len(),
        });
    }
    Ok(q.energy(w.bits()))
}

/// `|(H(w) - H(ref)) / H(ref)|`.
pub fn gap(q: &QuboMatrix, w: &Bitstring, reference: &Bitstring) -> Result<f64> {
    let r = cost(q, reference)?;
    gap_from_costs(cost(q, w)?, r)
}

pub fn gap_from_costs(cost: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::ZeroReferenceCost);
    }
    Ok(((cost - reference) / reference).abs())
}

/// Exhaustive minimum over all `2^n` bitstrings, `n <= BRUTE_FORCE_CAP`.
///
/// Ties (within 1e-12 relative) resolve to the lexicographically smallest
/// bitstring.
pub fn brute_force_min(q: &QuboMatrix) -> Result<(Bitstring, f64)> {
    let n = q.n();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::BruteForceTooLarge {
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    if n == 0 {
        return Ok((Bitstring::zeros(0), 0.0));
    }
    let tol = 1e-9 * (1.0 + q.max_abs_entry() * n as f64);
    // Gray-code walk with incremental local fields
    let mut w = vec![0u8; n];
    let mut field = q.diagonal();
    let mut value = 0.0;
    let mut best = 0.0;
    let mut candidates: Vec<u32> = vec![0];
    let mut code: u32 = 0;
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        let delta = if w[i] == 1 { -field[i] } else { field[i] };
        value += delta;
        let sign = if w[i] == 1 { -2.0 } else { 2.0 };
        w[i] ^= 1;
        code ^= 1 << i;
        let row = &q.q[i * n..(i + 1) * n];
        for (j, f) in field.iter_mut().enumerate() {
            if j != i {
                *f += sign * row[j];
            }
        }
        if value < best - tol {
            best = value;
            candidates.retain(|_| false);
            candidates.push(code);
        } else if value <= best + tol {
            if value < best {
                best = value;
            }
            candidates.push(code);
        }
    }
    let mut winner: Option<(Bitstring, f64)> = None;
    let scored: Vec<(Bitstring, f64)> = candidates
        .into_iter()
        .map(|c| {
            let b = Bitstring::from_index(u64::from(c), n);
            let v = q.energy(b.bits());
            (b, v)
        })
        .collect();
    let min = scored.iter().fold(f64::INFINITY, |m, (_, v)| m.min(*v));
    let tie = 1e-12 * min.abs().max(1.0);
    for (b, v) in scored {
        if v <= min + tie && winner.as_ref().is_none_or(|(wb, _)| b < *wb) {
            winner = Some((b, v));
        }
    }
    Ok(winner.expect("at least one candidate"))
}

/// Random instance with repulsive couplings `Q_ij ~ U(0, 1)` and rewarding
/// fields `Q_ii ~ U(-diagonal_scale, 0)`. Positive couplings are the ones
/// a van der Waals register can actually represent.
pub fn random_qubo<R: rand::Rng + ?Sized>(n: usize, diagonal_scale: f64, rng: &mut R) -> Result<QuboMatrix> {
    if !(diagonal_scale.is_finite() && diagonal_scale > 0.0) {
        return Err(invalid(format!("diagonal_scale must be positive, got {diagonal_scale}")));
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = -diagonal_scale * rng.random::<f64>();
        for j in i + 1..n {
            let v = rng.random::<f64>();
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    QuboMatrix::from_dense(n, q, 0.0)
}

/// Human-readable matrix dump, mostly for logs.
pub fn describe(q: &QuboMatrix) -> String {
    format!(
        "QUBO n={} lambda={} S={} max|Q|={:.4}",
        q.n(),
        q.lambda,
        q.n_samples,
        q.max_abs_entry()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::string::ToString;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_h(n: usize, s: usize, seed: u64) -> (PredictionMatrix, Vec<Label>) {
        let mut r = rng::stream(seed, "h");
        let labels: Vec<Label> = (0..s)
            .map(|_| if r.random::<bool>() { Label::Positive } else { Label::Negative })
            .collect();
        let rows = (0..n)
            .map(|_| {
                labels
                    .iter()
                    .map(|l| if r.random::<f64>() < 0.7 { l.sign() } else { -l.sign() })
                    .collect()
            })
            .collect();
        (PredictionMatrix::from_rows(rows).unwrap(), labels)
    }

    /// Squared loss of the averaged vote plus the L0 penalty, evaluated directly.
    fn direct_loss(h: &PredictionMatrix, labels: &[Label], lambda: f64, w: &Bitstring) -> f64 {
        let n = h.n_learners() as f64;
        let mut total = 0.0;
        for (s, l) in labels.iter().enumerate() {
            let vote: f64 = (0..h.n_learners())
                .filter(|&i| w.get(i))
                .map(|i| f64::from(h.get(i, s)))
                .sum::<f64>()
                / n;
            total += (vote - l.value()).powi(2);
        }
        total + lambda * w.count_ones() as f64
    }

    /// Term-by-term double loop.
    fn double_loop(q: &QuboMatrix, w: &Bitstring) -> f64 {
        let mut t = 0.0;
        for i in 0..q.n() {
            for j in 0..q.n() {
                t += q.get(i, j) * f64::from(w.bits()[i]) * f64::from(w.bits()[j]);
            }
        }
        t
    }

    #[test]
    fn single_perfect_learner() {
        let labels = [Label::Positive, Label::Negative, Label::Positive, Label::Negative];
        let h = PredictionMatrix::from_rows(vec![labels.iter().map(|l| l.sign()).collect()]).unwrap();
        let q = build(&h, &labels, 0.0).unwrap();
        assert_relative_eq!(q.get(0, 0), -4.0);
    }

    #[test]
    fn identical_learners_correlate_fully() {
        let labels = [Label::Positive, Label::Negative, Label::Positive];
        let row: Vec<i8> = vec![1, 1, -1];
        let h = PredictionMatrix::from_rows(vec![row.clone(), row]).unwrap();
        assert_eq!(h.correlation(0, 1), 3);
        let q = build(&h, &labels, 0.0).unwrap();
        // stored scaled by 1/N^2, and counted once per ordered pair
        assert_relative_eq!(q.get(0, 1), 3.0 / 4.0);
        let both = Bitstring::ones(2);
        let cross = q.energy(both.bits()) - q.get(0, 0) - q.get(1, 1);
        assert_relative_eq!(cross, 2.0 * 3.0 / 4.0);
    }

    #[test]
    fn build_dimension_mismatch() {
        let (h, labels) = random_h(3, 10, 1);
        assert!(build(&h, &labels[..9], 0.1).is_err());
    }

    #[test]
    fn argmin_matches_direct_loss_n3() {
        for seed in 0..10 {
            let (h, labels) = random_h(3, 25, seed);
            let q = build(&h, &labels, 0.1).unwrap();
            for code in 0..8 {
                let w = Bitstring::from_index(code, 3);
                let constant = labels.len() as f64;
                assert_relative_eq!(q.energy(w.bits()) + constant, direct_loss(&h, &labels, 0.1, &w), epsilon = 1e-9);
            }
            let (best, _) = brute_force_min(&q).unwrap();
            let oracle = (0..8)
                .map(|c| Bitstring::from_index(c, 3))
                .min_by(|a, b| direct_loss(&h, &labels, 0.1, a).total_cmp(&direct_loss(&h, &labels, 0.1, b)))
                .unwrap();
            assert_eq!(best, oracle);
        }
    }

    #[test]
    fn cost_basics() {
        let (h, labels) = random_h(10, 30, 4);
        let q = build(&h, &labels, 0.3).unwrap();
        assert_eq!(cost(&q, &Bitstring::zeros(10)).unwrap(), 0.0);
        let mut e = Bitstring::zeros(10);
        e.set(3, true);
        assert_relative_eq!(cost(&q, &e).unwrap(), q.get(3, 3));
        let mut r = rng::stream(4, "w");
        for _ in 0..20 {
            let w = Bitstring::from_index(r.random_range(0..1024), 10);
            assert_relative_eq!(cost(&q, &w).unwrap(), double_loop(&q, &w), epsilon = 1e-9);
        }
        assert!(cost(&q, &Bitstring::zeros(9)).is_err());
    }

    #[test]
    fn flip_delta_matches_difference() {
        let (h, labels) = random_h(7, 20, 8);
        let q = build(&h, &labels, 0.2).unwrap();
        let w = Bitstring::from_index(0b1011001, 7);
        for i in 0..7 {
            let mut v = w.clone();
            v.flip(i);
            assert_relative_eq!(
                q.flip_delta(w.bits(), i),
                q.energy(v.bits()) - q.energy(w.bits()),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn brute_force_trivial_cases() {
        let n = 5;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let q = QuboMatrix::from_dense(n, eye.clone(), 0.0).unwrap();
        assert_eq!(brute_force_min(&q).unwrap(), (Bitstring::zeros(n), 0.0));
        let neg: Vec<f64> = eye.iter().map(|v| -v).collect();
        let q = QuboMatrix::from_dense(n, neg, 0.0).unwrap();
        assert_eq!(brute_force_min(&q).unwrap(), (Bitstring::ones(n), -(n as f64)));
    }

    #[test]
    fn brute_force_tie_breaks_lexicographically() {
        // two optimal single-bit strings: 01 and 10; 01 < 10 lexicographically
        let q = QuboMatrix::from_dense(2, vec![-1.0, 5.0, 5.0, -1.0], 0.0).unwrap();
        let (b, c) = brute_force_min(&q).unwrap();
        assert_eq!(b.to_string(), "01");
        assert_eq!(c, -1.0);
    }

    #[test]
    fn brute_force_cap() {
        let q = QuboMatrix::from_dense(25, vec![0.0; 625], 0.0).unwrap();
        assert!(matches!(brute_force_min(&q), Err(Error::BruteForceTooLarge { .. })));
    }

    #[test]
    fn gap_cases() {
        let q = QuboMatrix::from_dense(2, vec![-100.0, 0.5, 0.5, -99.0], 0.0).unwrap();
        let r = Bitstring::from_index(1, 2);
        let w = Bitstring::from_index(2, 2);
        assert_eq!(gap(&q, &r, &r).unwrap(), 0.0);
        assert_relative_eq!(gap(&q, &w, &r).unwrap(), 0.01);
        assert_eq!(gap(&q, &r, &Bitstring::zeros(2)), Err(Error::ZeroReferenceCost));
    }

    #[test]
    fn file_round_trip() {
        let (h, labels) = random_h(6, 17, 2);
        let q = build(&h, &labels, 0.37).unwrap();
        let mut back = QuboMatrix::from_file(&q.to_file()).unwrap();
        back.n_samples = q.n_samples;
        assert_eq!(back, q);
    }

    #[test]
    fn from_file_rejects_lower_triangle() {
        let f = QuboFile {
            n: 2,
            lambda: 0.0,
            entries: vec![(1, 0, 1.0)],
        };
        assert!(QuboMatrix::from_file(&f).is_err());
    }

    #[test]
    fn bitstring_text() {
        let b: Bitstring = "0110".parse().unwrap();
        assert_eq!(b, Bitstring::from_index(0b0110, 4));
        assert_eq!(b.to_string(), "0110");
        assert!("01x".parse::<Bitstring>().is_err());
    }

    proptest! {
        #[test]
        fn expansion_matches_direct_loss(seed in 0u64..1000, n in 1usize..9, lambda in 0.0f64..2.0) {
            let (h, labels) = random_h(n, 15, seed);
            let q = build(&h, &labels, lambda).unwrap();
            for code in 0..(1u64 << n) {
                let w = Bitstring::from_index(code, n);
                let lhs = q.energy(w.bits()) + labels.len() as f64;
                prop_assert!((lhs - direct_loss(&h, &labels, lambda, &w)).abs() < 1e-9);
            }
        }

        #[test]
        fn gap_nonnegative(seed in 0u64..500, code in 0u64..64) {
            let (h, labels) = random_h(6, 20, seed);
            let q = build(&h, &labels, 0.5).unwrap();
            let (best, c) = brute_force_min(&q).unwrap();
            prop_assume!(c != 0.0);
            let w = Bitstring::from_index(code, 6);
            let g = gap(&q, &w, &best).unwrap();
            prop_assert!(g >= 0.0);
            prop_assert_eq!(g == 0.0, cost(&q, &w).unwrap() == c);
        }
    }
}
