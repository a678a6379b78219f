//! Aggregation of solver traces into gap-convergence curves, cycles to a
//! gap threshold, and scaling fits.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qubo::{QuboMatrix, BRUTE_FORCE_CAP};
use crate::solvers::SolveTrace;

/// Gap below which a bitstring counts as good enough.
pub const DEFAULT_GAP_THRESHOLD: f64 = 0.01;

/// Gap assigned before a trace has scored anything: the all-zeros
/// bitstring, cost 0, always has gap 1.
pub const UNSCORED_GAP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub mean: Vec<f64>,
    /// Sample standard deviation across instances; zero for one instance.
    pub std: Vec<f64>,
    pub n_instances: usize,
}

/// Per-cycle mean and spread of the best gap across instances. Traces of
/// unequal length are cut to the shortest.
pub fn gap_convergence(traces: &[SolveTrace], reference_costs: &[f64]) -> Result<GapSeries> {
    if traces.is_empty() {
        return Err(invalid("need at least one trace"));
    }
    if traces.len() != reference_costs.len() {
        return Err(Error::DimensionMismatch {
            expected: traces.len(),
            found: reference_costs.len(),
        });
    }
    let len = traces.iter().map(SolveTrace::len).min().unwrap_or(0);
    if traces.iter().any(|t| t.len() != len) {
        log::warn!("traces differ in length; truncating to {len} cycles");
    }
    let gaps: Vec<Vec<f64>> = traces
        .iter()
        .zip(reference_costs)
        .map(|(t, &r)| Ok(t.best_gaps(r)?.into_iter().take(len).map(|g| g.unwrap_or(UNSCORED_GAP)).collect()))
        .collect::<Result<_>>()?;
    let k = gaps.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for c in 0..len {
        let m = gaps.iter().map(|g| g[c]).sum::<f64>() / k;
        mean[c] = m;
        if gaps.len() > 1 {
            let v = gaps.iter().map(|g| (g[c] - m).powi(2)).sum::<f64>() / (k - 1.0);
            std[c] = v.sqrt();
        }
    }
    Ok(GapSeries {
        mean,
        std,
        n_instances: gaps.len(),
    })
}

/// First 1-based cycle whose value is below `threshold`.
pub fn cycles_to_gap(series: &[f64], threshold: f64) -> Result<Option<usize>> {
    if !(threshold > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    Ok(series.iter().position(|&g| g < threshold).map(|i| i + 1))
}

/// [`cycles_to_gap`] on a single trace's best-gap sequence.
pub fn trace_cycles_to_gap(trace: &SolveTrace, reference_cost: f64, threshold: f64) -> Result<Option<usize>> {
    let series: Vec<f64> = trace
        .best_gaps(reference_cost)?
        .into_iter()
        .map(|g| g.unwrap_or(UNSCORED_GAP))
        .collect();
    cycles_to_gap(&series, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    /// `a N^b`
    PowerLaw,
    /// `a e^(b N)`
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub coefficients: (f64, f64),
    pub r_squared: f64,
    /// Goodness of the model that lost.
    pub other_r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

/// Slope, intercept and r² of an ordinary least-squares line.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Least squares on `(ln N, ln c)` and on `(N, ln c)`; the higher r² wins,
/// the power law on ties.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(invalid("need at least three points"));
    }
    if points.iter().any(|&(n, c)| !(n > 0.0 && c > 0.0 && n.is_finite() && c.is_finite())) {
        return Err(invalid("scaling points must be positive and finite"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.first().map(|p| p.0) == pts.last().map(|p| p.0) {
        return Err(invalid("need at least two distinct sizes"));
    }
    let ln_c: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let ln_n: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ns: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let (pb, pa, pr2) = linear_fit(&ln_n, &ln_c);
    let (eb, ea, er2) = linear_fit(&ns, &ln_c);
    let (model, coefficients, r_squared, other_r_squared) = if pr2 >= er2 {
        (ScalingModel::PowerLaw, (pa.exp(), pb), pr2, er2)
    } else {
        (ScalingModel::Exponential, (ea.exp(), eb), er2, pr2)
    };
    Ok(ScalingFit {
        model,
        coefficients,
        r_squared,
        other_r_squared,
        points: pts,
    })
}

impl ScalingFit {
    pub fn predict(&self, n: f64) -> f64 {
        let (a, b) = self.coefficients;
        match self.model {
            ScalingModel::PowerLaw => a * n.powf(b),
            ScalingModel::Exponential => a * (b * n).exp(),
        }
    }
}

/// Every bitstring's cost, ascending.
pub fn sorted_costs(q: &QuboMatrix) -> Result<Vec<f64>> {
    let n = q.n();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::BruteForceTooLarge { n, cap: BRUTE_FORCE_CAP });
    }
    let mut w = vec![0u8; n];
    let mut costs = Vec::with_capacity(1 << n);
    for code in 0u64..1 << n {
        for (i, b) in w.iter_mut().enumerate() {
            *b = ((code >> i) & 1) as u8;
        }
        costs.push(q.energy(&w));
    }
    costs.sort_by(f64::total_cmp);
    Ok(costs)
}

/// Fraction of all bitstrings strictly cheaper than `cost`.
pub fn rank_fraction(sorted: &[f64], cost: f64) -> f64 {
    let tol = 1e-12 * cost.abs().max(1.0);
    sorted.partition_point(|&c| c < cost - tol) as f64 / sorted.len() as f64
}

/// Largest size `near_optimal` will enumerate.
pub const EXHAUSTIVE_CAP: usize = 32;

/// Exact optimum and the number of bitstrings within `threshold` of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearOptimal {
    pub n: usize,
    pub optimum: f64,
    pub count: u64,
}

impl NearOptimal {
    /// Mean number of uniform draws until one lands within the threshold.
    pub fn expected_uniform_cycles(&self) -> f64 {
        (self.n as f64).exp2() / self.count as f64
    }
}

/// Single Gray-code pass over all `2^n` bitstrings. Keeps every cost that
/// is still within `threshold` of the running minimum; the window only
/// tightens as the minimum drops, so nothing discarded can come back.
pub fn near_optimal(q: &QuboMatrix, threshold: f64) -> Result<NearOptimal> {
    let n = q.n();
    if n > EXHAUSTIVE_CAP {
        return Err(Error::BruteForceTooLarge { n, cap: EXHAUSTIVE_CAP });
    }
    if !(threshold >= 0.0) {
        return Err(invalid("threshold must be non-negative"));
    }
    let m = q.as_slice();
    let tol = 1e-9 * (1.0 + q.max_abs_entry() * n as f64);
    let mut w = vec![false; n];
    let mut field = q.diagonal();
    let mut value = 0.0;
    let mut best = 0.0;
    let mut kept: Vec<f64> = vec![0.0];
    let bound = |b: f64| b + threshold * b.abs() + tol;
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        let (delta, sign) = if w[i] { (-field[i], -2.0) } else { (field[i], 2.0) };
        value += delta;
        w[i] = !w[i];
        let row = &m[i * n..(i + 1) * n];
        // branch-free update, then undo the diagonal
        for (f, &r) in field.iter_mut().zip(row) {
            *f += sign * r;
        }
        field[i] -= sign * row[i];
        if value <= bound(best) {
            if value < best {
                best = value;
                let b = bound(best);
                kept.retain(|&c| c <= b);
            }
            kept.push(value);
        }
    }
    if best == 0.0 {
        return Err(Error::ZeroReferenceCost);
    }
    Ok(NearOptimal { n, optimum: best, count: kept.len() as u64 })
}
