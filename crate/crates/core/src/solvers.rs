//! Baseline and quantum-inspired QUBO solvers sharing one trace format.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ising::{sample_with, Propagator, PulseProgram, Register, StateVector};
use crate::qubo::{brute_force_min, gap_from_costs, Bitstring, QuboMatrix, BRUTE_FORCE_CAP};
use crate::rng;

/// One repetition of a solver. `cost` is absent when the cycle produced no
/// bitstring of the QUBO's size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based.
    pub cycle: usize,
    pub atom_count: usize,
    pub bits: Option<Bitstring>,
    pub cost: Option<f64>,
    pub best_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub solver: String,
    pub seed: u64,
    pub n: usize,
    pub records: Vec<CycleRecord>,
    pub best: Option<(Bitstring, f64)>,
}

impl SolveTrace {
    pub fn new(solver: &str, seed: u64, n: usize) -> Self {
        Self {
            solver: String::from(solver),
            seed,
            n,
            records: Vec::new(),
            best: None,
        }
    }

    /// Appends a cycle; the incumbent only changes on strict improvement.
    pub fn push(&mut self, atom_count: usize, sample: Option<(Bitstring, f64)>) {
        let cost = sample.as_ref().map(|s| s.1);
        if let Some((bits, c)) = sample.as_ref() {
            if self.best.as_ref().is_none_or(|b| *c < b.1) {
                self.best = Some((bits.clone(), *c));
            }
        }
        self.records.push(CycleRecord {
            cycle: self.records.len() + 1,
            atom_count,
            bits: sample.map(|s| s.0),
            cost,
            best_cost: self.best.as_ref().map(|b| b.1),
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_scored(&self) -> usize {
        self.records.iter().filter(|r| r.cost.is_some()).count()
    }

    /// Best-so-far gap per cycle; `None` until the first scored cycle.
    pub fn best_gaps(&self, reference_cost: f64) -> Result<Vec<Option<f64>>> {
        self.records
            .iter()
            .map(|r| r.best_cost.map(|c| gap_from_costs(c, reference_cost)).transpose())
            .collect()
    }
}

fn random_bits<R: Rng>(n: usize, r: &mut R) -> Bitstring {
    Bitstring::from_bits((0..n).map(|_| r.random_range(0..2u8)).collect()).expect("bits are binary")
}

/// Independent uniformly random bitstrings.
pub fn uniform_solve(q: &QuboMatrix, n_cycles: usize, seed: u64) -> Result<SolveTrace> {
    if n_cycles == 0 {
        return Err(invalid("n_cycles must be at least 1"));
    }
    let mut r = rng::stream(seed, "uniform");
    let mut trace = SolveTrace::new("uniform", seed, q.n());
    for _ in 0..n_cycles {
        let w = random_bits(q.n(), &mut r);
        let c = q.energy(w.bits());
        trace.push(q.n(), Some((w, c)));
    }
    Ok(trace)
}

/// Geometric inverse-temperature ramp. Temperatures are in units of the
/// QUBO's largest absolute coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSchedule {
    pub n_sweeps: usize,
    pub beta_initial: f64,
    pub beta_final: f64,
}

impl Default for SaSchedule {
    fn default() -> Self {
        Self {
            n_sweeps: 1000,
            beta_initial: 0.1,
            beta_final: 10.0,
        }
    }
}

impl SaSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps == 0 {
            return Err(invalid("n_sweeps must be at least 1"));
        }
        if !(self.beta_initial > 0.0 && self.beta_final > self.beta_initial && self.beta_final.is_finite()) {
            return Err(invalid("need 0 < beta_initial < beta_final"));
        }
        Ok(())
    }

    pub fn beta(&self, sweep: usize) -> f64 {
        if self.n_sweeps == 1 {
            return self.beta_final;
        }
        let f = sweep as f64 / (self.n_sweeps - 1) as f64;
        self.beta_initial * (self.beta_final / self.beta_initial).powf(f)
    }
}

/// Single-flip Metropolis from a random start per restart; each restart
/// records the lowest-cost state it visited.
pub fn simulated_annealing(q: &QuboMatrix, schedule: &SaSchedule, n_restarts: usize, seed: u64) -> Result<SolveTrace> {
    schedule.validate()?;
    if n_restarts == 0 {
        return Err(invalid("n_restarts must be at least 1"));
    }
    let n = q.n();
    let scale = q.max_abs_entry();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let betas: Vec<f64> = (0..schedule.n_sweeps).map(|s| schedule.beta(s) / scale).collect();
    let mut trace = SolveTrace::new("sa", seed, n);
    for restart in 0..n_restarts {
        let mut r = rng::stream_indexed(seed, "sa", restart as u64);
        let mut w: Vec<u8> = random_bits(n, &mut r).bits().to_vec();
        // field[i] = sum_{j != i} Q_ij w_j
        let mut field = vec![0.0; n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i && w[j] == 1) {
                field[i] += q.get(i, j);
            }
        }
        let mut energy = q.energy(&w);
        let mut best = (w.clone(), energy);
        for &beta in &betas {
            for i in 0..n {
                let up = q.get(i, i) + 2.0 * field[i];
                let delta = if w[i] == 0 { up } else { -up };
                if delta <= 0.0 || r.random::<f64>() < (-beta * delta).exp() {
                    let sign = if w[i] == 0 { 1.0 } else { -1.0 };
                    w[i] ^= 1;
                    energy += delta;
                    for (j, f) in field.iter_mut().enumerate() {
                        if j != i {
                            *f += sign * q.get(i, j);
                        }
                    }
                    if energy < best.1 {
                        best = (w.clone(), energy);
                    }
                }
            }
        }
        let exact = q.energy(&best.0);
        trace.push(n, Some((Bitstring::from_bits(best.0)?, exact)));
    }
    Ok(trace)
}

/// Sweeps per restart when building a reference solution.
pub const REFERENCE_SWEEPS_PER_RESTART: usize = 1000;

/// Reference optimum: exhaustive up to the brute-force cap, otherwise the
/// best of `total_sweeps` annealing sweeps split into restarts.
pub fn reference_solution(q: &QuboMatrix, total_sweeps: usize, seed: u64) -> Result<(Bitstring, f64)> {
    if q.n() <= BRUTE_FORCE_CAP {
        return brute_force_min(q);
    }
    let schedule = SaSchedule {
        n_sweeps: REFERENCE_SWEEPS_PER_RESTART,
        ..SaSchedule::default()
    };
    let restarts = total_sweeps.div_ceil(REFERENCE_SWEEPS_PER_RESTART).max(1);
    let trace = simulated_annealing(q, &schedule, restarts, rng::derive(seed, "reference"))?;
    Ok(trace.best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaResult {
    pub trace: SolveTrace,
    pub durations: [f64; 3],
    pub mean_cost: f64,
}

/// Derivative-free search over the three phase durations of `program` on a
/// fixed register with identity labeling. Each iteration perturbs one
/// duration of the incumbent, spends `shots_per_iter` shots, and keeps the
/// candidate if its mean cost is lower. Every shot enters the trace.
pub fn qaoa_naive(
    q: &QuboMatrix,
    atoms: &Register,
    program: &PulseProgram,
    n_outer: usize,
    shots_per_iter: usize,
    seed: u64,
) -> Result<QaoaResult> {
    if atoms.len() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            found: atoms.len(),
        });
    }
    if n_outer == 0 || shots_per_iter == 0 {
        return Err(invalid("n_outer and shots_per_iter must be at least 1"));
    }
    let prop = Propagator::new(atoms)?;
    let ground = StateVector::ground(q.n())?;
    let mut search = rng::stream(seed, "qaoa-search");
    let base = program.durations();
    let step = {
        let m = base.iter().sum::<f64>() / 3.0;
        if m > 0.0 { m } else { 1e-6 }
    };
    let mut trace = SolveTrace::new("qaoa", seed, q.n());
    let mut incumbent: Option<([f64; 3], f64)> = None;
    for it in 0..n_outer {
        let durations = match incumbent {
            None => base,
            Some((d, _)) => {
                let mut d = d;
                let k = search.random_range(0..3);
                d[k] = (d[k] + step * search.random_range(-0.5..0.5)).max(0.0);
                d
            }
        };
        let state = prop.evolve(&program.with_durations(durations).to_sequence()?, &ground)?;
        let mut shots_rng = rng::stream_indexed(seed, "qaoa-shots", it as u64);
        let mut total = 0.0;
        for w in sample_with(&state, shots_per_iter, &mut shots_rng) {
            let c = q.energy(w.bits());
            total += c;
            trace.push(q.n(), Some((w, c)));
        }
        let mean = total / shots_per_iter as f64;
        if incumbent.is_none_or(|(_, m)| mean < m) {
            incumbent = Some((durations, mean));
        }
    }
    let (durations, mean_cost) = incumbent.expect("n_outer >= 1");
    Ok(QaoaResult {
        trace,
        durations,
        mean_cost,
    })
}

/// Matrix product state over binary sites with real tensors of shape
/// `(left, 2, right)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mps {
    tensors: Vec<Vec<f64>>,
    bonds: Vec<usize>,
    /// Logical variable held by each position.
    order: Vec<usize>,
}

impl Mps {
    fn uniform(n: usize) -> Self {
        let a = core::f64::consts::FRAC_1_SQRT_2;
        Self {
            tensors: vec![vec![a, a]; n],
            bonds: vec![1; n + 1],
            order: (0..n).collect(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn max_bond(&self) -> usize {
        self.bonds.iter().copied().max().unwrap_or(1)
    }

    fn at(&self, k: usize, l: usize, b: usize, r: usize) -> f64 {
        self.tensors[k][(l * 2 + b) * self.bonds[k + 1] + r]
    }

    /// Applies `gate[a][b]` (diagonal, optionally followed by a swap) to
    /// positions `k, k+1`, splitting back with an SVD truncated to `chi`.
    /// The singular values go right when `sweep_right`, left otherwise.
    fn two_site(&mut self, k: usize, gate: Option<&[[f64; 2]; 2]>, swap: bool, chi: usize, sweep_right: bool) -> Result<()> {
        let (dl, dm, dr) = (self.bonds[k], self.bonds[k + 1], self.bonds[k + 2]);
        let mut theta = DMatrix::<f64>::zeros(dl * 2, 2 * dr);
        for l in 0..dl {
            for a in 0..2 {
                for b in 0..2 {
                    let g = gate.map_or(1.0, |g| g[a][b]);
                    if g == 0.0 {
                        continue;
                    }
                    for r in 0..dr {
                        let mut v = 0.0;
                        for m in 0..dm {
                            v += self.at(k, l, a, m) * self.at(k + 1, m, b, r);
                        }
                        let (row, col) = if swap { (l * 2 + b, a * dr + r) } else { (l * 2 + a, b * dr + r) };
                        theta[(row, col)] = g * v;
                    }
                }
            }
        }
        let svd = theta.svd(true, true);
        let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let s = svd.singular_values;
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        let s_max = s[idx[0]];
        if !(s_max.is_finite() && s_max > 0.0) {
            return Err(Error::NormUnderflow);
        }
        // exact zeros carry no weight; beyond that keep at most chi values
        let keep: Vec<usize> = idx.into_iter().filter(|&i| s[i] > s_max * 1e-15).take(chi).collect();
        let norm = keep.iter().map(|&i| s[i] * s[i]).sum::<f64>().sqrt();
        let d = keep.len();
        let mut left = vec![0.0; dl * 2 * d];
        let mut right = vec![0.0; d * 2 * dr];
        for (c, &i) in keep.iter().enumerate() {
            let sv = s[i] / norm;
            let (ls, rs) = if sweep_right { (1.0, sv) } else { (sv, 1.0) };
            for row in 0..dl * 2 {
                left[row * d + c] = u[(row, i)] * ls;
            }
            for col in 0..2 * dr {
                right[c * 2 * dr + col] = vt[(i, col)] * rs;
            }
        }
        self.tensors[k] = left;
        self.tensors[k + 1] = right;
        self.bonds[k + 1] = d;
        if swap {
            self.order.swap(k, k + 1);
        }
        Ok(())
    }

    /// Dense amplitudes indexed by logical bitstring code (bit `i` is
    /// variable `i`); for small registers only.
    pub fn amplitudes(&self) -> Result<Vec<f64>> {
        let n = self.n_sites();
        if n > STATE_CONTRACTION_CAP {
            return Err(Error::StateTooLarge {
                n,
                cap: STATE_CONTRACTION_CAP,
            });
        }
        // rows: position configurations so far, columns: open bond
        let mut acc = vec![1.0];
        let mut width = 1;
        for k in 0..n {
            let dr = self.bonds[k + 1];
            let configs = acc.len() / width;
            let mut next = vec![0.0; configs * 2 * dr];
            for c in 0..configs {
                for b in 0..2 {
                    for r in 0..dr {
                        let mut v = 0.0;
                        for l in 0..width {
                            v += acc[c * width + l] * self.at(k, l, b, r);
                        }
                        next[(c | b << k) * dr + r] = v;
                    }
                }
            }
            acc = next;
            width = dr;
        }
        let mut out = vec![0.0; 1 << n];
        for (code, &v) in acc.iter().enumerate() {
            let mut logical = 0usize;
            for (p, &var) in self.order.iter().enumerate() {
                if (code >> p) & 1 == 1 {
                    logical |= 1 << var;
                }
            }
            out[logical] = v;
        }
        Ok(out)
    }

    /// Site-by-site choice of the more probable bit given the bits already
    /// fixed to the left, returned in logical order.
    pub fn greedy_readout(&self) -> Bitstring {
        let n = self.n_sites();
        // env[k] = contraction of positions k.. with themselves
        let mut env: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        env[n] = vec![1.0];
        for k in (0..n).rev() {
            let (dl, dr) = (self.bonds[k], self.bonds[k + 1]);
            let mut e = vec![0.0; dl * dl];
            let next = &env[k + 1];
            for l in 0..dl {
                for lp in l..dl {
                    let mut v = 0.0;
                    for b in 0..2 {
                        for r in 0..dr {
                            let x = self.at(k, l, b, r);
                            if x == 0.0 {
                                continue;
                            }
                            for rp in 0..dr {
                                v += x * next[r * dr + rp] * self.at(k, lp, b, rp);
                            }
                        }
                    }
                    e[l * dl + lp] = v;
                    e[lp * dl + l] = v;
                }
            }
            env[k] = e;
        }
        let mut bits = vec![0u8; n];
        let mut left = vec![1.0];
        for k in 0..n {
            let (dl, dr) = (self.bonds[k], self.bonds[k + 1]);
            let mut best: Option<(f64, Vec<f64>, u8)> = None;
            for b in 0..2u8 {
                let mut v = vec![0.0; dr];
                for (r, vr) in v.iter_mut().enumerate() {
                    for (l, &x) in left.iter().enumerate().take(dl) {
                        *vr += x * self.at(k, l, b as usize, r);
                    }
                }
                let mut p = 0.0;
                for r in 0..dr {
                    for rp in 0..dr {
                        p += v[r] * env[k + 1][r * dr + rp] * v[rp];
                    }
                }
                if best.as_ref().is_none_or(|(bp, _, _)| p > *bp) {
                    best = Some((p, v, b));
                }
            }
            let (_, v, b) = best.expect("two candidates");
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            left = if norm > 0.0 { v.iter().map(|x| x / norm).collect() } else { v };
            bits[self.order[k]] = b;
        }
        Bitstring::from_bits(bits).expect("bits are binary")
    }
}

/// Largest MPS contracted to a dense vector.
pub const STATE_CONTRACTION_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TebdParams {
    pub chi: usize,
    pub tau: f64,
    pub n_steps: usize,
}

/// Imaginary-time evolution `exp(-n_steps tau H_Q)` of the uniform product
/// state.
///
/// `H_Q` is split into commuting pair terms, each diagonal term shared
/// equally among the pairs of its variable. Every step runs alternating
/// left and right bubble passes of a swap network; a pair gate is applied
/// exactly when two variables first cross, so each pair is met once per
/// step and the orthogonality center follows the pass.
pub fn tebd_evolve(q: &QuboMatrix, params: &TebdParams) -> Result<Mps> {
    let mut last = None;
    tebd_run(q, params, |mps| last = Some(mps.clone()))?;
    Ok(last.unwrap_or_else(|| Mps::uniform(q.n())))
}

fn tebd_run(q: &QuboMatrix, params: &TebdParams, mut on_step: impl FnMut(&Mps)) -> Result<()> {
    if params.chi < 2 {
        return Err(invalid("chi must be at least 2"));
    }
    if !(params.tau > 0.0 && params.tau.is_finite()) {
        return Err(invalid("tau must be positive"));
    }
    let n = q.n();
    let mut mps = Mps::uniform(n);
    if n == 1 {
        for k in 1..=params.n_steps {
            let e = (-(k as f64) * params.tau * q.get(0, 0)).exp();
            let norm = (1.0 + e * e).sqrt();
            if !(norm.is_finite() && e.is_finite()) {
                return Err(Error::NormUnderflow);
            }
            mps.tensors[0] = vec![1.0 / norm, e / norm];
            on_step(&mps);
        }
        return Ok(());
    }
    let share = 1.0 / (n - 1) as f64;
    let gate = |i: usize, j: usize| -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for (a, row) in h.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                let (a, b) = (a as f64, b as f64);
                *v = 2.0 * q.get(i, j) * a * b + share * (q.get(i, i) * a + q.get(j, j) * b);
            }
        }
        // shifting by the minimum only rescales the state
        let m = h.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        h.map(|row| row.map(|v| (-params.tau * (v - m)).exp()))
    };
    for step in 0..params.n_steps {
        // even steps sort toward descending order, odd ones back
        let descending = step % 2 == 0;
        let crosses = |a: usize, b: usize| if descending { a < b } else { a > b };
        let mut right = true;
        loop {
            let positions: Vec<usize> = if right { (0..n - 1).collect() } else { (0..n - 1).rev().collect() };
            let mut swapped = false;
            for k in positions {
                let (a, b) = (mps.order[k], mps.order[k + 1]);
                if crosses(a, b) {
                    mps.two_site(k, Some(&gate(a, b)), true, params.chi, right)?;
                    swapped = true;
                } else {
                    mps.two_site(k, None, false, params.chi, right)?;
                }
            }
            right = !right;
            if !swapped {
                break;
            }
        }
        on_step(&mps);
    }
    Ok(())
}

/// Steepest single-flip descent on the QUBO cost.
pub fn local_descent(q: &QuboMatrix, w: &Bitstring) -> Bitstring {
    let mut bits = w.bits().to_vec();
    loop {
        let mut best = (0.0, None);
        for i in 0..bits.len() {
            let d = q.flip_delta(&bits, i);
            if d < best.0 {
                best = (d, Some(i));
            }
        }
        match best.1 {
            Some(i) => bits[i] ^= 1,
            None => break,
        }
    }
    Bitstring::from_bits(bits).expect("bits are binary")
}

/// Greedy readout after every step, each followed by local descent. The
/// returned bitstring is the trace's best.
pub fn tebd_solve(q: &QuboMatrix, params: &TebdParams) -> Result<(Bitstring, SolveTrace)> {
    if params.n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    let mut trace = SolveTrace::new("tebd", 0, q.n());
    tebd_run(q, params, |mps| {
        let w = local_descent(q, &mps.greedy_readout());
        let c = q.energy(w.bits());
        trace.push(q.n(), Some((w, c)));
    })?;
    let best = trace.best.clone().expect("at least one step").0;
    Ok((best, trace))
}
