//! State-vector emulation of a neutral-atom register driven by a global
//! Rabi drive and detuning, with van der Waals interactions between
//! Rydberg-excited atoms.
//!
//! Units: positions in µm, times in s, angular frequencies in rad/s and
//! `C6` in rad·µm⁶/s, with ħ = 1. Basis index bit `i` is atom `i`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qubo::Bitstring;
use crate::rng;

/// Largest register evolved as a single state vector.
pub const STATE_VECTOR_CAP: usize = 22;

/// Rb 70S interaction coefficient, rad·µm⁶/s.
pub const DEFAULT_C6: f64 = 5.42e12;

/// Default peak Rabi frequency, 2π × 1 MHz.
pub const DEFAULT_OMEGA: f64 = core::f64::consts::TAU * 1.0e6;

/// Distance at which `C6 / r^6 = omega`.
pub fn blockade_radius(c6: f64, omega: f64) -> f64 {
    (c6 / omega).powf(1.0 / 6.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Register {
    pub positions: Vec<[f64; 2]>,
    pub c6: f64,
}

impl Register {
    pub fn new(positions: Vec<[f64; 2]>, c6: f64) -> Result<Self> {
        let r = Self { positions, c6 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c6.is_finite() && self.c6 > 0.0) {
            return Err(invalid("C6 must be positive and finite"));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("atom coordinates must be finite"));
        }
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                if self.distance(i, j) == 0.0 {
                    return Err(Error::CoincidentAtoms(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.positions[i];
        let [xj, yj] = self.positions[j];
        (xi - xj).hypot(yi - yj)
    }

    /// Atoms `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            c6: self.c6,
        }
    }
}

/// Row-major `N x N` matrix of `C6 / r^6` with zero diagonal.
pub fn interaction_matrix(reg: &Register) -> Result<Vec<f64>> {
    reg.validate()?;
    let n = reg.len();
    let mut u = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = reg.c6 / reg.distance(i, j).powi(6);
            u[i * n + j] = v;
            u[j * n + i] = v;
        }
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    pub omega: f64,
    pub delta: f64,
}

/// Piecewise-constant drive. Zero-duration segments are no-ops.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
}

impl PulseSequence {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let p = Self { segments };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.segments {
            if !(s.duration.is_finite() && s.duration >= 0.0) {
                return Err(invalid("segment durations must be finite and nonnegative"));
            }
            if !(s.omega.is_finite() && s.delta.is_finite()) {
                return Err(invalid("segment amplitudes must be finite"));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// Three-phase program: the drive rises at negative detuning, the detuning
/// sweeps through resonance, then the drive falls at positive detuning.
/// Each phase is a linear ramp cut into `slices` constant pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseProgram {
    pub omega: f64,
    pub delta_start: f64,
    pub delta_end: f64,
    pub t_rise: f64,
    pub t_sweep: f64,
    pub t_fall: f64,
    pub slices: usize,
}

impl Default for PulseProgram {
    fn default() -> Self {
        let omega = DEFAULT_OMEGA;
        Self {
            omega,
            delta_start: -2.0 * omega,
            delta_end: 2.0 * omega,
            t_rise: 0.25e-6,
            t_sweep: 1.5e-6,
            t_fall: 0.25e-6,
            slices: 6,
        }
    }
}

impl PulseProgram {
    pub fn durations(&self) -> [f64; 3] {
        [self.t_rise, self.t_sweep, self.t_fall]
    }

    pub fn with_durations(&self, d: [f64; 3]) -> Self {
        Self {
            t_rise: d[0],
            t_sweep: d[1],
            t_fall: d[2],
            ..*self
        }
    }

    pub fn to_sequence(&self) -> Result<PulseSequence> {
        if self.slices == 0 {
            return Err(invalid("slices must be at least 1"));
        }
        let k = self.slices;
        let mut segments = Vec::with_capacity(3 * k);
        // midpoint sampling of each ramp
        let mid = |a: f64, b: f64, m: usize| a + (b - a) * (m as f64 + 0.5) / k as f64;
        for m in 0..k {
            segments.push(Segment {
                duration: self.t_rise / k as f64,
                omega: mid(0.0, self.omega, m),
                delta: self.delta_start,
            });
        }
        for m in 0..k {
            segments.push(Segment {
                duration: self.t_sweep / k as f64,
                omega: self.omega,
                delta: mid(self.delta_start, self.delta_end, m),
            });
        }
        for m in 0..k {
            segments.push(Segment {
                duration: self.t_fall / k as f64,
                omega: mid(self.omega, 0.0, m),
                delta: self.delta_end,
            });
        }
        PulseSequence::new(segments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    n: usize,
}

impl StateVector {
    /// All atoms in the ground state.
    pub fn ground(n: usize) -> Result<Self> {
        check_cap(n)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes, n })
    }

    pub fn basis(bits: &Bitstring) -> Result<Self> {
        let n = bits.len();
        check_cap(n)?;
        let idx = (0..n).filter(|&i| bits.get(i)).fold(0usize, |acc, i| acc | 1 << i);
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[idx] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes, n })
    }

    /// Length must be a power of two; the vector is not renormalized.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(invalid("amplitude count must be a power of two"));
        }
        let n = len.trailing_zeros() as usize;
        check_cap(n)?;
        Ok(Self { amplitudes, n })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let overlap: Complex64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum();
        Ok(overlap.norm_sqr())
    }
}

fn check_cap(n: usize) -> Result<()> {
    if n > STATE_VECTOR_CAP {
        return Err(Error::StateTooLarge {
            n,
            cap: STATE_VECTOR_CAP,
        });
    }
    Ok(())
}

/// Matrix-free Hamiltonian of one register, reused across segments.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    /// Interaction energy of every basis state.
    interaction: Vec<f64>,
    popcount: Vec<u8>,
}

impl Propagator {
    pub fn new(reg: &Register) -> Result<Self> {
        check_cap(reg.len())?;
        let n = reg.len();
        let u = interaction_matrix(reg)?;
        let dim = 1usize << n;
        let mut interaction = vec![0.0; dim];
        let mut popcount = vec![0u8; dim];
        for w in 1..dim {
            // peel the lowest set atom off an already computed state
            let low = w.trailing_zeros() as usize;
            let rest = w & (w - 1);
            let mut e = interaction[rest];
            let mut r = rest;
            while r != 0 {
                let j = r.trailing_zeros() as usize;
                e += u[low * n + j];
                r &= r - 1;
            }
            interaction[w] = e;
            popcount[w] = popcount[rest] + 1;
        }
        Ok(Self {
            n,
            interaction,
            popcount,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    fn diagonal(&self, w: usize, delta: f64) -> f64 {
        self.interaction[w] - delta * f64::from(self.popcount[w])
    }

    /// `out = (H - shift) psi / scale` for the fields of `seg`.
    fn apply(&self, seg: &Segment, shift: f64, scale: f64, psi: &[Complex64], out: &mut [Complex64]) {
        let half = 0.5 * seg.omega;
        for (w, o) in out.iter_mut().enumerate() {
            let mut flip = Complex64::new(0.0, 0.0);
            for i in 0..self.n {
                flip += psi[w ^ (1 << i)];
            }
            *o = (psi[w] * (self.diagonal(w, seg.delta) - shift) + flip * half) / scale;
        }
    }

    /// `<psi|H|psi>` for the fields of `seg`.
    pub fn energy(&self, seg: &Segment, state: &StateVector) -> Result<f64> {
        self.check(state)?;
        let mut hpsi = vec![Complex64::new(0.0, 0.0); state.amplitudes.len()];
        self.apply(seg, 0.0, 1.0, &state.amplitudes, &mut hpsi);
        Ok(state.amplitudes.iter().zip(&hpsi).map(|(a, b)| (a.conj() * b).re).sum())
    }

    fn check(&self, state: &StateVector) -> Result<()> {
        if state.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: state.n,
            });
        }
        Ok(())
    }

    pub fn evolve(&self, pulses: &PulseSequence, initial: &StateVector) -> Result<StateVector> {
        pulses.validate()?;
        self.check(initial)?;
        let mut psi = initial.amplitudes.clone();
        for seg in pulses.segments.iter().filter(|s| s.duration > 0.0) {
            self.evolve_segment(seg, &mut psi);
        }
        Ok(StateVector {
            amplitudes: psi,
            n: self.n,
        })
    }

    /// Chebyshev expansion of `exp(-i H t)` on the spectral interval bounded
    /// by the diagonal range widened by `N |Omega| / 2`.
    fn evolve_segment(&self, seg: &Segment, psi: &mut [Complex64]) {
        let t = seg.duration;
        if seg.omega == 0.0 {
            for (w, a) in psi.iter_mut().enumerate() {
                *a *= Complex64::from_polar(1.0, -self.diagonal(w, seg.delta) * t);
            }
            return;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for w in 0..psi.len() {
            let d = self.diagonal(w, seg.delta);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let spread = 0.5 * seg.omega.abs() * self.n as f64;
        let shift = 0.5 * (hi + lo);
        let scale = (0.5 * (hi - lo) + spread) * (1.0 + 1e-9);
        // keep each Chebyshev step's argument moderate
        let x_total = scale * t;
        let steps = (x_total / MAX_CHEBYSHEV_ARG).ceil().max(1.0) as usize;
        let dt = t / steps as f64;
        let coeffs = bessel_series(scale * dt);
        let phase = Complex64::from_polar(1.0, -shift * dt);
        let dim = psi.len();
        let mut prev = vec![Complex64::new(0.0, 0.0); dim];
        let mut cur = vec![Complex64::new(0.0, 0.0); dim];
        let mut next = vec![Complex64::new(0.0, 0.0); dim];
        let mut acc = vec![Complex64::new(0.0, 0.0); dim];
        let minus_i = Complex64::new(0.0, -1.0);
        for _ in 0..steps {
            prev.copy_from_slice(psi);
            self.apply(seg, shift, scale, &prev, &mut cur);
            let c1 = minus_i * 2.0 * coeffs[1];
            for w in 0..dim {
                acc[w] = prev[w] * coeffs[0] + cur[w] * c1;
            }
            let mut ik = minus_i;
            for &jk in &coeffs[2..] {
                self.apply(seg, shift, scale, &cur, &mut next);
                ik *= minus_i;
                let c = ik * 2.0 * jk;
                for w in 0..dim {
                    let v = next[w] * 2.0 - prev[w];
                    prev[w] = cur[w];
                    cur[w] = v;
                    acc[w] += v * c;
                }
            }
            for (p, a) in psi.iter_mut().zip(&acc) {
                *p = a * phase;
            }
        }
    }
}

const MAX_CHEBYSHEV_ARG: f64 = 400.0;

/// `J_k(x)` for `k = 0..K`, truncated once the tail is below machine
/// precision. Miller's backward recurrence normalized by
/// `J_0 + 2 sum J_2k = 1`.
fn bessel_series(x: f64) -> Vec<f64> {
    if x == 0.0 {
        return vec![1.0, 0.0];
    }
    let start = (x + 30.0 + 10.0 * x.cbrt()).ceil() as usize + 10;
    let mut j = vec![0.0; start + 2];
    j[start] = 1e-300;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / x * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in j[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let norm = j[0] + 2.0 * j.iter().skip(2).step_by(2).sum::<f64>();
    for v in &mut j {
        *v /= norm;
    }
    let mut len = start + 1;
    while len > 2 && (len - 1) as f64 > x && j[len - 1].abs() < 1e-17 {
        len -= 1;
    }
    j.truncate(len.max(2));
    j
}

pub fn evolve(reg: &Register, pulses: &PulseSequence, initial: &StateVector) -> Result<StateVector> {
    Propagator::new(reg)?.evolve(pulses, initial)
}

/// Independent shots from `|a_w|^2`.
pub fn sample(state: &StateVector, n_shots: usize, seed: u64) -> Vec<Bitstring> {
    let mut r = rng::stream(seed, "shots");
    sample_with(state, n_shots, &mut r)
}

pub fn sample_with<R: Rng>(state: &StateVector, n_shots: usize, r: &mut R) -> Vec<Bitstring> {
    let mut cdf = Vec::with_capacity(state.amplitudes.len());
    let mut total = 0.0;
    for a in &state.amplitudes {
        total += a.norm_sqr();
        cdf.push(total);
    }
    (0..n_shots)
        .map(|_| {
            let u = r.random::<f64>() * total;
            let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            Bitstring::from_index(idx as u64, state.n)
        })
        .collect()
}
