//! Random graph sampling: a triangular trap pattern is loaded
//! stochastically each cycle, the resulting atom clusters are evolved
//! independently, and one measured bitstring is mapped onto the QUBO
//! variables through the best of a random set of relabelings.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ising::{blockade_radius, interaction_matrix, Propagator, PulseProgram, Register, StateVector, DEFAULT_C6, STATE_VECTOR_CAP};
use crate::qubo::{Bitstring, QuboMatrix};
use crate::rng;
use crate::solvers::SolveTrace;

/// Distance slack when linking atoms into clusters.
pub const LINK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lattice {
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapPattern {
    pub sites: Vec<[f64; 2]>,
    pub spacing: f64,
    pub lattice: Lattice,
    pub n_traps: usize,
    /// Interaction coefficient of the loaded species.
    #[serde(default = "default_c6")]
    pub c6: f64,
}

fn default_c6() -> f64 {
    DEFAULT_C6
}

/// Spacing at which the nearest-neighbor interaction equals the default
/// peak Rabi frequency.
pub fn default_spacing() -> f64 {
    blockade_radius(DEFAULT_C6, crate::ising::DEFAULT_OMEGA)
}

/// `ceil(n / p)` triangular sites taken ring by ring around a central site.
pub fn design_pattern(n_target: usize, p: f64, spacing: f64) -> Result<TrapPattern> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("loading probability must lie in (0, 1)"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid("spacing must be positive"));
    }
    if n_target == 0 {
        return Err(invalid("target size must be at least 1"));
    }
    let n_traps = (n_target as f64 / p).ceil() as usize;
    // lattice vectors (1, 0) and (1/2, sqrt(3)/2); squared norm a^2 + ab + b^2
    let mut radius = 1i64;
    while 3 * radius * radius < 4 * n_traps as i64 {
        radius += 1;
    }
    let radius = radius + 1;
    let mut cells: Vec<(i64, f64, i64, i64)> = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            let (x, y) = (a as f64 + 0.5 * b as f64, b as f64 * 3f64.sqrt() / 2.0);
            let angle = if a == 0 && b == 0 { -10.0 } else { y.atan2(x) };
            cells.push((a * a + a * b + b * b, angle, a, b));
        }
    }
    cells.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let sites = cells
        .iter()
        .take(n_traps)
        .map(|&(_, _, a, b)| [spacing * (a as f64 + 0.5 * b as f64), spacing * b as f64 * 3f64.sqrt() / 2.0])
        .collect();
    Ok(TrapPattern {
        sites,
        spacing,
        lattice: Lattice::Triangular,
        n_traps,
        c6: DEFAULT_C6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingOutcome {
    pub filled: Vec<bool>,
    /// Filled sites in increasing site order.
    pub atoms: Register,
}

impl LoadingOutcome {
    pub fn sites(&self) -> Vec<usize> {
        self.filled.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }
}

pub fn load(pattern: &TrapPattern, p: f64, seed: u64) -> Result<LoadingOutcome> {
    load_with(pattern, p, &mut rng::stream(seed, "load"))
}

pub fn load_with<R: Rng>(pattern: &TrapPattern, p: f64, r: &mut R) -> Result<LoadingOutcome> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("loading probability must lie in [0, 1]"));
    }
    let filled: Vec<bool> = (0..pattern.sites.len()).map(|_| r.random::<f64>() < p).collect();
    let positions = pattern.sites.iter().zip(&filled).filter(|(_, &f)| f).map(|(s, _)| *s).collect();
    Ok(LoadingOutcome {
        filled,
        atoms: Register {
            positions,
            c6: pattern.c6,
        },
    })
}

/// Exactly `count` atoms on uniformly chosen sites: a binomial loading
/// conditioned on its atom count.
pub fn load_exact_with<R: Rng>(pattern: &TrapPattern, count: usize, r: &mut R) -> Result<LoadingOutcome> {
    let n_sites = pattern.sites.len();
    if count > n_sites {
        return Err(invalid(alloc::format!("cannot place {count} atoms in {n_sites} traps")));
    }
    let mut filled = vec![false; n_sites];
    for site in rand::seq::index::sample(r, n_sites, count) {
        filled[site] = true;
    }
    let positions = pattern.sites.iter().zip(&filled).filter(|(_, &f)| f).map(|(s, _)| *s).collect();
    Ok(LoadingOutcome {
        filled,
        atoms: Register {
            positions,
            c6: pattern.c6,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub register: Register,
    /// Atom indices into the loaded register, increasing.
    pub indices: Vec<usize>,
}

/// Connected components of the graph linking atoms no farther apart than
/// `spacing`, ordered by their first atom.
pub fn extract_clusters(outcome: &LoadingOutcome, spacing: f64) -> Vec<Cluster> {
    let atoms = &outcome.atoms;
    let n = atoms.len();
    let mut component = vec![usize::MAX; n];
    let mut clusters = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        component[start] = id;
        let mut members = vec![start];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if component[j] == usize::MAX && atoms.distance(i, j) <= spacing + LINK_TOLERANCE {
                    component[j] = id;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(Cluster {
            register: atoms.subset(&members),
            indices: members,
        });
    }
    clusters
}

/// Splits clusters above `cap` by repeatedly detaching the atom with the
/// smallest total interaction inside its cluster. Detached atoms are
/// regrouped into their own linked components and capped in turn, so only
/// the interactions across a cut are lost.
pub fn enforce_cap(clusters: Vec<Cluster>, atoms: &Register, spacing: f64, cap: usize) -> Result<Vec<Cluster>> {
    if cap == 0 {
        return Err(invalid("cluster cap must be at least 1"));
    }
    let mut out = Vec::with_capacity(clusters.len());
    let mut pending: Vec<Vec<usize>> = clusters.into_iter().map(|c| c.indices).collect();
    while let Some(mut members) = pending.pop() {
        if members.len() > cap {
            log::debug!("splitting a {}-atom cluster to the cap of {cap}", members.len());
            let mut detached = Vec::new();
            while members.len() > cap {
                let reg = atoms.subset(&members);
                let u = interaction_matrix(&reg)?;
                let m = members.len();
                let weakest = (0..m)
                    .min_by(|&a, &b| {
                        let sa: f64 = u[a * m..(a + 1) * m].iter().sum();
                        let sb: f64 = u[b * m..(b + 1) * m].iter().sum();
                        sa.total_cmp(&sb)
                    })
                    .expect("nonempty");
                detached.push(members.remove(weakest));
            }
            detached.sort_unstable();
            pending.extend(linked_components(atoms, &detached, spacing));
            // trimming can cut the remainder apart as well
            for part in linked_components(atoms, &members, spacing) {
                out.push(Cluster {
                    register: atoms.subset(&part),
                    indices: part,
                });
            }
            continue;
        }
        out.push(Cluster {
            register: atoms.subset(&members),
            indices: members,
        });
    }
    out.sort_by_key(|c| c.indices[0]);
    Ok(out)
}

/// Components of `members` under the spacing link, each sorted.
fn linked_components(atoms: &Register, members: &[usize], spacing: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; members.len()];
    let mut parts = Vec::new();
    for s in 0..members.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut part = vec![members[s]];
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..members.len() {
                if !seen[b] && atoms.distance(members[a], members[b]) <= spacing + LINK_TOLERANCE {
                    seen[b] = true;
                    part.push(members[b]);
                    stack.push(b);
                }
            }
        }
        part.sort_unstable();
        parts.push(part);
    }
    parts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelResult {
    /// `sigma[i]` is the atom assigned to QUBO variable `i`.
    pub sigma: Vec<usize>,
    pub separation: f64,
    /// Candidates scored, the identity included.
    pub n_iter_used: usize,
}

impl RelabelResult {
    /// Measured atom bits mapped into QUBO variable order.
    pub fn apply(&self, atom_bits: &Bitstring) -> Bitstring {
        Bitstring::from_bits(self.sigma.iter().map(|&a| u8::from(atom_bits.get(a))).collect()).expect("bits are binary")
    }
}

/// Default random-search budget, ten candidates per variable.
pub fn default_relabel_budget(n: usize) -> usize {
    10 * n
}

fn normalized_off_diagonal(m: &[f64], n: usize) -> Vec<f64> {
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                scale = scale.max(m[i * n + j].abs());
            }
        }
    }
    if scale == 0.0 {
        return m.to_vec();
    }
    m.iter().map(|v| v / scale).collect()
}

/// `sum_{i<j} |U[sigma_i, sigma_j] - Q[i, j]|` on normalized matrices.
pub fn separation(u_norm: &[f64], q_norm: &[f64], n: usize, sigma: &[usize]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        let row = sigma[i] * n;
        for j in i + 1..n {
            s += (u_norm[row + sigma[j]] - q_norm[i * n + j]).abs();
        }
    }
    s
}

/// Identity plus `n_iter` uniformly random permutations; the lowest
/// separation wins, earlier candidates on ties. When all `n!` permutations
/// fit in that budget they are enumerated in lexicographic order instead.
pub fn relabel(q: &QuboMatrix, atoms: &Register, n_iter: usize, seed: u64) -> Result<RelabelResult> {
    relabel_with(q, atoms, n_iter, &mut rng::stream(seed, "relabel"))
}

pub fn relabel_with<R: Rng>(q: &QuboMatrix, atoms: &Register, n_iter: usize, r: &mut R) -> Result<RelabelResult> {
    let n = q.n();
    if atoms.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: atoms.len(),
        });
    }
    let u = normalized_off_diagonal(&interaction_matrix(atoms)?, n);
    let qn = normalized_off_diagonal(q.as_slice(), n);
    let mut best: Vec<usize> = (0..n).collect();
    let mut best_s = separation(&u, &qn, n, &best);
    let mut candidate = best.clone();
    let keep = |c: &[usize], best: &mut Vec<usize>, best_s: &mut f64| {
        let s = separation(&u, &qn, n, c);
        if s < *best_s {
            *best_s = s;
            best.copy_from_slice(c);
        }
    };
    let used = match factorial_within(n, n_iter + 1) {
        // the budget covers every permutation: enumerate instead
        Some(total) => {
            while next_permutation(&mut candidate) {
                keep(&candidate, &mut best, &mut best_s);
            }
            total
        }
        None => {
            for _ in 0..n_iter {
                candidate.shuffle(r);
                keep(&candidate, &mut best, &mut best_s);
            }
            n_iter + 1
        }
    };
    Ok(RelabelResult {
        sigma: best,
        separation: best_s,
        n_iter_used: used,
    })
}

/// `n!` if it is at most `limit`.
fn factorial_within(n: usize, limit: usize) -> Option<usize> {
    let mut f = 1usize;
    for k in 2..=n {
        f = f.checked_mul(k).filter(|&v| v <= limit)?;
    }
    Some(f)
}

/// Advances to the next permutation in lexicographic order; false after
/// the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("a larger element exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// How the final detuning of the pulse program is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detuning {
    /// Use the program's own `delta_end`.
    Fixed,
    /// Match the ratio of mean diagonal to largest off-diagonal QUBO entry,
    /// with the nearest-neighbor interaction standing for the latter.
    FromQubo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgsOptions {
    pub loading_probability: f64,
    /// Relabeling candidates per cycle; `None` means ten per variable.
    #[serde(default)]
    pub n_iter: Option<usize>,
    #[serde(default = "default_cap")]
    pub cluster_cap: usize,
    /// Also evolve and record cycles whose atom count differs from the
    /// QUBO size, for later reuse of their clusters.
    #[serde(default = "default_true")]
    pub evolve_mismatched: bool,
    #[serde(default = "default_detuning")]
    pub detuning: Detuning,
    /// Count only cycles that loaded exactly the QUBO size, as if the
    /// others were discarded before any pulse.
    #[serde(default)]
    pub post_select: bool,
}

fn default_cap() -> usize {
    STATE_VECTOR_CAP
}

fn default_true() -> bool {
    true
}

fn default_detuning() -> Detuning {
    Detuning::FromQubo
}

impl Default for RgsOptions {
    fn default() -> Self {
        Self {
            loading_probability: 0.55,
            n_iter: None,
            cluster_cap: STATE_VECTOR_CAP,
            evolve_mismatched: true,
            detuning: Detuning::FromQubo,
            post_select: false,
        }
    }
}

/// Measured bits of one evolved cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterShot {
    pub register: Register,
    pub bits: Bitstring,
}

/// Everything measured in one loading cycle, before relabeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCycle {
    pub cycle: usize,
    pub atom_count: usize,
    pub clusters: Vec<ClusterShot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgsResult {
    pub trace: SolveTrace,
    /// Cycles that were evolved, in order.
    pub raw: Vec<RawCycle>,
    /// Final detuning actually used.
    pub delta_end: f64,
}

/// `delta_end` for [`Detuning::FromQubo`], clamped to `[omega/2, 6 omega]`.
pub fn qubo_detuning(q: &QuboMatrix, pattern: &TrapPattern, omega: f64) -> f64 {
    let n = q.n();
    let u_nn = pattern.c6 / pattern.spacing.powi(6);
    let off = q.max_abs_off_diagonal();
    let mean_diag = q.diagonal().iter().sum::<f64>() / n as f64;
    let lo = 0.5 * omega.abs();
    let hi = 6.0 * omega.abs();
    if off == 0.0 {
        return hi;
    }
    // w^T Q w counts each pair twice, H counts it once
    let delta = -mean_diag * u_nn / (2.0 * off);
    delta.clamp(lo, hi)
}

/// Cache key: cluster geometry relative to its first atom, in units of
/// 1e-6 spacing.
fn shape_key(reg: &Register, spacing: f64) -> Vec<i64> {
    let [x0, y0] = reg.positions[0];
    reg.positions
        .iter()
        .flat_map(|[x, y]| [((x - x0) / spacing * 1e6).round() as i64, ((y - y0) / spacing * 1e6).round() as i64])
        .collect()
}

const CACHE_QUBITS: usize = 16;
const CACHE_ENTRIES: usize = 4096;

struct ShotSampler {
    pulses: crate::ising::PulseSequence,
    spacing: f64,
    cache: BTreeMap<Vec<i64>, Vec<f64>>,
}

impl ShotSampler {
    fn cdf(&mut self, reg: &Register) -> Result<Vec<f64>> {
        let key = (reg.len() <= CACHE_QUBITS).then(|| shape_key(reg, self.spacing));
        if let Some(c) = key.as_ref().and_then(|k| self.cache.get(k)) {
            return Ok(c.clone());
        }
        let state = Propagator::new(reg)?.evolve(&self.pulses, &StateVector::ground(reg.len())?)?;
        let mut total = 0.0;
        let cdf: Vec<f64> = state
            .probabilities()
            .into_iter()
            .map(|p| {
                total += p;
                total
            })
            .collect();
        if let Some(k) = key {
            if self.cache.len() < CACHE_ENTRIES {
                self.cache.insert(k, cdf.clone());
            }
        }
        Ok(cdf)
    }

    fn shot<R: Rng>(&mut self, reg: &Register, r: &mut R) -> Result<Bitstring> {
        let cdf = self.cdf(reg)?;
        let u = r.random::<f64>() * cdf[cdf.len() - 1];
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        Ok(Bitstring::from_index(idx as u64, reg.len()))
    }
}

/// One shot per loading cycle, scored only when the atom count equals the
/// QUBO size.
pub fn rgs_solve(
    q: &QuboMatrix,
    pattern: &TrapPattern,
    program: &PulseProgram,
    n_cycles: usize,
    seed: u64,
    options: &RgsOptions,
) -> Result<RgsResult> {
    if n_cycles == 0 {
        return Err(invalid("n_cycles must be at least 1"));
    }
    if options.cluster_cap > STATE_VECTOR_CAP {
        return Err(Error::StateTooLarge {
            n: options.cluster_cap,
            cap: STATE_VECTOR_CAP,
        });
    }
    let n = q.n();
    let n_iter = options.n_iter.unwrap_or_else(|| default_relabel_budget(n));
    let delta_end = match options.detuning {
        Detuning::Fixed => program.delta_end,
        Detuning::FromQubo => qubo_detuning(q, pattern, program.omega),
    };
    let program = PulseProgram { delta_end, ..*program };
    let mut sampler = ShotSampler {
        pulses: program.to_sequence()?,
        spacing: pattern.spacing,
        cache: BTreeMap::new(),
    };
    let mut trace = SolveTrace::new("rgs", seed, n);
    let mut raw = Vec::new();
    for cycle in 0..n_cycles {
        let mut r = rng::stream_indexed(seed, "rgs-cycle", cycle as u64);
        let outcome = if options.post_select {
            load_exact_with(pattern, n, &mut r)?
        } else {
            load_with(pattern, options.loading_probability, &mut r)?
        };
        let atom_count = outcome.atoms.len();
        let matching = atom_count == n;
        if !matching && !options.evolve_mismatched {
            trace.push(atom_count, None);
            continue;
        }
        let clusters = enforce_cap(extract_clusters(&outcome, pattern.spacing), &outcome.atoms, pattern.spacing, options.cluster_cap)?;
        let mut atom_bits = vec![0u8; atom_count];
        let mut shots = Vec::with_capacity(clusters.len());
        for c in &clusters {
            let bits = sampler.shot(&c.register, &mut r)?;
            for (k, &atom) in c.indices.iter().enumerate() {
                atom_bits[atom] = u8::from(bits.get(k));
            }
            shots.push(ClusterShot {
                register: c.register.clone(),
                bits,
            });
        }
        raw.push(RawCycle {
            cycle: cycle + 1,
            atom_count,
            clusters: shots,
        });
        if matching {
            let relabeling = relabel_with(q, &outcome.atoms, n_iter, &mut r)?;
            let w = relabeling.apply(&Bitstring::from_bits(atom_bits)?);
            let c = q.energy(w.bits());
            trace.push(atom_count, Some((w, c)));
        } else {
            trace.push(atom_count, None);
        }
    }
    Ok(RgsResult { trace, raw, delta_end })
}

/// Cluster bitstrings of exactly `target_n` atoms across cycles, with the
/// cluster geometry they were measured on.
pub fn reuse_subsize(raw: &[RawCycle], target_n: usize) -> Vec<ClusterShot> {
    raw.iter()
        .flat_map(|c| c.clusters.iter())
        .filter(|s| s.bits.len() == target_n)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pattern(n: usize) -> TrapPattern {
        design_pattern(n, 0.55, default_spacing()).unwrap()
    }

    fn min_distance(sites: &[[f64; 2]]) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..sites.len() {
            for j in i + 1..sites.len() {
                m = m.min((sites[i][0] - sites[j][0]).hypot(sites[i][1] - sites[j][1]));
            }
        }
        m
    }

    #[test]
    fn trap_counts() {
        assert_eq!(pattern(40).n_traps, 73);
        assert_eq!(pattern(40).sites.len(), 73);
        assert_eq!(pattern(50).n_traps, 91);
        let p = design_pattern(10, 0.5, 5.0).unwrap();
        assert_eq!(p.n_traps, 20);
        assert_relative_eq!(min_distance(&p.sites), 5.0, max_relative = 1e-12);
        assert!(design_pattern(10, 1.0, 5.0).is_err());
        assert!(design_pattern(10, 0.0, 5.0).is_err());
    }

    #[test]
    fn rings_fill_outward() {
        let p = design_pattern(7, 0.99, 1.0).unwrap();
        // centre plus its six neighbors, then the next ring
        let r: Vec<f64> = p.sites.iter().map(|s| s[0].hypot(s[1])).collect();
        assert_eq!(r[0], 0.0);
        assert!(r[1..7].iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert!(r.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn loading_basics() {
        let p = pattern(40);
        let full = load(&p, 1.0, 1).unwrap();
        assert_eq!(full.atoms.len(), 73);
        assert_eq!(extract_clusters(&full, p.spacing).len(), 1);
        assert_eq!(load(&p, 0.55, 3).unwrap(), load(&p, 0.55, 3).unwrap());
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let draws = 10_000;
        let total: usize = (0..draws).map(|_| load_with(&p, 0.55, &mut r).unwrap().atoms.len()).sum();
        let mean = total as f64 / draws as f64;
        // sd of the mean is about 0.04
        assert!((mean - 40.15).abs() < 0.5, "{mean}");
        let o = load(&p, 0.4, 9).unwrap();
        assert_eq!(o.sites().len(), o.atoms.len());
    }

    #[test]
    fn far_atoms_are_separate() {
        let o = LoadingOutcome {
            filled: vec![true, true],
            atoms: Register::new(vec![[0.0, 0.0], [10.0, 0.0]], DEFAULT_C6).unwrap(),
        };
        assert_eq!(extract_clusters(&o, 5.0).len(), 2);
    }

    // independent union-find over all pairs
    fn union_find(reg: &Register, spacing: f64) -> Vec<Vec<usize>> {
        let n = reg.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in 0..i {
                if reg.distance(i, j) <= spacing + LINK_TOLERANCE {
                    let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = root(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }

    #[test]
    fn clusters_match_union_find() {
        let p = pattern(45);
        let mut checked = 0;
        for seed in 0..200 {
            let o = load(&p, 0.55, seed).unwrap();
            if o.atoms.len() != 45 {
                continue;
            }
            let got: Vec<Vec<usize>> = extract_clusters(&o, p.spacing).into_iter().map(|c| c.indices).collect();
            assert_eq!(got, union_find(&o.atoms, p.spacing));
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn inter_cluster_pairs_are_weak() {
        let p = pattern(40);
        let u_nn = p.c6 / p.spacing.powi(6);
        for seed in 0..20 {
            let o = load(&p, 0.55, seed).unwrap();
            let cs = extract_clusters(&o, p.spacing);
            for (a, ca) in cs.iter().enumerate() {
                for cb in &cs[a + 1..] {
                    for &i in &ca.indices {
                        for &j in &cb.indices {
                            let u = p.c6 / o.atoms.distance(i, j).powi(6);
                            assert!(u <= u_nn / 27.0 * (1.0 + 1e-9));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cap_splits_weakest_atoms() {
        let p = pattern(20);
        let full = load(&p, 1.0, 0).unwrap();
        let cs = enforce_cap(extract_clusters(&full, p.spacing), &full.atoms, p.spacing, 30).unwrap();
        assert!(cs.iter().all(|c| c.indices.len() <= 30));
        let mut all: Vec<usize> = cs.iter().flat_map(|c| c.indices.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..full.atoms.len()).collect::<Vec<_>>());
        // the outermost atoms go first, the centre stays in the big cluster
        assert!(cs.iter().any(|c| c.indices.len() >= 25 && c.indices.contains(&0)));
    }

    #[test]
    fn detached_atoms_stay_linked() {
        let p = pattern(20);
        let full = load(&p, 1.0, 0).unwrap();
        let cs = enforce_cap(extract_clusters(&full, p.spacing), &full.atoms, p.spacing, 8).unwrap();
        assert!(cs.iter().all(|c| c.indices.len() <= 8));
        // far fewer pieces than atoms: rings peel off as linked groups
        assert!(cs.len() < full.atoms.len() / 2, "{} pieces", cs.len());
        for c in &cs {
            let sub = LoadingOutcome {
                filled: vec![],
                atoms: c.register.clone(),
            };
            assert_eq!(extract_clusters(&sub, p.spacing).len(), 1);
        }
    }

    fn qubo_from_register(reg: &Register, sigma: &[usize]) -> QuboMatrix {
        // Q[i, j] = U[sigma_i, sigma_j]
        let n = reg.len();
        let u = interaction_matrix(reg).unwrap();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = -1.0;
            for j in 0..n {
                if i != j {
                    q[i * n + j] = u[sigma[i] * n + sigma[j]];
                }
            }
        }
        QuboMatrix::from_dense(n, q, 0.0).unwrap()
    }

    fn four_atoms() -> Register {
        Register::new(vec![[0.0, 0.0], [7.0, 0.0], [3.0, 8.0], [15.0, 4.0]], DEFAULT_C6).unwrap()
    }

    #[test]
    fn identity_kept_when_exact() {
        let reg = four_atoms();
        let q = qubo_from_register(&reg, &[0, 1, 2, 3]);
        let r = relabel(&q, &reg, 40, 1).unwrap();
        assert_eq!(r.sigma, vec![0, 1, 2, 3]);
        assert!(r.separation < 1e-12);
        assert_eq!(r.n_iter_used, 24);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn random_search_against_exhaustive_oracle() {
        let reg = four_atoms();
        let n = 4;
        let hidden = vec![2, 0, 3, 1];
        let q = qubo_from_register(&reg, &hidden);
        let u = normalized_off_diagonal(&interaction_matrix(&reg).unwrap(), n);
        let qn = normalized_off_diagonal(q.as_slice(), n);
        let exhaustive = permutations(n)
            .into_iter()
            .map(|p| separation(&u, &qn, n, &p))
            .fold(f64::INFINITY, f64::min);
        assert!(exhaustive < 1e-12);
        // a budget covering all 24 permutations is exhaustive
        for seed in 0..20 {
            let r = relabel(&q, &reg, 40, seed).unwrap();
            assert_eq!(r.n_iter_used, 24);
            assert!(r.separation <= exhaustive + 1e-12);
            let atom0 = hidden.iter().position(|&a| a == 0).unwrap();
            assert_eq!(r.apply(&"1000".parse().unwrap()).bits()[atom0], 1);
        }
        // below that it samples: 12 draws miss a single zero-separation
        // permutation with probability (23/24)^12 ~ 0.6
        let trials = 200;
        let hits = (0..trials)
            .filter(|&s| relabel(&q, &reg, 12, s).unwrap().separation <= exhaustive + 1e-12)
            .count();
        let rate = hits as f64 / trials as f64;
        assert!(rate > 0.2 && rate < 0.9, "hit rate {rate}");
    }

    #[test]
    fn relabel_budget_default() {
        assert_eq!(default_relabel_budget(50), 500);
        let reg = four_atoms();
        let q = qubo_from_register(&reg, &[0, 1, 2, 3]);
        assert!(relabel(&q, &reg.subset(&[0, 1, 2]), 4, 0).is_err());
    }

    #[test]
    fn single_variable_solve() {
        for v in [-0.3, 0.3] {
            let q = QuboMatrix::from_dense(1, vec![v], 0.0).unwrap();
            let p = design_pattern(1, 0.5, default_spacing()).unwrap();
            let res = rgs_solve(&q, &p, &PulseProgram::default(), 60, 2, &RgsOptions::default()).unwrap();
            let best = res.trace.best.unwrap();
            assert_eq!(best.1, v.min(0.0));
        }
    }

    #[test]
    fn reuse_collects_exact_sizes() {
        let reg = |k: usize| Register::new((0..k).map(|i| [i as f64 * 100.0, 0.0]).collect(), DEFAULT_C6).unwrap();
        let raw = vec![RawCycle {
            cycle: 1,
            atom_count: 44,
            clusters: [2, 6, 7, 9, 20]
                .iter()
                .map(|&k| ClusterShot {
                    register: reg(k),
                    bits: Bitstring::zeros(k),
                })
                .collect(),
        }];
        assert_eq!(reuse_subsize(&raw, 9).len(), 1);
        assert!(reuse_subsize(&raw, 21).is_empty());
    }

    #[test]
    fn solve_is_seeded_and_monotone() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let n = 6;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = -r.random_range(0.5..1.0);
            for j in i + 1..n {
                let v = r.random_range(0.0..1.0);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        let q = QuboMatrix::from_dense(n, q, 0.0).unwrap();
        let p = pattern(n);
        let opts = RgsOptions::default();
        let a = rgs_solve(&q, &p, &PulseProgram::default(), 80, 4, &opts).unwrap();
        assert_eq!(a, rgs_solve(&q, &p, &PulseProgram::default(), 80, 4, &opts).unwrap());
        assert_eq!(a.trace.len(), 80);
        assert_eq!(a.raw.len(), 80);
        assert!(a.trace.records.windows(2).all(|w| match (w[0].best_cost, w[1].best_cost) {
            (Some(x), Some(y)) => y <= x,
            (Some(_), None) => false,
            _ => true,
        }));
        let total_shots: usize = a.raw.iter().map(|c| c.clusters.len()).sum();
        assert!(total_shots >= a.raw.len());
        let lean = RgsOptions {
            evolve_mismatched: false,
            ..opts
        };
        let b = rgs_solve(&q, &p, &PulseProgram::default(), 80, 4, &lean).unwrap();
        // scoring does not depend on whether mismatched cycles were evolved
        assert_eq!(a.trace.best, b.trace.best);
        assert!(rgs_solve(&q, &p, &PulseProgram::default(), 0, 4, &opts).is_err());

        let selected = RgsOptions {
            post_select: true,
            ..lean
        };
        let c = rgs_solve(&q, &p, &PulseProgram::default(), 30, 4, &selected).unwrap();
        assert_eq!(c.trace.n_scored(), 30);
        assert!(c.trace.records.iter().all(|r| r.atom_count == q.n()));
    }

    #[test]
    fn exact_loading() {
        let p = pattern(10);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut hits = vec![0usize; p.sites.len()];
        for _ in 0..2000 {
            let o = load_exact_with(&p, 10, &mut r).unwrap();
            assert_eq!(o.atoms.len(), 10);
            assert_eq!(o.filled.iter().filter(|&&f| f).count(), 10);
            for s in o.sites() {
                hits[s] += 1;
            }
        }
        // every site is filled with probability 10/19
        let expect = 2000.0 * 10.0 / p.sites.len() as f64;
        assert!(hits.iter().all(|&h| (h as f64 - expect).abs() < 0.15 * expect), "{hits:?}");
        assert!(load_exact_with(&p, p.sites.len() + 1, &mut r).is_err());
        assert_eq!(load_exact_with(&p, 0, &mut r).unwrap().atoms.len(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn relabel_never_worse_than_identity(seed in any::<u64>(), n in 2usize..9) {
            let p = design_pattern(n, 0.5, default_spacing()).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let idx = rand::seq::index::sample(&mut r, p.sites.len(), n).into_vec();
            let reg = Register::new(idx.iter().map(|&i| p.sites[i]).collect(), DEFAULT_C6).unwrap();
            let mut q = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = r.random_range(-1.0..1.0);
                    q[i * n + j] = v;
                    q[j * n + i] = v;
                }
            }
            let q = QuboMatrix::from_dense(n, q, 0.0).unwrap();
            let res = relabel(&q, &reg, 10 * n, seed).unwrap();
            let u = normalized_off_diagonal(&interaction_matrix(&reg).unwrap(), n);
            let qn = normalized_off_diagonal(q.as_slice(), n);
            let identity: Vec<usize> = (0..n).collect();
            prop_assert!(res.separation <= separation(&u, &qn, n, &identity));
            let mut sorted = res.sigma.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, identity);
        }
    }
}
