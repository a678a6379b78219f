use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qboost_core::bench::near_optimal;
use qboost_core::qubo::{brute_force_min, gap_from_costs, random_qubo, Bitstring, QuboMatrix};
use qboost_core::solvers::{simulated_annealing, uniform_solve, SaSchedule};

/// Dense symmetric matrix with entries of both signs.
fn mixed_qubo(n: usize, seed: u64) -> QuboMatrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = r.random_range(-1.0..1.0);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    QuboMatrix::from_dense(n, q, 0.0).unwrap()
}

/// Plain double loop over every bitstring, no incremental updates.
fn enumerate(q: &QuboMatrix) -> Vec<f64> {
    let n = q.n();
    (0..1u64 << n)
        .map(|code| {
            let mut e = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if code >> i & 1 == 1 && code >> j & 1 == 1 {
                        e += q.get(i, j);
                    }
                }
            }
            e
        })
        .collect()
}

#[test]
fn brute_force_matches_enumeration() {
    for seed in 0..30 {
        let n = 1 + (seed as usize % 11);
        let q = mixed_qubo(n, seed);
        let costs = enumerate(&q);
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let (w, c) = brute_force_min(&q).unwrap();
        assert!((c - min).abs() < 1e-9, "seed {seed}: {c} vs {min}");
        assert!((q.energy(w.bits()) - c).abs() < 1e-12);
    }
}

#[test]
fn near_optimal_counts_match_enumeration() {
    for seed in 0..10 {
        let q = random_qubo(10, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let costs = enumerate(&q);
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let within = costs.iter().filter(|&&c| gap_from_costs(c, min).unwrap() <= 0.05).count() as u64;
        let got = near_optimal(&q, 0.05).unwrap();
        assert!((got.optimum - min).abs() < 1e-9);
        assert_eq!(got.count, within, "seed {seed}");
    }
}

#[test]
fn sa_finds_small_optima() {
    for seed in 0..8 {
        let q = mixed_qubo(12, 100 + seed);
        let (_, exact) = brute_force_min(&q).unwrap();
        let t = simulated_annealing(&q, &SaSchedule::default(), 20, seed).unwrap();
        assert!((t.best.unwrap().1 - exact).abs() < 1e-9);
    }
}

#[test]
fn random_qubo_shape() {
    let q = random_qubo(9, 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for i in 0..9 {
        assert!((-3.0..=0.0).contains(&q.get(i, i)));
        for j in 0..9 {
            assert_eq!(q.get(i, j), q.get(j, i));
            if i != j {
                assert!((0.0..1.0).contains(&q.get(i, j)));
            }
        }
    }
    assert!(random_qubo(3, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_sampler_beats_the_optimum(n in 1usize..10, seed in 0u64..1000) {
        let q = mixed_qubo(n, seed);
        let (_, exact) = brute_force_min(&q).unwrap();
        let u = uniform_solve(&q, 50, seed).unwrap();
        let s = simulated_annealing(&q, &SaSchedule { n_sweeps: 20, ..SaSchedule::default() }, 2, seed).unwrap();
        for t in [&u, &s] {
            let best = t.best.as_ref().unwrap();
            prop_assert!(best.1 >= exact - 1e-9);
            prop_assert!((q.energy(best.0.bits()) - best.1).abs() < 1e-9);
            // best-so-far never goes up
            let bests: Vec<f64> = t.records.iter().filter_map(|r| r.best_cost).collect();
            prop_assert!(bests.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn energy_is_a_quadratic_form(n in 1usize..12, seed in 0u64..1000, code in any::<u64>()) {
        let q = mixed_qubo(n, seed);
        let w = Bitstring::from_index(code & ((1 << n) - 1), n);
        let costs = enumerate(&q);
        prop_assert!((q.energy(w.bits()) - costs[(code & ((1 << n) - 1)) as usize]).abs() < 1e-9);
        for i in 0..n {
            let mut f = w.clone();
            f.flip(i);
            let d = q.energy(f.bits()) - q.energy(w.bits());
            prop_assert!((q.flip_delta(w.bits(), i) - d).abs() < 1e-9);
        }
    }
}
