//! End-to-end stages: data, ensemble, QUBO, solver, classifier, metrics;
//! plus the solver benchmark. Nothing here touches the file system except
//! reading CSV inputs named by the config.

use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use qboost_core::bench::{
    cycles_to_gap, fit_scaling, gap_convergence, near_optimal, rank_fraction, sorted_costs, GapSeries, ScalingFit,
    EXHAUSTIVE_CAP,
};
use qboost_core::classifier::{threshold_from_predictions, tune_lambda, LambdaTuning, StrongClassifier, TuningOptions};
use qboost_core::dataset::{generate_synthetic, rebalance, Dataset, Label, SyntheticSpec};
use qboost_core::ising::{PulseProgram, Register};
use qboost_core::learners::{predict_matrix, train_ensemble, EnsembleConfig, LearnerKind, WeakLearner};
use qboost_core::metrics::{pr_curve, precision_at_recall, PrCurve};
use qboost_core::qubo::{brute_force_min, build, gap_from_costs, random_qubo, Bitstring, QuboMatrix, BRUTE_FORCE_CAP};
use qboost_core::rgs::{default_spacing, design_pattern, qubo_detuning, rgs_solve, Detuning};
use qboost_core::rng;
use qboost_core::solvers::{
    qaoa_naive, reference_solution, simulated_annealing, tebd_solve, uniform_solve, QaoaResult, SolveTrace,
    TebdParams,
};

use crate::config::{
    config_hash, BenchConfig, DataSource, InstanceConfig, InstanceKind, LambdaConfig, RunConfig, SolverConfig, TrapConfig,
};
use crate::io;

/// Largest size whose full cost spectrum is sorted for sample ranks.
pub const RANK_CAP: usize = 20;

/// Annealing sweeps behind a reference optimum above the brute-force cap.
pub const REFERENCE_SWEEPS: usize = 200_000;

struct Stage {
    name: &'static str,
    start: Instant,
}

impl Stage {
    fn begin(name: &'static str) -> Self {
        log::info!("stage {name}");
        Self {
            name,
            start: Instant::now(),
        }
    }

    fn end(self) {
        log::info!("stage {} took {:.3?}", self.name, self.start.elapsed());
    }
}

pub fn load_data(source: &DataSource, seed: u64) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Synthetic(spec) => {
            let spec = SyntheticSpec {
                seed: rng::derive(seed, "data"),
                ..spec.clone()
            };
            Ok(generate_synthetic(&spec)?)
        }
        DataSource::Csv {
            train,
            test,
            label_column,
            date_column,
        } => Ok((
            io::load_csv(train, label_column, date_column)?,
            io::load_csv(test, label_column, date_column)?,
        )),
    }
}

/// Best bitstring a solver found, with its run.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub weights: Bitstring,
    pub cost: f64,
    pub trace: SolveTrace,
}

fn pattern_spacing(spacing: Option<f64>) -> f64 {
    spacing.unwrap_or_else(default_spacing)
}

pub fn solve_qubo(q: &QuboMatrix, solver: &SolverConfig, seed: u64) -> Result<SolveOutcome> {
    solver.validate()?;
    let n = q.n();
    let seed = rng::derive(seed, solver.name());
    let trace = match solver {
        SolverConfig::BruteForce => {
            let (w, c) = brute_force_min(q)?;
            let mut t = SolveTrace::new("brute_force", seed, n);
            t.push(n, Some((w, c)));
            t
        }
        SolverConfig::SimulatedAnnealing { schedule, n_restarts } => {
            simulated_annealing(q, schedule, *n_restarts, seed)?
        }
        SolverConfig::Tebd {
            chi,
            tau,
            n_steps,
            scale_tau,
        } => {
            let scale = if *scale_tau { q.max_abs_entry() } else { 1.0 };
            let tau = if scale > 0.0 { tau / scale } else { *tau };
            let params = TebdParams {
                chi: *chi,
                tau,
                n_steps: *n_steps,
            };
            tebd_solve(q, &params)?.1
        }
        SolverConfig::Rgs {
            n_cycles,
            program,
            options,
            spacing,
        } => {
            let pattern = design_pattern(n, options.loading_probability, pattern_spacing(*spacing))?;
            let result = rgs_solve(q, &pattern, program, *n_cycles, seed, options)?;
            log::info!(
                "rgs: {} traps, end detuning {:.3} Omega, {} of {} cycles scored",
                pattern.n_traps,
                result.delta_end / program.omega,
                result.trace.n_scored(),
                n_cycles
            );
            result.trace
        }
        SolverConfig::Uniform { n_cycles } => uniform_solve(q, *n_cycles, seed)?,
        SolverConfig::Qaoa { .. } => sample_trace(q, solver, seed)?,
    };
    let (weights, cost) = trace
        .best
        .clone()
        .ok_or_else(|| anyhow!("{} produced no bitstring of size {n}", solver.name()))?;
    Ok(SolveOutcome { weights, cost, trace })
}

/// Naive QAOA on the first `n` sites of the trap pattern designed for
/// `n` variables.
pub fn run_qaoa(
    q: &QuboMatrix,
    n_outer: usize,
    shots_per_iter: usize,
    program: &PulseProgram,
    traps: &TrapConfig,
    detuning: Detuning,
    seed: u64,
) -> Result<QaoaResult> {
    let n = q.n();
    let pattern = design_pattern(n, traps.loading_probability, pattern_spacing(traps.spacing))?;
    let register = Register::new(pattern.sites[..n].to_vec(), pattern.c6)?;
    let program = match detuning {
        Detuning::Fixed => *program,
        Detuning::FromQubo => PulseProgram {
            delta_end: qubo_detuning(q, &pattern, program.omega),
            ..*program
        },
    };
    Ok(qaoa_naive(q, &register, &program, n_outer, shots_per_iter, seed)?)
}

/// Exhaustive below the brute-force cap, otherwise a long annealing run.
pub fn reference(q: &QuboMatrix, seed: u64) -> Result<(Bitstring, f64, &'static str)> {
    let (w, c) = reference_solution(q, REFERENCE_SWEEPS, rng::derive(seed, "reference"))?;
    let method = if q.n() <= BRUTE_FORCE_CAP {
        "brute_force"
    } else {
        "simulated_annealing"
    };
    Ok((w, c, method))
}

/// On-disk model: the ensemble with its binary weights and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub ensemble: Vec<WeakLearner>,
    pub weights: Bitstring,
    pub threshold: f64,
    pub lambda: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLearner {
    pub index: usize,
    pub kind: LearnerKind,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub seed: u64,
    pub solver: String,
    pub n_learners: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_positive_fraction: f64,
    pub test_positive_fraction: f64,
    pub lambda: f64,
    /// `lambda` over `S / N`.
    pub lambda_fraction: f64,
    pub tuning: Option<LambdaTuning>,
    pub qubo_cost: f64,
    pub reference_cost: f64,
    pub reference_method: String,
    pub gap: Option<f64>,
    pub cycles_used: usize,
    pub cycles_scored: usize,
    pub weights: String,
    pub n_selected: usize,
    pub threshold: f64,
    pub recall_target: f64,
    /// Test precision at the recall target; absent when unreachable.
    pub precision_at_recall: Option<f64>,
    pub best_single_learner: Option<SingleLearner>,
}

/// Everything a training run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub report: TrainReport,
    pub model: ModelFile,
    pub qubo: QuboMatrix,
    pub trace: SolveTrace,
    pub pr_curve: Option<PrCurve>,
    pub test_margins: Vec<f64>,
    pub test_predictions: Vec<Label>,
}

fn precision_of(margins: &[f64], labels: &[Label], n_thresholds: usize, recall: f64) -> (Option<PrCurve>, Option<f64>) {
    match pr_curve(margins, labels, n_thresholds) {
        Ok(c) => {
            let p = precision_at_recall(&c, recall).ok();
            (Some(c), p)
        }
        Err(e) => {
            log::warn!("no PR curve: {e}");
            (None, None)
        }
    }
}

/// Best test precision at the recall target among the individual learners.
pub fn best_single_learner(
    learners: &[WeakLearner],
    test: &Dataset,
    n_thresholds: usize,
    recall: f64,
) -> Result<Option<SingleLearner>> {
    let h = predict_matrix(learners, test)?;
    let labels = test.labels();
    let mut best: Option<SingleLearner> = None;
    for (i, l) in learners.iter().enumerate() {
        let margins: Vec<f64> = h.row(i).iter().map(|&v| f64::from(v)).collect();
        if let (_, Some(p)) = precision_of(&margins, &labels, n_thresholds, recall) {
            if best.as_ref().is_none_or(|b| p > b.precision) {
                best = Some(SingleLearner {
                    index: i,
                    kind: l.kind,
                    precision: p,
                });
            }
        }
    }
    Ok(best)
}

pub fn run_train(config: &RunConfig) -> Result<TrainRun> {
    config.validate().context("invalid config")?;
    let hashed = RunConfig {
        out: None,
        ..config.clone()
    };
    let hash = config_hash(&hashed);
    let seed = config.seed;

    let stage = Stage::begin("data");
    let (train, test) = load_data(&config.data, seed).context("stage data")?;
    let train = match config.rebalance.mode() {
        Some(mode) => rebalance(&train, mode, rng::derive(seed, "rebalance")).context("stage data")?,
        None => train,
    };
    stage.end();

    let ensemble_config = EnsembleConfig {
        seed: rng::derive(seed, "ensemble"),
        ..config.ensemble.clone()
    };
    let n = ensemble_config.n_learners;
    let s = train.len() as f64;

    let stage = Stage::begin("lambda");
    let (lambda, tuning) = match &config.lambda {
        LambdaConfig::Fixed { fraction } => (fraction * s / n as f64, None),
        LambdaConfig::Tuned {
            fractions,
            train_fraction,
        } => {
            let grid: Vec<f64> = fractions.iter().map(|f| f * s / 10.0).collect();
            let options = TuningOptions {
                train_fraction: *train_fraction,
                recall_target: config.metrics.recall_target,
                n_thresholds: config.metrics.n_thresholds,
            };
            let t = tune_lambda(&ensemble_config, &train, &grid, rng::derive(seed, "tuning"), &options)
                .context("stage lambda")?;
            (t.lambda, Some(t))
        }
    };
    stage.end();

    let stage = Stage::begin("ensemble");
    let ensemble = train_ensemble(&ensemble_config, &train).context("stage ensemble")?;
    stage.end();

    let stage = Stage::begin("qubo");
    let qubo = build(&ensemble.predictions, &train.labels(), lambda).context("stage qubo")?;
    stage.end();

    let stage = Stage::begin("solver");
    let outcome = solve_qubo(&qubo, &config.solver, seed).context("stage solver")?;
    let (_, reference_cost, method) = reference(&qubo, seed).context("stage solver")?;
    let gap = gap_from_costs(outcome.cost, reference_cost).ok();
    stage.end();

    let stage = Stage::begin("classifier");
    let threshold = threshold_from_predictions(&ensemble.predictions, &outcome.weights).context("stage classifier")?;
    let classifier = StrongClassifier::new(ensemble.learners.clone(), outcome.weights.clone(), threshold)
        .context("stage classifier")?;
    let margins = classifier.margins(&test).context("stage classifier")?;
    let predictions = classifier.predict_all(&test).context("stage classifier")?;
    stage.end();

    let stage = Stage::begin("metrics");
    let labels = test.labels();
    let (curve, precision) = precision_of(&margins, &labels, config.metrics.n_thresholds, config.metrics.recall_target);
    let single = best_single_learner(
        &ensemble.learners,
        &test,
        config.metrics.n_thresholds,
        config.metrics.recall_target,
    )
    .context("stage metrics")?;
    stage.end();

    let report = TrainReport {
        config_hash: hash.clone(),
        seed,
        solver: config.solver.name().into(),
        n_learners: n,
        train_rows: train.len(),
        test_rows: test.len(),
        train_positive_fraction: train.positive_fraction(),
        test_positive_fraction: test.positive_fraction(),
        lambda,
        lambda_fraction: lambda * n as f64 / s,
        tuning,
        qubo_cost: outcome.cost,
        reference_cost,
        reference_method: method.into(),
        gap,
        cycles_used: outcome.trace.len(),
        cycles_scored: outcome.trace.n_scored(),
        weights: outcome.weights.to_string(),
        n_selected: outcome.weights.count_ones(),
        threshold: classifier.threshold,
        recall_target: config.metrics.recall_target,
        precision_at_recall: precision,
        best_single_learner: single,
    };
    let model = ModelFile {
        ensemble: classifier.learners,
        weights: classifier.weights,
        threshold: classifier.threshold,
        lambda,
        config_hash: hash,
    };
    Ok(TrainRun {
        report,
        model,
        qubo,
        trace: outcome.trace,
        pr_curve: curve,
        test_margins: margins,
        test_predictions: predictions,
    })
}

/// QBoost QUBO of the `k`-th benchmark instance at size `n`. The dataset
/// and ensemble seeds depend only on `k`, so sizes share their data.
pub fn bench_instance(n: usize, seed: u64, k: usize, spec: &InstanceConfig) -> Result<QuboMatrix> {
    let s = rng::derive_indexed(seed, "bench-instance", k as u64);
    if spec.kind == InstanceKind::Random {
        return Ok(random_qubo(n, spec.diagonal_scale, &mut rng::stream(s, "random-qubo"))?);
    }
    let data = SyntheticSpec {
        n_rows: spec.n_rows,
        seed: s,
        ..SyntheticSpec::default()
    };
    let (train, _) = generate_synthetic(&data)?;
    let train = match spec.rebalance.mode() {
        Some(mode) => rebalance(&train, mode, s)?,
        None => train,
    };
    let config = EnsembleConfig {
        n_learners: n,
        mix: Default::default(),
        variant: spec.variant,
        n_subsets: spec.n_subsets,
        params: Default::default(),
        seed: s,
    };
    let ensemble = train_ensemble(&config, &train)?;
    let lambda = spec.lambda_fraction * train.len() as f64 / n as f64;
    Ok(build(&ensemble.predictions, &train.labels(), lambda)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeResult {
    pub n: usize,
    /// Cycles until the instance-averaged best gap is below threshold.
    pub cycles_to_gap: Option<usize>,
    pub per_instance: Vec<Option<usize>>,
    /// Mean rank fraction of the scored bitstrings among all `2^n` costs,
    /// averaged over instances; only up to `RANK_CAP` variables.
    pub mean_rank: Option<f64>,
    /// Instance-averaged best gap at the end of the budget.
    pub final_gap: f64,
    #[serde(skip)]
    pub series: Option<GapSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverBench {
    pub solver: String,
    pub sizes: Vec<SizeResult>,
    pub fit: Option<ScalingFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedSize {
    pub n: usize,
    /// Mean over instances of `2^n / count`.
    pub mean_cycles: f64,
    pub per_instance: Vec<f64>,
}

/// Uniform sampling's exact expected cycles to the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformExpected {
    pub sizes: Vec<ExpectedSize>,
    pub fit: Option<ScalingFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReference {
    pub n: usize,
    pub instance: usize,
    pub cost: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub seed: u64,
    pub gap_threshold: f64,
    pub references: Vec<InstanceReference>,
    pub solvers: Vec<SolverBench>,
    pub uniform_expected: Option<UniformExpected>,
}

fn fit_points(points: &[(f64, f64)]) -> Option<ScalingFit> {
    match fit_scaling(points) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("no scaling fit: {e}");
            None
        }
    }
}

/// One run of a sampler with a cycle budget.
pub fn sample_trace(q: &QuboMatrix, solver: &SolverConfig, seed: u64) -> Result<SolveTrace> {
    Ok(match solver {
        SolverConfig::SimulatedAnnealing { schedule, n_restarts } => simulated_annealing(q, schedule, *n_restarts, seed)?,
        SolverConfig::Rgs {
            n_cycles,
            program,
            options,
            spacing,
        } => {
            let pattern = design_pattern(q.n(), options.loading_probability, pattern_spacing(*spacing))?;
            rgs_solve(q, &pattern, program, *n_cycles, seed, options)?.trace
        }
        SolverConfig::Uniform { n_cycles } => uniform_solve(q, *n_cycles, seed)?,
        SolverConfig::Qaoa {
            n_outer,
            shots_per_iter,
            program,
            traps,
            detuning,
        } => run_qaoa(q, *n_outer, *shots_per_iter, program, traps, *detuning, seed)?.trace,
        SolverConfig::BruteForce | SolverConfig::Tebd { .. } => bail!("{} cannot be benchmarked", solver.name()),
    })
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate().context("invalid bench config")?;
    let hash = config_hash(&BenchConfig {
        out: None,
        ..config.clone()
    });
    let seed = config.seed;
    let thr = config.gap_threshold;
    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();

    let mut references = Vec::new();
    let mut per_solver: Vec<SolverBench> = config
        .solvers
        .iter()
        .map(|s| SolverBench {
            solver: s.name().into(),
            sizes: Vec::new(),
            fit: None,
        })
        .collect();
    let mut expected = Vec::new();

    for &n in &sizes {
        let stage = Stage::begin("bench instances");
        let mut qubos = Vec::with_capacity(config.n_instances);
        let mut refs = Vec::with_capacity(config.n_instances);
        let mut counts = Vec::new();
        for k in 0..config.n_instances {
            let q = bench_instance(n, seed, k, &config.instances).with_context(|| format!("instance {k} at n={n}"))?;
            let (cost, method) = if config.uniform_expected && n <= EXHAUSTIVE_CAP {
                let no = near_optimal(&q, thr)?;
                counts.push(no.expected_uniform_cycles());
                (no.optimum, "exhaustive")
            } else {
                let (_, c, m) = reference(&q, rng::derive_indexed(seed, "bench-reference", k as u64))?;
                (c, m)
            };
            references.push(InstanceReference {
                n,
                instance: k,
                cost,
                method: method.into(),
            });
            qubos.push(q);
            refs.push(cost);
        }
        let spectra: Vec<Vec<f64>> = if n <= RANK_CAP && !config.solvers.is_empty() {
            qubos.iter().map(sorted_costs).collect::<qboost_core::Result<_>>()?
        } else {
            Vec::new()
        };
        stage.end();
        if config.uniform_expected {
            if counts.len() == config.n_instances {
                expected.push(ExpectedSize {
                    n,
                    mean_cycles: counts.iter().sum::<f64>() / counts.len() as f64,
                    per_instance: counts,
                });
            } else {
                log::warn!("n={n} exceeds the exhaustive cap of {EXHAUSTIVE_CAP}; no uniform expectation");
            }
        }

        for (solver, out) in config.solvers.iter().zip(per_solver.iter_mut()) {
            let stage = Stage::begin("bench solver");
            let base = rng::derive(seed, &format!("bench-{}-{n}", solver.name()));
            let mut traces = Vec::with_capacity(qubos.len());
            let mut per_instance = Vec::with_capacity(qubos.len());
            let mut ranks = Vec::with_capacity(qubos.len());
            for (k, (q, &r)) in qubos.iter().zip(&refs).enumerate() {
                let t = sample_trace(q, solver, rng::derive_indexed(base, "instance", k as u64))
                    .with_context(|| format!("{} on instance {k} at n={n}", solver.name()))?;
                let gaps: Vec<f64> = t
                    .best_gaps(r)?
                    .into_iter()
                    .map(|g| g.unwrap_or(qboost_core::bench::UNSCORED_GAP))
                    .collect();
                per_instance.push(cycles_to_gap(&gaps, thr)?);
                if let Some(sorted) = spectra.get(k) {
                    let r: Vec<f64> = t.records.iter().filter_map(|c| c.cost).map(|c| rank_fraction(sorted, c)).collect();
                    if !r.is_empty() {
                        ranks.push(r.iter().sum::<f64>() / r.len() as f64);
                    }
                }
                traces.push(t);
            }
            let series = gap_convergence(&traces, &refs)?;
            let reached = cycles_to_gap(&series.mean, thr)?;
            log::info!("{} n={n}: cycles to {thr} gap {reached:?}, per instance {per_instance:?}", solver.name());
            out.sizes.push(SizeResult {
                n,
                cycles_to_gap: reached,
                per_instance,
                mean_rank: (!ranks.is_empty()).then(|| ranks.iter().sum::<f64>() / ranks.len() as f64),
                final_gap: series.mean.last().copied().unwrap_or(qboost_core::bench::UNSCORED_GAP),
                series: Some(series),
            });
            stage.end();
        }
    }

    for s in &mut per_solver {
        let points: Vec<(f64, f64)> = s
            .sizes
            .iter()
            .filter_map(|r| r.cycles_to_gap.map(|c| (r.n as f64, c as f64)))
            .collect();
        s.fit = fit_points(&points);
    }
    let uniform_expected = config.uniform_expected.then(|| {
        let points: Vec<(f64, f64)> = expected.iter().map(|e| (e.n as f64, e.mean_cycles)).collect();
        UniformExpected {
            fit: fit_points(&points),
            sizes: expected,
        }
    });
    Ok(BenchReport {
        config_hash: hash,
        seed,
        gap_threshold: thr,
        references,
        solvers: per_solver,
        uniform_expected,
    })
}
