//! Command-line front end. Each subcommand writes its outputs and a
//! manifest into one directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use qboost_core::dataset::{generate_synthetic, SyntheticSpec};
use qboost_core::ising::PulseProgram;
use qboost_core::qubo::gap_from_costs;
use qboost_core::rgs::RgsOptions;
use qboost_core::solvers::SaSchedule;

use crate::config::{config_hash, BenchConfig, InstanceConfig, RunConfig, SolverConfig};
use crate::io;
use crate::manifest::OutputSet;
use crate::pipeline::{reference, run_bench, run_train, solve_qubo, BenchReport, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "qboost", version, about = "QUBO-weighted ensembles and the solvers behind them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// brute_force, simulated_annealing (sa), tebd, rgs, uniform or qaoa.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic train/test CSVs from a SyntheticSpec JSON.
    GenData,
    /// Full pipeline: data, ensemble, QUBO, solver, classifier, metrics.
    Train,
    /// Solve a QUBO file.
    Solve { qubo: PathBuf },
    /// Gap convergence and scaling fits over seeded QUBO instances.
    Bench,
    /// Summarize a finished run directory.
    Report { dir: PathBuf },
}

pub fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => gen_data(cli),
        Command::Train => train(cli),
        Command::Solve { qubo } => solve(cli, qubo),
        Command::Bench => bench(cli),
        Command::Report { dir } => report(cli, dir),
    }
}

fn out_dir(cli: &Cli, from_config: Option<&PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| from_config.cloned())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    io::read_json(path).context("reading config")
}

fn gen_data(cli: &Cli) -> Result<()> {
    let mut spec: SyntheticSpec = match &cli.config {
        Some(p) => read_config(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let (train, test) = generate_synthetic(&spec)?;
    let dir = out_dir(cli, None);
    let mut out = OutputSet::new(&dir);
    out.with("train.csv", |p| io::write_dataset_csv(p, &train))?;
    out.with("test.csv", |p| io::write_dataset_csv(p, &test))?;
    out.json("spec.json", &spec)?;
    out.finish("gen-data", spec.seed, &config_hash(&spec), &spec)?;
    println!(
        "train: {} rows, {:.2}% positive; test: {} rows, {:.2}% positive -> {}",
        train.len(),
        100.0 * train.positive_fraction(),
        test.len(),
        100.0 * test.positive_fraction(),
        dir.display()
    );
    Ok(())
}

fn train(cli: &Cli) -> Result<()> {
    let mut config: RunConfig = match &cli.config {
        Some(p) => read_config(p)?,
        None => RunConfig::example(14, SolverConfig::BruteForce),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(name) = &cli.solver {
        config.solver = SolverConfig::by_name(name)?;
    }
    let dir = out_dir(cli, config.out.as_ref());
    let run = run_train(&config)?;
    let mut out = OutputSet::new(&dir);
    out.json("report.json", &run.report)?;
    out.json("model.json", &run.model)?;
    out.with("qubo.json", |p| io::write_qubo(p, &run.qubo))?;
    out.with("trace.csv", |p| io::write_trace_csv(p, &run.trace, run.report.reference_cost))?;
    if let Some(c) = &run.pr_curve {
        out.with("pr_curve.csv", |p| io::write_pr_csv(p, c))?;
    }
    out.with("predictions.csv", |p| {
        io::write_predictions_csv(p, &run.test_margins, &run.test_predictions)
    })?;
    let resolved = RunConfig {
        out: None,
        ..config.clone()
    };
    out.finish("train", config.seed, &run.report.config_hash, &resolved)?;
    print!("{}", train_summary(&run.report));
    Ok(())
}

#[derive(Debug, Serialize)]
struct Solution {
    n: usize,
    solver: String,
    bits: String,
    cost: f64,
    reference_cost: f64,
    reference_method: String,
    gap: Option<f64>,
    cycles_used: usize,
}

#[derive(Debug, Serialize)]
struct SolveConfig<'a> {
    qubo_sha256: String,
    seed: u64,
    solver: &'a SolverConfig,
}

fn solve(cli: &Cli, qubo_path: &Path) -> Result<()> {
    let q = io::read_qubo(qubo_path)?;
    let solver = match (&cli.config, &cli.solver) {
        (Some(p), None) => read_config(p)?,
        (None, name) => SolverConfig::by_name(name.as_deref().unwrap_or("simulated_annealing"))?,
        (Some(_), Some(_)) => bail!("give either --config or --solver, not both"),
    };
    let seed = cli.seed.unwrap_or(0);
    let outcome = solve_qubo(&q, &solver, seed)?;
    let (_, reference_cost, method) = reference(&q, seed)?;
    let solution = Solution {
        n: q.n(),
        solver: solver.name().into(),
        bits: outcome.weights.to_string(),
        cost: outcome.cost,
        reference_cost,
        reference_method: method.into(),
        gap: gap_from_costs(outcome.cost, reference_cost).ok(),
        cycles_used: outcome.trace.len(),
    };
    let raw = std::fs::read(qubo_path).with_context(|| format!("reading {}", qubo_path.display()))?;
    let resolved = SolveConfig {
        qubo_sha256: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&raw)),
        seed,
        solver: &solver,
    };
    let dir = out_dir(cli, None);
    let mut out = OutputSet::new(&dir);
    out.json("solution.json", &solution)?;
    out.with("trace.csv", |p| io::write_trace_csv(p, &outcome.trace, reference_cost))?;
    out.finish("solve", seed, &config_hash(&resolved), &resolved)?;
    println!("{} {}", solution.bits, solution.cost);
    Ok(())
}

/// Three samplers at N=12 with a 1000-cycle budget.
pub fn default_bench() -> BenchConfig {
    BenchConfig {
        seed: 0,
        sizes: vec![12],
        n_instances: 5,
        solvers: vec![
            SolverConfig::Rgs {
                n_cycles: 1000,
                program: PulseProgram::default(),
                options: RgsOptions::default(),
                spacing: None,
            },
            SolverConfig::Uniform { n_cycles: 1000 },
            SolverConfig::SimulatedAnnealing {
                schedule: SaSchedule {
                    n_sweeps: 10,
                    ..SaSchedule::default()
                },
                n_restarts: 1000,
            },
        ],
        instances: InstanceConfig::default(),
        gap_threshold: qboost_core::bench::DEFAULT_GAP_THRESHOLD,
        uniform_expected: false,
        out: None,
    }
}

fn bench(cli: &Cli) -> Result<()> {
    let mut config: BenchConfig = match &cli.config {
        Some(p) => read_config(p)?,
        None => default_bench(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(name) = &cli.solver {
        let pick = SolverConfig::by_name(name)?;
        let kept: Vec<SolverConfig> = config.solvers.iter().filter(|s| s.name() == pick.name()).cloned().collect();
        config.solvers = if kept.is_empty() { vec![pick] } else { kept };
    }
    let dir = out_dir(cli, config.out.as_ref());
    let report = run_bench(&config)?;
    let mut out = OutputSet::new(&dir);
    for s in &report.solvers {
        let series: Vec<_> = s
            .sizes
            .iter()
            .filter_map(|r| r.series.clone().map(|g| (r.n, g)))
            .collect();
        out.with(&format!("series_{}.csv", s.solver), |p| io::write_series_csv(p, &series))?;
    }
    out.json("scaling.json", &report)?;
    let resolved = BenchConfig {
        out: None,
        ..config.clone()
    };
    out.finish("bench", config.seed, &report.config_hash, &resolved)?;
    print!("{}", bench_summary(&report));
    Ok(())
}

fn report(cli: &Cli, dir: &Path) -> Result<()> {
    let text = if dir.join("report.json").exists() {
        train_summary(&io::read_json::<TrainReport>(&dir.join("report.json"))?)
    } else if dir.join("scaling.json").exists() {
        bench_summary(&io::read_json::<BenchReport>(&dir.join("scaling.json"))?)
    } else if dir.join("solution.json").exists() {
        let v: serde_json::Value = io::read_json(&dir.join("solution.json"))?;
        format!("# Solution\n\n```\n{}\n```\n", serde_json::to_string_pretty(&v)?)
    } else {
        bail!("{} holds no report.json, scaling.json or solution.json", dir.display());
    };
    let target = cli.out.clone().unwrap_or_else(|| dir.to_path_buf());
    io::write_text(&target.join("summary.md"), &text)?;
    print!("{text}");
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |p| format!("{:.2}%", 100.0 * p))
}

pub fn train_summary(r: &TrainReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Training run\n");
    let _ = writeln!(s, "| quantity | value |\n|---|---|");
    let _ = writeln!(s, "| solver | {} |", r.solver);
    let _ = writeln!(s, "| learners | {} ({} selected) |", r.n_learners, r.n_selected);
    let _ = writeln!(s, "| lambda | {:.6} ({:.4} S/N) |", r.lambda, r.lambda_fraction);
    let _ = writeln!(
        s,
        "| precision at recall {:.2} | {} |",
        r.recall_target,
        pct(r.precision_at_recall)
    );
    let _ = writeln!(
        s,
        "| best single learner | {} |",
        pct(r.best_single_learner.as_ref().map(|b| b.precision))
    );
    let _ = writeln!(s, "| QUBO cost | {:.6} |", r.qubo_cost);
    let _ = writeln!(s, "| reference ({}) | {:.6} |", r.reference_method, r.reference_cost);
    let _ = writeln!(s, "| gap | {} |", pct(r.gap));
    let _ = writeln!(s, "| cycles used / scored | {} / {} |", r.cycles_used, r.cycles_scored);
    let _ = writeln!(s, "| weights | `{}` |", r.weights);
    s
}

pub fn bench_summary(r: &BenchReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Benchmark, gap threshold {}\n", r.gap_threshold);
    let _ = writeln!(
        s,
        "| solver | n | cycles to threshold | per instance | final gap | mean rank |\n|---|---|---|---|---|---|"
    );
    for b in &r.solvers {
        for z in &b.sizes {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:?} | {:.4} | {} |",
                b.solver,
                z.n,
                z.cycles_to_gap.map_or("not reached".into(), |c| c.to_string()),
                z.per_instance,
                z.final_gap,
                z.mean_rank.map_or(String::new(), |r| format!("{r:.3}"))
            );
        }
    }
    if let Some(u) = &r.uniform_expected {
        for z in &u.sizes {
            let _ = writeln!(s, "| uniform (expected) | {} | {:.1} | | | |", z.n, z.mean_cycles);
        }
    }
    let _ = writeln!(s, "\n| series | model | coefficients | r² | other r² |\n|---|---|---|---|---|");
    let fits = r
        .solvers
        .iter()
        .map(|b| (b.solver.clone(), b.fit.as_ref()))
        .chain(r.uniform_expected.iter().map(|u| ("uniform (expected)".to_string(), u.fit.as_ref())));
    for (name, fit) in fits {
        match fit {
            Some(f) => {
                let _ = writeln!(
                    s,
                    "| {name} | {:?} | ({:.4}, {:.4}) | {:.4} | {:.4} |",
                    f.model, f.coefficients.0, f.coefficients.1, f.r_squared, f.other_r_squared
                );
            }
            None => {
                let _ = writeln!(s, "| {name} | no fit | | | |");
            }
        }
    }
    s
}
