//! Run and benchmark configuration. Every struct rejects unknown keys, and
//! `validate` runs before any stage starts.

use std::path::PathBuf;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qboost_core::dataset::{RebalanceMode, SyntheticSpec};
use qboost_core::ising::PulseProgram;
use qboost_core::learners::{EnsembleConfig, LearnerParams, Mix, Variant};
use qboost_core::metrics::DEFAULT_RECALL_TARGET;
use qboost_core::rgs::{Detuning, RgsOptions};
use qboost_core::solvers::{SaSchedule, TebdParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Its own seed is replaced by one derived from the run seed.
    Synthetic(SyntheticSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default = "default_date_column")]
        date_column: String,
    },
}

fn default_label_column() -> String {
    "label".into()
}

fn default_date_column() -> String {
    "date".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rebalance {
    None,
    Undersample,
    Oversample,
}

impl Rebalance {
    pub fn mode(self) -> Option<RebalanceMode> {
        match self {
            Rebalance::None => None,
            Rebalance::Undersample => Some(RebalanceMode::Undersample),
            Rebalance::Oversample => Some(RebalanceMode::Oversample),
        }
    }
}

/// Regularization strength as a fraction of `S / N`, the scale of the
/// QUBO diagonal for `S` training rows and `N` learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaConfig {
    Fixed { fraction: f64 },
    /// Grid search at ten learners, rescaled by `10 / N`.
    Tuned {
        fractions: Vec<f64>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

fn default_train_fraction() -> f64 {
    0.8
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig::Tuned {
            fractions: vec![0.0, 0.02, 0.05, 0.1, 0.2, 0.4],
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub loading_probability: f64,
    /// Trap spacing in µm; the blockade radius when absent.
    #[serde(default)]
    pub spacing: Option<f64>,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            loading_probability: 0.55,
            spacing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    BruteForce,
    SimulatedAnnealing {
        #[serde(default)]
        schedule: SaSchedule,
        #[serde(default = "default_restarts")]
        n_restarts: usize,
    },
    /// `tau` is in units of `1 / max|Q|` when `scale_tau` is set.
    Tebd {
        chi: usize,
        tau: f64,
        n_steps: usize,
        #[serde(default = "default_true")]
        scale_tau: bool,
    },
    Rgs {
        n_cycles: usize,
        #[serde(default)]
        program: PulseProgram,
        #[serde(default)]
        options: RgsOptions,
        #[serde(default)]
        spacing: Option<f64>,
    },
    Uniform {
        n_cycles: usize,
    },
    Qaoa {
        #[serde(default = "default_outer")]
        n_outer: usize,
        #[serde(default = "default_shots")]
        shots_per_iter: usize,
        #[serde(default)]
        program: PulseProgram,
        #[serde(default)]
        traps: TrapConfig,
        /// The same end-detuning rule RGS uses, for a like-for-like
        /// comparison.
        #[serde(default = "default_detuning")]
        detuning: Detuning,
    },
}

fn default_detuning() -> Detuning {
    Detuning::FromQubo
}

fn default_restarts() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_outer() -> usize {
    10
}

fn default_shots() -> usize {
    100
}

pub const SOLVER_NAMES: [&str; 6] = ["brute_force", "simulated_annealing", "tebd", "rgs", "uniform", "qaoa"];

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::BruteForce => "brute_force",
            SolverConfig::SimulatedAnnealing { .. } => "simulated_annealing",
            SolverConfig::Tebd { .. } => "tebd",
            SolverConfig::Rgs { .. } => "rgs",
            SolverConfig::Uniform { .. } => "uniform",
            SolverConfig::Qaoa { .. } => "qaoa",
        }
    }

    /// Defaults for a solver picked by name on the command line. `sa` is
    /// accepted for simulated annealing.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "brute_force" => SolverConfig::BruteForce,
            "simulated_annealing" | "sa" => SolverConfig::SimulatedAnnealing {
                schedule: SaSchedule::default(),
                n_restarts: default_restarts(),
            },
            "tebd" => {
                let p = default_tebd();
                SolverConfig::Tebd {
                    chi: p.chi,
                    tau: p.tau,
                    n_steps: p.n_steps,
                    scale_tau: true,
                }
            }
            "rgs" => SolverConfig::Rgs {
                n_cycles: 1000,
                program: PulseProgram::default(),
                options: RgsOptions::default(),
                spacing: None,
            },
            "uniform" => SolverConfig::Uniform { n_cycles: 1000 },
            "qaoa" => SolverConfig::Qaoa {
                n_outer: default_outer(),
                shots_per_iter: default_shots(),
                program: PulseProgram::default(),
                traps: TrapConfig::default(),
                detuning: default_detuning(),
            },
            other => bail!("unknown solver {other:?}; expected one of {}", SOLVER_NAMES.join(", ")),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SolverConfig::SimulatedAnnealing { schedule, n_restarts } => {
                schedule.validate()?;
                if *n_restarts == 0 {
                    bail!("n_restarts must be at least 1");
                }
            }
            SolverConfig::Tebd { chi, tau, n_steps, .. } => {
                if *chi == 0 || *n_steps == 0 || !(*tau > 0.0) {
                    bail!("tebd needs chi >= 1, n_steps >= 1 and tau > 0");
                }
            }
            SolverConfig::Rgs { n_cycles, .. } | SolverConfig::Uniform { n_cycles } => {
                if *n_cycles == 0 {
                    bail!("n_cycles must be at least 1");
                }
            }
            SolverConfig::Qaoa { n_outer, shots_per_iter, .. } => {
                if *n_outer == 0 || *shots_per_iter == 0 {
                    bail!("n_outer and shots_per_iter must be at least 1");
                }
            }
            SolverConfig::BruteForce => {}
        }
        Ok(())
    }
}

pub fn default_tebd() -> TebdParams {
    TebdParams {
        chi: 32,
        tau: 0.5,
        n_steps: 20,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub recall_target: f64,
    pub n_thresholds: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            recall_target: DEFAULT_RECALL_TARGET,
            n_thresholds: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default = "default_rebalance")]
    pub rebalance: Rebalance,
    /// Its `seed` is replaced by one derived from the run seed.
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_rebalance() -> Rebalance {
    Rebalance::Oversample
}

impl RunConfig {
    /// Small synthetic run used when no config file is given.
    pub fn example(n_learners: usize, solver: SolverConfig) -> Self {
        Self {
            seed: 7,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            rebalance: default_rebalance(),
            ensemble: EnsembleConfig {
                n_learners,
                mix: Mix::default(),
                variant: Variant::Subsampling,
                n_subsets: 4,
                params: LearnerParams::default(),
                seed: 0,
            },
            lambda: LambdaConfig::default(),
            solver,
            metrics: MetricsConfig::default(),
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.ensemble.validate()?;
        self.solver.validate()?;
        match &self.lambda {
            LambdaConfig::Fixed { fraction } => {
                if !(fraction.is_finite() && *fraction >= 0.0) {
                    bail!("lambda fraction must be finite and nonnegative");
                }
            }
            LambdaConfig::Tuned {
                fractions,
                train_fraction,
            } => {
                if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
                    bail!("lambda fractions must be a nonempty list of finite nonnegative values");
                }
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    bail!("train_fraction must lie in (0, 1)");
                }
            }
        }
        if !(self.metrics.recall_target > 0.0 && self.metrics.recall_target <= 1.0) {
            bail!("recall_target must lie in (0, 1]");
        }
        if self.metrics.n_thresholds < 2 {
            bail!("n_thresholds must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// QBoost QUBOs from seeded synthetic datasets.
    #[default]
    Qboost,
    /// Random couplings in [0, 1], fields in [-diagonal_scale, 0].
    Random,
}

/// How benchmark QUBOs are made. The dataset fields only matter for
/// `qboost` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    #[serde(default)]
    pub kind: InstanceKind,
    pub n_rows: usize,
    pub lambda_fraction: f64,
    pub variant: Variant,
    pub n_subsets: usize,
    pub rebalance: Rebalance,
    #[serde(default = "default_diagonal_scale")]
    pub diagonal_scale: f64,
}

fn default_diagonal_scale() -> f64 {
    2.0
}

impl InstanceConfig {
    pub fn random() -> Self {
        Self {
            kind: InstanceKind::Random,
            ..Self::default()
        }
    }
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            kind: InstanceKind::Qboost,
            n_rows: 2000,
            lambda_fraction: 0.1,
            variant: Variant::Subsampling,
            n_subsets: 4,
            rebalance: Rebalance::Oversample,
            diagonal_scale: default_diagonal_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    pub sizes: Vec<usize>,
    #[serde(default = "default_instances")]
    pub n_instances: usize,
    /// Sampling solvers with a cycle budget: `rgs`, `uniform`,
    /// `simulated_annealing` (one restart per cycle), `qaoa`.
    pub solvers: Vec<SolverConfig>,
    #[serde(default)]
    pub instances: InstanceConfig,
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
    /// Also report uniform sampling's exact expected cycles to the
    /// threshold, from an exhaustive count.
    #[serde(default)]
    pub uniform_expected: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_instances() -> usize {
    5
}

fn default_gap_threshold() -> f64 {
    qboost_core::bench::DEFAULT_GAP_THRESHOLD
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            bail!("sizes must be a nonempty list of positive sizes");
        }
        if self.n_instances == 0 {
            bail!("n_instances must be at least 1");
        }
        if !(self.gap_threshold > 0.0) {
            bail!("gap_threshold must be positive");
        }
        for s in &self.solvers {
            s.validate()?;
            if matches!(s, SolverConfig::BruteForce | SolverConfig::Tebd { .. }) {
                bail!("{} has no cycle budget and cannot be benchmarked", s.name());
            }
        }
        if self.solvers.is_empty() && !self.uniform_expected {
            bail!("nothing to benchmark");
        }
        Ok(())
    }
}

/// SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("serializable config");
    hex::encode(Sha256::digest(bytes))
}
