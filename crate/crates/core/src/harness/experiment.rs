use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{
    metric_avg_sum_rate, metric_normalized, metric_qos_violation, metric_qos_violation_per_instance, summarize_timings,
};
use crate::baselines::{heuristic_max_gain, read_allocations_csv};
use crate::channel::{gen_dataset, load, rng_from_seed, Split, TopologyConfig};
use crate::error::{Error, Result};
use crate::ewmmse::{self, EwmmseConfig};
use crate::gnn::{infer_batch, train, FeatureStats, GnnConfig, GnnModel, TrainConfig};
use crate::model::{NetworkInstance, PowerAllocation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SolverSpec {
    Ewmmse,
    Jcpgnn,
    IcpGnn,
    Heuristic,
    /// Allocations read from a CSV aligned with the test set.
    ExternalFile {
        path: PathBuf,
        label: String,
    },
}

impl SolverSpec {
    pub fn label(&self) -> String {
        match self {
            SolverSpec::Ewmmse => "ewmmse".into(),
            SolverSpec::Jcpgnn => "jcpgnn".into(),
            SolverSpec::IcpGnn => "icp-gnn".into(),
            SolverSpec::Heuristic => "heuristic".into(),
            SolverSpec::ExternalFile { label, .. } => label.clone(),
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, SolverSpec::Jcpgnn | SolverSpec::IcpGnn)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ewmmse" => Ok(SolverSpec::Ewmmse),
            "jcpgnn" => Ok(SolverSpec::Jcpgnn),
            "icp-gnn" => Ok(SolverSpec::IcpGnn),
            "heuristic" => Ok(SolverSpec::Heuristic),
            other => Err(Error::InvalidArgument(format!(
                "unknown solver '{other}' (expected ewmmse|jcpgnn|icp-gnn|heuristic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Test topology. Also the training topology unless overridden.
    pub topology: TopologyConfig,
    pub train_topology: Option<TopologyConfig>,
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    /// Load datasets from files instead of generating them.
    pub train_dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub solvers: Vec<SolverSpec>,
    /// Mask fractions applied to the training features of learned solvers.
    /// One row per fraction per learned solver.
    pub mask_fractions: Vec<f64>,
    /// Label of the row that normalizes the others. Defaults to the first
    /// solver at the first mask fraction.
    pub reference: Option<String>,
    pub ewmmse: EwmmseConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub per_instance_violation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "sum-rate".into(),
            topology: TopologyConfig::default(),
            train_topology: None,
            train_seed: 1,
            test_seed: 2,
            train_count: 500,
            test_count: 100,
            train_dataset: None,
            test_dataset: None,
            solvers: vec![SolverSpec::Ewmmse, SolverSpec::Jcpgnn, SolverSpec::Heuristic],
            mask_fractions: vec![0.0],
            reference: None,
            ewmmse: EwmmseConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            model_seed: 3,
            per_instance_violation: false,
        }
    }
}

/// Fractions `0.05, 0.10, ..., 0.50` plus the full-CSI reference `0.0`.
pub fn missing_csi_fractions() -> Vec<f64> {
    std::iter::once(0.0).chain((1..=10).map(|k| k as f64 * 0.05)).collect()
}

impl ExperimentConfig {
    pub fn missing_csi_sweep() -> Self {
        ExperimentConfig {
            scenario: "missing-csi".into(),
            solvers: vec![SolverSpec::Jcpgnn],
            mask_fractions: missing_csi_fractions(),
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if let Some(t) = &self.train_topology {
            t.validate()?;
        }
        self.ewmmse.validate()?;
        self.train.validate()?;
        if self.solvers.is_empty() {
            return Err(Error::InvalidArgument("no solvers selected".into()));
        }
        if self.mask_fractions.is_empty() {
            return Err(Error::InvalidArgument("mask_fractions must not be empty".into()));
        }
        if let Some(&f) = self.mask_fractions.iter().find(|f| !(0.0..=0.5).contains(*f)) {
            return Err(Error::InvalidArgument(format!("mask fraction {f} outside [0, 0.5]")));
        }
        for s in &self.solvers {
            if let SolverSpec::ExternalFile { path, .. } = s {
                if !path.exists() {
                    return Err(Error::InvalidArgument(format!(
                        "allocation file {} not found",
                        path.display()
                    )));
                }
            }
        }
        for p in self.train_dataset.iter().chain(&self.test_dataset) {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("dataset {} not found", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub solver: String,
    pub num_pairs: usize,
    pub num_channels: usize,
    pub mask_fraction: f64,
    pub instances: usize,
    pub avg_sum_rate_bits: f64,
    pub qos_violation_prob: f64,
    pub normalized: f64,
    /// Absent when the solver ran outside the harness.
    pub time_median_ms: Option<f64>,
    pub time_p95_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub train_seed: u64,
    pub test_seed: u64,
    pub model_seed: u64,
    pub topology_seed: u64,
    pub git_hash: Option<String>,
    /// `user-instances` or `instances`.
    pub violation_denominator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, solver: &str, mask_fraction: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.solver == solver && r.mask_fraction == mask_fraction)
    }
}

pub(crate) fn git_hash() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let s = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!s.is_empty()).then_some(s)
}

fn dataset(
    topology: &TopologyConfig,
    seed: u64,
    count: usize,
    split: Split,
    file: &Option<PathBuf>,
) -> Result<Vec<NetworkInstance>> {
    if let Some(path) = file {
        let ds = load(path)?;
        if ds.instances.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {} is empty", path.display())));
        }
        return Ok(ds.instances);
    }
    let cfg = TopologyConfig {
        seed,
        ..topology.clone()
    };
    Ok(gen_dataset(&cfg, count, split)?.instances)
}

pub struct SolverRun {
    pub allocations: Vec<PowerAllocation>,
    pub timings: Vec<Duration>,
}

pub fn run_ewmmse(test: &[NetworkInstance], cfg: &EwmmseConfig) -> Result<SolverRun> {
    let mut allocations = Vec::with_capacity(test.len());
    let mut timings = Vec::with_capacity(test.len());
    for (k, inst) in test.iter().enumerate() {
        let mut rng = rng_from_seed(inst.seed);
        let t0 = Instant::now();
        let sol = ewmmse::solve(inst, cfg, &mut rng).map_err(|e| e.at_instance(k))?;
        timings.push(t0.elapsed());
        allocations.push(sol.allocation);
    }
    Ok(SolverRun { allocations, timings })
}

pub fn run_heuristic(test: &[NetworkInstance]) -> Result<SolverRun> {
    let mut allocations = Vec::with_capacity(test.len());
    let mut timings = Vec::with_capacity(test.len());
    for (k, inst) in test.iter().enumerate() {
        let t0 = Instant::now();
        let p = heuristic_max_gain(inst).map_err(|e| e.at_instance(k))?;
        timings.push(t0.elapsed());
        allocations.push(p);
    }
    Ok(SolverRun { allocations, timings })
}

/// Fits feature stats, initializes and trains a model on `train_set`.
pub fn train_model(
    train_set: &[NetworkInstance],
    gnn: GnnConfig,
    cfg: &TrainConfig,
    model_seed: u64,
) -> Result<GnnModel> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let stats = FeatureStats::fit(train_set)?;
    let mut model = GnnModel::new(gnn, stats, first.p_max, &mut rng_from_seed(model_seed))?;
    train(&mut model, train_set, cfg)?;
    Ok(model)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let test = dataset(
        &cfg.topology,
        cfg.test_seed,
        cfg.test_count,
        Split::Test,
        &cfg.test_dataset,
    )?;
    let needs_training = cfg.solvers.iter().any(SolverSpec::is_learned);
    let train_set = if needs_training {
        let topo = cfg.train_topology.as_ref().unwrap_or(&cfg.topology);
        dataset(topo, cfg.train_seed, cfg.train_count, Split::Train, &cfg.train_dataset)?
    } else {
        Vec::new()
    };

    let mut rows = Vec::new();
    for solver in &cfg.solvers {
        let fractions: &[f64] = if solver.is_learned() {
            &cfg.mask_fractions
        } else {
            &cfg.mask_fractions[..1]
        };
        for &fraction in fractions {
            let run = match solver {
                SolverSpec::Ewmmse => run_ewmmse(&test, &cfg.ewmmse)?,
                SolverSpec::Heuristic => run_heuristic(&test)?,
                SolverSpec::Jcpgnn | SolverSpec::IcpGnn => {
                    let gnn = if *solver == SolverSpec::IcpGnn {
                        GnnConfig {
                            head: crate::gnn::PowerHead::ChannelCap,
                            ..cfg.gnn
                        }
                    } else {
                        cfg.gnn
                    };
                    let tc = TrainConfig {
                        mask_fraction: fraction,
                        ..cfg.train.clone()
                    };
                    let model = train_model(&train_set, gnn, &tc, cfg.model_seed)?;
                    let r = infer_batch(&model, &test)?;
                    SolverRun {
                        allocations: r.allocations,
                        timings: r.timings,
                    }
                }
                SolverSpec::ExternalFile { path, .. } => {
                    let allocations = read_allocations_csv(std::fs::File::open(path)?)?;
                    SolverRun {
                        allocations,
                        timings: Vec::new(),
                    }
                }
            };
            rows.push(make_row(cfg, solver, fraction, &run, &test)?);
        }
    }

    let reference = match &cfg.reference {
        Some(label) => {
            rows.iter()
                .find(|r| &r.solver == label)
                .ok_or_else(|| Error::InvalidArgument(format!("reference solver '{label}' not in run")))?
                .avg_sum_rate_bits
        }
        None => rows[0].avg_sum_rate_bits,
    };
    for r in &mut rows {
        r.normalized = metric_normalized(r.avg_sum_rate_bits, reference)?;
    }

    Ok(ExperimentReport {
        meta: ReportMeta {
            config_hash: cfg.hash(),
            train_seed: cfg.train_seed,
            test_seed: cfg.test_seed,
            model_seed: cfg.model_seed,
            topology_seed: cfg.topology.seed,
            git_hash: git_hash(),
            violation_denominator: if cfg.per_instance_violation {
                "instances"
            } else {
                "user-instances"
            }
            .into(),
        },
        config: cfg.clone(),
        rows,
    })
}

fn make_row(
    cfg: &ExperimentConfig,
    solver: &SolverSpec,
    fraction: f64,
    run: &SolverRun,
    test: &[NetworkInstance],
) -> Result<ReportRow> {
    let violation = if cfg.per_instance_violation {
        metric_qos_violation_per_instance(&run.allocations, test)?
    } else {
        metric_qos_violation(&run.allocations, test)?
    };
    let timing = summarize_timings(&run.timings);
    let median = timing.map(|s| s.median.as_secs_f64() * 1e3);
    let p95 = timing.map(|s| s.p95.as_secs_f64() * 1e3);
    Ok(ReportRow {
        scenario: cfg.scenario.clone(),
        solver: solver.label(),
        num_pairs: test[0].num_pairs,
        num_channels: test[0].num_channels,
        mask_fraction: fraction,
        instances: test.len(),
        avg_sum_rate_bits: metric_avg_sum_rate(&run.allocations, test)?,
        qos_violation_prob: violation,
        normalized: f64::NAN,
        time_median_ms: median,
        time_p95_ms: p95,
    })
}
