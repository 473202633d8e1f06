use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qosalloc::baselines::{heuristic_max_gain, read_allocations_csv, write_allocations_csv};
use qosalloc::channel::{self, gen_dataset, mask_csi, rng_from_seed, substream_seed, Dataset, Split, TopologyConfig};
use qosalloc::ewmmse::{self, EwmmseConfig};
use qosalloc::gnn::{infer_batch, train, FeatureStats, GnnConfig, GnnModel, PowerHead, TrainConfig};
use qosalloc::harness::{
    bench_timing, brute_force_oracle, emit_report, metric_avg_sum_rate, metric_qos_violation, run_experiment,
    BenchConfig, ExperimentConfig, ReportFormat,
};
use qosalloc::model::{constraint_residuals, sum_weighted_rate, PowerAllocation};
use qosalloc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "qosalloc",
    version,
    about = "Joint channel and power allocation under QoS constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    Gen(GenArgs),
    /// Run eWMMSE or the max-gain heuristic on a dataset.
    Solve(SolveArgs),
    /// Train a JCPGNN-M or ICP-GNN model.
    Train(TrainArgs),
    /// Evaluate allocations, a checkpoint, or a full experiment config.
    Eval(EvalArgs),
    /// Time the allocators.
    Bench(BenchArgs),
    /// Exhaustive grid search on tiny instances.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file for the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value = "train")]
    split: String,
    /// Zero this fraction of interference gains in every stored instance.
    #[arg(long)]
    mask_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SolveWith {
    Ewmmse,
    Heuristic,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "ewmmse")]
    solver: SolveWith,
    /// Allocation CSV to write.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum ModelKind {
    Jcpgnn,
    IcpGnn,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "jcpgnn")]
    model: ModelKind,
    /// Checkpoint to write.
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    /// Write the per-epoch trace here instead of stdout.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config (JSON). Runs the whole experiment when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// csv, json or svg.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output directory for experiment reports, or file for quick metrics.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    allocations: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Hide this fraction of interference gains from the model's features.
    #[arg(long)]
    mask_fraction: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Comma-separated sizes such as `4x2,9x4`.
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pairs: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 20)]
    levels: usize,
    /// Optional allocation CSV with the oracle's best points.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => {
            let f = std::fs::File::open(p)
                .map_err(|e| Error::InvalidArgument(format!("cannot open config {}: {e}", p.display())))?;
            Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
        }
        None => Ok(T::default()),
    }
}

fn emit_table<T: Serialize>(rows: &[T], format: TableFormat, out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match format {
        TableFormat::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, rows)?;
            writeln!(sink)?;
            sink.flush()?;
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            for r in rows {
                w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn check_fraction(f: Option<f64>) -> Result<Option<f64>> {
    match f {
        Some(v) if !(0.0..=0.5).contains(&v) => {
            Err(Error::InvalidArgument(format!("--mask-fraction {v} outside [0, 0.5]")))
        }
        other => Ok(other),
    }
}

#[derive(Serialize)]
struct GenSummary {
    path: String,
    count: usize,
    num_pairs: usize,
    num_channels: usize,
    seed: u64,
    mask_fraction: f64,
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mask = check_fraction(a.mask_fraction)?;
    let mut cfg: TopologyConfig = read_json(&a.common.config)?;
    if let Some(d) = a.pairs {
        cfg.num_pairs = d;
    }
    if let Some(m) = a.channels {
        cfg.num_channels = m;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let split: Split = a.split.parse()?;
    let mut ds = gen_dataset(&cfg, a.count, split)?;
    if let Some(f) = mask {
        for (k, inst) in ds.instances.iter_mut().enumerate() {
            let mut rng = rng_from_seed(substream_seed(cfg.seed ^ 0x6d61_736b, k as u64));
            *inst = mask_csi(inst, f, &mut rng)?;
        }
    }
    channel::store(&ds, &a.out)?;
    emit_table(
        &[GenSummary {
            path: a.out.display().to_string(),
            count: ds.instances.len(),
            num_pairs: cfg.num_pairs,
            num_channels: cfg.num_channels,
            seed: cfg.seed,
            mask_fraction: mask.unwrap_or(0.0),
        }],
        a.common.format,
        None,
    )
}

#[derive(Serialize)]
struct SolveRow {
    instance: usize,
    sum_rate_bits: f64,
    worst_violation_bits: f64,
    qos_violations: usize,
    time_ms: f64,
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let ds = channel::load(&a.dataset)?;
    let cfg: EwmmseConfig = read_json(&a.common.config)?;
    cfg.validate()?;
    let mut rows = Vec::with_capacity(ds.instances.len());
    let mut allocations = Vec::with_capacity(ds.instances.len());
    for (k, inst) in ds.instances.iter().enumerate() {
        let t0 = Instant::now();
        let p = match a.solver {
            SolveWith::Heuristic => heuristic_max_gain(inst),
            SolveWith::Ewmmse => {
                let seed = a.common.seed.map_or(inst.seed, |s| substream_seed(s, k as u64));
                ewmmse::solve(inst, &cfg, &mut rng_from_seed(seed)).map(|s| s.allocation)
            }
        }
        .map_err(|e| e.at_instance(k))?;
        let time_ms = t0.elapsed().as_secs_f64() * 1e3;
        let res = constraint_residuals(inst, &p).map_err(|e| e.at_instance(k))?;
        rows.push(SolveRow {
            instance: k,
            sum_rate_bits: sum_weighted_rate(inst, &p)?,
            worst_violation_bits: res.worst_violation_bits,
            qos_violations: res.qos_violations(),
            time_ms,
        });
        allocations.push(p);
    }
    write_allocations_csv(std::fs::File::create(&a.out)?, &allocations)?;
    emit_table(&rows, a.common.format, None)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = channel::load(&a.dataset)?;
    let mut tc: TrainConfig = read_json(&a.common.config)?;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(f) = check_fraction(a.mask_fraction)? {
        tc.mask_fraction = f;
    }
    if let Some(s) = a.common.seed {
        tc.seed = s;
    }
    let mut gnn = GnnConfig::default();
    if let Some(l) = a.layers {
        gnn.layers = l;
    }
    if a.model == ModelKind::IcpGnn {
        gnn.head = PowerHead::ChannelCap;
    }
    let first = ds
        .instances
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    let stats = FeatureStats::fit(&ds.instances)?;
    let mut model = GnnModel::new(gnn, stats, first.p_max, &mut rng_from_seed(tc.seed))?;
    let (_, trace) = train(&mut model, &ds.instances, &tc)?;
    model.store(&a.out)?;
    emit_table(&trace, a.common.format, a.trace.as_deref())
}

#[derive(Serialize)]
struct MetricRow {
    instances: usize,
    num_pairs: usize,
    num_channels: usize,
    avg_sum_rate_bits: f64,
    qos_violation_prob: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let mask = check_fraction(a.mask_fraction)?;
    if let Some(dataset) = &a.dataset {
        let ds: Dataset = channel::load(dataset)?;
        let allocations: Vec<PowerAllocation> = match (&a.allocations, &a.checkpoint) {
            (Some(p), None) => read_allocations_csv(std::fs::File::open(p)?)?,
            (None, Some(c)) => {
                let model = GnnModel::open(c)?;
                let seen = match mask {
                    Some(f) if f > 0.0 => {
                        let seed = a.seed.unwrap_or(0);
                        ds.instances
                            .iter()
                            .enumerate()
                            .map(|(k, inst)| mask_csi(inst, f, &mut rng_from_seed(substream_seed(seed, k as u64))))
                            .collect::<Result<Vec<_>>>()?
                    }
                    _ => ds.instances.clone(),
                };
                infer_batch(&model, &seen)?.allocations
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "eval with --dataset needs exactly one of --allocations or --checkpoint".into(),
                ))
            }
        };
        let row = MetricRow {
            instances: ds.instances.len(),
            num_pairs: ds.config.num_pairs,
            num_channels: ds.config.num_channels,
            avg_sum_rate_bits: metric_avg_sum_rate(&allocations, &ds.instances)?,
            qos_violation_prob: metric_qos_violation(&allocations, &ds.instances)?,
        };
        let table = match format {
            ReportFormat::Csv => TableFormat::Csv,
            ReportFormat::Json => TableFormat::Json,
            ReportFormat::Svg => return Err(Error::InvalidArgument("svg output needs an experiment --config".into())),
        };
        return emit_table(&[row], table, a.out.as_deref());
    }
    if a.config.is_none() {
        return Err(Error::InvalidArgument("eval needs --config or --dataset".into()));
    }
    let mut cfg: ExperimentConfig = read_json(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train_seed = substream_seed(s, 0);
        cfg.test_seed = substream_seed(s, 1);
        cfg.model_seed = substream_seed(s, 2);
    }
    if let Some(f) = mask {
        cfg.mask_fractions = vec![f];
    }
    let report = run_experiment(&cfg)?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from("."));
    let path = emit_report(&report, format, &dir, &cfg.scenario)?;
    println!("{}", path.display());
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (d, m) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::InvalidArgument(format!("size '{part}' is not DxM")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("size '{part}' is not DxM")))
            };
            Ok((num(d)?, num(m)?))
        })
        .collect()
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = read_json(&a.common.config)?;
    if let Some(s) = &a.sizes {
        cfg.sizes = parse_sizes(s)?;
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let rows = bench_timing(&cfg)?;
    emit_table(&rows, a.common.format, a.out.as_deref())
}

#[derive(Serialize)]
struct OracleRow {
    instance: usize,
    feasible: bool,
    sum_rate_bits: f64,
    worst_violation_bits: f64,
    points_evaluated: u64,
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let instances = match &a.dataset {
        Some(p) => channel::load(p)?.instances,
        None => {
            let mut cfg: TopologyConfig = read_json(&a.common.config)?;
            cfg.num_pairs = a.pairs;
            cfg.num_channels = a.channels;
            if let Some(s) = a.common.seed {
                cfg.seed = s;
            }
            gen_dataset(&cfg, a.count, Split::Test)?.instances
        }
    };
    let mut rows = Vec::new();
    let mut best = Vec::new();
    for (k, inst) in instances.iter().enumerate() {
        let r = brute_force_oracle(inst, a.levels).map_err(|e| e.at_instance(k))?;
        rows.push(OracleRow {
            instance: k,
            feasible: r.feasible,
            sum_rate_bits: r.sum_rate_bits,
            worst_violation_bits: r.worst_violation_bits,
            points_evaluated: r.points_evaluated,
        });
        best.push(r.allocation);
    }
    if let Some(out) = &a.out {
        write_allocations_csv(std::fs::File::create(out)?, &best)?;
    }
    emit_table(&rows, a.common.format, None)
}

fn error_json(kind: &str, message: &str, instance: Option<usize>) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message, "instance": instance } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", error_json("usage", first, None));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string(), e.instance()));
            ExitCode::FAILURE
        }
    }
}
