use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::metrics::summarize_timings;
use crate::baselines::heuristic_max_gain;
use crate::channel::{gen_dataset, rng_from_seed, Split, TopologyConfig};
use crate::error::{Error, Result};
use crate::ewmmse::{self, EwmmseConfig};
use crate::gnn::{build_graph, forward, FeatureStats, GnnConfig, GnnModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// `(D, M)` sizes to time.
    pub sizes: Vec<(usize, usize)>,
    pub repetitions: usize,
    /// Distinct instances cycled through by the repetitions.
    pub instances: usize,
    pub seed: u64,
    pub ewmmse: EwmmseConfig,
    pub gnn: GnnConfig,
    pub topology: TopologyConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![(4, 2), (6, 3), (9, 4)],
            repetitions: 20,
            instances: 5,
            seed: 5,
            ewmmse: EwmmseConfig::default(),
            gnn: GnnConfig::default(),
            topology: TopologyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: String,
    pub num_pairs: usize,
    pub num_channels: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

fn time_reps(reps: usize, count: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<Vec<Duration>> {
    f(0)?;
    let mut out = Vec::with_capacity(reps);
    for r in 0..reps {
        let t0 = Instant::now();
        f(r % count)?;
        out.push(t0.elapsed());
    }
    Ok(out)
}

/// Per-instance wall-clock of each algorithm on a single thread. Graph
/// construction counts toward the GNN; dataset generation and model setup
/// do not. Weights are untrained since they do not change the cost.
pub fn bench_timing(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions < 20 {
        return Err(Error::InvalidArgument(format!(
            "need at least 20 repetitions, got {}",
            cfg.repetitions
        )));
    }
    if cfg.instances == 0 {
        return Err(Error::InvalidArgument("bench needs at least one instance".into()));
    }
    let mut rows = Vec::new();
    for &(d, m) in &cfg.sizes {
        let topo = TopologyConfig {
            num_pairs: d,
            num_channels: m,
            seed: cfg.seed,
            ..cfg.topology.clone()
        };
        let data = gen_dataset(&topo, cfg.instances, Split::Test)?.instances;
        let stats = FeatureStats::fit(&data)?;
        let model = GnnModel::new(cfg.gnn, stats, topo.p_max, &mut rng_from_seed(cfg.seed))?;

        let heuristic = time_reps(cfg.repetitions, data.len(), |k| heuristic_max_gain(&data[k]).map(drop))?;
        let gnn = time_reps(cfg.repetitions, data.len(), |k| {
            let g = build_graph(&data[k], &model.stats)?;
            forward(&model, &g).map(drop)
        })?;
        let solver = time_reps(cfg.repetitions, data.len(), |k| {
            let mut rng = rng_from_seed(data[k].seed);
            ewmmse::solve(&data[k], &cfg.ewmmse, &mut rng).map(drop)
        })?;
        for (name, samples) in [("heuristic", heuristic), ("jcpgnn", gnn), ("ewmmse", solver)] {
            let s = summarize_timings(&samples).expect("repetitions > 0");
            rows.push(BenchRow {
                algorithm: name.into(),
                num_pairs: d,
                num_channels: m,
                repetitions: cfg.repetitions,
                median_ms: s.median.as_secs_f64() * 1e3,
                p95_ms: s.p95.as_secs_f64() * 1e3,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_per_size_and_algorithm() {
        let cfg = BenchConfig {
            sizes: vec![(2, 2)],
            instances: 2,
            ewmmse: EwmmseConfig {
                max_iters: 5,
                ..EwmmseConfig::default()
            },
            ..BenchConfig::default()
        };
        let rows = bench_timing(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.median_ms <= r.p95_ms && r.repetitions == 20));
        let few = BenchConfig { repetitions: 5, ..cfg };
        assert!(bench_timing(&few).is_err());
    }
}
