//! Reference allocators: the max-direct-gain heuristic, the per-channel
//! capped ICP-GNN, and CSV exchange for externally produced allocations.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{self, DualState, EpochStats, FeatureStats, GnnConfig, GnnModel, TrainConfig};
use crate::model::{NetworkInstance, PowerAllocation};

/// Full power on the channel with the strongest direct gain; ties go to
/// the lowest channel index.
pub fn heuristic_max_gain(inst: &NetworkInstance) -> Result<PowerAllocation> {
    inst.validate()?;
    let (d, m) = (inst.num_pairs, inst.num_channels);
    let mut p = PowerAllocation::zeros(d, m);
    for i in 0..d {
        let mut best = 0;
        for c in 1..m {
            if inst.gain(i, i, c) > inst.gain(i, i, best) {
                best = c;
            }
        }
        p.set(i, best, inst.p_max);
    }
    Ok(p)
}

/// Builds an untrained ICP-GNN: one shared model applied to every
/// subgraph, head capped at `P_max / M` per channel.
pub fn icp_gnn_model(layers: usize, stats: FeatureStats, p_max: f64, rng: &mut impl Rng) -> Result<GnnModel> {
    GnnModel::new(
        GnnConfig {
            layers,
            ..GnnConfig::icp()
        },
        stats,
        p_max,
        rng,
    )
}

/// Trains an ICP-GNN on `dataset` with the same primal-dual loop as the
/// joint model.
pub fn icp_gnn(
    layers: usize,
    dataset: &[NetworkInstance],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(GnnModel, DualState, Vec<EpochStats>)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let stats = FeatureStats::fit(dataset)?;
    let mut model = icp_gnn_model(layers, stats, first.p_max, rng)?;
    let (duals, trace) = gnn::train(&mut model, dataset, cfg)?;
    Ok((model, duals, trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct AllocationRow {
    instance: usize,
    pair: usize,
    channel: usize,
    power: f64,
}

/// Long-format CSV `instance,pair,channel,power`, one row per matrix entry.
pub fn write_allocations_csv(w: impl Write, allocations: &[PowerAllocation]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (instance, p) in allocations.iter().enumerate() {
        for pair in 0..p.num_pairs() {
            for channel in 0..p.num_channels() {
                out.serialize(AllocationRow {
                    instance,
                    pair,
                    channel,
                    power: p.get(pair, channel),
                })
                .map_err(csv_error)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads allocations written by [`write_allocations_csv`] (or any tool
/// producing the same columns). Every instance must be a complete `D × M`
/// matrix and instance ids must be contiguous from zero.
pub fn read_allocations_csv(r: impl Read) -> Result<Vec<PowerAllocation>> {
    let mut rows: Vec<AllocationRow> = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        rows.push(rec.map_err(csv_error)?);
    }
    let count = rows.iter().map(|r| r.instance + 1).max().unwrap_or(0);
    let mut shapes = vec![(0usize, 0usize); count];
    for r in &rows {
        let s = &mut shapes[r.instance];
        s.0 = s.0.max(r.pair + 1);
        s.1 = s.1.max(r.channel + 1);
    }
    let mut out: Vec<PowerAllocation> = shapes.iter().map(|&(d, m)| PowerAllocation::zeros(d, m)).collect();
    let mut seen: Vec<Vec<bool>> = shapes.iter().map(|&(d, m)| vec![false; d * m]).collect();
    for r in &rows {
        if !(r.power.is_finite() && r.power >= 0.0) {
            return Err(Error::Format(format!(
                "instance {} pair {} channel {}: power {} is not a nonnegative number",
                r.instance, r.pair, r.channel, r.power
            )));
        }
        let m = shapes[r.instance].1;
        let slot = &mut seen[r.instance][r.pair * m + r.channel];
        if *slot {
            return Err(Error::Format(format!(
                "duplicate entry for instance {} pair {} channel {}",
                r.instance, r.pair, r.channel
            )));
        }
        *slot = true;
        out[r.instance].set(r.pair, r.channel, r.power);
    }
    if let Some(k) = seen.iter().position(|s| s.is_empty() || s.iter().any(|&v| !v)) {
        return Err(Error::Format(format!("instance {k} has missing entries")));
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("allocation csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_indexed, rng_from_seed, TopologyConfig};

    #[test]
    fn heuristic_picks_strongest_channel() {
        let inst = NetworkInstance::from_gains(1, 2, vec![0.5, 0.9]).unwrap();
        let p = heuristic_max_gain(&inst).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0]);

        let flat = NetworkInstance::from_gains(1, 3, vec![0.4; 3]).unwrap();
        assert_eq!(heuristic_max_gain(&flat).unwrap().as_slice(), &[1.0, 0.0, 0.0]);

        let inst = draw_indexed(&TopologyConfig::with_size(5, 3), 2).unwrap();
        let p = heuristic_max_gain(&inst).unwrap();
        assert!((0..5).all(|i| p.user_total(i) == inst.p_max));
    }

    #[test]
    fn icp_caps_each_channel() {
        let cfg = TopologyConfig::with_size(3, 2);
        let data: Vec<_> = (0..4).map(|k| draw_indexed(&cfg, k).unwrap()).collect();
        let tc = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (model, _, trace) = icp_gnn(2, &data, &tc, &mut rng_from_seed(1)).unwrap();
        assert_eq!(trace.len(), 2);
        let run = gnn::infer_batch(&model, &data).unwrap();
        for p in &run.allocations {
            assert!(p.as_slice().iter().all(|&v| v <= 0.5));
        }
        assert!(icp_gnn(2, &[], &tc, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let a = PowerAllocation::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.0, 1.0, 1e-17]).unwrap();
        let b = PowerAllocation::from_vec(1, 1, vec![0.75]).unwrap();
        let mut buf = Vec::new();
        write_allocations_csv(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("instance,pair,channel,power\n"));
        assert_eq!(read_allocations_csv(buf.as_slice()).unwrap(), vec![a, b]);
    }

    #[test]
    fn csv_rejects_gaps_and_garbage() {
        let gap = "instance,pair,channel,power\n0,0,0,1\n0,1,1,1\n";
        assert!(read_allocations_csv(gap.as_bytes()).is_err());
        let neg = "instance,pair,channel,power\n0,0,0,-1\n";
        assert!(read_allocations_csv(neg.as_bytes()).is_err());
        let dup = "instance,pair,channel,power\n0,0,0,1\n0,0,0,1\n";
        assert!(read_allocations_csv(dup.as_bytes()).is_err());
        let skipped = "instance,pair,channel,power\n1,0,0,1\n";
        assert!(read_allocations_csv(skipped.as_bytes()).is_err());
        assert!(read_allocations_csv("nope\nx\n".as_bytes()).is_err());
    }
}
