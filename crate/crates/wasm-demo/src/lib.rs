//! Browser bindings for three operations: draw a network, run eWMMSE on it,
//! and compare allocators. Every entry point takes and returns JSON strings
//! so the page needs no generated type glue beyond `wasm-bindgen`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use qosalloc::baselines::heuristic_max_gain;
use qosalloc::channel::{draw_indexed, place_topology, rng_from_seed, substream_seed, TopologyConfig};
use qosalloc::ewmmse::{self, EwmmseConfig, TraceEntry};
use qosalloc::harness::{brute_force_oracle, MAX_ORACLE_CELLS};
use qosalloc::model::{constraint_residuals, sum_weighted_rate, NetworkInstance, PowerAllocation};

const MAX_PAIRS: usize = 25;
const MAX_CHANNELS: usize = 8;

#[derive(Debug, Serialize, Deserialize)]
pub struct Network {
    pub instance: NetworkInstance,
    pub tx: Vec<[f64; 2]>,
    pub rx: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct SolveOutput {
    pub allocation: Vec<Vec<f64>>,
    pub sum_rate_bits: f64,
    pub worst_violation_bits: f64,
    pub user_rate_bits: Vec<f64>,
    pub r_min_bits: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub sum_rate_bits: f64,
    pub qos_violations: usize,
    pub allocation: Vec<Vec<f64>>,
}

fn rows(p: &PowerAllocation) -> Vec<Vec<f64>> {
    (0..p.num_pairs()).map(|i| p.0.row(i).to_vec()).collect()
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Network `seed` drawn with the default simulator settings. Positions are
/// those of the accepted draw, replayed from the same substream.
pub fn generate_network(pairs: usize, channels: usize, seed: u64, noise_power: f64) -> Result<Network, String> {
    if pairs == 0 || pairs > MAX_PAIRS || channels == 0 || channels > MAX_CHANNELS {
        return Err(format!("need 1 <= D <= {MAX_PAIRS} and 1 <= M <= {MAX_CHANNELS}"));
    }
    let cfg = TopologyConfig {
        num_pairs: pairs,
        num_channels: channels,
        noise_power,
        seed,
        ..TopologyConfig::default()
    };
    let instance = draw_indexed(&cfg, 0).map_err(fail)?;
    let topo = place_topology(&cfg, &mut rng_from_seed(substream_seed(seed, 0)));
    Ok(Network {
        instance,
        tx: topo.tx,
        rx: topo.rx,
    })
}

pub fn solve_network(network_json: &str, max_iters: usize) -> Result<SolveOutput, String> {
    let net: Network = serde_json::from_str(network_json).map_err(fail)?;
    let inst = net.instance;
    let cfg = EwmmseConfig {
        max_iters: max_iters.clamp(1, 1000),
        ..EwmmseConfig::default()
    };
    let sol = ewmmse::solve(&inst, &cfg, &mut rng_from_seed(inst.seed)).map_err(fail)?;
    let user_rate_bits = qosalloc::model::user_rates(&inst, &sol.allocation).map_err(fail)?;
    Ok(SolveOutput {
        allocation: rows(&sol.allocation),
        sum_rate_bits: sol.sum_rate_bits,
        worst_violation_bits: sol.residual.worst_violation_bits,
        user_rate_bits,
        r_min_bits: inst.r_min_bits.clone(),
        trace: sol.trace,
    })
}

/// Heuristic, eWMMSE, and the grid oracle when the instance is small enough.
pub fn compare_network(network_json: &str) -> Result<Vec<CompareRow>, String> {
    let net: Network = serde_json::from_str(network_json).map_err(fail)?;
    let inst = net.instance;
    let mut out = Vec::new();
    let mut push = |method: &str, p: PowerAllocation| -> Result<(), String> {
        out.push(CompareRow {
            method: method.into(),
            sum_rate_bits: sum_weighted_rate(&inst, &p).map_err(fail)?,
            qos_violations: constraint_residuals(&inst, &p).map_err(fail)?.qos_violations(),
            allocation: rows(&p),
        });
        Ok(())
    };
    push("heuristic", heuristic_max_gain(&inst).map_err(fail)?)?;
    let sol = ewmmse::solve(&inst, &EwmmseConfig::default(), &mut rng_from_seed(inst.seed)).map_err(fail)?;
    push("ewmmse", sol.allocation)?;
    if inst.num_pairs * inst.num_channels <= MAX_ORACLE_CELLS {
        let levels = if inst.num_pairs * inst.num_channels <= 4 { 20 } else { 8 };
        push("oracle", brute_force_oracle(&inst, levels).map_err(fail)?.allocation)?;
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(fail))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn generate(pairs: usize, channels: usize, seed: u32, noise_power: f64) -> Result<String, JsValue> {
    to_js(generate_network(pairs, channels, seed as u64, noise_power))
}

#[wasm_bindgen]
pub fn solve(network_json: &str, max_iters: usize) -> Result<String, JsValue> {
    to_js(solve_network(network_json, max_iters))
}

#[wasm_bindgen]
pub fn compare(network_json: &str) -> Result<String, JsValue> {
    to_js(compare_network(network_json))
}

#[cfg(test)]
mod tests {
    use super::*;

    // JsValue needs a wasm host, so the wrappers themselves are not called here.
    #[test]
    fn solver_errors_become_messages() {
        let mut net = generate_network(2, 1, 3, 1e-3).unwrap();
        net.instance.p_max = -1.0;
        let err = solve_network(&serde_json::to_string(&net).unwrap(), 5).unwrap_err();
        assert!(err.contains("p_max"), "{err}");
    }

    #[test]
    fn network_json_round_trips() {
        let net = generate_network(2, 2, 3, 1e-3).unwrap();
        let back: Network = serde_json::from_str(&serde_json::to_string(&net).unwrap()).unwrap();
        assert_eq!(back.instance, net.instance);
        assert_eq!(back.tx, net.tx);
    }
}
