use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{FeatureStats, GraphBatch};
use crate::autodiff::{
    init_params, mlp_forward, read_checkpoint, write_checkpoint, Activation, InitScheme, MlpSpec, ParamSet, Tape,
    Tensor, Var,
};
use crate::error::{Error, Result};
use crate::model::PowerAllocation;

pub const MESSAGE_DIMS: [usize; 3] = [5, 16, 32];
pub const UPDATE_DIMS: [usize; 4] = [33, 16, 8, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    EveryLayer,
    FinalLayer,
}

/// How the sigmoid head is turned into a feasible allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PowerHead {
    /// Joint per-user budget scaling across channels.
    #[default]
    Budget,
    /// Independent `min(p, P_max / M)` per channel.
    ChannelCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub layers: usize,
    pub normalization: Normalization,
    pub head: PowerHead,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 2,
            normalization: Normalization::EveryLayer,
            head: PowerHead::Budget,
        }
    }
}

impl GnnConfig {
    pub fn icp() -> Self {
        GnnConfig {
            head: PowerHead::ChannelCap,
            ..GnnConfig::default()
        }
    }
}

pub fn message_spec(layer: usize) -> MlpSpec {
    MlpSpec::new(format!("phi1.{layer}"), &MESSAGE_DIMS)
}

pub fn update_spec(layer: usize) -> MlpSpec {
    MlpSpec::new(format!("alpha.{layer}"), &UPDATE_DIMS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub params: ParamSet,
    pub config: GnnConfig,
    pub stats: FeatureStats,
    /// Scale of the sigmoid head and of the carried state `x = p / p_max`.
    pub p_max: f64,
}

impl GnnModel {
    pub fn new(config: GnnConfig, stats: FeatureStats, p_max: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::with_init(config, stats, p_max, rng, InitScheme::default())
    }

    pub fn with_init(
        config: GnnConfig,
        stats: FeatureStats,
        p_max: f64,
        rng: &mut impl Rng,
        scheme: InitScheme,
    ) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::InvalidArgument("GNN needs at least one layer".into()));
        }
        if !(p_max > 0.0 && p_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("p_max {p_max} must be positive")));
        }
        let params = init_params(&Self::specs(config.layers), rng, scheme)?;
        Ok(GnnModel {
            params,
            config,
            stats,
            p_max,
        })
    }

    pub fn specs(layers: usize) -> Vec<MlpSpec> {
        (0..layers).flat_map(|s| [message_spec(s), update_spec(s)]).collect()
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let meta = serde_json::json!({
            "config": self.config,
            "stats": self.stats,
            "p_max": self.p_max,
            "arch": Self::specs(self.config.layers),
        });
        write_checkpoint(w, &meta, &self.params)
    }

    pub fn load(r: &mut impl Read) -> Result<Self> {
        let (meta, params) = read_checkpoint(r)?;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint meta lacks '{k}'")))
        };
        let config: GnnConfig = serde_json::from_value(field("config")?)?;
        let stats: FeatureStats = serde_json::from_value(field("stats")?)?;
        let p_max: f64 = serde_json::from_value(field("p_max")?)?;
        for spec in Self::specs(config.layers) {
            for (l, pair) in spec.dims.windows(2).enumerate() {
                let w = params
                    .get(&crate::autodiff::weight_name(&spec.name, l))
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {}", spec.name)))?;
                if w.shape() != (pair[1], pair[0]) {
                    return Err(Error::Format(format!(
                        "{} layer {l} has shape {:?}",
                        spec.name,
                        w.shape()
                    )));
                }
            }
        }
        Ok(GnnModel {
            params,
            config,
            stats,
            p_max,
        })
    }

    pub fn store(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(&mut f)
    }
}

/// Messages `φ1([x_i, V_i, E_ij])` summed over neighbors: `MD × 32`.
pub fn message_layer(tape: &mut Tape, model: &GnnModel, graph: &GraphBatch, x: Var, layer: usize) -> Result<Var> {
    let xe = tape.gather_rows(x, graph.edge_target.clone());
    let ve = tape.constant(gather_const(&graph.node_features, &graph.edge_target));
    let ee = tape.constant(graph.edge_features.clone());
    let input = tape.concat_cols(&[xe, ve, ee]);
    let msg = mlp_forward(tape, &model.params, &message_spec(layer), input, Activation::Relu)?;
    let agg = tape.segment_sum(msg, graph.edge_target.clone(), graph.num_vertices());
    tape.check()?;
    Ok(agg)
}

/// Per-vertex power head `p_max · sigmoid(α([x, n]))`: `MD × 1`.
pub fn update_layer(tape: &mut Tape, model: &GnnModel, x: Var, n: Var, layer: usize) -> Result<Var> {
    let input = tape.concat_cols(&[x, n]);
    let s = mlp_forward(tape, &model.params, &update_spec(layer), input, Activation::Sigmoid)?;
    Ok(tape.scale(s, model.p_max))
}

/// `p · P_max / max(Σ_m p, P_max)` per user.
pub fn normalize_power(tape: &mut Tape, graph: &GraphBatch, p_hat: Var) -> Var {
    let totals = tape.segment_sum(p_hat, graph.vertex_user.clone(), graph.num_pairs);
    let denom = tape.max_const(totals, graph.p_max);
    let per_vertex = tape.gather_rows(denom, graph.vertex_user.clone());
    let scaled = tape.scale(p_hat, graph.p_max);
    tape.div(scaled, per_vertex)
}

pub fn cap_power(tape: &mut Tape, graph: &GraphBatch, p_hat: Var) -> Var {
    tape.min_const(p_hat, graph.p_max / graph.num_channels as f64)
}

fn apply_head(tape: &mut Tape, model: &GnnModel, graph: &GraphBatch, p_hat: Var) -> Var {
    match model.config.head {
        PowerHead::Budget => normalize_power(tape, graph, p_hat),
        PowerHead::ChannelCap => cap_power(tape, graph, p_hat),
    }
}

/// Records the whole model; returns the final allocation column `MD × 1`.
pub fn forward_tape(tape: &mut Tape, model: &GnnModel, graph: &GraphBatch) -> Result<Var> {
    let mut x = tape.constant(Tensor::zeros(graph.num_vertices(), 1));
    let last = model.config.layers - 1;
    let mut p = x;
    for s in 0..model.config.layers {
        let n = message_layer(tape, model, graph, x, s)?;
        let p_hat = update_layer(tape, model, x, n, s)?;
        p = if s == last || model.config.normalization == Normalization::EveryLayer {
            apply_head(tape, model, graph, p_hat)
        } else {
            p_hat
        };
        x = tape.scale(p, 1.0 / model.p_max);
    }
    tape.check()?;
    Ok(p)
}

/// Per-vertex rates `ln(1 + SINR)` of allocation column `p`.
pub fn rates_nats(tape: &mut Tape, graph: &GraphBatch, p: Var) -> Var {
    let signal = tape.mul_const(p, graph.direct_sq.clone());
    let pj = tape.gather_rows(p, graph.edge_source.clone());
    let leak = tape.mul_const(pj, graph.cross_sq.clone());
    let interference = tape.segment_sum(leak, graph.edge_target.clone(), graph.num_vertices());
    let denom = tape.add_const(interference, &graph.noise);
    let sinr = tape.div(signal, denom);
    let one = Tensor::filled(graph.num_vertices(), 1, 1.0);
    let shifted = tape.add_const(sinr, &one);
    tape.log(shifted)
}

/// Dual variables of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDuals {
    pub mu: Vec<f64>,
    pub lam: Vec<f64>,
}

impl SampleDuals {
    pub fn zeros(num_pairs: usize) -> Self {
        SampleDuals {
            mu: vec![0.0; num_pairs],
            lam: vec![0.0; num_pairs],
        }
    }
}

pub struct LossParts {
    pub loss: Var,
    pub rates: Var,
    pub user_power: Var,
}

/// `-Σ α_i R_i + Σ λ_i (Σ_m p_i - P_max) + Σ μ_i (R_i^min - R_i)` in nats.
pub fn lagrangian_loss(tape: &mut Tape, graph: &GraphBatch, p: Var, duals: &SampleDuals) -> Result<LossParts> {
    if duals.mu.len() != graph.num_pairs || duals.lam.len() != graph.num_pairs {
        return Err(Error::Dimension("dual vectors do not match D".into()));
    }
    let rates = rates_nats(tape, graph, p);
    let coef: Vec<f64> = graph
        .vertex_user
        .iter()
        .map(|&i| -(graph.weights[i] + duals.mu[i]))
        .collect();
    let weighted = tape.mul_const(rates, Tensor::column(coef));
    let rate_term = tape.sum_all(weighted);

    let user_power = tape.segment_sum(p, graph.vertex_user.clone(), graph.num_pairs);
    let slack = tape.add_const(user_power, &Tensor::filled(graph.num_pairs, 1, -graph.p_max));
    let priced = tape.mul_const(slack, Tensor::column(duals.lam.clone()));
    let power_term = tape.sum_all(priced);

    let both = tape.add(rate_term, power_term);
    let demand: f64 = duals.mu.iter().zip(&graph.r_min_nats).map(|(m, r)| m * r).sum();
    let loss = tape.add_const(both, &Tensor::scalar(demand));
    tape.check()?;
    Ok(LossParts {
        loss,
        rates,
        user_power,
    })
}

/// Converts the allocation column to a matrix, nudging any row that
/// rounding pushed past the budget back to at most `p_max`.
pub fn column_to_allocation(graph: &GraphBatch, col: &Tensor) -> Result<PowerAllocation> {
    let (d, m) = (graph.num_pairs, graph.num_channels);
    let mut p = PowerAllocation::zeros(d, m);
    for c in 0..m {
        for i in 0..d {
            p.set(i, c, col.data[c * d + i].max(0.0));
        }
    }
    for i in 0..d {
        let mut k = 0;
        while p.user_total(i) > graph.p_max && k < 8 {
            for c in 0..m {
                p.set(i, c, p.get(i, c) * (1.0 - 4.0 * f64::EPSILON));
            }
            k += 1;
        }
    }
    Ok(p)
}

pub fn forward(model: &GnnModel, graph: &GraphBatch) -> Result<PowerAllocation> {
    let mut tape = Tape::new();
    let p = forward_tape(&mut tape, model, graph)?;
    column_to_allocation(graph, tape.value(p))
}

fn gather_const(t: &Tensor, index: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(index.len(), t.cols);
    for (r, &k) in index.iter().enumerate() {
        out.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(t.row(k));
    }
    out
}
