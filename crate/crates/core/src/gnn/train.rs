use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{build_graph, build_graph_with_truth, GraphBatch};
use super::net::{forward, forward_tape, lagrangian_loss, GnnModel, SampleDuals};
use crate::autodiff::{dual_step, Gradients, Optimizer, OptimizerState, Tape};
use crate::channel::{mask_csi, rng_from_seed, substream_seed};
use crate::error::{Error, Result};
use crate::model::{NetworkInstance, PowerAllocation, RATE_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_params: f64,
    pub lr_lambda: f64,
    pub lr_mu: f64,
    /// Learn λ as well; by default it stays at zero.
    pub train_lambda: bool,
    pub optimizer: Optimizer,
    /// Samples per parameter step; gradients are averaged in sample order.
    pub batch_size: usize,
    pub shuffle: bool,
    /// Fraction of interference gains hidden from the features of every
    /// training sample. Rates in the loss always use the full channel.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr_params: 1e-3,
            lr_lambda: 1e-3,
            lr_mu: 1e-2,
            train_lambda: false,
            optimizer: Optimizer::Sgd,
            batch_size: 1,
            shuffle: true,
            mask_fraction: 0.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_params", self.lr_params),
            ("lr_lambda", self.lr_lambda),
            ("lr_mu", self.lr_mu),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.mask_fraction) {
            return Err(Error::InvalidArgument(format!(
                "mask_fraction {} outside [0, 0.5]",
                self.mask_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub avg_loss: f64,
    pub avg_sum_rate_bits: f64,
    pub violation_prob: f64,
    pub mean_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub samples: Vec<SampleDuals>,
}

/// Primal-dual training: per sample, forward, loss under that sample's
/// duals, reverse pass, parameter step, then projected ascent on μ (and λ).
pub fn train(
    model: &mut GnnModel,
    dataset: &[NetworkInstance],
    cfg: &TrainConfig,
) -> Result<(DualState, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let graphs = dataset
        .iter()
        .enumerate()
        .map(|(k, inst)| {
            if cfg.mask_fraction > 0.0 {
                let mut rng = rng_from_seed(substream_seed(cfg.seed ^ 0x6d61_736b, k as u64));
                let seen = mask_csi(inst, cfg.mask_fraction, &mut rng)?;
                build_graph_with_truth(&seen, inst, &model.stats)
            } else {
                build_graph(inst, &model.stats)
            }
            .map_err(|e| e.at_instance(k))
        })
        .collect::<Result<Vec<GraphBatch>>>()?;

    let mut duals = DualState {
        samples: graphs.iter().map(|g| SampleDuals::zeros(g.num_pairs)).collect(),
    };
    let mut opt = OptimizerState::new(cfg.optimizer, &model.params);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut rng = rng_from_seed(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut rate_sum, mut violated, mut users) = (0.0, 0.0, 0usize, 0usize);
        let mut acc = Gradients::zeros_like(&model.params);
        let mut in_batch = 0;
        for &k in &order {
            let g = &graphs[k];
            let mut tape = Tape::new();
            let sample = &mut duals.samples[k];
            let step = forward_tape(&mut tape, model, g)
                .and_then(|p| lagrangian_loss(&mut tape, g, p, sample))
                .map_err(|e| training_error(epoch, k, e))?;
            let loss = tape.value(step.loss).data[0];
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    sample: k,
                    detail: format!("loss is {loss}"),
                });
            }
            let grads = tape
                .grad(step.loss, &model.params)
                .map_err(|e| training_error(epoch, k, e))?;
            acc.add_assign(&grads);
            in_batch += 1;

            let rates = &tape.value(step.rates).data;
            let mut user_rate = vec![0.0; g.num_pairs];
            for (v, &i) in g.vertex_user.iter().enumerate() {
                user_rate[i] += rates[v];
            }
            let power = &tape.value(step.user_power).data;
            for i in 0..g.num_pairs {
                let bracket = g.r_min_nats[i] - user_rate[i];
                sample.mu[i] = dual_step(sample.mu[i], bracket, cfg.lr_mu);
                if cfg.train_lambda {
                    sample.lam[i] = dual_step(sample.lam[i], power[i] - g.p_max, cfg.lr_lambda);
                }
                if user_rate[i] < g.r_min_nats[i] - RATE_EPS * std::f64::consts::LN_2 {
                    violated += 1;
                }
                rate_sum += g.weights[i] * user_rate[i];
            }
            users += g.num_pairs;
            loss_sum += loss;

            if in_batch == cfg.batch_size {
                flush(model, &mut opt, &mut acc, in_batch, cfg.lr_params);
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            flush(model, &mut opt, &mut acc, in_batch, cfg.lr_params);
        }
        if !model.params.all_finite() {
            return Err(Error::Training {
                epoch,
                sample: order[order.len() - 1],
                detail: "parameters became non-finite".into(),
            });
        }
        let n = graphs.len() as f64;
        let mu_count: usize = duals.samples.iter().map(|s| s.mu.len()).sum();
        trace.push(EpochStats {
            epoch,
            avg_loss: loss_sum / n,
            avg_sum_rate_bits: rate_sum / n / std::f64::consts::LN_2,
            violation_prob: violated as f64 / users as f64,
            mean_mu: duals.samples.iter().flat_map(|s| &s.mu).sum::<f64>() / mu_count as f64,
        });
    }
    Ok((duals, trace))
}

fn flush(model: &mut GnnModel, opt: &mut OptimizerState, acc: &mut Gradients, count: usize, lr: f64) {
    if count > 1 {
        acc.scale(1.0 / count as f64);
    }
    if lr > 0.0 {
        opt.step(&mut model.params, acc, lr);
    }
    *acc = Gradients::zeros_like(&model.params);
}

fn training_error(epoch: usize, sample: usize, e: Error) -> Error {
    Error::Training {
        epoch,
        sample,
        detail: e.to_string(),
    }
}

/// First epoch at which the last `window` epoch-average sum rates all lie
/// within `rel_tol` of their mean.
pub fn plateau_epoch(trace: &[EpochStats], window: usize, rel_tol: f64) -> Option<usize> {
    if window == 0 || trace.len() < window {
        return None;
    }
    (window - 1..trace.len()).find(|&end| {
        let w = &trace[end + 1 - window..=end];
        let mean = w.iter().map(|e| e.avg_sum_rate_bits).sum::<f64>() / window as f64;
        let lo = w.iter().map(|e| e.avg_sum_rate_bits).fold(f64::INFINITY, f64::min);
        let hi = w.iter().map(|e| e.avg_sum_rate_bits).fold(f64::NEG_INFINITY, f64::max);
        mean > 0.0 && (hi - lo) <= rel_tol * mean
    })
}

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub allocations: Vec<PowerAllocation>,
    /// Wall-clock of each forward pass, graph construction included, file
    /// I/O excluded.
    pub timings: Vec<Duration>,
}

pub fn infer_batch(model: &GnnModel, dataset: &[NetworkInstance]) -> Result<InferenceRun> {
    let mut allocations = Vec::with_capacity(dataset.len());
    let mut timings = Vec::with_capacity(dataset.len());
    for (k, inst) in dataset.iter().enumerate() {
        let t0 = Instant::now();
        let g = build_graph(inst, &model.stats).map_err(|e| e.at_instance(k))?;
        let p = forward(model, &g).map_err(|e| e.at_instance(k))?;
        timings.push(t0.elapsed());
        allocations.push(p);
    }
    Ok(InferenceRun { allocations, timings })
}
