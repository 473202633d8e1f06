//! JCPGNN-M: message passing on per-channel complete interference graphs
//! with a budget-normalized sigmoid power head, trained primal-dual on the
//! Lagrangian of the QoS-constrained sum-rate problem.

mod graph;
mod net;
mod train;

pub use graph::{build_graph, build_graph_with_truth, FeatureStats, GraphBatch};
pub use net::{
    cap_power, column_to_allocation, forward, forward_tape, lagrangian_loss, message_layer, message_spec,
    normalize_power, rates_nats, update_layer, update_spec, GnnConfig, GnnModel, LossParts, Normalization, PowerHead,
    SampleDuals, MESSAGE_DIMS, UPDATE_DIMS,
};
pub use train::{infer_batch, plateau_epoch, train, DualState, EpochStats, InferenceRun, TrainConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{bias_name, fd_check, max_rel_error, weight_name, FdOptions, InitScheme, Tape, Tensor};
    use crate::channel::{draw_indexed, rng_from_seed, TopologyConfig};
    use crate::model::{sum_weighted_rate, NetworkInstance};

    fn instance(d: usize, m: usize, index: usize) -> NetworkInstance {
        draw_indexed(&TopologyConfig::with_size(d, m), index).unwrap()
    }

    fn model(seed: u64) -> GnnModel {
        GnnModel::new(
            GnnConfig::default(),
            FeatureStats::default(),
            1.0,
            &mut rng_from_seed(seed),
        )
        .unwrap()
    }

    fn zero_mlp(model: &mut GnnModel, name: &str, layers: usize) {
        for l in 0..layers {
            for n in [weight_name(name, l), bias_name(name, l)] {
                let k = model.params.index_of(&n).unwrap();
                model.params.tensor_mut(k).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    #[test]
    fn graph_shape_and_features() {
        let inst = instance(3, 3, 0);
        let g = build_graph(&inst, &FeatureStats::default()).unwrap();
        assert_eq!(g.num_vertices(), 9);
        assert_eq!(g.num_edges(), 18);
        for c in 0..3 {
            assert_eq!(g.edge_target.iter().filter(|&&t| t / 3 == c).count(), 6);
        }
        let v = g.vertex(2, 1);
        assert_eq!(g.node_features.row(v), &[inst.gain(2, 2, 1), inst.r_min_bits[2]]);
        let e = g
            .edge_target
            .iter()
            .zip(&g.edge_source)
            .position(|(&t, &s)| t == g.vertex(0, 2) && s == g.vertex(1, 2))
            .unwrap();
        assert_eq!(g.edge_features.row(e), &[inst.gain(0, 1, 2), inst.gain(1, 0, 2)]);
    }

    #[test]
    fn masked_entry_is_zero_feature() {
        let mut inst = instance(3, 2, 1);
        let k = inst.gain_index(0, 2, 1);
        inst.gains[k] = 0.0;
        let g = build_graph(&inst, &FeatureStats::fit(&[instance(3, 2, 5)]).unwrap()).unwrap();
        let e = g
            .edge_target
            .iter()
            .zip(&g.edge_source)
            .position(|(&t, &s)| t == g.vertex(0, 1) && s == g.vertex(2, 1))
            .unwrap();
        assert_eq!(g.edge_features.at(e, 0), 0.0);
        let back = g
            .edge_target
            .iter()
            .zip(&g.edge_source)
            .position(|(&t, &s)| t == g.vertex(2, 1) && s == g.vertex(0, 1))
            .unwrap();
        assert_eq!(g.edge_features.at(back, 1), 0.0);
    }

    #[test]
    fn messages_vanish_without_neighbors() {
        let m = model(1);
        let g = build_graph(&instance(1, 2, 0), &FeatureStats::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 1));
        let n = message_layer(&mut tape, &m, &g, x, 0).unwrap();
        assert_eq!(tape.value(n).shape(), (2, 32));
        assert!(tape.value(n).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_messages_sum() {
        let mut m = model(2);
        zero_mlp(&mut m, "phi1.0", 2);
        let k = m.params.index_of(&bias_name("phi1.0", 1)).unwrap();
        let c: Vec<f64> = (0..32).map(|v| v as f64 * 0.1).collect();
        m.params.tensor_mut(k).data.copy_from_slice(&c);
        let g = build_graph(&instance(4, 2, 0), &FeatureStats::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(8, 1));
        let n = message_layer(&mut tape, &m, &g, x, 0).unwrap();
        for v in 0..8 {
            for (a, b) in tape.value(n).row(v).iter().zip(&c) {
                assert!((a - 3.0 * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn update_head_range() {
        let mut m = model(3);
        zero_mlp(&mut m, "alpha.0", 3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(4, 1));
        let n = tape.constant(Tensor::filled(4, 32, 0.7));
        let p = update_layer(&mut tape, &m, x, n, 0).unwrap();
        assert!(tape.value(p).data.iter().all(|&v| v == 0.5));

        let k = m.params.index_of(&bias_name("alpha.0", 2)).unwrap();
        for (bias, want) in [(-800.0, 0.0), (800.0, 1.0)] {
            m.params.tensor_mut(k).data[0] = bias;
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::zeros(4, 1));
            let n = tape.constant(Tensor::zeros(4, 32));
            let p = update_layer(&mut tape, &m, x, n, 0).unwrap();
            assert!(tape.value(p).data.iter().all(|&v| (v - want).abs() < 1e-12));
        }

        let m = model(4);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(2, 1, vec![0.3, 0.3]));
        let n = tape.constant(Tensor::filled(2, 32, 0.2));
        let p = update_layer(&mut tape, &m, x, n, 0).unwrap();
        assert_eq!(tape.value(p).data[0], tape.value(p).data[1]);
    }

    #[test]
    fn normalization_rules() {
        let g = build_graph(&instance(2, 2, 0), &FeatureStats::default()).unwrap();
        let mut tape = Tape::new();
        // Rows m*D+i: user 0 totals 2.0, user 1 totals 0.6.
        let raw = tape.constant(Tensor::column(vec![1.2, 0.4, 0.8, 0.2]));
        let p = normalize_power(&mut tape, &g, raw);
        let v = &tape.value(p).data;
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[2] - 0.4).abs() < 1e-15);
        assert_eq!((v[1], v[3]), (0.4, 0.2));
    }

    #[test]
    fn loss_terms() {
        let mut inst = instance(3, 2, 2);
        inst.weights = vec![1.0, 2.0, 0.5];
        let g = build_graph(&inst, &FeatureStats::default()).unwrap();
        let m = model(5);
        let mut tape = Tape::new();
        let p = forward_tape(&mut tape, &m, &g).unwrap();
        let alloc = column_to_allocation(&g, tape.value(p)).unwrap();
        let parts = lagrangian_loss(&mut tape, &g, p, &SampleDuals::zeros(3)).unwrap();
        let want = -sum_weighted_rate(&inst, &alloc).unwrap() * std::f64::consts::LN_2;
        assert!((tape.value(parts.loss).data[0] - want).abs() < 1e-9);

        let rates: Vec<f64> = {
            let r = &tape.value(parts.rates).data;
            (0..3).map(|i| r[i] + r[3 + i]).collect()
        };
        let replay = |graph: &GraphBatch, d: &SampleDuals| {
            let mut t = Tape::new();
            let pv = t.constant(tape.value(p).clone());
            let l = lagrangian_loss(&mut t, graph, pv, d).unwrap();
            t.value(l.loss).data[0]
        };
        let mut tight = g.clone();
        tight.r_min_nats = rates.clone();
        tight.p_max = tape.value(parts.user_power).data[0];
        let duals = SampleDuals {
            mu: vec![0.4, 0.1, 0.2],
            lam: vec![0.9, 0.0, 0.0],
        };
        let plain = replay(&tight, &SampleDuals::zeros(3));
        assert!((replay(&tight, &duals) - plain).abs() < 1e-12);

        let mut violated = g.clone();
        violated.r_min_nats = rates.iter().map(|r| r + 1.0).collect();
        let eval = |mu0: f64| {
            let mut t = Tape::new();
            let pv = t.constant(tape.value(p).clone());
            let d = SampleDuals {
                mu: vec![mu0, 0.0, 0.0],
                lam: vec![0.0; 3],
            };
            let l = lagrangian_loss(&mut t, &violated, pv, &d).unwrap();
            t.value(l.loss).data[0]
        };
        assert!(eval(0.5) > eval(0.1));
    }

    #[test]
    fn forward_respects_budget_and_is_deterministic() {
        for seed in 0..20 {
            let m = model(seed);
            let inst = instance(4, 3, seed as usize);
            let g = build_graph(&inst, &FeatureStats::default()).unwrap();
            let a = forward(&m, &g).unwrap();
            for i in 0..4 {
                assert!(a.user_total(i) <= inst.p_max);
                assert!(a.get(i, 0) >= 0.0);
            }
            assert_eq!(a, forward(&m, &g).unwrap());
        }
    }

    #[test]
    fn channel_cap_head() {
        let m = GnnModel::new(GnnConfig::icp(), FeatureStats::default(), 1.0, &mut rng_from_seed(3)).unwrap();
        let inst = instance(4, 3, 11);
        let g = build_graph(&inst, &FeatureStats::default()).unwrap();
        let a = forward(&m, &g).unwrap();
        assert!(a.as_slice().iter().all(|&v| v <= 1.0 / 3.0));
        assert!((0..4).all(|i| a.user_total(i) <= 1.0));

        let joint = GnnModel {
            config: GnnConfig::default(),
            ..m.clone()
        };
        let single = instance(4, 1, 12);
        let g1 = build_graph(&single, &FeatureStats::default()).unwrap();
        assert_eq!(forward(&m, &g1).unwrap(), forward(&joint, &g1).unwrap());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut inst = instance(3, 2, 4);
        inst.noise = vec![1e-2; 3];
        let stats = FeatureStats::fit(&[inst.clone()]).unwrap();
        let m = GnnModel::new(GnnConfig::default(), stats, 1.0, &mut rng_from_seed(8)).unwrap();
        let g = build_graph(&inst, &stats).unwrap();
        let duals = SampleDuals {
            mu: vec![0.3, 0.0, 1.2],
            lam: vec![0.0; 3],
        };
        let loss_of = |params: &crate::autodiff::ParamSet| -> crate::Result<f64> {
            let mm = GnnModel {
                params: params.clone(),
                ..m.clone()
            };
            let mut t = Tape::new();
            let p = forward_tape(&mut t, &mm, &g)?;
            let l = lagrangian_loss(&mut t, &g, p, &duals)?;
            Ok(t.value(l.loss).data[0])
        };
        let mut tape = Tape::new();
        let p = forward_tape(&mut tape, &m, &g).unwrap();
        let l = lagrangian_loss(&mut tape, &g, p, &duals).unwrap();
        let grads = tape.grad(l.loss, &m.params).unwrap();
        let probes = fd_check(&m.params, &grads, loss_of, &FdOptions::default(), &mut rng_from_seed(1)).unwrap();
        assert!(max_rel_error(&probes) <= 1e-4, "{}", max_rel_error(&probes));
    }

    #[test]
    fn zero_gains_give_zero_gradients() {
        let inst = NetworkInstance::from_gains(3, 2, vec![0.0; 18]).unwrap();
        let g = build_graph(&inst, &FeatureStats::default()).unwrap();
        let m = model(6);
        let mut tape = Tape::new();
        let p = forward_tape(&mut tape, &m, &g).unwrap();
        let duals = SampleDuals {
            mu: vec![0.5; 3],
            lam: vec![0.0; 3],
        };
        let mut g = g;
        g.r_min_nats = vec![0.2; 3];
        let l = lagrangian_loss(&mut tape, &g, p, &duals).unwrap();
        assert!((tape.value(l.loss).data[0] - 0.3).abs() < 1e-15);
        assert_eq!(tape.grad(l.loss, &m.params).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn zero_learning_rates_leave_model() {
        let data: Vec<_> = (0..5).map(|k| instance(3, 2, k)).collect();
        let mut m = model(9);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 2,
            lr_params: 0.0,
            ..TrainConfig::default()
        };
        let (duals, trace) = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m, before);
        assert_eq!(trace.len(), 2);
        assert!(duals
            .samples
            .iter()
            .flat_map(|s| s.mu.iter().chain(&s.lam))
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn mu_grows_while_violated() {
        let mut inst = instance(3, 2, 3);
        inst.r_min_bits = vec![50.0; 3];
        let mut m = model(10);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (duals, trace) = train(&mut m, &[inst], &cfg).unwrap();
        assert!(duals.samples[0].mu.iter().all(|&v| v > 0.0));
        assert!(trace.windows(2).all(|w| w[1].mean_mu > w[0].mean_mu));
        assert_eq!(trace[2].violation_prob, 1.0);
    }

    #[test]
    fn training_reports_bad_input() {
        let mut m = model(11);
        assert!(train(&mut m, &[], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            mask_fraction: 0.9,
            ..TrainConfig::default()
        };
        assert!(train(&mut m, &[instance(2, 1, 0)], &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let stats = FeatureStats::fit(&[instance(3, 2, 0)]).unwrap();
        let m = GnnModel::with_init(
            GnnConfig::icp(),
            stats,
            2.0,
            &mut rng_from_seed(4),
            InitScheme::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        assert_eq!(GnnModel::load(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn plateau_detection() {
        let trace: Vec<EpochStats> = (0..30)
            .map(|e| EpochStats {
                epoch: e,
                avg_loss: 0.0,
                avg_sum_rate_bits: if e < 10 { e as f64 } else { 10.0 },
                violation_prob: 0.0,
                mean_mu: 0.0,
            })
            .collect();
        assert_eq!(plateau_epoch(&trace, 10, 0.01), Some(19));
        assert_eq!(plateau_epoch(&trace[..5], 10, 0.01), None);
    }
}
