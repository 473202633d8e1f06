use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::NetworkInstance;

/// Per-feature divisors fitted on a training set.
///
/// Features are divided by their root-mean-square rather than centered, so
/// a masked (zeroed) gain stays exactly zero after scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub direct_scale: f64,
    pub cross_scale: f64,
    pub r_min_scale: f64,
}

impl Default for FeatureStats {
    fn default() -> Self {
        FeatureStats {
            direct_scale: 1.0,
            cross_scale: 1.0,
            r_min_scale: 1.0,
        }
    }
}

fn rms_or_one(sum_sq: f64, count: usize) -> f64 {
    if count == 0 {
        return 1.0;
    }
    let r = (sum_sq / count as f64).sqrt();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

impl FeatureStats {
    pub fn fit(instances: &[NetworkInstance]) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit feature stats on no instances".into(),
            ));
        }
        let (mut dsq, mut dn, mut csq, mut cn, mut rsq, mut rn) = (0.0, 0, 0.0, 0, 0.0, 0);
        for inst in instances {
            let (d, m) = (inst.num_pairs, inst.num_channels);
            for i in 0..d {
                for j in 0..d {
                    for c in 0..m {
                        let g = inst.gain(i, j, c);
                        if i == j {
                            dsq += g * g;
                            dn += 1;
                        } else {
                            csq += g * g;
                            cn += 1;
                        }
                    }
                }
                rsq += inst.r_min_bits[i] * inst.r_min_bits[i];
                rn += 1;
            }
        }
        Ok(FeatureStats {
            direct_scale: rms_or_one(dsq, dn),
            cross_scale: rms_or_one(csq, cn),
            r_min_scale: rms_or_one(rsq, rn),
        })
    }
}

/// One instance as `M` complete directed graphs on `D` vertices.
///
/// Vertex `(i, m)` is row `m * D + i`. Edge rows run over `m`, then receiver
/// `i`, then neighbor `j != i`; each carries the message aggregated at `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub num_pairs: usize,
    pub num_channels: usize,
    /// `[|h_ii^m|, R_i^min]` per vertex, scaled.
    pub node_features: Tensor,
    /// `[|h_ij^m|, |h_ji^m|]` per edge, scaled.
    pub edge_features: Tensor,
    pub edge_target: Vec<usize>,
    pub edge_source: Vec<usize>,
    pub vertex_user: Vec<usize>,
    /// Rate-side constants taken from the true channel, which may differ
    /// from the (possibly masked) one that produced the features.
    pub direct_sq: Tensor,
    pub cross_sq: Tensor,
    pub noise: Tensor,
    pub weights: Vec<f64>,
    pub r_min_nats: Vec<f64>,
    pub p_max: f64,
}

impl GraphBatch {
    pub fn num_vertices(&self) -> usize {
        self.num_pairs * self.num_channels
    }

    pub fn num_edges(&self) -> usize {
        self.edge_target.len()
    }

    pub fn vertex(&self, i: usize, m: usize) -> usize {
        m * self.num_pairs + i
    }
}

pub fn build_graph(inst: &NetworkInstance, stats: &FeatureStats) -> Result<GraphBatch> {
    build_graph_with_truth(inst, inst, stats)
}

/// Features from `observed`, rates from `truth`. The two must agree in
/// everything except interference gains.
pub fn build_graph_with_truth(
    observed: &NetworkInstance,
    truth: &NetworkInstance,
    stats: &FeatureStats,
) -> Result<GraphBatch> {
    observed.validate()?;
    truth.validate()?;
    let (d, m) = (truth.num_pairs, truth.num_channels);
    if observed.num_pairs != d || observed.num_channels != m {
        return Err(Error::Dimension("observed and true instance sizes differ".into()));
    }
    let nv = d * m;
    let ne = m * d * d.saturating_sub(1);
    let mut node = Vec::with_capacity(nv * 2);
    let mut direct_sq = Vec::with_capacity(nv);
    let mut noise = Vec::with_capacity(nv);
    let mut vertex_user = Vec::with_capacity(nv);
    for c in 0..m {
        for i in 0..d {
            node.push(observed.gain(i, i, c) / stats.direct_scale);
            node.push(observed.r_min_bits[i] / stats.r_min_scale);
            direct_sq.push(truth.gain_sq(i, i, c));
            noise.push(truth.noise[i]);
            vertex_user.push(i);
        }
    }
    let mut edge = Vec::with_capacity(ne * 2);
    let mut cross_sq = Vec::with_capacity(ne);
    let mut edge_target = Vec::with_capacity(ne);
    let mut edge_source = Vec::with_capacity(ne);
    for c in 0..m {
        for i in 0..d {
            for j in (0..d).filter(|&j| j != i) {
                edge.push(observed.gain(i, j, c) / stats.cross_scale);
                edge.push(observed.gain(j, i, c) / stats.cross_scale);
                cross_sq.push(truth.gain_sq(i, j, c));
                edge_target.push(c * d + i);
                edge_source.push(c * d + j);
            }
        }
    }
    let g = GraphBatch {
        num_pairs: d,
        num_channels: m,
        node_features: Tensor::from_vec(nv, 2, node),
        edge_features: Tensor::from_vec(ne, 2, edge),
        edge_target,
        edge_source,
        vertex_user,
        direct_sq: Tensor::column(direct_sq),
        cross_sq: Tensor::column(cross_sq),
        noise: Tensor::column(noise),
        weights: truth.weights.clone(),
        r_min_nats: truth.r_min_nats(),
        p_max: truth.p_max,
    };
    if !g.node_features.is_finite() || !g.edge_features.is_finite() {
        return Err(Error::NonFinite("graph features".into()));
    }
    Ok(g)
}
