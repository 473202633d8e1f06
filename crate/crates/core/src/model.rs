//! Problem data and the objective math shared by every allocator.
//!
//! A [`NetworkInstance`] is one CSI snapshot of `D` transceiver pairs sharing
//! `M` orthogonal channels. Gains are stored as magnitudes `|h_{i,j}^m|`
//! (receiver `i`, transmitter `j`, channel `m`) in row-major `(i, j, m)` order.
//! Rates at this boundary are in bits/s/Hz; the solvers convert to nats
//! internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack on the per-user power budget accepted for solver outputs.
pub const POWER_EPS: f64 = 1e-9;
/// Absolute slack (bits/s/Hz) on the per-user QoS constraint.
pub const RATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkInstance {
    pub num_pairs: usize,
    pub num_channels: usize,
    /// `|h_{i,j}^m|`, index `(i * D + j) * M + m`.
    pub gains: Vec<f64>,
    /// Per-receiver noise power `σ_i²`, shared by all channels.
    pub noise: Vec<f64>,
    pub p_max: f64,
    pub weights: Vec<f64>,
    /// Minimum total rate per pair, bits/s/Hz.
    pub r_min_bits: Vec<f64>,
    pub seed: u64,
}

impl NetworkInstance {
    /// Builds an instance with unit noise, unit weights and no QoS demand.
    pub fn from_gains(num_pairs: usize, num_channels: usize, gains: Vec<f64>) -> Result<Self> {
        let inst = NetworkInstance {
            num_pairs,
            num_channels,
            gains,
            noise: vec![1.0; num_pairs],
            p_max: 1.0,
            weights: vec![1.0; num_pairs],
            r_min_bits: vec![0.0; num_pairs],
            seed: 0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.num_pairs, self.num_channels);
        if d == 0 || m == 0 {
            return Err(Error::Dimension(format!("D={d}, M={m} must be positive")));
        }
        if self.gains.len() != d * d * m {
            return Err(Error::Dimension(format!(
                "gains has {} entries, expected D*D*M = {}",
                self.gains.len(),
                d * d * m
            )));
        }
        for (name, v) in [
            ("noise", &self.noise),
            ("weights", &self.weights),
            ("r_min_bits", &self.r_min_bits),
        ] {
            if v.len() != d {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {d}",
                    v.len()
                )));
            }
        }
        if self.gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gains".into()));
        }
        if self.gains.iter().any(|&g| g < 0.0) {
            return Err(Error::InvalidArgument("gains must be nonnegative".into()));
        }
        if !self.p_max.is_finite() || self.p_max <= 0.0 {
            return Err(Error::InvalidArgument("p_max must be positive".into()));
        }
        if self.noise.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::InvalidArgument("noise powers must be positive".into()));
        }
        if self.weights.iter().any(|&a| !a.is_finite() || a <= 0.0) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        if self.r_min_bits.iter().any(|&r| !r.is_finite() || r < 0.0) {
            return Err(Error::InvalidArgument("r_min_bits must be nonnegative".into()));
        }
        Ok(())
    }

    /// True when every pair has a nonzero direct gain on some channel.
    pub fn has_live_links(&self) -> bool {
        (0..self.num_pairs).all(|i| (0..self.num_channels).any(|m| self.gain(i, i, m) > 0.0))
    }

    #[inline]
    pub fn gain_index(&self, rx: usize, tx: usize, ch: usize) -> usize {
        (rx * self.num_pairs + tx) * self.num_channels + ch
    }

    #[inline]
    pub fn gain(&self, rx: usize, tx: usize, ch: usize) -> f64 {
        self.gains[self.gain_index(rx, tx, ch)]
    }

    #[inline]
    pub fn gain_sq(&self, rx: usize, tx: usize, ch: usize) -> f64 {
        let g = self.gain(rx, tx, ch);
        g * g
    }

    pub fn r_min_nats(&self) -> Vec<f64> {
        self.r_min_bits.iter().map(|r| r * std::f64::consts::LN_2).collect()
    }

    /// Applies a relabeling of pairs: new pair `k` is old pair `perm[k]`.
    pub fn permute_pairs(&self, perm: &[usize]) -> NetworkInstance {
        let d = self.num_pairs;
        let m = self.num_channels;
        assert_eq!(perm.len(), d);
        let mut gains = vec![0.0; self.gains.len()];
        for a in 0..d {
            for b in 0..d {
                for c in 0..m {
                    gains[(a * d + b) * m + c] = self.gain(perm[a], perm[b], c);
                }
            }
        }
        NetworkInstance {
            gains,
            noise: perm.iter().map(|&k| self.noise[k]).collect(),
            weights: perm.iter().map(|&k| self.weights[k]).collect(),
            r_min_bits: perm.iter().map(|&k| self.r_min_bits[k]).collect(),
            ..self.clone()
        }
    }

    /// New channel `c` is old channel `perm[c]`.
    pub fn permute_channels(&self, perm: &[usize]) -> NetworkInstance {
        let d = self.num_pairs;
        let m = self.num_channels;
        assert_eq!(perm.len(), m);
        let mut gains = vec![0.0; self.gains.len()];
        for a in 0..d {
            for b in 0..d {
                for c in 0..m {
                    gains[(a * d + b) * m + c] = self.gain(a, b, perm[c]);
                }
            }
        }
        NetworkInstance { gains, ..self.clone() }
    }
}

/// Per-pair, per-channel quantity stored row-major (`i * M + m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairChannelMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl PairChannelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        PairChannelMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(PairChannelMatrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.data[i * self.cols + m]
    }

    #[inline]
    pub fn set(&mut self, i: usize, m: usize, v: f64) {
        self.data[i * self.cols + m] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// `p_i^m`, the decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation(pub PairChannelMatrix);

impl PowerAllocation {
    pub fn zeros(num_pairs: usize, num_channels: usize) -> Self {
        PowerAllocation(PairChannelMatrix::zeros(num_pairs, num_channels))
    }

    pub fn from_vec(num_pairs: usize, num_channels: usize, data: Vec<f64>) -> Result<Self> {
        PairChannelMatrix::from_vec(num_pairs, num_channels, data).map(PowerAllocation)
    }

    pub fn num_pairs(&self) -> usize {
        self.0.rows
    }

    pub fn num_channels(&self) -> usize {
        self.0.cols
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.0.get(i, m)
    }

    #[inline]
    pub fn set(&mut self, i: usize, m: usize, v: f64) {
        self.0.set(i, m, v)
    }

    pub fn user_total(&self, i: usize) -> f64 {
        self.0.row_sum(i)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0.data
    }

    /// Nonnegativity and budget (with [`POWER_EPS`] relative slack).
    pub fn is_within_budget(&self, p_max: f64) -> bool {
        self.0.data.iter().all(|&p| p >= 0.0)
            && (0..self.num_pairs()).all(|i| self.user_total(i) <= p_max * (1.0 + POWER_EPS))
    }

    pub fn permute_pairs(&self, perm: &[usize]) -> PowerAllocation {
        let mut out = PowerAllocation::zeros(self.num_pairs(), self.num_channels());
        for (a, &src) in perm.iter().enumerate() {
            for m in 0..self.num_channels() {
                out.set(a, m, self.get(src, m));
            }
        }
        out
    }

    pub fn permute_channels(&self, perm: &[usize]) -> PowerAllocation {
        let mut out = PowerAllocation::zeros(self.num_pairs(), self.num_channels());
        for i in 0..self.num_pairs() {
            for (c, &src) in perm.iter().enumerate() {
                out.set(i, c, self.get(i, src));
            }
        }
        out
    }
}

/// Binary channel usage `c_i^m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAssignment {
    pub num_pairs: usize,
    pub num_channels: usize,
    pub active: Vec<bool>,
}

impl ChannelAssignment {
    #[inline]
    pub fn get(&self, i: usize, m: usize) -> bool {
        self.active[i * self.num_channels + m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    /// `P_max - Σ_m p_i^m`.
    pub power_slack: Vec<f64>,
    /// `Σ_m R_i^m - R_i^min`, bits/s/Hz.
    pub rate_slack_bits: Vec<f64>,
    pub worst_violation_bits: f64,
}

impl ConstraintResidual {
    pub fn is_feasible(&self, p_max: f64) -> bool {
        self.power_slack.iter().all(|&s| s >= -POWER_EPS * p_max)
            && self.rate_slack_bits.iter().all(|&s| s >= -RATE_EPS)
    }

    pub fn qos_violations(&self) -> usize {
        self.rate_slack_bits.iter().filter(|&&s| s < -RATE_EPS).count()
    }
}

fn check_dims(inst: &NetworkInstance, p: &PowerAllocation) -> Result<()> {
    if p.num_pairs() != inst.num_pairs || p.num_channels() != inst.num_channels {
        return Err(Error::Dimension(format!(
            "allocation is {}x{}, instance is {}x{}",
            p.num_pairs(),
            p.num_channels(),
            inst.num_pairs,
            inst.num_channels
        )));
    }
    if p.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("power allocation".into()));
    }
    if inst.gains.iter().chain(&inst.noise).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("instance".into()));
    }
    if p.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("negative power".into()));
    }
    Ok(())
}

/// SINR of every (receiver, channel). Zero power gives zero SINR, which is how
/// the binary assignment folds into the power variable.
pub fn compute_sinr(inst: &NetworkInstance, p: &PowerAllocation) -> Result<PairChannelMatrix> {
    check_dims(inst, p)?;
    Ok(sinr_unchecked(inst, p))
}

pub(crate) fn sinr_unchecked(inst: &NetworkInstance, p: &PowerAllocation) -> PairChannelMatrix {
    let (d, m) = (inst.num_pairs, inst.num_channels);
    let mut out = PairChannelMatrix::zeros(d, m);
    for i in 0..d {
        for c in 0..m {
            let signal = inst.gain_sq(i, i, c) * p.get(i, c);
            let mut interference = inst.noise[i];
            for j in (0..d).filter(|&j| j != i) {
                interference += inst.gain_sq(i, j, c) * p.get(j, c);
            }
            out.set(i, c, signal / interference);
        }
    }
    out
}

/// `log2(1 + SINR)` per (pair, channel), bits/s/Hz.
pub fn compute_rates(inst: &NetworkInstance, p: &PowerAllocation) -> Result<PairChannelMatrix> {
    let mut sinr = compute_sinr(inst, p)?;
    for v in &mut sinr.data {
        *v = v.ln_1p() / std::f64::consts::LN_2;
    }
    Ok(sinr)
}

/// Per-pair total rate across channels, bits/s/Hz.
pub fn user_rates(inst: &NetworkInstance, p: &PowerAllocation) -> Result<Vec<f64>> {
    let r = compute_rates(inst, p)?;
    Ok((0..inst.num_pairs).map(|i| r.row_sum(i)).collect())
}

/// `Σ_m Σ_i α_i R_i^m`, bits/s/Hz.
pub fn sum_weighted_rate(inst: &NetworkInstance, p: &PowerAllocation) -> Result<f64> {
    let r = compute_rates(inst, p)?;
    Ok((0..inst.num_pairs).map(|i| inst.weights[i] * r.row_sum(i)).sum())
}

/// Sum rate of the original binary formulation: interference and signal only
/// count where `c_i^m = 1`.
pub fn sum_weighted_rate_with_assignment(
    inst: &NetworkInstance,
    c: &ChannelAssignment,
    p: &PowerAllocation,
) -> Result<f64> {
    check_dims(inst, p)?;
    let mut gated = p.clone();
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            if !c.get(i, m) {
                gated.set(i, m, 0.0);
            }
        }
    }
    sum_weighted_rate(inst, &gated)
}

pub fn default_assignment_tol(p_max: f64) -> f64 {
    1e-12 * p_max
}

pub fn assignment_from_power(p: &PowerAllocation, tol: f64) -> ChannelAssignment {
    ChannelAssignment {
        num_pairs: p.num_pairs(),
        num_channels: p.num_channels(),
        active: p.as_slice().iter().map(|&v| v > tol).collect(),
    }
}

pub fn constraint_residuals(inst: &NetworkInstance, p: &PowerAllocation) -> Result<ConstraintResidual> {
    let rates = user_rates(inst, p)?;
    let power_slack = (0..inst.num_pairs).map(|i| inst.p_max - p.user_total(i)).collect();
    let rate_slack_bits: Vec<f64> = rates.iter().zip(&inst.r_min_bits).map(|(r, rmin)| r - rmin).collect();
    let worst_violation_bits = rate_slack_bits.iter().fold(0.0_f64, |acc, &s| acc.max(-s));
    Ok(ConstraintResidual {
        power_slack,
        rate_slack_bits,
        worst_violation_bits,
    })
}

/// Checks the constraints of the binary formulation for an assignment/power
/// pair: `c ∈ {0,1}`, `p ≥ 0`, `Σ c p ≤ P_max`, and QoS computed with `c`.
pub fn satisfies_binary_formulation(
    inst: &NetworkInstance,
    c: &ChannelAssignment,
    p: &PowerAllocation,
) -> Result<bool> {
    check_dims(inst, p)?;
    let mut gated = p.clone();
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            if !c.get(i, m) {
                gated.set(i, m, 0.0);
            }
        }
    }
    let budget_ok = (0..inst.num_pairs).all(|i| gated.user_total(i) <= inst.p_max * (1.0 + POWER_EPS));
    let rates = user_rates(inst, &gated)?;
    let qos_ok = rates
        .iter()
        .zip(&inst.r_min_bits)
        .all(|(r, rmin)| *r >= rmin - RATE_EPS);
    Ok(budget_ok && qos_ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(gain_sq: f64) -> NetworkInstance {
        NetworkInstance::from_gains(1, 1, vec![gain_sq.sqrt()]).unwrap()
    }

    #[test]
    fn sinr_single_pair() {
        let inst = single(4.0);
        let p = PowerAllocation::from_vec(1, 1, vec![0.25]).unwrap();
        let s = compute_sinr(&inst, &p).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        let r = compute_rates(&inst, &p).unwrap();
        assert!((r.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_power_zero_sinr() {
        let inst = single(4.0);
        let p = PowerAllocation::zeros(1, 1);
        assert_eq!(compute_sinr(&inst, &p).unwrap().get(0, 0), 0.0);
        assert_eq!(compute_rates(&inst, &p).unwrap().get(0, 0), 0.0);
        assert_eq!(sum_weighted_rate(&inst, &p).unwrap(), 0.0);
    }

    #[test]
    fn sinr_two_pairs_half() {
        // |h11|^2 p1 = 1, |h12|^2 p2 = 1
        let inst = NetworkInstance::from_gains(2, 1, vec![1.0, 1.0, 0.3, 1.0]).unwrap();
        let p = PowerAllocation::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let s = compute_sinr(&inst, &p).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rate_of_sinr_three_is_two_bits() {
        let inst = single(3.0);
        let p = PowerAllocation::from_vec(1, 1, vec![1.0]).unwrap();
        let r = compute_rates(&inst, &p).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sums() {
        // rates 1 and 2 bits on two channels: SINR 1 and 3
        let inst = NetworkInstance::from_gains(1, 2, vec![1.0, 3f64.sqrt()]).unwrap();
        let p = PowerAllocation::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert!((sum_weighted_rate(&inst, &p).unwrap() - 3.0).abs() < 1e-12);

        // α = 2, single rate 1.5 bits: SINR = 2^1.5 - 1
        let mut inst = single(2f64.powf(1.5) - 1.0);
        inst.weights = vec![2.0];
        let p = PowerAllocation::from_vec(1, 1, vec![1.0]).unwrap();
        assert!((sum_weighted_rate(&inst, &p).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_threshold() {
        let p = PowerAllocation::from_vec(1, 3, vec![0.0, 0.3, 1e-15]).unwrap();
        let c = assignment_from_power(&p, 1e-12);
        assert_eq!(c.active, vec![false, true, false]);
    }

    #[test]
    fn residuals() {
        let mut inst = single(3.0);
        inst.r_min_bits = vec![1.5];
        let p = PowerAllocation::from_vec(1, 1, vec![1.0]).unwrap();
        let res = constraint_residuals(&inst, &p).unwrap();
        assert_eq!(res.power_slack[0], 0.0);
        assert!((res.rate_slack_bits[0] - 0.5).abs() < 1e-12);
        assert_eq!(res.worst_violation_bits, 0.0);
        assert!(res.is_feasible(inst.p_max));

        inst.r_min_bits = vec![2.5];
        let res = constraint_residuals(&inst, &p).unwrap();
        assert!((res.worst_violation_bits - 0.5).abs() < 1e-12);
        assert_eq!(res.qos_violations(), 1);
    }

    #[test]
    fn errors_are_structured() {
        let inst = single(1.0);
        let p = PowerAllocation::zeros(2, 1);
        assert!(matches!(compute_sinr(&inst, &p), Err(Error::Dimension(_))));
        let p = PowerAllocation::from_vec(1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(compute_sinr(&inst, &p), Err(Error::NonFinite(_))));
        let p = PowerAllocation::from_vec(1, 1, vec![f64::INFINITY]).unwrap();
        assert!(matches!(compute_rates(&inst, &p), Err(Error::NonFinite(_))));
        assert!(NetworkInstance::from_gains(1, 1, vec![f64::NAN]).is_err());
        assert!(NetworkInstance::from_gains(2, 1, vec![1.0]).is_err());
    }
}
