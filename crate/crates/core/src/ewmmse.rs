//! Enhanced WMMSE: block-coordinate descent on the weighted-MSE reformulation
//! of the QoS-constrained sum-rate problem.
//!
//! Variables per (pair `i`, channel `m`): `v = sqrt(p)`, the receiver scalar `u`,
//! the MSE `e` and its weight `w`. Each pair carries a QoS dual `μ_i` updated by
//! projected subgradient ascent and a power dual `λ_i` found by bisection so
//! that the per-pair budget holds. All logs here are natural; minimum rates are
//! converted from bits once on entry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ConstraintResidual, NetworkInstance, PairChannelMatrix, PowerAllocation, RATE_EPS};

const MSE_FLOOR: f64 = 1e-300;
const MAX_DOUBLINGS: usize = 2000;

/// How the QoS duals enter the interference term of the `v` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DualCoupling {
    /// Only pair `i`'s own dual scales its terms; interference is priced by
    /// `α_j w_j` alone.
    #[default]
    OwnPair,
    /// Interference caused to pair `j` is priced by `(α_j + μ_j) w_j`, the exact
    /// block minimizer of the full Lagrangian.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EwmmseConfig {
    pub max_iters: usize,
    /// Initial QoS dual step, nats.
    pub mu_step: f64,
    /// Per-iteration geometric decay of the dual step.
    pub mu_step_decay: f64,
    pub bisect_tol: f64,
    pub bisect_max: usize,
    /// Early stop on relative objective change; 0 runs all iterations.
    pub convergence_tol: f64,
    /// Keep `μ = 0` (plain weighted sum-rate WMMSE).
    pub freeze_mu: bool,
    pub coupling: DualCoupling,
    /// Independent random starts; the best result is returned.
    pub restarts: usize,
}

impl Default for EwmmseConfig {
    fn default() -> Self {
        EwmmseConfig {
            max_iters: 100,
            mu_step: 0.05,
            mu_step_decay: 0.99,
            bisect_tol: 1e-8,
            bisect_max: 64,
            convergence_tol: 0.0,
            freeze_mu: false,
            coupling: DualCoupling::OwnPair,
            restarts: 1,
        }
    }
}

impl EwmmseConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0
            || self.bisect_max == 0
            || self.restarts == 0
            || !(self.mu_step > 0.0)
            || !(self.mu_step_decay > 0.0)
            || !(self.bisect_tol > 0.0)
            || !(self.convergence_tol >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid eWMMSE config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmmseState {
    pub v: PairChannelMatrix,
    pub u: PairChannelMatrix,
    pub w: PairChannelMatrix,
    pub e: PairChannelMatrix,
    pub mu: Vec<f64>,
    pub lam: Vec<f64>,
    pub iter: usize,
}

impl WmmseState {
    pub fn power(&self) -> PowerAllocation {
        let mut p = self.v.clone();
        for x in &mut p.data {
            *x *= *x;
        }
        PowerAllocation(p)
    }

    /// State at a given `v` with `u`, `e`, `w` at their optimal values and
    /// zero duals.
    pub fn from_amplitudes(inst: &NetworkInstance, v: PairChannelMatrix) -> Result<Self> {
        let (d, m) = (inst.num_pairs, inst.num_channels);
        if v.rows != d || v.cols != m {
            return Err(Error::Dimension("amplitude matrix does not match instance".into()));
        }
        let mut state = WmmseState {
            v,
            u: PairChannelMatrix::zeros(d, m),
            w: PairChannelMatrix::zeros(d, m),
            e: PairChannelMatrix::zeros(d, m),
            mu: vec![0.0; d],
            lam: vec![0.0; d],
            iter: 0,
        };
        update_u(inst, &mut state);
        update_we(inst, &mut state)?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub objective: f64,
    pub sum_rate_bits: f64,
    pub worst_violation_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmmseSolution {
    pub allocation: PowerAllocation,
    pub residual: ConstraintResidual,
    pub sum_rate_bits: f64,
    pub trace: Vec<TraceEntry>,
    pub state: WmmseState,
}

/// Random start: uniform amplitudes rescaled so each pair spends exactly
/// `P_max`, then optimal `u`, `e`, `w`; both duals zero.
pub fn initialize(inst: &NetworkInstance, rng: &mut impl Rng) -> Result<WmmseState> {
    let (d, m) = (inst.num_pairs, inst.num_channels);
    let mut v = PairChannelMatrix::zeros(d, m);
    for i in 0..d {
        let row: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        let norm_sq: f64 = row.iter().map(|x| x * x).sum();
        let scale = (inst.p_max / norm_sq).sqrt();
        for (c, x) in row.into_iter().enumerate() {
            v.set(i, c, x * scale);
        }
        // rounding can push the sum a hair above the budget
        let total: f64 = v.row(i).iter().map(|x| x * x).sum();
        if total > inst.p_max {
            let fix = (inst.p_max / total).sqrt();
            for c in 0..m {
                v.set(i, c, v.get(i, c) * fix);
            }
        }
    }
    WmmseState::from_amplitudes(inst, v)
}

/// `J_i^m`: received power plus noise at receiver `i` on channel `m`.
fn received_power(inst: &NetworkInstance, v: &PairChannelMatrix, i: usize, m: usize) -> f64 {
    let mut total = inst.noise[i];
    for j in 0..inst.num_pairs {
        let a = inst.gain(i, j, m) * v.get(j, m);
        total += a * a;
    }
    total
}

fn u_entry(inst: &NetworkInstance, v: &PairChannelMatrix, i: usize, m: usize) -> f64 {
    inst.gain(i, i, m) * v.get(i, m) / received_power(inst, v, i, m)
}

/// MSE at receiver `i` on channel `m` for an arbitrary receiver scalar.
pub fn mse(inst: &NetworkInstance, v: &PairChannelMatrix, u: f64, i: usize, m: usize) -> f64 {
    let own = u * inst.gain(i, i, m) * v.get(i, m) - 1.0;
    let mut e = own * own + u * u * inst.noise[i];
    for j in (0..inst.num_pairs).filter(|&j| j != i) {
        let a = u * inst.gain(i, j, m) * v.get(j, m);
        e += a * a;
    }
    e
}

/// MSE under the MMSE receiver, `1 - |h_ii v_i|² / J`.
pub fn mse_at_optimal_u(inst: &NetworkInstance, v: &PairChannelMatrix, i: usize, m: usize) -> f64 {
    let s = inst.gain(i, i, m) * v.get(i, m);
    1.0 - s * s / received_power(inst, v, i, m)
}

pub fn update_u(inst: &NetworkInstance, state: &mut WmmseState) {
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            let u = u_entry(inst, &state.v, i, m);
            state.u.set(i, m, u);
        }
    }
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn update_we_entry(inst: &NetworkInstance, state: &mut WmmseState, i: usize, m: usize) -> Result<()> {
    let e = mse(inst, &state.v, state.u.get(i, m), i, m);
    if !(e >= MSE_FLOOR) {
        return Err(Error::MseUnderflow { pair: i, channel: m });
    }
    state.e.set(i, m, e);
    state.w.set(i, m, 1.0 / e);
    Ok(())
}

pub fn update_we(inst: &NetworkInstance, state: &mut WmmseState) -> Result<()> {
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            update_we_entry(inst, state, i, m)?;
        }
    }
    Ok(())
}

/// Subgradient of the dual function for pair `i` in the MSE domain:
/// `Σ w e - Σ log w - M + R_min` (nats).
pub fn mu_bracket(state: &WmmseState, i: usize, r_min_nats: f64) -> f64 {
    let m = state.w.cols;
    let mut acc = r_min_nats - m as f64;
    for c in 0..m {
        let w = state.w.get(i, c);
        acc += w * state.e.get(i, c) - w.ln();
    }
    acc
}

pub fn update_mu_pair(state: &mut WmmseState, i: usize, r_min_nats: f64, rho: f64) {
    state.mu[i] = (state.mu[i] + rho * mu_bracket(state, i, r_min_nats)).max(0.0);
}

/// Projected ascent on every pair's QoS dual.
pub fn update_mu(inst: &NetworkInstance, state: &mut WmmseState, rho: f64) {
    let r_min = inst.r_min_nats();
    for (i, &r) in r_min.iter().enumerate() {
        update_mu_pair(state, i, r, rho);
    }
}

/// Stationary point of pair `i`'s Lagrangian in `v_i` for a given `λ_i`.
pub fn update_v_with_lambda(
    inst: &NetworkInstance,
    state: &WmmseState,
    i: usize,
    lam: f64,
    coupling: DualCoupling,
) -> Vec<f64> {
    let own = inst.weights[i] + state.mu[i];
    (0..inst.num_channels)
        .map(|m| {
            let h = inst.gain(i, i, m);
            let wu = state.w.get(i, m) * state.u.get(i, m);
            let num = own * wu * h;
            let uh = state.u.get(i, m) * h;
            let mut den = own * state.w.get(i, m) * uh * uh + lam;
            for j in (0..inst.num_pairs).filter(|&j| j != i) {
                let price = match coupling {
                    DualCoupling::OwnPair => inst.weights[j],
                    DualCoupling::AllPairs => inst.weights[j] + state.mu[j],
                };
                let a = state.u.get(j, m) * inst.gain(j, i, m);
                den += price * state.w.get(j, m) * a * a;
            }
            if den > 0.0 {
                (num / den).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn power_of(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Smallest `λ_i ≥ 0` for which pair `i` stays within budget.
pub fn solve_lambda(inst: &NetworkInstance, state: &WmmseState, i: usize, cfg: &EwmmseConfig) -> Result<f64> {
    let p_max = inst.p_max;
    let excess = |lam: f64| power_of(&update_v_with_lambda(inst, state, i, lam, cfg.coupling)) - p_max;
    if excess(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Bisection {
                pair: i,
                residual: excess(hi),
            });
        }
    }
    let tol = cfg.bisect_tol * p_max;
    // accept only roots on the feasible side: -tol <= excess <= 0
    let hi_excess = excess(hi);
    if hi_excess >= -tol {
        return Ok(hi);
    }
    let mut best_residual = hi_excess;
    for _ in 0..cfg.bisect_max {
        let mid = 0.5 * (lo + hi);
        let r = excess(mid);
        if (-tol..=0.0).contains(&r) {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best_residual = r;
    }
    Err(Error::Bisection {
        pair: i,
        residual: best_residual,
    })
}

/// One outer sweep: for each pair, dual ascent on `μ_i`, bisection for `λ_i`,
/// the new `v_i`, then `u`, `e`, `w` refreshed on every receiver the change
/// reaches.
pub fn step(inst: &NetworkInstance, state: &mut WmmseState, cfg: &EwmmseConfig) -> Result<()> {
    let rho = cfg.mu_step * cfg.mu_step_decay.powi(state.iter as i32);
    let r_min = inst.r_min_nats();
    for (i, &r_min_i) in r_min.iter().enumerate() {
        if !cfg.freeze_mu {
            update_mu_pair(state, i, r_min_i, rho);
        }
        let lam = solve_lambda(inst, state, i, cfg)?;
        state.lam[i] = lam;
        let v_i = update_v_with_lambda(inst, state, i, lam, cfg.coupling);
        for (m, v) in v_i.into_iter().enumerate() {
            state.v.set(i, m, v);
        }
        for m in 0..inst.num_channels {
            for k in 0..inst.num_pairs {
                state.u.set(k, m, u_entry(inst, &state.v, k, m));
                update_we_entry(inst, state, k, m)?;
            }
        }
    }
    state.iter += 1;
    Ok(())
}

/// `Σ_i Σ_m α_i (w e - log w)` in nats, with `e` evaluated at the state's
/// current `u` and `v`.
pub fn wmmse_objective(inst: &NetworkInstance, state: &WmmseState) -> f64 {
    let mut total = 0.0;
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            let w = state.w.get(i, m);
            let e = mse(inst, &state.v, state.u.get(i, m), i, m);
            total += inst.weights[i] * (w * e - w.ln());
        }
    }
    total
}

/// Largest gap between the MSE-domain rate `log w - w e + 1` and
/// `ln(1 + SINR)` over all (pair, channel). Zero when `u` and `w` are optimal.
pub fn verify_theorem1(inst: &NetworkInstance, state: &WmmseState) -> f64 {
    let sinr = model::sinr_unchecked(inst, &state.power());
    let mut worst = 0.0_f64;
    for i in 0..inst.num_pairs {
        for m in 0..inst.num_channels {
            let w = state.w.get(i, m);
            let e = mse(inst, &state.v, state.u.get(i, m), i, m);
            let lhs = w.ln() - w * e + 1.0;
            worst = worst.max((lhs - sinr.get(i, m).ln_1p()).abs());
        }
    }
    worst
}

/// QoS-feasible iterates beat infeasible ones; among feasible, higher sum
/// rate wins; among infeasible, lower worst violation wins.
fn better(candidate: (f64, f64), incumbent: (f64, f64)) -> bool {
    let (rate_c, viol_c) = candidate;
    let (rate_i, viol_i) = incumbent;
    match (viol_c <= RATE_EPS, viol_i <= RATE_EPS) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => rate_c > rate_i,
        (false, false) => viol_c < viol_i || (viol_c == viol_i && rate_c > rate_i),
    }
}

fn run_once(inst: &NetworkInstance, cfg: &EwmmseConfig, rng: &mut impl Rng) -> Result<EwmmseSolution> {
    let mut state = initialize(inst, rng)?;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(f64, f64, WmmseState)> = None;
    let mut prev_obj = wmmse_objective(inst, &state);
    for _ in 0..cfg.max_iters {
        step(inst, &mut state, cfg)?;
        let p = state.power();
        let rate = model::sum_weighted_rate(inst, &p)?;
        let res = model::constraint_residuals(inst, &p)?;
        let obj = wmmse_objective(inst, &state);
        trace.push(TraceEntry {
            iter: state.iter,
            objective: obj,
            sum_rate_bits: rate,
            worst_violation_bits: res.worst_violation_bits,
        });
        let key = (rate, res.worst_violation_bits);
        if best.as_ref().is_none_or(|(r, v, _)| better(key, (*r, *v))) {
            best = Some((rate, res.worst_violation_bits, state.clone()));
        }
        if cfg.convergence_tol > 0.0 && (obj - prev_obj).abs() <= cfg.convergence_tol * prev_obj.abs().max(1.0) {
            break;
        }
        prev_obj = obj;
    }
    let (sum_rate_bits, _, state) = best.expect("at least one iteration");
    let allocation = state.power();
    let residual = model::constraint_residuals(inst, &allocation)?;
    Ok(EwmmseSolution {
        allocation,
        residual,
        sum_rate_bits,
        trace,
        state,
    })
}

/// Runs the solver from `cfg.restarts` random starts and returns the best
/// iterate seen (feasible and highest rate, or least QoS violation when no
/// iterate is feasible). The trace is that of the winning start.
pub fn solve(inst: &NetworkInstance, cfg: &EwmmseConfig, rng: &mut impl Rng) -> Result<EwmmseSolution> {
    inst.validate()?;
    cfg.validate()?;
    let mut best = run_once(inst, cfg, rng)?;
    for _ in 1..cfg.restarts {
        let cand = run_once(inst, cfg, rng)?;
        if better(
            (cand.sum_rate_bits, cand.residual.worst_violation_bits),
            (best.sum_rate_bits, best.residual.worst_violation_bits),
        ) {
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_indexed, rng_from_seed, TopologyConfig};

    /// D = 1, |h| = 2, σ² = 1, with v = 0.5 so that |h| v = 1.
    fn single_link() -> (NetworkInstance, WmmseState) {
        let inst = NetworkInstance::from_gains(1, 1, vec![2.0]).unwrap();
        let v = PairChannelMatrix::from_vec(1, 1, vec![0.5]).unwrap();
        let state = WmmseState::from_amplitudes(&inst, v).unwrap();
        (inst, state)
    }

    #[test]
    fn u_single_link() {
        let (_, state) = single_link();
        assert!((state.u.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn u_zero_for_silent_link() {
        let inst = NetworkInstance::from_gains(1, 1, vec![2.0]).unwrap();
        let state = WmmseState::from_amplitudes(&inst, PairChannelMatrix::zeros(1, 1)).unwrap();
        assert_eq!(state.u.get(0, 0), 0.0);
        assert_eq!(state.e.get(0, 0), 1.0);
        assert_eq!(state.w.get(0, 0), 1.0);
    }

    #[test]
    fn u_scaling_law() {
        // h, v scaled by t and σ² by t⁴: numerator grows t², denominator t⁴.
        let cfg = TopologyConfig::with_size(3, 2);
        let inst = draw_indexed(&cfg, 4).unwrap();
        let state = initialize(&inst, &mut rng_from_seed(2)).unwrap();
        let t = 1.7_f64;
        let mut scaled = inst.clone();
        scaled.gains.iter_mut().for_each(|g| *g *= t);
        scaled.noise.iter_mut().for_each(|s| *s *= t.powi(4));
        let mut v = state.v.clone();
        v.data.iter_mut().for_each(|x| *x *= t);
        scaled.p_max *= t * t;
        let s2 = WmmseState::from_amplitudes(&scaled, v).unwrap();
        for k in 0..state.u.data.len() {
            let expect = state.u.data[k] / (t * t);
            assert!((s2.u.data[k] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        }

        // h scaled by t, σ² by t², v fixed: u scales by 1/t.
        let mut scaled = inst.clone();
        scaled.gains.iter_mut().for_each(|g| *g *= t);
        scaled.noise.iter_mut().for_each(|s| *s *= t * t);
        let s3 = WmmseState::from_amplitudes(&scaled, state.v.clone()).unwrap();
        for k in 0..state.u.data.len() {
            let expect = state.u.data[k] / t;
            assert!((s3.u.data[k] - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
        }
    }

    #[test]
    fn we_single_link() {
        let (inst, state) = single_link();
        assert!((state.e.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((state.w.get(0, 0) - 2.0).abs() < 1e-15);
        let closed = mse_at_optimal_u(&inst, &state.v, 0, 0);
        assert!((closed - state.e.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn mu_updates() {
        let (inst, mut state) = single_link();
        // w = 1/e, so the bracket reduces to R_min - Σ log w.
        let r = 0.3;
        let b = mu_bracket(&state, 0, r);
        assert!((b - (r - state.w.get(0, 0).ln())).abs() < 1e-15);

        // large slack keeps μ clamped at 0
        update_mu_pair(&mut state, 0, 0.0, 0.1);
        assert_eq!(state.mu[0], 0.0);

        // μ = 0.5, ρ = 0.1, bracket = -2 → 0.3
        state.mu[0] = 0.5;
        let target = -2.0;
        let r_min = target + state.w.get(0, 0).ln();
        update_mu_pair(&mut state, 0, r_min, 0.1);
        assert!((state.mu[0] - 0.3).abs() < 1e-12);
        update_mu(&inst, &mut state, 0.0);
        assert!((state.mu[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn v_single_link() {
        let (inst, state) = single_link();
        let v = update_v_with_lambda(&inst, &state, 0, 0.0, DualCoupling::OwnPair);
        assert!((v[0] - 1.0).abs() < 1e-15);
        let v = update_v_with_lambda(&inst, &state, 0, 1e12, DualCoupling::OwnPair);
        assert!(v[0] < 1e-11);
    }

    #[test]
    fn v_decreasing_in_lambda() {
        let cfg = TopologyConfig::with_size(4, 3);
        let inst = draw_indexed(&cfg, 9).unwrap();
        let mut state = initialize(&inst, &mut rng_from_seed(5)).unwrap();
        state.mu = vec![0.3, 0.0, 1.2, 0.1];
        for i in 0..4 {
            let mut prev = update_v_with_lambda(&inst, &state, i, 0.0, DualCoupling::OwnPair);
            for k in 1..200 {
                let lam = 0.05 * k as f64;
                let cur = update_v_with_lambda(&inst, &state, i, lam, DualCoupling::OwnPair);
                for (a, b) in cur.iter().zip(&prev) {
                    assert!(a < b || *b == 0.0);
                }
                prev = cur;
            }
        }
    }

    #[test]
    fn lambda_zero_when_budget_slack() {
        let (inst, state) = single_link();
        let cfg = EwmmseConfig::default();
        // unconstrained v = 1 → power 1 ≤ P_max = 1
        assert_eq!(solve_lambda(&inst, &state, 0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn lambda_closed_form_single_link() {
        // With P_max = 0.25 the unconstrained v = 1 must shrink to v = 0.5:
        // 1 / (1 + λ) · ... with w u h = 2, w u² h² = 2 → v = 2 / (2 + λ) = 0.5 ⇒ λ = 2.
        let (mut inst, state) = single_link();
        inst.p_max = 0.25;
        let cfg = EwmmseConfig::default();
        let lam = solve_lambda(&inst, &state, 0, &cfg).unwrap();
        assert!((lam - 2.0).abs() < 1e-6, "{lam}");
        let v = update_v_with_lambda(&inst, &state, 0, lam, cfg.coupling);
        assert!((v[0] * v[0] - 0.25).abs() <= cfg.bisect_tol * 0.25);
    }

    #[test]
    fn bisection_budget_exhaustion_is_reported() {
        let (mut inst, state) = single_link();
        inst.p_max = 0.2;
        let cfg = EwmmseConfig {
            bisect_max: 1,
            bisect_tol: 1e-15,
            ..Default::default()
        };
        assert!(matches!(
            solve_lambda(&inst, &state, 0, &cfg),
            Err(Error::Bisection { pair: 0, .. })
        ));
    }

    #[test]
    fn mse_rate_identity_single_link() {
        let (inst, state) = single_link();
        let lhs = state.w.get(0, 0).ln() - state.w.get(0, 0) * state.e.get(0, 0) + 1.0;
        assert!((lhs - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(verify_theorem1(&inst, &state) < 1e-15);
    }

    #[test]
    fn mse_rate_identity_silent() {
        let inst = NetworkInstance::from_gains(2, 2, vec![1.0; 8]).unwrap();
        let state = WmmseState::from_amplitudes(&inst, PairChannelMatrix::zeros(2, 2)).unwrap();
        assert_eq!(verify_theorem1(&inst, &state), 0.0);
    }

    #[test]
    fn objective_at_optimal_w() {
        let cfg = TopologyConfig::with_size(3, 2);
        let inst = draw_indexed(&cfg, 1).unwrap();
        let state = initialize(&inst, &mut rng_from_seed(8)).unwrap();
        let expect: f64 = state.e.data.iter().map(|e| 1.0 + e.ln()).sum();
        assert!((wmmse_objective(&inst, &state) - expect).abs() < 1e-12);
        // and equals Σ α M - Σ α R (nats)
        let p = state.power();
        let rate_nats = model::sum_weighted_rate(&inst, &p).unwrap() * std::f64::consts::LN_2;
        let expect = 3.0 * 2.0 - rate_nats;
        assert!((wmmse_objective(&inst, &state) - expect).abs() < 1e-9);
    }

    #[test]
    fn init_contract() {
        let cfg = TopologyConfig::with_size(5, 3);
        let inst = draw_indexed(&cfg, 0).unwrap();
        let a = initialize(&inst, &mut rng_from_seed(1)).unwrap();
        let b = initialize(&inst, &mut rng_from_seed(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.mu.iter().chain(&a.lam).all(|&x| x == 0.0));
        for i in 0..5 {
            assert!(a.v.row(i).iter().map(|x| x * x).sum::<f64>() <= inst.p_max);
        }
    }

    #[test]
    fn step_keeps_invariants_and_is_deterministic() {
        let cfg = TopologyConfig::with_size(4, 2);
        let inst = draw_indexed(&cfg, 2).unwrap();
        let sc = EwmmseConfig::default();
        let mut a = initialize(&inst, &mut rng_from_seed(3)).unwrap();
        let mut b = a.clone();
        for _ in 0..20 {
            step(&inst, &mut a, &sc).unwrap();
            step(&inst, &mut b, &sc).unwrap();
            assert_eq!(a, b);
            for i in 0..4 {
                let total: f64 = a.v.row(i).iter().map(|x| x * x).sum();
                assert!(total <= inst.p_max * (1.0 + 1e-9));
                assert!(a.mu[i] >= 0.0 && a.lam[i] >= 0.0);
                for m in 0..2 {
                    assert!(a.v.get(i, m) >= 0.0);
                    assert!((a.w.get(i, m) * a.e.get(i, m) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_link_goes_to_full_power() {
        let inst = NetworkInstance::from_gains(1, 1, vec![2.0]).unwrap();
        let sol = solve(&inst, &EwmmseConfig::default(), &mut rng_from_seed(0)).unwrap();
        assert!((sol.allocation.get(0, 0) - inst.p_max).abs() < 1e-6);
    }

    #[test]
    fn invalid_config_rejected() {
        let inst = NetworkInstance::from_gains(1, 1, vec![2.0]).unwrap();
        let cfg = EwmmseConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(solve(&inst, &cfg, &mut rng_from_seed(0)).is_err());
    }
}
