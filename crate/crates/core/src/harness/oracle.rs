//! Exhaustive grid search over the per-user power simplex, used as an
//! independent check on the iterative solvers for tiny instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkInstance, PowerAllocation, RATE_EPS};

/// Largest `D * M` the oracle accepts.
pub const MAX_ORACLE_CELLS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub allocation: PowerAllocation,
    pub sum_rate_bits: f64,
    /// True when some grid point meets every QoS constraint.
    pub feasible: bool,
    pub worst_violation_bits: f64,
    pub points_evaluated: u64,
}

/// All `(k_1..k_M)` with `Σ k ≤ levels`.
fn compositions(levels: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 0 {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(levels, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Searches `p_i^m = k_i^m / levels * P_max` over every user's simplex
/// `Σ_m k_i^m ≤ levels`. Among QoS-feasible points the highest weighted sum
/// rate wins; when none is feasible the point with the smallest worst-case
/// violation is returned and `feasible` is false.
pub fn brute_force_oracle(inst: &NetworkInstance, grid_levels: usize) -> Result<OracleResult> {
    inst.validate()?;
    let (d, m) = (inst.num_pairs, inst.num_channels);
    if d * m > MAX_ORACLE_CELLS {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to D*M <= {MAX_ORACLE_CELLS}, got {}",
            d * m
        )));
    }
    if grid_levels == 0 {
        return Err(Error::InvalidArgument("grid_levels must be positive".into()));
    }
    let simplex = compositions(grid_levels, m);
    let step = inst.p_max / grid_levels as f64;
    let gsq: Vec<f64> = inst.gains.iter().map(|g| g * g).collect();
    let gain_sq = |i: usize, j: usize, c: usize| gsq[(i * d + j) * m + c];

    let mut choice = vec![0usize; d];
    let mut power = vec![0.0; d * m];
    let mut best: Option<(bool, f64, f64, Vec<f64>)> = None;
    let mut evaluated = 0u64;
    loop {
        for i in 0..d {
            for c in 0..m {
                power[i * m + c] = simplex[choice[i]][c] as f64 * step;
            }
        }
        let mut total = 0.0;
        let mut worst = 0.0_f64;
        for i in 0..d {
            let mut user = 0.0;
            for c in 0..m {
                let mut den = inst.noise[i];
                for j in (0..d).filter(|&j| j != i) {
                    den += gain_sq(i, j, c) * power[j * m + c];
                }
                user += (gain_sq(i, i, c) * power[i * m + c] / den).ln_1p();
            }
            let user_bits = user / std::f64::consts::LN_2;
            total += inst.weights[i] * user_bits;
            worst = worst.max(inst.r_min_bits[i] - user_bits);
        }
        evaluated += 1;
        let feasible = worst <= RATE_EPS;
        let improves = match &best {
            None => true,
            Some((bf, brate, bviol, _)) => match (feasible, *bf) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => total > *brate,
                (false, false) => worst < *bviol || (worst == *bviol && total > *brate),
            },
        };
        if improves {
            best = Some((feasible, total, worst.max(0.0), power.clone()));
        }

        // odometer over users
        let mut k = 0;
        loop {
            if k == d {
                let (feasible, rate, viol, p) = best.expect("grid is nonempty");
                return Ok(OracleResult {
                    allocation: PowerAllocation::from_vec(d, m, p)?,
                    sum_rate_bits: rate,
                    feasible,
                    worst_violation_bits: viol,
                    points_evaluated: evaluated,
                });
            }
            choice[k] += 1;
            if choice[k] < simplex.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_count() {
        // C(L + M, M) points on the simplex
        assert_eq!(compositions(20, 2).len(), 231);
        assert_eq!(compositions(3, 1).len(), 4);
    }

    #[test]
    fn single_link_full_power() {
        let inst = NetworkInstance::from_gains(1, 1, vec![0.7]).unwrap();
        let res = brute_force_oracle(&inst, 20).unwrap();
        assert_eq!(res.allocation.get(0, 0), inst.p_max);
        assert!(res.feasible);
    }

    #[test]
    fn dead_channel_gets_nothing() {
        let inst = NetworkInstance::from_gains(1, 2, vec![0.0, 0.8]).unwrap();
        let res = brute_force_oracle(&inst, 20).unwrap();
        assert_eq!(res.allocation.get(0, 0), 0.0);
        assert_eq!(res.allocation.get(0, 1), inst.p_max);
    }

    #[test]
    fn infeasible_flagged() {
        let mut inst = NetworkInstance::from_gains(1, 1, vec![1.0]).unwrap();
        inst.r_min_bits = vec![5.0];
        let res = brute_force_oracle(&inst, 10).unwrap();
        assert!(!res.feasible);
        assert!((res.worst_violation_bits - 4.0).abs() < 1e-12);
    }

    #[test]
    fn size_guard() {
        let inst = NetworkInstance::from_gains(3, 3, vec![1.0; 27]).unwrap();
        assert!(brute_force_oracle(&inst, 4).is_err());
    }
}
