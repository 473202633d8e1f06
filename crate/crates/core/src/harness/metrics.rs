use std::time::Duration;

use crate::error::{Error, Result};
use crate::model::{constraint_residuals, sum_weighted_rate, NetworkInstance, PowerAllocation};

fn check_aligned(allocations: &[PowerAllocation], instances: &[NetworkInstance]) -> Result<()> {
    if allocations.len() != instances.len() {
        return Err(Error::Dimension(format!(
            "{} allocations for {} instances",
            allocations.len(),
            instances.len()
        )));
    }
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to evaluate".into()));
    }
    Ok(())
}

/// Fraction of (instance, user) pairs whose total rate misses `R_min` by
/// more than the rate slack. The denominator is `D × instances`.
pub fn metric_qos_violation(allocations: &[PowerAllocation], instances: &[NetworkInstance]) -> Result<f64> {
    check_aligned(allocations, instances)?;
    let (mut bad, mut total) = (0usize, 0usize);
    for (k, (p, inst)) in allocations.iter().zip(instances).enumerate() {
        let r = constraint_residuals(inst, p).map_err(|e| e.at_instance(k))?;
        bad += r.qos_violations();
        total += inst.num_pairs;
    }
    Ok(bad as f64 / total as f64)
}

/// Fraction of instances with at least one violated user.
pub fn metric_qos_violation_per_instance(
    allocations: &[PowerAllocation],
    instances: &[NetworkInstance],
) -> Result<f64> {
    check_aligned(allocations, instances)?;
    let mut bad = 0usize;
    for (k, (p, inst)) in allocations.iter().zip(instances).enumerate() {
        if constraint_residuals(inst, p)
            .map_err(|e| e.at_instance(k))?
            .qos_violations()
            > 0
        {
            bad += 1;
        }
    }
    Ok(bad as f64 / instances.len() as f64)
}

pub fn metric_avg_sum_rate(allocations: &[PowerAllocation], instances: &[NetworkInstance]) -> Result<f64> {
    check_aligned(allocations, instances)?;
    let mut total = 0.0;
    for (k, (p, inst)) in allocations.iter().zip(instances).enumerate() {
        total += sum_weighted_rate(inst, p).map_err(|e| e.at_instance(k))?;
    }
    Ok(total / instances.len() as f64)
}

/// Ratio of average sum rates.
pub fn metric_normalized(run: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "reference sum rate {reference} cannot normalize"
        )));
    }
    Ok(run / reference)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub median: Duration,
    pub p95: Duration,
}

/// Nearest-rank median and 95th percentile.
pub fn summarize_timings(samples: &[Duration]) -> Option<TimingSummary> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort();
    let rank = |q: f64| {
        let r = (q * v.len() as f64).ceil() as usize;
        v[r.clamp(1, v.len()) - 1]
    };
    Some(TimingSummary {
        median: rank(0.5),
        p95: rank(0.95),
    })
}
