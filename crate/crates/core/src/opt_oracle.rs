//! Offline optimum: one transportation solve over the whole sequence, plus an
//! exhaustive enumerator kept as an independent check on the flow solver.

use std::fmt;

use crate::engine::RequestSequence;
use crate::error::{OfaError, Result};
use crate::grid::{CapacityLedger, GridInstance};
use crate::mcf::{build_distance_network, solve_min_cost_flow};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptResult {
    pub total_cost: u64,
    /// Facility id per request index.
    pub assignment: Vec<usize>,
}

fn check_feasible(instance: &GridInstance, sequence: &RequestSequence) -> Result<()> {
    for r in sequence.requests() {
        instance.check_point(r.location)?;
    }
    let capacity = instance.total_capacity();
    if sequence.len() as u64 > capacity {
        return Err(OfaError::InfeasibleSequence {
            request_index: capacity as usize,
            requests: sequence.len(),
            capacity,
        });
    }
    Ok(())
}

/// Minimum total distance over all capacity-respecting assignments.
/// Arrival times play no role.
pub fn offline_opt(instance: &GridInstance, sequence: &RequestSequence) -> Result<OptResult> {
    check_feasible(instance, sequence)?;
    let points: Vec<_> = sequence.points().collect();
    let net = build_distance_network(&points, &CapacityLedger::new(instance), instance);
    let sol = solve_min_cost_flow(&net, points.len())?;
    Ok(OptResult {
        total_cost: sol.total_cost as u64,
        assignment: sol
            .complete_assignment()
            .expect("full flow assigns every request"),
    })
}

pub const BRUTE_FORCE_MAX_REQUESTS: usize = 8;
pub const BRUTE_FORCE_MAX_FACILITIES: usize = 4;

/// Exhaustive search over every request-to-facility map. Among equal-cost
/// optima the lexicographically smallest assignment is returned.
pub fn brute_force_opt(instance: &GridInstance, sequence: &RequestSequence) -> Result<OptResult> {
    let n = sequence.len();
    let m = instance.num_facilities();
    if n > BRUTE_FORCE_MAX_REQUESTS || m > BRUTE_FORCE_MAX_FACILITIES {
        return Err(OfaError::TooLargeForEnumeration {
            requests: n,
            facilities: m,
        });
    }
    check_feasible(instance, sequence)?;
    let dist: Vec<Vec<u64>> = sequence
        .points()
        .map(|u| {
            (0..m)
                .map(|f| u64::from(instance.distance_to(u, f)))
                .collect()
        })
        .collect();
    let mut remaining: Vec<u32> = instance.facilities().iter().map(|f| f.capacity).collect();
    let mut current = Vec::with_capacity(n);
    let mut best: Option<OptResult> = None;
    enumerate(&dist, &mut remaining, &mut current, 0, &mut best);
    best.ok_or(OfaError::InfeasibleSequence {
        request_index: 0,
        requests: n,
        capacity: instance.total_capacity(),
    })
}

fn enumerate(
    dist: &[Vec<u64>],
    remaining: &mut [u32],
    current: &mut Vec<usize>,
    cost: u64,
    best: &mut Option<OptResult>,
) {
    let i = current.len();
    if i == dist.len() {
        // visited in lexicographic order, so only a strictly cheaper map wins
        if best.as_ref().is_none_or(|b| cost < b.total_cost) {
            *best = Some(OptResult {
                total_cost: cost,
                assignment: current.clone(),
            });
        }
        return;
    }
    for f in 0..remaining.len() {
        if remaining[f] == 0 {
            continue;
        }
        remaining[f] -= 1;
        current.push(f);
        enumerate(dist, remaining, current, cost + dist[i][f], best);
        current.pop();
        remaining[f] += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompetitiveRatio {
    Finite(f64),
    /// `opt = 0` while `alg > 0`.
    Unbounded,
}

impl CompetitiveRatio {
    pub fn finite(&self) -> Option<f64> {
        match self {
            CompetitiveRatio::Finite(r) => Some(*r),
            CompetitiveRatio::Unbounded => None,
        }
    }
}

impl fmt::Display for CompetitiveRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompetitiveRatio::Finite(r) => write!(f, "{r:.6}"),
            CompetitiveRatio::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// `alg / opt`, with `1` when both are zero and `Unbounded` when only
/// `opt` is.
pub fn competitive_ratio(alg_cost: u64, opt_cost: u64) -> CompetitiveRatio {
    match (alg_cost, opt_cost) {
        (0, 0) => CompetitiveRatio::Finite(1.0),
        (_, 0) => CompetitiveRatio::Unbounded,
        (a, o) => CompetitiveRatio::Finite(a as f64 / o as f64),
    }
}
