//! Batching + min-cost-flow policy with its three mitigations:
//! capacity reservation (H1), scarcity-priced unit arcs (H2), and
//! concentration-triggered early freezes (H3).

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::engine::Request;
use crate::error::{OfaError, Result};
use crate::grid::{total_remaining, CapacityLedger, GridInstance, GridPoint};
use crate::mcf::{solve_min_cost_flow, FlowCost, FlowNetwork, SinkArcs};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    /// `B >= 1`.
    pub batch_size: usize,
    /// `tau`, in time steps.
    pub delay_budget: u64,
    /// H1: capacity units withheld at every facility.
    pub reservation: u32,
    /// H2: weight of the scarcity penalty; zero disables it.
    pub scarcity_lambda: BigRational,
    /// H3: modal nearest-facility share that triggers a freeze; `>= 1`
    /// disables it.
    pub concentration_threshold: f64,
}

impl BatchConfig {
    pub fn baseline(batch_size: usize, delay_budget: u64) -> Self {
        Self {
            batch_size,
            delay_budget,
            reservation: 0,
            scarcity_lambda: BigRational::zero(),
            concentration_threshold: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(OfaError::ConfigInvalid("B must be at least 1".into()));
        }
        if self.scarcity_lambda.is_negative() {
            return Err(OfaError::ConfigInvalid(
                "lambda must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.concentration_threshold) {
            return Err(OfaError::ConfigInvalid(format!(
                "theta_c must lie in [0, 1], got {}",
                self.concentration_threshold
            )));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.reservation == 0
            && self.scarcity_lambda.is_zero()
            && self.concentration_threshold >= 1.0
    }

    pub fn label(&self) -> String {
        let mut s = format!("bmcf(B={},tau={}", self.batch_size, self.delay_budget);
        if self.reservation > 0 {
            s.push_str(&format!(",rho={}", self.reservation));
        }
        if !self.scarcity_lambda.is_zero() {
            s.push_str(&format!(",lambda={}", self.scarcity_lambda));
        }
        if self.concentration_threshold < 1.0 {
            s.push_str(&format!(",theta_c={}", self.concentration_threshold));
        }
        s.push(')');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trigger {
    Size,
    Deadline,
    Concentration,
    Flush,
}

impl Trigger {
    pub fn as_str(&self) -> &'static str {
        match self {
            Trigger::Size => "size",
            Trigger::Deadline => "deadline",
            Trigger::Concentration => "concentration",
            Trigger::Flush => "flush",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRecord {
    pub batch_id: usize,
    pub request_indices: Vec<usize>,
    pub freeze_time: u64,
    pub trigger: Trigger,
    /// True committed distance, never the penalized solver cost.
    pub batch_cost: u64,
    pub per_facility_counts: BTreeMap<usize, usize>,
    /// Reservation level in force after the relaxation ladder.
    pub reservation_used: u32,
}

impl BatchRecord {
    pub fn size(&self) -> usize {
        self.request_indices.len()
    }

    /// Largest share of the batch absorbed by one facility.
    pub fn max_facility_share(&self) -> f64 {
        let max = self
            .per_facility_counts
            .values()
            .copied()
            .max()
            .unwrap_or(0);
        if self.size() == 0 {
            0.0
        } else {
            max as f64 / self.size() as f64
        }
    }

    pub const CSV_HEADER: [&'static str; 6] = [
        "batch_id",
        "trigger",
        "size",
        "freeze_time",
        "batch_cost",
        "max_facility_share",
    ];

    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.batch_id.to_string(),
            self.trigger.as_str().to_string(),
            self.size().to_string(),
            self.freeze_time.to_string(),
            self.batch_cost.to_string(),
            format!("{:.6}", self.max_facility_share()),
        ]
    }
}

/// Freeze decision for the buffer at time `now`: size first, then deadline,
/// then H3 concentration.
pub fn should_freeze(
    buffer: &[Request],
    now: u64,
    config: &BatchConfig,
    instance: &GridInstance,
    _ledger: &CapacityLedger,
) -> Option<Trigger> {
    let oldest = buffer.first()?;
    if buffer.len() >= config.batch_size {
        return Some(Trigger::Size);
    }
    if now.saturating_sub(oldest.arrival_time) >= config.delay_budget {
        return Some(Trigger::Deadline);
    }
    if config.concentration_threshold < 1.0
        && buffer.len() >= 2
        && modal_nearest_share(buffer, instance) >= config.concentration_threshold
    {
        return Some(Trigger::Concentration);
    }
    None
}

/// Share of buffered requests whose nearest facility (ignoring capacity,
/// lowest id on ties) is the most common one.
fn modal_nearest_share(buffer: &[Request], instance: &GridInstance) -> f64 {
    if instance.num_facilities() == 0 {
        return 0.0;
    }
    let mut counts = vec![0usize; instance.num_facilities()];
    for r in buffer {
        let nearest = (0..instance.num_facilities())
            .min_by_key(|&f| instance.distance_to(r.location, f))
            .expect("at least one facility");
        counts[nearest] += 1;
    }
    let modal = counts.into_iter().max().unwrap_or(0);
    modal as f64 / buffer.len() as f64
}

/// Price of the `unit_index`-th unit into a facility with `remcap` remaining:
/// `distance + lambda / (remcap - unit_index + 1)`.
pub fn scarcity_cost(
    distance: u32,
    unit_index: u32,
    remcap: u32,
    lambda: &BigRational,
) -> BigRational {
    debug_assert!(1 <= unit_index && unit_index <= remcap);
    BigRational::from_distance(distance) + scarcity_penalty(unit_index, remcap, lambda)
}

fn scarcity_penalty(unit_index: u32, remcap: u32, lambda: &BigRational) -> BigRational {
    if lambda.is_zero() {
        return BigRational::zero();
    }
    let depth = remcap - unit_index + 1;
    lambda * BigRational::new(BigInt::one(), BigInt::from(depth))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOutcome {
    /// Facility per batch position.
    pub assignment: Vec<usize>,
    pub batch_cost: u64,
    pub per_facility_counts: BTreeMap<usize, usize>,
    pub reservation_used: u32,
}

/// Solves one frozen batch exactly and commits it to `ledger`.
///
/// With a reservation `rho`, each facility offers `remcap - rho` units. If
/// that cannot absorb the batch, `rho` steps down by one until it can; a
/// batch that does not fit even at `rho = 0` is rejected without touching
/// the ledger.
pub fn assign_batch(
    batch: &[GridPoint],
    ledger: &mut CapacityLedger,
    instance: &GridInstance,
    config: &BatchConfig,
) -> Result<BatchOutcome> {
    let remaining = total_remaining(ledger);
    if batch.len() as u64 > remaining {
        return Err(OfaError::InfeasibleBatch {
            batch: batch.len(),
            remaining,
        });
    }
    let mut rho = config.reservation;
    let usable = loop {
        let usable: Vec<u32> = ledger
            .as_slice()
            .iter()
            .map(|&r| r.saturating_sub(rho))
            .collect();
        if usable.iter().map(|&u| u64::from(u)).sum::<u64>() >= batch.len() as u64 {
            break usable;
        }
        rho -= 1;
    };

    let assignment = if config.scarcity_lambda.is_zero() {
        let sinks: Vec<SinkArcs<i64>> = usable.iter().map(|&u| SinkArcs::Single(u)).collect();
        let net = FlowNetwork::transportation(batch.len(), &sinks, |u, f| {
            i64::from(instance.distance_to(batch[u], f))
        });
        solve(&net, batch.len())?
    } else {
        let lambda = &config.scarcity_lambda;
        let sinks: Vec<SinkArcs<BigRational>> = usable
            .iter()
            .enumerate()
            .map(|(f, &u)| {
                // a batch never uses more units than it has requests
                let units = u.min(batch.len() as u32);
                let remcap = ledger.remaining(f);
                SinkArcs::Units(
                    (1..=units)
                        .map(|k| scarcity_penalty(k, remcap, lambda))
                        .collect(),
                )
            })
            .collect();
        let net = FlowNetwork::transportation(batch.len(), &sinks, |u, f| {
            BigRational::from_distance(instance.distance_to(batch[u], f))
        });
        solve(&net, batch.len())?
    };

    let mut batch_cost = 0u64;
    let mut per_facility_counts = BTreeMap::new();
    for (&point, &f) in batch.iter().zip(&assignment) {
        ledger.commit(f)?;
        batch_cost += u64::from(instance.distance_to(point, f));
        *per_facility_counts.entry(f).or_insert(0) += 1;
    }
    Ok(BatchOutcome {
        assignment,
        batch_cost,
        per_facility_counts,
        reservation_used: rho,
    })
}

fn solve<C: FlowCost>(net: &FlowNetwork<C>, n: usize) -> Result<Vec<usize>> {
    let sol = solve_min_cost_flow(net, n)?;
    Ok(sol
        .complete_assignment()
        .expect("a flow of value |batch| routes every request"))
}
