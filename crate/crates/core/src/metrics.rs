//! Failure-mode rates and run-level aggregation.
//!
//! All rates are fractions in `[0, 1]` and an empty denominator yields `0`.
//! They depend on facility identity only through equality and location, so
//! relabeling facility ids leaves them unchanged.

use serde::{Deserialize, Serialize};

use crate::bmcf::BatchRecord;
use crate::engine::{AssignmentEvent, AssignmentLog};
use crate::error::{OfaError, Result};
use crate::grid::{diameter, manhattan_distance, GridInstance};
use crate::opt_oracle::CompetitiveRatio;

pub const DEFAULT_PROXIMITY_WINDOW: u32 = 2;
pub const DEFAULT_NEAR_THRESHOLD: u32 = 2;
pub const DEFAULT_CONC_THRESHOLD: f64 = 0.25;

const SHARE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    /// `w`: two consecutive requests are "from a small region" when within
    /// this distance of each other.
    pub proximity_window: u32,
    /// `D_far`.
    pub far_threshold: u32,
    /// `D_near`.
    pub near_threshold: u32,
    /// `rho_conc`: a batch is overconcentrated when one facility takes at
    /// least `1 - rho_conc` of it.
    pub conc_threshold: f64,
}

impl MetricsConfig {
    /// Defaults for `instance`: `w = 2`, `D_near = 2`, `rho_conc = 0.25` and
    /// `D_far = diameter / 4`, raised to `D_near + 1` on small grids.
    pub fn defaults_for(instance: &GridInstance) -> Self {
        Self {
            proximity_window: DEFAULT_PROXIMITY_WINDOW,
            far_threshold: (diameter(instance) / 4).max(DEFAULT_NEAR_THRESHOLD + 1),
            near_threshold: DEFAULT_NEAR_THRESHOLD,
            conc_threshold: DEFAULT_CONC_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.far_threshold == 0 {
            return Err(OfaError::ConfigInvalid(
                "far_threshold must be positive".into(),
            ));
        }
        if self.near_threshold >= self.far_threshold {
            return Err(OfaError::ConfigInvalid(format!(
                "near_threshold {} must be below far_threshold {}",
                self.near_threshold, self.far_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.conc_threshold) {
            return Err(OfaError::ConfigInvalid(format!(
                "conc_threshold must lie in [0, 1], got {}",
                self.conc_threshold
            )));
        }
        Ok(())
    }
}

/// Partial metrics settings as written in a config; unset keys take
/// [`MetricsConfig::defaults_for`] values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOverrides {
    pub proximity_window: Option<u32>,
    pub far_threshold: Option<u32>,
    pub near_threshold: Option<u32>,
    pub conc_threshold: Option<f64>,
}

impl MetricsOverrides {
    pub fn resolve(&self, instance: &GridInstance) -> Result<MetricsConfig> {
        let d = MetricsConfig::defaults_for(instance);
        let cfg = MetricsConfig {
            proximity_window: self.proximity_window.unwrap_or(d.proximity_window),
            far_threshold: self.far_threshold.unwrap_or(d.far_threshold),
            near_threshold: self.near_threshold.unwrap_or(d.near_threshold),
            conc_threshold: self.conc_threshold.unwrap_or(d.conc_threshold),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn by_request(log: &AssignmentLog) -> Vec<AssignmentEvent> {
    let mut events = log.events().to_vec();
    events.sort_by_key(|e| e.request_index);
    events
}

/// Among consecutive request pairs within `w` of each other, the fraction
/// sent to two different facilities at least `D_far` apart. Logs with fewer
/// than two events give `0`.
pub fn boundary_oscillation_rate(
    log: &AssignmentLog,
    instance: &GridInstance,
    config: &MetricsConfig,
) -> f64 {
    let events = by_request(log);
    let mut close_pairs = 0usize;
    let mut oscillations = 0usize;
    for w in events.windows(2) {
        if manhattan_distance(w[0].location, w[1].location) > config.proximity_window {
            continue;
        }
        close_pairs += 1;
        let (fa, fb) = (w[0].facility_id, w[1].facility_id);
        if fa != fb
            && manhattan_distance(
                instance.facility(fa).location,
                instance.facility(fb).location,
            ) >= config.far_threshold
        {
            oscillations += 1;
        }
    }
    fraction(oscillations, close_pairs)
}

/// Fraction of events that travel at least `D_far` while a facility within
/// `D_near` of the request was already saturated. Saturation is judged on
/// commits made strictly before the event's commit time.
pub fn zone_collapse_rate(
    log: &AssignmentLog,
    instance: &GridInstance,
    config: &MetricsConfig,
) -> f64 {
    let events = log.events();
    if events.is_empty() {
        return 0.0;
    }
    let mut used = vec![0u32; instance.num_facilities()];
    let mut hits = 0usize;
    let mut start = 0;
    while start < events.len() {
        let t = events[start].commit_time;
        let end = start
            + events[start..]
                .iter()
                .take_while(|e| e.commit_time == t)
                .count();
        for e in &events[start..end] {
            if e.distance_cost < config.far_threshold {
                continue;
            }
            let saturated_nearby = instance.facilities().iter().any(|f| {
                f.capacity > 0
                    && used[f.id] >= f.capacity
                    && manhattan_distance(e.location, f.location) <= config.near_threshold
            });
            if saturated_nearby {
                hits += 1;
            }
        }
        for e in &events[start..end] {
            used[e.facility_id] += 1;
        }
        start = end;
    }
    fraction(hits, events.len())
}

/// Among batches of at least two requests, the fraction in which one
/// facility absorbs at least `1 - rho_conc` of the batch.
pub fn batch_overconcentration_rate(batches: &[BatchRecord], config: &MetricsConfig) -> f64 {
    let eligible: Vec<&BatchRecord> = batches.iter().filter(|b| b.size() >= 2).collect();
    let hits = eligible
        .iter()
        .filter(|b| b.max_facility_share() >= 1.0 - config.conc_threshold - SHARE_EPS)
        .count();
    fraction(hits, eligible.len())
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub workload: String,
    pub policy: String,
    pub trial: usize,
    pub seed: u64,
    pub alg_cost: u64,
    pub opt_cost: u64,
    pub ratio: CompetitiveRatio,
    pub boundary_oscillation_rate: f64,
    pub zone_collapse_rate: f64,
    /// Present only for batch policies.
    pub batch_overconcentration_rate: Option<f64>,
    pub trial_count: usize,
}

impl RunReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "workload", "policy", "seed", "alg_cost", "opt_cost", "ratio", "bo_rate", "zc_rate",
        "oc_rate", "trials",
    ];

    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.workload.clone(),
            self.policy.clone(),
            self.seed.to_string(),
            self.alg_cost.to_string(),
            self.opt_cost.to_string(),
            self.ratio.to_string(),
            format!("{:.6}", self.boundary_oscillation_rate),
            format!("{:.6}", self.zone_collapse_rate),
            self.batch_overconcentration_rate
                .map(|r| format!("{r:.6}"))
                .unwrap_or_default(),
            self.trial_count.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub max: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, max, stderr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub workload: String,
    pub policy: String,
    pub trials: usize,
    pub alg_cost: Stat,
    /// Nearest-rank 95th percentile of the per-trial cost.
    pub p95_alg_cost: f64,
    pub opt_cost: Stat,
    /// `Unbounded` if any trial was unbounded.
    pub mean_ratio: CompetitiveRatio,
    pub max_ratio: CompetitiveRatio,
    pub ratio_stderr: f64,
    pub boundary_oscillation_rate: Stat,
    pub zone_collapse_rate: Stat,
    pub batch_overconcentration_rate: Option<Stat>,
}

impl Summary {
    pub const CSV_HEADER: [&'static str; 20] = [
        "workload",
        "policy",
        "trials",
        "mean_alg_cost",
        "max_alg_cost",
        "se_alg_cost",
        "p95_alg_cost",
        "mean_opt_cost",
        "mean_ratio",
        "max_ratio",
        "se_ratio",
        "mean_bo_rate",
        "max_bo_rate",
        "se_bo_rate",
        "mean_zc_rate",
        "max_zc_rate",
        "se_zc_rate",
        "mean_oc_rate",
        "max_oc_rate",
        "se_oc_rate",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.6}");
        let mut out = vec![
            self.workload.clone(),
            self.policy.clone(),
            self.trials.to_string(),
            f(self.alg_cost.mean),
            f(self.alg_cost.max),
            f(self.alg_cost.stderr),
            f(self.p95_alg_cost),
            f(self.opt_cost.mean),
            self.mean_ratio.to_string(),
            self.max_ratio.to_string(),
            f(self.ratio_stderr),
        ];
        for s in [&self.boundary_oscillation_rate, &self.zone_collapse_rate] {
            out.extend([f(s.mean), f(s.max), f(s.stderr)]);
        }
        match &self.batch_overconcentration_rate {
            Some(s) => out.extend([f(s.mean), f(s.max), f(s.stderr)]),
            None => out.extend([String::new(), String::new(), String::new()]),
        }
        out
    }
}

/// Mean, max and standard error per metric over reports from one
/// `(workload, policy)` pair.
pub fn aggregate_trials(reports: &[RunReport]) -> Result<Summary> {
    let first = reports
        .first()
        .ok_or_else(|| OfaError::MixedConfigs("no reports to aggregate".into()))?;
    if let Some(other) = reports
        .iter()
        .find(|r| r.workload != first.workload || r.policy != first.policy)
    {
        return Err(OfaError::MixedConfigs(format!(
            "{}/{} vs {}/{}",
            first.workload, first.policy, other.workload, other.policy
        )));
    }
    let col = |f: &dyn Fn(&RunReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let costs = col(&|r| r.alg_cost as f64);

    let finite: Vec<f64> = reports.iter().filter_map(|r| r.ratio.finite()).collect();
    let (mean_ratio, max_ratio, ratio_stderr) = if finite.len() == reports.len() {
        let s = Stat::of(&finite);
        (
            CompetitiveRatio::Finite(s.mean),
            CompetitiveRatio::Finite(s.max),
            s.stderr,
        )
    } else {
        (
            CompetitiveRatio::Unbounded,
            CompetitiveRatio::Unbounded,
            0.0,
        )
    };

    let oc: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.batch_overconcentration_rate)
        .collect();

    Ok(Summary {
        workload: first.workload.clone(),
        policy: first.policy.clone(),
        trials: reports.iter().map(|r| r.trial_count).sum(),
        alg_cost: Stat::of(&costs),
        p95_alg_cost: percentile_nearest_rank(&costs, 0.95),
        opt_cost: Stat::of(&col(&|r| r.opt_cost as f64)),
        mean_ratio,
        max_ratio,
        ratio_stderr,
        boundary_oscillation_rate: Stat::of(&col(&|r| r.boundary_oscillation_rate)),
        zone_collapse_rate: Stat::of(&col(&|r| r.zone_collapse_rate)),
        batch_overconcentration_rate: (!oc.is_empty()).then(|| Stat::of(&oc)),
    })
}

fn percentile_nearest_rank(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::gen_zone_collapse;
    use crate::algorithms::OnlinePolicy;
    use crate::bmcf::Trigger;
    use crate::engine::{run_online, RequestSequence, RngSeed};
    use crate::grid::GridPoint;
    use crate::opt_oracle::competitive_ratio;
    use std::collections::BTreeMap;

    fn p(x: u32, y: u32) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn cfg(w: u32, far: u32, near: u32, conc: f64) -> MetricsConfig {
        MetricsConfig {
            proximity_window: w,
            far_threshold: far,
            near_threshold: near,
            conc_threshold: conc,
        }
    }

    fn trap() -> GridInstance {
        GridInstance::new(1, 11, &[(p(1, 1), 1), (p(11, 1), 1)]).unwrap()
    }

    #[test]
    fn defaults_follow_diameter() {
        let g = GridInstance::new(21, 21, &[]).unwrap();
        let d = MetricsConfig::defaults_for(&g);
        assert_eq!(
            (d.proximity_window, d.far_threshold, d.near_threshold),
            (2, 10, 2)
        );
        assert_eq!(d.conc_threshold, 0.25);
        let small = GridInstance::new(3, 3, &[]).unwrap();
        assert_eq!(MetricsConfig::defaults_for(&small).far_threshold, 3);
        assert!(cfg(2, 2, 2, 0.25).validate().is_err());
        let over = MetricsOverrides {
            far_threshold: Some(4),
            ..Default::default()
        };
        assert_eq!(over.resolve(&g).unwrap().far_threshold, 4);
    }

    #[test]
    fn oscillation_trap_pair_counts_once() {
        let g = trap();
        let seq = RequestSequence::from_points([p(6, 1), p(1, 1)]);
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        assert_eq!(
            boundary_oscillation_rate(&log, &g, &cfg(5, 10, 2, 0.25)),
            1.0
        );
        // requests further apart than w are not a "small region" pair
        assert_eq!(
            boundary_oscillation_rate(&log, &g, &cfg(4, 10, 2, 0.25)),
            0.0
        );
    }

    #[test]
    fn single_facility_never_oscillates() {
        let g = GridInstance::new(5, 5, &[(p(3, 3), 5)]).unwrap();
        let seq = RequestSequence::from_points([p(1, 1), p(1, 2), p(2, 2), p(5, 5)]);
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        assert_eq!(
            boundary_oscillation_rate(&log, &g, &cfg(9, 1, 0, 0.25)),
            0.0
        );
        let one = run_online(
            &g,
            &RequestSequence::from_points([p(1, 1)]),
            &OnlinePolicy::Greedy,
            RngSeed(0),
        )
        .unwrap();
        assert_eq!(
            boundary_oscillation_rate(&one, &g, &cfg(9, 1, 0, 0.25)),
            0.0
        );
    }

    #[test]
    fn zone_collapse_rate_on_template() {
        let (c, m) = (2u32, 3u32);
        let (g, seq) = gen_zone_collapse(15, 15, c, m, 10, RngSeed(4)).unwrap();
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        let rate = zone_collapse_rate(&log, &g, &cfg(2, 8, 2, 0.25));
        assert_eq!(rate, f64::from(m) / f64::from(c + m));
        // nothing travels 13 or more
        assert_eq!(zone_collapse_rate(&log, &g, &cfg(2, 13, 2, 0.25)), 0.0);
        assert_eq!(
            zone_collapse_rate(&AssignmentLog::default(), &g, &cfg(2, 8, 2, 0.25)),
            0.0
        );
    }

    fn record(counts: &[(usize, usize)]) -> BatchRecord {
        let size: usize = counts.iter().map(|c| c.1).sum();
        BatchRecord {
            batch_id: 0,
            request_indices: (0..size).collect(),
            freeze_time: 0,
            trigger: Trigger::Size,
            batch_cost: 0,
            per_facility_counts: counts.iter().copied().collect::<BTreeMap<_, _>>(),
            reservation_used: 0,
        }
    }

    #[test]
    fn overconcentration_examples() {
        let all_one = record(&[(1, 2)]);
        assert_eq!(
            batch_overconcentration_rate(std::slice::from_ref(&all_one), &cfg(2, 3, 2, 0.1)),
            1.0
        );
        let split = record(&[(0, 3), (1, 1)]);
        // share 0.75: counts at rho = 0.25, not at rho = 0
        assert_eq!(
            batch_overconcentration_rate(std::slice::from_ref(&split), &cfg(2, 3, 2, 0.25)),
            1.0
        );
        assert_eq!(
            batch_overconcentration_rate(std::slice::from_ref(&split), &cfg(2, 3, 2, 0.0)),
            0.0
        );
        assert_eq!(
            batch_overconcentration_rate(&[all_one, split], &cfg(2, 3, 2, 0.0)),
            0.5
        );
        let singles = vec![record(&[(0, 1)]), record(&[(1, 1)])];
        assert_eq!(
            batch_overconcentration_rate(&singles, &cfg(2, 3, 2, 0.25)),
            0.0
        );
    }

    fn report(policy: &str, alg: u64, opt: u64, bo: f64) -> RunReport {
        RunReport {
            workload: "w".into(),
            policy: policy.into(),
            trial: 0,
            seed: 1,
            alg_cost: alg,
            opt_cost: opt,
            ratio: competitive_ratio(alg, opt),
            boundary_oscillation_rate: bo,
            zone_collapse_rate: 0.0,
            batch_overconcentration_rate: None,
            trial_count: 1,
        }
    }

    #[test]
    fn aggregate_single_and_mixed() {
        let s = aggregate_trials(&[report("a", 10, 5, 0.5)]).unwrap();
        assert_eq!(
            s.alg_cost,
            Stat {
                mean: 10.0,
                max: 10.0,
                stderr: 0.0
            }
        );
        assert_eq!(s.mean_ratio, CompetitiveRatio::Finite(2.0));
        assert_eq!(s.max_ratio, CompetitiveRatio::Finite(2.0));
        assert_eq!(s.p95_alg_cost, 10.0);
        assert!(s.batch_overconcentration_rate.is_none());
        assert_eq!(
            aggregate_trials(&[report("a", 1, 1, 0.0), report("b", 1, 1, 0.0)])
                .unwrap_err()
                .kind(),
            "MixedConfigs"
        );
        assert!(aggregate_trials(&[]).is_err());
    }

    #[test]
    fn aggregate_statistics() {
        let reports = vec![report("a", 5, 5, 0.0), report("a", 15, 5, 1.0)];
        let s = aggregate_trials(&reports).unwrap();
        assert_eq!(s.alg_cost.mean, 10.0);
        assert_eq!(s.alg_cost.max, 15.0);
        // sample sd = sqrt(50), stderr = sqrt(50 / 2) = 5
        assert!((s.alg_cost.stderr - 5.0).abs() < 1e-12);
        assert_eq!(s.mean_ratio, CompetitiveRatio::Finite(2.0));
        assert_eq!(s.max_ratio, CompetitiveRatio::Finite(3.0));
        assert_eq!(s.p95_alg_cost, 15.0);
        assert_eq!(s.trials, 2);

        let with_unbounded = vec![report("a", 5, 5, 0.0), report("a", 3, 0, 0.0)];
        let s = aggregate_trials(&with_unbounded).unwrap();
        assert_eq!(s.max_ratio, CompetitiveRatio::Unbounded);
        assert_eq!(s.mean_ratio, CompetitiveRatio::Unbounded);
    }

    #[test]
    fn identical_trials_have_zero_stderr() {
        let reports = vec![report("g", 7, 3, 0.0); 50];
        let s = aggregate_trials(&reports).unwrap();
        assert_eq!(s.alg_cost.stderr, 0.0);
    }

    #[test]
    fn relabeling_facilities_preserves_rates() {
        let a = GridInstance::new(9, 9, &[(p(1, 1), 2), (p(9, 9), 2), (p(1, 9), 2)]).unwrap();
        let b = GridInstance::new(9, 9, &[(p(1, 9), 2), (p(9, 9), 2), (p(1, 1), 2)]).unwrap();
        let seq =
            RequestSequence::from_points([p(2, 2), p(1, 2), p(2, 1), p(3, 3), p(8, 8), p(2, 8)]);
        let la = run_online(&a, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        let lb = run_online(&b, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        let c = cfg(3, 5, 2, 0.25);
        assert_eq!(la.total_cost(), lb.total_cost());
        assert_eq!(
            boundary_oscillation_rate(&la, &a, &c),
            boundary_oscillation_rate(&lb, &b, &c)
        );
        assert_eq!(
            zone_collapse_rate(&la, &a, &c),
            zone_collapse_rate(&lb, &b, &c)
        );
    }
}
