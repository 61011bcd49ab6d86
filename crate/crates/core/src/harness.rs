//! Experiment runner: config parsing, the policy x trial grid, OPT per
//! sequence, metrics, and CSV outputs.
//!
//! Trial `i` uses seed `mix_seed(base_seed, i)`. Every policy in a trial
//! sees the same generated sequence and the same seed, which is what makes
//! the cross-policy normalized ratio a valid join. Trials may run in
//! parallel; results are merged in trial order so output files do not depend
//! on scheduling.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rand::seq::index::sample;
use serde::{Deserialize, Deserializer, Serialize};

use crate::adversary::WorkloadSpec;
use crate::algorithms::{CsVoronoiConfig, HysteresisConfig, OnlinePolicy, Smoothing};
use crate::bmcf::{BatchConfig, BatchRecord};
use crate::engine::{
    derive_stream, mix_seed, run_online, run_semi_online, AssignmentLog, RequestSequence, RngSeed,
};
use crate::error::{OfaError, Result};
use crate::grid::{FacilitySpec, GridInstance, GridPoint, InstanceFile};
use crate::metrics::{
    aggregate_trials, batch_overconcentration_rate, boundary_oscillation_rate, zone_collapse_rate,
    MetricsConfig, MetricsOverrides, RunReport, Summary,
};
use crate::opt_oracle::{competitive_ratio, offline_opt, CompetitiveRatio};
use crate::parallel::{map_indexed, Execution};

pub const SCHEMA_VERSION: u32 = 1;

/// Stream id used for random facility placement.
const PLACEMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub base_seed: u64,
    pub trials: usize,
    #[serde(default)]
    pub instance: Option<InstanceSource>,
    pub workload: WorkloadSpec,
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub metrics: MetricsOverrides,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Exactly one of `facilities`, `file`, `lattice` or `random`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSource {
    pub rows: Option<u32>,
    pub cols: Option<u32>,
    pub facilities: Option<Vec<FacilitySpec>>,
    pub file: Option<String>,
    pub lattice: Option<LatticePlacement>,
    pub random: Option<RandomPlacement>,
}

/// Facilities at the centers of `step x step` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticePlacement {
    pub step: u32,
    pub capacity: u32,
}

/// `count` distinct vertices drawn uniformly, seeded by the base seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPlacement {
    pub count: usize,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    #[serde(default)]
    pub events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Greedy {
        name: Option<String>,
    },
    Rgreedy {
        name: Option<String>,
    },
    RgreedyHyst {
        name: Option<String>,
        #[serde(default = "default_slack")]
        slack: u32,
    },
    Csvoronoi {
        name: Option<String>,
        alpha: f64,
        #[serde(default)]
        smoothing: Smoothing,
    },
    Bmcf {
        name: Option<String>,
        #[serde(rename = "B")]
        batch_size: usize,
        tau: u64,
        #[serde(default)]
        rho_reserve: u32,
        #[serde(
            default = "BigRational::zero",
            deserialize_with = "de_rational",
            serialize_with = "ser_rational"
        )]
        lambda: BigRational,
        #[serde(default = "default_theta_c")]
        theta_c: f64,
    },
}

fn default_slack() -> u32 {
    HysteresisConfig::default().slack
}

fn default_theta_c() -> f64 {
    1.0
}

/// Accepts an integer, a float (converted exactly) or a `"p/q"` string.
fn de_rational<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigRational, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Float(f64),
        Text(String),
    }
    let err = |m: String| serde::de::Error::custom(m);
    match Raw::deserialize(d)? {
        Raw::Int(i) => Ok(BigRational::from_integer(BigInt::from(i))),
        Raw::Float(f) => BigRational::from_float(f).ok_or_else(|| err(format!("bad lambda {f}"))),
        Raw::Text(s) => parse_rational(&s).ok_or_else(|| err(format!("bad lambda `{s}`"))),
    }
}

fn ser_rational<S: serde::Serializer>(
    v: &BigRational,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(BigRational::new(n.trim().parse().ok()?, d))
        }
        None => match s.parse::<BigInt>() {
            Ok(i) => Some(BigRational::from_integer(i)),
            Err(_) => BigRational::from_float(s.parse::<f64>().ok()?),
        },
    }
}

/// Runtime form of a [`PolicyConfig`].
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Online(OnlinePolicy),
    Batch(BatchConfig),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Online(p) => p.label(),
            Policy::Batch(b) => b.label(),
        }
    }
}

impl PolicyConfig {
    pub fn build(&self) -> Result<(String, Policy)> {
        let policy = match self {
            PolicyConfig::Greedy { .. } => Policy::Online(OnlinePolicy::Greedy),
            PolicyConfig::Rgreedy { .. } => Policy::Online(OnlinePolicy::RandomizedGreedy),
            PolicyConfig::RgreedyHyst { slack, .. } => {
                Policy::Online(OnlinePolicy::GreedyHysteresis(HysteresisConfig {
                    slack: *slack,
                }))
            }
            PolicyConfig::Csvoronoi {
                alpha, smoothing, ..
            } => Policy::Online(OnlinePolicy::CsVoronoi(CsVoronoiConfig::new(
                *alpha, *smoothing,
            )?)),
            PolicyConfig::Bmcf {
                batch_size,
                tau,
                rho_reserve,
                lambda,
                theta_c,
                ..
            } => {
                let cfg = BatchConfig {
                    batch_size: *batch_size,
                    delay_budget: *tau,
                    reservation: *rho_reserve,
                    scarcity_lambda: lambda.clone(),
                    concentration_threshold: *theta_c,
                };
                cfg.validate()?;
                Policy::Batch(cfg)
            }
        };
        let name = match self {
            PolicyConfig::Greedy { name }
            | PolicyConfig::Rgreedy { name }
            | PolicyConfig::RgreedyHyst { name, .. }
            | PolicyConfig::Csvoronoi { name, .. }
            | PolicyConfig::Bmcf { name, .. } => name.clone(),
        };
        Ok((name.unwrap_or_else(|| policy.label()), policy))
    }

    /// Parses the CLI shorthand `name[:key=value,...]`, e.g.
    /// `bmcf:B=3,tau=2,rho_reserve=1` or `csvoronoi:alpha=1,smoothing=damped`.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
        let mut doc = format!("policy = \"{}\"\n", kind.trim());
        for kv in args.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                OfaError::ConfigInvalid(format!("policy argument `{kv}` is not key=value"))
            })?;
            let v = v.trim();
            let literal = if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
                v.to_string()
            } else {
                format!("\"{v}\"")
            };
            doc.push_str(&format!("{} = {}\n", k.trim(), literal));
        }
        toml::from_str(&doc)
            .map_err(|e| OfaError::ConfigInvalid(format!("policy `{spec}`: {}", e.message())))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0);
            OfaError::Parse {
                source_name: source_name.to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OfaError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(OfaError::ConfigInvalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.trials == 0 {
            return Err(OfaError::ConfigInvalid("trials must be positive".into()));
        }
        if self.policies.is_empty() {
            return Err(OfaError::ConfigInvalid(
                "at least one policy is required".into(),
            ));
        }
        let mut labels = BTreeSet::new();
        for p in &self.policies {
            let (label, _) = p.build()?;
            if !labels.insert(label.clone()) {
                return Err(OfaError::ConfigInvalid(format!(
                    "duplicate policy label {label}"
                )));
            }
        }
        if self.workload.needs_instance() != self.instance.is_some() {
            return Err(OfaError::ConfigInvalid(format!(
                "workload {} {} an [instance] section",
                self.workload.name(),
                if self.workload.needs_instance() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.workload.name().to_string())
    }
}

impl InstanceSource {
    pub fn resolve(&self, base_dir: &Path, base_seed: u64) -> Result<GridInstance> {
        let sources = [
            self.facilities.is_some(),
            self.file.is_some(),
            self.lattice.is_some(),
            self.random.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(OfaError::ConfigInvalid(
                "[instance] needs exactly one of facilities, file, lattice, random".into(),
            ));
        }
        if let Some(file) = &self.file {
            return load_instance(&base_dir.join(file));
        }
        let (rows, cols) = match (self.rows, self.cols) {
            (Some(r), Some(c)) => (r, c),
            _ => {
                return Err(OfaError::ConfigInvalid(
                    "[instance] needs rows and cols".into(),
                ))
            }
        };
        let facilities: Vec<(GridPoint, u32)> = if let Some(list) = &self.facilities {
            list.iter()
                .map(|f| (GridPoint::new(f.x, f.y), f.capacity))
                .collect()
        } else if let Some(lat) = self.lattice {
            lattice_sites(rows, cols, lat.step)?
                .into_iter()
                .map(|p| (p, lat.capacity))
                .collect()
        } else {
            let rp = self.random.expect("checked above");
            let vertices = rows as usize * cols as usize;
            if rp.count > vertices {
                return Err(OfaError::ConfigInvalid(format!(
                    "cannot place {} facilities on {vertices} vertices",
                    rp.count
                )));
            }
            let mut rng = derive_stream(RngSeed(base_seed), PLACEMENT_STREAM);
            let mut picks = sample(&mut rng, vertices, rp.count).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|i| {
                    let i = i as u32;
                    (GridPoint::new(i % cols + 1, i / cols + 1), rp.capacity)
                })
                .collect()
        };
        GridInstance::new(rows, cols, &facilities)
    }
}

fn lattice_sites(rows: u32, cols: u32, step: u32) -> Result<Vec<GridPoint>> {
    if step == 0 {
        return Err(OfaError::ConfigInvalid(
            "lattice step must be positive".into(),
        ));
    }
    let axis = |len: u32| -> Vec<u32> { (step.div_ceil(2)..=len).step_by(step as usize).collect() };
    let xs = axis(cols);
    Ok(axis(rows)
        .into_iter()
        .flat_map(|y| xs.iter().map(move |&x| GridPoint::new(x, y)))
        .collect())
}

pub fn load_instance(path: &Path) -> Result<GridInstance> {
    let text = fs::read_to_string(path).map_err(|e| OfaError::io(path, e))?;
    parse_instance(&text, &path.display().to_string())
}

pub fn parse_instance(text: &str, source_name: &str) -> Result<GridInstance> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| OfaError::Parse {
        source_name: source_name.to_string(),
        line: e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    file.into_instance()
}

pub fn instance_to_toml(instance: &GridInstance) -> String {
    toml::to_string(&instance.to_file()).expect("instance file serializes")
}

pub fn load_sequence(path: &Path) -> Result<RequestSequence> {
    let text = fs::read_to_string(path).map_err(|e| OfaError::io(path, e))?;
    RequestSequence::parse(&text, &path.display().to_string())
}

/// Output of one policy on one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub log: AssignmentLog,
    pub batches: Option<Vec<BatchRecord>>,
}

pub fn run_policy(
    instance: &GridInstance,
    sequence: &RequestSequence,
    policy: &Policy,
    seed: RngSeed,
) -> Result<PolicyRun> {
    match policy {
        Policy::Online(p) => Ok(PolicyRun {
            log: run_online(instance, sequence, p, seed)?,
            batches: None,
        }),
        Policy::Batch(cfg) => {
            let run = run_semi_online(instance, sequence, cfg, seed)?;
            Ok(PolicyRun {
                log: run.log,
                batches: Some(run.batches),
            })
        }
    }
}

/// Checks the run-level invariants: one event per request, costs re-sum,
/// capacities respected, delay budget honored, and OPT below the run.
pub fn check_run(
    instance: &GridInstance,
    sequence: &RequestSequence,
    policy: &Policy,
    run: &PolicyRun,
    opt_cost: u64,
) -> Result<()> {
    let fail = |m: String| Err(OfaError::InvariantViolation(m));
    let log = &run.log;
    let mut seen = vec![false; sequence.len()];
    let mut used = vec![0u32; instance.num_facilities()];
    let mut resum = 0u64;
    for e in log.events() {
        if e.request_index >= seen.len() || std::mem::replace(&mut seen[e.request_index], true) {
            return fail(format!(
                "request {} logged twice or unknown",
                e.request_index
            ));
        }
        let req = sequence.requests()[e.request_index];
        let f = instance.facility(e.facility_id);
        used[f.id] += 1;
        if used[f.id] > f.capacity {
            return fail(format!("facility {} assigned beyond capacity", f.id));
        }
        if e.distance_cost != instance.distance_to(req.location, f.id) {
            return fail(format!("request {} has a wrong distance", e.request_index));
        }
        if e.commit_time < e.arrival_time {
            return fail(format!(
                "request {} commits before arrival",
                e.request_index
            ));
        }
        match policy {
            Policy::Online(_) if e.commit_time != e.arrival_time => {
                return fail(format!("online request {} was delayed", e.request_index));
            }
            Policy::Batch(cfg) if e.commit_time - e.arrival_time > cfg.delay_budget => {
                return fail(format!("request {} waited beyond tau", e.request_index));
            }
            _ => {}
        }
        resum += u64::from(e.distance_cost);
    }
    if seen.iter().any(|s| !s) {
        return fail("some request was never assigned".into());
    }
    if resum != log.total_cost() {
        return fail("logged total cost does not re-sum".into());
    }
    if opt_cost > log.total_cost() {
        return fail(format!(
            "OPT {opt_cost} exceeds policy cost {}",
            log.total_cost()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub policy: String,
    pub trial: usize,
    pub seed: u64,
    pub alg_cost: u64,
    pub bmcf_cost: u64,
    pub normalized: CompetitiveRatio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub policy: String,
    pub trial: usize,
    pub seed: u64,
    pub record: BatchRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDump {
    pub policy_index: usize,
    pub trial: usize,
    pub log: AssignmentLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub workload: String,
    pub policies: Vec<String>,
    /// Policy-major, trials ascending within each policy.
    pub reports: Vec<RunReport>,
    pub summaries: Vec<Summary>,
    pub batches: Vec<BatchRow>,
    /// Present when a baseline BMCF policy is configured.
    pub normalized: Vec<NormalizedRow>,
    pub events: Vec<EventDump>,
}

struct TrialResult {
    reports: Vec<RunReport>,
    runs: Vec<PolicyRun>,
}

pub fn trial_seed(base_seed: u64, trial: usize) -> RngSeed {
    RngSeed(mix_seed(base_seed, trial as u64))
}

pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
    mode: Execution,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let policies: Vec<(String, Policy)> = config
        .policies
        .iter()
        .map(PolicyConfig::build)
        .collect::<Result<_>>()?;
    let shared_instance = config
        .instance
        .as_ref()
        .map(|src| src.resolve(base_dir, config.base_seed))
        .transpose()?;
    let workload = config.label();

    let trial_results: Vec<Result<TrialResult>> = map_indexed(config.trials, mode, |trial| {
        run_trial(
            config,
            &workload,
            &policies,
            shared_instance.as_ref(),
            trial,
        )
    });
    let trial_results: Vec<TrialResult> = trial_results.into_iter().collect::<Result<_>>()?;

    let mut out = ExperimentOutput {
        workload: workload.clone(),
        policies: policies.iter().map(|(l, _)| l.clone()).collect(),
        reports: Vec::new(),
        summaries: Vec::new(),
        batches: Vec::new(),
        normalized: Vec::new(),
        events: Vec::new(),
    };
    let baseline = policies
        .iter()
        .position(|(_, p)| matches!(p, Policy::Batch(b) if b.is_baseline()));

    for (pi, (label, _)) in policies.iter().enumerate() {
        let reports: Vec<RunReport> = trial_results
            .iter()
            .map(|t| t.reports[pi].clone())
            .collect();
        out.summaries.push(aggregate_trials(&reports)?);
        for (trial, t) in trial_results.iter().enumerate() {
            let report = &t.reports[pi];
            if let Some(batches) = &t.runs[pi].batches {
                out.batches.extend(batches.iter().map(|b| BatchRow {
                    policy: label.clone(),
                    trial,
                    seed: report.seed,
                    record: b.clone(),
                }));
            }
            if let Some(bi) = baseline {
                let base = &t.reports[bi];
                if base.seed != report.seed || base.opt_cost != report.opt_cost {
                    return Err(OfaError::InvariantViolation(format!(
                        "normalized join of {label} and {} on different runs",
                        base.policy
                    )));
                }
                out.normalized.push(NormalizedRow {
                    policy: label.clone(),
                    trial,
                    seed: report.seed,
                    alg_cost: report.alg_cost,
                    bmcf_cost: base.alg_cost,
                    normalized: competitive_ratio(report.alg_cost, base.alg_cost),
                });
            }
            if config.output.events {
                out.events.push(EventDump {
                    policy_index: pi,
                    trial,
                    log: t.runs[pi].log.clone(),
                });
            }
        }
        out.reports.extend(reports);
    }
    Ok(out)
}

fn run_trial(
    config: &ExperimentConfig,
    workload: &str,
    policies: &[(String, Policy)],
    shared_instance: Option<&GridInstance>,
    trial: usize,
) -> Result<TrialResult> {
    let seed = trial_seed(config.base_seed, trial);
    let attribute = |policy: &str, e: OfaError| OfaError::Trial {
        policy: policy.to_string(),
        trial,
        source: Box::new(e),
    };
    let (instance, sequence) = config
        .workload
        .generate(shared_instance, seed)
        .map_err(|e| attribute("<workload>", e))?;
    let metrics: MetricsConfig = config.metrics.resolve(&instance)?;
    let opt = offline_opt(&instance, &sequence).map_err(|e| attribute("<opt>", e))?;

    let mut result = TrialResult {
        reports: Vec::with_capacity(policies.len()),
        runs: Vec::with_capacity(policies.len()),
    };
    for (label, policy) in policies {
        let run =
            run_policy(&instance, &sequence, policy, seed).map_err(|e| attribute(label, e))?;
        check_run(&instance, &sequence, policy, &run, opt.total_cost)
            .map_err(|e| attribute(label, e))?;
        let alg_cost = run.log.total_cost();
        result.reports.push(RunReport {
            workload: workload.to_string(),
            policy: label.clone(),
            trial,
            seed: seed.0,
            alg_cost,
            opt_cost: opt.total_cost,
            ratio: competitive_ratio(alg_cost, opt.total_cost),
            boundary_oscillation_rate: boundary_oscillation_rate(&run.log, &instance, &metrics),
            zone_collapse_rate: zone_collapse_rate(&run.log, &instance, &metrics),
            batch_overconcentration_rate: run
                .batches
                .as_ref()
                .map(|b| batch_overconcentration_rate(b, &metrics)),
            trial_count: 1,
        });
        result.runs.push(run);
    }
    Ok(result)
}

fn csv_string<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

impl ExperimentOutput {
    pub fn runs_csv(&self) -> String {
        csv_string(
            &RunReport::CSV_HEADER,
            self.reports.iter().map(|r| r.csv_fields()),
        )
    }

    pub fn summary_csv(&self) -> String {
        csv_string(
            &Summary::CSV_HEADER,
            self.summaries.iter().map(|s| s.csv_fields()),
        )
    }

    pub fn batches_csv(&self) -> String {
        let mut header = vec!["workload", "policy", "seed"];
        header.extend(BatchRecord::CSV_HEADER);
        csv_string(
            &header,
            self.batches.iter().map(|b| {
                let mut row = vec![self.workload.clone(), b.policy.clone(), b.seed.to_string()];
                row.extend(b.record.csv_fields());
                row
            }),
        )
    }

    pub fn normalized_csv(&self) -> String {
        csv_string(
            &[
                "workload",
                "policy",
                "seed",
                "alg_cost",
                "bmcf_cost",
                "normalized",
            ],
            self.normalized.iter().map(|n| {
                [
                    self.workload.clone(),
                    n.policy.clone(),
                    n.seed.to_string(),
                    n.alg_cost.to_string(),
                    n.bmcf_cost.to_string(),
                    n.normalized.to_string(),
                ]
            }),
        )
    }

    pub fn summary_for(&self, policy: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }

    /// Writes `runs.csv`, `summary.csv`, `batches.csv`, `normalized.csv` and,
    /// when event dumps were requested, `events/<policy>_<trial>.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| OfaError::io(dir, e))?;
        let mut files = vec![
            ("runs.csv", self.runs_csv()),
            ("summary.csv", self.summary_csv()),
        ];
        if !self.batches.is_empty() {
            files.push(("batches.csv", self.batches_csv()));
        }
        if !self.normalized.is_empty() {
            files.push(("normalized.csv", self.normalized_csv()));
        }
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| OfaError::io(&path, e))?;
            written.push(path);
        }
        if !self.events.is_empty() {
            let events_dir = dir.join("events");
            fs::create_dir_all(&events_dir).map_err(|e| OfaError::io(&events_dir, e))?;
            for dump in &self.events {
                let path = events_dir.join(format!("p{}_t{}.csv", dump.policy_index, dump.trial));
                fs::write(&path, dump.log.to_csv_string()).map_err(|e| OfaError::io(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub policy: String,
    pub run: PolicyRun,
    pub opt_cost: u64,
}

/// Single deterministic run with the full event log.
pub fn replay(
    instance: &GridInstance,
    sequence: &RequestSequence,
    policy: &PolicyConfig,
    seed: RngSeed,
) -> Result<ReplayOutput> {
    let (label, policy) = policy.build()?;
    let run = run_policy(instance, sequence, &policy, seed)?;
    let opt = offline_opt(instance, sequence)?;
    check_run(instance, sequence, &policy, &run, opt.total_cost)?;
    Ok(ReplayOutput {
        policy: label,
        run,
        opt_cost: opt.total_cost,
    })
}

/// The shipped experiment grid, embedded from `configs/`.
pub const DEFAULT_CONFIGS: [(&str, &str); 5] = [
    ("uniform", include_str!("../configs/uniform.toml")),
    ("clustered", include_str!("../configs/clustered.toml")),
    (
        "zone_collapse",
        include_str!("../configs/zone_collapse.toml"),
    ),
    ("oscillation", include_str!("../configs/oscillation.toml")),
    ("batch_trap", include_str!("../configs/batch_trap.toml")),
];

pub fn default_configs() -> Vec<(&'static str, ExperimentConfig)> {
    DEFAULT_CONFIGS
        .iter()
        .map(|(name, text)| {
            let cfg = ExperimentConfig::parse(text, name)
                .unwrap_or_else(|e| panic!("shipped config {name} is invalid: {e}"));
            (*name, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: &str = r#"
schema_version = 1
base_seed = 7
trials = 1

[instance]
rows = 3
cols = 3
facilities = [{ x = 1, y = 1, capacity = 2 }, { x = 3, y = 3, capacity = 1 }]

[workload]
kind = "uniform_iid"
n = 3

[[policies]]
policy = "bmcf"
B = 3
tau = 2
"#;

    #[test]
    fn config_parses_and_validates() {
        let cfg = ExperimentConfig::parse(WORKED, "worked").unwrap();
        assert_eq!(cfg.policies.len(), 1);
        let (label, policy) = cfg.policies[0].build().unwrap();
        assert_eq!(label, "bmcf(B=3,tau=2)");
        assert!(matches!(policy, Policy::Batch(b) if b.is_baseline()));

        let bad_version = WORKED.replace("schema_version = 1", "schema_version = 2");
        assert_eq!(
            ExperimentConfig::parse(&bad_version, "x")
                .unwrap_err()
                .kind(),
            "ConfigInvalid"
        );
        let unknown_key = WORKED.replace("tau = 2", "tau = 2\nbogus = 1");
        let err = ExperimentConfig::parse(&unknown_key, "cfg.toml").unwrap_err();
        assert_eq!(err.kind(), "ParseError");
        let dup = format!("{WORKED}\n[[policies]]\npolicy = \"bmcf\"\nB = 3\ntau = 2\n");
        assert_eq!(
            ExperimentConfig::parse(&dup, "x").unwrap_err().kind(),
            "ConfigInvalid"
        );
    }

    #[test]
    fn policy_shorthand() {
        let p = PolicyConfig::parse_spec("bmcf:B=3,tau=2,rho_reserve=1,lambda=1/2,theta_c=0.75")
            .unwrap();
        let (label, policy) = p.build().unwrap();
        assert_eq!(label, "bmcf(B=3,tau=2,rho=1,lambda=1/2,theta_c=0.75)");
        let Policy::Batch(cfg) = policy else { panic!() };
        assert_eq!(cfg.scarcity_lambda, BigRational::new(1.into(), 2.into()));

        let p = PolicyConfig::parse_spec("csvoronoi:alpha=0.5,smoothing=damped").unwrap();
        assert_eq!(p.build().unwrap().0, "csvoronoi_damped(alpha=0.5)");
        assert_eq!(
            PolicyConfig::parse_spec("rgreedy_hyst")
                .unwrap()
                .build()
                .unwrap()
                .0,
            "rgreedy_hyst(slack=1)"
        );
        assert!(PolicyConfig::parse_spec("teleport").is_err());
        assert!(PolicyConfig::parse_spec("bmcf:B").is_err());
    }

    #[test]
    fn rationals() {
        assert_eq!(
            parse_rational("3/4"),
            Some(BigRational::new(3.into(), 4.into()))
        );
        assert_eq!(
            parse_rational("2"),
            Some(BigRational::from_integer(2.into()))
        );
        assert_eq!(
            parse_rational("0.5"),
            Some(BigRational::new(1.into(), 2.into()))
        );
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
    }

    #[test]
    fn lattice_and_random_placement() {
        let sites = lattice_sites(10, 10, 5).unwrap();
        assert_eq!(
            sites,
            vec![
                GridPoint::new(3, 3),
                GridPoint::new(8, 3),
                GridPoint::new(3, 8),
                GridPoint::new(8, 8)
            ]
        );
        let src = InstanceSource {
            rows: Some(6),
            cols: Some(6),
            random: Some(RandomPlacement {
                count: 5,
                capacity: 2,
            }),
            ..Default::default()
        };
        let a = src.resolve(Path::new("."), 1).unwrap();
        let b = src.resolve(Path::new("."), 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_facilities(), 5);
        let locs: BTreeSet<_> = a.facilities().iter().map(|f| f.location).collect();
        assert_eq!(locs.len(), 5);
        let both = InstanceSource {
            lattice: Some(LatticePlacement {
                step: 3,
                capacity: 1,
            }),
            ..src
        };
        assert!(both.resolve(Path::new("."), 1).is_err());
    }

    #[test]
    fn instance_file_parse_errors_have_lines() {
        let err =
            parse_instance("rows = 3\ncols = \"x\"\nfacilities = []\n", "inst.toml").unwrap_err();
        assert!(matches!(err, OfaError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn shipped_configs_parse() {
        let configs = default_configs();
        assert_eq!(configs.len(), DEFAULT_CONFIGS.len());
    }

    #[test]
    fn sequential_and_parallel_outputs_match() {
        let cfg = ExperimentConfig::parse(WORKED, "worked").unwrap();
        let mut cfg = cfg;
        cfg.trials = 6;
        cfg.policies.push(PolicyConfig::Rgreedy { name: None });
        let a = run_experiment(&cfg, Path::new("."), Execution::Sequential).unwrap();
        let b = run_experiment(&cfg, Path::new("."), Execution::Parallel).unwrap();
        assert_eq!(a.runs_csv(), b.runs_csv());
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.normalized.len(), 12);
    }
}
