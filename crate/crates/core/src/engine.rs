//! Online and semi-online simulation runs.
//!
//! A run feeds a request sequence to a policy, commits every assignment
//! irrevocably against a private [`CapacityLedger`] and records one
//! [`AssignmentEvent`] per request. There is no operation that edits a
//! committed event.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algorithms::OnlinePolicy;
use crate::bmcf::{self, BatchConfig, BatchRecord, Trigger};
use crate::error::{OfaError, Result};
use crate::grid::{total_remaining, CapacityLedger, GridInstance, GridPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub location: GridPoint,
    pub arrival_time: u64,
}

/// Time-ordered requests. Arrival times are non-decreasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RequestSequence {
    requests: Vec<Request>,
}

impl RequestSequence {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        if let Some(i) = requests
            .windows(2)
            .position(|w| w[1].arrival_time < w[0].arrival_time)
        {
            return Err(OfaError::ConfigInvalid(format!(
                "arrival time of request {} goes backwards",
                i + 1
            )));
        }
        Ok(Self { requests })
    }

    /// One request per time step: request `i` (0-based) arrives at `i + 1`.
    pub fn from_points(points: impl IntoIterator<Item = GridPoint>) -> Self {
        Self {
            requests: points
                .into_iter()
                .enumerate()
                .map(|(i, location)| Request {
                    location,
                    arrival_time: i as u64 + 1,
                })
                .collect(),
        }
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.requests.iter().map(|r| r.location)
    }

    /// Parses `x,y[,arrival_time]` lines. Blank lines, `#` comments and a
    /// leading `x,y...` header are skipped. Missing arrival times default to
    /// the 1-based request position.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut requests = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if requests.is_empty() && line.starts_with('x') {
                continue;
            }
            let err = |message: String| OfaError::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(err(format!(
                    "expected `x,y[,arrival_time]`, got {} fields",
                    fields.len()
                )));
            }
            let num = |s: &str, what: &str| {
                s.parse::<u64>()
                    .map_err(|_| err(format!("{what} `{s}` is not a non-negative integer")))
            };
            let x = num(fields[0], "x")?;
            let y = num(fields[1], "y")?;
            let (x, y) = match (u32::try_from(x), u32::try_from(y)) {
                (Ok(x), Ok(y)) => (x, y),
                _ => return Err(err("coordinate too large".into())),
            };
            let arrival_time = match fields.get(2) {
                Some(t) => num(t, "arrival_time")?,
                None => requests.len() as u64 + 1,
            };
            if let Some(prev) = requests.last().map(|r: &Request| r.arrival_time) {
                if arrival_time < prev {
                    return Err(err(format!(
                        "arrival_time {arrival_time} precedes previous arrival {prev}"
                    )));
                }
            }
            requests.push(Request {
                location: GridPoint::new(x, y),
                arrival_time,
            });
        }
        Ok(Self { requests })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,arrival_time\n");
        for r in &self.requests {
            out.push_str(&format!(
                "{},{},{}\n",
                r.location.x, r.location.y, r.arrival_time
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentEvent {
    pub request_index: usize,
    pub location: GridPoint,
    pub facility_id: usize,
    pub distance_cost: u32,
    pub arrival_time: u64,
    pub commit_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssignmentLog {
    events: Vec<AssignmentEvent>,
    total_cost: u64,
}

impl AssignmentLog {
    fn push(&mut self, event: AssignmentEvent) {
        self.total_cost += u64::from(event.distance_cost);
        self.events.push(event);
    }

    /// Events in commit order.
    pub fn events(&self) -> &[AssignmentEvent] {
        &self.events
    }

    pub fn total_cost(&self) -> u64 {
        self.total_cost
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of log entries per facility id.
    pub fn facility_counts(&self, num_facilities: usize) -> Vec<u32> {
        let mut counts = vec![0; num_facilities];
        for e in &self.events {
            counts[e.facility_id] += 1;
        }
        counts
    }

    /// Number of consecutive events (in commit order) assigned to different
    /// facilities.
    pub fn switch_count(&self) -> usize {
        self.events
            .windows(2)
            .filter(|w| w[0].facility_id != w[1].facility_id)
            .count()
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "request_index",
        "x",
        "y",
        "facility_id",
        "distance",
        "arrival_time",
        "commit_time",
    ];

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for e in &self.events {
            w.write_record([
                e.request_index.to_string(),
                e.location.x.to_string(),
                e.location.y.to_string(),
                e.facility_id.to_string(),
                e.distance_cost.to_string(),
                e.arrival_time.to_string(),
                e.commit_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RngSeed(pub u64);

/// SplitMix64 finalizer applied to `a + (b + 1) * golden`. Used for every seed
/// split in the crate: trial seeds from a base seed, and per-purpose streams
/// from a trial seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream ids for [`derive_stream`].
pub mod stream {
    pub const WORKLOAD: u64 = 0;
    pub const POLICY: u64 = 1;
}

/// Dedicated random stream for `(seed, stream_id)`.
pub fn derive_stream(seed: RngSeed, stream_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed.0, stream_id))
}

fn validate(instance: &GridInstance, sequence: &RequestSequence) -> Result<()> {
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

/// Fully online run: each request commits at its arrival time.
pub fn run_online(
    instance: &GridInstance,
    sequence: &RequestSequence,
    policy: &OnlinePolicy,
    seed: RngSeed,
) -> Result<AssignmentLog> {
    validate(instance, sequence)?;
    let mut rng = derive_stream(seed, stream::POLICY);
    let mut ledger = CapacityLedger::new(instance);
    let mut previous = None;
    let mut log = AssignmentLog::default();
    for (i, req) in sequence.requests().iter().enumerate() {
        if total_remaining(&ledger) == 0 {
            return Err(OfaError::InfeasibleSequence {
                request_index: i,
                requests: sequence.len(),
                capacity: instance.total_capacity(),
            });
        }
        let f = policy.choose(req.location, &ledger, instance, &mut previous, &mut rng)?;
        ledger.commit(f)?;
        log.push(AssignmentEvent {
            request_index: i,
            location: req.location,
            facility_id: f,
            distance_cost: instance.distance_to(req.location, f),
            arrival_time: req.arrival_time,
            commit_time: req.arrival_time,
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRun {
    pub log: AssignmentLog,
    pub batches: Vec<BatchRecord>,
}

/// Semi-online run of the batching policy.
///
/// A deadline that falls strictly between two arrivals freezes the buffer
/// at `oldest + tau`. After the final arrival any remaining buffer is
/// flushed at that arrival's time. The policy is deterministic; `seed` is
/// accepted for interface parity with online runs.
pub fn run_semi_online(
    instance: &GridInstance,
    sequence: &RequestSequence,
    config: &BatchConfig,
    _seed: RngSeed,
) -> Result<BatchRun> {
    config.validate()?;
    validate(instance, sequence)?;
    let mut ledger = CapacityLedger::new(instance);
    let mut run = BatchRun {
        log: AssignmentLog::default(),
        batches: Vec::new(),
    };
    let mut buffer: Vec<(usize, Request)> = Vec::new();
    let requests = sequence.requests();

    for (i, req) in requests.iter().enumerate() {
        if let Some((_, oldest)) = buffer.first() {
            let deadline = oldest.arrival_time + config.delay_budget;
            if deadline < req.arrival_time {
                freeze(
                    instance,
                    config,
                    &mut ledger,
                    &mut buffer,
                    deadline,
                    Trigger::Deadline,
                    &mut run,
                )?;
            }
        }
        buffer.push((i, *req));
        let pending: Vec<Request> = buffer.iter().map(|(_, r)| *r).collect();
        if let Some(trigger) =
            bmcf::should_freeze(&pending, req.arrival_time, config, instance, &ledger)
        {
            freeze(
                instance,
                config,
                &mut ledger,
                &mut buffer,
                req.arrival_time,
                trigger,
                &mut run,
            )?;
        }
    }
    if let Some(last) = requests.last() {
        if !buffer.is_empty() {
            freeze(
                instance,
                config,
                &mut ledger,
                &mut buffer,
                last.arrival_time,
                Trigger::Flush,
                &mut run,
            )?;
        }
    }
    Ok(run)
}

fn freeze(
    instance: &GridInstance,
    config: &BatchConfig,
    ledger: &mut CapacityLedger,
    buffer: &mut Vec<(usize, Request)>,
    now: u64,
    trigger: Trigger,
    run: &mut BatchRun,
) -> Result<()> {
    let batch: Vec<(usize, Request)> = std::mem::take(buffer);
    let points: Vec<GridPoint> = batch.iter().map(|(_, r)| r.location).collect();
    let outcome = bmcf::assign_batch(&points, ledger, instance, config)?;
    for ((index, req), &f) in batch.iter().zip(&outcome.assignment) {
        run.log.push(AssignmentEvent {
            request_index: *index,
            location: req.location,
            facility_id: f,
            distance_cost: instance.distance_to(req.location, f),
            arrival_time: req.arrival_time,
            commit_time: now,
        });
    }
    run.batches.push(BatchRecord {
        batch_id: run.batches.len(),
        request_indices: batch.iter().map(|(i, _)| *i).collect(),
        freeze_time: now,
        trigger,
        batch_cost: outcome.batch_cost,
        per_facility_counts: outcome.per_facility_counts,
        reservation_used: outcome.reservation_used,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{CsVoronoiConfig, HysteresisConfig, Smoothing};
    use crate::grid::manhattan_distance;

    fn p(x: u32, y: u32) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn worked() -> (GridInstance, RequestSequence) {
        let g = GridInstance::new(3, 3, &[(p(1, 1), 2), (p(3, 3), 1)]).unwrap();
        (g, RequestSequence::from_points([p(1, 2), p(2, 2), p(3, 2)]))
    }

    #[test]
    fn single_request_at_facility_costs_zero() {
        let g = GridInstance::new(4, 4, &[(p(2, 3), 1)]).unwrap();
        let seq = RequestSequence::from_points([p(2, 3)]);
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        assert_eq!(log.total_cost(), 0);
        assert_eq!(log.events()[0].commit_time, log.events()[0].arrival_time);
    }

    #[test]
    fn oscillation_pair_greedy_pays_full_separation() {
        // F(L) = f0 at (1,1), F(R) = f1 at (11,1); R1 at the midpoint, R2 at F(L)
        let g = GridInstance::new(1, 11, &[(p(1, 1), 1), (p(11, 1), 1)]).unwrap();
        let seq = RequestSequence::from_points([p(6, 1), p(1, 1)]);
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        assert_eq!(log.events()[0].facility_id, 0);
        assert_eq!(log.events()[1].facility_id, 1);
        assert_eq!(log.events()[1].distance_cost, 10);
        assert_eq!(log.total_cost(), 15);
    }

    #[test]
    fn infeasible_and_out_of_bounds_sequences() {
        let (g, _) = worked();
        let too_many = RequestSequence::from_points([p(1, 1); 4]);
        let err = run_online(&g, &too_many, &OnlinePolicy::Greedy, RngSeed(0)).unwrap_err();
        assert_eq!(err.kind(), "InfeasibleSequence");
        let outside = RequestSequence::from_points([p(4, 1)]);
        let err = run_online(&g, &outside, &OnlinePolicy::Greedy, RngSeed(0)).unwrap_err();
        assert_eq!(err.kind(), "OutOfBounds");
        let err =
            run_semi_online(&g, &outside, &BatchConfig::baseline(1, 0), RngSeed(0)).unwrap_err();
        assert_eq!(err.kind(), "OutOfBounds");
    }

    #[test]
    fn logged_cost_matches_resummation() {
        let g = GridInstance::new(6, 6, &[(p(1, 1), 3), (p(6, 6), 3), (p(3, 4), 2)]).unwrap();
        let seq = RequestSequence::from_points([
            p(2, 2),
            p(5, 5),
            p(3, 3),
            p(1, 6),
            p(6, 1),
            p(4, 4),
            p(2, 5),
        ]);
        let policies = [
            OnlinePolicy::Greedy,
            OnlinePolicy::RandomizedGreedy,
            OnlinePolicy::CsVoronoi(CsVoronoiConfig::new(1.0, Smoothing::None).unwrap()),
            OnlinePolicy::GreedyHysteresis(HysteresisConfig { slack: 2 }),
        ];
        for policy in &policies {
            let log = run_online(&g, &seq, policy, RngSeed(5)).unwrap();
            let resum: u64 = log
                .events()
                .iter()
                .map(|e| {
                    let req = seq.requests()[e.request_index].location;
                    u64::from(manhattan_distance(req, g.facility(e.facility_id).location))
                })
                .sum();
            assert_eq!(log.total_cost(), resum, "{}", policy.label());
            let counts = log.facility_counts(g.num_facilities());
            for f in g.facilities() {
                assert!(counts[f.id] <= f.capacity);
            }
        }
    }

    #[test]
    fn same_seed_same_log() {
        let g = GridInstance::new(5, 5, &[(p(1, 3), 2), (p(5, 3), 2), (p(3, 1), 2)]).unwrap();
        let seq = RequestSequence::from_points([p(3, 3), p(3, 3), p(3, 2), p(2, 2), p(4, 4)]);
        let a = run_online(&g, &seq, &OnlinePolicy::RandomizedGreedy, RngSeed(99)).unwrap();
        let b = run_online(&g, &seq, &OnlinePolicy::RandomizedGreedy, RngSeed(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn worked_example_batch() {
        let (g, seq) = worked();
        let run = run_semi_online(&g, &seq, &BatchConfig::baseline(3, 2), RngSeed(0)).unwrap();
        let assigned: Vec<usize> = run.log.events().iter().map(|e| e.facility_id).collect();
        assert_eq!(assigned, vec![0, 0, 1]);
        assert_eq!(run.log.total_cost(), 4);
        assert_eq!(run.batches.len(), 1);
        assert_eq!(run.batches[0].trigger, Trigger::Size);
        assert_eq!(run.batches[0].batch_cost, 4);
        assert!(run.log.events().iter().all(|e| e.commit_time == 3));
    }

    #[test]
    fn deadline_between_arrivals_freezes_at_deadline() {
        let g = GridInstance::new(3, 3, &[(p(1, 1), 5)]).unwrap();
        let seq = RequestSequence::new(vec![
            Request {
                location: p(1, 2),
                arrival_time: 1,
            },
            Request {
                location: p(2, 2),
                arrival_time: 10,
            },
        ])
        .unwrap();
        let run = run_semi_online(&g, &seq, &BatchConfig::baseline(5, 3), RngSeed(0)).unwrap();
        assert_eq!(run.batches.len(), 2);
        assert_eq!(run.batches[0].trigger, Trigger::Deadline);
        assert_eq!(run.batches[0].freeze_time, 4);
        assert_eq!(run.batches[1].trigger, Trigger::Flush);
        assert_eq!(run.batches[1].freeze_time, 10);
        for e in run.log.events() {
            assert!(e.commit_time - e.arrival_time <= 3);
        }
    }

    #[test]
    fn flush_respects_delay_bound() {
        let (g, seq) = worked();
        let run = run_semi_online(&g, &seq, &BatchConfig::baseline(10, 5), RngSeed(0)).unwrap();
        assert_eq!(run.batches.len(), 1);
        assert_eq!(run.batches[0].trigger, Trigger::Flush);
        assert_eq!(run.log.total_cost(), 4);
    }

    #[test]
    fn sequence_parse_and_errors() {
        let seq =
            RequestSequence::parse("x,y,arrival_time\n1,2,1\n# c\n\n3,3,4\n", "s.csv").unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.requests()[1].arrival_time, 4);
        let seq2 = RequestSequence::parse(&seq.to_csv(), "again").unwrap();
        assert_eq!(seq, seq2);
        let implicit = RequestSequence::parse("2,2\n3,3\n", "s").unwrap();
        assert_eq!(implicit.requests()[1].arrival_time, 2);

        let err = RequestSequence::parse("1,2\n1,oops\n", "bad.csv").unwrap_err();
        assert_eq!(
            err,
            OfaError::Parse {
                source_name: "bad.csv".into(),
                line: 2,
                message: "y `oops` is not a non-negative integer".into()
            }
        );
        let err = RequestSequence::parse("1,2,5\n1,1,3\n", "t").unwrap_err();
        assert!(matches!(err, OfaError::Parse { line: 2, .. }));
        let err = RequestSequence::parse("1\n", "t").unwrap_err();
        assert!(matches!(err, OfaError::Parse { line: 1, .. }));
    }

    #[test]
    fn log_csv_layout() {
        let (g, seq) = worked();
        let log = run_online(&g, &seq, &OnlinePolicy::Greedy, RngSeed(0)).unwrap();
        let text = log.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "request_index,x,y,facility_id,distance,arrival_time,commit_time"
        );
        assert_eq!(lines.next().unwrap(), "0,1,2,0,1,1,1");
    }

    #[test]
    fn mix_seed_spreads() {
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
        assert_eq!(mix_seed(42, 7), mix_seed(42, 7));
    }
}
