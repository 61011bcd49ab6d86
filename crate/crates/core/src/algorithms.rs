//! Fully online assignment rules.
//!
//! Every rule only ever returns a facility with remaining capacity. Ties are
//! broken by lowest facility id except where a rule explicitly randomizes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OfaError, Result};
use crate::grid::{CapacityLedger, GridInstance, GridPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    None,
    /// Capacity term `alpha * ln(1 + remcap)`.
    Damped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsVoronoiConfig {
    pub alpha: f64,
    pub smoothing: Smoothing,
}

impl CsVoronoiConfig {
    pub fn new(alpha: f64, smoothing: Smoothing) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(OfaError::ConfigInvalid(format!(
                "csvoronoi alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self { alpha, smoothing })
    }

    fn capacity_term(&self, remcap: u32) -> f64 {
        let r = f64::from(remcap);
        match self.smoothing {
            Smoothing::None => self.alpha * r,
            Smoothing::Damped => self.alpha * r.ln_1p(),
        }
    }

    /// `d(u, f) - alpha * g(remcap(f))`.
    pub fn score(&self, distance: u32, remcap: u32) -> f64 {
        f64::from(distance) - self.capacity_term(remcap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HysteresisConfig {
    /// Distance slack `h`; 0 recovers plain randomized greedy.
    pub slack: u32,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        Self { slack: 1 }
    }
}

/// A fully online policy. Only hysteresis carries state between requests;
/// the engine owns that state and threads it through [`OnlinePolicy::choose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OnlinePolicy {
    Greedy,
    RandomizedGreedy,
    CsVoronoi(CsVoronoiConfig),
    GreedyHysteresis(HysteresisConfig),
}

impl OnlinePolicy {
    pub fn choose<R: Rng + ?Sized>(
        &self,
        request: GridPoint,
        ledger: &CapacityLedger,
        instance: &GridInstance,
        previous_choice: &mut Option<usize>,
        rng: &mut R,
    ) -> Result<usize> {
        let choice = match self {
            OnlinePolicy::Greedy => nearest_available(request, ledger, instance)?,
            OnlinePolicy::RandomizedGreedy => randomized_greedy(request, ledger, instance, rng)?,
            OnlinePolicy::CsVoronoi(cfg) => cs_voronoi(request, ledger, instance, cfg)?,
            OnlinePolicy::GreedyHysteresis(cfg) => {
                greedy_with_hysteresis(request, ledger, instance, cfg, *previous_choice, rng)?
            }
        };
        *previous_choice = Some(choice);
        Ok(choice)
    }

    pub fn label(&self) -> String {
        match self {
            OnlinePolicy::Greedy => "greedy".into(),
            OnlinePolicy::RandomizedGreedy => "rgreedy".into(),
            OnlinePolicy::CsVoronoi(cfg) => match cfg.smoothing {
                Smoothing::None => format!("csvoronoi(alpha={})", cfg.alpha),
                Smoothing::Damped => format!("csvoronoi_damped(alpha={})", cfg.alpha),
            },
            OnlinePolicy::GreedyHysteresis(cfg) => format!("rgreedy_hyst(slack={})", cfg.slack),
        }
    }
}

fn min_available_distance(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
) -> Result<u32> {
    ledger
        .available()
        .map(|f| instance.distance_to(request, f))
        .min()
        .ok_or(OfaError::NoAvailableFacility)
}

/// Available facilities at exactly the minimum distance, ascending id.
pub fn nearest_available_set(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
) -> Result<Vec<usize>> {
    let d_min = min_available_distance(request, ledger, instance)?;
    Ok(ledger
        .available()
        .filter(|&f| instance.distance_to(request, f) == d_min)
        .collect())
}

pub fn nearest_available(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
) -> Result<usize> {
    // min_by_key keeps the first minimum, i.e. the lowest id.
    ledger
        .available()
        .min_by_key(|&f| instance.distance_to(request, f))
        .ok_or(OfaError::NoAvailableFacility)
}

/// Uniform draw from the nearest available facilities. A singleton argmin
/// consumes no randomness.
pub fn randomized_greedy<R: Rng + ?Sized>(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
    rng: &mut R,
) -> Result<usize> {
    let ties = nearest_available_set(request, ledger, instance)?;
    Ok(pick_uniform(&ties, rng))
}

fn pick_uniform<R: Rng + ?Sized>(candidates: &[usize], rng: &mut R) -> usize {
    match candidates {
        [only] => *only,
        _ => candidates[rng.random_range(0..candidates.len())],
    }
}

const SCORE_REL_EPS: f64 = 1e-12;

pub fn cs_voronoi(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
    config: &CsVoronoiConfig,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for f in ledger.available() {
        let score = config.score(instance.distance_to(request, f), ledger.remaining(f));
        match best {
            None => best = Some((f, score)),
            Some((_, best_score)) => {
                let tol = SCORE_REL_EPS * best_score.abs().max(score.abs()).max(1.0);
                if score < best_score - tol {
                    best = Some((f, score));
                }
            }
        }
    }
    best.map(|(f, _)| f).ok_or(OfaError::NoAvailableFacility)
}

/// Keeps `previous_choice` while it is available and within `slack` of the
/// nearest available distance; otherwise falls back to randomized greedy.
pub fn greedy_with_hysteresis<R: Rng + ?Sized>(
    request: GridPoint,
    ledger: &CapacityLedger,
    instance: &GridInstance,
    config: &HysteresisConfig,
    previous_choice: Option<usize>,
    rng: &mut R,
) -> Result<usize> {
    let d_min = min_available_distance(request, ledger, instance)?;
    if let Some(prev) = previous_choice {
        if prev < ledger.len()
            && ledger.is_available(prev)
            && instance.distance_to(request, prev) <= d_min + config.slack
        {
            return Ok(prev);
        }
    }
    randomized_greedy(request, ledger, instance, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(x: u32, y: u32) -> GridPoint {
        GridPoint::new(x, y)
    }

    fn worked_instance() -> GridInstance {
        GridInstance::new(3, 3, &[(p(1, 1), 2), (p(3, 3), 1)]).unwrap()
    }

    #[test]
    fn nearest_available_examples() {
        let g = worked_instance();
        let ledger = CapacityLedger::new(&g);
        assert_eq!(nearest_available(p(1, 2), &ledger, &g).unwrap(), 0);
        assert_eq!(nearest_available(p(3, 3), &ledger, &g).unwrap(), 1);
        // (2,2) is at distance 2 from both; lower id wins
        assert_eq!(nearest_available(p(2, 2), &ledger, &g).unwrap(), 0);
    }

    #[test]
    fn exhausted_ledger_errors() {
        let g = worked_instance();
        let ledger = CapacityLedger::from_remaining(vec![0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            nearest_available(p(1, 1), &ledger, &g),
            Err(OfaError::NoAvailableFacility)
        );
        assert!(randomized_greedy(p(1, 1), &ledger, &g, &mut rng).is_err());
        let cfg = CsVoronoiConfig::new(1.0, Smoothing::None).unwrap();
        assert!(cs_voronoi(p(1, 1), &ledger, &g, &cfg).is_err());
        let h = HysteresisConfig::default();
        assert!(greedy_with_hysteresis(p(1, 1), &ledger, &g, &h, Some(0), &mut rng).is_err());
    }

    #[test]
    fn skips_full_facilities() {
        let g = worked_instance();
        let ledger = CapacityLedger::from_remaining(vec![0, 1]);
        assert_eq!(nearest_available(p(1, 1), &ledger, &g).unwrap(), 1);
    }

    #[test]
    fn randomized_greedy_singleton_is_forced() {
        let g = worked_instance();
        let ledger = CapacityLedger::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(
                randomized_greedy(p(1, 2), &ledger, &g, &mut rng).unwrap(),
                0
            );
        }
    }

    #[test]
    fn randomized_greedy_two_way_tie_is_fair() {
        let g = worked_instance();
        let ledger = CapacityLedger::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let zeros = (0..draws)
            .filter(|_| randomized_greedy(p(2, 2), &ledger, &g, &mut rng).unwrap() == 0)
            .count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn randomized_greedy_k_way_tie_within_three_sigma() {
        // four facilities at distance 2 from the center of a 5x5 grid
        let g = GridInstance::new(
            5,
            5,
            &[(p(3, 1), 1), (p(1, 3), 1), (p(5, 3), 1), (p(3, 5), 1)],
        )
        .unwrap();
        let ledger = CapacityLedger::new(&g);
        let draws = 20_000;
        let mut counts = [0usize; 4];
        for seed in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            counts[randomized_greedy(p(3, 3), &ledger, &g, &mut rng).unwrap()] += 1;
        }
        let n = draws as f64;
        let sd = (n * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n / 4.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn cs_voronoi_capacity_pull() {
        // f0 at distance 3 with remcap 5, f1 at distance 1 with remcap 1
        let g = GridInstance::new(1, 7, &[(p(1, 1), 5), (p(5, 1), 1)]).unwrap();
        let ledger = CapacityLedger::new(&g);
        let req = p(4, 1);
        assert_eq!(g.distance_to(req, 0), 3);
        assert_eq!(g.distance_to(req, 1), 1);

        let plain = CsVoronoiConfig::new(1.0, Smoothing::None).unwrap();
        assert_eq!(plain.score(3, 5), -2.0);
        assert_eq!(plain.score(1, 1), 0.0);
        assert_eq!(cs_voronoi(req, &ledger, &g, &plain).unwrap(), 0);

        let damped = CsVoronoiConfig::new(1.0, Smoothing::Damped).unwrap();
        assert!((damped.score(3, 5) - (3.0 - 6f64.ln())).abs() < 1e-12);
        assert!((damped.score(3, 5) - 1.208).abs() < 1e-3);
        assert!((damped.score(1, 1) - 0.307).abs() < 1e-3);
        assert_eq!(cs_voronoi(req, &ledger, &g, &damped).unwrap(), 1);
    }

    #[test]
    fn cs_voronoi_rejects_nonpositive_alpha() {
        assert!(CsVoronoiConfig::new(0.0, Smoothing::None).is_err());
        assert!(CsVoronoiConfig::new(-1.0, Smoothing::Damped).is_err());
        assert!(CsVoronoiConfig::new(f64::NAN, Smoothing::None).is_err());
    }

    #[test]
    fn cs_voronoi_equal_scores_pick_lowest_id() {
        let g = worked_instance();
        let ledger = CapacityLedger::from_remaining(vec![1, 1]);
        let cfg = CsVoronoiConfig::new(0.5, Smoothing::None).unwrap();
        assert_eq!(cs_voronoi(p(2, 2), &ledger, &g, &cfg).unwrap(), 0);
    }

    #[test]
    fn hysteresis_rules() {
        // f0 at (1,1), f1 at (4,1); request at (3,1): d0 = 2, d1 = 1
        let g = GridInstance::new(1, 5, &[(p(1, 1), 3), (p(4, 1), 3)]).unwrap();
        let ledger = CapacityLedger::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sticky = HysteresisConfig { slack: 1 };
        // previous at d_min + slack is retained
        assert_eq!(
            greedy_with_hysteresis(p(3, 1), &ledger, &g, &sticky, Some(0), &mut rng).unwrap(),
            0
        );
        // zero slack falls back to the nearest
        let flat = HysteresisConfig { slack: 0 };
        assert_eq!(
            greedy_with_hysteresis(p(3, 1), &ledger, &g, &flat, Some(0), &mut rng).unwrap(),
            1
        );
        // a full previous choice is ignored
        let drained = CapacityLedger::from_remaining(vec![0, 3]);
        assert_eq!(
            greedy_with_hysteresis(p(2, 1), &drained, &g, &sticky, Some(0), &mut rng).unwrap(),
            1
        );
    }

    #[test]
    fn hysteresis_without_history_matches_randomized_greedy() {
        let g = worked_instance();
        let ledger = CapacityLedger::new(&g);
        let cfg = HysteresisConfig { slack: 3 };
        for seed in 0..50 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(
                greedy_with_hysteresis(p(2, 2), &ledger, &g, &cfg, None, &mut a).unwrap(),
                randomized_greedy(p(2, 2), &ledger, &g, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn choose_threads_previous_choice() {
        let g = worked_instance();
        let ledger = CapacityLedger::new(&g);
        let mut prev = None;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = OnlinePolicy::Greedy
            .choose(p(3, 2), &ledger, &g, &mut prev, &mut rng)
            .unwrap();
        assert_eq!((f, prev), (1, Some(1)));
    }
}
