//! Workload generators: the benign families (uniform, clustered bursts) and
//! the adversarial templates (zone collapse, oscillation trap, batch-boundary
//! trap). All generators are pure functions of their parameters and seed,
//! and every emitted sequence is feasible and in bounds.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{derive_stream, stream, Request, RequestSequence, RngSeed};
use crate::error::{OfaError, Result};
use crate::grid::{manhattan_distance, GridInstance, GridPoint};

/// Collapse-phase requests fall within this L1 radius of the depleted center.
pub const ZONE_COLLAPSE_RADIUS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    UniformIid {
        n: usize,
    },
    ClusteredBursts {
        n: usize,
        centers: usize,
        sigma: f64,
        burst_len: usize,
    },
    ZoneCollapse {
        rows: u32,
        cols: u32,
        center_capacity: u32,
        inner_count: u32,
        far_offset: u32,
    },
    OscillationTrap {
        rows: u32,
        cols: u32,
        separation: u32,
        pairs: u32,
    },
    BatchBoundaryTrap {
        rows: u32,
        cols: u32,
        delta: u32,
        capacity: u32,
        #[serde(default)]
        offset: bool,
    },
}

impl WorkloadSpec {
    pub fn name(&self) -> &'static str {
        match self {
            WorkloadSpec::UniformIid { .. } => "uniform_iid",
            WorkloadSpec::ClusteredBursts { .. } => "clustered_bursts",
            WorkloadSpec::ZoneCollapse { .. } => "zone_collapse",
            WorkloadSpec::OscillationTrap { .. } => "oscillation_trap",
            WorkloadSpec::BatchBoundaryTrap { .. } => "batch_boundary_trap",
        }
    }

    /// Whether the workload draws requests on a caller-supplied instance.
    pub fn needs_instance(&self) -> bool {
        matches!(
            self,
            WorkloadSpec::UniformIid { .. } | WorkloadSpec::ClusteredBursts { .. }
        )
    }

    pub fn generate(
        &self,
        instance: Option<&GridInstance>,
        seed: RngSeed,
    ) -> Result<(GridInstance, RequestSequence)> {
        let need = || {
            instance.cloned().ok_or_else(|| {
                OfaError::ConfigInvalid(format!("workload {} needs an instance", self.name()))
            })
        };
        match *self {
            WorkloadSpec::UniformIid { n } => {
                let g = need()?;
                let seq = gen_uniform(&g, n, seed)?;
                Ok((g, seq))
            }
            WorkloadSpec::ClusteredBursts {
                n,
                centers,
                sigma,
                burst_len,
            } => {
                let g = need()?;
                let seq = gen_clustered(&g, n, centers, sigma, burst_len, seed)?;
                Ok((g, seq))
            }
            WorkloadSpec::ZoneCollapse {
                rows,
                cols,
                center_capacity,
                inner_count,
                far_offset,
            } => gen_zone_collapse(rows, cols, center_capacity, inner_count, far_offset, seed),
            WorkloadSpec::OscillationTrap {
                rows,
                cols,
                separation,
                pairs,
            } => gen_oscillation_trap(rows, cols, separation, pairs, seed),
            WorkloadSpec::BatchBoundaryTrap {
                rows,
                cols,
                delta,
                capacity,
                offset,
            } => gen_batch_boundary_trap(rows, cols, delta, capacity, offset, seed),
        }
    }
}

fn check_count(instance: &GridInstance, n: usize) -> Result<()> {
    let capacity = instance.total_capacity();
    if n as u64 > capacity {
        return Err(OfaError::InfeasibleRequestCount {
            requested: n,
            capacity,
        });
    }
    Ok(())
}

fn uniform_vertex<R: Rng + ?Sized>(instance: &GridInstance, rng: &mut R) -> GridPoint {
    GridPoint::new(
        rng.random_range(1..=instance.cols()),
        rng.random_range(1..=instance.rows()),
    )
}

pub fn gen_uniform(instance: &GridInstance, n: usize, seed: RngSeed) -> Result<RequestSequence> {
    check_count(instance, n)?;
    let mut rng = derive_stream(seed, stream::WORKLOAD);
    Ok(RequestSequence::from_points(
        (0..n).map(|_| uniform_vertex(instance, &mut rng)),
    ))
}

/// Bursts of `burst_len` requests, each burst around one of `centers`
/// uniformly drawn cluster centers. Offsets are isotropic Gaussian with
/// standard deviation `sigma`, rounded and clamped into the grid.
pub fn gen_clustered(
    instance: &GridInstance,
    n: usize,
    centers: usize,
    sigma: f64,
    burst_len: usize,
    seed: RngSeed,
) -> Result<RequestSequence> {
    check_count(instance, n)?;
    if centers == 0 || burst_len == 0 {
        return Err(OfaError::ConfigInvalid(
            "clustered bursts need centers >= 1 and burst_len >= 1".into(),
        ));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| OfaError::ConfigInvalid(format!("sigma {sigma}: {e}")))?;
    let mut rng = derive_stream(seed, stream::WORKLOAD);
    let cluster_centers: Vec<GridPoint> = (0..centers)
        .map(|_| uniform_vertex(instance, &mut rng))
        .collect();
    let clamp = |v: f64, hi: u32| v.round().clamp(1.0, f64::from(hi)) as u32;
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let center = *cluster_centers.choose(&mut rng).expect("centers >= 1");
        for _ in 0..burst_len.min(n - points.len()) {
            let dx = normal.sample(&mut rng);
            let dy = normal.sample(&mut rng);
            points.push(GridPoint::new(
                clamp(f64::from(center.x) + dx, instance.cols()),
                clamp(f64::from(center.y) + dy, instance.rows()),
            ));
        }
    }
    Ok(RequestSequence::from_points(points))
}

/// Central facility (capacity `C`) and a far facility (capacity `m`) at L1
/// distance `far_offset` from it. The sequence is `C` requests at the center
/// followed by `m` requests within [`ZONE_COLLAPSE_RADIUS`] of it.
pub fn gen_zone_collapse(
    rows: u32,
    cols: u32,
    center_capacity: u32,
    inner_count: u32,
    far_offset: u32,
    seed: RngSeed,
) -> Result<(GridInstance, RequestSequence)> {
    if rows == 0 || cols == 0 {
        return Err(OfaError::GeometryDoesNotFit("empty grid".into()));
    }
    let center = GridPoint::new(cols.div_ceil(2), rows.div_ceil(2));
    let room_x = cols - center.x;
    let room_y = rows - center.y;
    if far_offset == 0 || far_offset > room_x + room_y {
        return Err(OfaError::GeometryDoesNotFit(format!(
            "far facility at distance {far_offset} does not fit a {rows}x{cols} grid from {center}"
        )));
    }
    let step_x = far_offset.min(room_x);
    let far = GridPoint::new(center.x + step_x, center.y + (far_offset - step_x));
    let instance = GridInstance::new(rows, cols, &[(center, center_capacity), (far, inner_count)])?;

    let region: Vec<GridPoint> = instance
        .vertices()
        .filter(|&v| manhattan_distance(v, center) <= ZONE_COLLAPSE_RADIUS)
        .collect();
    let mut rng = derive_stream(seed, stream::WORKLOAD);
    let mut points = vec![center; center_capacity as usize];
    points.extend(
        (0..inner_count).map(|_| *region.choose(&mut rng).expect("center is in the region")),
    );
    Ok((instance, RequestSequence::from_points(points)))
}

/// `pairs` independent two-facility traps. Pair `i` sits on row
/// `1 + i * (2D + 1)` with unit-capacity facilities `F(L) = 2i` and
/// `F(R) = 2i + 1` at distance `D`; its requests are `R1` at the midpoint
/// then `R2` at `F(L)`. The horizontal position of each pair is seeded.
pub fn gen_oscillation_trap(
    rows: u32,
    cols: u32,
    separation: u32,
    pairs: u32,
    seed: RngSeed,
) -> Result<(GridInstance, RequestSequence)> {
    if separation < 2 || !separation.is_multiple_of(2) {
        return Err(OfaError::OddSeparation(separation));
    }
    if pairs == 0 {
        return Err(OfaError::GeometryDoesNotFit(
            "need at least one pair".into(),
        ));
    }
    let d = separation;
    let row_step = 2 * d + 1;
    let rows_needed = 1 + (pairs - 1) * row_step;
    if cols < d + 1 || rows < rows_needed {
        return Err(OfaError::GeometryDoesNotFit(format!(
            "{pairs} pair(s) at separation {d} need at least {rows_needed}x{} grid, got {rows}x{cols}",
            d + 1
        )));
    }
    let mut rng = derive_stream(seed, stream::WORKLOAD);
    let mut facilities = Vec::new();
    let mut points = Vec::new();
    for i in 0..pairs {
        let y = 1 + i * row_step;
        let x0 = rng.random_range(1..=cols - d);
        let left = GridPoint::new(x0, y);
        let right = GridPoint::new(x0 + d, y);
        facilities.push((left, 1));
        facilities.push((right, 1));
        points.push(GridPoint::new(x0 + d / 2, y));
        points.push(left);
    }
    let instance = GridInstance::new(rows, cols, &facilities)?;
    Ok((instance, RequestSequence::from_points(points)))
}

/// Three facilities on one row: `f0`, `f1` one step right of it, and `f2`
/// `delta` steps right of `f1`, each with capacity `C`. With `offset`, `f2`
/// moves one row down to break residual distance ties. The sequence is a
/// prelude of `C` requests at `f0`, then two groups of `C` requests at `f1`,
/// one per time step, so `B = C` freezes exactly three size-triggered
/// batches.
pub fn gen_batch_boundary_trap(
    rows: u32,
    cols: u32,
    delta: u32,
    capacity: u32,
    offset: bool,
    seed: RngSeed,
) -> Result<(GridInstance, RequestSequence)> {
    if delta < 2 || capacity == 0 {
        return Err(OfaError::GeometryDoesNotFit(format!(
            "need delta >= 2 and capacity >= 1, got delta={delta}, capacity={capacity}"
        )));
    }
    let min_rows = if offset { 2 } else { 1 };
    if cols < delta + 2 || rows < min_rows {
        return Err(OfaError::GeometryDoesNotFit(format!(
            "a line of {} vertices does not fit a {rows}x{cols} grid",
            delta + 2
        )));
    }
    let mut rng = derive_stream(seed, stream::WORKLOAD);
    let y = rng.random_range(1..=rows - u32::from(offset));
    let x0 = rng.random_range(1..=cols - delta - 1);
    let f0 = GridPoint::new(x0, y);
    let f1 = GridPoint::new(x0 + 1, y);
    let f2 = GridPoint::new(x0 + 1 + delta, y + u32::from(offset));
    let instance = GridInstance::new(
        rows,
        cols,
        &[(f0, capacity), (f1, capacity), (f2, capacity)],
    )?;
    let c = capacity as usize;
    let points = std::iter::repeat_n(f0, c).chain(std::iter::repeat_n(f1, 2 * c));
    Ok((instance, RequestSequence::from_points(points)))
}

/// Shifts every arrival after request `after` by `gap` idle steps. Used to
/// separate trap phases when the batch size exceeds the group size.
pub fn insert_gap(sequence: &RequestSequence, after: usize, gap: u64) -> Result<RequestSequence> {
    RequestSequence::new(
        sequence
            .requests()
            .iter()
            .enumerate()
            .map(|(i, r)| Request {
                location: r.location,
                arrival_time: if i > after {
                    r.arrival_time + gap
                } else {
                    r.arrival_time
                },
            })
            .collect(),
    )
}
