//! Discrete `rows x cols` grid with the Manhattan metric, capacitated
//! facilities, and the capacity ledger every run mutates.
//!
//! Coordinates are 1-based: `x` is the column in `1..=cols`, `y` the row in
//! `1..=rows`.

use serde::{Deserialize, Serialize};

use crate::error::{OfaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: u32,
    pub y: u32,
}

impl GridPoint {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

impl std::fmt::Display for GridPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// L1 distance. Pure arithmetic; the points need not share an instance.
#[inline]
pub fn manhattan_distance(a: GridPoint, b: GridPoint) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Facility {
    pub id: usize,
    pub location: GridPoint,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridInstance {
    rows: u32,
    cols: u32,
    facilities: Vec<Facility>,
}

impl GridInstance {
    /// Builds an instance from `(location, capacity)` pairs. Facility ids are
    /// assigned by list order.
    pub fn new(rows: u32, cols: u32, facilities: &[(GridPoint, u32)]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(OfaError::ConfigInvalid(format!(
                "grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        let mut instance = Self {
            rows,
            cols,
            facilities: Vec::with_capacity(facilities.len()),
        };
        for (id, &(location, capacity)) in facilities.iter().enumerate() {
            instance.check_point(location)?;
            instance.facilities.push(Facility {
                id,
                location,
                capacity,
            });
        }
        Ok(instance)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn facilities(&self) -> &[Facility] {
        &self.facilities
    }

    pub fn facility(&self, id: usize) -> &Facility {
        &self.facilities[id]
    }

    pub fn num_facilities(&self) -> usize {
        self.facilities.len()
    }

    pub fn total_capacity(&self) -> u64 {
        self.facilities.iter().map(|f| u64::from(f.capacity)).sum()
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        (1..=self.cols).contains(&p.x) && (1..=self.rows).contains(&p.y)
    }

    pub fn check_point(&self, p: GridPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(OfaError::OutOfBounds {
                point: p,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Distance from `p` to facility `id`.
    #[inline]
    pub fn distance_to(&self, p: GridPoint, id: usize) -> u32 {
        manhattan_distance(p, self.facilities[id].location)
    }

    /// All vertices in row-major order (`y` outer, `x` inner).
    pub fn vertices(&self) -> impl Iterator<Item = GridPoint> + '_ {
        (1..=self.rows).flat_map(move |y| (1..=self.cols).map(move |x| GridPoint::new(x, y)))
    }

    /// Serializable form using the instance file keys.
    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            rows: self.rows,
            cols: self.cols,
            facilities: self
                .facilities
                .iter()
                .map(|f| FacilitySpec {
                    x: f.location.x,
                    y: f.location.y,
                    capacity: f.capacity,
                })
                .collect(),
        }
    }
}

/// `(rows - 1) + (cols - 1)`, the largest L1 distance between two vertices.
pub fn diameter(instance: &GridInstance) -> u32 {
    (instance.rows - 1) + (instance.cols - 1)
}

/// On-disk instance document: `rows`, `cols`, `facilities = [{x, y, capacity}]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub rows: u32,
    pub cols: u32,
    pub facilities: Vec<FacilitySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilitySpec {
    pub x: u32,
    pub y: u32,
    pub capacity: u32,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<GridInstance> {
        let facilities: Vec<_> = self
            .facilities
            .iter()
            .map(|f| (GridPoint::new(f.x, f.y), f.capacity))
            .collect();
        GridInstance::new(self.rows, self.cols, &facilities)
    }
}

/// Remaining capacity per facility. Entries only ever go down, one unit per
/// commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityLedger {
    remcap: Vec<u32>,
}

impl CapacityLedger {
    pub fn new(instance: &GridInstance) -> Self {
        Self {
            remcap: instance.facilities.iter().map(|f| f.capacity).collect(),
        }
    }

    /// Ledger with explicit remaining capacities, mainly for tests and
    /// mid-run snapshots.
    pub fn from_remaining(remcap: Vec<u32>) -> Self {
        Self { remcap }
    }

    #[inline]
    pub fn remaining(&self, facility: usize) -> u32 {
        self.remcap[facility]
    }

    #[inline]
    pub fn is_available(&self, facility: usize) -> bool {
        self.remcap[facility] > 0
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.remcap
    }

    pub fn len(&self) -> usize {
        self.remcap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remcap.is_empty()
    }

    /// Ids of facilities with `remcap > 0`, ascending.
    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.remcap
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(id, _)| id)
    }

    /// Consumes one unit at `facility`.
    pub(crate) fn commit(&mut self, facility: usize) -> Result<()> {
        match self.remcap.get_mut(facility) {
            Some(r) if *r > 0 => {
                *r -= 1;
                Ok(())
            }
            _ => Err(OfaError::PolicyViolation { facility }),
        }
    }
}

pub fn total_remaining(ledger: &CapacityLedger) -> u64 {
    ledger.remcap.iter().map(|&r| u64::from(r)).sum()
}
