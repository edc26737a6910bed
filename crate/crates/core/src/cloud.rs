//! Point cloud data model, index sets and voxel-grid spatial queries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("normal {index} is not unit length (norm {norm})")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("normal count {normals} does not match point count {points}")]
    NormalCount { points: usize, normals: usize },
    #[error("cloud is empty")]
    Empty,
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCell(f64),
    #[error("index {index} out of range for cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

const NORMAL_TOLERANCE: f64 = 1e-6;

/// The object points of a scene.
///
/// Point indices are stable for the lifetime of the cloud; inlier sets refer
/// to them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, CloudError> {
        Self::with_normals(points, None)
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self, CloudError> {
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CloudError::NonFinite { index });
        }
        if let Some(normals) = &normals {
            if normals.len() != points.len() {
                return Err(CloudError::NormalCount {
                    points: points.len(),
                    normals: normals.len(),
                });
            }
            for (index, n) in normals.iter().enumerate() {
                let norm = n.norm();
                if !norm.is_finite() || (norm - 1.0).abs() > NORMAL_TOLERANCE {
                    return Err(CloudError::NonUnitNormal { index, norm });
                }
            }
        }
        Ok(Self {
            points,
            normals,
            frame_id: "world".to_string(),
        })
    }

    pub fn with_frame_id(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> Vec3 {
        self.points[index]
    }

    /// Gathers the positions of an index set.
    pub fn select(&self, indices: &PointIndexSet) -> Vec<Vec3> {
        indices.iter().map(|i| self.points[i]).collect()
    }

    /// Axis-aligned bounding box `(min, max)`, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.points)
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Sorted, duplicate-free indices into a [`PointCloud`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointIndexSet(Vec<usize>);

impl PointIndexSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Builds a set from indices in any order; duplicates are dropped.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    /// Wraps indices that are already strictly increasing.
    ///
    /// Panics in debug builds if the order invariant does not hold.
    pub fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn intersection_len(&self, other: &PointIndexSet) -> usize {
        let (mut a, mut b, mut n) = (0, 0, 0);
        while a < self.0.len() && b < other.0.len() {
            match self.0[a].cmp(&other.0[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        n
    }

    pub fn check_bounds(&self, len: usize) -> Result<(), CloudError> {
        match self.0.last() {
            Some(&index) if index >= len => Err(CloudError::IndexOutOfRange { index, len }),
            _ => Ok(()),
        }
    }

    /// Maximal runs of consecutive indices as `[start, len]` pairs.
    pub fn to_runs(&self) -> Vec<[usize; 2]> {
        let mut runs: Vec<[usize; 2]> = Vec::new();
        for &i in &self.0 {
            match runs.last_mut() {
                Some(run) if run[0] + run[1] == i => run[1] += 1,
                _ => runs.push([i, 1]),
            }
        }
        runs
    }

    /// Inverse of [`to_runs`](Self::to_runs). Runs must be sorted, non-empty
    /// and non-overlapping.
    pub fn from_runs(runs: &[[usize; 2]]) -> Option<Self> {
        let mut out = Vec::with_capacity(runs.iter().map(|r| r[1]).sum());
        for &[start, len] in runs {
            if len == 0 || out.last().is_some_and(|&last| start <= last) {
                return None;
            }
            out.extend(start..start + len);
        }
        Some(Self(out))
    }
}

impl FromIterator<usize> for PointIndexSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

type CellKey = (i64, i64, i64);

fn cell_key(p: &Vec3, cell: f64) -> CellKey {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Uniform voxel grid over a cloud. Only occupied cells are stored.
#[derive(Debug, Clone)]
pub struct SpatialIndex<'a> {
    cloud: &'a PointCloud,
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
    lo: CellKey,
    hi: CellKey,
}

impl<'a> SpatialIndex<'a> {
    pub fn new(cloud: &'a PointCloud, cell: f64) -> Result<Self, CloudError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(CloudError::InvalidCell(cell));
        }
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in cloud.points().iter().enumerate() {
            let k = cell_key(p, cell);
            lo = (lo.0.min(k.0), lo.1.min(k.1), lo.2.min(k.2));
            hi = (hi.0.max(k.0), hi.1.max(k.1), hi.2.max(k.2));
            cells.entry(k).or_default().push(i);
        }
        Ok(Self {
            cloud,
            cell,
            cells,
            lo,
            hi,
        })
    }

    /// Picks a cell size giving a handful of points per occupied cell.
    pub fn with_auto_cell(cloud: &'a PointCloud) -> Result<Self, CloudError> {
        let (lo, hi) = cloud.bounds().ok_or(CloudError::Empty)?;
        let extent = hi - lo;
        let dims = extent.iter().filter(|e| **e > 0.0).count().max(1) as f64;
        let measure: f64 = extent.iter().filter(|e| **e > 0.0).product();
        let per_point = if measure > 0.0 {
            (measure / cloud.len() as f64).powf(1.0 / dims)
        } else {
            1.0
        };
        Self::new(cloud, (2.0 * per_point).max(1e-9))
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    /// Index of a point at minimum distance from `q`; ties go to the lowest index.
    pub fn nearest_point(&self, q: &Vec3) -> Result<usize, CloudError> {
        if self.cloud.is_empty() {
            return Err(CloudError::Empty);
        }
        let qc = cell_key(q, self.cell);
        // Shells beyond the grid extent in every axis hold nothing.
        let reach = [
            (qc.0 - self.lo.0).abs().max((self.hi.0 - qc.0).abs()),
            (qc.1 - self.lo.1).abs().max((self.hi.1 - qc.1).abs()),
            (qc.2 - self.lo.2).abs().max((self.hi.2 - qc.2).abs()),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let mut best: Option<(f64, usize)> = None;
        let consider = |i: usize, best: &mut Option<(f64, usize)>| {
            let d = (self.cloud.point(i) - q).norm_squared();
            match *best {
                Some((bd, bi)) if d > bd || (d == bd && i > bi) => {}
                _ => *best = Some((d, i)),
            }
        };
        for r in 0..=reach {
            let side = (2 * r + 1) as usize;
            if side.saturating_pow(3) > 4 * self.cloud.len() + 64 {
                return Ok(brute_force_nearest(self.cloud.points(), q));
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(members) = self.cells.get(&(qc.0 + dx, qc.1 + dy, qc.2 + dz)) {
                            for &i in members {
                                consider(i, &mut best);
                            }
                        }
                    }
                }
            }
            if let Some((bd, _)) = best {
                // Unvisited cells lie at least r cells away.
                let bound = r as f64 * self.cell;
                if bd.sqrt() < bound {
                    break;
                }
            }
        }
        Ok(best.map(|(_, i)| i).expect("non-empty cloud has a nearest point"))
    }

    /// Indices of all points with distance `<= radius`, ascending.
    pub fn within_radius(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let r = (radius / self.cell).ceil() as i64 + 1;
        let qc = cell_key(q, self.cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        if (2 * r + 1).saturating_pow(3) as usize > 4 * self.cloud.len() + 64 {
            out.extend(
                (0..self.cloud.len()).filter(|&i| (self.cloud.point(i) - q).norm_squared() <= r2),
            );
            return out;
        }
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if let Some(members) = self.cells.get(&(qc.0 + dx, qc.1 + dy, qc.2 + dz)) {
                        out.extend(
                            members
                                .iter()
                                .copied()
                                .filter(|&i| (self.cloud.point(i) - q).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

pub(crate) fn brute_force_nearest(points: &[Vec3], q: &Vec3) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Replaces the points of every occupied voxel with their centroid.
///
/// Voxels are anchored at the world origin and emitted in order of their
/// first member, which makes the operation idempotent.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud, CloudError> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(CloudError::InvalidCell(cell));
    }
    let mut slot: HashMap<CellKey, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let next = members.len();
        let s = *slot.entry(cell_key(p, cell)).or_insert(next);
        if s == next {
            members.push(Vec::new());
        }
        members[s].push(i);
    }
    let points = members
        .iter()
        .map(|m| m.iter().map(|&i| cloud.point(i)).sum::<Vec3>() / m.len() as f64)
        .collect();
    let normals = cloud.normals().map(|normals| {
        members
            .iter()
            .map(|m| {
                let sum: Vec3 = m.iter().map(|&i| normals[i]).sum();
                let norm = sum.norm();
                if m.len() == 1 {
                    normals[m[0]]
                } else if norm > 1e-12 {
                    sum / norm
                } else {
                    normals[m[0]]
                }
            })
            .collect()
    });
    Ok(PointCloud::with_normals(points, normals)?.with_frame_id(cloud.frame_id()))
}
