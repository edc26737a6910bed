//! Bounded, editable surface patches over a fitted model.
//!
//! The object inliers are projected into the model's `(u, v)` parameter
//! domain and binned on a grid aligned to integer multiples of the cell
//! size. The occupied cells are dilated, small enclosed holes are filled,
//! and the result is meshed by lifting every cell corner onto the analytic
//! surface. Boundaries follow cell borders, so their area equals the
//! occupied cell count times `h²`.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{PointCloud, PointIndexSet};
use crate::geom::{is_simple, point_in_ring, Polygon};
use crate::primitives::{ParametricSurface, ShapeKind, ShapeModel};
use crate::{Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("{0} models have no parameter domain; patches need a plane or polynomial")]
    UnsupportedKind(ShapeKind),
    #[error("at least 3 object inliers are needed, got {0}")]
    TooFewInliers(usize),
    #[error("grid cell size must be positive, got {0}")]
    InvalidCell(f64),
    #[error("support grid would need {0} cells")]
    GridTooLarge(usize),
    #[error("grid has no occupied cells")]
    EmptyGrid,
    #[error("crop polygon is not a simple polygon")]
    InvalidPolygon,
    #[error("edit sequence {got} does not follow {last}")]
    EditOutOfOrder { last: u64, got: u64 },
    #[error("inlier index out of range")]
    BadIndex,
}

const MAX_CELLS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    /// Grid cell edge `h` in meters.
    pub cell: f64,
    /// Chebyshev dilation radius in cells.
    pub dilation: usize,
    /// Enclosed empty regions with fewer cells than this are filled.
    pub max_hole_cells: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            cell: 0.006,
            dilation: 1,
            max_hole_cells: 9,
        }
    }
}

/// Occupancy grid over the `(u, v)` domain. Cell `(i, j)` covers
/// `[(offset[0] + i)·h, (offset[0] + i + 1)·h) × [(offset[1] + j)·h, …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportGrid {
    cell: f64,
    offset: [i64; 2],
    nx: usize,
    ny: usize,
    occupied: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    cell: f64,
    offset: [i64; 2],
    size: [usize; 2],
    /// Occupied row-major cell indices as `[start, len]` runs.
    occupancy: Vec<[usize; 2]>,
}

impl Serialize for SupportGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let occupied: PointIndexSet = PointIndexSet::from_sorted(
            self.occupied.iter().enumerate().filter(|(_, o)| **o).map(|(i, _)| i).collect(),
        );
        GridRepr {
            cell: self.cell,
            offset: self.offset,
            size: [self.nx, self.ny],
            occupancy: occupied.to_runs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SupportGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = GridRepr::deserialize(d)?;
        if !(r.cell > 0.0 && r.cell.is_finite()) {
            return Err(D::Error::custom("grid cell must be positive"));
        }
        let total = r.size[0].checked_mul(r.size[1]).filter(|&t| t <= MAX_CELLS);
        let total = total.ok_or_else(|| D::Error::custom("grid too large"))?;
        let mut grid = SupportGrid::new(r.cell, r.offset, r.size[0], r.size[1]);
        let set = PointIndexSet::from_runs(&r.occupancy).ok_or_else(|| D::Error::custom("malformed occupancy runs"))?;
        set.check_bounds(total).map_err(|_| D::Error::custom("occupancy outside grid"))?;
        for i in set.iter() {
            grid.occupied[i] = true;
        }
        Ok(grid)
    }
}

impl SupportGrid {
    /// An empty grid.
    pub fn new(cell: f64, offset: [i64; 2], nx: usize, ny: usize) -> Self {
        Self {
            cell,
            offset,
            nx,
            ny,
            occupied: vec![false; nx * ny],
        }
    }

    /// Smallest grid holding the given absolute cell keys plus a one-cell
    /// empty border.
    pub fn from_keys(cell: f64, keys: &[[i64; 2]]) -> Result<Self, SurfaceError> {
        Self::from_keys_padded(cell, keys, 1)
    }

    fn from_keys_padded(cell: f64, keys: &[[i64; 2]], pad: i64) -> Result<Self, SurfaceError> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(SurfaceError::InvalidCell(cell));
        }
        let first = keys.first().ok_or(SurfaceError::EmptyGrid)?;
        let (mut lo, mut hi) = (*first, *first);
        for k in keys {
            lo = [lo[0].min(k[0]), lo[1].min(k[1])];
            hi = [hi[0].max(k[0]), hi[1].max(k[1])];
        }
        let nx = (hi[0] - lo[0] + 1 + 2 * pad) as usize;
        let ny = (hi[1] - lo[1] + 1 + 2 * pad) as usize;
        match nx.checked_mul(ny) {
            Some(t) if t <= MAX_CELLS => {}
            other => return Err(SurfaceError::GridTooLarge(other.unwrap_or(usize::MAX))),
        }
        let offset = [lo[0] - pad, lo[1] - pad];
        let mut grid = Self::new(cell, offset, nx, ny);
        for k in keys {
            let (i, j) = ((k[0] - offset[0]) as usize, (k[1] - offset[1]) as usize);
            grid.set(i, j, true);
        }
        Ok(grid)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn offset(&self) -> [i64; 2] {
        self.offset
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// `(u, v)` of the lower-left corner of cell `(0, 0)`.
    pub fn origin(&self) -> Vec2 {
        Vec2::new(self.offset[0] as f64 * self.cell, self.offset[1] as f64 * self.cell)
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        i < self.nx && j < self.ny && self.occupied[j * self.nx + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.occupied[j * self.nx + i] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied_count() == 0
    }

    /// Occupied cells in row-major order.
    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.occupied
            .iter()
            .enumerate()
            .filter(|(_, o)| **o)
            .map(|(k, _)| (k % self.nx, k / self.nx))
    }

    /// Lattice point `(offset + (i, j))·h` in the parameter domain.
    pub fn corner(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            (self.offset[0] + i as i64) as f64 * self.cell,
            (self.offset[1] + j as i64) as f64 * self.cell,
        )
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            ((self.offset[0] + i as i64) as f64 + 0.5) * self.cell,
            ((self.offset[1] + j as i64) as f64 + 0.5) * self.cell,
        )
    }

    /// Square structuring element of radius `r` cells.
    pub fn dilate(&mut self, r: usize) {
        if r == 0 {
            return;
        }
        let (nx, ny) = (self.nx, self.ny);
        let mut rows = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if self.occupied[j * nx + i] {
                    for ii in i.saturating_sub(r)..=(i + r).min(nx - 1) {
                        rows[j * nx + ii] = true;
                    }
                }
            }
        }
        let mut out = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                if rows[j * nx + i] {
                    for jj in j.saturating_sub(r)..=(j + r).min(ny - 1) {
                        out[jj * nx + i] = true;
                    }
                }
            }
        }
        self.occupied = out;
    }

    /// Fills 4-connected empty components that do not touch the grid border
    /// and hold fewer than `max_cells` cells.
    pub fn fill_holes(&mut self, max_cells: usize) {
        let (nx, ny) = (self.nx, self.ny);
        let mut label = vec![usize::MAX; nx * ny];
        let mut queue = VecDeque::new();
        let mut component = Vec::new();
        for start in 0..nx * ny {
            if self.occupied[start] || label[start] != usize::MAX {
                continue;
            }
            component.clear();
            let mut touches_border = false;
            label[start] = start;
            queue.push_back(start);
            while let Some(k) = queue.pop_front() {
                component.push(k);
                let (i, j) = (k % nx, k / nx);
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    touches_border = true;
                }
                let mut visit = |n: usize| {
                    if !self.occupied[n] && label[n] == usize::MAX {
                        label[n] = start;
                        queue.push_back(n);
                    }
                };
                if i > 0 {
                    visit(k - 1);
                }
                if i + 1 < nx {
                    visit(k + 1);
                }
                if j > 0 {
                    visit(k - nx);
                }
                if j + 1 < ny {
                    visit(k + nx);
                }
            }
            if !touches_border && component.len() < max_cells {
                for &k in &component {
                    self.occupied[k] = true;
                }
            }
        }
    }
}

/// Occupancy of the inlier projections, dilated and hole-filled.
pub fn build_support(
    model: &ShapeModel,
    cloud: &PointCloud,
    oi: &PointIndexSet,
    config: &SurfaceConfig,
) -> Result<SupportGrid, SurfaceError> {
    let surface = model.parametric().ok_or(SurfaceError::UnsupportedKind(model.kind()))?;
    if oi.len() < 3 {
        return Err(SurfaceError::TooFewInliers(oi.len()));
    }
    oi.check_bounds(cloud.len()).map_err(|_| SurfaceError::BadIndex)?;
    if !(config.cell > 0.0 && config.cell.is_finite()) {
        return Err(SurfaceError::InvalidCell(config.cell));
    }
    let h = config.cell;
    let keys: Vec<[i64; 2]> = oi
        .iter()
        .map(|i| {
            let (u, v) = surface.project(&cloud.point(i));
            [(u / h).floor() as i64, (v / h).floor() as i64]
        })
        .collect();
    let mut grid = SupportGrid::from_keys_padded(h, &keys, config.dilation as i64 + 1)?;
    grid.dilate(config.dilation);
    grid.fill_holes(config.max_hole_cells);
    Ok(grid)
}

/// Boundary rings in integer lattice coordinates (absolute cell indices).
/// Outer rings are counterclockwise, holes clockwise; collinear vertices are
/// merged. Rings may touch at diagonal saddle corners but never cross.
pub fn trace_lattice_rings(grid: &SupportGrid) -> Vec<Vec<[i64; 2]>> {
    type P = [i64; 2];
    // Directed edges with the occupied cell on the left.
    let mut edges: Vec<(P, P)> = Vec::new();
    for (i, j) in grid.occupied_cells() {
        let (x, y) = (grid.offset[0] + i as i64, grid.offset[1] + j as i64);
        let empty = |di: i64, dj: i64| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            a < 0 || b < 0 || !grid.is_occupied(a as usize, b as usize)
        };
        if empty(0, -1) {
            edges.push(([x, y], [x + 1, y]));
        }
        if empty(1, 0) {
            edges.push(([x + 1, y], [x + 1, y + 1]));
        }
        if empty(0, 1) {
            edges.push(([x + 1, y + 1], [x, y + 1]));
        }
        if empty(-1, 0) {
            edges.push(([x, y + 1], [x, y]));
        }
    }
    let mut outgoing: HashMap<P, Vec<usize>> = HashMap::new();
    for (k, (a, _)) in edges.iter().enumerate() {
        outgoing.entry(*a).or_default().push(k);
    }
    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        let mut ring: Vec<P> = Vec::new();
        let mut k = first;
        loop {
            used[k] = true;
            let (a, b) = edges[k];
            ring.push(a);
            let dir = [b[0] - a[0], b[1] - a[1]];
            let candidates = &outgoing[&b];
            // Left turn first, then straight, then right.
            let rank = |e: usize| {
                let (c, d) = edges[e];
                let nd = [d[0] - c[0], d[1] - c[1]];
                let cross = dir[0] * nd[1] - dir[1] * nd[0];
                match cross {
                    c if c > 0 => 0,
                    0 => 1,
                    _ => 2,
                }
            };
            match candidates.iter().copied().filter(|&e| !used[e]).min_by_key(|&e| rank(e)) {
                Some(next) => k = next,
                None => break,
            }
        }
        rings.push(simplify_ring(ring));
    }
    rings
}

fn simplify_ring(ring: Vec<[i64; 2]>) -> Vec<[i64; 2]> {
    let n = ring.len();
    let mut out: Vec<[i64; 2]> = (0..n)
        .filter(|&i| {
            let (p, c, q) = (ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]);
            (c[0] - p[0]) * (q[1] - c[1]) - (c[1] - p[1]) * (q[0] - c[0]) != 0
        })
        .map(|i| ring[i])
        .collect();
    // Canonical start: lowest (y, x).
    if let Some(start) = (0..out.len()).min_by_key(|&i| (out[i][1], out[i][0])) {
        out.rotate_left(start);
    }
    out
}

/// Twice the signed area of a lattice ring, exact.
pub fn lattice_area2(ring: &[[i64; 2]]) -> i64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum()
}

/// Boundary polygons of the occupied region in `(u, v)`.
pub fn extract_boundary(grid: &SupportGrid) -> Result<Vec<Polygon>, SurfaceError> {
    if grid.is_empty() {
        return Err(SurfaceError::EmptyGrid);
    }
    let h = grid.cell;
    Ok(trace_lattice_rings(grid)
        .into_iter()
        .map(|r| r.into_iter().map(|[x, y]| Vec2::new(x as f64 * h, y as f64 * h)).collect())
        .collect())
}

/// Indexed triangle mesh with per-vertex normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Parameter-domain coordinates of each vertex.
    pub uv: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Two triangles per occupied cell with corners lifted onto the model.
pub fn triangulate(model: &ShapeModel, grid: &SupportGrid) -> Result<Mesh, SurfaceError> {
    let surface = model.parametric().ok_or(SurfaceError::UnsupportedKind(model.kind()))?;
    if grid.is_empty() {
        return Err(SurfaceError::EmptyGrid);
    }
    Ok(mesh_cells(&surface, grid))
}

fn mesh_cells(surface: &ParametricSurface, grid: &SupportGrid) -> Mesh {
    let mut mesh = Mesh::default();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertex = |mesh: &mut Mesh, i: usize, j: usize| -> usize {
        *index.entry((i, j)).or_insert_with(|| {
            let c = grid.corner(i, j);
            mesh.vertices.push(surface.point(c.x, c.y));
            mesh.normals.push(surface.normal(c.x, c.y));
            mesh.uv.push(c);
            mesh.vertices.len() - 1
        })
    };
    for (i, j) in grid.occupied_cells() {
        let a = vertex(&mut mesh, i, j);
        let b = vertex(&mut mesh, i + 1, j);
        let c = vertex(&mut mesh, i + 1, j + 1);
        let d = vertex(&mut mesh, i, j + 1);
        mesh.triangles.push([a, b, c]);
        mesh.triangles.push([a, c, d]);
    }
    mesh
}

/// ASCII PLY with vertex normals and triangle faces.
pub fn mesh_to_ply_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    let _ = writeln!(out, "element face {}", mesh.triangles.len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (p, n) in mesh.vertices.iter().zip(&mesh.normals) {
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

/// What a crop edit removes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropRegion {
    /// Simple polygon in `(u, v)`; cells whose centers fall inside are cleared.
    Polygon(Vec<[f64; 2]>),
    /// Absolute cell keys to clear.
    Cells(Vec<[i64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEdit {
    pub seq: u64,
    pub region: CropRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CropStatus {
    Applied { cleared: usize },
    /// The edit touched no occupied cell.
    NoOp,
    /// The edit removed the last occupied cell; the mesh is empty.
    Emptied { cleared: usize },
    /// The same edit was already applied.
    AlreadyApplied,
}

/// Model, support grid and derived mesh and boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePatch {
    pub model: ShapeModel,
    pub grid: SupportGrid,
    pub mesh: Mesh,
    pub boundary: Vec<Polygon>,
    pub edits: Vec<CropEdit>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchRepr {
    model: ShapeModel,
    grid: SupportGrid,
    boundary: Vec<Vec<[f64; 2]>>,
    edits: Vec<CropEdit>,
}

impl Serialize for SurfacePatch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PatchRepr {
            model: self.model.clone(),
            grid: self.grid.clone(),
            boundary: self
                .boundary
                .iter()
                .map(|r| r.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            edits: self.edits.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SurfacePatch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = PatchRepr::deserialize(d)?;
        // Mesh and boundary are derived from model and grid.
        SurfacePatch::from_parts(r.model, r.grid, r.edits).map_err(D::Error::custom)
    }
}

impl SurfacePatch {
    /// Builds the patch for a model and its object inliers.
    pub fn build(
        model: &ShapeModel,
        cloud: &PointCloud,
        oi: &PointIndexSet,
        config: &SurfaceConfig,
    ) -> Result<Self, SurfaceError> {
        let grid = build_support(model, cloud, oi, config)?;
        Self::from_parts(model.clone(), grid, Vec::new())
    }

    /// Derives mesh and boundary from a model and a (possibly empty) grid.
    pub fn from_parts(model: ShapeModel, grid: SupportGrid, edits: Vec<CropEdit>) -> Result<Self, SurfaceError> {
        let surface = model.parametric().ok_or(SurfaceError::UnsupportedKind(model.kind()))?;
        let (mesh, boundary) = if grid.is_empty() {
            (Mesh::default(), Vec::new())
        } else {
            (mesh_cells(&surface, &grid), extract_boundary(&grid)?)
        };
        Ok(Self {
            model,
            grid,
            mesh,
            boundary,
            edits,
        })
    }

    /// Whether every cell has been cropped away.
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn last_edit_seq(&self) -> Option<u64> {
        self.edits.last().map(|e| e.seq)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        crate::hash::sha256_hex(serde_json::to_string(self).expect("patch serializes").as_bytes())
    }

    /// Replays the edit log onto a freshly built grid.
    pub fn replay(model: &ShapeModel, base: SupportGrid, edits: &[CropEdit]) -> Result<Self, SurfaceError> {
        let mut patch = Self::from_parts(model.clone(), base, Vec::new())?;
        for e in edits {
            patch = apply_crop(&patch, e)?.0;
        }
        Ok(patch)
    }
}

/// Clears the cells selected by `edit` and rebuilds mesh and boundary.
pub fn apply_crop(patch: &SurfacePatch, edit: &CropEdit) -> Result<(SurfacePatch, CropStatus), SurfaceError> {
    if let Some(last) = patch.last_edit_seq() {
        if edit.seq <= last {
            if patch.edits.iter().any(|e| e == edit) {
                return Ok((patch.clone(), CropStatus::AlreadyApplied));
            }
            return Err(SurfaceError::EditOutOfOrder { last, got: edit.seq });
        }
    }
    let grid = &patch.grid;
    let mut next = grid.clone();
    let mut cleared = 0;
    match &edit.region {
        CropRegion::Polygon(vertices) => {
            let ring: Vec<Vec2> = vertices.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            if !is_simple(&ring) {
                return Err(SurfaceError::InvalidPolygon);
            }
            for (i, j) in grid.occupied_cells() {
                if point_in_ring(&grid.cell_center(i, j), &ring) {
                    next.set(i, j, false);
                    cleared += 1;
                }
            }
        }
        CropRegion::Cells(keys) => {
            for k in keys {
                let (i, j) = (k[0] - grid.offset[0], k[1] - grid.offset[1]);
                if i >= 0 && j >= 0 && grid.is_occupied(i as usize, j as usize) && next.is_occupied(i as usize, j as usize) {
                    next.set(i as usize, j as usize, false);
                    cleared += 1;
                }
            }
        }
    }
    if cleared == 0 {
        log::warn!("crop edit {} touched no occupied cell", edit.seq);
        return Ok((patch.clone(), CropStatus::NoOp));
    }
    let mut edits = patch.edits.clone();
    edits.push(edit.clone());
    let out = SurfacePatch::from_parts(patch.model.clone(), next, edits)?;
    let status = if out.is_empty() {
        CropStatus::Emptied { cleared }
    } else {
        CropStatus::Applied { cleared }
    };
    Ok((out, status))
}
