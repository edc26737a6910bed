//! Raster coverage planning over a surface patch.
//!
//! Lanes run parallel to the longest side of the minimum-area bounding
//! rectangle of the patch boundary, spaced `Δ = tool_diameter·(1 − overlap)`
//! and centred across the rectangle's short side. Each lane is clipped
//! against the boundary rings (holes included) and the resulting segments
//! are lifted onto the model surface as via poses. Cells the clipped raster
//! leaves out of reach get an extra lane of their own.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{convex_hull, point_segment_distance, signed_area, Polygon};
use crate::surface::SurfacePatch;
use crate::{Vec2, Vec3};

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("invalid coverage configuration: {0}")]
    InvalidConfig(String),
    #[error("polygon is degenerate (zero area or fewer than three distinct points)")]
    Degenerate,
    #[error("patch has no boundary to cover")]
    EmptyRegion,
    #[error("{0} models have no parameter domain")]
    UnsupportedKind(crate::ShapeKind),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionMode {
    /// Every segment is traversed the same way, with lift-off returns.
    Unidirectional,
    /// Alternate lanes reverse direction.
    Serpentine,
}

impl DirectionMode {
    fn as_str(self) -> &'static str {
        match self {
            DirectionMode::Unidirectional => "unidirectional",
            DirectionMode::Serpentine => "serpentine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub tool_diameter: f64,
    pub overlap: f64,
    /// Maximum 3D spacing of via points along a pass.
    pub step_along: f64,
    pub direction_mode: DirectionMode,
    /// Height of repositioning poses above the surface.
    pub clearance: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            tool_diameter: 0.03,
            overlap: 0.2,
            step_along: 0.003,
            direction_mode: DirectionMode::Unidirectional,
            clearance: 0.03,
        }
    }
}

impl CoverageConfig {
    /// Lane spacing `Δ`.
    pub fn spacing(&self) -> f64 {
        self.tool_diameter * (1.0 - self.overlap)
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let bad = |m: &str| Err(CoverageError::InvalidConfig(m.to_string()));
        if !(self.tool_diameter > 0.0 && self.tool_diameter.is_finite()) {
            return bad("tool_diameter must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1)");
        }
        if !(self.step_along > 0.0 && self.step_along.is_finite()) {
            return bad("step_along must be positive");
        }
        if !(self.clearance >= 0.0 && self.clearance.is_finite()) {
            return bad("clearance must be non-negative");
        }
        Ok(())
    }
}

/// Minimum-area enclosing rectangle. `width` is the longer side and lies
/// along `angle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingRect {
    pub angle: f64,
    pub width: f64,
    pub height: f64,
    pub center: [f64; 2],
}

impl BoundingRect {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Unit vector along the long side.
    pub fn axis(&self) -> Vec2 {
        Vec2::new(self.angle.cos(), self.angle.sin())
    }
}

fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

const TIE: f64 = 1e-12;

/// Minimum-area rectangle over the convex hull. The optimum has one side
/// collinear with a hull edge, so every hull edge direction is evaluated.
/// Area ties within `1e-12` relative go to the smaller angle.
pub fn min_bounding_rectangle(points: &[Vec2]) -> Result<BoundingRect, CoverageError> {
    let hull = convex_hull(points);
    if hull.len() < 3 || signed_area(&hull) <= 0.0 {
        return Err(CoverageError::Degenerate);
    }
    let n = hull.len();
    let mut best: Option<BoundingRect> = None;
    for i in 0..n {
        let e = (hull[(i + 1) % n] - hull[i]).normalize();
        let perp = Vec2::new(-e.y, e.x);
        let (mut a0, mut a1, mut b0, mut b1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let (a, b) = (p.dot(&e), p.dot(&perp));
            a0 = a0.min(a);
            a1 = a1.max(a);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        let (la, lb) = (a1 - a0, b1 - b0);
        let theta = e.y.atan2(e.x);
        let along = normalize_angle(theta);
        let across = normalize_angle(theta + FRAC_PI_2);
        let angle = if la > lb * (1.0 + TIE) {
            along
        } else if lb > la * (1.0 + TIE) {
            across
        } else {
            along.min(across)
        };
        let mid = e * ((a0 + a1) / 2.0) + perp * ((b0 + b1) / 2.0);
        let candidate = BoundingRect {
            angle,
            width: la.max(lb),
            height: la.min(lb),
            center: [mid.x, mid.y],
        };
        best = match best {
            None => Some(candidate),
            Some(b) => {
                let (ca, ba) = (candidate.area(), b.area());
                if ca < ba * (1.0 - TIE) || (ca <= ba * (1.0 + TIE) && candidate.angle < b.angle) {
                    Some(candidate)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or(CoverageError::Degenerate)
}

/// One raster line and its in-contact pieces, in traversal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    /// Signed distance of the lane from the rectangle's centre line.
    pub offset: f64,
    pub segments: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePlan {
    pub rect: BoundingRect,
    pub spacing: f64,
    pub lanes: Vec<Lane>,
}

impl LanePlan {
    /// All in-contact segments in traversal order.
    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.lanes
            .iter()
            .flat_map(|l| l.segments.iter())
            .map(|[a, b]| (Vec2::new(a[0], a[1]), Vec2::new(b[0], b[1])))
    }
}

/// Lane offsets across a band of width `height`: `ceil(height / Δ)` lanes
/// spaced `Δ`, centred so the outer gaps are equal and at most `Δ/2`.
pub fn lane_offsets(height: f64, spacing: f64) -> Vec<f64> {
    let count = ((height / spacing) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let first = (height - (count - 1) as f64 * spacing) / 2.0;
    (0..count).map(|k| first + k as f64 * spacing).collect()
}

/// Shorter clipped pieces are grazing touches, not contact.
const MIN_SEGMENT: f64 = 1e-9;

/// Segments of the line `{x : x·n = b}` inside the boundary rings, ordered
/// along `e`.
fn clip_line(boundary: &[Polygon], e: Vec2, n: Vec2, b: f64) -> Vec<[[f64; 2]; 2]> {
    let mut crossings: Vec<f64> = Vec::new();
    for ring in boundary {
        let m = ring.len();
        for i in 0..m {
            let (p, q) = (ring[i], ring[(i + 1) % m]);
            let (pb, qb) = (p.dot(&n), q.dot(&n));
            if (pb > b) != (qb > b) {
                let t = (b - pb) / (qb - pb);
                crossings.push(p.dot(&e) + t * (q.dot(&e) - p.dot(&e)));
            }
        }
    }
    crossings.sort_by(f64::total_cmp);
    crossings
        .chunks_exact(2)
        .filter(|w| w[1] - w[0] > MIN_SEGMENT)
        .map(|w| {
            let s = e * w[0] + n * b;
            let t = e * w[1] + n * b;
            [[s.x, s.y], [t.x, t.y]]
        })
        .collect()
}

/// Lane geometry shared by the planners.
struct Raster<'a> {
    boundary: &'a [Polygon],
    rect: BoundingRect,
    e: Vec2,
    n: Vec2,
    /// `x·n` of the rectangle's centre line.
    mid: f64,
}

impl<'a> Raster<'a> {
    fn new(boundary: &'a [Polygon], config: &CoverageConfig) -> Result<Self, CoverageError> {
        config.validate()?;
        if boundary.is_empty() {
            return Err(CoverageError::EmptyRegion);
        }
        let all: Vec<Vec2> = boundary.iter().flatten().copied().collect();
        let rect = min_bounding_rectangle(&all)?;
        let e = rect.axis();
        let n = Vec2::new(-e.y, e.x);
        let mid = Vec2::new(rect.center[0], rect.center[1]).dot(&n);
        Ok(Self { boundary, rect, e, n, mid })
    }

    /// The lane `offset` from the centre line, or `None` if it misses the
    /// region.
    fn lane(&self, offset: f64) -> Option<Lane> {
        let segments = clip_line(self.boundary, self.e, self.n, self.mid + offset);
        (!segments.is_empty()).then_some(Lane { offset, segments })
    }

    fn base_lanes(&self, spacing: f64) -> Vec<Lane> {
        lane_offsets(self.rect.height, spacing)
            .into_iter()
            .filter_map(|off| self.lane(off - self.rect.height / 2.0))
            .collect()
    }

    /// Orders lanes across the rectangle and applies the direction mode.
    fn finish(self, mut lanes: Vec<Lane>, config: &CoverageConfig) -> LanePlan {
        lanes.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        if config.direction_mode == DirectionMode::Serpentine {
            for lane in lanes.iter_mut().skip(1).step_by(2) {
                lane.segments.reverse();
                for s in &mut lane.segments {
                    s.swap(0, 1);
                }
            }
        }
        LanePlan {
            rect: self.rect,
            spacing: config.spacing(),
            lanes,
        }
    }
}

/// Clips raster lanes against the boundary rings.
pub fn plan_lanes(boundary: &[Polygon], config: &CoverageConfig) -> Result<LanePlan, CoverageError> {
    let raster = Raster::new(boundary, config)?;
    let lanes = raster.base_lanes(config.spacing());
    Ok(raster.finish(lanes, config))
}

/// [`plan_lanes`] over a patch, plus an extra lane through every occupied
/// cell that the raster leaves farther than `Δ/2 + h/2` from contact, which
/// happens next to notches and narrow strips left by crops.
pub fn plan_patch_lanes(patch: &SurfacePatch, config: &CoverageConfig) -> Result<LanePlan, CoverageError> {
    let raster = Raster::new(&patch.boundary, config)?;
    let mut lanes = raster.base_lanes(config.spacing());
    let reach = (config.spacing() + patch.grid.cell_size()) / 2.0 * (1.0 + 1e-9);
    let covered = |c: &Vec2, lanes: &[Lane]| {
        lanes.iter().flat_map(|l| l.segments.iter()).any(|[a, b]| {
            point_segment_distance(c, &Vec2::new(a[0], a[1]), &Vec2::new(b[0], b[1])) <= reach
        })
    };
    let mut open: Vec<Vec2> = patch
        .grid
        .occupied_cells()
        .map(|(i, j)| patch.grid.cell_center(i, j))
        .filter(|c| !covered(c, &lanes))
        .collect();
    while let Some(c) = open.first().copied() {
        let added = raster.lane(c.dot(&raster.n) - raster.mid);
        open.remove(0);
        if let Some(lane) = added {
            let new = std::slice::from_ref(&lane);
            open.retain(|p| !covered(p, new));
            lanes.push(lane);
        }
    }
    Ok(raster.finish(lanes, config))
}

/// A single trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViaPose {
    pub position: Vec3,
    /// Tool axis, anti-parallel to the surface normal.
    pub approach: Vec3,
    /// Processing direction, tangent to the surface.
    pub travel: Vec3,
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<ViaPose>,
    pub lane_count: usize,
    /// Sum of 3D distances between consecutive contact poses of each pass.
    pub contact_length: f64,
    pub config: CoverageConfig,
    pub patch_hash: String,
}

/// Samples `[u0, u1]` of a curve at equal arc length so that no chord
/// exceeds `step`. Returns curve parameters in `[0, 1]`, endpoints included.
fn arc_length_samples(point: impl Fn(f64) -> Vec3, step: f64) -> Vec<f64> {
    const DENSE: usize = 64;
    let mut dense_len = 0.0;
    let mut prev = point(0.0);
    let mut table = vec![(0.0, 0.0)];
    // Enough subdivisions that the dense polyline resolves each output step.
    let rough = (point(1.0) - prev).norm();
    let pieces = DENSE.max((8.0 * rough / step).ceil() as usize);
    for k in 1..=pieces {
        let t = k as f64 / pieces as f64;
        let p = point(t);
        dense_len += (p - prev).norm();
        table.push((t, dense_len));
        prev = p;
    }
    let intervals = ((dense_len / step).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(intervals + 1);
    let mut cursor = 0;
    for k in 0..=intervals {
        if k == intervals {
            out.push(1.0);
            break;
        }
        let target = dense_len * k as f64 / intervals as f64;
        while cursor + 1 < table.len() && table[cursor + 1].1 < target {
            cursor += 1;
        }
        let (t0, s0) = table[cursor];
        let (t1, s1) = table[(cursor + 1).min(table.len() - 1)];
        let t = if s1 > s0 { t0 + (t1 - t0) * (target - s0) / (s1 - s0) } else { t0 };
        out.push(t);
    }
    out
}

/// Lifts planned lanes onto the patch surface.
pub fn lift_trajectory(plan: &LanePlan, patch: &SurfacePatch, config: &CoverageConfig) -> Result<Trajectory, CoverageError> {
    config.validate()?;
    let surface = patch
        .model
        .parametric()
        .ok_or(CoverageError::UnsupportedKind(patch.model.kind()))?;
    let mut poses: Vec<ViaPose> = Vec::new();
    let mut contact_length = 0.0;
    let above = |pose: &ViaPose| ViaPose {
        position: pose.position - pose.approach * config.clearance,
        contact: false,
        ..*pose
    };
    for (a, b) in plan.segments() {
        let d = b - a;
        let at = |t: f64| a + d * t;
        let params = arc_length_samples(
            |t| {
                let q = at(t);
                surface.point(q.x, q.y)
            },
            config.step_along,
        );
        let mut pass: Vec<ViaPose> = Vec::with_capacity(params.len());
        for t in params {
            let q = at(t);
            let normal = surface.normal(q.x, q.y);
            let approach = -normal;
            let (su, sv) = surface.tangents(q.x, q.y);
            let tangent = su * d.x + sv * d.y;
            let travel = (tangent - approach * tangent.dot(&approach)).normalize();
            pass.push(ViaPose {
                position: surface.point(q.x, q.y),
                approach,
                travel,
                contact: true,
            });
        }
        contact_length += pass.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum::<f64>();
        poses.push(above(&pass[0]));
        poses.extend_from_slice(&pass);
        poses.push(above(pass.last().expect("non-empty pass")));
    }
    Ok(Trajectory {
        poses,
        lane_count: plan.lanes.len(),
        contact_length,
        config: *config,
        patch_hash: patch.content_hash(),
    })
}

/// Plans and lifts in one call.
pub fn plan_patch(patch: &SurfacePatch, config: &CoverageConfig) -> Result<Trajectory, CoverageError> {
    if patch.boundary.is_empty() {
        return Err(CoverageError::EmptyRegion);
    }
    let plan = plan_patch_lanes(patch, config)?;
    lift_trajectory(&plan, patch, config)
}

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn triple(v: &Vec3) -> String {
    format!("[{},{},{}]", num(v.x), num(v.y), num(v.z))
}

/// Trajectory JSON with fixed field order and 9 significant digits.
pub fn trajectory_to_json(t: &Trajectory) -> String {
    let c = &t.config;
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"header\":{{\"version\":{},\"config\":{{\"tool_diameter\":{},\"overlap\":{},\"step_along\":{},\
         \"direction_mode\":\"{}\",\"clearance\":{}}},\"patch_hash\":\"{}\",\"lane_count\":{},\"contact_length\":{}}},\
         \"poses\":[",
        TRAJECTORY_FORMAT_VERSION,
        num(c.tool_diameter),
        num(c.overlap),
        num(c.step_along),
        c.direction_mode.as_str(),
        num(c.clearance),
        t.patch_hash,
        t.lane_count,
        num(t.contact_length),
    );
    for (i, p) in t.poses.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{{\"p\":{},\"a\":{},\"t\":{},\"contact\":{}}}",
            triple(&p.position),
            triple(&p.approach),
            triple(&p.travel),
            p.contact
        );
    }
    out.push_str("]}\n");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    header: HeaderRepr,
    poses: Vec<PoseRepr>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRepr {
    version: u32,
    config: CoverageConfig,
    patch_hash: String,
    lane_count: usize,
    contact_length: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    p: [f64; 3],
    a: [f64; 3],
    t: [f64; 3],
    contact: bool,
}

pub fn trajectory_from_json(text: &str) -> Result<Trajectory, CoverageError> {
    let r: FileRepr = serde_json::from_str(text).map_err(|e| CoverageError::Format(e.to_string()))?;
    if r.header.version != TRAJECTORY_FORMAT_VERSION {
        return Err(CoverageError::Format(format!("unsupported version {}", r.header.version)));
    }
    Ok(Trajectory {
        poses: r
            .poses
            .into_iter()
            .map(|p| ViaPose {
                position: p.p.into(),
                approach: p.a.into(),
                travel: p.t.into(),
                contact: p.contact,
            })
            .collect(),
        lane_count: r.header.lane_count,
        contact_length: r.header.contact_length,
        config: r.header.config,
        patch_hash: r.header.patch_hash,
    })
}

pub fn export_trajectory(t: &Trajectory, path: impl AsRef<Path>) -> Result<(), CoverageError> {
    fs::write(path, trajectory_to_json(t))?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, CoverageError> {
    trajectory_from_json(&fs::read_to_string(path)?)
}

/// One pose per row: `px,py,pz,ax,ay,az,tx,ty,tz,contact`.
pub fn trajectory_to_csv(t: &Trajectory) -> String {
    let mut out = String::from("px,py,pz,ax,ay,az,tx,ty,tz,contact\n");
    for p in &t.poses {
        let v = [p.position, p.approach, p.travel];
        let cols: Vec<String> = v.iter().flat_map(|x| x.iter().map(|c| num(*c)).collect::<Vec<_>>()).collect();
        let _ = writeln!(out, "{},{}", cols.join(","), u8::from(p.contact));
    }
    out
}
