//! Synthetic scenes, simulated demonstrations and reference oracles.
//!
//! Scenes are unions of analytic patches sampled uniformly by area, pushed
//! along the local normal by clipped Gaussian noise, plus uniform clutter in
//! the padded bounding box. Every generator takes an explicit seed.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{bounds_of, PointCloud};
use crate::primitives::{fit, refit, PcaFrame, PolySurface, ShapeKind, ShapeModel};
use crate::segmentation::{
    classify_inliers, score, ContactPointSet, ContactSource, Engine, SegmentationConfig, SegmentationError,
    SegmentationSnapshot,
};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error("no model reached {min_inliers} inliers within {iterations} iterations")]
    NoModel { iterations: u64, min_inliers: usize },
}

/// Orthonormal right-handed frame with `w` along `normal` and `u` along the
/// in-plane part of `u_hint`. No sign canonicalization.
pub fn orthonormal_frame(origin: Vec3, u_hint: Vec3, normal: Vec3) -> PcaFrame {
    let w = normal.normalize();
    let u = (u_hint - w * u_hint.dot(&w)).normalize();
    PcaFrame {
        origin,
        u,
        v: w.cross(&u),
        w,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchFrame {
    pub origin: [f64; 3],
    pub u_axis: [f64; 3],
    pub normal: [f64; 3],
}

impl PatchFrame {
    pub fn frame(&self) -> PcaFrame {
        orthonormal_frame(self.origin.into(), self.u_axis.into(), self.normal.into())
    }
}

/// One analytic surface piece of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PatchShape {
    /// Rectangle `u_range × v_range` in the frame's `(u, v)` plane.
    Plane {
        frame: PatchFrame,
        u_range: [f64; 2],
        v_range: [f64; 2],
    },
    /// Spherical cap of polar angle up to `max_polar` around `axis`
    /// (`π` gives the full sphere). Parameters are `(polar, azimuth)`.
    Sphere {
        center: [f64; 3],
        radius: f64,
        axis: [f64; 3],
        max_polar: f64,
    },
    /// Height field `w = f(u, v)` over `u_range × v_range`; 6 or 10
    /// coefficients in monomial order `1, u, v, u², uv, v², u³, u²v, uv², v³`.
    Poly {
        frame: PatchFrame,
        u_range: [f64; 2],
        v_range: [f64; 2],
        coeffs: Vec<f64>,
    },
}

fn sphere_basis(axis: Vec3) -> (Vec3, Vec3, Vec3) {
    let a = axis.normalize();
    let mut k = 0;
    for i in 1..3 {
        if a[i].abs() < a[k].abs() {
            k = i;
        }
    }
    let mut hint = Vec3::zeros();
    hint[k] = 1.0;
    let f = orthonormal_frame(Vec3::zeros(), hint, a);
    (f.u, f.v, f.w)
}

impl PatchShape {
    fn validate(&self) -> Result<(), String> {
        let range_ok = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        match self {
            PatchShape::Plane { u_range, v_range, .. } => {
                if !range_ok(u_range) || !range_ok(v_range) {
                    return Err("plane ranges must be increasing".into());
                }
            }
            PatchShape::Sphere { radius, max_polar, axis, .. } => {
                if !(*radius > 0.0) || !(*max_polar > 0.0 && *max_polar <= std::f64::consts::PI) {
                    return Err("sphere needs radius > 0 and max_polar in (0, π]".into());
                }
                if Vec3::from(*axis).norm() == 0.0 {
                    return Err("sphere axis must be non-zero".into());
                }
            }
            PatchShape::Poly { u_range, v_range, coeffs, .. } => {
                if !range_ok(u_range) || !range_ok(v_range) {
                    return Err("polynomial ranges must be increasing".into());
                }
                if coeffs.len() != 6 && coeffs.len() != 10 {
                    return Err("polynomial needs 6 or 10 coefficients".into());
                }
            }
        }
        Ok(())
    }

    fn poly(&self) -> Option<PolySurface> {
        match self {
            PatchShape::Poly { frame, coeffs, .. } => Some(PolySurface {
                order: if coeffs.len() == 6 { 2 } else { 3 },
                frame: frame.frame(),
                coeffs: coeffs.clone(),
            }),
            _ => None,
        }
    }

    /// The analytic model of this patch.
    pub fn model(&self) -> ShapeModel {
        match self {
            PatchShape::Plane { frame, .. } => {
                let f = frame.frame();
                ShapeModel::Plane {
                    normal: f.w,
                    offset: f.w.dot(&f.origin),
                }
            }
            PatchShape::Sphere { center, radius, .. } => ShapeModel::Sphere {
                center: (*center).into(),
                radius: *radius,
            },
            PatchShape::Poly { .. } => ShapeModel::Poly(self.poly().expect("poly patch")),
        }
    }

    /// Surface point and unit normal at patch parameters.
    pub fn point(&self, a: f64, b: f64) -> (Vec3, Vec3) {
        match self {
            PatchShape::Plane { frame, .. } => {
                let f = frame.frame();
                (f.to_world(&Vec3::new(a, b, 0.0)), f.w)
            }
            PatchShape::Sphere { center, radius, axis, .. } => {
                let (e1, e2, e3) = sphere_basis((*axis).into());
                let n = e1 * (a.sin() * b.cos()) + e2 * (a.sin() * b.sin()) + e3 * a.cos();
                (Vec3::from(*center) + n * *radius, n)
            }
            PatchShape::Poly { .. } => {
                let p = self.poly().expect("poly patch");
                let (fu, fv) = p.gradient(a, b);
                let pos = p.frame.to_world(&Vec3::new(a, b, p.height(a, b)));
                let n = p.frame.direction_to_world(&Vec3::new(-fu, -fv, 1.0)).normalize();
                (pos, n)
            }
        }
    }

    fn area_element(&self, a: f64, b: f64) -> f64 {
        match self {
            PatchShape::Poly { .. } => {
                let (fu, fv) = self.poly().expect("poly patch").gradient(a, b);
                (1.0 + fu * fu + fv * fv).sqrt()
            }
            _ => 1.0,
        }
    }

    /// Surface area (midpoint rule for polynomial patches).
    pub fn area(&self) -> f64 {
        match self {
            PatchShape::Plane { u_range, v_range, .. } => (u_range[1] - u_range[0]) * (v_range[1] - v_range[0]),
            PatchShape::Sphere { radius, max_polar, .. } => {
                2.0 * std::f64::consts::PI * radius * radius * (1.0 - max_polar.cos())
            }
            PatchShape::Poly { u_range, v_range, .. } => {
                const N: usize = 256;
                let (du, dv) = ((u_range[1] - u_range[0]) / N as f64, (v_range[1] - v_range[0]) / N as f64);
                let mut sum = 0.0;
                for i in 0..N {
                    for j in 0..N {
                        let u = u_range[0] + (i as f64 + 0.5) * du;
                        let v = v_range[0] + (j as f64 + 0.5) * dv;
                        sum += self.area_element(u, v);
                    }
                }
                sum * du * dv
            }
        }
    }

    fn max_area_element(&self) -> f64 {
        match self {
            PatchShape::Poly { u_range, v_range, .. } => {
                const N: usize = 64;
                let mut m: f64 = 1.0;
                for i in 0..=N {
                    for j in 0..=N {
                        let u = u_range[0] + (u_range[1] - u_range[0]) * i as f64 / N as f64;
                        let v = v_range[0] + (v_range[1] - v_range[0]) * j as f64 / N as f64;
                        m = m.max(self.area_element(u, v));
                    }
                }
                m * 1.02
            }
            _ => 1.0,
        }
    }

    /// Area-uniform random parameters.
    fn sample_params(&self, rng: &mut ChaCha8Rng, bound: f64) -> (f64, f64) {
        match self {
            PatchShape::Plane { u_range, v_range, .. } | PatchShape::Poly { u_range, v_range, .. } => loop {
                let u = rng.random_range(u_range[0]..u_range[1]);
                let v = rng.random_range(v_range[0]..v_range[1]);
                if bound <= 1.0 || rng.random::<f64>() * bound < self.area_element(u, v) {
                    return (u, v);
                }
            },
            PatchShape::Sphere { max_polar, .. } => {
                let z = rng.random_range(max_polar.cos()..=1.0);
                let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
                (z.clamp(-1.0, 1.0).acos(), azimuth)
            }
        }
    }

    /// Distance from `p` to the unbounded analytic surface. Polynomial
    /// patches use Gauss-Newton foot-point iterations.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match self {
            PatchShape::Poly { .. } => {
                let poly = self.poly().expect("poly patch");
                let local = poly.frame.to_local(p);
                let (mut u, mut v) = (local.x, local.y);
                for _ in 0..50 {
                    let s = Vec3::new(u, v, poly.height(u, v));
                    let (fu, fv) = poly.gradient(u, v);
                    let (su, sv) = (Vec3::new(1.0, 0.0, fu), Vec3::new(0.0, 1.0, fv));
                    let r = s - local;
                    let (g1, g2) = (su.dot(&r), sv.dot(&r));
                    let (a, b, c) = (su.dot(&su), su.dot(&sv), sv.dot(&sv));
                    let det = a * c - b * b;
                    let du = (c * g1 - b * g2) / det;
                    let dv = (a * g2 - b * g1) / det;
                    u -= du;
                    v -= dv;
                    if du.abs() + dv.abs() < 1e-15 {
                        break;
                    }
                }
                (Vec3::new(u, v, poly.height(u, v)) - local).norm()
            }
            _ => self.model().error(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub shape: PatchShape,
    /// Points per square meter.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub patches: Vec<PatchSpec>,
    /// Normal noise standard deviation in meters.
    pub noise_sigma: f64,
    /// Share of clutter points in the final cloud.
    #[serde(default)]
    pub clutter_fraction: f64,
    /// Padding of the clutter box around the patch points.
    #[serde(default = "default_clutter_margin")]
    pub clutter_margin: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clutter_margin() -> f64 {
    0.02
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.patches.is_empty() {
            return bad("scene has no patches".into());
        }
        for (i, p) in self.patches.iter().enumerate() {
            if !(p.density > 0.0 && p.density.is_finite()) {
                return bad(format!("patch {i}: density must be positive"));
            }
            p.shape.validate().map_err(|m| SynthError::InvalidSpec(format!("patch {i}: {m}")))?;
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return bad("clutter_fraction must lie in [0, 1)".into());
        }
        if !(self.clutter_margin >= 0.0 && self.clutter_margin.is_finite()) {
            return bad("clutter_margin must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-point generator record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patches: Vec<PatchShape>,
    /// Patch index per point; `None` for clutter.
    pub labels: Vec<Option<usize>>,
    /// Signed normal displacement per point; `None` for clutter.
    pub offsets: Vec<Option<f64>>,
}

impl GroundTruth {
    pub fn patch_points(&self, patch: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == Some(patch)).collect()
    }

    pub fn is_clutter(&self, i: usize) -> bool {
        self.labels[i].is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub truth: GroundTruth,
}

fn clipped_normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 4.0 * sigma {
            return x;
        }
    }
}

/// Samples the scene. Patches are generated in order, then clutter.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut offsets = Vec::new();
    for (id, patch) in spec.patches.iter().enumerate() {
        let shape = &patch.shape;
        let count = (patch.density * shape.area()).round() as usize;
        let bound = shape.max_area_element();
        for _ in 0..count {
            let (a, b) = shape.sample_params(&mut rng, bound);
            let (p, n) = shape.point(a, b);
            let d = clipped_normal(&mut rng, spec.noise_sigma);
            points.push(p + n * d);
            labels.push(Some(id));
            offsets.push(Some(d));
        }
    }
    if spec.clutter_fraction > 0.0 && !points.is_empty() {
        let (lo, hi) = bounds_of(&points).expect("non-empty");
        let pad = Vec3::repeat(spec.clutter_margin);
        let (lo, hi) = (lo - pad, hi + pad);
        let n = points.len() as f64;
        let count = (spec.clutter_fraction * n / (1.0 - spec.clutter_fraction)).round() as usize;
        for _ in 0..count {
            let mut p = Vec3::zeros();
            for k in 0..3 {
                p[k] = if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] };
            }
            points.push(p);
            labels.push(None);
            offsets.push(None);
        }
    }
    let cloud = PointCloud::new(points).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok(Scene {
        cloud,
        truth: GroundTruth {
            patches: spec.patches.iter().map(|p| p.shape.clone()).collect(),
            labels,
            offsets,
        },
    })
}

/// Interval of the normalized path parameter where the tool is held off the
/// surface by `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftSpan {
    pub from: f64,
    pub to: f64,
    pub height: f64,
}

/// A demonstrated sweep over one patch in its parameter domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoPath {
    pub patch: usize,
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Number of parallel passes; consecutive passes alternate direction.
    #[serde(default = "one")]
    pub passes: usize,
    /// Distance between the first and last pass, perpendicular to the sweep.
    #[serde(default)]
    pub lateral: f64,
    /// Parameter-domain distance between samples.
    pub spacing: f64,
    /// Normal noise of the demonstrated positions.
    #[serde(default)]
    pub sigma: f64,
    /// A sample is in contact iff its distance to the surface is at most this.
    #[serde(default = "default_gate")]
    pub gate_margin: f64,
    /// Emitted points per contact-point revision.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lift: Vec<LiftSpan>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_gate() -> f64 {
    0.001
}

fn default_batch() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStream {
    /// Cumulative contact-point revisions, one per batch.
    pub revisions: Vec<ContactPointSet>,
    pub samples: usize,
    pub emitted: usize,
}

impl DemoStream {
    pub fn last(&self) -> Option<&ContactPointSet> {
        self.revisions.last()
    }
}

fn demo_params(path: &DemoPath) -> Vec<(f64, [f64; 2])> {
    let (s, e) = (nalgebra::Vector2::from(path.start), nalgebra::Vector2::from(path.end));
    let dir = e - s;
    let len = dir.norm();
    let side = if len > 0.0 {
        nalgebra::Vector2::new(-dir.y, dir.x) / len
    } else {
        nalgebra::Vector2::zeros()
    };
    let passes = path.passes.max(1);
    let per_pass = ((len / path.spacing).floor() as usize).max(1);
    let total = passes * (per_pass + 1);
    let mut out = Vec::with_capacity(total);
    for k in 0..passes {
        let shift = if passes > 1 {
            side * (path.lateral * (k as f64 / (passes - 1) as f64 - 0.5))
        } else {
            nalgebra::Vector2::zeros()
        };
        for m in 0..=per_pass {
            let t = m as f64 / per_pass as f64;
            let t = if k % 2 == 1 { 1.0 - t } else { t };
            let q = s + dir * t + shift;
            out.push((out.len() as f64 / (total - 1).max(1) as f64, [q.x, q.y]));
        }
    }
    out
}

/// Emulates a kinesthetic demonstration: samples along the path, displaced
/// by the lift profile and Gaussian noise along the normal, are emitted when
/// they pass the contact gate.
pub fn simulate_demo(truth: &GroundTruth, path: &DemoPath) -> Result<DemoStream, SynthError> {
    simulate_demos(truth, std::slice::from_ref(path))
}

/// Several paths demonstrated one after the other, each with its own seed and
/// batch size, accumulating into one contact point stream.
pub fn simulate_demos(truth: &GroundTruth, paths: &[DemoPath]) -> Result<DemoStream, SynthError> {
    let mut set = ContactPointSet::new();
    let mut revisions = Vec::new();
    let (mut samples, mut emitted) = (0, 0);
    for path in paths {
        let patch = truth
            .patches
            .get(path.patch)
            .ok_or_else(|| SynthError::InvalidSpec(format!("no patch {}", path.patch)))?;
        if !(path.spacing > 0.0) || path.batch_size == 0 || !(path.sigma >= 0.0) || !(path.gate_margin >= 0.0) {
            return Err(SynthError::InvalidSpec(
                "demo path needs spacing > 0, batch_size > 0, sigma ≥ 0".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(path.seed);
        let noise = (path.sigma > 0.0).then(|| Normal::new(0.0, path.sigma).expect("positive sigma"));
        let params = demo_params(path);
        let mut touched = Vec::new();
        for (s, [a, b]) in &params {
            let (p, n) = patch.point(*a, *b);
            let lift: f64 = path.lift.iter().filter(|l| *s >= l.from && *s <= l.to).map(|l| l.height).sum();
            let d = lift + noise.map_or(0.0, |dist| dist.sample(&mut rng));
            if d.abs() <= path.gate_margin {
                touched.push(p + n * d);
            }
        }
        if touched.is_empty() {
            log::warn!("demonstration path never touched patch {}", path.patch);
        }
        for batch in touched.chunks(path.batch_size) {
            set.add_batch(batch, ContactSource::Demonstrated)?;
            revisions.push(set.clone());
        }
        samples += params.len();
        emitted += touched.len();
    }
    Ok(DemoStream {
        revisions,
        samples,
        emitted,
    })
}

/// Classical RANSAC settings for the comparison baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    pub max_iterations: u64,
    pub min_inliers: usize,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: ShapeModel,
    pub score: f64,
    pub iterations: u64,
    pub snapshot: SegmentationSnapshot,
}

/// Samples from the object points until the incumbent reaches
/// `min_inliers` or `max_iterations` run out.
pub fn classical_ransac_baseline(cloud: &PointCloud, config: &BaselineConfig) -> Result<BaselineOutcome, SynthError> {
    let mut engine = Engine::new(config.segmentation.clone())?;
    let mut last: Option<SegmentationSnapshot> = None;
    while engine.iteration() < config.max_iterations {
        match engine.step_classical(cloud) {
            Ok(snap) => {
                let done = snap.object_inliers.len() >= config.min_inliers;
                last = Some(snap);
                if done {
                    break;
                }
            }
            Err(SegmentationError::NoCandidate) => {}
            Err(e) => return Err(e.into()),
        }
    }
    match last {
        Some(snap) if snap.object_inliers.len() >= config.min_inliers => Ok(BaselineOutcome {
            model: snap.model.clone(),
            score: snap.score,
            iterations: engine.iteration(),
            snapshot: snap,
        }),
        _ => Err(SynthError::NoModel {
            iterations: engine.iteration(),
            min_inliers: config.min_inliers,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub kind: ShapeKind,
    pub score: f64,
    pub model: ShapeModel,
}

/// Brute-force reference for the best `(kind, score)`: `trials` random
/// contact subsets per kind (alternating minimal and configured sizes), with
/// the best candidates of each kind refit on their inliers until the score
/// stops improving.
pub fn exhaustive_best_model(
    cloud: &PointCloud,
    cps: &ContactPointSet,
    config: &SegmentationConfig,
    trials: usize,
) -> Result<OracleResult, SynthError> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(SegmentationError::EmptyCloud.into());
    }
    if cps.len() < config.min_points() {
        return Err(SegmentationError::WaitingForInput {
            have: cps.len(),
            need: config.min_points(),
        }
        .into());
    }
    const KEEP: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5eed_0ac1_e000_u64);
    let positions = cps.positions();
    let evaluate = |m: &ShapeModel| -> f64 {
        let (oi, ci) = classify_inliers(m, cloud, cps, config.tau);
        score(oi.len(), cloud.len(), ci.len(), cps.len(), config.complexity.get(m.kind())).expect("valid counts")
    };
    let mut best: Option<OracleResult> = None;
    for kind in ShapeKind::ALL {
        if !config.is_enabled(kind) || kind.min_samples() > positions.len() {
            continue;
        }
        let mut top: Vec<(f64, ShapeModel)> = Vec::new();
        for t in 0..trials {
            let size = if t % 2 == 0 { kind.min_samples() } else { config.sample_size.min(positions.len()) };
            let idx = sample_indices(&mut rng, positions.len(), size);
            let subset: Vec<Vec3> = idx.iter().map(|i| positions[i]).collect();
            let Ok(m) = fit(kind, &subset) else { continue };
            let s = evaluate(&m);
            if top.len() < KEEP || s > top[KEEP - 1].0 {
                top.push((s, m));
                top.sort_by(|a, b| b.0.total_cmp(&a.0));
                top.truncate(KEEP);
            }
        }
        for (mut s, mut m) in top {
            for _ in 0..10 {
                let (oi, _) = classify_inliers(&m, cloud, cps, config.tau);
                let Ok(next) = refit(&m, &cloud.select(&oi)) else { break };
                let ns = evaluate(&next);
                if ns <= s {
                    break;
                }
                (s, m) = (ns, next);
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    s > b.score || (s == b.score && config.complexity.get(kind) < config.complexity.get(b.kind))
                }
            };
            if better {
                best = Some(OracleResult { kind, score: s, model: m });
            }
        }
    }
    best.ok_or_else(|| SegmentationError::NoCandidate.into())
}

/// Desk-scale composite test object: a 28 × 26 cm planar top at 10 cm height
/// and an S-shaped cubic side wall below its front edge.
pub mod presets {
    use super::*;

    /// Index of the cubic wall in [`composite`].
    pub const COMPOSITE_CURVED: usize = 1;

    const HALF_LEN: f64 = 0.14;
    const AMPLITUDE: f64 = 0.04;

    /// Wall height profile `A·(s³ − 0.6·s)`, `s = u / 0.14`. The odd profile
    /// keeps the wall's principal frame aligned with the generator frame.
    pub fn composite_wall_coeffs() -> Vec<f64> {
        let mut c = vec![0.0; 10];
        c[1] = -0.6 * AMPLITUDE / HALF_LEN;
        c[6] = AMPLITUDE / HALF_LEN.powi(3);
        c
    }

    pub fn composite(seed: u64) -> SceneSpec {
        SceneSpec {
            patches: vec![
                PatchSpec {
                    shape: PatchShape::Plane {
                        frame: PatchFrame {
                            origin: [0.0, 0.0, 0.10],
                            u_axis: [1.0, 0.0, 0.0],
                            normal: [0.0, 0.0, 1.0],
                        },
                        u_range: [-HALF_LEN, HALF_LEN],
                        v_range: [-0.13, 0.13],
                    },
                    density: 470_000.0,
                },
                PatchSpec {
                    shape: PatchShape::Poly {
                        frame: PatchFrame {
                            origin: [0.0, -0.13, 0.05],
                            u_axis: [1.0, 0.0, 0.0],
                            normal: [0.0, -1.0, 0.0],
                        },
                        u_range: [-HALF_LEN, HALF_LEN],
                        v_range: [-0.045, 0.045],
                        coeffs: composite_wall_coeffs(),
                    },
                    density: 470_000.0,
                },
            ],
            noise_sigma: 0.001,
            clutter_fraction: 0.10,
            clutter_margin: 0.02,
            seed,
        }
    }

    /// Zigzag demonstration over the middle of the curved wall.
    pub fn composite_demo(seed: u64) -> DemoPath {
        DemoPath {
            patch: COMPOSITE_CURVED,
            start: [-0.12, 0.0],
            end: [0.12, 0.0],
            passes: 4,
            lateral: 0.06,
            spacing: 0.006,
            sigma: 0.0005,
            gate_margin: 0.001,
            batch_size: 5,
            lift: Vec::new(),
            seed,
        }
    }

    /// A flat strip continuing tangentially into a parabolic ramp.
    pub fn ramp(seed: u64) -> SceneSpec {
        let frame = PatchFrame {
            origin: [0.0, 0.0, 0.0],
            u_axis: [1.0, 0.0, 0.0],
            normal: [0.0, 0.0, 1.0],
        };
        SceneSpec {
            patches: vec![
                PatchSpec {
                    shape: PatchShape::Plane {
                        frame,
                        u_range: [-0.06, 0.0],
                        v_range: [-0.05, 0.05],
                    },
                    density: 400_000.0,
                },
                PatchSpec {
                    shape: PatchShape::Poly {
                        frame,
                        u_range: [0.0, 0.12],
                        v_range: [-0.05, 0.05],
                        coeffs: vec![0.0, 0.0, 0.0, 4.0, 0.0, 0.0],
                    },
                    density: 400_000.0,
                },
            ],
            noise_sigma: 0.001,
            clutter_fraction: 0.05,
            clutter_margin: 0.02,
            seed,
        }
    }

    /// Index of the parabolic part of [`ramp`].
    pub const RAMP_CURVED: usize = 1;

    /// A sweep that starts on the flat strip and continues up the ramp.
    pub fn ramp_demo(seed: u64) -> Vec<DemoPath> {
        let leg = |patch, start, end, seed| DemoPath {
            patch,
            start,
            end,
            passes: 3,
            lateral: 0.06,
            spacing: 0.004,
            sigma: 0.0005,
            gate_margin: 0.001,
            batch_size: 5,
            lift: Vec::new(),
            seed,
        };
        vec![
            leg(0, [-0.05, 0.0], [0.0, 0.0], seed),
            leg(RAMP_CURVED, [0.004, 0.0], [0.11, 0.0], seed.wrapping_add(1)),
        ]
    }

    /// Horizontal and vertical planes holding 60 % and 40 % of the points.
    pub fn two_planes(seed: u64, points: usize) -> SceneSpec {
        let (a_area, b_area) = (0.30 * 0.20, 0.20 * 0.20);
        let a = PatchSpec {
            shape: PatchShape::Plane {
                frame: PatchFrame {
                    origin: [0.0, 0.0, 0.0],
                    u_axis: [1.0, 0.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                },
                u_range: [-0.15, 0.15],
                v_range: [-0.10, 0.10],
            },
            density: 0.6 * points as f64 / a_area,
        };
        let b = PatchSpec {
            shape: PatchShape::Plane {
                frame: PatchFrame {
                    origin: [0.20, 0.0, 0.12],
                    u_axis: [0.0, 1.0, 0.0],
                    normal: [1.0, 0.0, 0.0],
                },
                u_range: [-0.10, 0.10],
                v_range: [-0.10, 0.10],
            },
            density: 0.4 * points as f64 / b_area,
        };
        SceneSpec {
            patches: vec![a, b],
            noise_sigma: 0.001,
            clutter_fraction: 0.0,
            clutter_margin: 0.02,
            seed,
        }
    }

    /// Box-sanding analogue at quarter scale: a 40 × 11.25 cm top plane and
    /// spherical caps at its four corners.
    pub fn box_sanding(seed: u64) -> SceneSpec {
        let (hx, hy) = (0.20, 0.05625);
        let mut patches = vec![PatchSpec {
            shape: PatchShape::Plane {
                frame: PatchFrame {
                    origin: [0.0, 0.0, 0.1125],
                    u_axis: [1.0, 0.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                },
                u_range: [-hx, hx],
                v_range: [-hy, hy],
            },
            density: 200_000.0,
        }];
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            patches.push(PatchSpec {
                shape: PatchShape::Sphere {
                    center: [sx * (hx + 0.01), sy * (hy + 0.01), 0.1125],
                    radius: 0.02,
                    axis: [sx, sy, 1.0],
                    max_polar: 1.2,
                },
                density: 200_000.0,
            });
        }
        SceneSpec {
            patches,
            noise_sigma: 0.001,
            clutter_fraction: 0.05,
            clutter_margin: 0.02,
            seed,
        }
    }
}
