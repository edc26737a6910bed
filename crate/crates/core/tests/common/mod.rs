//! Scene builders and reference computations shared by the integration tests.
#![allow(dead_code)]

pub mod schema;

use contactseg::primitives::{PolySurface, ShapeModel};
use contactseg::surface::{apply_crop, CropEdit, CropRegion, CropStatus, SupportGrid, SurfacePatch};
use contactseg::synth::orthonormal_frame;
use contactseg::{Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.2 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A plane, quadratic or cubic model in a random pose.
pub fn random_surface_model(rng: &mut ChaCha8Rng) -> ShapeModel {
    let origin = Vec3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
    );
    let normal = unit_vector(rng);
    let mut hint = unit_vector(rng);
    while hint.dot(&normal).abs() > 0.9 {
        hint = unit_vector(rng);
    }
    let frame = orthonormal_frame(origin, hint, normal);
    let mut r = |a: f64| rng.random_range(-a..a);
    match r(3.0).abs() as usize {
        0 => ShapeModel::Plane {
            normal: frame.w,
            offset: frame.w.dot(&frame.origin),
        },
        1 => ShapeModel::Poly(PolySurface {
            order: 2,
            frame,
            coeffs: vec![r(0.01), r(0.2), r(0.2), r(4.0), r(4.0), r(4.0)],
        }),
        _ => ShapeModel::Poly(PolySurface {
            order: 3,
            frame,
            coeffs: vec![
                r(0.01),
                r(0.2),
                r(0.2),
                r(3.0),
                r(3.0),
                r(3.0),
                r(20.0),
                r(20.0),
                r(20.0),
                r(20.0),
            ],
        }),
    }
}

/// Union of random ellipses on a lattice, dilated and hole-filled like a
/// support grid built from inliers.
pub fn random_grid(rng: &mut ChaCha8Rng, cell: f64) -> SupportGrid {
    loop {
        let nx = rng.random_range(24..56);
        let ny = rng.random_range(24..56);
        let offset = [rng.random_range(-30..0), rng.random_range(-30..0)];
        let mut grid = SupportGrid::new(cell, offset, nx, ny);
        for _ in 0..rng.random_range(1..5) {
            let c = Vec2::new(
                rng.random_range(4.0..nx as f64 - 4.0),
                rng.random_range(4.0..ny as f64 - 4.0),
            );
            let (a, b) = (rng.random_range(2.0..14.0), rng.random_range(2.0..14.0));
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, co) = t.sin_cos();
            for i in 1..nx - 1 {
                for j in 1..ny - 1 {
                    let d = Vec2::new(i as f64 + 0.5, j as f64 + 0.5) - c;
                    let (x, y) = (d.x * co + d.y * s, -d.x * s + d.y * co);
                    if (x / a).powi(2) + (y / b).powi(2) <= 1.0 {
                        grid.set(i, j, true);
                    }
                }
            }
        }
        grid.dilate(1);
        grid.fill_holes(9);
        if grid.occupied_count() >= 30 {
            return grid;
        }
    }
}

/// Random simple polygon: 3 or 4 points sorted by angle about their centroid.
pub fn random_crop_polygon(rng: &mut ChaCha8Rng, lo: Vec2, hi: Vec2) -> Vec<[f64; 2]> {
    let n = rng.random_range(3..5);
    let pad = (hi - lo) * 0.3;
    let mut pts: Vec<Vec2> = (0..n)
        .map(|_| {
            Vec2::new(
                rng.random_range(lo.x - pad.x..hi.x + pad.x),
                rng.random_range(lo.y - pad.y..hi.y + pad.y),
            )
        })
        .collect();
    let c = pts.iter().sum::<Vec2>() / n as f64;
    pts.sort_by(|a, b| (a.y - c.y).atan2(a.x - c.x).total_cmp(&(b.y - c.y).atan2(b.x - c.x)));
    pts.iter().map(|p| [p.x, p.y]).collect()
}

/// A random plane or polynomial patch after one or two random crops.
pub fn random_cropped_patch(seed: u64, cell: f64) -> SurfacePatch {
    let mut rng = rng(seed);
    loop {
        let model = random_surface_model(&mut rng);
        let grid = random_grid(&mut rng, cell);
        let (lo, hi) = grid_bounds(&grid);
        let mut patch = SurfacePatch::from_parts(model, grid, Vec::new()).expect("valid patch");
        let crops = rng.random_range(1..3);
        let mut ok = true;
        for seq in 1..=crops {
            let polygon = random_crop_polygon(&mut rng, lo, hi);
            let edit = CropEdit {
                seq,
                region: CropRegion::Polygon(polygon),
            };
            match apply_crop(&patch, &edit) {
                Ok((next, CropStatus::Applied { .. } | CropStatus::NoOp)) => patch = next,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && patch.grid.occupied_count() >= 10 {
            return patch;
        }
    }
}

pub fn grid_bounds(grid: &SupportGrid) -> (Vec2, Vec2) {
    let (nx, ny) = grid.dims();
    (grid.corner(0, 0), grid.corner(nx, ny))
}

/// Smallest bounding-rectangle area of `points` over directions
/// `k · step` in `[0°, 180°)`, and the minimizing angle.
pub fn sweep_min_area(points: &[Vec2], step_deg: f64) -> (f64, f64) {
    let steps = (180.0 / step_deg).round() as usize;
    (0..steps)
        .map(|k| {
            let t = (k as f64 * step_deg).to_radians();
            (rect_area_at(points, t), t)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty sweep")
}

/// Area of the bounding rectangle with one side along angle `t`.
pub fn rect_area_at(points: &[Vec2], t: f64) -> f64 {
    let (s, c) = t.sin_cos();
    let (mut a0, mut a1, mut b0, mut b1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        let a = p.x * c + p.y * s;
        let b = -p.x * s + p.y * c;
        a0 = a0.min(a);
        a1 = a1.max(a);
        b0 = b0.min(b);
        b1 = b1.max(b);
    }
    (a1 - a0) * (b1 - b0)
}

/// Sweep followed by golden-section refinement around every sweep angle
/// whose area is within 1 % of the sweep minimum.
pub fn refined_min_area(points: &[Vec2], step_deg: f64) -> f64 {
    let step = step_deg.to_radians();
    let steps = (180.0 / step_deg).round() as usize;
    let areas: Vec<f64> = (0..steps).map(|k| rect_area_at(points, k as f64 * step)).collect();
    let raw = areas.iter().copied().fold(f64::MAX, f64::min);
    let mut best = raw;
    for (k, &a) in areas.iter().enumerate() {
        if a > raw * 1.01 {
            continue;
        }
        let (mut lo, mut hi) = ((k as f64 - 1.0) * step, (k as f64 + 1.0) * step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if rect_area_at(points, m1) < rect_area_at(points, m2) {
                hi = m2;
            } else {
                lo = m1;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        best = best.min(rect_area_at(points, (lo + hi) / 2.0)).min(rect_area_at(points, lo));
    }
    best
}

/// Exact one-sided sign test: probability of at least `wins` successes in
/// `wins + losses` fair coin flips.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += pmf;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64;
    }
    tail
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Distance from `p` to segment `ab`.
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((p - a).dot(&d) / len2).clamp(0.0, 1.0) };
    (a + d * t - p).norm()
}

/// Height `f(u, v)` with the monomials written out: `1, u, v, u², uv, v²,
/// u³, u²v, uv², v³`.
pub fn poly_height(coeffs: &[f64], u: f64, v: f64) -> f64 {
    let terms = [1.0, u, v, u * u, u * v, v * v, u * u * u, u * u * v, u * v * v, v * v * v];
    coeffs.iter().zip(terms).map(|(c, t)| c * t).sum()
}

/// Implicit surface function, positive on the side its normal points to.
pub fn implicit(model: &ShapeModel, p: &Vec3) -> f64 {
    match model {
        ShapeModel::Plane { normal, offset } => normal.dot(p) - offset,
        ShapeModel::Poly(poly) => {
            let d = p - poly.frame.origin;
            let (u, v, w) = (poly.frame.u.dot(&d), poly.frame.v.dot(&d), poly.frame.w.dot(&d));
            w - poly_height(&poly.coeffs, u, v)
        }
        other => panic!("no implicit form for {:?}", other.kind()),
    }
}

/// Unit normal from central differences of [`implicit`].
pub fn fd_normal(model: &ShapeModel, p: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = h;
        g[k] = (implicit(model, &(p + e)) - implicit(model, &(p - e))) / (2.0 * h);
    }
    g.normalize()
}

/// A 20 × 16 cm horizontal plane with light clutter, about 3,400 points.
pub fn plane_spec(seed: u64) -> contactseg::synth::SceneSpec {
    use contactseg::synth::{PatchFrame, PatchShape, PatchSpec, SceneSpec};
    SceneSpec {
        patches: vec![PatchSpec {
            shape: PatchShape::Plane {
                frame: PatchFrame {
                    origin: [0.0, 0.0, 0.0],
                    u_axis: [1.0, 0.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                },
                u_range: [-0.1, 0.1],
                v_range: [-0.08, 0.08],
            },
            density: 100_000.0,
        }],
        noise_sigma: 0.001,
        clutter_fraction: 0.05,
        clutter_margin: 0.02,
        seed,
    }
}

/// Three passes across [`plane_spec`].
pub fn plane_demo(seed: u64) -> contactseg::synth::DemoPath {
    contactseg::synth::DemoPath {
        patch: 0,
        start: [-0.08, 0.0],
        end: [0.08, 0.0],
        passes: 3,
        lateral: 0.1,
        spacing: 0.01,
        sigma: 0.0,
        gate_margin: 0.001,
        batch_size: 6,
        lift: Vec::new(),
        seed,
    }
}
