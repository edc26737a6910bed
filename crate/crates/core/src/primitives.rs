//! The shape primitive family: lines, planes, spheres and second/third order
//! bivariate polynomial surfaces expressed in a local PCA frame.
//!
//! Fitting rules:
//!
//! * line and plane: total least squares through the centroid;
//! * sphere: algebraic least squares on `|p|² = 2 c·p + (r² − |c|²)`;
//! * polynomial: ordinary least squares of `w = f(u, v)` in the PCA frame of
//!   the fitted points.
//!
//! Polynomial error is the vertical residual `|w − f(u, v)|` in the model's
//! stored frame, not the orthogonal distance.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Line,
    Plane,
    Sphere,
    Poly2,
    Poly3,
}

impl ShapeKind {
    /// Fixed kind order, also used as the final tie-break between challengers.
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Line,
        ShapeKind::Plane,
        ShapeKind::Sphere,
        ShapeKind::Poly2,
        ShapeKind::Poly3,
    ];

    /// Minimum number of points a fit needs.
    pub fn min_samples(self) -> usize {
        match self {
            ShapeKind::Line => 2,
            ShapeKind::Plane => 3,
            ShapeKind::Sphere => 4,
            ShapeKind::Poly2 => 6,
            ShapeKind::Poly3 => 10,
        }
    }

    pub fn poly_order(self) -> Option<usize> {
        match self {
            ShapeKind::Poly2 => Some(2),
            ShapeKind::Poly3 => Some(3),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Line => "line",
            ShapeKind::Plane => "plane",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Poly2 => "poly2",
            ShapeKind::Poly3 => "poly3",
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown shape kind `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("{kind} needs at least {needed} points, got {got}")]
    TooFewPoints {
        kind: ShapeKind,
        needed: usize,
        got: usize,
    },
    #[error("degenerate point configuration for {kind}: {reason}")]
    Degenerate { kind: ShapeKind, reason: &'static str },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Orthonormal right-handed frame at a point set's centroid; `w` is the
/// least-variance direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameRepr", into = "FrameRepr")]
pub struct PcaFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

#[derive(Serialize, Deserialize)]
struct FrameRepr {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    w: [f64; 3],
}

impl From<PcaFrame> for FrameRepr {
    fn from(f: PcaFrame) -> Self {
        Self {
            origin: f.origin.into(),
            u: f.u.into(),
            v: f.v.into(),
            w: f.w.into(),
        }
    }
}

impl TryFrom<FrameRepr> for PcaFrame {
    type Error = String;

    fn try_from(r: FrameRepr) -> Result<Self, Self::Error> {
        let frame = PcaFrame {
            origin: r.origin.into(),
            u: r.u.into(),
            v: r.v.into(),
            w: r.w.into(),
        };
        frame.validate()?;
        Ok(frame)
    }
}

impl PcaFrame {
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(self.u.dot(&d), self.v.dot(&d), self.w.dot(&d))
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.origin + self.u * local.x + self.v * local.y + self.w * local.z
    }

    pub fn direction_to_world(&self, local: &Vec3) -> Vec3 {
        self.u * local.x + self.v * local.y + self.w * local.z
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            origin: iso.transform_point(&self.origin.into()).coords,
            u: iso.rotation * self.u,
            v: iso.rotation * self.v,
            w: iso.rotation * self.w,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let tol = 1e-9;
        let all = [self.origin, self.u, self.v, self.w];
        if !all.iter().all(|a| a.iter().all(|c| c.is_finite())) {
            return Err("frame has non-finite entries".into());
        }
        for a in [self.u, self.v, self.w] {
            if (a.norm() - 1.0).abs() > tol {
                return Err("frame axis is not unit length".into());
            }
        }
        if self.u.dot(&self.v).abs() > tol
            || self.u.dot(&self.w).abs() > tol
            || self.v.dot(&self.w).abs() > tol
        {
            return Err("frame axes are not orthogonal".into());
        }
        if (self.u.cross(&self.v) - self.w).norm() > tol {
            return Err("frame is not right-handed".into());
        }
        Ok(())
    }
}

/// Flips `v` so that its largest-magnitude component is positive. Exact ties
/// go to the earlier axis.
pub(crate) fn canonical_sign(v: Vec3) -> Vec3 {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

struct Principal {
    centroid: Vec3,
    values: [f64; 3],
    vectors: [Vec3; 3],
    spread: f64,
}

/// Centroid and covariance eigen-decomposition, eigenvalues descending.
///
/// Points are summed in sorted order so the result does not depend on the
/// input order.
fn principal_axes(points: &[Vec3]) -> Principal {
    let mut sorted: Vec<Vec3> = points.to_vec();
    sorted.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    let n = sorted.len() as f64;
    let centroid = sorted.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread: f64 = 0.0;
    for p in &sorted {
        let d = p - centroid;
        cov += d * d.transpose();
        spread = spread.max(d.norm());
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Principal {
        centroid,
        values: order.map(|i| eig.eigenvalues[i].max(0.0)),
        vectors: order.map(|i| eig.eigenvectors.column(i).into_owned()),
        spread,
    }
}

const RANK_TOLERANCE: f64 = 1e-12;

/// Right-handed frame with `w` along `normal` and `u` along the part of
/// `major` orthogonal to it, both sign-canonicalized.
pub fn frame_from_axes(origin: Vec3, major: Vec3, normal: Vec3) -> PcaFrame {
    let w = canonical_sign(normal.normalize());
    let u = canonical_sign((major - w * major.dot(&w)).normalize());
    let v = w.cross(&u);
    PcaFrame { origin, u, v, w }
}

/// PCA frame of a point set: origin at the centroid, `u`/`v` along the two
/// dominant principal directions, `w` along the least-variance direction.
///
/// `u` and `w` follow [`canonical_sign`]; `v = w × u` completes the triad.
pub fn compute_pca_frame(points: &[Vec3]) -> Result<PcaFrame, FitError> {
    let degenerate = |reason| FitError::Degenerate {
        kind: ShapeKind::Plane,
        reason,
    };
    if points.len() < 3 {
        return Err(degenerate("fewer than 3 points"));
    }
    let pa = principal_axes(points);
    if pa.values[0] <= 0.0 || pa.spread == 0.0 {
        return Err(degenerate("coincident points"));
    }
    if pa.values[1] <= RANK_TOLERANCE * pa.values[0] {
        return Err(degenerate("collinear points"));
    }
    Ok(frame_from_axes(pa.centroid, pa.vectors[0], pa.vectors[2]))
}

/// Monomial exponents `(i, j)` of `u^i v^j`, ordered by total degree and
/// then by descending power of `u`: `1, u, v, u², uv, v², u³, u²v, uv², v³`.
pub fn monomials(order: usize) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for d in 0..=order as i32 {
        for i in (0..=d).rev() {
            out.push((i, d - i));
        }
    }
    out
}

pub fn coefficient_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Bivariate polynomial height field `w = f(u, v)` over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySurface {
    pub order: usize,
    pub frame: PcaFrame,
    pub coeffs: Vec<f64>,
}

impl PolySurface {
    pub fn height(&self, u: f64, v: f64) -> f64 {
        let mut sum = 0.0;
        let mut k = 0;
        let mut u_pow = [1.0; 4];
        let mut v_pow = [1.0; 4];
        for i in 1..=self.order {
            u_pow[i] = u_pow[i - 1] * u;
            v_pow[i] = v_pow[i - 1] * v;
        }
        for d in 0..=self.order {
            for i in (0..=d).rev() {
                sum += self.coeffs[k] * u_pow[i] * v_pow[d - i];
                k += 1;
            }
        }
        sum
    }

    /// `(∂f/∂u, ∂f/∂v)`.
    pub fn gradient(&self, u: f64, v: f64) -> (f64, f64) {
        let (mut du, mut dv) = (0.0, 0.0);
        for (c, (i, j)) in self.coeffs.iter().zip(monomials(self.order)) {
            if i > 0 {
                du += c * i as f64 * u.powi(i - 1) * v.powi(j);
            }
            if j > 0 {
                dv += c * j as f64 * u.powi(i) * v.powi(j - 1);
            }
        }
        (du, dv)
    }
}

/// A fitted primitive with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeModel {
    /// Points `point + t·direction`; `direction` is unit length.
    Line { point: Vec3, direction: Vec3 },
    /// Points with `normal·p = offset`; `normal` is unit length.
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64 },
    Poly(PolySurface),
}

impl ShapeModel {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeModel::Line { .. } => ShapeKind::Line,
            ShapeModel::Plane { .. } => ShapeKind::Plane,
            ShapeModel::Sphere { .. } => ShapeKind::Sphere,
            ShapeModel::Poly(p) if p.order == 2 => ShapeKind::Poly2,
            ShapeModel::Poly(_) => ShapeKind::Poly3,
        }
    }

    /// Distance of `p` from the model, see the module docs for polynomials.
    #[inline]
    pub fn error(&self, p: &Vec3) -> f64 {
        match self {
            ShapeModel::Line { point, direction } => (p - point).cross(direction).norm(),
            ShapeModel::Plane { normal, offset } => (normal.dot(p) - offset).abs(),
            ShapeModel::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            ShapeModel::Poly(poly) => {
                let local = poly.frame.to_local(p);
                (local.z - poly.height(local.x, local.y)).abs()
            }
        }
    }

    /// Same model after applying a rigid transform to space.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let rot = iso.rotation;
        let apply = |p: &Vec3| iso.transform_point(&(*p).into()).coords;
        match self {
            ShapeModel::Line { point, direction } => ShapeModel::Line {
                point: apply(point),
                direction: rot * direction,
            },
            ShapeModel::Plane { normal, offset } => {
                let n = rot * normal;
                ShapeModel::Plane {
                    normal: n,
                    offset: offset + n.dot(&iso.translation.vector),
                }
            }
            ShapeModel::Sphere { center, radius } => ShapeModel::Sphere {
                center: apply(center),
                radius: *radius,
            },
            ShapeModel::Poly(poly) => ShapeModel::Poly(PolySurface {
                order: poly.order,
                frame: poly.frame.transformed(iso),
                coeffs: poly.coeffs.clone(),
            }),
        }
    }

    /// Frame and height field for the surface kinds that carry a
    /// parameter domain (plane and polynomials).
    pub fn parametric(&self) -> Option<ParametricSurface> {
        match self {
            ShapeModel::Plane { normal, offset } => {
                // In-plane axis from the world axis least aligned with the normal.
                let mut k = 0;
                for i in 1..3 {
                    if normal[i].abs() < normal[k].abs() {
                        k = i;
                    }
                }
                let mut axis = Vec3::zeros();
                axis[k] = 1.0;
                // Keep the model's normal as `w` so the mesh faces the same way.
                let w = *normal;
                let u = canonical_sign((axis - w * axis.dot(&w)).normalize());
                let frame = PcaFrame {
                    origin: normal * *offset,
                    u,
                    v: w.cross(&u),
                    w,
                };
                Some(ParametricSurface { frame, poly: None })
            }
            ShapeModel::Poly(poly) => Some(ParametricSurface {
                frame: poly.frame,
                poly: Some(poly.clone()),
            }),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidModel(m.to_string()));
        let unit = |v: &Vec3| (v.norm() - 1.0).abs() <= 1e-9;
        match self {
            ShapeModel::Line { point, direction } => {
                if !point.iter().all(|c| c.is_finite()) || !unit(direction) {
                    return bad("line direction must be unit length");
                }
            }
            ShapeModel::Plane { normal, offset } => {
                if !offset.is_finite() || !unit(normal) {
                    return bad("plane normal must be unit length");
                }
            }
            ShapeModel::Sphere { center, radius } => {
                if !center.iter().all(|c| c.is_finite()) || !(*radius > 0.0 && radius.is_finite()) {
                    return bad("sphere radius must be positive");
                }
            }
            ShapeModel::Poly(poly) => {
                if !(poly.order == 2 || poly.order == 3) {
                    return bad("polynomial order must be 2 or 3");
                }
                if poly.coeffs.len() != coefficient_count(poly.order) {
                    return bad("coefficient count does not match order");
                }
                if !poly.coeffs.iter().all(|c| c.is_finite()) {
                    return bad("non-finite coefficient");
                }
                poly.frame.validate().map_err(FitError::InvalidModel)?;
            }
        }
        Ok(())
    }
}

/// Maps a surface parameter domain `(u, v)` to 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricSurface {
    pub frame: PcaFrame,
    pub poly: Option<PolySurface>,
}

impl ParametricSurface {
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let l = self.frame.to_local(p);
        (l.x, l.y)
    }

    pub fn height(&self, u: f64, v: f64) -> f64 {
        self.poly.as_ref().map_or(0.0, |p| p.height(u, v))
    }

    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        self.frame.to_world(&Vec3::new(u, v, self.height(u, v)))
    }

    /// Partial derivatives of [`point`](Self::point).
    pub fn tangents(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let (fu, fv) = self.poly.as_ref().map_or((0.0, 0.0), |p| p.gradient(u, v));
        (
            self.frame.u + self.frame.w * fu,
            self.frame.v + self.frame.w * fv,
        )
    }

    /// Unit normal, oriented along `+w` of the frame.
    pub fn normal(&self, u: f64, v: f64) -> Vec3 {
        let (fu, fv) = self.poly.as_ref().map_or((0.0, 0.0), |p| p.gradient(u, v));
        self.frame
            .direction_to_world(&Vec3::new(-fu, -fv, 1.0))
            .normalize()
    }
}

/// Solves `min |A x − b|` through QR, rejecting rank-deficient systems.
fn least_squares(a: DMatrix<f64>, mut b: DVector<f64>) -> Option<DVector<f64>> {
    let m = a.ncols();
    let qr = a.qr();
    qr.q_tr_mul(&mut b);
    let r = qr.r();
    let svd = r.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return None;
    }
    let rhs = b.rows(0, m).into_owned();
    r.solve_upper_triangular(&rhs)
}

fn check_count(kind: ShapeKind, points: &[Vec3]) -> Result<(), FitError> {
    if points.len() < kind.min_samples() {
        return Err(FitError::TooFewPoints {
            kind,
            needed: kind.min_samples(),
            got: points.len(),
        });
    }
    Ok(())
}

/// Fits a primitive of `kind` to `points`.
pub fn fit(kind: ShapeKind, points: &[Vec3]) -> Result<ShapeModel, FitError> {
    check_count(kind, points)?;
    let degenerate = |reason| FitError::Degenerate { kind, reason };
    match kind {
        ShapeKind::Line => {
            let pa = principal_axes(points);
            if pa.values[0] <= 0.0 || pa.spread <= 1e-12 * pa.centroid.norm() {
                return Err(degenerate("coincident points"));
            }
            Ok(ShapeModel::Line {
                point: pa.centroid,
                direction: canonical_sign(pa.vectors[0].normalize()),
            })
        }
        ShapeKind::Plane => {
            let frame = compute_pca_frame(points).map_err(|_| degenerate("collinear points"))?;
            Ok(ShapeModel::Plane {
                normal: frame.w,
                offset: frame.w.dot(&frame.origin),
            })
        }
        ShapeKind::Sphere => fit_sphere(points),
        ShapeKind::Poly2 | ShapeKind::Poly3 => {
            let frame = compute_pca_frame(points).map_err(|_| degenerate("collinear points"))?;
            fit_poly_in_frame(kind, frame, points)
        }
    }
}

fn fit_sphere(points: &[Vec3]) -> Result<ShapeModel, FitError> {
    let kind = ShapeKind::Sphere;
    let pa = principal_axes(points);
    if pa.spread == 0.0 {
        return Err(FitError::Degenerate {
            kind,
            reason: "coincident points",
        });
    }
    let scale = pa.spread;
    let n = points.len();
    let mut a = DMatrix::zeros(n, 4);
    let mut b = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let q = (p - pa.centroid) / scale;
        a[(i, 0)] = 2.0 * q.x;
        a[(i, 1)] = 2.0 * q.y;
        a[(i, 2)] = 2.0 * q.z;
        a[(i, 3)] = 1.0;
        b[i] = q.norm_squared();
    }
    let x = least_squares(a, b).ok_or(FitError::Degenerate {
        kind,
        reason: "points do not determine a sphere",
    })?;
    let c = Vec3::new(x[0], x[1], x[2]);
    let r2 = x[3] + c.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(FitError::Degenerate {
            kind,
            reason: "non-positive radius",
        });
    }
    Ok(ShapeModel::Sphere {
        center: pa.centroid + c * scale,
        radius: r2.sqrt() * scale,
    })
}

/// Least squares polynomial in a given frame. Coordinates are normalised by
/// the largest in-plane extent before the solve.
fn fit_poly_in_frame(kind: ShapeKind, frame: PcaFrame, points: &[Vec3]) -> Result<ShapeModel, FitError> {
    let order = kind.poly_order().expect("polynomial kind");
    let terms = monomials(order);
    let local: Vec<Vec3> = points.iter().map(|p| frame.to_local(p)).collect();
    let scale = local
        .iter()
        .map(|l| l.x.abs().max(l.y.abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(FitError::Degenerate {
            kind,
            reason: "zero in-plane extent",
        });
    }
    let n = points.len();
    let mut a = DMatrix::zeros(n, terms.len());
    let mut b = DVector::zeros(n);
    for (row, l) in local.iter().enumerate() {
        let (u, v) = (l.x / scale, l.y / scale);
        for (col, &(i, j)) in terms.iter().enumerate() {
            a[(row, col)] = u.powi(i) * v.powi(j);
        }
        b[row] = l.z / scale;
    }
    let x = least_squares(a, b).ok_or(FitError::Degenerate {
        kind,
        reason: "rank-deficient design matrix",
    })?;
    let coeffs = terms
        .iter()
        .zip(x.iter())
        .map(|(&(i, j), c)| {
            let mut denom = 1.0;
            for _ in 0..(i + j) {
                denom *= scale;
            }
            c * scale / denom
        })
        .collect();
    Ok(ShapeModel::Poly(PolySurface {
        order,
        frame,
        coeffs,
    }))
}

/// Re-optimises a model of the same kind over its inliers. Polynomial frames
/// are recomputed from the inliers.
pub fn refit(model: &ShapeModel, inliers: &[Vec3]) -> Result<ShapeModel, FitError> {
    fit(model.kind(), inliers)
}

/// Serialized form: `{kind, params, frame?}`.
#[derive(Serialize, Deserialize)]
struct ModelRepr {
    kind: ShapeKind,
    params: ParamsRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<PcaFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParamsRepr {
    Line { point: [f64; 3], direction: [f64; 3] },
    Plane { normal: [f64; 3], offset: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    Poly { coefficients: Vec<f64> },
}

impl From<&ShapeModel> for ModelRepr {
    fn from(m: &ShapeModel) -> Self {
        let kind = m.kind();
        match m {
            ShapeModel::Line { point, direction } => ModelRepr {
                kind,
                params: ParamsRepr::Line {
                    point: (*point).into(),
                    direction: (*direction).into(),
                },
                frame: None,
            },
            ShapeModel::Plane { normal, offset } => ModelRepr {
                kind,
                params: ParamsRepr::Plane {
                    normal: (*normal).into(),
                    offset: *offset,
                },
                frame: None,
            },
            ShapeModel::Sphere { center, radius } => ModelRepr {
                kind,
                params: ParamsRepr::Sphere {
                    center: (*center).into(),
                    radius: *radius,
                },
                frame: None,
            },
            ShapeModel::Poly(p) => ModelRepr {
                kind,
                params: ParamsRepr::Poly {
                    coefficients: p.coeffs.clone(),
                },
                frame: Some(p.frame),
            },
        }
    }
}

impl TryFrom<ModelRepr> for ShapeModel {
    type Error = FitError;

    fn try_from(r: ModelRepr) -> Result<Self, FitError> {
        let mismatch = || FitError::InvalidModel(format!("parameters do not match kind {}", r.kind));
        let model = match (r.kind, r.params) {
            (ShapeKind::Line, ParamsRepr::Line { point, direction }) => ShapeModel::Line {
                point: point.into(),
                direction: direction.into(),
            },
            (ShapeKind::Plane, ParamsRepr::Plane { normal, offset }) => ShapeModel::Plane {
                normal: normal.into(),
                offset,
            },
            (ShapeKind::Sphere, ParamsRepr::Sphere { center, radius }) => ShapeModel::Sphere {
                center: center.into(),
                radius,
            },
            (kind @ (ShapeKind::Poly2 | ShapeKind::Poly3), ParamsRepr::Poly { coefficients }) => {
                let frame = r
                    .frame
                    .ok_or_else(|| FitError::InvalidModel("polynomial model needs a frame".into()))?;
                ShapeModel::Poly(PolySurface {
                    order: kind.poly_order().unwrap_or(0),
                    frame,
                    coeffs: coefficients,
                })
            }
            _ => return Err(mismatch()),
        };
        model.validate()?;
        Ok(model)
    }
}

impl Serialize for ShapeModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ShapeModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(d)?;
        ShapeModel::try_from(repr).map_err(serde::de::Error::custom)
    }
}
