//! Rotationally symmetric hypersurfaces described by a sampled radius profile.
//!
//! A [`ProfileSurface`] is either a capped interval (topologically `S^n`): the
//! profile `r(x) > 0` lives on an open axis interval whose ends are closed by
//! poles, or a periodic tube (topologically `S^{n-1} x S^1`): the profile is
//! sampled around a core circle and wraps around.
//!
//! Samples sit on the global lattice `x_k = k * dx`. Keeping every surface on
//! the same lattice means two surfaces built with the same `dx` can be compared
//! and interpolated sample by sample.
//!
//! Near a pole the graph `r(x)` becomes vertical, so the end regions of a
//! capped profile are described by a circle template centred on the axis. The
//! template is fitted through the first (last) pair of samples whose chord
//! slope is at most one; samples closer to the pole than that pair are
//! "slaved" to the circle.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Absolute tolerance of geometric predicates.
pub const GEOM_TOL: f64 = 1e-9;

/// Samples where the profile is steeper than this (per cell) belong to the
/// cap templates rather than the graph.
pub const CAP_SLOPE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-positive radius {radius} at sample {index}")]
    NonPositiveRadius { index: usize, radius: f64 },
    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("surface is not mean convex (min H = {min_h})")]
    NotMeanConvex { min_h: f64 },
    #[error("invalid surface: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProfileKind {
    /// Profile on `(left_pole, right_pole)`, closed at both poles.
    Capped { left_pole: f64, right_pole: f64 },
    /// Tube around a core circle; the period is `2 * pi * core_radius`.
    Periodic { core_radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSurface {
    dim: usize,
    kind: ProfileKind,
    dx: f64,
    first_index: i64,
    radii: Vec<f64>,
}

/// Circle centred on the axis closing one end of a capped profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapFit {
    pub center: f64,
    pub radius: f64,
    pub pole: f64,
    /// Index of the innermost sample still evolved as a graph.
    pub boundary: usize,
}

impl CapFit {
    pub fn radius_at(&self, x: f64) -> f64 {
        let d2 = self.radius * self.radius - (x - self.center).powi(2);
        if d2 > 0.0 {
            d2.sqrt()
        } else {
            0.0
        }
    }

    /// Principal curvature of the template, the same in every direction.
    pub fn curvature(&self) -> f64 {
        1.0 / self.radius
    }
}

/// How the ends of a capped profile are closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CapZones {
    /// Separate templates at both ends with a graph region in between.
    Split { left: CapFit, right: CapFit },
    /// Too few resolved samples: the whole component is treated as a round sphere.
    Round { center: f64, radius: f64 },
}

/// Principal curvature data at one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    /// Curvature of the meridian curve (the axial principal curvature).
    pub lambda1: f64,
    /// The `(n-1)`-fold rotational principal curvature.
    pub lambda_rot: f64,
    /// Mean curvature, the sum of all principal curvatures.
    pub h: f64,
    /// Squared norm of the second fundamental form.
    pub norm_a2: f64,
}

impl CurvatureSample {
    pub fn new(dim: usize, lambda1: f64, lambda_rot: f64) -> Self {
        let m = (dim - 1) as f64;
        CurvatureSample {
            lambda1,
            lambda_rot,
            h: lambda1 + m * lambda_rot,
            norm_a2: lambda1 * lambda1 + m * lambda_rot * lambda_rot,
        }
    }

    /// Sum of the two smallest principal curvatures.
    pub fn two_smallest_sum(&self, dim: usize) -> f64 {
        if dim == 2 || self.lambda1 <= self.lambda_rot {
            self.lambda1 + self.lambda_rot
        } else {
            2.0 * self.lambda_rot
        }
    }

    pub fn min_principal(&self) -> f64 {
        self.lambda1.min(self.lambda_rot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_lambda1_plus_lambda2: f64,
    pub min_h: f64,
    pub min_lambda1: f64,
    pub worst_index: usize,
    pub is_two_convex: bool,
    pub is_uniformly_convex: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoncollapsednessReport {
    pub alpha_measured: f64,
    /// Sample index of the binding point; `None` when a pole binds.
    pub worst_point_index: Option<usize>,
    pub pass: bool,
}

/// Area of the unit sphere `S^k`.
pub fn unit_sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * unit_sphere_area(k - 2),
    }
}

/// Volume of the unit ball in `R^k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        unit_sphere_area(k - 1) / k as f64
    }
}

/// Circle centred on the axis through two profile points.
pub(crate) fn axis_circle(x1: f64, r1: f64, x2: f64, r2: f64) -> Option<(f64, f64)> {
    let dxp = x2 - x1;
    if dxp.abs() < 1e-300 {
        return None;
    }
    let c = ((x2 * x2 + r2 * r2) - (x1 * x1 + r1 * r1)) / (2.0 * dxp);
    let rho = ((x1 - c).powi(2) + r1 * r1).sqrt();
    (rho.is_finite() && rho > 0.0).then_some((c, rho))
}

/// Second-order first and second derivatives on a three-point, possibly
/// non-uniform stencil.
pub(crate) fn stencil_derivatives(hl: f64, hr: f64, rl: f64, r: f64, rr: f64) -> (f64, f64) {
    let denom = hl * hr * (hl + hr);
    let d1 = (hl * hl * (rr - r) + hr * hr * (r - rl)) / denom;
    let d2 = 2.0 * (hl * (rr - r) - hr * (r - rl)) / denom;
    (d1, d2)
}

/// `int_0^1 (a + (b - a) s)^m ds`, exact for integer `m`.
fn mean_power(a: f64, b: f64, m: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..=m {
        sum += a.powi(i as i32) * b.powi((m - i) as i32);
    }
    sum / (m as f64 + 1.0)
}

const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_8,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// 16-point Gauss-Legendre rule on `[lo, hi]`.
pub(crate) fn gauss16(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut sum = 0.0;
    for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        sum += w * (f(mid - half * node) + f(mid + half * node));
    }
    sum * half
}

/// Integral of `f(s)` for `s` the distance from a pole, over `[0, len]`,
/// using `s = u^2` so that square-root behaviour at the pole is resolved.
fn pole_integral(len: f64, f: impl Fn(f64) -> f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let top = len.sqrt();
    gauss16(0.0, top, |u| f(u * u) * 2.0 * u)
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Linear { x0: f64, x1: f64, r0: f64, r1: f64 },
    /// Spherical cap region between `pole` and `x_end` (either side of the pole).
    Cap { pole: f64, x_end: f64, center: f64, radius: f64 },
}

impl ProfileSurface {
    /// Capped profile sampled from `f` at every lattice point strictly between the poles.
    pub fn capped_from_fn(
        dim: usize,
        dx: f64,
        left_pole: f64,
        right_pole: f64,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(dx > 0.0) || !(right_pole > left_pole) {
            return Err(GeometryError::Invalid("need dx > 0 and left_pole < right_pole".into()));
        }
        let eps = 1e-9 * dx;
        let first = ((left_pole + eps) / dx).floor() as i64 + 1;
        let last = ((right_pole - eps) / dx).ceil() as i64 - 1;
        if last < first {
            return Err(GeometryError::Invalid("no lattice point between the poles".into()));
        }
        let radii = (first..=last).map(|k| f(k as f64 * dx)).collect();
        Self::capped_from_samples(dim, dx, first, radii, left_pole, right_pole)
    }

    pub fn capped_from_samples(
        dim: usize,
        dx: f64,
        first_index: i64,
        radii: Vec<f64>,
        left_pole: f64,
        right_pole: f64,
    ) -> Result<Self> {
        let s = ProfileSurface {
            dim,
            kind: ProfileKind::Capped { left_pole, right_pole },
            dx,
            first_index,
            radii,
        };
        s.validate()?;
        Ok(s)
    }

    /// Periodic tube with `samples` points around a core circle of radius `core_radius`.
    pub fn periodic_from_fn(
        dim: usize,
        core_radius: f64,
        samples: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if samples < 3 {
            return Err(GeometryError::Invalid("periodic profile needs at least 3 samples".into()));
        }
        let dx = 2.0 * PI * core_radius / samples as f64;
        let radii = (0..samples).map(|k| f(k as f64 * dx)).collect();
        Self::periodic_from_samples(dim, core_radius, radii)
    }

    pub fn periodic_from_samples(dim: usize, core_radius: f64, radii: Vec<f64>) -> Result<Self> {
        let n = radii.len().max(1);
        let s = ProfileSurface {
            dim,
            kind: ProfileKind::Periodic { core_radius },
            dx: 2.0 * PI * core_radius / n as f64,
            first_index: 0,
            radii,
        };
        s.validate()?;
        Ok(s)
    }

    /// Round sphere of radius `radius` centred at `center` on the axis.
    pub fn sphere(dim: usize, radius: f64, center: f64, dx: f64) -> Result<Self> {
        Self::capped_from_fn(dim, dx, center - radius, center + radius, |x| {
            (radius * radius - (x - center).powi(2)).max(0.0).sqrt()
        })
    }

    /// Two round bells of radius `bell_radius` centred at `+-half_length`,
    /// joined by a neck of minimum radius `neck_radius` at the origin.
    ///
    /// The profile between the bell centres is given by [`dumbbell_radius`].
    pub fn dumbbell(
        dim: usize,
        bell_radius: f64,
        neck_radius: f64,
        half_length: f64,
        dx: f64,
    ) -> Result<Self> {
        if !(neck_radius > 0.0 && neck_radius < bell_radius && half_length > 0.0) {
            return Err(GeometryError::Invalid("dumbbell needs 0 < neck < bell, half_length > 0".into()));
        }
        let pole = half_length + bell_radius;
        Self::capped_from_fn(dim, dx, -pole, pole, |x| dumbbell_radius(bell_radius, neck_radius, half_length, x))
    }

    /// Torus of revolution: constant tube radius around a core circle.
    pub fn torus(dim: usize, core_radius: f64, tube_radius: f64, dx: f64) -> Result<Self> {
        let samples = (2.0 * PI * core_radius / dx).round().max(3.0) as usize;
        Self::periodic_from_fn(dim, core_radius, samples, |_| tube_radius)
    }

    /// Capsule: a cylinder of radius `radius` over `[lo + radius, hi - radius]`
    /// with hemispherical ends; poles at `lo` and `hi`.
    pub fn capsule(dim: usize, lo: f64, hi: f64, radius: f64, dx: f64) -> Result<Self> {
        if hi - lo < 2.0 * radius {
            return Err(GeometryError::Invalid("capsule shorter than its diameter".into()));
        }
        Self::capped_from_fn(dim, dx, lo, hi, |x| capsule_radius(lo, hi, radius, x))
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(GeometryError::Invalid("dimension must be at least 2".into()));
        }
        if self.radii.len() < 3 {
            return Err(GeometryError::Invalid(format!("{} samples, need at least 3", self.radii.len())));
        }
        for (index, &radius) in self.radii.iter().enumerate() {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(GeometryError::NonPositiveRadius { index, radius });
            }
        }
        match self.kind {
            ProfileKind::Capped { left_pole, right_pole } => {
                let x0 = self.x(0);
                let xm = self.x(self.radii.len() - 1);
                if !(left_pole < x0 && right_pole > xm) {
                    return Err(GeometryError::Invalid("poles must lie outside the sample range".into()));
                }
                if x0 - left_pole > self.dx * (1.0 + 1e-9) || right_pole - xm > self.dx * (1.0 + 1e-9) {
                    return Err(GeometryError::Invalid("pole further than one cell from the samples".into()));
                }
            }
            ProfileKind::Periodic { core_radius } => {
                if self.max_radius() >= core_radius {
                    return Err(GeometryError::Invalid("tube radius reaches the core radius".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn first_index(&self) -> i64 {
        self.first_index
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, ProfileKind::Periodic { .. })
    }

    /// Axis coordinate of sample `i`.
    pub fn x(&self, i: usize) -> f64 {
        (self.first_index + i as i64) as f64 * self.dx
    }

    pub fn poles(&self) -> Option<(f64, f64)> {
        match self.kind {
            ProfileKind::Capped { left_pole, right_pole } => Some((left_pole, right_pole)),
            ProfileKind::Periodic { .. } => None,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self.kind {
            ProfileKind::Periodic { core_radius } => Some(2.0 * PI * core_radius),
            ProfileKind::Capped { .. } => None,
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_radius(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Index of the largest radius (first one on ties).
    pub fn argmax_radius(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.radii.iter().enumerate() {
            if r > self.radii[best] {
                best = i;
            }
        }
        best
    }

    /// Whether two surfaces share a lattice and a kind, so that samples can be
    /// compared index by lattice index.
    pub fn same_lattice(&self, other: &ProfileSurface) -> bool {
        if self.dim != other.dim || (self.dx - other.dx).abs() > 1e-12 * self.dx {
            return false;
        }
        match (self.kind, other.kind) {
            (ProfileKind::Capped { .. }, ProfileKind::Capped { .. }) => true,
            (ProfileKind::Periodic { core_radius: a }, ProfileKind::Periodic { core_radius: b }) => {
                (a - b).abs() <= 1e-12 * a && self.len() == other.len()
            }
            _ => false,
        }
    }

    /// The end templates of a capped profile; `None` for periodic profiles.
    pub fn cap_zones(&self) -> Option<CapZones> {
        let (left_pole, right_pole) = self.poles()?;
        let m = self.radii.len();
        let round = CapZones::Round {
            center: 0.5 * (left_pole + right_pole),
            radius: 0.5 * (right_pole - left_pole),
        };
        let flat = |k: usize| (self.radii[k + 1] - self.radii[k]).abs() <= CAP_SLOPE * self.dx;
        let left_k = (0..m - 1).find(|&k| flat(k));
        let right_j = (1..m).rev().find(|&j| flat(j - 1));
        let (k, j) = match (left_k, right_j) {
            (Some(k), Some(j)) if k + 2 <= j => (k, j),
            _ => return Some(round),
        };
        let left = axis_circle(left_pole, 0.0, self.x(k), self.radii[k]);
        let right = axis_circle(self.x(j), self.radii[j], right_pole, 0.0);
        match (left, right) {
            (Some((cl, rl)), Some((cr, rr))) => Some(CapZones::Split {
                left: CapFit { center: cl, radius: rl, pole: left_pole, boundary: k },
                right: CapFit { center: cr, radius: rr, pole: right_pole, boundary: j },
            }),
            _ => Some(round),
        }
    }

    /// Neighbour positions and radii of sample `i` (left and right).
    fn neighbours(&self, i: usize, zones: Option<&CapZones>) -> ((f64, f64), (f64, f64)) {
        let m = self.radii.len();
        let x = self.x(i);
        if self.is_periodic() {
            let l = (i + m - 1) % m;
            let r = (i + 1) % m;
            return ((x - self.dx, self.radii[l]), (x + self.dx, self.radii[r]));
        }
        let (lp, rp) = self.poles().unwrap_or((x - self.dx, x + self.dx));
        let left = if i > 0 {
            (self.x(i - 1), self.radii[i - 1])
        } else {
            match zones {
                Some(CapZones::Split { left, .. }) if left.pole < x - self.dx => {
                    (x - self.dx, left.radius_at(x - self.dx))
                }
                Some(CapZones::Split { left, .. }) => (left.pole.min(x - 1e-3 * self.dx), 0.0),
                _ => (lp, 0.0),
            }
        };
        let right = if i + 1 < m {
            (self.x(i + 1), self.radii[i + 1])
        } else {
            match zones {
                Some(CapZones::Split { right, .. }) if right.pole > x + self.dx => {
                    (x + self.dx, right.radius_at(x + self.dx))
                }
                Some(CapZones::Split { right, .. }) => (right.pole.max(x + 1e-3 * self.dx), 0.0),
                _ => (rp, 0.0),
            }
        };
        (left, right)
    }

    /// Centred finite-difference slope and second derivative at sample `i`.
    pub(crate) fn derivatives(&self, i: usize, zones: Option<&CapZones>) -> (f64, f64) {
        let ((xl, rl), (xr, rr)) = self.neighbours(i, zones);
        let x = self.x(i);
        stencil_derivatives(x - xl, xr - x, rl, self.radii[i], rr)
    }

    /// Radius of the template governing sample `i`, if any.
    pub(crate) fn template_at(&self, i: usize, zones: Option<&CapZones>) -> Option<f64> {
        match zones? {
            CapZones::Round { radius, .. } => Some(*radius),
            CapZones::Split { left, right } => {
                if i < left.boundary {
                    Some(left.radius)
                } else if i > right.boundary {
                    Some(right.radius)
                } else {
                    None
                }
            }
        }
    }

    fn curvature_with(&self, i: usize, zones: Option<&CapZones>) -> Result<CurvatureSample> {
        let len = self.radii.len();
        if i >= len {
            return Err(GeometryError::IndexOutOfRange { index: i, len });
        }
        let r = self.radii[i];
        if !(r > 0.0) {
            return Err(GeometryError::NonPositiveRadius { index: i, radius: r });
        }
        if let Some(rho) = self.template_at(i, zones) {
            return Ok(CurvatureSample::new(self.dim, 1.0 / rho, 1.0 / rho));
        }
        let (d1, d2) = self.derivatives(i, zones);
        let g = 1.0 + d1 * d1;
        let lambda1 = -d2 / (g * g.sqrt());
        let lambda_rot = 1.0 / (r * g.sqrt());
        Ok(CurvatureSample::new(self.dim, lambda1, lambda_rot))
    }

    /// Curvature at sample `i`: centred differences in the graph region, the
    /// template circle in the cap regions.
    pub fn curvatures(&self, i: usize) -> Result<CurvatureSample> {
        let zones = self.cap_zones();
        self.curvature_with(i, zones.as_ref())
    }

    /// Curvature at every sample.
    pub fn curvature_profile(&self) -> Result<Vec<CurvatureSample>> {
        let zones = self.cap_zones();
        (0..self.radii.len()).map(|i| self.curvature_with(i, zones.as_ref())).collect()
    }

    /// Mean curvature at the poles (template value), if capped.
    pub fn pole_mean_curvatures(&self) -> Option<(f64, f64)> {
        let n = self.dim as f64;
        match self.cap_zones()? {
            CapZones::Round { radius, .. } => Some((n / radius, n / radius)),
            CapZones::Split { left, right } => Some((n / left.radius, n / right.radius)),
        }
    }

    pub fn max_mean_curvature(&self) -> Result<(usize, f64)> {
        let prof = self.curvature_profile()?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, c) in prof.iter().enumerate() {
            if c.h > best.1 {
                best = (i, c.h);
            }
        }
        Ok(best)
    }

    /// Quadrature pieces covering the whole profile.
    fn pieces(&self) -> Vec<Piece> {
        let m = self.radii.len();
        let lin = |a: usize, b: usize| Piece::Linear {
            x0: self.x(a),
            x1: self.x(a) + self.dx,
            r0: self.radii[a],
            r1: self.radii[b],
        };
        match self.cap_zones() {
            None => (0..m).map(|i| lin(i, (i + 1) % m)).collect(),
            Some(CapZones::Round { center, radius }) => vec![
                Piece::Cap { pole: center - radius, x_end: center, center, radius },
                Piece::Cap { pole: center + radius, x_end: center, center, radius },
            ],
            Some(CapZones::Split { left, right }) => {
                let mut out = Vec::with_capacity(m + 2);
                out.push(Piece::Cap {
                    pole: left.pole,
                    x_end: self.x(left.boundary),
                    center: left.center,
                    radius: left.radius,
                });
                for i in left.boundary..right.boundary {
                    out.push(lin(i, i + 1));
                }
                out.push(Piece::Cap {
                    pole: right.pole,
                    x_end: self.x(right.boundary),
                    center: right.center,
                    radius: right.radius,
                });
                out
            }
        }
    }

    fn integrate(&self, lo: f64, hi: f64, lateral: bool) -> f64 {
        let n = self.dim;
        let omega = unit_sphere_area(n - 1);
        let ball = unit_ball_volume(n);
        // Meridian curvature at the samples, used to integrate lateral area
        // along the arc rather than the chord of each linear piece.
        let kappa: Option<Vec<f64>> = if lateral {
            self.curvature_profile().ok().map(|p| p.iter().map(|c| c.lambda1).collect())
        } else {
            None
        };
        let mut total = 0.0;
        for piece in self.pieces() {
            match piece {
                Piece::Linear { x0, x1, r0, r1 } => {
                    let a = x0.max(lo);
                    let b = x1.min(hi);
                    if b <= a {
                        continue;
                    }
                    let interp = |x: f64| r0 + (r1 - r0) * (x - x0) / (x1 - x0);
                    let (ra, rb) = (interp(a), interp(b));
                    if lateral {
                        let len = ((b - a).powi(2) + (rb - ra).powi(2)).sqrt();
                        let mut mean = mean_power(ra, rb, n - 1);
                        let mut stretch = 1.0;
                        if let (Some(k), true) = (&kappa, a == x0 && b == x1) {
                            let i0 = ((x0 / self.dx).round() as i64 - self.first_index) as usize;
                            let kap = 0.5 * (k[i0] + k[(i0 + 1) % k.len()]);
                            stretch += kap * kap * len * len / 24.0;
                            let bulge = kap * len * (b - a) / 12.0;
                            mean += (n - 1) as f64 * (0.5 * (ra + rb)).powi(n as i32 - 2) * bulge;
                        }
                        total += omega * len * stretch * mean;
                    } else {
                        total += ball * (b - a) * mean_power(ra, rb, n);
                    }
                }
                Piece::Cap { pole, x_end, center, radius } => {
                    let dir = if x_end >= pole { 1.0 } else { -1.0 };
                    let (plo, phi) = if dir > 0.0 { (pole, x_end) } else { (x_end, pole) };
                    let a = plo.max(lo);
                    let b = phi.min(hi);
                    if b <= a {
                        continue;
                    }
                    // distances from the pole bounding the clipped interval
                    let (s0, s1) = if dir > 0.0 { (a - pole, b - pole) } else { (pole - b, pole - a) };
                    let f = |s: f64| {
                        let x = pole + dir * s;
                        let r2 = (radius * radius - (x - center).powi(2)).max(0.0);
                        if lateral {
                            // r^{n-1} sqrt(1 + r'^2) = r^{n-2} * radius
                            omega * radius * r2.powf((n as f64 - 2.0) / 2.0)
                        } else {
                            ball * r2.powf(n as f64 / 2.0)
                        }
                    };
                    total += pole_integral(s1, f) - pole_integral(s0, f);
                }
            }
        }
        total
    }

    /// Hypersurface area `int |S^{n-1}| r^{n-1} sqrt(1 + r'^2) dx`.
    pub fn area(&self) -> f64 {
        self.integrate(f64::NEG_INFINITY, f64::INFINITY, true)
    }

    /// Volume of the enclosed region `int |B^n| r^n dx`.
    pub fn enclosed_volume(&self) -> f64 {
        self.integrate(f64::NEG_INFINITY, f64::INFINITY, false)
    }

    /// Enclosed volume restricted to axis coordinates in `[lo, hi]`.
    pub fn enclosed_volume_between(&self, lo: f64, hi: f64) -> f64 {
        self.integrate(lo, hi, false)
    }

    /// `int H^2 dmu` over the surface.
    pub fn h2_integral(&self) -> Result<f64> {
        let prof = self.curvature_profile()?;
        let n = self.dim;
        let omega = unit_sphere_area(n - 1);
        let mut total = 0.0;
        for piece in self.pieces() {
            match piece {
                Piece::Linear { x0, x1, r0, r1 } => {
                    let i0 = ((x0 / self.dx).round() as i64 - self.first_index) as usize;
                    let i1 = (i0 + 1) % self.radii.len();
                    let len = ((x1 - x0).powi(2) + (r1 - r0).powi(2)).sqrt();
                    let w0 = r0.powi(n as i32 - 1) * prof[i0].h.powi(2);
                    let w1 = r1.powi(n as i32 - 1) * prof[i1].h.powi(2);
                    total += omega * len * 0.5 * (w0 + w1);
                }
                Piece::Cap { pole, x_end, center, radius } => {
                    let s_end = (x_end - pole).abs();
                    let dir = if x_end >= pole { 1.0 } else { -1.0 };
                    let hc = n as f64 / radius;
                    total += pole_integral(s_end, |s| {
                        let x = pole + dir * s;
                        let r2 = (radius * radius - (x - center).powi(2)).max(0.0);
                        omega * radius * r2.powf((n as f64 - 2.0) / 2.0) * hc * hc
                    });
                }
            }
        }
        Ok(total)
    }

    /// Radius of the profile at axis coordinate `x` by linear interpolation
    /// (poles count as zero radius); zero outside a capped profile.
    pub fn radius_at(&self, x: f64) -> f64 {
        let m = self.radii.len();
        match self.kind {
            ProfileKind::Periodic { .. } => {
                let period = self.period().unwrap_or(1.0);
                let u = x.rem_euclid(period) / self.dx;
                let i = (u.floor() as usize).min(m - 1);
                let t = u - i as f64;
                self.radii[i] * (1.0 - t) + self.radii[(i + 1) % m] * t
            }
            ProfileKind::Capped { left_pole, right_pole } => {
                if x <= left_pole || x >= right_pole {
                    return 0.0;
                }
                let x0 = self.x(0);
                let xm = self.x(m - 1);
                if x < x0 {
                    return self.radii[0] * (x - left_pole) / (x0 - left_pole);
                }
                if x > xm {
                    return self.radii[m - 1] * (right_pole - x) / (right_pole - xm);
                }
                let u = (x - x0) / self.dx;
                let i = (u.floor() as usize).min(m - 2);
                let t = u - i as f64;
                self.radii[i] * (1.0 - t) + self.radii[i + 1] * t
            }
        }
    }

    /// Radius at lattice index `k`; zero when the lattice point is outside the profile.
    pub fn radius_at_lattice(&self, k: i64) -> f64 {
        match self.kind {
            ProfileKind::Periodic { .. } => {
                let m = self.radii.len() as i64;
                self.radii[k.rem_euclid(m) as usize]
            }
            ProfileKind::Capped { .. } => {
                let i = k - self.first_index;
                if i >= 0 && (i as usize) < self.radii.len() {
                    self.radii[i as usize]
                } else {
                    self.radius_at(k as f64 * self.dx)
                }
            }
        }
    }

    /// Whether `(axial, radial)` lies in the closed region bounded by the surface.
    pub fn hull_contains(&self, axial: f64, radial: f64) -> bool {
        if let Some((a, b)) = self.poles() {
            if axial < a - GEOM_TOL || axial > b + GEOM_TOL {
                return false;
            }
        }
        radial.abs() <= self.radius_at(axial) + GEOM_TOL
    }

    /// Meridian polyline `(x, r)` including the poles (capped) or closed by wraparound.
    pub fn meridian(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.radii.len() + 2);
        if let Some((a, _)) = self.poles() {
            pts.push((a, 0.0));
        }
        pts.extend(self.radii.iter().enumerate().map(|(i, &r)| (self.x(i), r)));
        if let Some((_, b)) = self.poles() {
            pts.push((b, 0.0));
        }
        pts
    }

    /// Replace the radii (and, for capped profiles, the poles), keeping the lattice.
    pub fn with_samples(&self, first_index: i64, radii: Vec<f64>, poles: Option<(f64, f64)>) -> Result<Self> {
        match (self.kind, poles) {
            (ProfileKind::Capped { .. }, Some((a, b))) => {
                Self::capped_from_samples(self.dim, self.dx, first_index, radii, a, b)
            }
            (ProfileKind::Periodic { core_radius }, _) => {
                Self::periodic_from_samples(self.dim, core_radius, radii)
            }
            (ProfileKind::Capped { left_pole, right_pole }, None) => {
                Self::capped_from_samples(self.dim, self.dx, first_index, radii, left_pole, right_pole)
            }
        }
    }

    /// Meridian with the end templates drawn as fine circular arcs.
    pub fn template_meridian(&self) -> Vec<(f64, f64)> {
        const STEP: f64 = 0.0035;
        let arc = |out: &mut Vec<(f64, f64)>, center: f64, radius: f64, from: (f64, f64), to: (f64, f64)| {
            let a0 = from.1.atan2(from.0 - center);
            let a1 = to.1.atan2(to.0 - center);
            let k = ((a1 - a0).abs() / STEP).ceil().max(1.0) as usize;
            for j in 0..k {
                let a = a0 + (a1 - a0) * j as f64 / k as f64;
                out.push((center + radius * a.cos(), radius * a.sin()));
            }
        };
        match self.cap_zones() {
            None => self.meridian(),
            Some(CapZones::Round { center, radius }) => {
                let mut out = Vec::new();
                arc(&mut out, center, radius, (center - radius, 0.0), (center + radius, 0.0));
                out.push((center + radius, 0.0));
                out
            }
            Some(CapZones::Split { left, right }) => {
                let mut out = Vec::new();
                let lb = (self.x(left.boundary), self.radii[left.boundary]);
                arc(&mut out, left.center, left.radius, (left.pole, 0.0), lb);
                for i in left.boundary..right.boundary {
                    out.push((self.x(i), self.radii[i]));
                }
                let rb = (self.x(right.boundary), self.radii[right.boundary]);
                arc(&mut out, right.center, right.radius, rb, (right.pole, 0.0));
                out.push((right.pole, 0.0));
                out
            }
        }
    }

    /// Lateral distance between two surfaces in the meridian plane, with the
    /// end templates resolved as circular arcs.
    pub fn distance_to(&self, other: &ProfileSurface) -> f64 {
        let a = self.template_meridian();
        let b = other.template_meridian();
        let closed_a = self.is_periodic();
        let closed_b = other.is_periodic();
        polyline_distance(&a, closed_a, &b, closed_b).min(polyline_distance(&b, closed_b, &a, closed_a))
    }
}

/// Profile of the builtin dumbbell.
///
/// Between the bell centres the radius is `neck + (bell - neck) s(|x| / L)`
/// with `s(u) = u^4 (a + b u + c u^2)` chosen so that value, slope and second
/// derivative match the outer hemispheres at `|x| = L`.
pub fn dumbbell_radius(bell: f64, neck: f64, half_length: f64, x: f64) -> f64 {
    let ax = x.abs();
    if ax <= half_length {
        let kappa = -half_length * half_length / (bell * (bell - neck));
        let c = (kappa + 20.0) / 2.0;
        let b = -4.0 - 2.0 * c;
        let a = 5.0 + c;
        let u = ax / half_length;
        neck + (bell - neck) * u.powi(4) * (a + b * u + c * u * u)
    } else {
        (bell * bell - (ax - half_length).powi(2)).max(0.0).sqrt()
    }
}

/// Profile of a capsule with poles `lo`, `hi` and radius `radius`.
pub fn capsule_radius(lo: f64, hi: f64, radius: f64, x: f64) -> f64 {
    let c = if x < lo + radius {
        lo + radius
    } else if x > hi - radius {
        hi - radius
    } else {
        return radius;
    };
    (radius * radius - (x - c).powi(2)).max(0.0).sqrt()
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((wx - t * vx).powi(2) + (wy - t * vy).powi(2)).sqrt()
}

/// Smallest distance from the vertices of `from` to the polyline `to`.
fn polyline_distance(from: &[(f64, f64)], _closed_from: bool, to: &[(f64, f64)], closed_to: bool) -> f64 {
    let mut best = f64::INFINITY;
    let segs = if closed_to { to.len() } else { to.len() - 1 };
    for &p in from {
        for s in 0..segs {
            let a = to[s];
            let b = to[(s + 1) % to.len()];
            // cheap reject on axial separation
            let lo = a.0.min(b.0);
            let hi = a.0.max(b.0);
            if p.0 < lo - best || p.0 > hi + best {
                continue;
            }
            best = best.min(point_segment_distance(p, a, b));
        }
    }
    best
}

/// Two-convexity report with uniform convexity tested against `floor`.
pub fn check_two_convex_with_floor(surface: &ProfileSurface, floor: f64) -> Result<ConvexityReport> {
    let prof = surface.curvature_profile()?;
    let dim = surface.dim();
    let mut report = ConvexityReport {
        min_lambda1_plus_lambda2: f64::INFINITY,
        min_h: f64::INFINITY,
        min_lambda1: f64::INFINITY,
        worst_index: 0,
        is_two_convex: false,
        is_uniformly_convex: false,
    };
    for (i, c) in prof.iter().enumerate() {
        let s = c.two_smallest_sum(dim);
        if s < report.min_lambda1_plus_lambda2 {
            report.min_lambda1_plus_lambda2 = s;
            report.worst_index = i;
        }
        report.min_h = report.min_h.min(c.h);
        report.min_lambda1 = report.min_lambda1.min(c.min_principal());
    }
    report.is_two_convex = report.min_lambda1_plus_lambda2 > 0.0;
    report.is_uniformly_convex = report.min_lambda1 > floor;
    Ok(report)
}

pub fn check_two_convex(surface: &ProfileSurface) -> Result<ConvexityReport> {
    check_two_convex_with_floor(surface, 0.0)
}

/// Largest alpha such that every point admits interior and exterior touching
/// balls of radius `alpha / H`.
///
/// Balls centred in a meridian plane meet the surface first inside that
/// plane, so the search runs over discs touching the meridian curve (and its
/// mirror image across the axis). Normals and curvatures come from the circle
/// through each sample and its two neighbours, which is exact on spheres and
/// cylinders.
pub fn check_noncollapsed(surface: &ProfileSurface, alpha: f64) -> Result<NoncollapsednessReport> {
    let n = surface.dim();
    let convexity = check_two_convex(surface)?;
    if !(convexity.min_h > 0.0) {
        return Err(GeometryError::NotMeanConvex { min_h: convexity.min_h });
    }
    let pts = surface.meridian();
    let periodic = surface.period();
    let np = pts.len();
    // curve points: upper meridian plus its mirror image
    let mut curve: Vec<(f64, f64)> = pts.clone();
    curve.extend(pts.iter().filter(|p| p.1 > 0.0).map(|&(x, r)| (x, -r)));
    let offset = if surface.poles().is_some() { 1 } else { 0 };
    let pole_h = surface.pole_mean_curvatures();

    let mut best = (f64::INFINITY, None);
    for t in 0..np {
        let p = pts[t];
        let (normal, h) = if surface.poles().is_some() && (t == 0 || t == np - 1) {
            let (hl, hr) = pole_h.unwrap_or((0.0, 0.0));
            if t == 0 {
                ((-1.0, 0.0), hl)
            } else {
                ((1.0, 0.0), hr)
            }
        } else {
            let (prev, next) = if periodic.is_some() {
                let m = np;
                let mut a = pts[(t + m - 1) % m];
                let mut b = pts[(t + 1) % m];
                if t == 0 {
                    a.0 -= periodic.unwrap_or(0.0);
                }
                if t == m - 1 {
                    b.0 += periodic.unwrap_or(0.0);
                }
                (a, b)
            } else {
                (pts[t - 1], pts[t + 1])
            };
            let (nu, kappa) = circumcircle_normal(prev, p, next);
            (nu, kappa + (n as f64 - 1.0) * nu.1 / p.1)
        };
        let mut rho_in = f64::INFINITY;
        let mut rho_out = f64::INFINITY;
        for (qi, &q0) in curve.iter().enumerate() {
            if qi == t {
                continue;
            }
            let mut q = q0;
            if let Some(per) = periodic {
                let mut d = q.0 - p.0;
                d -= per * (d / per).round();
                q.0 = p.0 + d;
            }
            let (dx, dy) = (q.0 - p.0, q.1 - p.1);
            let d2 = dx * dx + dy * dy;
            if d2 < 1e-30 {
                continue;
            }
            let dot = dx * normal.0 + dy * normal.1;
            if dot < -1e-15 {
                rho_in = rho_in.min(d2 / (-2.0 * dot));
            } else if dot > 1e-15 {
                rho_out = rho_out.min(d2 / (2.0 * dot));
            }
        }
        let a = h * rho_in.min(rho_out);
        if a < best.0 {
            let idx = if surface.poles().is_some() {
                if t == 0 || t == np - 1 {
                    None
                } else {
                    Some(t - offset)
                }
            } else {
                Some(t)
            };
            best = (a, idx);
        }
    }
    Ok(NoncollapsednessReport {
        alpha_measured: best.0,
        worst_point_index: best.1,
        pass: best.0 >= alpha,
    })
}

/// Outward unit normal at `p` and signed curvature of the circle through
/// `a`, `p`, `b` (positive when the curve bends toward the axis side).
fn circumcircle_normal(a: (f64, f64), p: (f64, f64), b: (f64, f64)) -> ((f64, f64), f64) {
    let (tx, ty) = (b.0 - a.0, b.1 - a.1);
    let tl = (tx * tx + ty * ty).sqrt();
    let n0 = (-ty / tl, tx / tl);
    let (ax, ay) = (a.0 - p.0, a.1 - p.1);
    let (bx, by) = (b.0 - p.0, b.1 - p.1);
    let cross = ax * by - ay * bx;
    if cross.abs() < 1e-300 {
        return (n0, 0.0);
    }
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    // circumcentre relative to p
    let ox = (by * a2 - ay * b2) / (2.0 * cross);
    let oy = (ax * b2 - bx * a2) / (2.0 * cross);
    let rad = (ox * ox + oy * oy).sqrt();
    let mut nu = (-ox / rad, -oy / rad);
    let mut kappa = 1.0 / rad;
    if nu.0 * n0.0 + nu.1 * n0.1 < 0.0 {
        nu = (-nu.0, -nu.1);
        kappa = -kappa;
    }
    (nu, kappa)
}
