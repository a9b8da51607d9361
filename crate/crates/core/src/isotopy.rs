//! Monotone isotopies assembled from flow frames and hand-built stages.
//!
//! A trace is a list of scenes; each later scene must lie in the closed
//! region bounded by the one before it. Profiles are rotationally symmetric
//! about the first coordinate axis, tubes are neighbourhoods of polylines in
//! `R^{n+1}`.

use crate::flow::surfaces_intersect;
use crate::geometry::{capsule_radius, GeometryError, ProfileKind, ProfileSurface, GEOM_TOL};
use crate::surgery::{HistoryEvent, SurgeryHistory, Topology};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsotopyError {
    #[error("target scene is not nested inside the source scene")]
    NotNested,
    #[error("scenes are not graphs over a common lattice")]
    NotGraphical,
    #[error("neck diameter {d} exceeds the smallest neck radius {min_radius}")]
    DTooLarge { d: f64, min_radius: f64 },
    #[error("scene is not an open tube")]
    NotATube,
    #[error("sphere is not attached to the tube")]
    NotAttached,
    #[error("history is incomplete: {0}")]
    IncompleteHistory(String),
    #[error("unsupported history: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, IsotopyError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Flow,
    Pinch,
    StraightLine,
    Retract,
    Absorb,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Flow => "flow",
            Stage::Pinch => "pinch",
            Stage::StraightLine => "straight_line",
            Stage::Retract => "retract",
            Stage::Absorb => "absorb",
        }
    }
}

/// Closed `radius`-neighbourhood of a polyline in `R^{n+1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub polyline: Vec<Vec<f64>>,
    pub radius: f64,
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case")]
pub enum SceneItem {
    Profile(ProfileSurface),
    Tube(Tube),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFrame {
    pub stage: Stage,
    pub items: Vec<SceneItem>,
    /// Surgery-history components this frame was built from.
    pub components: Vec<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IsotopyTrace {
    pub frames: Vec<TraceFrame>,
    /// Canonical model reached by each initial component.
    pub terminals: Vec<Terminal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Terminal {
    RoundSphere { center: f64, radius: f64 },
    ThickKnot { core: Vec<Vec<f64>>, radius: f64 },
    ThickSkeleton { nodes: Vec<Vec<f64>>, edges: Vec<(usize, usize)>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the later frame of the failing pair.
    pub frame: usize,
    pub witness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    pub first_violation: Option<Violation>,
    pub max_violation_depth: f64,
    /// Frames that failed the embeddedness check.
    pub non_embedded_frames: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsotopyParams {
    pub target_eps: f64,
    pub frames_per_stage: usize,
}

impl Default for IsotopyParams {
    fn default() -> Self {
        IsotopyParams { target_eps: 0.05, frames_per_stage: 16 }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (p.iter().zip(a).zip(&ab).map(|((p, a), d)| (p - a) * d).sum::<f64>() / len2).clamp(0.0, 1.0);
    let q: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + t * d).collect();
    dist(p, &q)
}

impl Tube {
    fn segments(&self) -> Vec<(&[f64], &[f64])> {
        let v = &self.polyline;
        let mut out: Vec<(&[f64], &[f64])> = v.windows(2).map(|w| (w[0].as_slice(), w[1].as_slice())).collect();
        if self.closed && v.len() > 2 {
            out.push((v[v.len() - 1].as_slice(), v[0].as_slice()));
        }
        if v.len() == 1 {
            out.push((v[0].as_slice(), v[0].as_slice()));
        }
        out
    }

    pub fn distance_to_core(&self, p: &[f64]) -> f64 {
        self.segments()
            .into_iter()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Points on the tube surface: rings around every vertex and segment
    /// midpoint plus the tips of open ends.
    fn surface_points(&self) -> Vec<Vec<f64>> {
        let dim = self.polyline[0].len();
        let mut out = Vec::new();
        for (a, b) in self.segments() {
            let dir: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
            let perp = perpendicular_basis(&dir, dim);
            for t in [0.0, 0.5, 1.0] {
                let c: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
                for e in &perp {
                    for sign in [1.0, -1.0] {
                        out.push(c.iter().zip(e).map(|(c, e)| c + sign * self.radius * e).collect());
                    }
                }
            }
        }
        if !self.closed {
            let v = &self.polyline;
            let ends = if v.len() == 1 {
                let mut e = vec![0.0; dim];
                e[0] = 1.0;
                vec![(v[0].clone(), e.clone()), (v[0].clone(), e.iter().map(|x| -x).collect())]
            } else {
                let m = v.len();
                vec![(v[0].clone(), unit(&sub(&v[0], &v[1]))), (v[m - 1].clone(), unit(&sub(&v[m - 1], &v[m - 2])))]
            };
            for (p, e) in ends {
                out.push(p.iter().zip(&e).map(|(p, e)| p + self.radius * e).collect());
            }
        }
        out
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        return e;
    }
    v.iter().map(|x| x / n).collect()
}

/// Orthonormal basis of the complement of `dir` (all of `R^dim` when `dir` is zero).
fn perpendicular_basis(dir: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let d0: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if d0 > 0.0 {
        basis.push(dir.iter().map(|x| x / d0).collect());
    }
    for i in 0..dim {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    if d0 > 0.0 {
        basis.remove(0);
    }
    basis
}

/// Map a meridian point to `R^{n+1}` in the direction of radial unit vector `e_j`.
fn lift(dim: usize, x: f64, r: f64, j: usize, sign: f64) -> Vec<f64> {
    let mut p = vec![0.0; dim + 1];
    p[0] = x;
    p[1 + j] = sign * r;
    p
}

impl SceneItem {
    pub fn dim(&self) -> usize {
        match self {
            SceneItem::Profile(s) => s.dim(),
            SceneItem::Tube(t) => t.polyline[0].len() - 1,
        }
    }

    /// Signed excess of `p` outside the closed region (non-positive inside).
    fn excess(&self, p: &[f64]) -> f64 {
        match self {
            SceneItem::Profile(s) => {
                let radial = p[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                let axial = p[0];
                let mut out = radial - s.radius_at(axial);
                if let Some((a, b)) = s.poles() {
                    out = out.max(a - axial).max(axial - b);
                }
                out
            }
            SceneItem::Tube(t) => t.distance_to_core(p) - t.radius,
        }
    }

    fn surface_points(&self, radial_dirs: usize) -> Vec<Vec<f64>> {
        match self {
            SceneItem::Profile(s) => {
                let dim = s.dim();
                let mut out = Vec::new();
                for (x, r) in s.meridian() {
                    for j in 0..radial_dirs.min(dim) {
                        out.push(lift(dim, x, r, j, 1.0));
                        if radial_dirs > 1 {
                            out.push(lift(dim, x, r, j, -1.0));
                        }
                    }
                }
                out
            }
            SceneItem::Tube(t) => t.surface_points(),
        }
    }
}

fn scene_excess(items: &[SceneItem], p: &[f64]) -> f64 {
    items.iter().map(|i| i.excess(p)).fold(f64::INFINITY, f64::min)
}

/// Distance between segments `[a, b]` and `[c, d]` in any dimension.
fn segment_distance(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let (u, v, w) = (sub(b, a), sub(d, c), sub(a, c));
    let (uu, uv, vv, uw, vw) = (dot(&u, &u), dot(&u, &v), dot(&v, &v), dot(&u, &w), dot(&v, &w));
    let denom = uu * vv - uv * uv;
    let mut best = [
        point_segment_distance(a, c, d),
        point_segment_distance(b, c, d),
        point_segment_distance(c, a, b),
        point_segment_distance(d, a, b),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    if denom > 1e-15 * uu.max(1e-300) * vv.max(1e-300) {
        let s = (uv * vw - vv * uw) / denom;
        let t = (uu * vw - uv * uw) / denom;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            let p: Vec<f64> = a.iter().zip(&u).map(|(a, u)| a + s * u).collect();
            let q: Vec<f64> = c.iter().zip(&v).map(|(c, v)| c + t * v).collect();
            best = best.min(dist(&p, &q));
        }
    }
    best
}

/// Profiles pairwise disjoint, tubes pairwise disjoint and free of self-overlap.
fn scene_embedded(items: &[SceneItem]) -> bool {
    for (a, ia) in items.iter().enumerate() {
        for ib in &items[a + 1..] {
            match (ia, ib) {
                (SceneItem::Profile(p), SceneItem::Profile(q)) => {
                    if surfaces_intersect(p, q) {
                        return false;
                    }
                }
                (SceneItem::Tube(s), SceneItem::Tube(t)) => {
                    for (a, b) in s.segments() {
                        for (c, d) in t.segments() {
                            if segment_distance(a, b, c, d) < s.radius + t.radius - GEOM_TOL {
                                return false;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        if let SceneItem::Tube(t) = ia {
            let segs = t.segments();
            let m = segs.len();
            for i in 0..m {
                for j in i + 2..m {
                    if t.closed && i == 0 && j == m - 1 {
                        continue;
                    }
                    let ((a, b), (c, d)) = (segs[i], segs[j]);
                    if segment_distance(a, b, c, d) < 2.0 * t.radius - GEOM_TOL {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Check that every frame lies in the closed region of the previous one.
pub fn check_monotone(trace: &IsotopyTrace) -> MonotonicityReport {
    let mut report = MonotonicityReport {
        pass: true,
        first_violation: None,
        max_violation_depth: 0.0,
        non_embedded_frames: Vec::new(),
    };
    for (k, frame) in trace.frames.iter().enumerate() {
        if !scene_embedded(&frame.items) {
            report.pass = false;
            report.non_embedded_frames.push(k);
        }
        if k == 0 {
            continue;
        }
        let prev = &trace.frames[k - 1].items;
        let only_profiles = prev.iter().all(|i| matches!(i, SceneItem::Profile(_)));
        let dirs = if only_profiles { 1 } else { usize::MAX };
        for item in &frame.items {
            for p in item.surface_points(dirs) {
                let e = scene_excess(prev, &p);
                if e > GEOM_TOL {
                    report.pass = false;
                    report.max_violation_depth = report.max_violation_depth.max(e);
                    if report.first_violation.is_none() {
                        report.first_violation = Some(Violation { frame: k, witness: p });
                    }
                }
            }
        }
    }
    report
}

/// Straight-line homotopy between two nested graphs on a common lattice.
///
/// Returns `steps` frames after `from`; the last one is `to` itself.
pub fn straightline_trace(from: &ProfileSurface, to: &ProfileSurface, steps: usize) -> Result<Vec<ProfileSurface>> {
    if !from.same_lattice(to) {
        return Err(IsotopyError::NotGraphical);
    }
    for (x, r) in to.meridian() {
        if !from.hull_contains(x, r) {
            return Err(IsotopyError::NotNested);
        }
    }
    let steps = steps.max(1);
    let k0 = from.first_index();
    let mut out = Vec::with_capacity(steps);
    for j in 1..steps {
        let s = j as f64 / steps as f64;
        let radii: Vec<f64> = from
            .radii()
            .iter()
            .enumerate()
            .map(|(i, &r)| (1.0 - s) * r + s * to.radius_at_lattice(k0 + i as i64))
            .collect();
        out.push(from.with_samples(k0, radii, from.poles())?);
    }
    out.push(to.clone());
    Ok(out)
}

/// Pinch the neck window `[lo, hi]` of `surface` down to radius `d / 2`.
pub fn precondition_neck(surface: &ProfileSurface, window: (f64, f64), d: f64, steps: usize) -> Result<Vec<ProfileSurface>> {
    let (lo, hi) = window;
    let k0 = surface.first_index();
    let inside: Vec<usize> = (0..surface.len()).filter(|&i| surface.x(i) >= lo && surface.x(i) <= hi).collect();
    if inside.is_empty() {
        return Ok(vec![surface.clone()]);
    }
    let min_radius = inside.iter().map(|&i| surface.radii()[i]).fold(f64::INFINITY, f64::min);
    if d > min_radius {
        return Err(IsotopyError::DTooLarge { d, min_radius });
    }
    let mut radii = surface.radii().to_vec();
    for &i in &inside {
        radii[i] = radii[i].min(0.5 * d);
    }
    let target = surface.with_samples(k0, radii, surface.poles())?;
    straightline_trace(surface, &target, steps)
}

/// Shrink the last segment of an open tube to its start vertex.
pub fn retract_tube_segment(tube: &Tube, steps: usize) -> Result<Vec<Tube>> {
    if tube.closed || tube.polyline.len() < 2 {
        return Err(IsotopyError::NotATube);
    }
    let m = tube.polyline.len();
    let a = tube.polyline[m - 2].clone();
    let b = tube.polyline[m - 1].clone();
    let steps = steps.max(1);
    let mut out = Vec::with_capacity(steps);
    for j in 1..steps {
        let s = j as f64 / steps as f64;
        let mut t = tube.clone();
        t.polyline[m - 1] = b.iter().zip(&a).map(|(b, a)| b + s * (a - b)).collect();
        out.push(t);
    }
    let mut last = tube.clone();
    last.polyline.pop();
    out.push(last);
    Ok(out)
}

/// Retract an open tube segment by segment down to the round sphere of its
/// radius around the first vertex. Each segment takes `steps` frames.
pub fn retract_tube(tube: &Tube, steps: usize) -> Result<Vec<Tube>> {
    if tube.closed || tube.polyline.len() < 2 {
        return Err(IsotopyError::NotATube);
    }
    let mut out = Vec::new();
    let mut current = tube.clone();
    while current.polyline.len() > 1 {
        let frames = retract_tube_segment(&current, steps)?;
        current = frames.last().cloned().expect("retraction yields at least one frame");
        out.extend(frames);
    }
    Ok(out)
}

/// Wrap a sequence of single-tube scenes as a trace with one stage label.
pub fn tube_trace(tubes: impl IntoIterator<Item = Tube>, stage: Stage) -> IsotopyTrace {
    IsotopyTrace {
        frames: tubes
            .into_iter()
            .map(|t| TraceFrame { stage, items: vec![SceneItem::Tube(t)], components: Vec::new() })
            .collect(),
        terminals: Vec::new(),
    }
}

/// Round spheres threaded on an axial capsule of radius `d` over `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeadedTube {
    pub dim: usize,
    pub dx: f64,
    /// `(center, radius)` pairs on the axis.
    pub spheres: Vec<(f64, f64)>,
    pub lo: f64,
    pub hi: f64,
    pub d: f64,
}

impl BeadedTube {
    pub fn to_profile(&self) -> Result<ProfileSurface> {
        let mut left = self.lo - self.d;
        let mut right = self.hi + self.d;
        for &(c, r) in &self.spheres {
            left = left.min(c - r);
            right = right.max(c + r);
        }
        let f = |x: f64| {
            self.spheres
                .iter()
                .map(|&(c, r)| (r * r - (x - c).powi(2)).max(0.0).sqrt())
                .fold(capsule_radius(self.lo - self.d, self.hi + self.d, self.d, x), f64::max)
        };
        Ok(ProfileSurface::capped_from_fn(self.dim, self.dx, left, right, f)?)
    }

    fn attached(&self, (c, r): (f64, f64)) -> bool {
        self.hi >= self.lo && self.d > 0.0 && c >= self.lo - r && c <= self.hi + r
    }
}

/// Absorb the first sphere of `beads` into its tube.
pub fn absorb_sphere(beads: &BeadedTube, steps: usize) -> Result<(Vec<ProfileSurface>, BeadedTube)> {
    let first = *beads.spheres.first().ok_or(IsotopyError::NotAttached)?;
    if !beads.attached(first) {
        return Err(IsotopyError::NotAttached);
    }
    let mut rest = beads.clone();
    rest.spheres.remove(0);
    let frames = straightline_trace(&beads.to_profile()?, &rest.to_profile()?, steps)?;
    Ok((frames, rest))
}

/// Largest distance from the final scene to the core of the terminal model.
pub fn terminal_distance(surface: &ProfileSurface, terminal: &Terminal) -> f64 {
    match terminal {
        Terminal::RoundSphere { center, .. } => {
            surface.meridian().iter().map(|&(x, r)| (x - center).hypot(r)).fold(0.0, f64::max)
        }
        Terminal::ThickKnot { .. } => surface.max_radius(),
        Terminal::ThickSkeleton { .. } => f64::NAN,
    }
}

/// Radius of the largest ball centred at `(c, 0)` inside the profile.
fn inscribed_radius(surface: &ProfileSurface, c: f64) -> f64 {
    let m = surface.meridian();
    m.windows(2)
        .map(|w| point_segment_distance(&[c, 0.0], &[w[0].0, w[0].1], &[w[1].0, w[1].1]))
        .fold(f64::INFINITY, f64::min)
}

struct Piece {
    surface: ProfileSurface,
    stage: Stage,
    components: Vec<u64>,
}

/// Union of capped profiles on a shared lattice, plus an optional axial capsule.
fn union_profile(parts: &[&ProfileSurface], capsule: Option<(f64, f64, f64)>) -> Result<ProfileSurface> {
    let first = parts[0];
    let (mut left, mut right) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in parts {
        let (a, b) = p.poles().ok_or(IsotopyError::NotGraphical)?;
        left = left.min(a);
        right = right.max(b);
    }
    if let Some((lo, hi, d)) = capsule {
        left = left.min(lo - d);
        right = right.max(hi + d);
    }
    let dx = first.dx();
    let f = |x: f64| {
        let k = (x / dx).round() as i64;
        let base = capsule.map_or(0.0, |(lo, hi, d)| capsule_radius(lo - d, hi + d, d, x));
        parts.iter().map(|p| p.radius_at_lattice(k)).fold(base, f64::max)
    };
    Ok(ProfileSurface::capped_from_fn(first.dim(), dx, left, right, f)?)
}

struct Builder<'a> {
    history: &'a SurgeryHistory,
    params: IsotopyParams,
}

impl Builder<'_> {
    fn flow_frames(&self, id: u64) -> Result<Vec<Piece>> {
        let frames = self.history.frames_of(id);
        if frames.is_empty() {
            return Err(IsotopyError::IncompleteHistory(format!("component {id} has no frames")));
        }
        Ok(frames
            .into_iter()
            .map(|f| Piece { surface: f.surface.clone(), stage: Stage::Flow, components: vec![id] })
            .collect())
    }

    fn push_line(&self, out: &mut Vec<Piece>, to: &ProfileSurface, stage: Stage, components: &[u64]) -> Result<()> {
        let from = &out.last().expect("trace is never empty").surface;
        for s in straightline_trace(from, to, self.params.frames_per_stage)? {
            out.push(Piece { surface: s, stage, components: components.to_vec() });
        }
        Ok(())
    }

    fn trace(&self, id: u64) -> Result<(Vec<Piece>, Terminal)> {
        let mut out = self.flow_frames(id)?;
        let children = self.history.children_of(id);
        if children.is_empty() {
            if self.history.discard_of(id).is_none() {
                return Err(IsotopyError::IncompleteHistory(format!("component {id} was never discarded")));
            }
            let last = out.last().expect("nonempty").surface.clone();
            let terminal = self.leaf(&mut out, &last, id)?;
            return Ok((out, terminal));
        }
        let pre = out.last().expect("nonempty").surface.clone();
        if pre.is_periodic() {
            return Err(IsotopyError::Unsupported("surgery on a periodic component".into()));
        }
        let mut kids = Vec::new();
        for c in children {
            let (frames, terminal) = self.trace(c)?;
            let (center, radius) = match terminal {
                Terminal::RoundSphere { center, radius } => (center, radius),
                _ => return Err(IsotopyError::Unsupported("non-spherical surgery piece".into())),
            };
            kids.push((c, frames, center, radius));
        }
        kids.sort_by(|a, b| a.2.total_cmp(&b.2));
        let ids: Vec<u64> = kids.iter().map(|k| k.0).collect();
        let gaps: Vec<(f64, f64)> = kids
            .windows(2)
            .map(|w| {
                let (_, a) = w[0].1[0].surface.poles().expect("capped piece");
                let (b, _) = w[1].1[0].surface.poles().expect("capped piece");
                (a, b)
            })
            .collect();
        let window = (gaps.first().map_or(0.0, |g| g.0), gaps.last().map_or(0.0, |g| g.1));
        let neck_min = (0..pre.len())
            .filter(|&i| pre.x(i) >= window.0 && pre.x(i) <= window.1)
            .map(|i| pre.radii()[i])
            .fold(f64::INFINITY, f64::min);
        let d = kids
            .iter()
            .map(|k| k.3)
            .fold(self.params.target_eps.min(0.5 * neck_min), f64::min);
        let (lo, hi) = (kids[0].2, kids[kids.len() - 1].2);

        for gap in &gaps {
            let cur = out.last().expect("nonempty").surface.clone();
            for s in precondition_neck(&cur, *gap, 2.0 * d, self.params.frames_per_stage)? {
                out.push(Piece { surface: s, stage: Stage::Pinch, components: vec![id] });
            }
        }
        let len = kids.iter().map(|k| k.1.len()).max().unwrap_or(0);
        for k in 0..len {
            let parts: Vec<&Piece> = kids.iter().map(|c| &c.1[k.min(c.1.len() - 1)]).collect();
            let surfaces: Vec<&ProfileSurface> = parts.iter().map(|p| &p.surface).collect();
            let u = union_profile(&surfaces, Some((lo, hi, d)))?;
            let stage = if parts.iter().any(|p| p.stage == Stage::Flow) { Stage::Flow } else { parts[0].stage };
            if k == 0 {
                self.push_line(&mut out, &u, Stage::Pinch, &ids)?;
            } else {
                out.push(Piece { surface: u, stage, components: ids.clone() });
            }
        }
        let mut beads = BeadedTube {
            dim: pre.dim(),
            dx: pre.dx(),
            spheres: kids.iter().map(|k| (k.2, k.3)).collect(),
            lo,
            hi,
            d,
        };
        while !beads.spheres.is_empty() {
            let (frames, rest) = absorb_sphere(&beads, self.params.frames_per_stage)?;
            out.extend(frames.into_iter().map(|s| Piece { surface: s, stage: Stage::Absorb, components: ids.clone() }));
            beads = rest;
        }
        let ball = ProfileSurface::sphere(pre.dim(), d, lo, pre.dx())?;
        self.push_line(&mut out, &ball, Stage::Retract, &ids)?;
        Ok((out, Terminal::RoundSphere { center: lo, radius: d }))
    }

    fn leaf(&self, out: &mut Vec<Piece>, last: &ProfileSurface, id: u64) -> Result<Terminal> {
        let eps = self.params.target_eps;
        if let Some(core) = match last.kind() {
            ProfileKind::Periodic { core_radius } => Some(core_radius),
            _ => None,
        } {
            let radius = eps.min(0.9 * last.min_radius());
            let target = ProfileSurface::periodic_from_samples(last.dim(), core, vec![radius; last.len()])?;
            self.push_line(out, &target, Stage::StraightLine, &[id])?;
            let m = 64;
            let core_pts = (0..m)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / m as f64;
                    let mut p = vec![0.0; last.dim() + 1];
                    p[0] = core * a.cos();
                    p[1] = core * a.sin();
                    p
                })
                .collect();
            return Ok(Terminal::ThickKnot { core: core_pts, radius });
        }
        let center = last.x(last.argmax_radius());
        let radius = eps.min(0.9 * inscribed_radius(last, center));
        let ball = ProfileSurface::sphere(last.dim(), radius, center, last.dx())?;
        self.push_line(out, &ball, Stage::StraightLine, &[id])?;
        Ok(Terminal::RoundSphere { center, radius })
    }
}

/// Assemble a monotone trace from a completed surgery history, one branch
/// per initial component, ending near the canonical model of each branch.
pub fn build_isotopy(history: &SurgeryHistory, params: IsotopyParams) -> Result<IsotopyTrace> {
    if !history.final_components.is_empty() {
        return Err(IsotopyError::IncompleteHistory("components are still alive".into()));
    }
    let mut children = Vec::new();
    for e in &history.events {
        if let HistoryEvent::StandardSurgery { left_child, right_child, .. } = e {
            children.push(*left_child);
            children.push(*right_child);
        }
    }
    let mut roots: Vec<u64> = history.frames.iter().map(|f| f.component_id).filter(|id| !children.contains(id)).collect();
    roots.sort_unstable();
    roots.dedup();
    if roots.is_empty() {
        return Err(IsotopyError::IncompleteHistory("no frames".into()));
    }
    let builder = Builder { history, params };
    let mut branches = Vec::new();
    let mut terminals = Vec::new();
    for r in roots {
        let (frames, terminal) = builder.trace(r)?;
        branches.push(frames);
        terminals.push(terminal);
    }
    let len = branches.iter().map(|b| b.len()).max().unwrap_or(0);
    let frames = (0..len)
        .map(|k| {
            let parts: Vec<&Piece> = branches.iter().map(|b| &b[k.min(b.len() - 1)]).collect();
            TraceFrame {
                stage: parts.iter().find(|p| p.stage != Stage::Flow).map_or(Stage::Flow, |p| p.stage),
                items: parts.iter().map(|p| SceneItem::Profile(p.surface.clone())).collect(),
                components: parts.iter().flat_map(|p| p.components.iter().copied()).collect(),
            }
        })
        .collect();
    Ok(IsotopyTrace { frames, terminals })
}

/// Classify a terminal by the topology it models.
pub fn terminal_topology(terminal: &Terminal) -> Topology {
    match terminal {
        Terminal::RoundSphere { .. } => Topology::Sphere,
        _ => Topology::Torus,
    }
}
