//! Neck detection, cut-and-cap surgery and the flow-with-surgery loop.

use crate::flow::{self, FlowError, FlowState, StopCondition, StopEvent};
use crate::geometry::{
    check_two_convex, unit_ball_volume, GeometryError, ProfileSurface,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurgeryError {
    #[error("invalid surgery parameters: {0}")]
    InvalidParams(String),
    #[error("neck seed is not a valid neck region")]
    InvalidSeed,
    #[error("neck has no low-curvature end to cut at")]
    InvalidNeckEnds,
    #[error("no sample in the neck has H in [H1, 2 H1] with cap curvature at most H2")]
    NoValidCutSection,
    #[error("surgery removed non-positive volume {0}")]
    NonPositiveRemovedVolume(f64),
    #[error("retained component has max H = {h} > H2 = {h2} after surgery")]
    PostSurgeryCurvature { h: f64, h2: f64 },
    #[error("surgery count {count} exceeds the volume bound {bound}")]
    NonTermination { count: usize, bound: usize },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, SurgeryError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapTemplate {
    /// Circular arc tangent to the profile at the cut.
    #[default]
    Spherical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryParams {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    /// Ceiling for `lambda1 / H` on a neck.
    pub eta: f64,
    /// Ceiling for `|r'|` on a neck seed.
    pub eps_cyl: f64,
    /// Minimal neck half-length in units of the smallest neck radius.
    pub window_l: f64,
    #[serde(default)]
    pub cap_template: CapTemplate,
}

impl SurgeryParams {
    pub fn new(h1: f64, h2: f64, h3: f64) -> Self {
        SurgeryParams {
            h1,
            h2,
            h3,
            eta: 0.2,
            eps_cyl: 0.2,
            window_l: 5.0,
            cap_template: CapTemplate::Spherical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h1 > 0.0 && self.h1 < self.h2 && self.h2 < self.h3) {
            return Err(SurgeryError::InvalidParams("H1 < H2 < H3 with H1 > 0".into()));
        }
        for (name, v) in [("eta", self.eta), ("eps_cyl", self.eps_cyl)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SurgeryError::InvalidParams(format!("{name} in (0, 1)")));
            }
        }
        if !(self.window_l >= 0.0) {
            return Err(SurgeryError::InvalidParams("window_L >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeckEnd {
    LowCurvature,
    Cap,
    Loop,
}

/// A run of neck samples. On periodic profiles `i_lo > i_hi` means the run
/// wraps through index 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeckRegion {
    pub component: usize,
    pub i_lo: usize,
    pub i_hi: usize,
    pub left_end: Option<NeckEnd>,
    pub right_end: Option<NeckEnd>,
}

impl NeckRegion {
    pub fn is_loop(&self) -> bool {
        self.left_end == Some(NeckEnd::Loop) || self.right_end == Some(NeckEnd::Loop)
    }

    /// Number of samples in the region on a profile with `m` samples.
    pub fn count(&self, m: usize) -> usize {
        if self.i_lo <= self.i_hi {
            self.i_hi - self.i_lo + 1
        } else {
            m - self.i_lo + self.i_hi + 1
        }
    }

    /// Sample indices from left to right.
    pub fn indices(&self, m: usize) -> Vec<usize> {
        (0..self.count(m)).map(|j| (self.i_lo + j) % m).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Sphere,
    Torus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub topology: Topology,
    pub uniformly_convex: bool,
}

/// Per-sample data the neck tests need.
#[derive(Clone, Copy, Debug)]
struct SampleInfo {
    h: f64,
    lambda1: f64,
    slope: f64,
    template: bool,
}

fn sample_info(s: &ProfileSurface) -> Result<Vec<SampleInfo>> {
    let zones = s.cap_zones();
    let prof = s.curvature_profile()?;
    Ok(prof
        .iter()
        .enumerate()
        .map(|(i, c)| SampleInfo {
            h: c.h,
            lambda1: c.lambda1,
            slope: s.derivatives(i, zones.as_ref()).0,
            template: s.template_at(i, zones.as_ref()).is_some(),
        })
        .collect())
}

fn is_seed_sample(p: &SampleInfo, params: &SurgeryParams) -> bool {
    is_neck_sample(p, params) && p.slope.abs() <= params.eps_cyl
}

/// Continuation criterion: the slope bound is dropped so that a neck can be
/// followed through its flaring shoulders down to the low-curvature band.
fn is_neck_sample(p: &SampleInfo, params: &SurgeryParams) -> bool {
    !p.template && p.h >= params.h1 && p.lambda1 / p.h <= params.eta
}

/// Maximal runs of neck samples long enough to count as necks, left to right.
pub fn detect_necks(
    surface: &ProfileSurface,
    component: usize,
    params: &SurgeryParams,
) -> Result<Vec<NeckRegion>> {
    let info = sample_info(surface)?;
    let m = info.len();
    let flags: Vec<bool> = info.iter().map(|p| is_seed_sample(p, params)).collect();
    if surface.is_periodic() && flags.iter().all(|&f| f) {
        return Ok(vec![NeckRegion {
            component,
            i_lo: 0,
            i_hi: m - 1,
            left_end: Some(NeckEnd::Loop),
            right_end: Some(NeckEnd::Loop),
        }]);
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < m {
        if flags[i] {
            let start = i;
            while i + 1 < m && flags[i + 1] {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    if surface.is_periodic() && runs.len() > 1 {
        let first = runs[0];
        let last = *runs.last().unwrap();
        if first.0 == 0 && last.1 == m - 1 {
            runs.pop();
            runs[0] = (last.0, first.1);
        }
    }
    let mut necks = Vec::new();
    for (lo, hi) in runs {
        let region = NeckRegion { component, i_lo: lo, i_hi: hi, left_end: None, right_end: None };
        let idx = region.indices(m);
        let r_min = idx.iter().map(|&j| surface.radii()[j]).fold(f64::INFINITY, f64::min);
        let half_length = 0.5 * idx.len() as f64 * surface.dx();
        if half_length >= params.window_l * r_min {
            necks.push(region);
        }
    }
    Ok(necks)
}

/// Grow a seed to its maximal extent and tag both ends.
pub fn continue_neck(
    surface: &ProfileSurface,
    seed: &NeckRegion,
    params: &SurgeryParams,
) -> Result<NeckRegion> {
    let info = sample_info(surface)?;
    let m = info.len();
    if seed.i_lo >= m || seed.i_hi >= m || (!surface.is_periodic() && seed.i_lo > seed.i_hi) {
        return Err(SurgeryError::InvalidSeed);
    }
    if seed.indices(m).iter().any(|&i| !is_seed_sample(&info[i], params)) {
        return Err(SurgeryError::InvalidSeed);
    }
    let mut region = *seed;
    let neck = |i: usize| is_neck_sample(&info[i], params);
    if surface.is_periodic() {
        let mut count = region.count(m);
        while count < m && neck((region.i_lo + m - 1) % m) {
            region.i_lo = (region.i_lo + m - 1) % m;
            count += 1;
        }
        while count < m && neck((region.i_hi + 1) % m) {
            region.i_hi = (region.i_hi + 1) % m;
            count += 1;
        }
        if count == m {
            region.left_end = Some(NeckEnd::Loop);
            region.right_end = Some(NeckEnd::Loop);
            return Ok(region);
        }
        region.left_end = Some(tag_periodic_end(&info, &mut region, false, params, m));
        region.right_end = Some(tag_periodic_end(&info, &mut region, true, params, m));
        return Ok(region);
    }
    while region.i_lo > 0 && neck(region.i_lo - 1) {
        region.i_lo -= 1;
    }
    while region.i_hi + 1 < m && neck(region.i_hi + 1) {
        region.i_hi += 1;
    }
    region.left_end = Some(tag_capped_end(&info, &mut region.i_lo, false, params));
    region.right_end = Some(tag_capped_end(&info, &mut region.i_hi, true, params));
    Ok(region)
}

fn closes_convexly(info: &[SampleInfo], from: usize, rightward: bool, params: &SurgeryParams) -> bool {
    let ok = |p: &SampleInfo| p.lambda1 >= 0.0 && p.h >= params.h1;
    if rightward {
        info[from..].iter().all(ok)
    } else {
        info[..=from].iter().all(ok)
    }
}

fn tag_capped_end(
    info: &[SampleInfo],
    end: &mut usize,
    rightward: bool,
    params: &SurgeryParams,
) -> NeckEnd {
    let m = info.len();
    let next = |i: usize| if rightward { (i + 1 < m).then_some(i + 1) } else { i.checked_sub(1) };
    let Some(b) = next(*end) else {
        return NeckEnd::Cap;
    };
    if closes_convexly(info, b, rightward, params) {
        return NeckEnd::Cap;
    }
    if info[b].h < 2.0 * params.h1 {
        return NeckEnd::LowCurvature;
    }
    // High curvature but not a neck: keep walking out to the low-curvature band.
    let mut i = b;
    loop {
        *end = i;
        match next(i) {
            None => return NeckEnd::Cap,
            Some(j) if info[j].h < 2.0 * params.h1 => return NeckEnd::LowCurvature,
            Some(j) => i = j,
        }
    }
}

fn tag_periodic_end(
    info: &[SampleInfo],
    region: &mut NeckRegion,
    rightward: bool,
    params: &SurgeryParams,
    m: usize,
) -> NeckEnd {
    let step = |i: usize| if rightward { (i + 1) % m } else { (i + m - 1) % m };
    let mut count = region.count(m);
    loop {
        let end = if rightward { region.i_hi } else { region.i_lo };
        let b = step(end);
        if info[b].h < 2.0 * params.h1 {
            return NeckEnd::LowCurvature;
        }
        if count == m {
            return NeckEnd::Loop;
        }
        if rightward {
            region.i_hi = b;
        } else {
            region.i_lo = b;
        }
        count += 1;
    }
}

/// Topology by representation; uniform convexity from the sampled curvatures.
pub fn classify(surface: &ProfileSurface) -> Result<Classification> {
    let topology = if surface.is_periodic() { Topology::Torus } else { Topology::Sphere };
    let report = check_two_convex(surface)?;
    Ok(Classification { topology, uniformly_convex: report.min_lambda1 > 0.0 })
}

/// Role of a piece produced by surgery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceRole {
    /// Low-curvature side that keeps flowing.
    Retained,
    /// High-curvature neck core, discarded right away.
    Core,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    /// Axis coordinate of the cut cross-section.
    pub x: f64,
    /// Mean curvature of the surface at the cut.
    pub h: f64,
    /// Mean curvature of the inserted cap at its pole.
    pub cap_h: f64,
    /// Pieces on either side of the cut (indices into `SurgeryOutcome::pieces`).
    pub left_piece: usize,
    pub right_piece: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurgeryOutcome {
    /// Pieces ordered along the axis.
    pub pieces: Vec<(PieceRole, ProfileSurface)>,
    pub cuts: Vec<CutRecord>,
    pub removed_volume: f64,
}

/// How one end of a surgery piece is closed.
#[derive(Clone, Copy, Debug)]
enum PieceEnd {
    /// Keep an existing pole.
    Pole(f64),
    /// Circle tangent to the profile at the end sample.
    Tangent,
}

/// Circle centred on the axis and tangent to the graph at `(x, r)` with slope
/// `slope`: returns `(centre, radius)`.
fn tangent_circle(x: f64, r: f64, slope: f64) -> (f64, f64) {
    (x + r * slope, r * (1.0 + slope * slope).sqrt())
}

struct PieceBuilder<'a> {
    surface: &'a ProfileSurface,
    slopes: Vec<f64>,
}

impl PieceBuilder<'_> {
    fn slope(&self, k: i64) -> f64 {
        let m = self.surface.len() as i64;
        let i = if self.surface.is_periodic() { k.rem_euclid(m) } else { k - self.surface.first_index() };
        self.slopes[i as usize]
    }

    fn cap_curvature(&self, k: i64) -> f64 {
        let r = self.surface.radius_at_lattice(k);
        let (_, rho) = tangent_circle(k as f64 * self.surface.dx(), r, self.slope(k));
        self.surface.dim() as f64 / rho
    }

    /// Pole position of a tangent cap at lattice point `k` opening to the left
    /// (`rightward == false`) or to the right.
    fn cap_pole(&self, k: i64, rightward: bool) -> f64 {
        let r = self.surface.radius_at_lattice(k);
        let (c, rho) = tangent_circle(k as f64 * self.surface.dx(), r, self.slope(k));
        if rightward {
            c + rho
        } else {
            c - rho
        }
    }

    /// Piece made of the lattice samples `k_lo..=k_hi` closed by the given ends.
    ///
    /// With `mollify`, the original profile is blended into each tangent
    /// circle with a C2 step of width 5 dx centred on the end sample; both
    /// lie inside the original hull, hence so does the blend.
    fn build(&self, k_lo: i64, k_hi: i64, left: PieceEnd, right: PieceEnd, mollify: bool) -> Result<ProfileSurface> {
        let s = self.surface;
        let dx = s.dx();
        let circle_at = |k: i64| {
            tangent_circle(k as f64 * dx, s.radius_at_lattice(k), self.slope(k))
        };
        let eval = |(c, rho): (f64, f64), x: f64| (rho * rho - (x - c).powi(2)).max(0.0).sqrt();
        let left_circle = matches!(left, PieceEnd::Tangent).then(|| circle_at(k_lo));
        let right_circle = matches!(right, PieceEnd::Tangent).then(|| circle_at(k_hi));
        let left_pole = match (left, left_circle) {
            (PieceEnd::Pole(p), _) => p,
            (_, Some((c, rho))) => c - rho,
            _ => unreachable!(),
        };
        let right_pole = match (right, right_circle) {
            (PieceEnd::Pole(p), _) => p,
            (_, Some((c, rho))) => c + rho,
            _ => unreachable!(),
        };
        let half = if mollify { 2.5 * dx } else { 0.0 };
        let x_lo = k_lo as f64 * dx;
        let x_hi = k_hi as f64 * dx;
        let k_first = (left_pole / dx).floor() as i64 + 1;
        let k_last = (right_pole / dx).ceil() as i64 - 1;
        let mut first = None;
        let mut radii = Vec::new();
        for k in k_first..=k_last {
            let x = k as f64 * dx;
            let orig = s.radius_at(x);
            let mut r = orig;
            if let Some(circ) = left_circle {
                // Weight of the circle: 1 on the cap side of the junction.
                let w = blend_weight((x_lo - x + half) / (2.0 * half).max(f64::MIN_POSITIVE), half);
                r = (1.0 - w) * r + w * eval(circ, x);
            }
            if let Some(circ) = right_circle {
                let w = blend_weight((x - x_hi + half) / (2.0 * half).max(f64::MIN_POSITIVE), half);
                r = (1.0 - w) * r + w * eval(circ, x);
            }
            if matches!(left, PieceEnd::Pole(_)) && x < x_lo || matches!(right, PieceEnd::Pole(_)) && x > x_hi {
                r = orig;
            }
            if r <= 1e-12 * dx {
                if first.is_some() {
                    break;
                }
                continue;
            }
            first.get_or_insert(k);
            radii.push(r.min(orig));
        }
        let first = first.ok_or(SurgeryError::NoValidCutSection)?;
        Ok(ProfileSurface::capped_from_samples(s.dim(), dx, first, radii, left_pole, right_pole)?)
    }
}

/// C2 step from 0 to 1 on `[0, 1]`; a hard step at 1/2 when there is no width.
fn blend_weight(u: f64, half: f64) -> f64 {
    if half == 0.0 {
        return if u >= 0.5 { 1.0 } else { 0.0 };
    }
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (6.0 * u - 15.0))
}

/// Cut a neck at its low-curvature ends and close the pieces with convex caps.
pub fn perform_surgery(
    surface: &ProfileSurface,
    neck: &NeckRegion,
    params: &SurgeryParams,
) -> Result<SurgeryOutcome> {
    let (Some(le), Some(re)) = (neck.left_end, neck.right_end) else {
        return Err(SurgeryError::InvalidNeckEnds);
    };
    if le == NeckEnd::Loop || re == NeckEnd::Loop {
        return Err(SurgeryError::InvalidNeckEnds);
    }
    if le != NeckEnd::LowCurvature && re != NeckEnd::LowCurvature {
        return Err(SurgeryError::InvalidNeckEnds);
    }
    if surface.is_periodic() && (le != NeckEnd::LowCurvature || re != NeckEnd::LowCurvature) {
        return Err(SurgeryError::InvalidNeckEnds);
    }
    let info = sample_info(surface)?;
    let m = surface.len();
    let builder = PieceBuilder { surface, slopes: info.iter().map(|p| p.slope).collect() };
    // Lattice indices of the region, unrolled for periodic wraparound.
    let k0 = surface.first_index();
    let k_lo = k0 + neck.i_lo as i64;
    let k_hi = k_lo + neck.count(m) as i64 - 1;
    let info_at = |k: i64| {
        let i = if surface.is_periodic() { k.rem_euclid(m as i64) } else { k - k0 };
        info[i as usize]
    };
    let valid_cut = |k: i64| {
        let h = info_at(k).h;
        h >= params.h1 && h <= 2.0 * params.h1 && builder.cap_curvature(k) <= params.h2
    };
    let cut_l = if le == NeckEnd::LowCurvature {
        Some((k_lo..=k_hi).find(|&k| valid_cut(k)).ok_or(SurgeryError::NoValidCutSection)?)
    } else {
        None
    };
    let cut_r = if re == NeckEnd::LowCurvature {
        Some((k_lo..=k_hi).rev().find(|&k| valid_cut(k)).ok_or(SurgeryError::NoValidCutSection)?)
    } else {
        None
    };
    if let (Some(a), Some(b)) = (cut_l, cut_r) {
        if a >= b {
            return Err(SurgeryError::NoValidCutSection);
        }
    }
    let dx = surface.dx();
    let record = |k: i64| (k as f64 * dx, info_at(k).h, builder.cap_curvature(k));
    let mut pieces: Vec<(PieceRole, ProfileSurface)> = Vec::new();
    let mut cuts = Vec::new();
    let poles = surface.poles();

    if surface.is_periodic() {
        let (a, b) = (cut_l.unwrap(), cut_r.unwrap());
        let retained = builder.build(b, a + m as i64, PieceEnd::Tangent, PieceEnd::Tangent, true)?;
        let (rl, rr) = retained.poles().unwrap();
        let core = core_piece(&builder, a, b, rr - m as f64 * dx, rl, PieceEnd::Tangent, PieceEnd::Tangent);
        pieces.push((PieceRole::Retained, retained));
        if let Some(core) = core {
            pieces.push((PieceRole::Core, core));
            for k in [a, b] {
                let (x, h, cap_h) = record(k);
                cuts.push(CutRecord { x, h, cap_h, left_piece: 0, right_piece: 1 });
            }
        } else {
            for k in [a, b] {
                let (x, h, cap_h) = record(k);
                cuts.push(CutRecord { x, h, cap_h, left_piece: 0, right_piece: 0 });
            }
        }
    } else {
        let (lp, rp) = poles.unwrap();
        let k_first = k0;
        let k_last = k0 + m as i64 - 1;
        let mut core_lo_bound = lp;
        let mut core_lo_end = PieceEnd::Pole(lp);
        let mut core_start = k_first;
        if let Some(a) = cut_l {
            let left = builder.build(k_first, a, PieceEnd::Pole(lp), PieceEnd::Tangent, true)?;
            core_lo_bound = left.poles().unwrap().1;
            core_lo_end = PieceEnd::Tangent;
            core_start = a;
            pieces.push((PieceRole::Retained, left));
        }
        let mut right_piece = None;
        let mut core_hi_bound = rp;
        let mut core_hi_end = PieceEnd::Pole(rp);
        let mut core_end = k_last;
        if let Some(b) = cut_r {
            let right = builder.build(b, k_last, PieceEnd::Tangent, PieceEnd::Pole(rp), true)?;
            core_hi_bound = right.poles().unwrap().0;
            core_hi_end = PieceEnd::Tangent;
            core_end = b;
            right_piece = Some(right);
        }
        let core = core_piece(&builder, core_start, core_end, core_lo_bound, core_hi_bound, core_lo_end, core_hi_end);
        let has_core = core.is_some();
        if let Some(core) = core {
            pieces.push((PieceRole::Core, core));
        }
        if let Some(right) = right_piece {
            pieces.push((PieceRole::Retained, right));
        }
        let core_idx = if cut_l.is_some() { 1 } else { 0 };
        if let Some(a) = cut_l {
            let (x, h, cap_h) = record(a);
            let right_piece = if has_core { core_idx } else { 1 };
            cuts.push(CutRecord { x, h, cap_h, left_piece: 0, right_piece });
        }
        if let Some(b) = cut_r {
            let (x, h, cap_h) = record(b);
            let last = pieces.len() - 1;
            let left_piece = if has_core { core_idx } else { 0 };
            cuts.push(CutRecord { x, h, cap_h, left_piece, right_piece: last });
        }
    }
    let kept: f64 = pieces.iter().map(|p| p.1.enclosed_volume()).sum();
    let removed = surface.enclosed_volume() - kept;
    if !(removed > 0.0) {
        return Err(SurgeryError::NonPositiveRemovedVolume(removed));
    }
    Ok(SurgeryOutcome { pieces, cuts, removed_volume: removed })
}

/// Neck core between two cuts, shortened until its caps clear the
/// neighbouring pieces by at least one cell. `None` when nothing is left.
fn core_piece(
    builder: &PieceBuilder<'_>,
    k_start: i64,
    k_end: i64,
    lo_bound: f64,
    hi_bound: f64,
    lo_end: PieceEnd,
    hi_end: PieceEnd,
) -> Option<ProfileSurface> {
    let dx = builder.surface.dx();
    let mut a = k_start;
    if matches!(lo_end, PieceEnd::Tangent) {
        a += 1;
        while a < k_end && builder.cap_pole(a, false) < lo_bound + dx {
            a += 1;
        }
    }
    let mut b = k_end;
    if matches!(hi_end, PieceEnd::Tangent) {
        b -= 1;
        while b > a && builder.cap_pole(b, true) > hi_bound - dx {
            b -= 1;
        }
    }
    if b < a + 4 {
        return None;
    }
    builder.build(a, b, lo_end, hi_end, false).ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    AllNeck,
    UniformlyConvex,
}

/// A recorded snapshot of one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryFrame {
    pub t: f64,
    pub component_id: u64,
    pub surface: ProfileSurface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HistoryEvent {
    FlowSegment {
        t_start: f64,
        t_end: f64,
        /// Indices into `SurgeryHistory::frames`.
        frames: Vec<usize>,
    },
    StandardSurgery {
        component: u64,
        t: f64,
        cut: CutRecord,
        /// Share of the removed volume attributed to this cut.
        removed_volume: f64,
        /// Components on the two sides of the cut.
        left_child: u64,
        right_child: u64,
    },
    Discard {
        component: u64,
        t: f64,
        classification: Classification,
        reason: DiscardReason,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryHistory {
    pub dim: usize,
    pub params: SurgeryParams,
    pub events: Vec<HistoryEvent>,
    pub frames: Vec<HistoryFrame>,
    pub surgery_count: usize,
    /// Components still alive at the end; empty for a completed run.
    pub final_components: Vec<(u64, ProfileSurface)>,
}

impl SurgeryHistory {
    /// Frames of one component in time order.
    pub fn frames_of(&self, id: u64) -> Vec<&HistoryFrame> {
        self.frames.iter().filter(|f| f.component_id == id).collect()
    }

    /// Pieces produced by surgery on `id`, left to right.
    pub fn children_of(&self, id: u64) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for e in &self.events {
            if let HistoryEvent::StandardSurgery { component, left_child, right_child, .. } = e {
                if *component == id {
                    for c in [*left_child, *right_child] {
                        if !out.contains(&c) {
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn discard_of(&self, id: u64) -> Option<(Classification, DiscardReason)> {
        self.events.iter().find_map(|e| match e {
            HistoryEvent::Discard { component, classification, reason, .. } if *component == id => {
                Some((*classification, *reason))
            }
            _ => None,
        })
    }

    pub fn discards(&self) -> Vec<(u64, Classification, DiscardReason)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                HistoryEvent::Discard { component, classification, reason, .. } => {
                    Some((*component, *classification, *reason))
                }
                _ => None,
            })
            .collect()
    }

    pub fn surgeries(&self) -> Vec<&HistoryEvent> {
        self.events.iter().filter(|e| matches!(e, HistoryEvent::StandardSurgery { .. })).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryFlowOptions {
    /// Record every `frame_stride`-th flow step (segment ends are always kept).
    pub frame_stride: u64,
}

impl Default for SurgeryFlowOptions {
    fn default() -> Self {
        SurgeryFlowOptions { frame_stride: 200 }
    }
}

/// Volume of the smallest piece a surgery can excise: a cylinder of radius
/// `(n - 1) / H2` and length `2 window_L (n - 1) / H2`.
pub fn min_removed_volume(dim: usize, params: &SurgeryParams) -> f64 {
    let r = (dim as f64 - 1.0) / params.h2;
    unit_ball_volume(dim - 1) * r.powi(dim as i32 - 1) * 2.0 * params.window_l * r
}

/// Alternate the flow with surgery until every component has been discarded.
pub fn surgery_flow(
    initial: &FlowState,
    params: &SurgeryParams,
    options: &SurgeryFlowOptions,
) -> Result<SurgeryHistory> {
    params.validate()?;
    let dim = initial.components[0].dim();
    let bound = (initial.total_volume() / min_removed_volume(dim, params)).ceil() as usize;
    let stride = options.frame_stride.max(1);
    let mut history = SurgeryHistory {
        dim,
        params: *params,
        events: Vec::new(),
        frames: Vec::new(),
        surgery_count: 0,
        final_components: Vec::new(),
    };
    let mut active: Vec<(u64, ProfileSurface)> =
        initial.components.iter().cloned().enumerate().map(|(i, s)| (i as u64, s)).collect();
    let mut next_id = active.len() as u64;
    let mut t = initial.t;
    let mut step_count = initial.step_count;
    while !active.is_empty() {
        let state = FlowState {
            components: active.iter().map(|a| a.1.clone()).collect(),
            t,
            step_count,
            params: initial.params,
        };
        let ids: Vec<u64> = active.iter().map(|a| a.0).collect();
        let first_frame = history.frames.len();
        let start_step = state.step_count;
        let mut pending: Option<FlowState> = None;
        // Later segments start from states that were already recorded.
        let record_initial = first_frame == 0;
        let (end, event) = flow::run_until_observed(&state, StopCondition::curvature(params.h3), |st| {
            if st.step_count == start_step && !record_initial {
                return;
            }
            if (st.step_count - start_step).is_multiple_of(stride) {
                push_frames(&mut history.frames, &ids, st);
                pending = None;
            } else {
                pending = Some(st.clone());
            }
        })?;
        if let Some(last) = pending {
            push_frames(&mut history.frames, &ids, &last);
        }
        history.events.push(HistoryEvent::FlowSegment {
            t_start: t,
            t_end: end.t,
            frames: (first_frame..history.frames.len()).collect(),
        });
        t = end.t;
        step_count = end.step_count;
        for (slot, s) in active.iter_mut().zip(end.components) {
            slot.1 = s;
        }
        let hit = match event {
            StopEvent::ThresholdHit { component, .. } | StopEvent::Extinction { component } => component,
            StopEvent::TimeLimit => unreachable!("no time limit requested"),
        };
        let (id, surface) = active.remove(hit);
        let necks = match event {
            StopEvent::Extinction { .. } if !surface.is_periodic() => Vec::new(),
            _ => detect_necks(&surface, hit, params)?,
        };
        if necks.is_empty() {
            let classification = classify(&surface)?;
            history.events.push(HistoryEvent::Discard {
                component: id,
                t,
                classification,
                reason: DiscardReason::UniformlyConvex,
            });
            continue;
        }
        let neck = continue_neck(&surface, &necks[0], params)?;
        let cuttable = !neck.is_loop()
            && (neck.left_end == Some(NeckEnd::LowCurvature) || neck.right_end == Some(NeckEnd::LowCurvature));
        if !cuttable {
            let classification = classify(&surface)?;
            history.events.push(HistoryEvent::Discard {
                component: id,
                t,
                classification,
                reason: DiscardReason::AllNeck,
            });
            continue;
        }
        let outcome = perform_surgery(&surface, &neck, params)?;
        let child_ids: Vec<u64> = (0..outcome.pieces.len() as u64).map(|j| next_id + j).collect();
        next_id += outcome.pieces.len() as u64;
        let share = outcome.removed_volume / outcome.cuts.len() as f64;
        for cut in &outcome.cuts {
            history.surgery_count += 1;
            history.events.push(HistoryEvent::StandardSurgery {
                component: id,
                t,
                cut: *cut,
                removed_volume: share,
                left_child: child_ids[cut.left_piece],
                right_child: child_ids[cut.right_piece],
            });
        }
        if history.surgery_count > bound {
            return Err(SurgeryError::NonTermination { count: history.surgery_count, bound });
        }
        let mut retained = Vec::new();
        for ((role, piece), cid) in outcome.pieces.into_iter().zip(child_ids) {
            history.frames.push(HistoryFrame { t, component_id: cid, surface: piece.clone() });
            match role {
                PieceRole::Core => {
                    let classification = classify(&piece)?;
                    history.events.push(HistoryEvent::Discard {
                        component: cid,
                        t,
                        classification,
                        reason: DiscardReason::AllNeck,
                    });
                }
                PieceRole::Retained => {
                    let (_, h) = flow::surface_max_h(&piece)?;
                    if h > params.h2 {
                        return Err(SurgeryError::PostSurgeryCurvature { h, h2: params.h2 });
                    }
                    retained.push((cid, piece));
                }
            }
        }
        // Keep components ordered by id so runs are reproducible.
        active.extend(retained);
        active.sort_by_key(|a| a.0);
    }
    Ok(history)
}

fn push_frames(frames: &mut Vec<HistoryFrame>, ids: &[u64], st: &FlowState) {
    for (id, s) in ids.iter().zip(&st.components) {
        frames.push(HistoryFrame { t: st.t, component_id: *id, surface: s.clone() });
    }
}

/// Diffeomorphism class of a closed component, recorded by genus: `0` is the
/// sphere and `k` the connected sum of `k` copies of `S^{n-1} x S^1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldClass {
    pub genus: usize,
}

impl ManifoldClass {
    pub const SPHERE: ManifoldClass = ManifoldClass { genus: 0 };
}

/// What a single cut does to the component it is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum CutOutcome {
    Connected { class: ManifoldClass },
    Disconnecting { left: ManifoldClass, right: ManifoldClass },
}

/// Case realized by cutting `neck` on `pre`. A periodic profile opens into a
/// single sphere; a capped profile splits into two spheres.
pub fn classify_cut_outcome(pre: &ProfileSurface, _neck: &NeckRegion) -> CutOutcome {
    if pre.is_periodic() {
        CutOutcome::Connected { class: ManifoldClass::SPHERE }
    } else {
        CutOutcome::Disconnecting { left: ManifoldClass::SPHERE, right: ManifoldClass::SPHERE }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowParams;
    use crate::geometry::capsule_radius;

    const DX: f64 = 0.002;

    fn params() -> SurgeryParams {
        SurgeryParams { window_l: 3.0, ..SurgeryParams::new(10.0, 30.0, 60.0) }
    }

    fn dumbbell() -> ProfileSurface {
        ProfileSurface::dumbbell(2, 0.5, 0.05, 1.0, DX).unwrap()
    }

    fn full_neck(s: &ProfileSurface) -> NeckRegion {
        let seeds = detect_necks(s, 0, &params()).unwrap();
        assert_eq!(seeds.len(), 1, "{seeds:?}");
        continue_neck(s, &seeds[0], &params()).unwrap()
    }

    #[test]
    fn round_sphere_has_no_necks() {
        let s = ProfileSurface::sphere(2, 0.05, 0.0, 0.001).unwrap();
        assert!(detect_necks(&s, 0, &params()).unwrap().is_empty());
    }

    #[test]
    fn dumbbell_neck_spans_the_waist_with_low_curvature_ends() {
        let s = dumbbell();
        let neck = full_neck(&s);
        assert!(s.x(neck.i_lo) < 0.0 && s.x(neck.i_hi) > 0.0);
        assert_eq!(neck.left_end, Some(NeckEnd::LowCurvature));
        assert_eq!(neck.right_end, Some(NeckEnd::LowCurvature));
    }

    #[test]
    fn thin_torus_is_one_loop() {
        let s = ProfileSurface::torus(2, 1.0, 0.05, 0.01).unwrap();
        let necks = detect_necks(&s, 0, &params()).unwrap();
        assert_eq!(necks.len(), 1);
        assert!(necks[0].is_loop());
    }

    #[test]
    fn spike_ends_in_a_cap() {
        let f = |x: f64| {
            let bell = (0.25 - (x + 0.5).powi(2)).max(0.0).sqrt();
            bell.max(capsule_radius(-0.5, 1.0, 0.05, x))
        };
        let s = ProfileSurface::capped_from_fn(2, DX, -1.0, 1.0, f).unwrap();
        let neck = full_neck(&s);
        assert_eq!(neck.right_end, Some(NeckEnd::Cap));
        assert_eq!(neck.left_end, Some(NeckEnd::LowCurvature));
    }

    #[test]
    fn invalid_seed_is_rejected() {
        let s = dumbbell();
        let seed = NeckRegion { component: 0, i_lo: 0, i_hi: 3, left_end: None, right_end: None };
        assert_eq!(continue_neck(&s, &seed, &params()), Err(SurgeryError::InvalidSeed));
    }

    #[test]
    fn dumbbell_surgery_gives_three_positive_pieces() {
        let s = dumbbell();
        let neck = full_neck(&s);
        let out = perform_surgery(&s, &neck, &params()).unwrap();
        assert_eq!(out.pieces.len(), 3);
        assert_eq!(out.cuts.len(), 2);
        let roles: Vec<PieceRole> = out.pieces.iter().map(|p| p.0).collect();
        assert_eq!(roles, [PieceRole::Retained, PieceRole::Core, PieceRole::Retained]);
        for (_, p) in &out.pieces {
            assert!(p.enclosed_volume() > 0.0);
        }
        for (role, p) in &out.pieces {
            if *role == PieceRole::Retained {
                assert!(p.max_mean_curvature().unwrap().1 <= params().h2);
            }
        }
        assert!(out.removed_volume > 0.0);
    }

    #[test]
    fn loop_neck_cannot_be_cut() {
        let s = ProfileSurface::torus(2, 1.0, 0.05, 0.01).unwrap();
        let neck = detect_necks(&s, 0, &params()).unwrap()[0];
        assert_eq!(perform_surgery(&s, &neck, &params()), Err(SurgeryError::InvalidNeckEnds));
    }

    #[test]
    fn unresolved_ends_cannot_be_cut() {
        let s = dumbbell();
        let seed = detect_necks(&s, 0, &params()).unwrap()[0];
        assert_eq!(perform_surgery(&s, &seed, &params()), Err(SurgeryError::InvalidNeckEnds));
    }

    #[test]
    fn classification_by_kind_and_convexity() {
        let sphere = classify(&ProfileSurface::sphere(2, 1.0, 0.0, 0.01).unwrap()).unwrap();
        assert_eq!(sphere, Classification { topology: Topology::Sphere, uniformly_convex: true });
        let torus = classify(&ProfileSurface::torus(2, 1.0, 0.1, 0.01).unwrap()).unwrap();
        assert_eq!(torus.topology, Topology::Torus);
        assert!(!torus.uniformly_convex);
        assert!(!classify(&dumbbell()).unwrap().uniformly_convex);
    }

    #[test]
    fn cut_outcomes() {
        let torus = ProfileSurface::torus(2, 1.0, 0.05, 0.01).unwrap();
        let neck = detect_necks(&torus, 0, &params()).unwrap()[0];
        assert_eq!(classify_cut_outcome(&torus, &neck), CutOutcome::Connected { class: ManifoldClass::SPHERE });
        let s = dumbbell();
        assert_eq!(
            classify_cut_outcome(&s, &full_neck(&s)),
            CutOutcome::Disconnecting { left: ManifoldClass::SPHERE, right: ManifoldClass::SPHERE }
        );
    }

    #[test]
    fn parameter_ordering_is_enforced() {
        assert!(SurgeryParams::new(2.0, 1.0, 3.0).validate().is_err());
        assert!(SurgeryParams::new(1.0, 2.0, 3.0).validate().is_ok());
    }

    fn run(s: ProfileSurface, p: &SurgeryParams) -> SurgeryHistory {
        let state = FlowState::new(vec![s], FlowParams::default()).unwrap();
        surgery_flow(&state, p, &SurgeryFlowOptions::default()).unwrap()
    }

    #[test]
    fn sphere_flows_to_a_convex_discard() {
        let h = run(ProfileSurface::sphere(2, 0.2, 0.0, 0.005).unwrap(), &SurgeryParams::new(20.0, 60.0, 120.0));
        assert_eq!(h.surgery_count, 0);
        assert_eq!(h.events.len(), 2);
        assert!(matches!(h.events[0], HistoryEvent::FlowSegment { .. }));
        let d = h.discards();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].1.topology, Topology::Sphere);
        assert_eq!(d[0].2, DiscardReason::UniformlyConvex);
    }

    #[test]
    fn thin_torus_is_discarded_whole() {
        let h = run(ProfileSurface::torus(2, 1.0, 0.1, 0.005).unwrap(), &SurgeryParams::new(20.0, 60.0, 120.0));
        assert_eq!(h.surgery_count, 0);
        let d = h.discards();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].1.topology, d[0].2), (Topology::Torus, DiscardReason::AllNeck));
    }
}
