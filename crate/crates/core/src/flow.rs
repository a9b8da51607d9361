//! Explicit time stepping of mean curvature flow for profile surfaces.
//!
//! For a surface of revolution with profile `r(x, t)` moving with normal
//! velocity `-H`, the radius obeys
//!
//! ```text
//! r_t = r'' / (1 + r'^2) - (n - 1) / r
//! ```
//!
//! Graph samples are advanced with forward Euler and centred differences.
//! After every step the cap templates are refitted, slaved samples are reset
//! from them and samples swallowed by a retreating pole are dropped.

use crate::geometry::{
    axis_circle, check_two_convex, CapZones, GeometryError, ProfileKind, ProfileSurface, GEOM_TOL,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("radius of component {component} would cross zero at sample {index}")]
    StepCollapse { component: usize, index: usize },
    #[error("periodic component {component} reached its core radius")]
    LostEmbedding { component: usize },
    #[error("time {t} is past the extinction time {extinction}")]
    PastExtinction { t: f64, extinction: f64 },
    #[error("states are not consecutive steps of one flow")]
    MismatchedStates,
    #[error("components {a} and {b} intersect")]
    NotDisjoint { a: usize, b: usize },
    #[error("component {component} lost 2-convexity (margin {margin}) at t = {t}")]
    NotTwoConvex { component: usize, margin: f64, t: f64 },
    #[error("flow state has no components")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, FlowError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Safety factor on the explicit stability bound.
    pub cfl: f64,
    /// A component is extinct once its radius falls below `extinction_cells * dx`.
    pub extinction_cells: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { cfl: 0.2, extinction_cells: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub components: Vec<ProfileSurface>,
    pub t: f64,
    pub step_count: u64,
    pub params: FlowParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopEvent {
    ThresholdHit { component: usize, index: usize, h: f64 },
    Extinction { component: usize },
    TimeLimit,
}

/// Stopping rule for [`run_until`]; extinction always stops the run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StopCondition {
    pub h_max: Option<f64>,
    pub t_end: Option<f64>,
}

impl StopCondition {
    pub fn curvature(h_max: f64) -> Self {
        StopCondition { h_max: Some(h_max), t_end: None }
    }

    pub fn time(t_end: f64) -> Self {
        StopCondition { h_max: None, t_end: Some(t_end) }
    }

    pub fn extinction() -> Self {
        StopCondition::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    /// `|dA/dt + int H^2| / int H^2` over the step.
    pub area_decay_residual: f64,
    /// Signed area balance `A_next - A_prev + dt * int H^2`.
    pub area_balance: f64,
    /// `dt * int H^2`, the area the exact flow would lose.
    pub expected_area_loss: f64,
    /// Smallest distance between distinct components; infinite with one component.
    #[serde(with = "crate::io::inf_as_null")]
    pub min_pairwise_distance: f64,
    pub two_convexity_margin: f64,
}

impl FlowState {
    pub fn new(components: Vec<ProfileSurface>, params: FlowParams) -> Result<Self> {
        if components.is_empty() {
            return Err(FlowError::Empty);
        }
        for a in 0..components.len() {
            for b in a + 1..components.len() {
                if surfaces_intersect(&components[a], &components[b]) {
                    return Err(FlowError::NotDisjoint { a, b });
                }
            }
        }
        Ok(FlowState { components, t: 0.0, step_count: 0, params })
    }

    /// Largest mean curvature over all components, including pole templates.
    pub fn max_mean_curvature(&self) -> Result<(usize, usize, f64)> {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (c, s) in self.components.iter().enumerate() {
            let (i, h) = surface_max_h(s)?;
            if h > best.2 {
                best = (c, i, h);
            }
        }
        Ok(best)
    }

    pub fn total_area(&self) -> f64 {
        self.components.iter().map(ProfileSurface::area).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.components.iter().map(ProfileSurface::enclosed_volume).sum()
    }

    /// Index of the first component below the extinction floor.
    pub fn extinct_component(&self) -> Option<usize> {
        self.components.iter().position(|s| is_extinct(s, &self.params))
    }
}

/// Whether two profiles touch or cross in the meridian half-plane.
///
/// Both are compared as radius functions of the axial coordinate on the
/// union of their sample positions; nested surfaces do not intersect.
pub fn surfaces_intersect(a: &ProfileSurface, b: &ProfileSurface) -> bool {
    let support = |s: &ProfileSurface| s.poles().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let (a_lo, a_hi) = support(a);
    let (b_lo, b_hi) = support(b);
    let lo = a_lo.max(b_lo);
    let hi = a_hi.min(b_hi);
    if lo >= hi {
        return false;
    }
    let mut xs: Vec<f64> = a.meridian().into_iter().chain(b.meridian()).map(|p| p.0).collect();
    xs.retain(|&x| x >= lo && x <= hi);
    xs.push(lo);
    xs.push(hi);
    let (mut above, mut below) = (false, false);
    for x in xs {
        let d = a.radius_at(x) - b.radius_at(x);
        if d > GEOM_TOL {
            above = true;
        } else if d < -GEOM_TOL {
            below = true;
        } else if a.radius_at(x) > GEOM_TOL {
            return true;
        }
    }
    above && below
}

/// Largest mean curvature on one surface: `(sample index, H)`.
pub fn surface_max_h(s: &ProfileSurface) -> Result<(usize, f64)> {
    let (mut i, mut h) = s.max_mean_curvature()?;
    if let Some((hl, hr)) = s.pole_mean_curvatures() {
        if hl > h {
            h = hl;
            i = 0;
        }
        if hr > h {
            h = hr;
            i = s.len() - 1;
        }
    }
    Ok((i, h))
}

pub fn is_extinct(s: &ProfileSurface, params: &FlowParams) -> bool {
    let floor = params.extinction_cells * s.dx();
    if s.is_periodic() {
        s.min_radius() < floor
    } else {
        s.max_radius() < floor || s.len() < 5
    }
}

/// Stable time step for one surface.
pub fn stable_dt(s: &ProfileSurface, params: &FlowParams) -> f64 {
    let dx = s.dx();
    let m = (s.dim() - 1) as f64;
    let zones = s.cap_zones();
    if let Some(CapZones::Round { radius, .. }) = zones {
        return params.cfl * (dx * dx).min(radius * radius / s.dim() as f64);
    }
    let mut bound = f64::INFINITY;
    for i in 0..s.len() {
        if s.template_at(i, zones.as_ref()).is_some() {
            continue;
        }
        let (d1, _) = s.derivatives(i, zones.as_ref());
        let r = s.radii()[i];
        bound = bound.min((dx * dx * (1.0 + d1 * d1)).min(r * r / m));
    }
    params.cfl * bound
}

/// Advance one surface by `dt`.
pub fn advance_surface(s: &ProfileSurface, dt: f64, component: usize) -> Result<ProfileSurface> {
    let n = s.dim();
    let m = (n - 1) as f64;
    let zones = s.cap_zones();
    if let Some(CapZones::Round { center, radius }) = zones {
        let r2 = radius * radius - 2.0 * n as f64 * dt;
        if r2 <= 0.0 {
            return Err(FlowError::StepCollapse { component, index: 0 });
        }
        return ProfileSurface::sphere(n, r2.sqrt(), center, s.dx())
            .map_err(|_| FlowError::StepCollapse { component, index: 0 });
    }
    let mut radii = s.radii().to_vec();
    for (i, r_new) in radii.iter_mut().enumerate() {
        if s.template_at(i, zones.as_ref()).is_some() {
            continue;
        }
        let r = s.radii()[i];
        let (d1, d2) = s.derivatives(i, zones.as_ref());
        let rate = d2 / (1.0 + d1 * d1) - m / r;
        let next = r + dt * rate;
        if !(next > 0.0) {
            return Err(FlowError::StepCollapse { component, index: i });
        }
        *r_new = next;
    }
    match s.kind() {
        ProfileKind::Periodic { core_radius } => {
            if radii.iter().any(|&r| r >= core_radius) {
                return Err(FlowError::LostEmbedding { component });
            }
            Ok(ProfileSurface::periodic_from_samples(n, core_radius, radii)?)
        }
        ProfileKind::Capped { left_pole, right_pole } => {
            let Some(CapZones::Split { left, right }) = zones else {
                unreachable!("capped profiles always have cap zones")
            };
            let speed = n as f64;
            let lp = left_pole + dt * speed / left.radius;
            let rp = right_pole - dt * speed / right.radius;
            let k0 = s.first_index();
            rebuild_capped(
                s,
                &radii,
                k0 + left.boundary as i64,
                k0 + right.boundary as i64,
                lp,
                rp,
            )
            .map_err(|_| FlowError::StepCollapse { component, index: left.boundary })
        }
    }
}

/// Re-slave the cap samples of a capped profile to circles through its
/// current poles and boundary samples.
pub fn renormalize_caps(s: &ProfileSurface) -> std::result::Result<ProfileSurface, GeometryError> {
    match s.cap_zones() {
        None => Ok(s.clone()),
        Some(CapZones::Round { center, radius }) => {
            ProfileSurface::sphere(s.dim(), radius, center, s.dx())
        }
        Some(CapZones::Split { left, right }) => {
            let k0 = s.first_index();
            rebuild_capped(
                s,
                s.radii(),
                k0 + left.boundary as i64,
                k0 + right.boundary as i64,
                left.pole,
                right.pole,
            )
        }
    }
}

/// Lattice samples strictly between `lp` and `rp`: graph values from `radii`
/// (indexed like `s`) on `[k_left, k_right]`, circle values outside.
fn rebuild_capped(
    s: &ProfileSurface,
    radii: &[f64],
    k_left: i64,
    k_right: i64,
    lp: f64,
    rp: f64,
) -> std::result::Result<ProfileSurface, GeometryError> {
    let dx = s.dx();
    let k0 = s.first_index();
    let xl = k_left as f64 * dx;
    let xr = k_right as f64 * dx;
    if !(lp < xl && xr < rp) {
        return Err(GeometryError::Invalid("pole crossed the graph region".into()));
    }
    let at = |k: i64| radii[(k - k0) as usize];
    let fit = |x1: f64, r1: f64, x2: f64, r2: f64| {
        axis_circle(x1, r1, x2, r2).ok_or_else(|| GeometryError::Invalid("degenerate cap circle".into()))
    };
    let (cl, rl) = fit(lp, 0.0, xl, at(k_left))?;
    let (cr, rr) = fit(xr, at(k_right), rp, 0.0)?;
    let circle = |c: f64, rho: f64, x: f64| (rho * rho - (x - c) * (x - c)).max(0.0).sqrt();
    let tiny = 1e-12 * dx;
    let k_lo = (lp / dx).floor() as i64 + 1;
    let k_hi = (rp / dx).ceil() as i64 - 1;
    let mut first = None;
    let mut out = Vec::new();
    for k in k_lo..=k_hi {
        let x = k as f64 * dx;
        let r = if k < k_left {
            circle(cl, rl, x)
        } else if k > k_right {
            circle(cr, rr, x)
        } else {
            at(k)
        };
        if r <= tiny {
            if first.is_none() {
                continue;
            }
            break;
        }
        first.get_or_insert(k);
        out.push(r);
    }
    let first = first.ok_or_else(|| GeometryError::Invalid("no samples left".into()))?;
    ProfileSurface::capped_from_samples(s.dim(), dx, first, out, lp, rp)
}

/// One explicit step of the whole state with a common time step.
pub fn step(state: &FlowState) -> Result<FlowState> {
    step_capped(state, f64::INFINITY)
}

fn step_capped(state: &FlowState, max_dt: f64) -> Result<FlowState> {
    let dt = state
        .components
        .iter()
        .map(|s| stable_dt(s, &state.params))
        .fold(f64::INFINITY, f64::min)
        .min(max_dt);
    let components = state
        .components
        .iter()
        .enumerate()
        .map(|(c, s)| advance_surface(s, dt, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowState {
        components,
        t: state.t + dt,
        step_count: state.step_count + 1,
        params: state.params,
    })
}

/// Step until the stop condition or extinction.
pub fn run_until(state: &FlowState, stop: StopCondition) -> Result<(FlowState, StopEvent)> {
    run_until_observed(state, stop, |_| {})
}

/// As [`run_until`], calling `observe` on the initial state and after every step.
///
/// 2-convexity is monitored along the way; losing it aborts the run.
pub fn run_until_observed(
    state: &FlowState,
    stop: StopCondition,
    mut observe: impl FnMut(&FlowState),
) -> Result<(FlowState, StopEvent)> {
    let mut current = state.clone();
    observe(&current);
    loop {
        if let Some(component) = current.extinct_component() {
            return Ok((current, StopEvent::Extinction { component }));
        }
        for (c, s) in current.components.iter().enumerate() {
            let report = check_two_convex(s)?;
            if !report.is_two_convex {
                return Err(FlowError::NotTwoConvex {
                    component: c,
                    margin: report.min_lambda1_plus_lambda2,
                    t: current.t,
                });
            }
        }
        if let Some(h_max) = stop.h_max {
            let (component, index, h) = current.max_mean_curvature()?;
            if h >= h_max {
                return Ok((current, StopEvent::ThresholdHit { component, index, h }));
            }
        }
        let remaining = match stop.t_end {
            Some(t_end) if current.t >= t_end => return Ok((current, StopEvent::TimeLimit)),
            Some(t_end) => t_end - current.t,
            None => f64::INFINITY,
        };
        current = step_capped(&current, remaining)?;
        observe(&current);
    }
}

/// Radius of a round sphere under the flow, `sqrt(R0^2 - 2 n t)`.
pub fn exact_sphere_radius(r0: f64, n: usize, t: f64) -> Result<f64> {
    homogeneous_radius(r0, n as f64, t)
}

/// Radius of a round cylinder under the flow, `sqrt(r0^2 - 2 (n - 1) t)`.
pub fn exact_cylinder_radius(r0: f64, n: usize, t: f64) -> Result<f64> {
    homogeneous_radius(r0, (n - 1) as f64, t)
}

fn homogeneous_radius(r0: f64, k: f64, t: f64) -> Result<f64> {
    let extinction = r0 * r0 / (2.0 * k);
    if t >= extinction {
        return Err(FlowError::PastExtinction { t, extinction });
    }
    Ok((r0 * r0 - 2.0 * k * t).sqrt())
}

/// Diagnostics of one step `prev -> next`.
pub fn diagnostics(prev: &FlowState, next: &FlowState) -> Result<DiagnosticsRecord> {
    let dt = next.t - prev.t;
    if prev.components.len() != next.components.len()
        || next.step_count != prev.step_count + 1
        || !(dt > 0.0)
    {
        return Err(FlowError::MismatchedStates);
    }
    let mut h2_prev = 0.0;
    let mut h2_next = 0.0;
    for (a, b) in prev.components.iter().zip(&next.components) {
        h2_prev += a.h2_integral()?;
        h2_next += b.h2_integral()?;
    }
    let h2 = 0.5 * (h2_prev + h2_next);
    let balance = next.total_area() - prev.total_area() + dt * h2;
    let mut min_dist = f64::INFINITY;
    for a in 0..next.components.len() {
        for b in a + 1..next.components.len() {
            min_dist = min_dist.min(next.components[a].distance_to(&next.components[b]));
        }
    }
    let mut margin = f64::INFINITY;
    for s in &next.components {
        margin = margin.min(check_two_convex(s)?.min_lambda1_plus_lambda2);
    }
    Ok(DiagnosticsRecord {
        t: next.t,
        dt,
        area_decay_residual: (balance / dt).abs() / h2,
        area_balance: balance,
        expected_area_loss: dt * h2,
        min_pairwise_distance: min_dist,
        two_convexity_margin: margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_radii() {
        assert_eq!(exact_sphere_radius(1.0, 2, 0.0).unwrap(), 1.0);
        assert!(exact_sphere_radius(1.0, 2, 0.25 - 1e-9).unwrap() < 1e-3);
        assert!(matches!(exact_sphere_radius(1.0, 2, 0.25), Err(FlowError::PastExtinction { .. })));
        assert!(exact_cylinder_radius(0.5, 2, 0.125 - 1e-9).unwrap() < 1e-3);
        assert!(exact_cylinder_radius(0.5, 2, 0.125).is_err());
    }

    #[test]
    fn zero_time_limit_is_identity() {
        let s = ProfileSurface::sphere(2, 1.0, 0.0, 0.02).unwrap();
        let state = FlowState::new(vec![s], FlowParams::default()).unwrap();
        let (out, ev) = run_until(&state, StopCondition::time(0.0)).unwrap();
        assert_eq!(ev, StopEvent::TimeLimit);
        assert_eq!(out, state);
    }

    #[test]
    fn one_step_decreases_area() {
        let s = ProfileSurface::dumbbell(2, 0.5, 0.1, 1.0, 0.01).unwrap();
        let state = FlowState::new(vec![s], FlowParams::default()).unwrap();
        let next = step(&state).unwrap();
        assert!(next.total_area() < state.total_area());
        assert!(next.t > 0.0 && next.step_count == 1);
    }

    #[test]
    fn intersecting_components_rejected() {
        let a = ProfileSurface::sphere(2, 1.0, 0.0, 0.02).unwrap();
        let b = ProfileSurface::sphere(2, 1.0, 0.5, 0.02).unwrap();
        assert!(matches!(
            FlowState::new(vec![a, b], FlowParams::default()),
            Err(FlowError::NotDisjoint { .. })
        ));
    }

    #[test]
    fn diagnostics_single_component_distance_is_infinite() {
        let s = ProfileSurface::sphere(2, 1.0, 0.0, 0.02).unwrap();
        let state = FlowState::new(vec![s], FlowParams::default()).unwrap();
        let next = step(&state).unwrap();
        let d = diagnostics(&state, &next).unwrap();
        assert!(d.min_pairwise_distance.is_infinite());
        assert!(matches!(diagnostics(&next, &state), Err(FlowError::MismatchedStates)));
    }

    #[test]
    fn sphere_stops_at_curvature_threshold() {
        let s = ProfileSurface::sphere(2, 1.0, 0.0, 1.0 / 200.0).unwrap();
        let state = FlowState::new(vec![s], FlowParams::default()).unwrap();
        let (out, ev) = run_until(&state, StopCondition::curvature(20.0)).unwrap();
        assert!(matches!(ev, StopEvent::ThresholdHit { .. }));
        assert!((out.t - 0.2475).abs() < 2e-3, "t = {}", out.t);
    }
}
