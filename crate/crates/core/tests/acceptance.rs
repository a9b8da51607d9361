//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use mcf_surgery::flow::*;
use mcf_surgery::geometry::*;
use mcf_surgery::isotopy::*;
use mcf_surgery::skeleton::*;
use mcf_surgery::surgery::*;
use std::path::PathBuf;
use std::result::Result;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn sphere_error(s: &ProfileSurface, r: f64) -> f64 {
    s.meridian().iter().map(|&(x, y)| (x.hypot(y) - r).abs()).fold(0.0, f64::max)
}

/// Exact sphere and cylinder tracking plus the extinction time.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let s = ProfileSurface::sphere(2, 1.0, 0.0, 1.0 / 200.0).map_err(|e| e.to_string())?;
    let state = FlowState::new(vec![s], FlowParams::default()).map_err(|e| e.to_string())?;
    let mut err = 0.0f64;
    let mut failure = None;
    let (end, _) = run_until_observed(&state, StopCondition::time(0.24), |st| {
        match exact_sphere_radius(1.0, 2, st.t) {
            Ok(r) => err = err.max(sphere_error(&st.components[0], r)),
            Err(e) => failure = Some(e.to_string()),
        }
    })
    .map_err(|e| e.to_string())?;
    if let Some(f) = failure {
        return Err(f);
    }
    let (ext, event) = run_until(&end, StopCondition::extinction()).map_err(|e| e.to_string())?;
    let sphere_secs = start.elapsed().as_secs_f64();
    ensure(err <= 2e-3, format!("sphere sup error {err:.3e} > 2e-3"))?;
    ensure(matches!(event, StopEvent::Extinction { .. }), format!("sphere stopped by {event:?}"))?;
    ensure((ext.t - 0.25).abs() <= 1e-2, format!("extinction at {} not within 1e-2 of 0.25", ext.t))?;

    let start = Instant::now();
    let cyl = ProfileSurface::torus(2, 1.0, 0.5, 1.0 / 200.0).map_err(|e| e.to_string())?;
    let state = FlowState::new(vec![cyl], FlowParams::default()).map_err(|e| e.to_string())?;
    let t_end = (0.25 - 0.01) / 2.0;
    let mut cerr = 0.0f64;
    run_until_observed(&state, StopCondition::time(t_end), |st| {
        let r = exact_cylinder_radius(0.5, 2, st.t).unwrap_or(0.0);
        let s = &st.components[0];
        cerr = cerr.max(s.radii().iter().map(|x| (x - r).abs()).fold(0.0, f64::max));
    })
    .map_err(|e| e.to_string())?;
    let cyl_secs = start.elapsed().as_secs_f64();
    ensure(cerr <= 1e-3, format!("cylinder error {cerr:.3e} > 1e-3"))?;
    ensure(sphere_secs < 10.0 && cyl_secs < 10.0, format!("runtime {sphere_secs:.1}s / {cyl_secs:.1}s"))?;
    Ok(format!(
        "sphere err {err:.2e}, extinction t={:.5}, cylinder err {cerr:.2e}, {sphere_secs:.1}s/{cyl_secs:.1}s",
        ext.t
    ))
}

/// Per-step residual and accumulated residual of the sphere run up to `t_end`.
fn area_residuals(dx: f64, t_end: f64) -> Result<(f64, f64), String> {
    let s = ProfileSurface::sphere(2, 1.0, 0.0, dx).map_err(|e| e.to_string())?;
    let state = FlowState::new(vec![s], FlowParams::default()).map_err(|e| e.to_string())?;
    let mut prev: Option<FlowState> = None;
    let mut worst = 0.0f64;
    let mut accumulated = 0.0;
    let mut failure = None;
    run_until_observed(&state, StopCondition::time(t_end), |st| {
        if let Some(p) = &prev {
            match diagnostics(p, st) {
                Ok(d) => {
                    worst = worst.max(d.area_decay_residual);
                    accumulated += d.area_balance.abs();
                }
                Err(e) => failure = Some(e.to_string()),
            }
        }
        prev = Some(st.clone());
    })
    .map_err(|e| e.to_string())?;
    match failure {
        Some(f) => Err(f),
        None => Ok((worst, accumulated)),
    }
}

/// Area evolution residual and its convergence under refinement.
fn criterion_2() -> Outcome {
    let t_end = 0.2;
    let (w1, a1) = area_residuals(1.0 / 100.0, t_end)?;
    let (w2, a2) = area_residuals(1.0 / 200.0, t_end)?;
    ensure(w1.max(w2) <= 1e-2, format!("per-step residual {:.3e} > 1e-2", w1.max(w2)))?;
    let ratio = a1 / a2;
    ensure(ratio >= 3.0, format!("accumulated residual ratio {ratio:.2} < 3"))?;
    Ok(format!("max per-step residual {:.2e}, accumulated {a1:.2e} -> {a2:.2e} (x{ratio:.1})", w1.max(w2)))
}

/// Concentric spheres stay apart.
fn criterion_3() -> Outcome {
    let dx = 1.0 / 200.0;
    let outer = ProfileSurface::sphere(2, 1.0, 0.0, dx).map_err(|e| e.to_string())?;
    let inner = ProfileSurface::sphere(2, 0.5, 0.0, dx).map_err(|e| e.to_string())?;
    let state = FlowState::new(vec![outer, inner], FlowParams::default()).map_err(|e| e.to_string())?;
    let mut prev: Option<FlowState> = None;
    let mut worst_drop = 0.0f64;
    let mut steps = 0;
    let mut failure = None;
    let (_, event) = run_until_observed(&state, StopCondition::extinction(), |st| {
        if let Some(p) = &prev {
            match (diagnostics(p, st), p.components.len()) {
                (Ok(d), 2) => {
                    let before = p.components[0].distance_to(&p.components[1]);
                    worst_drop = worst_drop.max(before - d.min_pairwise_distance);
                    steps += 1;
                }
                (Err(e), _) => failure = Some(e.to_string()),
                _ => {}
            }
        }
        prev = Some(st.clone());
    })
    .map_err(|e| e.to_string())?;
    if let Some(f) = failure {
        return Err(f);
    }
    ensure(matches!(event, StopEvent::Extinction { component: 1 }), format!("stopped by {event:?}"))?;
    ensure(worst_drop <= 1e-4, format!("distance dropped by {worst_drop:.3e} in one step"))?;
    Ok(format!("{steps} steps until inner extinction, largest per-step drop {worst_drop:.2e}"))
}

fn dumbbell_history() -> Result<SurgeryHistory, String> {
    let s = ProfileSurface::dumbbell(2, 0.5, 0.05, 1.0, 1.0 / 500.0).map_err(|e| e.to_string())?;
    let state = FlowState::new(vec![s], FlowParams::default()).map_err(|e| e.to_string())?;
    surgery_flow(&state, &SurgeryParams::new(20.0, 60.0, 120.0), &SurgeryFlowOptions::default())
        .map_err(|e| e.to_string())
}

/// Dumbbell: neckpinch, two surgeries, three spheres, monotone trace.
fn criterion_4() -> Outcome {
    let start = Instant::now();
    let h = dumbbell_history()?;
    let pre = h.frames_of(0).last().map(|f| f.surface.clone()).ok_or("no frames of the initial component")?;
    let (i_hit, h_hit) = pre.max_mean_curvature().map_err(|e| e.to_string())?;
    let x_hit = pre.x(i_hit);
    ensure(h_hit >= 120.0 && x_hit.abs() < 0.2, format!("threshold hit at x={x_hit} with H={h_hit}"))?;
    ensure(h.surgery_count == 2, format!("{} surgeries", h.surgery_count))?;
    let discards = h.discards();
    ensure(discards.len() == 3, format!("{} discards", discards.len()))?;
    ensure(
        discards.iter().all(|d| d.1.topology == Topology::Sphere),
        format!("discard classes {discards:?}"),
    )?;
    let children = h.children_of(0);
    let mut child_volume = 0.0;
    let mut retained_h = 0.0f64;
    for &c in &children {
        let first = &h.frames_of(c)[0].surface;
        child_volume += first.enclosed_volume();
        if h.discard_of(c).map(|d| d.1) != Some(DiscardReason::AllNeck) {
            retained_h = retained_h.max(first.max_mean_curvature().map_err(|e| e.to_string())?.1);
        }
    }
    ensure(retained_h <= 60.0, format!("retained max H {retained_h} > H2"))?;
    let removed: f64 = h
        .surgeries()
        .iter()
        .map(|e| match e {
            HistoryEvent::StandardSurgery { removed_volume, .. } => *removed_volume,
            _ => 0.0,
        })
        .sum();
    // Volume lost inside a window around the cuts only; outside it the
    // pieces must reproduce the original surface.
    let cuts: Vec<f64> = h
        .surgeries()
        .iter()
        .filter_map(|e| match e {
            HistoryEvent::StandardSurgery { cut, .. } => Some(cut.x),
            _ => None,
        })
        .collect();
    let lo = cuts.iter().cloned().fold(f64::INFINITY, f64::min) - 0.05;
    let hi = cuts.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.05;
    let local: f64 = pre.enclosed_volume_between(lo, hi)
        - children.iter().map(|&c| h.frames_of(c)[0].surface.enclosed_volume_between(lo, hi)).sum::<f64>();
    let v0 = pre.enclosed_volume();
    let closure = (v0 - child_volume - local).abs() / v0;
    let recorded = (removed - local).abs() / v0;
    ensure(closure <= 1e-6 && recorded <= 1e-6, format!("volume accounting off by {closure:.3e} / {recorded:.3e}"))?;
    let trace = build_isotopy(&h, IsotopyParams::default()).map_err(|e| e.to_string())?;
    let report = check_monotone(&trace);
    ensure(
        report.pass,
        format!("trace not monotone: {:?}, depth {:.3e}", report.first_violation, report.max_violation_depth),
    )?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("runtime {secs:.1}s"))?;
    Ok(format!(
        "hit x={x_hit:.4} H={h_hit:.1}; 2 surgeries; 3 Sphere discards; retained H {retained_h:.1}; \
         removed {local:.3e}, volume residual {closure:.1e}; {} monotone frames; {secs:.1}s",
        trace.frames.len()
    ))
}

/// Thin torus: a loop neck, no surgery, thick knot near the unit circle.
fn criterion_5() -> Outcome {
    let s = ProfileSurface::torus(2, 1.0, 0.1, 1.0 / 200.0).map_err(|e| e.to_string())?;
    let params = SurgeryParams::new(20.0, 60.0, 120.0);
    let state = FlowState::new(vec![s], FlowParams::default()).map_err(|e| e.to_string())?;
    let h = surgery_flow(&state, &params, &SurgeryFlowOptions::default()).map_err(|e| e.to_string())?;
    let last = &h.frames_of(0).last().ok_or("no frames")?.surface;
    let necks = detect_necks(last, 0, &params).map_err(|e| e.to_string())?;
    ensure(necks.len() == 1 && necks[0].is_loop(), format!("necks {necks:?}"))?;
    ensure(h.surgery_count == 0, format!("{} surgeries", h.surgery_count))?;
    let d = h.discards();
    ensure(
        d.len() == 1 && d[0].1.topology == Topology::Torus && d[0].2 == DiscardReason::AllNeck,
        format!("discards {d:?}"),
    )?;
    let trace = build_isotopy(&h, IsotopyParams { target_eps: 0.05, ..IsotopyParams::default() })
        .map_err(|e| e.to_string())?;
    let (core, radius) = match &trace.terminals[..] {
        [Terminal::ThickKnot { core, radius }] => (core.clone(), *radius),
        other => return Err(format!("terminals {other:?}")),
    };
    // Distance to the unit circle along the polygon: vertices and edge midpoints.
    let m = core.len();
    let mut sup = 0.0f64;
    for i in 0..m {
        let (a, b) = (&core[i], &core[(i + 1) % m]);
        for t in [0.0, 0.5] {
            let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
            let planar = p[0].hypot(p[1]);
            sup = sup.max((planar - 1.0).hypot(p[2..].iter().map(|v| v * v).sum::<f64>().sqrt()));
        }
    }
    ensure(sup + radius <= 0.05, format!("knot core {sup:.3e} plus tube {radius:.3e} exceeds 0.05"))?;
    let report = check_monotone(&trace);
    ensure(report.pass, format!("trace not monotone: {:?}", report.first_violation))?;
    Ok(format!("loop neck, 0 surgeries, Torus/AllNeck; core error {sup:.2e}, tube radius {radius:.3e}"))
}

/// Brute-force count over raw per-cube face subsets of an `a x b` planar box.
fn brute_force_codes(a: usize, b: usize) -> (u64, u64) {
    let cubes: Vec<(usize, usize)> = (0..a).flat_map(|i| (0..b).map(move |j| (i, j))).collect();
    let k = cubes.len();
    let (mut face_using, mut total) = (0u64, 0u64);
    for assignment in 0u64..(1u64 << (4 * k)) {
        let subset = |c: usize| (assignment >> (4 * c)) & 0xF;
        let uses = |c: usize, f: u64| subset(c) >> f & 1 == 1;
        let mut ok = true;
        for (c, &(i, j)) in cubes.iter().enumerate() {
            // Faces: 0 = -x, 1 = +x, 2 = -y, 3 = +y.
            let neighbours = [
                (i.checked_sub(1).map(|ii| (ii, j)), 0, 1),
                ((i + 1 < a).then_some((i + 1, j)), 1, 0),
                (j.checked_sub(1).map(|jj| (i, jj)), 2, 3),
                ((j + 1 < b).then_some((i, j + 1)), 3, 2),
            ];
            for (nb, f, g) in neighbours {
                match nb {
                    None if uses(c, f) => ok = false,
                    Some(p) => {
                        let d = cubes.iter().position(|q| *q == p).unwrap();
                        if uses(c, f) != uses(d, g) {
                            ok = false;
                        }
                    }
                    None => {}
                }
            }
            if subset(c).count_ones() == 1 {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let empty = (0..k).filter(|&c| subset(c) == 0).count() as u32;
        if assignment != 0 {
            face_using += 1;
        }
        total += (1u64 << empty) - u64::from(assignment == 0);
    }
    (face_using, total)
}

/// Finiteness bound, cover size and enumeration against brute force.
fn criterion_6() -> Outcome {
    let start = Instant::now();
    let bound = count_bound(2, 1.0, 10.0, 1.0);
    ensure(bound.exact == Some(460_800), format!("count_bound = {bound:?}"))?;
    let cover = make_cover(2, 1.0, 10.0, 1.0).map_err(|e| e.to_string())?;
    ensure(cover.cube_count <= 28_800, format!("cube count {}", cover.cube_count))?;
    let mut lines = Vec::new();
    for (a, b) in [(2usize, 1usize), (2, 2)] {
        let e = enumerate_codes(&cover, &[0, 0], &[a, b]).map_err(|e| e.to_string())?;
        let oracle = brute_force_codes(a, b);
        ensure(
            (e.face_using, e.total) == oracle,
            format!("{a}x{b}: enumerated {:?}, brute force {oracle:?}", (e.face_using, e.total)),
        )?;
        lines.push(format!("{a}x{b}: {} face-using / {} total", e.face_using, e.total));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("runtime {secs:.2}s"))?;
    Ok(format!("bound 460800, {} cubes, {}; {secs:.2}s", cover.cube_count, lines.join(", ")))
}

fn rectangle_loop(cover: &CubicalCover, shift: [f64; 2]) -> Skeleton {
    let l = cover.ell;
    let (lo, hi) = (-4.5 * l, 5.5 * l);
    let corners = [[lo, lo], [hi, lo], [hi, hi], [lo, hi]];
    Skeleton {
        nodes: Vec::new(),
        arcs: Vec::new(),
        loops: vec![corners.iter().map(|c| vec![c[0] + shift[0], c[1] + shift[1]]).collect()],
        tube_radius_floor: delta(cover.c, cover.alpha),
    }
}

/// Canonical codes: idempotence, translation stability, thickening invariance.
fn criterion_7() -> Outcome {
    let cover = make_cover(2, 1.0, 10.0, 1.0).map_err(|e| e.to_string())?;
    let (code, rerouted) = canonicalize(&rectangle_loop(&cover, [0.0, 0.0]), &cover).map_err(|e| e.to_string())?;
    ensure(code.cells.len() == 40, format!("{} occupied cubes", code.cells.len()))?;
    let (again, _) = canonicalize(&rerouted, &cover).map_err(|e| e.to_string())?;
    ensure(codes_isotopy_equal(&code, &again) == Ok(true), "canonicalization is not idempotent".into())?;
    let step = cover.ell / 100.0;
    for k in 0..16 {
        let a = k as f64 * std::f64::consts::PI / 8.0;
        let shifted = rectangle_loop(&cover, [step * a.cos(), step * a.sin()]);
        let (c, _) = canonicalize(&shifted, &cover).map_err(|e| e.to_string())?;
        ensure(codes_isotopy_equal(&code, &c) == Ok(true), format!("translation {k} changes the code"))?;
    }
    let big = make_cover(2, 3.0, 10.0, 1.0).map_err(|e| e.to_string())?;
    let mut codes = Vec::new();
    for tube in [0.1, 0.06] {
        let s = ProfileSurface::torus(2, 1.0, tube, 1.0 / 200.0).map_err(|e| e.to_string())?;
        let state = FlowState::new(vec![s], FlowParams::default()).map_err(|e| e.to_string())?;
        let h = surgery_flow(&state, &SurgeryParams::new(20.0, 60.0, 120.0), &SurgeryFlowOptions::default())
            .map_err(|e| e.to_string())?;
        let trace = build_isotopy(&h, IsotopyParams::default()).map_err(|e| e.to_string())?;
        let sk = extract_skeleton(&h, &trace).map_err(|e| e.to_string())?;
        codes.push(canonicalize(&sk, &big).map_err(|e| e.to_string())?.0);
    }
    ensure(codes_isotopy_equal(&codes[0], &codes[1]) == Ok(true), "thickenings give different codes".into())?;
    Ok(format!(
        "rectangle: 40 cubes, idempotent, stable under 16 shifts of ell/100; thick tori share a {}-cube code",
        codes[0].cells.len()
    ))
}

fn tree_bytes(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, std::fs::read(&path).map_err(|e| e.to_string())?));
    }
    out.sort();
    Ok(out)
}

/// Two runs of the shipped dumbbell scenario write identical files.
fn criterion_8() -> Outcome {
    let scenario = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/dumbbell.toml");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let report = mcf_surgery::cli::run_scenario(&scenario, out).map_err(|e| e.to_string())?;
        ensure(report.pass, "run produced a non-monotone trace".into())?;
    }
    let (ta, tb) = (tree_bytes(&a)?, tree_bytes(&b)?);
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    ensure(ta == tb, "output trees differ".into())?;
    let bytes: usize = ta.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files ({bytes} bytes) identical: {}", ta.len(), names.join(" ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("exact solution tracking", criterion_1),
        ("area evolution residual", criterion_2),
        ("avoidance", criterion_3),
        ("dumbbell end to end", criterion_4),
        ("torus pipeline", criterion_5),
        ("finiteness bound", criterion_6),
        ("canonicalization", criterion_7),
        ("determinism", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
