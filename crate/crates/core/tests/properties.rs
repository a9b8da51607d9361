use mcf_surgery::flow::{self, FlowParams, FlowState};
use mcf_surgery::geometry::ProfileSurface;
use mcf_surgery::isotopy::{
    check_monotone, precondition_neck, straightline_trace, IsotopyTrace, SceneItem, Stage, TraceFrame,
};
use mcf_surgery::scenario::{parse_scenario, to_toml, Grid, InitialProfile, IsotopySection, OutputSection, Scenario, SurgerySection};
use mcf_surgery::skeleton::{canonicalize, count_bound, enumerate_codes, make_cover, CubicalCover, Skeleton};
use proptest::prelude::*;

fn trace(frames: Vec<ProfileSurface>, stage: Stage) -> IsotopyTrace {
    IsotopyTrace {
        frames: frames
            .into_iter()
            .map(|s| TraceFrame { stage, items: vec![SceneItem::Profile(s)], components: vec![0] })
            .collect(),
        terminals: Vec::new(),
    }
}

fn bumpy(dim: usize, amp: f64, freq: f64, dx: f64) -> ProfileSurface {
    ProfileSurface::capped_from_fn(dim, dx, -1.0, 1.0, |x| {
        (1.0 - x * x).max(0.0).sqrt() * (1.0 + amp * (freq * x).cos())
    })
    .unwrap()
}

fn rectangle(cover: &CubicalCover, lo: (f64, f64), hi: (f64, f64)) -> Skeleton {
    let e = cover.ell;
    Skeleton {
        nodes: Vec::new(),
        arcs: Vec::new(),
        loops: vec![vec![
            vec![lo.0 * e, lo.1 * e],
            vec![hi.0 * e, lo.1 * e],
            vec![hi.0 * e, hi.1 * e],
            vec![lo.0 * e, hi.1 * e],
        ]],
        tube_radius_floor: 6.0 * 2f64.sqrt() * e,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn curvature_identities_hold_per_sample(dim in 2usize..5, amp in 0.0f64..0.2, freq in 1.0f64..6.0) {
        let s = bumpy(dim, amp, freq, 0.02);
        let m = (dim - 1) as f64;
        for c in s.curvature_profile().unwrap() {
            prop_assert_eq!(c.h, c.lambda1 + m * c.lambda_rot);
            prop_assert_eq!(c.norm_a2, c.lambda1 * c.lambda1 + m * c.lambda_rot * c.lambda_rot);
        }
    }

    #[test]
    fn hull_containment_follows_pointwise_domination(scale in 0.3f64..0.99, amp in 0.0f64..0.2) {
        let outer = bumpy(2, amp, 3.0, 0.02);
        let radii: Vec<f64> = outer.radii().iter().map(|r| r * scale).collect();
        let inner = outer.with_samples(outer.first_index(), radii, outer.poles()).unwrap();
        for (x, r) in inner.meridian() {
            prop_assert!(outer.hull_contains(x, r));
            prop_assert!(outer.hull_contains(x, 0.5 * r));
        }
    }

    #[test]
    fn area_decreases_every_step(dim in 2usize..4, amp in 0.0f64..0.15, freq in 1.0f64..4.0) {
        let mut state = FlowState::new(vec![bumpy(dim, amp, freq, 0.02)], FlowParams::default()).unwrap();
        for _ in 0..40 {
            let next = flow::step(&state).unwrap();
            prop_assert!(next.total_area() < state.total_area());
            state = next;
        }
    }

    #[test]
    fn straight_lines_between_nested_graphs_are_monotone(
        r_from in 0.5f64..1.0, shrink in 0.05f64..0.95, amp in 0.0f64..0.1, steps in 1usize..12,
    ) {
        let from = ProfileSurface::capped_from_fn(2, 0.02, -1.0, 1.0, |x| {
            r_from * (1.0 - x * x).max(0.0).sqrt() * (1.0 + amp * (3.0 * x).cos())
        }).unwrap();
        let radii: Vec<f64> = from.radii().iter().map(|r| r * shrink).collect();
        let to = from.with_samples(from.first_index(), radii, from.poles()).unwrap();
        let frames = straightline_trace(&from, &to, steps).unwrap();
        prop_assert_eq!(frames.len(), steps);
        // Every intermediate frame lies pointwise between its endpoints.
        for f in &frames {
            for ((a, b), c) in from.radii().iter().zip(to.radii()).zip(f.radii()) {
                prop_assert!(c <= a && c >= b);
            }
        }
        let mut all = vec![from];
        all.extend(frames);
        prop_assert!(check_monotone(&trace(all, Stage::StraightLine)).pass);
    }

    #[test]
    fn pinching_then_shrinking_composes(half in 0.05f64..0.4, d in 0.005f64..0.05, steps in 2usize..10) {
        let s = ProfileSurface::dumbbell(2, 0.5, 0.05, 1.0, 0.004).unwrap();
        let pinch = precondition_neck(&s, (-half, half), d, steps).unwrap();
        let pinched = pinch.last().unwrap().clone();
        let radii: Vec<f64> = pinched.radii().iter().map(|r| r.min(0.5 * d)).collect();
        let thin = pinched.with_samples(pinched.first_index(), radii, pinched.poles()).unwrap();
        let shrink = straightline_trace(&pinched, &thin, steps).unwrap();
        let mut all = vec![s];
        all.extend(pinch);
        all.extend(shrink);
        prop_assert!(check_monotone(&trace(all, Stage::Pinch)).pass);
    }

    #[test]
    fn canonical_codes_are_idempotent_and_shift_stable(
        x0 in -20i32..-3, y0 in -20i32..-3, w in 2i32..20, h in 2i32..20,
        dx in -0.01f64..0.01, dy in -0.01f64..0.01,
    ) {
        let cover = make_cover(2, 1.0, 10.0, 1.0).unwrap();
        let lo = (x0 as f64 + 0.5, y0 as f64 + 0.5);
        let hi = (lo.0 + w as f64, lo.1 + h as f64);
        let (code, rerouted) = canonicalize(&rectangle(&cover, lo, hi), &cover).unwrap();
        prop_assert_eq!(code.cells.len() as i32, 2 * (w + h));
        let (again, _) = canonicalize(&rerouted, &cover).unwrap();
        prop_assert_eq!(&again, &code);
        let shifted = rectangle(&cover, (lo.0 + dx, lo.1 + dy), (hi.0 + dx, hi.1 + dy));
        let (moved, _) = canonicalize(&shifted, &cover).unwrap();
        prop_assert_eq!(&moved, &code);
    }

    #[test]
    fn enumeration_is_below_the_face_bound(a in 1usize..4, b in 1usize..3) {
        let cover = make_cover(2, 1.0, 10.0, 1.0).unwrap();
        let e = enumerate_codes(&cover, &[0, 0], &[a, b]).unwrap();
        prop_assert!((e.total as f64) <= 2f64.powi(4 * (a * b) as i32));
        prop_assert!(e.face_using <= e.total);
    }

    #[test]
    fn count_bound_is_homogeneous(n in 1usize..5, d in 0.5f64..4.0, c in 1.0f64..20.0, alpha in 0.1f64..2.0, k in 1.5f64..3.0) {
        let base = count_bound(n, d, c, alpha).value;
        let nf = n as i32;
        prop_assert!((count_bound(n, d, c, k * alpha).value * k.powi(nf) / base - 1.0).abs() < 1e-12);
        prop_assert!((count_bound(n, k * d, c, alpha).value / (k.powi(nf) * base) - 1.0).abs() < 1e-12);
        prop_assert!((count_bound(n, d, k * c, alpha).value / (k.powi(nf) * base) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenarios_survive_a_toml_round_trip(
        dim in 2usize..5, radius in 0.01f64..5.0, dx in 1e-4f64..0.1, h1 in 1.0f64..100.0,
        gap in 1.0f64..100.0, eps in 0.001f64..1.0, frames in 1usize..64, stride in 1u64..1000,
    ) {
        let sc = Scenario {
            dim,
            initial: InitialProfile::Sphere { radius, center: 0.0 },
            grid: Grid { dx, cfl: 0.2 },
            surgery: SurgerySection { h1, h2: h1 + gap, h3: h1 + 2.0 * gap, eta: 0.2, eps_cyl: 0.2, window_l: 5.0 },
            isotopy: IsotopySection { target_eps: eps, frames_per_stage: frames },
            output: OutputSection { frame_stride: stride },
        };
        prop_assert_eq!(parse_scenario(&to_toml(&sc)).unwrap(), sc);
    }
}
