//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria:
//! 1. accumulation matches the adaptive-quadrature oracle
//! 2. full-pipeline finite-difference gradient check
//! 3. compose/invert round trip of ray states
//! 4. regularizer descent, scale invariance and gradients
//! 5. subdivision lookup table, flip CSP vs brute force, conforming refine
//! 6. end-to-end reconstruction of a synthetic volume
//! 7. determinism across runs and worker counts

use std::time::Instant;

use glam::DVec3;
use rand::prelude::*;

use tetdvr::assets::{
    bake_ground_truth, BakeOptions, Camera, ImageBuffer, ScalarVolume, TransferFunction,
};
use tetdvr::backward::{
    accum_segment_grad, backward_render, invert_ray_state, loss_and_adjoint, LossKind,
};
use tetdvr::forward::{
    accum_interval, accum_segment, eval_eq1_quadrature, render, render_with_states, RayState,
    RenderOptions, ALPHA_ACC_MAX,
};
use tetdvr::gradcheck;
use tetdvr::optim::{
    metrics_csv_deterministic, psnr, train, Schedule, SceneView, TrainConfig, UpdateRule,
};
use tetdvr::regularizer::{
    regular_tet, regularization_loss, tet_quality, RegularizerConfig,
};
use tetdvr::subdivide::{
    assignment_satisfies, refine_with_selection, solve_flip_csp, tessellate_prism, Fr,
    PrismCspGraph, SplitSelection,
};
use tetdvr::tetmesh::{build_regular_grid, Aabb, TetMesh};

fn pass(criterion: &str, detail: String) {
    println!("criterion {criterion}: PASS — {detail}");
}

fn rand_vec(rng: &mut StdRng) -> DVec3 {
    DVec3::new(rng.gen(), rng.gen(), rng.gen())
}

// ---------------------------------------------------------------------------
// Criterion 1
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_accumulation_correctness() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(1001);
    let mut worst_const = 0.0f64;
    for _ in 0..10_000 {
        let t = rng.gen_range(1e-4..10.0);
        let alpha = rng.gen_range(0.0..10.0);
        let c0 = rand_vec(&mut rng);
        let c1 = rand_vec(&mut rng);
        let (c_seg, a_seg) = accum_segment(t, c0, c1, alpha).unwrap();
        let (c_or, a_or) = eval_eq1_quadrature(t, c0, c1, alpha, alpha);
        // The implementation clamps opacity just below one; compare the
        // oracle through the same output clamp.
        let a_or = a_or.min(ALPHA_ACC_MAX);
        for ch in 0..3 {
            worst_const = worst_const.max((c_seg[ch] - c_or[ch]).abs());
        }
        worst_const = worst_const.max((a_seg - a_or).abs());
    }
    assert!(
        worst_const <= 1e-9,
        "criterion 1: FAIL — constant-alpha worst abs err {worst_const:.3e}"
    );

    // Varying alpha: the convergence curve (mean relative error over random
    // segments, one value per n_sub) strictly decreases, with the n_sub = 8
    // point under 1e-3.
    let samples: Vec<(f64, DVec3, DVec3, f64, f64)> = (0..1000)
        .map(|_| {
            (
                rng.gen_range(0.02..1.0),
                rand_vec(&mut rng),
                rand_vec(&mut rng),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..3.0),
            )
        })
        .collect();
    let mut curve = Vec::new();
    for n in [1u32, 2, 4, 8, 16] {
        let mut sum = 0.0;
        for &(t, c0, c1, a0, a1) in &samples {
            let (c_ref, a_ref) = eval_eq1_quadrature(t, c0, c1, a0, a1);
            let scale = (c_ref.length() + a_ref).max(1e-9);
            let (c, a) = accum_interval(t, c0, c1, a0, a1, n);
            sum += ((c - c_ref).length() + (a - a_ref).abs()) / scale;
        }
        curve.push(sum / samples.len() as f64);
    }
    for w in curve.windows(2) {
        assert!(
            w[1] < w[0],
            "criterion 1: FAIL — error not decreasing: {curve:?}"
        );
    }
    let n8_err = curve[3];
    assert!(
        n8_err < 1e-3,
        "criterion 1: FAIL — n_sub=8 relative error {n8_err:.3e}"
    );
    let curve_str: Vec<String> = curve.iter().map(|e| format!("{e:.1e}")).collect();
    pass(
        "1",
        format!(
            "const-alpha abs err {worst_const:.2e} (10k samples), n_sub error curve [{}], {:.1}s",
            curve_str.join(", "),
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(2002);
    // 12 tets, well within the 24-tet bound.
    let mut mesh = build_regular_grid([2, 1, 1], Aabb::new(DVec3::ZERO, DVec3::new(2.0, 1.0, 1.0)))
        .unwrap();
    for i in 0..mesh.num_vertices() {
        mesh.colors[i] = rand_vec(&mut rng);
        mesh.opacities[i] = rng.gen_range(0.4..1.8);
    }
    let cam = Camera::look_at(
        DVec3::new(2.7, -2.3, 1.9),
        DVec3::new(1.0, 0.5, 0.5),
        DVec3::Z,
        0.8,
        64,
        64,
        0.05,
        40.0,
    )
    .unwrap();
    let opts = RenderOptions {
        n_sub: 4,
        background: [0.2, 0.1, 0.3, 1.0],
    };
    let mut target = ImageBuffer::new(64, 64);
    for p in target.pixels.iter_mut() {
        *p = [rng.gen(), rng.gen(), rng.gen(), 1.0];
    }
    let report = gradcheck::finite_difference_check(
        &mesh,
        &cam,
        &target,
        &opts,
        LossKind::L2,
        1e-5,
        usize::MAX,
    )
    .unwrap();
    assert!(
        report.passes(),
        "criterion 2: FAIL — color ratio {:.3}, opacity ratio {:.3}, position ratio {:.3}",
        report.color.worst_ratio,
        report.opacity.worst_ratio,
        report.position.worst_ratio
    );
    assert!(report.color.checked >= 36);
    assert!(report.position.checked >= 20);

    let identity_worst = gradcheck::color_sum_identity_worst(2000, 2003);
    assert!(
        identity_worst <= 1e-12,
        "criterion 2: FAIL — endpoint identity deviates {identity_worst:.3e}"
    );
    pass(
        "2",
        format!(
            "color {} checked, opacity {}, position {} (+{} skipped at topology changes), identity {:.1e}, {:.0}s",
            report.color.checked,
            report.opacity.checked,
            report.position.checked,
            report.position.skipped,
            identity_worst,
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_inversion_roundtrip() {
    let mut rng = StdRng::seed_from_u64(3003);
    let mut worst = 0.0f64;
    for trial in 0..500 {
        let clamped_at = (trial % 4 == 0).then(|| rng.gen_range(0..10));
        let mut states = vec![RayState::default()];
        let mut segs = Vec::new();
        for k in 0..10 {
            let (t, alpha) = if clamped_at == Some(k) {
                (3.0, 8.0)
            } else if clamped_at.is_some() {
                (rng.gen_range(0.01..0.1), rng.gen_range(0.0..1.0))
            } else {
                (rng.gen_range(0.01..0.4), rng.gen_range(0.0..2.0))
            };
            let (c_acc, a_acc) =
                accum_segment(t, rand_vec(&mut rng), rand_vec(&mut rng), alpha).unwrap();
            assert!(a_acc <= ALPHA_ACC_MAX);
            let mut s = *states.last().unwrap();
            s.composite(c_acc, a_acc);
            states.push(s);
            segs.push((c_acc, a_acc));
        }
        let mut state = *states.last().unwrap();
        for (i, (c_acc, a_acc)) in segs.iter().enumerate().rev() {
            state = invert_ray_state(state, *c_acc, *a_acc).unwrap();
            worst = worst
                .max((state.alpha - states[i].alpha).abs())
                .max((state.color - states[i].color).length());
        }
    }
    assert!(
        worst < 1e-9,
        "criterion 3: FAIL — round-trip deviation {worst:.3e}"
    );
    pass("3", format!("10-segment round trip, worst deviation {worst:.2e}"));
}

// ---------------------------------------------------------------------------
// Criterion 4
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_regularizer() {
    // Scale invariance of Q to 1e-12.
    let mut rng = StdRng::seed_from_u64(4004);
    for _ in 0..200 {
        let p: [DVec3; 4] =
            core::array::from_fn(|_| DVec3::new(rng.gen(), rng.gen(), rng.gen()) * 3.0);
        let q = tet_quality(p[0], p[1], p[2], p[3]);
        for s in [1e-3, 0.5, 42.0] {
            let qs = tet_quality(p[0] * s, p[1] * s, p[2] * s, p[3] * s);
            assert!(
                (qs - q).abs() <= 1e-12 * q.abs().max(1.0),
                "criterion 4: FAIL — scale invariance broke: {q} vs {qs}"
            );
        }
    }

    // Gradient finite differences to 1e-6.
    let config = RegularizerConfig {
        lambda: 2.0,
        beta: 10.0,
    };
    for _ in 0..30 {
        let p: [DVec3; 4] =
            core::array::from_fn(|_| DVec3::new(rng.gen(), rng.gen(), rng.gen()) * 2.0);
        let mesh = TetMesh::from_parts(
            p.to_vec(),
            vec![DVec3::splat(0.5); 4],
            vec![0.0; 4],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let out = regularization_loss(&mesh, &config).unwrap();
        let h = 1e-7;
        for j in 0..4 {
            for axis in 0..3 {
                let mut plus = mesh.clone();
                plus.positions[j][axis] += h;
                let mut minus = mesh.clone();
                minus.positions[j][axis] -= h;
                let fd = (regularization_loss(&plus, &config).unwrap().loss
                    - regularization_loss(&minus, &config).unwrap().loss)
                    / (2.0 * h);
                assert!(
                    (out.grad_positions[j][axis] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "criterion 4: FAIL — gradient mismatch"
                );
            }
        }
    }

    // Stretched tet descends past Q = 0.99 within 600 fixed-size adaptive
    // steps at beta = 10.
    let reg = RegularizerConfig {
        lambda: 1.0,
        beta: 10.0,
    };
    let mut p = regular_tet(1.0);
    p[3] *= 3.0;
    let mut mesh = TetMesh::from_parts(
        p.to_vec(),
        vec![DVec3::splat(0.5); 4],
        vec![0.0; 4],
        vec![[0, 1, 2, 3]],
    )
    .unwrap();
    let q0 = tet_quality(p[0], p[1], p[2], p[3]);
    let lr = 1e-2;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![DVec3::ZERO; 4];
    let mut v = vec![DVec3::ZERO; 4];
    let mut reached = None;
    let mut last_q = q0;
    for step in 1..=600u32 {
        let out = regularization_loss(&mesh, &reg).unwrap();
        for j in 0..4 {
            let g = out.grad_positions[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * (g * g);
            let mh = m[j] / (1.0 - b1.powi(step as i32));
            let vh = v[j] / (1.0 - b2.powi(step as i32));
            mesh.positions[j] -=
                lr * mh / DVec3::new(vh.x.sqrt() + eps, vh.y.sqrt() + eps, vh.z.sqrt() + eps);
        }
        let q = tet_quality(
            mesh.positions[0],
            mesh.positions[1],
            mesh.positions[2],
            mesh.positions[3],
        );
        assert!(
            q > last_q - 1e-9,
            "criterion 4: FAIL — Q not monotone at step {step}"
        );
        last_q = q;
        if q > 0.99 {
            reached = Some(step);
            break;
        }
    }
    let reached = reached.expect("criterion 4: FAIL — Q never exceeded 0.99 in 600 steps");
    pass(
        "4",
        format!("Q {q0:.3} -> 0.99 in {reached} steps, scale invariance and gradients verified"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5
// ---------------------------------------------------------------------------

fn brute_force_solutions(graph: &PrismCspGraph) -> Vec<Vec<[Fr; 3]>> {
    let n = graph.num_prisms * 3;
    let mut solutions = Vec::new();
    for bits in 0u32..(1 << n) {
        let assignment: Vec<[Fr; 3]> = (0..graph.num_prisms)
            .map(|p| {
                core::array::from_fn(|k| {
                    if bits >> (p * 3 + k) & 1 == 1 {
                        Fr::R
                    } else {
                        Fr::F
                    }
                })
            })
            .collect();
        if assignment_satisfies(graph, &assignment) {
            solutions.push(assignment);
        }
    }
    solutions
}

/// Every way of pairing up slots of up to `n` prisms across distinct prisms.
fn enumerate_link_structures(n: usize) -> Vec<Vec<((usize, u8), (usize, u8))>> {
    let slots: Vec<(usize, u8)> = (0..n).flat_map(|p| (0..3u8).map(move |k| (p, k))).collect();
    let mut out = Vec::new();
    fn recurse(
        slots: &[(usize, u8)],
        used: &mut Vec<bool>,
        links: &mut Vec<((usize, u8), (usize, u8))>,
        out: &mut Vec<Vec<((usize, u8), (usize, u8))>>,
    ) {
        let first = match used.iter().position(|u| !u) {
            None => {
                out.push(links.clone());
                return;
            }
            Some(i) => i,
        };
        // Leave `first` unlinked.
        used[first] = true;
        recurse(slots, used, links, out);
        // Or link it to any later slot of a different prism.
        for j in first + 1..slots.len() {
            if !used[j] && slots[j].0 != slots[first].0 {
                used[j] = true;
                links.push((slots[first], slots[j]));
                recurse(slots, used, links, out);
                links.pop();
                used[j] = false;
            }
        }
        used[first] = false;
    }
    let mut used = vec![false; slots.len()];
    recurse(&slots, &mut used, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_5_subdivision() {
    let started = Instant::now();
    // Lookup table pinned for all six patterns.
    let verts = [0u32, 1, 2, 3, 4, 5];
    let expected: [(&str, [[u32; 4]; 3]); 6] = [
        ("FRR", [[0, 1, 3, 2], [3, 4, 5, 1], [1, 2, 5, 3]]),
        ("RFR", [[0, 1, 4, 2], [3, 4, 5, 2], [0, 2, 4, 3]]),
        ("FFR", [[0, 1, 3, 2], [3, 4, 5, 2], [1, 2, 4, 3]]),
        ("RRF", [[0, 1, 5, 2], [3, 4, 5, 0], [0, 1, 4, 5]]),
        ("FRF", [[0, 1, 5, 2], [3, 4, 5, 1], [0, 1, 3, 5]]),
        ("RFF", [[0, 1, 4, 2], [3, 4, 5, 0], [0, 2, 4, 5]]),
    ];
    for (pattern, rows) in expected {
        let got = tessellate_prism(verts, tetdvr::subdivide::parse_pattern(pattern).unwrap())
            .unwrap();
        assert_eq!(got, rows, "criterion 5: FAIL — pattern {pattern} mismatch");
    }

    // Solver vs brute force: exhaustive structures for up to 3 prisms,
    // random instances for 4 to 6.
    let mut instances = 0usize;
    for n in 1..=3usize {
        for links in enumerate_link_structures(n) {
            let graph = PrismCspGraph {
                num_prisms: n,
                links,
            };
            let solutions = brute_force_solutions(&graph);
            match solve_flip_csp(&graph) {
                Ok(solved) => assert!(
                    solutions.contains(&solved),
                    "criterion 5: FAIL — solver output not in brute-force set"
                ),
                Err(_) => assert!(
                    solutions.is_empty(),
                    "criterion 5: FAIL — solver failed a solvable instance"
                ),
            }
            instances += 1;
        }
    }
    let mut rng = StdRng::seed_from_u64(5005);
    for _ in 0..400 {
        let n = rng.gen_range(4..=6usize);
        let mut free: Vec<(usize, u8)> =
            (0..n).flat_map(|p| (0..3u8).map(move |k| (p, k))).collect();
        let mut links = Vec::new();
        for _ in 0..rng.gen_range(0..=free.len() / 2) {
            if free.len() < 2 {
                break;
            }
            let a = free.swap_remove(rng.gen_range(0..free.len()));
            let b = free.swap_remove(rng.gen_range(0..free.len()));
            if a.0 != b.0 {
                links.push((a, b));
            }
        }
        let graph = PrismCspGraph {
            num_prisms: n,
            links,
        };
        let solutions = brute_force_solutions(&graph);
        match solve_flip_csp(&graph) {
            Ok(solved) => assert!(solutions.contains(&solved)),
            Err(_) => assert!(solutions.is_empty()),
        }
        instances += 1;
    }

    // Conforming, volume-preserving refinement on a 4^3 grid.
    let mut rng = StdRng::seed_from_u64(5006);
    let mut mesh = build_regular_grid([4, 4, 4], Aabb::unit()).unwrap();
    for i in 0..mesh.num_vertices() {
        mesh.colors[i] = rand_vec(&mut rng);
        mesh.opacities[i] = rng.gen_range(0.9..1.1);
    }
    assert!(mesh.validate().is_empty());
    // Split around a handful of spread-out vertices.
    let selection = SplitSelection {
        vertices: vec![31, 55, 93],
        param: 0.5,
    };
    let refined = refine_with_selection(&mesh, &selection).unwrap();
    assert!(
        refined.validate().is_empty(),
        "criterion 5: FAIL — refinement broke conformity"
    );
    let rel = ((refined.total_volume() - mesh.total_volume()) / mesh.total_volume()).abs();
    assert!(
        rel < 1e-9,
        "criterion 5: FAIL — volume drifted by {rel:.2e} under refinement"
    );
    assert!(refined.num_tets() > mesh.num_tets());

    // Render-neutrality at n_sub = 32.
    let cam = Camera::look_at(
        DVec3::new(2.2, -1.9, 1.7),
        DVec3::splat(0.5),
        DVec3::Z,
        0.7,
        48,
        48,
        0.05,
        40.0,
    )
    .unwrap();
    let opts = RenderOptions {
        n_sub: 32,
        background: [0.1, 0.15, 0.2, 1.0],
    };
    let before = render(&mesh, &cam, &opts);
    let after = render(&refined, &cam, &opts);
    let diff = before.max_abs_diff(&after);
    assert!(
        diff < 1e-6,
        "criterion 5: FAIL — refinement changed the render by {diff:.3e}"
    );
    pass(
        "5",
        format!(
            "lookup table exact, {instances} CSP instances vs brute force, refine volume drift {rel:.1e}, render diff {diff:.1e}, {:.0}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6
// ---------------------------------------------------------------------------

fn blob_volume(dims: u32) -> ScalarVolume {
    let spacing = 1.0 / (dims - 1) as f64;
    let mut samples = Vec::with_capacity((dims * dims * dims) as usize);
    let centers = [DVec3::new(0.36, 0.48, 0.5), DVec3::new(0.64, 0.55, 0.52)];
    let sigmas = [0.16, 0.13];
    for k in 0..dims {
        for j in 0..dims {
            for i in 0..dims {
                let p = DVec3::new(i as f64, j as f64, k as f64) * spacing;
                let mut v: f64 = 0.0;
                for (c, s) in centers.iter().zip(sigmas) {
                    let d2 = (p - *c).length_squared();
                    v += (-d2 / (2.0 * s * s)).exp();
                }
                samples.push(v.min(1.0));
            }
        }
    }
    ScalarVolume::new([dims, dims, dims], DVec3::splat(spacing), samples).unwrap()
}

fn blob_transfer_function() -> TransferFunction {
    TransferFunction::new(vec![
        (0.0, [0.0, 0.0, 0.0, 0.0]),
        (0.25, [0.2, 0.1, 0.5, 0.05]),
        (0.6, [0.9, 0.55, 0.15, 0.35]),
        (1.0, [1.0, 0.95, 0.8, 0.55]),
    ])
    .unwrap()
}

fn orbit_cameras(count: usize, res: u32) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            let azimuth = i as f64 * golden;
            let elevation = -0.9 + 1.8 * ((i as f64 + 0.5) / count as f64);
            let eye = DVec3::splat(0.5)
                + 2.4
                    * DVec3::new(
                        elevation.cos() * azimuth.cos(),
                        elevation.cos() * azimuth.sin(),
                        elevation.sin(),
                    );
            Camera::look_at(eye, DVec3::splat(0.5), DVec3::Z, 0.62, res, res, 0.05, 30.0).unwrap()
        })
        .collect()
}

fn blob_dataset(views: usize, res: u32) -> Vec<SceneView> {
    let volume = blob_volume(48);
    let tf = blob_transfer_function();
    let cameras = orbit_cameras(views, res);
    let images = bake_ground_truth(
        &volume,
        &tf,
        &cameras,
        volume.bounding_box().diagonal() / 250.0,
        &BakeOptions::default(),
    )
    .unwrap();
    cameras
        .into_iter()
        .zip(images)
        .enumerate()
        .map(|(i, (camera, target))| SceneView {
            camera,
            target,
            name: format!("r_{i}"),
        })
        .collect()
}

fn init_grid(cells: u32) -> TetMesh {
    let mut mesh = build_regular_grid([cells, cells, cells], Aabb::unit()).unwrap();
    let diag = 3.0f64.sqrt();
    for i in 0..mesh.num_vertices() {
        mesh.colors[i] = DVec3::splat(0.5);
        mesh.opacities[i] = 1.0 / diag;
    }
    mesh
}

#[test]
fn criterion_6_end_to_end_reconstruction() {
    let started = Instant::now();
    let views = blob_dataset(64, 128);
    let mesh = init_grid(16);
    assert_eq!(mesh.num_tets(), 24_576);
    let config = TrainConfig {
        lr_color: 0.08,
        lr_opacity: 0.08,
        lr_position: 0.0,
        epochs: 8,
        schedule: Schedule::ColorOnly,
        seed: 6006,
        holdout_fraction: 0.1,
        n_sub: 4,
        ..Default::default()
    };
    let (_trained, report) = train(&mesh, &views, &config).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        report.final_psnr > 30.0,
        "criterion 6: FAIL — held-out PSNR {:.2} dB",
        report.final_psnr
    );
    assert!(
        elapsed < 900.0,
        "criterion 6: FAIL — took {elapsed:.0}s (budget 900s)"
    );
    pass(
        "6",
        format!(
            "held-out PSNR {:.2} dB after {} epochs in {elapsed:.0}s",
            report.final_psnr,
            report.metrics.len()
        ),
    );
}

#[test]
fn criterion_6_stability_at_low_position_rate() {
    // Joint training at lr_p = 1e-6 with the paper-default regularizer must
    // leave every tet non-degenerate on the end-to-end scene.
    let views = blob_dataset(16, 64);
    let mesh = init_grid(16);
    let base = TrainConfig {
        lr_color: 0.08,
        lr_opacity: 0.08,
        lr_position: 0.0,
        epochs: 12,
        schedule: Schedule::ColorOnly,
        seed: 6007,
        holdout_fraction: 0.2,
        n_sub: 4,
        ..Default::default()
    };
    let (stable_psnr, degenerate) = run_joint(&mesh, &views, &base, 1e-6);
    assert_eq!(
        degenerate, 0,
        "criterion 6: FAIL — lr_p=1e-6 produced degenerate tets"
    );
    pass(
        "6 (stability)",
        format!("joint lr_p=1e-6 with lambda=10, beta=100: {stable_psnr:.2} dB, 0 degenerate tets"),
    );
}

/// Ordering check between color-only and joint training. The margins at
/// this scale are small (the strong gap from the original large-scale
/// regime does not manifest in double precision at desk-scale step
/// counts); the printed values carry the real signal.
#[test]
fn criterion_6_psnr_ordering_color_only_vs_joint() {
    let views = blob_dataset(16, 64);
    let mesh = init_grid(16);
    let base = TrainConfig {
        lr_color: 0.08,
        lr_opacity: 0.08,
        lr_position: 0.0,
        epochs: 12,
        schedule: Schedule::ColorOnly,
        seed: 6007,
        holdout_fraction: 0.2,
        n_sub: 4,
        ..Default::default()
    };
    let (_, color_report) = train(&mesh, &views, &base).unwrap();
    let mut measured = Vec::new();
    for lr_p in [1e-5, 1e-4] {
        let joint = run_joint(&mesh, &views, &base, lr_p);
        measured.push((lr_p, joint.0));
    }
    let ordering_holds = measured.iter().all(|(_, p)| color_report.final_psnr > *p);
    if ordering_holds {
        pass(
            "6 (ordering)",
            format!(
                "color-only {:.4} dB vs joint {} (margins at this scale are small; see ledger)",
                color_report.final_psnr,
                measured
                    .iter()
                    .map(|(lr, p)| format!("lr_p={lr:.0e}: {p:.4} dB"))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
        );
    } else {
        println!(
            "criterion 6 (ordering): FAIL — color-only {:.3} dB vs joint {} (position \
             optimization is stable and mildly beneficial at this scale, in double precision \
             and at these step counts; the asserted inversion does not reproduce)",
            color_report.final_psnr,
            measured
                .iter()
                .map(|(lr, p)| format!("lr_p={lr:.0e}: {p:.3} dB"))
                .collect::<Vec<_>>()
                .join(", "),
        );
    }
    assert!(
        ordering_holds,
        "criterion 6: FAIL — joint PSNR {:?} not below color-only {:.3}",
        measured, color_report.final_psnr
    );
}

/// Joint color+position training with the paper-default regularizer,
/// returning (held-out PSNR, final degenerate count).
fn run_joint(mesh: &TetMesh, views: &[SceneView], base: &TrainConfig, lr_p: f64) -> (f64, u64) {
    use tetdvr::optim::{train_step, OptimizerState};
    let (train_views, holdout) = tetdvr::optim::split_holdout(views, base.holdout_fraction);
    let config = TrainConfig {
        lr_position: lr_p,
        reg: RegularizerConfig {
            lambda: 10.0,
            beta: 100.0,
        },
        ..base.clone()
    };
    let mut mesh = mesh.clone();
    let mut state = OptimizerState::new(UpdateRule::Adam, mesh.num_vertices());
    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut last_degenerate = 0;
    for _ in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_views.len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            let out = train_step(&mut mesh, &[&train_views[i]], &config, &mut state).unwrap();
            last_degenerate = out.degenerate_tets;
        }
    }
    let opts = config.render_options();
    let eval = if holdout.is_empty() { train_views } else { holdout };
    let mut sum = 0.0;
    for view in eval {
        let img = render(&mesh, &view.camera, &opts);
        sum += psnr(&img, &view.target, 1.0).unwrap();
    }
    (sum / eval.len() as f64, last_degenerate)
}

// ---------------------------------------------------------------------------
// Criterion 7
// ---------------------------------------------------------------------------

/// A compact pipeline whose full numeric output is serialized; must be
/// bit-identical across repeats and worker counts.
fn determinism_log() -> String {
    let mut rng = StdRng::seed_from_u64(7007);
    let mut mesh = build_regular_grid([2, 2, 2], Aabb::unit()).unwrap();
    for i in 0..mesh.num_vertices() {
        mesh.colors[i] = rand_vec(&mut rng);
        mesh.opacities[i] = rng.gen_range(0.4..1.6);
    }
    let cam = Camera::look_at(
        DVec3::new(2.0, -1.8, 1.5),
        DVec3::splat(0.5),
        DVec3::Z,
        0.75,
        32,
        32,
        0.05,
        30.0,
    )
    .unwrap();
    let opts = RenderOptions::default();
    let out = render_with_states(&mesh, &cam, &opts);
    let mut log = String::new();
    for px in &out.image.pixels {
        log.push_str(&format!("{:?} {:?} {:?} {:?}\n", px[0], px[1], px[2], px[3]));
    }
    let mut target = ImageBuffer::new(32, 32);
    for p in target.pixels.iter_mut() {
        *p = [rng.gen(), rng.gen(), rng.gen(), 1.0];
    }
    let (loss, adjoint) = loss_and_adjoint(&out.image, &target, LossKind::L2).unwrap();
    log.push_str(&format!("loss {loss:?}\n"));
    let grads = backward_render(&mesh, &cam, &opts, &adjoint, &out.states)
        .unwrap()
        .grads;
    for i in 0..grads.len() {
        log.push_str(&format!(
            "{:?} {:?} {:?}\n",
            grads.color[i], grads.opacity[i], grads.position[i]
        ));
    }
    // Oracle samples.
    for _ in 0..200 {
        let t = rng.gen_range(1e-3..4.0);
        let a = rng.gen_range(0.0..3.0);
        let (c, al) = eval_eq1_quadrature(t, rand_vec(&mut rng), rand_vec(&mut rng), a, a * 0.5);
        log.push_str(&format!("{c:?} {al:?}\n"));
        let g = accum_segment_grad(t, rand_vec(&mut rng), rand_vec(&mut rng), a, (DVec3::ONE, 1.0))
            .unwrap();
        log.push_str(&format!("{:?} {:?}\n", g.dalpha, g.dt));
    }
    // A short training run including refinement.
    let views: Vec<SceneView> = (0..3)
        .map(|i| {
            let angle = i as f64 * 2.1;
            let eye = DVec3::splat(0.5) + 2.3 * DVec3::new(angle.cos(), angle.sin(), 0.6);
            let camera =
                Camera::look_at(eye, DVec3::splat(0.5), DVec3::Z, 0.7, 24, 24, 0.05, 30.0)
                    .unwrap();
            let target = render(&mesh, &camera, &opts);
            SceneView {
                camera,
                target,
                name: format!("d_{i}"),
            }
        })
        .collect();
    let mut start = mesh.clone();
    for c in start.colors.iter_mut() {
        *c = DVec3::splat(0.45);
    }
    let config = TrainConfig {
        epochs: 1,
        schedule: Schedule::Adaptive,
        lr_position: 1e-7,
        refine_fraction: 0.05,
        refine_target_tets: usize::MAX,
        seed: 7008,
        holdout_fraction: 0.34,
        ..Default::default()
    };
    let (trained, report) = train(&start, &views, &config).unwrap();
    log.push_str(&metrics_csv_deterministic(&report.metrics));
    log.push_str(&format!("\nfinal tets {}\n", trained.num_tets()));
    for i in 0..trained.num_vertices() {
        log.push_str(&format!("{:?}\n", trained.colors[i]));
    }
    log
}

#[test]
fn criterion_7_determinism() {
    let mut logs = Vec::new();
    for threads in [1usize, 4] {
        for _rep in 0..2 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            logs.push(pool.install(determinism_log));
        }
    }
    for pair in logs.windows(2) {
        assert_eq!(
            pair[0], pair[1],
            "criterion 7: FAIL — logs differ across runs/worker counts"
        );
    }
    pass(
        "7",
        format!(
            "bit-identical logs over 2 repeats x (1, 4) workers ({} bytes each)",
            logs[0].len()
        ),
    );
}
