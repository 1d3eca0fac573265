//! End-to-end checks of the command-line interface: exit codes, summary
//! lines, file outputs and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use glam::DVec3;
use tetdvr::assets::{orbit_camera_to_world, save_camera_set, write_image, ImageBuffer};
use tetdvr::backward::save_gradient_buffer;
use tetdvr::backward::GradientBuffer;
use tetdvr::tetmesh::load_mesh;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tetdvr"))
}

fn run_ok(args: &[&str], dir: &Path) -> serde_json::Value {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    summary(&out)
}

fn summary(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().last().expect("summary line");
    serde_json::from_str(line).expect("summary line is JSON")
}

fn write_orbit_poses(path: &Path, count: usize, radius: f64) {
    let frames: Vec<(String, glam::DMat4)> = (0..count)
        .map(|i| {
            let angle = i as f64 / count as f64 * std::f64::consts::TAU;
            (
                format!("r_{i}"),
                orbit_camera_to_world(DVec3::splat(0.5), radius, angle, 0.5),
            )
        })
        .collect();
    save_camera_set(path, 0.8, &frames).unwrap();
}

#[test]
fn make_grid_reports_tet_count_and_writes_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let json = run_ok(
        &[
            "make-grid",
            "--dims",
            "4,4,4",
            "--bbox",
            "-1,-1,-1,1,1,1",
            "--out",
            "m.tet",
        ],
        dir.path(),
    );
    assert_eq!(json["tets"], 384);
    let mesh = load_mesh(&dir.path().join("m.tet")).unwrap();
    assert_eq!(mesh.num_tets(), 384);
    assert!(mesh.validate().is_empty());
}

#[test]
fn render_with_missing_mesh_exits_one_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["render", "--mesh", "nowhere.tet", "--poses", "p.json", "--out", "r"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nowhere.tet"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = bin().args(["eval", "--bogus", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_prints_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let a = ImageBuffer::fill(8, 8, [0.5, 0.5, 0.5, 1.0]);
    let mut b = a.clone();
    for p in b.pixels.iter_mut() {
        p[0] += 0.1;
        p[1] += 0.1;
        p[2] += 0.1;
    }
    write_image(&dir.path().join("a.pf64"), &a).unwrap();
    write_image(&dir.path().join("b.pf64"), &b).unwrap();
    let json = run_ok(&["eval", "--a", "a.pf64", "--b", "b.pf64"], dir.path());
    let psnr = json["psnr"].as_f64().unwrap();
    assert!((psnr - 20.0).abs() < 1e-9);
    // Identical images report the infinity sentinel.
    let json = run_ok(&["eval", "--a", "a.pf64", "--b", "a.pf64"], dir.path());
    assert_eq!(json["psnr"], "inf");
}

#[test]
fn grid_render_optimize_render_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &["make-grid", "--dims", "2,2,2", "--out", "m.tet", "--opacity", "1.0"],
        dir.path(),
    );
    write_orbit_poses(&dir.path().join("poses.json"), 3, 2.5);
    let render_args = |out: &str| {
        vec![
            "render".into(),
            "--mesh".into(),
            "m.tet".into(),
            "--poses".into(),
            "poses.json".into(),
            "--out".into(),
            out.to_string(),
            "--res".into(),
            "24x24".into(),
        ]
    };
    let args: Vec<String> = render_args("r1");
    let arg_refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&arg_refs, dir.path());
    // Optimize for zero epochs: the mesh must pass through unchanged.
    std::fs::write(
        dir.path().join("cfg.txt"),
        "mesh = m.tet\nposes = poses.json\nimages = r1\nout = opt\n\
         resolution = 24x24\nepochs = 0\nseed = 7\n",
    )
    .unwrap();
    let json = run_ok(&["optimize", "cfg.txt"], dir.path());
    assert_eq!(json["epochs"], 0);
    let metrics = std::fs::read_to_string(dir.path().join("opt/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1, "only the header: {metrics}");
    let trained = load_mesh(&dir.path().join("opt/final.tet")).unwrap();
    let original = load_mesh(&dir.path().join("m.tet")).unwrap();
    assert_eq!(trained, original);
    // Render the optimized mesh: images must match bit for bit.
    let args: Vec<String> = vec![
        "render".into(),
        "--mesh".into(),
        "opt/final.tet".into(),
        "--poses".into(),
        "poses.json".into(),
        "--out".into(),
        "r2".into(),
        "--res".into(),
        "24x24".into(),
    ];
    let arg_refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&arg_refs, dir.path());
    for i in 0..3 {
        let a = std::fs::read(dir.path().join(format!("r1/r_{i}.pf64"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("r2/r_{i}.pf64"))).unwrap();
        assert_eq!(a, b, "view {i} differs");
    }
}

#[test]
fn optimize_same_seed_produces_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &["make-grid", "--dims", "2,2,2", "--out", "m.tet", "--opacity", "1.2"],
        dir.path(),
    );
    write_orbit_poses(&dir.path().join("poses.json"), 4, 2.4);
    // Targets: renders of a differently colored mesh.
    let mut target_mesh = load_mesh(&dir.path().join("m.tet")).unwrap();
    for (i, c) in target_mesh.colors.iter_mut().enumerate() {
        *c = DVec3::new((i % 3) as f64 * 0.3, 0.6, 0.9 - (i % 5) as f64 * 0.1);
    }
    tetdvr::tetmesh::save_mesh(&target_mesh, &dir.path().join("t.tet")).unwrap();
    let args: Vec<String> = vec![
        "render".into(),
        "--mesh".into(),
        "t.tet".into(),
        "--poses".into(),
        "poses.json".into(),
        "--out".into(),
        "gt".into(),
        "--res".into(),
        "20x20".into(),
    ];
    let arg_refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&arg_refs, dir.path());
    std::fs::write(
        dir.path().join("cfg.txt"),
        "mesh = m.tet\nposes = poses.json\nimages = gt\nout = O\n\
         resolution = 20x20\nepochs = 2\nseed = 11\nholdout = 0.25\n",
    )
    .unwrap();
    let strip_seconds = |csv: &str| -> String {
        csv.lines()
            .map(|l| l.rsplit_once(',').map(|(h, _)| h.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut outputs = Vec::new();
    for _run in 0..2 {
        let _ = std::fs::remove_dir_all(dir.path().join("O"));
        run_ok(&["optimize", "cfg.txt"], dir.path());
        let csv = std::fs::read_to_string(dir.path().join("O/metrics.csv")).unwrap();
        let mesh_bytes = std::fs::read(dir.path().join("O/final.tet")).unwrap();
        outputs.push((strip_seconds(&csv), mesh_bytes));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "metrics differ across runs");
    assert_eq!(outputs[0].1, outputs[1].1, "final mesh differs across runs");
}

#[test]
fn subdivide_command_refines_mesh() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &["make-grid", "--dims", "2,2,2", "--out", "m.tet"],
        dir.path(),
    );
    let mesh = load_mesh(&dir.path().join("m.tet")).unwrap();
    let mut grads = GradientBuffer::new(mesh.num_vertices());
    // Make the grid center the clear winner.
    grads.abs_color[13] = 5.0;
    save_gradient_buffer(&grads, &dir.path().join("g.grad")).unwrap();
    let json = run_ok(
        &[
            "subdivide",
            "--mesh",
            "m.tet",
            "--grads",
            "g.grad",
            "--fraction",
            "0.03",
            "--out",
            "m2.tet",
            "--dump-csp",
            "csp.txt",
        ],
        dir.path(),
    );
    let before = json["tets_before"].as_u64().unwrap();
    let after = json["tets_after"].as_u64().unwrap();
    assert!(after > before);
    let refined = load_mesh(&dir.path().join("m2.tet")).unwrap();
    assert!(refined.validate().is_empty());
    let csp = std::fs::read_to_string(dir.path().join("csp.txt")).unwrap();
    assert!(csp.contains("prism 0:"));
    assert!(csp.contains("link "));
}

#[test]
fn grad_check_command_passes_on_small_mesh() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &[
            "make-grid", "--dims", "1,1,1", "--out", "m.tet", "--opacity", "1.0",
        ],
        dir.path(),
    );
    write_orbit_poses(&dir.path().join("pose.json"), 1, 2.6);
    let json = run_ok(
        &[
            "grad-check",
            "--mesh",
            "m.tet",
            "--pose",
            "pose.json",
            "--seed",
            "3",
            "--res",
            "32x32",
            "--samples",
            "24",
        ],
        dir.path(),
    );
    assert_eq!(json["passes"], true);
}

#[test]
fn bake_writes_images_for_each_pose() {
    use tetdvr::assets::{save_volume, ScalarVolume, TransferFunction, VolumeDtype};
    let dir = tempfile::tempdir().unwrap();
    let mut samples = vec![0.0; 16 * 16 * 16];
    for (i, s) in samples.iter_mut().enumerate() {
        let x = (i % 16) as f64 / 15.0;
        *s = x;
    }
    let volume = ScalarVolume::new([16, 16, 16], DVec3::splat(1.0 / 15.0), samples).unwrap();
    save_volume(&dir.path().join("v.volhdr"), &volume, VolumeDtype::Float32).unwrap();
    TransferFunction::new(vec![(0.0, [0.1, 0.2, 0.8, 0.0]), (1.0, [0.9, 0.5, 0.1, 0.6])])
        .unwrap()
        .save(&dir.path().join("tf.txt"))
        .unwrap();
    let frames = vec![(
        "r_0".to_string(),
        orbit_camera_to_world(DVec3::splat(0.5), 2.8, 0.4, 0.4),
    )];
    save_camera_set(&dir.path().join("poses.json"), 0.7, &frames).unwrap();
    let json = run_ok(
        &[
            "bake",
            "--volume",
            "v.volhdr",
            "--tf",
            "tf.txt",
            "--poses",
            "poses.json",
            "--out",
            "gt",
            "--res",
            "16x16",
        ],
        dir.path(),
    );
    assert_eq!(json["images"], 1);
    assert!(dir.path().join("gt/r_0.pf64").exists());
    assert!(dir.path().join("gt/r_0.png").exists());
}
