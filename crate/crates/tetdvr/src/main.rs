//! Command-line entry point tying the renderer, optimizer and mesh tools
//! into reproducible workflows.
//!
//! Exit codes: 0 success, 1 user error, 2 internal invariant violation.
//! Every command prints a one-line JSON summary on success.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use glam::DVec3;

use tetdvr::assets::{
    bake_ground_truth, load_camera_set, load_volume, read_image, write_image, BakeOptions,
    ImageBuffer, TransferFunction,
};
use tetdvr::backward::{load_gradient_buffer, save_gradient_buffer, LossKind};
use tetdvr::forward::{render, RenderOptions};
use tetdvr::gradcheck;
use tetdvr::optim::{
    self, accumulate_views, metrics_csv, train_with_callback, SceneView, Schedule, TrainConfig,
    UpdateRule,
};
use tetdvr::subdivide;
use tetdvr::tetmesh::{build_regular_grid, load_mesh, save_mesh, Aabb};
use tetdvr::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tetdvr",
    version,
    about = "Differentiable volume rendering on tetrahedral meshes"
)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a regular grid tet mesh tiling a bounding box.
    MakeGrid {
        /// Cells per axis, e.g. 4,4,4
        #[arg(long)]
        dims: String,
        /// Box as x0,y0,z0,x1,y1,z1
        #[arg(long, default_value = "0,0,0,1,1,1", allow_hyphen_values = true)]
        bbox: String,
        #[arg(long)]
        out: PathBuf,
        /// Initial vertex color r,g,b
        #[arg(long, default_value = "0.5,0.5,0.5")]
        color: String,
        /// Initial extinction; negative means 1 / scene diagonal.
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        opacity: f64,
    },
    /// Ray-march a scalar volume into ground-truth images.
    Bake {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        tf: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resolution WxH.
        #[arg(long, default_value = "128x128")]
        res: String,
        /// March step; defaults to 1/400 of the volume diagonal.
        #[arg(long)]
        step: Option<f64>,
        /// Opacity reference length; defaults to 1% of the volume diagonal.
        #[arg(long)]
        ref_length: Option<f64>,
        #[arg(long, default_value = "0,0,0,1", allow_hyphen_values = true)]
        bg: String,
        #[arg(long, default_value_t = 0.05)]
        near: f64,
        #[arg(long, default_value_t = 100.0)]
        far: f64,
    },
    /// Render a mesh from a set of poses.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        nsub: u32,
        #[arg(long, default_value = "0,0,0,1", allow_hyphen_values = true)]
        bg: String,
        #[arg(long, default_value = "128x128")]
        res: String,
        #[arg(long, default_value_t = 0.05)]
        near: f64,
        #[arg(long, default_value_t = 100.0)]
        far: f64,
        /// Write per-pixel fragment lists next to each image.
        #[arg(long)]
        dump_fragments: bool,
    },
    /// Run the training loop from a key=value config file.
    Optimize {
        config: PathBuf,
        /// After training, accumulate gradients once more and write them.
        #[arg(long)]
        dump_grads: bool,
        /// Override the shape-regularizer weight from the config.
        #[arg(long)]
        reg_lambda: Option<f64>,
        /// Override the softplus sharpness from the config.
        #[arg(long)]
        reg_beta: Option<f64>,
    },
    /// Refine a mesh around its highest-gradient vertices.
    Subdivide {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        grads: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
        /// Dump the solved flip assignment as a text dual graph.
        #[arg(long)]
        dump_csp: Option<PathBuf>,
    },
    /// Finite-difference check of the backward renderer.
    GradCheck {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "48x48")]
        res: String,
        /// Components checked per parameter class.
        #[arg(long, default_value_t = 60)]
        samples: usize,
    },
    /// PSNR between two images.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
    },
}

fn parse_csv_f64(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad {what}: {s:?}")))?;
    if vals.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{what} needs {n} comma-separated numbers, got {s:?}"
        )));
    }
    Ok(vals)
}

fn parse_dims(s: &str) -> Result<[u32; 3]> {
    let vals: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad dims: {s:?}")))?;
    if vals.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "dims needs 3 integers, got {s:?}"
        )));
    }
    Ok([vals[0], vals[1], vals[2]])
}

fn parse_res(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidArgument(format!("resolution must be WxH, got {s:?}")))?;
    let w = w
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad width in {s:?}")))?;
    let h = h
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad height in {s:?}")))?;
    Ok((w, h))
}

fn parse_bg(s: &str) -> Result<[f64; 4]> {
    let v = parse_csv_f64(s, 4, "background")?;
    Ok([v[0], v[1], v[2], v[3]])
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeGrid {
            dims,
            bbox,
            out,
            color,
            opacity,
        } => {
            let dims = parse_dims(&dims)?;
            let b = parse_csv_f64(&bbox, 6, "bbox")?;
            let bbox = Aabb::new(DVec3::new(b[0], b[1], b[2]), DVec3::new(b[3], b[4], b[5]));
            let c = parse_csv_f64(&color, 3, "color")?;
            let mut mesh = build_regular_grid(dims, bbox)?;
            let opacity = if opacity < 0.0 {
                1.0 / bbox.diagonal()
            } else {
                opacity
            };
            for v in 0..mesh.num_vertices() {
                mesh.colors[v] = DVec3::new(c[0], c[1], c[2]);
                mesh.opacities[v] = opacity;
            }
            save_mesh(&mesh, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "command": "make-grid",
                    "tets": mesh.num_tets(),
                    "vertices": mesh.num_vertices(),
                    "out": out.display().to_string(),
                })
            );
            Ok(())
        }
        Command::Bake {
            volume,
            tf,
            poses,
            out,
            res,
            step,
            ref_length,
            bg,
            near,
            far,
        } => {
            let (w, h) = parse_res(&res)?;
            let volume = load_volume(&volume)?;
            let tf = TransferFunction::load(&tf)?;
            let cameras = load_camera_set(&poses, w, h, near, far)?;
            let step = step.unwrap_or(volume.bounding_box().diagonal() / 400.0);
            let options = BakeOptions {
                reference_length: ref_length,
                background: parse_bg(&bg)?,
            };
            let cams: Vec<_> = cameras.iter().map(|c| c.camera).collect();
            let images = bake_ground_truth(&volume, &tf, &cams, step, &options)?;
            ensure_dir(&out)?;
            for (loaded, image) in cameras.iter().zip(&images) {
                write_image(&out.join(format!("{}.pf64", loaded.name)), image)?;
                write_image(&out.join(format!("{}.png", loaded.name)), image)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "command": "bake",
                    "images": images.len(),
                    "step": step,
                    "out": out.display().to_string(),
                })
            );
            Ok(())
        }
        Command::Render {
            mesh,
            poses,
            out,
            nsub,
            bg,
            res,
            near,
            far,
            dump_fragments,
        } => {
            let (w, h) = parse_res(&res)?;
            let mesh = load_mesh(&mesh)?;
            let cameras = load_camera_set(&poses, w, h, near, far)?;
            let opts = RenderOptions {
                n_sub: nsub.max(1),
                background: parse_bg(&bg)?,
            };
            ensure_dir(&out)?;
            for loaded in &cameras {
                let image = render(&mesh, &loaded.camera, &opts);
                write_image(&out.join(format!("{}.pf64", loaded.name)), &image)?;
                write_image(&out.join(format!("{}.png", loaded.name)), &image)?;
                if dump_fragments {
                    let mut frags = tetdvr::raycast::generate_fragments(&mesh, &loaded.camera);
                    tetdvr::raycast::sort_front_to_back(&mut frags);
                    let text = tetdvr::raycast::dump_fragments(&frags);
                    let path = out.join(format!("{}.fragments.txt", loaded.name));
                    std::fs::write(&path, text)
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                }
            }
            println!(
                "{}",
                serde_json::json!({
                    "command": "render",
                    "images": cameras.len(),
                    "nsub": opts.n_sub,
                    "out": out.display().to_string(),
                })
            );
            Ok(())
        }
        Command::Optimize {
            config,
            dump_grads,
            reg_lambda,
            reg_beta,
        } => optimize_command(&config, dump_grads, reg_lambda, reg_beta),
        Command::Subdivide {
            mesh,
            grads,
            fraction,
            out,
            dump_csp,
        } => {
            let mesh_in = load_mesh(&mesh)?;
            let grads = load_gradient_buffer(&grads)?;
            if grads.len() != mesh_in.num_vertices() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient buffer has {} vertices, mesh has {}",
                    grads.len(),
                    mesh_in.num_vertices()
                )));
            }
            if let Some(csp_path) = &dump_csp {
                let selection = subdivide::select_split_vertices(&grads.abs_color, fraction)?;
                let region = subdivide::build_split_region(&mesh_in, &selection)?;
                let assignment = subdivide::solve_flip_csp(&region.graph)?;
                std::fs::write(csp_path, subdivide::dump_csp(&region.graph, &assignment))
                    .map_err(|e| Error::io(csp_path.display().to_string(), e))?;
            }
            let refined = subdivide::refine(&mesh_in, &grads, fraction)?;
            save_mesh(&refined, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "command": "subdivide",
                    "tets_before": mesh_in.num_tets(),
                    "tets_after": refined.num_tets(),
                    "vertices_after": refined.num_vertices(),
                    "out": out.display().to_string(),
                })
            );
            Ok(())
        }
        Command::GradCheck {
            mesh,
            pose,
            seed,
            res,
            samples,
        } => {
            use rand::prelude::*;
            let (w, h) = parse_res(&res)?;
            let mesh = load_mesh(&mesh)?;
            let cameras = load_camera_set(&pose, w, h, 0.05, 100.0)?;
            let cam = cameras
                .first()
                .ok_or_else(|| Error::InvalidArgument("pose file has no frames".into()))?
                .camera;
            let opts = RenderOptions::default();
            let mut rng = StdRng::seed_from_u64(seed);
            let mut target = ImageBuffer::new(w, h);
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
                samples,
            )?;
            for (name, class) in [
                ("color", &report.color),
                ("opacity", &report.opacity),
                ("position", &report.position),
            ] {
                println!(
                    "{name}: checked {} skipped {} max_abs_err {:.3e} max_rel_err {:.3e}",
                    class.checked, class.skipped, class.max_abs_err, class.max_rel_err
                );
            }
            println!(
                "{}",
                serde_json::json!({
                    "command": "grad-check",
                    "passes": report.passes(),
                    "color_max_rel": report.color.max_rel_err,
                    "opacity_max_rel": report.opacity.max_rel_err,
                    "position_max_rel": report.position.max_rel_err,
                })
            );
            if report.passes() {
                Ok(())
            } else {
                Err(Error::NonFinite("gradient check failed".into()))
            }
        }
        Command::Eval { a, b, peak } => {
            let img_a = read_image(&a)?;
            let img_b = read_image(&b)?;
            let value = optim::psnr(&img_a, &img_b, peak)?;
            println!(
                "{}",
                serde_json::json!({
                    "command": "eval",
                    "psnr": if value.is_finite() { serde_json::json!(value) } else { serde_json::json!("inf") },
                })
            );
            Ok(())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::UnsupportedFormat(_)
        | Error::DimensionMismatch(_) => 1,
        Error::NonFinite(_)
        | Error::InversionImpossible(_)
        | Error::Unsatisfiable { .. }
        | Error::RefineAborted(_) => 2,
    }
}

#[derive(Debug, Clone, Default)]
struct OptimizeFileConfig {
    mesh: Option<PathBuf>,
    poses: Option<PathBuf>,
    images: Option<PathBuf>,
    out: Option<PathBuf>,
    width: u32,
    height: u32,
    near: f64,
    far: f64,
    train: TrainConfig,
}

fn parse_optimize_config(path: &Path) -> Result<OptimizeFileConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cfg = OptimizeFileConfig {
        width: 128,
        height: 128,
        near: 0.05,
        far: 100.0,
        train: TrainConfig::default(),
        ..Default::default()
    };
    let bad = |ln: usize, msg: String| {
        Error::parse(
            path.display().to_string(),
            format!("line {}: {msg}", ln + 1),
        )
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(ln, format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |key: &str| -> Result<f64> {
            value
                .parse()
                .map_err(|_| bad(ln, format!("bad number for {key}: {value:?}")))
        };
        match key {
            "mesh" => cfg.mesh = Some(PathBuf::from(value)),
            "poses" => cfg.poses = Some(PathBuf::from(value)),
            "images" => cfg.images = Some(PathBuf::from(value)),
            "out" => cfg.out = Some(PathBuf::from(value)),
            "resolution" => {
                let (w, h) = parse_res(value)?;
                cfg.width = w;
                cfg.height = h;
            }
            "near" => cfg.near = num(key)?,
            "far" => cfg.far = num(key)?,
            "lr_color" => cfg.train.lr_color = num(key)?,
            "lr_opacity" => cfg.train.lr_opacity = num(key)?,
            "lr_position" => cfg.train.lr_position = num(key)?,
            "lambda" => cfg.train.reg.lambda = num(key)?,
            "beta" => cfg.train.reg.beta = num(key)?,
            "nsub" => cfg.train.n_sub = num(key)? as u32,
            "batch" => cfg.train.batch = num(key)? as usize,
            "epochs" => cfg.train.epochs = num(key)? as u32,
            "seed" => cfg.train.seed = num(key)? as u64,
            "holdout" => cfg.train.holdout_fraction = num(key)?,
            "refine_fraction" => cfg.train.refine_fraction = num(key)?,
            "refine_target_tets" => cfg.train.refine_target_tets = num(key)? as usize,
            "background" => cfg.train.background = parse_bg(value)?,
            "loss" => {
                cfg.train.loss = match value {
                    "l1" => LossKind::L1,
                    "l2" => LossKind::L2,
                    other => return Err(bad(ln, format!("unknown loss {other:?}"))),
                }
            }
            "schedule" => {
                cfg.train.schedule = match value {
                    "color-only" => Schedule::ColorOnly,
                    "adaptive" => Schedule::Adaptive,
                    other => return Err(bad(ln, format!("unknown schedule {other:?}"))),
                }
            }
            "optimizer" => {
                cfg.train.rule = match value {
                    "adam" => UpdateRule::Adam,
                    "gd" => UpdateRule::Gd,
                    other => return Err(bad(ln, format!("unknown optimizer {other:?}"))),
                }
            }
            other => return Err(bad(ln, format!("unknown key {other:?}"))),
        }
    }
    Ok(cfg)
}

fn optimize_command(
    config_path: &Path,
    dump_grads: bool,
    reg_lambda: Option<f64>,
    reg_beta: Option<f64>,
) -> Result<()> {
    let mut cfg = parse_optimize_config(config_path)?;
    if let Some(lambda) = reg_lambda {
        cfg.train.reg.lambda = lambda;
    }
    if let Some(beta) = reg_beta {
        cfg.train.reg.beta = beta;
    }
    let need = |name: &str, v: &Option<PathBuf>| -> Result<PathBuf> {
        v.clone().ok_or_else(|| {
            Error::parse(
                config_path.display().to_string(),
                format!("missing required key {name}"),
            )
        })
    };
    let mesh_path = need("mesh", &cfg.mesh)?;
    let poses_path = need("poses", &cfg.poses)?;
    let images_dir = need("images", &cfg.images)?;
    let out_dir = need("out", &cfg.out)?;
    let mesh = load_mesh(&mesh_path)?;
    let cameras = load_camera_set(&poses_path, cfg.width, cfg.height, cfg.near, cfg.far)?;
    let mut views = Vec::with_capacity(cameras.len());
    for loaded in cameras {
        let pf64 = images_dir.join(format!("{}.pf64", loaded.name));
        let png = images_dir.join(format!("{}.png", loaded.name));
        let target = if pf64.exists() {
            read_image(&pf64)?
        } else if png.exists() {
            read_image(&png)?
        } else {
            return Err(Error::InvalidArgument(format!(
                "no target image for view {:?} under {}",
                loaded.name,
                images_dir.display()
            )));
        };
        if target.width != cfg.width || target.height != cfg.height {
            return Err(Error::DimensionMismatch(format!(
                "target {:?} is {}x{}, config says {}x{}",
                loaded.name, target.width, target.height, cfg.width, cfg.height
            )));
        }
        views.push(SceneView {
            camera: loaded.camera,
            target,
            name: loaded.name,
        });
    }
    ensure_dir(&out_dir)?;
    let checkpoint_dir = out_dir.clone();
    let (trained, report) = train_with_callback(&mesh, &views, &cfg.train, |epoch, mesh| {
        save_mesh(mesh, &checkpoint_dir.join(format!("epoch_{epoch:04}.tet")))
    })?;
    save_mesh(&trained, &out_dir.join("final.tet"))?;
    std::fs::write(out_dir.join("metrics.csv"), metrics_csv(&report.metrics))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let opts = cfg.train.render_options();
    for view in views.iter().take(4) {
        let image = render(&trained, &view.camera, &opts);
        write_image(&out_dir.join(format!("preview_{}.png", view.name)), &image)?;
    }
    if dump_grads {
        let refs: Vec<&SceneView> = views.iter().collect();
        let (_, grads) = accumulate_views(&trained, &refs, &cfg.train)?;
        save_gradient_buffer(&grads, &out_dir.join("grads.grad"))?;
    }
    println!(
        "{}",
        serde_json::json!({
            "command": "optimize",
            "epochs": report.metrics.len(),
            "final_psnr": report.final_psnr,
            "tets": trained.num_tets(),
            "vertices": trained.num_vertices(),
            "out": out_dir.display().to_string(),
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{err}");
            return ExitCode::from(1);
        }
    };
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
