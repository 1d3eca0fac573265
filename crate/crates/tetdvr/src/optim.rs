//! Training loop: multi-view gradient accumulation, per-class parameter
//! updates, loss scheduling, coarse-to-fine refinement and metrics.

use std::time::Instant;

use glam::DVec3;
use rand::prelude::*;

use crate::assets::{Camera, ImageBuffer};
use crate::backward::{backward_render, loss_and_adjoint, GradientBuffer, LossKind};
use crate::forward::{render, render_with_states, RenderOptions};
use crate::regularizer::{regularization_loss, RegularizerConfig};
use crate::subdivide;
use crate::tetmesh::TetMesh;
use crate::{Error, Result};

/// One training view: a camera pose and its target image.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub camera: Camera,
    pub target: ImageBuffer,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Adaptive moment estimation.
    Adam,
    /// Plain gradient descent.
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Colors and opacities only, for the configured number of epochs.
    ColorOnly,
    /// Rounds of color epoch, joint epoch, gradient-accumulation epoch and
    /// refinement, until the tet target is reached, then a final color
    /// epoch.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_position: f64,
    pub reg: RegularizerConfig,
    pub n_sub: u32,
    pub loss: LossKind,
    /// Views per optimizer step.
    pub batch: usize,
    pub epochs: u32,
    pub schedule: Schedule,
    pub refine_fraction: f64,
    pub refine_target_tets: usize,
    pub rule: UpdateRule,
    pub seed: u64,
    /// Fraction of views held out for PSNR evaluation (taken from the end).
    pub holdout_fraction: f64,
    pub background: [f64; 4],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_color: 0.08,
            lr_opacity: 0.08,
            lr_position: 1e-6,
            reg: RegularizerConfig::default(),
            n_sub: 8,
            loss: LossKind::L2,
            batch: 1,
            epochs: 10,
            schedule: Schedule::ColorOnly,
            refine_fraction: 0.05,
            refine_target_tets: usize::MAX,
            rule: UpdateRule::Adam,
            seed: 0,
            holdout_fraction: 0.1,
            background: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

impl TrainConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            n_sub: self.n_sub,
            background: self.background,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators per parameter class, index-parallel with
/// the mesh vertex arrays. Resized with zero moments for new vertices after
/// refinement.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub rule: UpdateRule,
    pub step: u64,
    m_color: Vec<DVec3>,
    v_color: Vec<DVec3>,
    m_opacity: Vec<f64>,
    v_opacity: Vec<f64>,
    m_position: Vec<DVec3>,
    v_position: Vec<DVec3>,
}

impl OptimizerState {
    pub fn new(rule: UpdateRule, num_vertices: usize) -> Self {
        OptimizerState {
            rule,
            step: 0,
            m_color: vec![DVec3::ZERO; num_vertices],
            v_color: vec![DVec3::ZERO; num_vertices],
            m_opacity: vec![0.0; num_vertices],
            v_opacity: vec![0.0; num_vertices],
            m_position: vec![DVec3::ZERO; num_vertices],
            v_position: vec![DVec3::ZERO; num_vertices],
        }
    }

    /// Grows the accumulators for newly inserted vertices; existing moments
    /// are kept.
    pub fn resize(&mut self, num_vertices: usize) {
        self.m_color.resize(num_vertices, DVec3::ZERO);
        self.v_color.resize(num_vertices, DVec3::ZERO);
        self.m_opacity.resize(num_vertices, 0.0);
        self.v_opacity.resize(num_vertices, 0.0);
        self.m_position.resize(num_vertices, DVec3::ZERO);
        self.v_position.resize(num_vertices, DVec3::ZERO);
    }

    pub fn len(&self) -> usize {
        self.m_color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_color.is_empty()
    }
}

fn adam_update_vec(
    params: &mut [DVec3],
    grads: &[DVec3],
    m: &mut [DVec3],
    v: &mut [DVec3],
    lr: f64,
    step: u64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * (g * g);
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        let denom = DVec3::new(
            vh.x.sqrt() + ADAM_EPS,
            vh.y.sqrt() + ADAM_EPS,
            vh.z.sqrt() + ADAM_EPS,
        );
        params[i] -= lr * mh / denom;
    }
}

fn adam_update_scalar(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    step: u64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        params[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
    }
}

/// Learning rates per parameter class for one step; a rate of zero freezes
/// the class bit-exactly.
#[derive(Debug, Clone, Copy)]
pub struct ClassRates {
    pub color: f64,
    pub opacity: f64,
    pub position: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub image_loss: f64,
    pub reg_loss: f64,
    pub degenerate_tets: u64,
}

/// Renders every view in the batch, accumulates image and regularizer
/// gradients, applies one optimizer update per unfrozen parameter class and
/// projects opacities back to >= 0.
pub fn train_step(
    mesh: &mut TetMesh,
    views: &[&SceneView],
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<StepOutput> {
    train_step_with_rates(
        mesh,
        views,
        config,
        ClassRates {
            color: config.lr_color,
            opacity: config.lr_opacity,
            position: config.lr_position,
        },
        state,
    )
}

pub fn train_step_with_rates(
    mesh: &mut TetMesh,
    views: &[&SceneView],
    config: &TrainConfig,
    rates: ClassRates,
    state: &mut OptimizerState,
) -> Result<StepOutput> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("empty view batch".into()));
    }
    let (image_loss, grads) = accumulate_views(mesh, views, config)?;
    let reg = regularization_loss(mesh, &config.reg)?;
    let loss = image_loss + reg.loss;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss became non-finite on batch starting at view {:?}",
            views[0].name
        )));
    }
    state.step += 1;
    let nv = mesh.num_vertices();
    if rates.position > 0.0 {
        let mut pos_grads = grads.position.clone();
        for i in 0..nv {
            pos_grads[i] += reg.grad_positions[i];
        }
        match state.rule {
            UpdateRule::Adam => adam_update_vec(
                &mut mesh.positions,
                &pos_grads,
                &mut state.m_position,
                &mut state.v_position,
                rates.position,
                state.step,
            ),
            UpdateRule::Gd => {
                for i in 0..nv {
                    mesh.positions[i] -= rates.position * pos_grads[i];
                }
            }
        }
    }
    if rates.color > 0.0 {
        match state.rule {
            UpdateRule::Adam => adam_update_vec(
                &mut mesh.colors,
                &grads.color,
                &mut state.m_color,
                &mut state.v_color,
                rates.color,
                state.step,
            ),
            UpdateRule::Gd => {
                for i in 0..nv {
                    mesh.colors[i] -= rates.color * grads.color[i];
                }
            }
        }
    }
    if rates.opacity > 0.0 {
        match state.rule {
            UpdateRule::Adam => adam_update_scalar(
                &mut mesh.opacities,
                &grads.opacity,
                &mut state.m_opacity,
                &mut state.v_opacity,
                rates.opacity,
                state.step,
            ),
            UpdateRule::Gd => {
                for i in 0..nv {
                    mesh.opacities[i] -= rates.opacity * grads.opacity[i];
                }
            }
        }
        for o in mesh.opacities.iter_mut() {
            *o = o.max(0.0);
        }
    }
    Ok(StepOutput {
        loss,
        image_loss,
        reg_loss: reg.loss,
        degenerate_tets: reg.degenerate_tets,
    })
}

/// Sum of per-view image losses and gradients, reduced in view order.
pub fn accumulate_views(
    mesh: &TetMesh,
    views: &[&SceneView],
    config: &TrainConfig,
) -> Result<(f64, GradientBuffer)> {
    let opts = config.render_options();
    let per_view: Result<Vec<(f64, GradientBuffer)>> = views
        .iter()
        .map(|view| {
            let out = render_with_states(mesh, &view.camera, &opts);
            let (loss, adjoint) = loss_and_adjoint(&out.image, &view.target, config.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "image loss non-finite for view {:?}",
                    view.name
                )));
            }
            let bw = backward_render(mesh, &view.camera, &opts, &adjoint, &out.states)?;
            Ok((loss, bw.grads))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut grads = GradientBuffer::new(mesh.num_vertices());
    for (loss, g) in per_view? {
        total_loss += loss;
        grads.add(&g);
    }
    Ok((total_loss, grads))
}

/// Peak signal-to-noise ratio over the RGB channels in dB; identical images
/// report +infinity.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "psnr inputs {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("psnr peak must be positive".into()));
    }
    let mut mse = 0.0;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            mse += d * d;
        }
    }
    mse /= (a.pixels.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Color,
    Joint,
    Accumulate,
    Refine,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Color => "color",
            Phase::Joint => "joint",
            Phase::Accumulate => "accumulate",
            Phase::Refine => "refine",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub phase: &'static str,
    pub step: u64,
    pub loss: f64,
    pub psnr: f64,
    pub tets: usize,
    pub vertices: usize,
    pub degenerate: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub final_psnr: f64,
}

/// CSV rendering of the metrics log. The `seconds` column is wall-clock and
/// excluded from determinism comparisons.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,step,loss,psnr,tets,vertices,degenerate,seconds\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:?},{:?},{},{},{},{:.3}\n",
            m.epoch, m.step, m.loss, m.psnr, m.tets, m.vertices, m.degenerate, m.seconds
        ));
    }
    out
}

/// Strips the wall-clock column for reproducibility comparisons.
pub fn metrics_csv_deterministic(metrics: &[EpochMetrics]) -> String {
    metrics_csv(metrics)
        .lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits a dataset into training and held-out views; the holdout is the
/// trailing fraction, at least one view when possible.
pub fn split_holdout(views: &[SceneView], fraction: f64) -> (&[SceneView], &[SceneView]) {
    if views.len() < 2 || fraction <= 0.0 {
        return (views, &[]);
    }
    let count = ((views.len() as f64 * fraction).ceil() as usize).clamp(1, views.len() - 1);
    views.split_at(views.len() - count)
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    train_views: &'a [SceneView],
    holdout_views: &'a [SceneView],
    pub state: OptimizerState,
    rng: StdRng,
    step_count: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, views: &'a [SceneView], num_vertices: usize) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidArgument(
                "training needs at least one view".into(),
            ));
        }
        let (train_views, holdout_views) = split_holdout(views, config.holdout_fraction);
        Ok(Trainer {
            rng: StdRng::seed_from_u64(config.seed),
            state: OptimizerState::new(config.rule, num_vertices),
            config,
            train_views,
            holdout_views,
            step_count: 0,
        })
    }

    pub fn eval_views(&self) -> &[SceneView] {
        if self.holdout_views.is_empty() {
            self.train_views
        } else {
            self.holdout_views
        }
    }

    /// Mean PSNR of the mesh against the evaluation views.
    pub fn eval_psnr(&self, mesh: &TetMesh) -> Result<f64> {
        let opts = self.config.render_options();
        let views = self.eval_views();
        let mut sum = 0.0;
        for view in views {
            let img = render(mesh, &view.camera, &opts);
            sum += psnr(&img, &view.target, 1.0)?;
        }
        Ok(sum / views.len() as f64)
    }

    /// One pass over the training views in seeded shuffled order. `rates`
    /// selects the phase (frozen classes have rate zero); `Accumulate`
    /// returns summed gradients without touching the mesh.
    fn run_epoch(
        &mut self,
        mesh: &mut TetMesh,
        phase: Phase,
    ) -> Result<(f64, u64, Option<GradientBuffer>)> {
        let mut order: Vec<usize> = (0..self.train_views.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut degenerate = 0;
        match phase {
            Phase::Accumulate => {
                let mut acc = GradientBuffer::new(mesh.num_vertices());
                for chunk in order.chunks(self.config.batch.max(1)) {
                    let views: Vec<&SceneView> =
                        chunk.iter().map(|&i| &self.train_views[i]).collect();
                    let (loss, grads) = accumulate_views(mesh, &views, &self.config)?;
                    loss_sum += loss;
                    acc.add(&grads);
                }
                degenerate = crate::regularizer::count_degenerate(mesh);
                Ok((loss_sum, degenerate, Some(acc)))
            }
            Phase::Color | Phase::Joint => {
                let rates = ClassRates {
                    color: self.config.lr_color,
                    opacity: self.config.lr_opacity,
                    position: if phase == Phase::Joint {
                        self.config.lr_position
                    } else {
                        0.0
                    },
                };
                for chunk in order.chunks(self.config.batch.max(1)) {
                    let views: Vec<&SceneView> =
                        chunk.iter().map(|&i| &self.train_views[i]).collect();
                    let out =
                        train_step_with_rates(mesh, &views, &self.config, rates, &mut self.state)?;
                    loss_sum += out.loss;
                    degenerate = out.degenerate_tets;
                    self.step_count += 1;
                }
                Ok((loss_sum, degenerate, None))
            }
            Phase::Refine => unreachable!("refine is not an epoch"),
        }
    }

    fn record(
        &self,
        metrics: &mut Vec<EpochMetrics>,
        epoch: u32,
        phase: Phase,
        loss: f64,
        degenerate: u64,
        mesh: &TetMesh,
        started: Instant,
    ) -> Result<()> {
        let psnr = self.eval_psnr(mesh)?;
        metrics.push(EpochMetrics {
            epoch,
            phase: phase.name(),
            step: self.step_count,
            loss,
            psnr,
            tets: mesh.num_tets(),
            vertices: mesh.num_vertices(),
            degenerate,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// Runs the configured schedule and returns the trained mesh plus metrics.
/// Deterministic for a fixed seed up to the wall-clock column.
pub fn train(
    mesh: &TetMesh,
    views: &[SceneView],
    config: &TrainConfig,
) -> Result<(TetMesh, TrainReport)> {
    train_with_callback(mesh, views, config, |_, _| Ok(()))
}

/// [`train`] with a per-epoch hook, called after each recorded epoch with
/// the epoch index and current mesh (used for checkpointing).
pub fn train_with_callback(
    mesh: &TetMesh,
    views: &[SceneView],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(u32, &TetMesh) -> Result<()>,
) -> Result<(TetMesh, TrainReport)> {
    let started = Instant::now();
    let mut trainer = Trainer::new(config.clone(), views, mesh.num_vertices())?;
    let mut mesh = mesh.clone();
    let mut metrics = Vec::new();
    match trainer.config.schedule {
        Schedule::ColorOnly => {
            for epoch in 0..trainer.config.epochs {
                let (loss, degenerate, _) = trainer.run_epoch(&mut mesh, Phase::Color)?;
                trainer.record(&mut metrics, epoch, Phase::Color, loss, degenerate, &mesh, started)?;
                on_epoch(epoch, &mesh)?;
            }
        }
        Schedule::Adaptive => {
            let mut epoch = 0;
            for _round in 0..trainer.config.epochs {
                for phase in [Phase::Color, Phase::Joint, Phase::Accumulate] {
                    let (loss, degenerate, acc) = trainer.run_epoch(&mut mesh, phase)?;
                    trainer.record(&mut metrics, epoch, phase, loss, degenerate, &mesh, started)?;
                    on_epoch(epoch, &mesh)?;
                    epoch += 1;
                    if phase == Phase::Accumulate {
                        if mesh.num_tets() >= trainer.config.refine_target_tets {
                            continue;
                        }
                        let grads = acc.expect("accumulate produces gradients");
                        match subdivide::refine(&mesh, &grads, trainer.config.refine_fraction) {
                            Ok(refined) => {
                                mesh = refined;
                                trainer.state.resize(mesh.num_vertices());
                            }
                            Err(err) => {
                                // Training continues on the unrefined mesh.
                                eprintln!("refinement skipped: {err}");
                            }
                        }
                        trainer.record(
                            &mut metrics,
                            epoch,
                            Phase::Refine,
                            f64::NAN,
                            0,
                            &mesh,
                            started,
                        )?;
                        on_epoch(epoch, &mesh)?;
                        epoch += 1;
                    }
                }
                if mesh.num_tets() >= trainer.config.refine_target_tets {
                    break;
                }
            }
            if trainer.config.epochs > 0 {
                // Final color-only pass.
                let (loss, degenerate, _) = trainer.run_epoch(&mut mesh, Phase::Color)?;
                trainer.record(&mut metrics, epoch, Phase::Color, loss, degenerate, &mesh, started)?;
                on_epoch(epoch, &mesh)?;
            }
        }
    }
    let final_psnr = trainer.eval_psnr(&mesh)?;
    Ok((
        mesh,
        TrainReport {
            metrics,
            final_psnr,
        },
    ))
}
