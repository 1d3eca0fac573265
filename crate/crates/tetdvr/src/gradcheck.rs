//! Central finite-difference verification of the backward renderer against
//! the scalar image loss, per parameter class.
//!
//! Position components whose perturbation changes any pixel's fragment
//! pairing are skipped: the renderer is only piecewise smooth in vertex
//! positions, and the analytic gradient is the within-topology one.

use glam::DVec3;

use crate::assets::{Camera, ImageBuffer};
use crate::backward::{backward_render, loss_and_adjoint, LossKind};
use crate::forward::{render, render_with_states, RenderOptions};
use crate::raycast;
use crate::tetmesh::TetMesh;
use crate::Result;

/// Absolute floor and relative tolerance for color and opacity gradients.
pub const ATTR_TOL: (f64, f64) = (1e-4, 1e-3);
/// Absolute floor and relative tolerance for position gradients.
pub const POS_TOL: (f64, f64) = (1e-6, 1e-3);

#[derive(Debug, Clone, Copy, Default)]
pub struct ClassReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Worst `|analytic - fd| / max(abs_floor, rel * |fd|)`; <= 1 passes.
    pub worst_ratio: f64,
}

impl ClassReport {
    fn update(&mut self, analytic: f64, fd: f64, (abs_floor, rel): (f64, f64)) {
        let err = (analytic - fd).abs();
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(err);
        self.max_rel_err = self.max_rel_err.max(err / fd.abs().max(1e-12));
        self.worst_ratio = self.worst_ratio.max(err / (abs_floor).max(rel * fd.abs()));
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub color: ClassReport,
    pub opacity: ClassReport,
    pub position: ClassReport,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.color.worst_ratio <= 1.0
            && self.opacity.worst_ratio <= 1.0
            && self.position.worst_ratio <= 1.0
    }
}

/// Per-pixel tet sequences; position FD steps must not change these.
fn topology_signature(mesh: &TetMesh, cam: &Camera) -> Vec<Vec<u32>> {
    let mut frags = raycast::generate_fragments(mesh, cam);
    raycast::sort_front_to_back(&mut frags);
    frags
        .pixels
        .iter()
        .map(|px| {
            let (segs, _) = raycast::pair_segments(px);
            segs.iter().map(|s| s.tet).collect()
        })
        .collect()
}

/// Runs the finite-difference suite on every parameter component (up to
/// `max_per_class` of each, in index order). `step` is scaled by each
/// component's magnitude.
pub fn finite_difference_check(
    mesh: &TetMesh,
    cam: &Camera,
    target: &ImageBuffer,
    opts: &RenderOptions,
    loss_kind: LossKind,
    step: f64,
    max_per_class: usize,
) -> Result<GradCheckReport> {
    let loss_of = |mesh: &TetMesh| -> Result<f64> {
        let img = render(mesh, cam, opts);
        Ok(loss_and_adjoint(&img, target, loss_kind)?.0)
    };
    let out = render_with_states(mesh, cam, opts);
    let (_, adjoint) = loss_and_adjoint(&out.image, target, loss_kind)?;
    let grads = backward_render(mesh, cam, opts, &adjoint, &out.states)?.grads;
    let base_topology = topology_signature(mesh, cam);
    let mut report = GradCheckReport::default();

    let mut color_budget = max_per_class;
    let mut pos_budget = max_per_class;
    let mut opacity_budget = max_per_class;
    for v in 0..mesh.num_vertices() {
        for ch in 0..3 {
            if color_budget > 0 {
                color_budget -= 1;
                let h = step * mesh.colors[v][ch].abs().max(1.0);
                let mut plus = mesh.clone();
                plus.colors[v][ch] += h;
                let mut minus = mesh.clone();
                minus.colors[v][ch] -= h;
                let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                report.color.update(grads.color[v][ch], fd, ATTR_TOL);
            }
            if pos_budget > 0 {
                pos_budget -= 1;
                let h = step * mesh.positions[v][ch].abs().max(1.0);
                let mut plus = mesh.clone();
                plus.positions[v][ch] += h;
                let mut minus = mesh.clone();
                minus.positions[v][ch] -= h;
                if topology_signature(&plus, cam) != base_topology
                    || topology_signature(&minus, cam) != base_topology
                {
                    report.position.skipped += 1;
                } else {
                    let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                    report.position.update(grads.position[v][ch], fd, POS_TOL);
                }
            }
        }
        if opacity_budget > 0 {
            opacity_budget -= 1;
            let h = step * mesh.opacities[v].abs().max(1.0);
            let mut plus = mesh.clone();
            plus.opacities[v] += h;
            let mut minus = mesh.clone();
            minus.opacities[v] -= h;
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            report.opacity.update(grads.opacity[v], fd, ATTR_TOL);
        }
    }
    Ok(report)
}

/// Verifies that the color-gradient endpoint identity holds on a sweep of
/// random segment parameters: the per-channel partials toward the two
/// endpoint colors sum to the segment opacity. Returns the worst deviation.
pub fn color_sum_identity_worst(samples: u32, seed: u64) -> f64 {
    use rand::prelude::*;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.gen_range(1e-4..5.0);
        let alpha = rng.gen_range(0.0..2.5);
        let c0 = DVec3::new(rng.gen(), rng.gen(), rng.gen());
        let c1 = DVec3::new(rng.gen(), rng.gen(), rng.gen());
        let (_, a_acc) = crate::forward::accum_segment(t, c0, c1, alpha).unwrap();
        for ch in 0..3 {
            let mut up = DVec3::ZERO;
            up[ch] = 1.0;
            let g = crate::backward::accum_segment_grad(t, c0, c1, alpha, (up, 0.0)).unwrap();
            worst = worst.max(((g.dc0[ch] + g.dc1[ch]) - a_acc).abs());
        }
    }
    worst
}
