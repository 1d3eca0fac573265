//! Adjoint renderer: given per-pixel loss gradients, traverse fragments
//! back-to-front, reconstruct intermediate ray states from the final state
//! via the inversion trick, and scatter gradients to vertex colors,
//! opacities and positions.
//!
//! Only the final per-pixel ray states from the forward pass are stored;
//! every intermediate compositing state is recomputed by inverting the
//! front-to-back recurrence, so memory stays independent of depth
//! complexity.

use glam::DVec3;
use rayon::prelude::*;

use crate::assets::{Camera, ImageBuffer, Ray};
use crate::forward::{
    accum_eval, AccumEval, BaryInterp, RayState, RenderOptions, RenderStats, EPS_AREA_REL,
};
use crate::forward;
use crate::raycast;
use crate::tetmesh::TetMesh;
use crate::{Error, Result};

/// Gradient suppression threshold for degenerate segment lengths.
pub const EPS_T: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
}

/// Per-pixel loss gradients with respect to the composited output color and
/// alpha.
#[derive(Debug, Clone)]
pub struct AdjointImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<(DVec3, f64)>,
}

impl AdjointImage {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> (DVec3, f64) {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Mean L1 or L2 loss over all pixels and RGBA channels, plus its exact
/// derivative with respect to every rendered value.
pub fn loss_and_adjoint(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    kind: LossKind,
) -> Result<(f64, AdjointImage)> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::DimensionMismatch(format!(
            "rendered {}x{} vs target {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    let n = (rendered.pixels.len() * 4) as f64;
    let mut loss = 0.0;
    let mut pixels = Vec::with_capacity(rendered.pixels.len());
    for (r, t) in rendered.pixels.iter().zip(&target.pixels) {
        let mut adj = [0.0; 4];
        for c in 0..4 {
            let diff = r[c] - t[c];
            match kind {
                LossKind::L2 => {
                    loss += diff * diff;
                    adj[c] = 2.0 * diff / n;
                }
                LossKind::L1 => {
                    loss += diff.abs();
                    // Subgradient convention: 0 at ties.
                    adj[c] = diff.signum() * (diff != 0.0) as u8 as f64 / n;
                }
            }
        }
        pixels.push((DVec3::new(adj[0], adj[1], adj[2]), adj[3]));
    }
    Ok((
        loss / n,
        AdjointImage {
            width: rendered.width,
            height: rendered.height,
            pixels,
        },
    ))
}

/// Partials of `accum_segment` contracted with upstream adjoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentGrads {
    pub dc0: DVec3,
    pub dc1: DVec3,
    pub dalpha: f64,
    pub dt: f64,
}

/// Chain rule through the constant-extinction closed form. `upstream` is
/// (dL/dc_acc, dL/dalpha_acc). The opacity clamp passes gradients through
/// unchanged below the clamp and zeroes them at it.
pub fn accum_segment_grad(
    t: f64,
    c0: DVec3,
    c1: DVec3,
    alpha: f64,
    upstream: (DVec3, f64),
) -> Result<SegmentGrads> {
    if t < 0.0 || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "accum_segment_grad needs t >= 0 and alpha >= 0, got t={t}, alpha={alpha}"
        )));
    }
    Ok(accum_segment_grad_core(t, c0, c1, alpha, upstream))
}

#[inline]
pub(crate) fn accum_segment_grad_core(
    t: f64,
    c0: DVec3,
    c1: DVec3,
    alpha: f64,
    upstream: (DVec3, f64),
) -> SegmentGrads {
    grads_from_eval(&accum_eval(t, c0, c1, alpha), t, c0, c1, alpha, upstream)
}

/// dL/du flows through `c_acc = c0 S + (c1 - c0) B` and `alpha_acc = S`;
/// the clamp zeroes the opacity path.
#[inline]
fn grads_from_eval(
    eval: &AccumEval,
    t: f64,
    c0: DVec3,
    c1: DVec3,
    alpha: f64,
    (uc, ua): (DVec3, f64),
) -> SegmentGrads {
    let mut du = uc.dot(c0) * eval.a + uc.dot(c1 - c0) * eval.b_prime;
    if !eval.clamped {
        du += ua * eval.a;
    }
    SegmentGrads {
        dc0: uc * (eval.s - eval.b),
        dc1: uc * eval.b,
        dalpha: du * t,
        dt: du * alpha,
    }
}

/// Reconstructs the ray state before a composited segment from the state
/// after it: `alpha_prev = (alpha_acc - alpha_after) / (alpha_acc - 1)`,
/// `c_prev = c_after - (1 - alpha_prev) c_acc`.
pub fn invert_ray_state(after: RayState, c_acc: DVec3, alpha_acc: f64) -> Result<RayState> {
    if alpha_acc >= 1.0 {
        return Err(Error::InversionImpossible(alpha_acc));
    }
    let alpha_prev = (alpha_acc - after.alpha) / (alpha_acc - 1.0);
    Ok(RayState {
        color: after.color - (1.0 - alpha_prev) * c_acc,
        alpha: alpha_prev,
    })
}

/// Weight of a triangle's first vertex and its gradients with respect to all
/// three vertices and the query point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WeightGrads {
    pub w: f64,
    pub d_first: DVec3,
    pub d_second: DVec3,
    pub d_third: DVec3,
    pub d_p: DVec3,
}

pub(crate) fn bary_weight_grads(a: DVec3, b: DVec3, c: DVec3, p: DVec3) -> WeightGrads {
    let n = (b - a).cross(c - a);
    let n2 = n.dot(n);
    let m = (c - b).cross(p - b);
    let w = m.dot(n) / n2;
    let m2un = m - 2.0 * w * n;
    WeightGrads {
        w,
        d_first: (b - c).cross(m2un) / n2,
        d_second: ((c - p).cross(n) + (c - a).cross(m2un)) / n2,
        d_third: ((p - b).cross(n) + (a - b).cross(m2un)) / n2,
        d_p: n.cross(c - b) / n2,
    }
}

/// Per-face-vertex gradients produced by [`bary_grad`].
#[derive(Debug, Clone, Copy)]
pub struct BaryGrads {
    pub vertex_ids: [u32; 3],
    pub dcolor: [DVec3; 3],
    pub dopacity: [f64; 3],
    pub dposition: [DVec3; 3],
    /// Gradient with respect to the query point.
    pub dquery: DVec3,
}

/// Chain rule through barycentric interpolation at a face: upstream
/// gradients on the interpolated color, opacity and position are scattered
/// to the three face vertices. Attribute gradients use the weights directly;
/// position gradients combine the weight-derivative path with the direct
/// position-interpolation path.
pub fn bary_grad(
    mesh: &TetMesh,
    face: u32,
    p: DVec3,
    dcolor: DVec3,
    dopacity: f64,
    dposition: DVec3,
) -> Result<BaryGrads> {
    let ids = mesh.faces[face as usize].vertices;
    let a = mesh.positions[ids[0] as usize];
    let b = mesh.positions[ids[1] as usize];
    let c = mesh.positions[ids[2] as usize];
    let n = (b - a).cross(c - a);
    let max_edge = (b - a)
        .length_squared()
        .max((c - a).length_squared())
        .max((c - b).length_squared());
    if n.length() <= EPS_AREA_REL * max_edge {
        return Err(Error::InvalidArgument(format!("degenerate face {face}")));
    }
    let gu = bary_weight_grads(a, b, c, p);
    let gv = bary_weight_grads(b, c, a, p);
    let gw = bary_weight_grads(c, a, b, p);
    // Upstream contraction per weight: dL/dw_k.
    let gk = |k: usize| {
        let vid = ids[k] as usize;
        dcolor.dot(mesh.colors[vid]) + dopacity * mesh.opacities[vid] + dposition.dot(mesh.positions[vid])
    };
    let (g0, g1, g2) = (gk(0), gk(1), gk(2));
    // Map cyclic slots back to vertex order (a, b, c).
    let dw_da = [gu.d_first, gv.d_third, gw.d_second];
    let dw_db = [gu.d_second, gv.d_first, gw.d_third];
    let dw_dc = [gu.d_third, gv.d_second, gw.d_first];
    let weight_path = |dw: [DVec3; 3]| g0 * dw[0] + g1 * dw[1] + g2 * dw[2];
    let weights = [gu.w, gv.w, gw.w];
    Ok(BaryGrads {
        vertex_ids: ids,
        dcolor: [dcolor * weights[0], dcolor * weights[1], dcolor * weights[2]],
        dopacity: [
            dopacity * weights[0],
            dopacity * weights[1],
            dopacity * weights[2],
        ],
        dposition: [
            weight_path(dw_da) + dposition * weights[0],
            weight_path(dw_db) + dposition * weights[1],
            weight_path(dw_dc) + dposition * weights[2],
        ],
        dquery: g0 * gu.d_p + g1 * gv.d_p + g2 * gw.d_p,
    })
}

/// Gradients of the ray/plane intersection parameter with respect to the
/// plane's three vertices, evaluated at the intersection point `p`.
pub(crate) fn ray_plane_grads(
    a: DVec3,
    b: DVec3,
    c: DVec3,
    ray: &Ray,
    s: f64,
) -> Option<(DVec3, DVec3, DVec3)> {
    let n = (b - a).cross(c - a);
    let denom = n.dot(ray.dir);
    if denom.abs() <= 1e-12 * n.length() {
        return None;
    }
    let p = ray.at(s);
    let w = a - p;
    Some((
        ((b - c).cross(w) + n) / denom,
        (c - a).cross(w) / denom,
        (a - b).cross(w) / denom,
    ))
}

/// Gradients of the in-tet optical-depth `t = d1 - d0` with respect to the
/// six face-vertex positions of the entry and exit hits. The entry side is
/// omitted when the entry was clamped to the near plane.
#[allow(clippy::too_many_arguments)]
pub fn segment_depth_grad(
    mesh: &TetMesh,
    face_in: u32,
    face_out: u32,
    ray: &Ray,
    d0: f64,
    d1: f64,
    entry_clamped: bool,
    upstream_dt: f64,
) -> Option<Vec<(u32, DVec3)>> {
    if d1 - d0 <= EPS_T {
        return None;
    }
    let mut grads = Vec::with_capacity(6);
    let face_verts = |f: u32| {
        let ids = mesh.faces[f as usize].vertices;
        (
            ids,
            mesh.positions[ids[0] as usize],
            mesh.positions[ids[1] as usize],
            mesh.positions[ids[2] as usize],
        )
    };
    let (ids_out, a, b, c) = face_verts(face_out);
    let (ga, gb, gc) = ray_plane_grads(a, b, c, ray, d1)?;
    grads.push((ids_out[0], upstream_dt * ga));
    grads.push((ids_out[1], upstream_dt * gb));
    grads.push((ids_out[2], upstream_dt * gc));
    if !entry_clamped {
        let (ids_in, a, b, c) = face_verts(face_in);
        let (ga, gb, gc) = ray_plane_grads(a, b, c, ray, d0)?;
        grads.push((ids_in[0], -upstream_dt * ga));
        grads.push((ids_in[1], -upstream_dt * gb));
        grads.push((ids_in[2], -upstream_dt * gc));
    }
    Some(grads)
}

/// Per-vertex gradient accumulators, index-parallel with the mesh vertex
/// arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub color: Vec<DVec3>,
    pub opacity: Vec<f64>,
    pub position: Vec<DVec3>,
    /// Accumulated per-view l2 norms of the color gradient, used to select
    /// subdivision sites.
    pub abs_color: Vec<f64>,
}

impl GradientBuffer {
    pub fn new(num_vertices: usize) -> Self {
        GradientBuffer {
            color: vec![DVec3::ZERO; num_vertices],
            opacity: vec![0.0; num_vertices],
            position: vec![DVec3::ZERO; num_vertices],
            abs_color: vec![0.0; num_vertices],
        }
    }

    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    pub fn zero(&mut self) {
        self.color.fill(DVec3::ZERO);
        self.opacity.fill(0.0);
        self.position.fill(DVec3::ZERO);
        self.abs_color.fill(0.0);
    }

    pub fn add(&mut self, other: &GradientBuffer) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.color[i] += other.color[i];
            self.opacity[i] += other.opacity[i];
            self.position[i] += other.position[i];
            self.abs_color[i] += other.abs_color[i];
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.len() {
            m = m
                .max(self.color[i].abs().max_element())
                .max(self.opacity[i].abs())
                .max(self.position[i].abs().max_element());
        }
        m
    }
}

const GRAD_MAGIC: &str = "gradbuffer 1";

/// Writes a gradient buffer: text header, then little-endian f64 sections
/// for color (x3), opacity, position (x3) and accumulated magnitudes.
pub fn save_gradient_buffer(grads: &GradientBuffer, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let io_err = |e| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "{GRAD_MAGIC}\nvertices {}\n", grads.len()).map_err(io_err)?;
    let mut dump = |vals: &mut dyn Iterator<Item = f64>| -> Result<()> {
        for v in vals {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    };
    dump(&mut grads.color.iter().flat_map(|c| [c.x, c.y, c.z]))?;
    dump(&mut grads.opacity.iter().copied())?;
    dump(&mut grads.position.iter().flat_map(|p| [p.x, p.y, p.z]))?;
    dump(&mut grads.abs_color.iter().copied())?;
    w.flush().map_err(io_err)
}

pub fn load_gradient_buffer(path: &std::path::Path) -> Result<GradientBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: &str| Error::parse(path.display().to_string(), msg.to_string());
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(1)
        .ok_or_else(|| bad("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some(GRAD_MAGIC) {
        return Err(bad("missing gradbuffer magic"));
    }
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("vertices "))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("bad vertices count"))?;
    let data = &bytes[header_end + 1..];
    if data.len() != n * 8 * 8 {
        return Err(bad("payload size mismatch"));
    }
    let mut vals = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut grads = GradientBuffer::new(n);
    for c in grads.color.iter_mut() {
        *c = DVec3::new(
            vals.next().unwrap(),
            vals.next().unwrap(),
            vals.next().unwrap(),
        );
    }
    for o in grads.opacity.iter_mut() {
        *o = vals.next().unwrap();
    }
    for p in grads.position.iter_mut() {
        *p = DVec3::new(
            vals.next().unwrap(),
            vals.next().unwrap(),
            vals.next().unwrap(),
        );
    }
    for a in grads.abs_color.iter_mut() {
        *a = vals.next().unwrap();
    }
    Ok(grads)
}

pub struct BackwardOutput {
    pub grads: GradientBuffer,
    pub stats: RenderStats,
}

struct SegmentAttrGrads {
    dc0: DVec3,
    dc1: DVec3,
    da0: f64,
    da1: f64,
    dt: f64,
}

/// Walks one segment's sub-intervals in reverse, inverting the ray state and
/// accumulating adjoints onto the segment endpoint attributes. Returns the
/// state before the segment and the upstream adjoints for it.
#[allow(clippy::too_many_arguments)]
fn backward_segment(
    entry: &BaryInterp,
    exit: &BaryInterp,
    t_total: f64,
    n_sub: u32,
    state_after: RayState,
    dc_after: DVec3,
    da_after: f64,
) -> Result<(RayState, DVec3, f64, SegmentAttrGrads)> {
    let n = n_sub.max(1);
    let inv = 1.0 / n as f64;
    let t = t_total * inv;
    let mut state = state_after;
    let mut dc = dc_after;
    let mut da = da_after;
    let mut out = SegmentAttrGrads {
        dc0: DVec3::ZERO,
        dc1: DVec3::ZERO,
        da0: 0.0,
        da1: 0.0,
        dt: 0.0,
    };
    for i in (0..n).rev() {
        let f0 = i as f64 * inv;
        let f1 = (i + 1) as f64 * inv;
        let fm = (i as f64 + 0.5) * inv;
        let ci0 = entry.color + (exit.color - entry.color) * f0;
        let ci1 = entry.color + (exit.color - entry.color) * f1;
        let ai = entry.opacity + (exit.opacity - entry.opacity) * fm;
        let eval = accum_eval(t, ci0, ci1, ai);
        let (c_acc, a_acc) = (eval.c_acc, eval.a_acc);
        let prev = invert_ray_state(state, c_acc, a_acc)?;
        let transmittance = 1.0 - prev.alpha;
        // Adjoints of the compositing step
        //   c_next = c_prev + (1 - a_prev) c_acc
        //   a_next = a_prev (1 - a_acc) + a_acc
        let d_c_acc = dc * transmittance;
        let d_a_acc = da * transmittance;
        let da_prev = da * (1.0 - a_acc) - dc.dot(c_acc);
        let grads = grads_from_eval(&eval, t, ci0, ci1, ai, (d_c_acc, d_a_acc));
        out.dc0 += grads.dc0 * (1.0 - f0) + grads.dc1 * (1.0 - f1);
        out.dc1 += grads.dc0 * f0 + grads.dc1 * f1;
        out.da0 += grads.dalpha * (1.0 - fm);
        out.da1 += grads.dalpha * fm;
        out.dt += grads.dt * inv;
        state = prev;
        da = da_prev;
    }
    let _ = &mut dc;
    Ok((state, dc, da, out))
}

/// Adjoint of the whole render: regenerates fragments, walks them
/// back-to-front per pixel, reconstructs intermediate states via the
/// inversion trick and scatters gradients into a [`GradientBuffer`].
///
/// `final_states` are the pre-background ray states produced by
/// [`forward::render_with_states`] for the same mesh, camera and options.
/// After scattering, `abs_color` holds the per-vertex l2 norm of this view's
/// color gradient.
pub fn backward_render(
    mesh: &TetMesh,
    cam: &Camera,
    opts: &RenderOptions,
    adjoint: &AdjointImage,
    final_states: &[RayState],
) -> Result<BackwardOutput> {
    if adjoint.width != cam.width || adjoint.height != cam.height {
        return Err(Error::DimensionMismatch(
            "adjoint image does not match camera viewport".into(),
        ));
    }
    if final_states.len() != (cam.width * cam.height) as usize {
        return Err(Error::DimensionMismatch(
            "final state buffer does not match viewport".into(),
        ));
    }
    // Fragments are regenerated rather than kept from the forward pass; only
    // the final states are carried over. Pairing runs on the front-to-back
    // order and the segments are then walked in reverse.
    let mut frags = raycast::generate_fragments(mesh, cam);
    raycast::sort_front_to_back(&mut frags);
    let bg = opts.background;
    // Fixed chunking (independent of worker count) keeps the reduction
    // order deterministic.
    let chunk_rows = cam.height.div_ceil(32).max(1);
    let chunks: Vec<(u32, u32)> = (0..cam.height)
        .step_by(chunk_rows as usize)
        .map(|y0| (y0, (y0 + chunk_rows).min(cam.height)))
        .collect();
    let partials: Result<Vec<(GradientBuffer, RenderStats)>> = chunks
        .par_iter()
        .map(|&(y0, y1)| {
            let mut grads = GradientBuffer::new(mesh.num_vertices());
            let mut stats = RenderStats::default();
            for y in y0..y1 {
                for x in 0..cam.width {
                    let ray = cam.ray_for_pixel(x, y);
                    let (segments, dropped) = raycast::pair_segments(frags.pixel(x, y));
                    stats.dropped_fragments += dropped;
                    let (c_adj, a_adj) = adjoint.get(x, y);
                    let mut state = final_states[(y * cam.width + x) as usize];
                    // Background compositing adjoint.
                    let mut dc = c_adj;
                    let mut da = a_adj * (1.0 - bg[3])
                        - c_adj.dot(DVec3::new(bg[0], bg[1], bg[2])) * bg[3];
                    for seg in segments.iter().rev() {
                        let entry = match forward::bary_interp(mesh, seg.face_in, ray.at(seg.d0)) {
                            Ok(e) => e,
                            Err(_) => {
                                stats.degenerate_faces += 1;
                                continue;
                            }
                        };
                        let exit = match forward::bary_interp(mesh, seg.face_out, ray.at(seg.d1)) {
                            Ok(e) => e,
                            Err(_) => {
                                stats.degenerate_faces += 1;
                                continue;
                            }
                        };
                        let t_total = seg.d1 - seg.d0;
                        let (prev, dc_prev, da_prev, seg_grads) = backward_segment(
                            &entry,
                            &exit,
                            t_total,
                            opts.n_sub,
                            state,
                            dc,
                            da,
                        )?;
                        // Scatter attribute and weight-path gradients.
                        let entry_bg = bary_grad(
                            mesh,
                            seg.face_in,
                            ray.at(seg.d0),
                            seg_grads.dc0,
                            seg_grads.da0,
                            DVec3::ZERO,
                        )?;
                        let exit_bg = bary_grad(
                            mesh,
                            seg.face_out,
                            ray.at(seg.d1),
                            seg_grads.dc1,
                            seg_grads.da1,
                            DVec3::ZERO,
                        )?;
                        for (bgr, s, clamped) in
                            [(&entry_bg, seg.d0, seg.entry_clamped), (&exit_bg, seg.d1, false)]
                        {
                            let ids = bgr.vertex_ids;
                            for k in 0..3 {
                                let vid = ids[k] as usize;
                                grads.color[vid] += bgr.dcolor[k];
                                grads.opacity[vid] += bgr.dopacity[k];
                                grads.position[vid] += bgr.dposition[k];
                            }
                            // The query point of this face hit moves with its
                            // plane: dp = ray.dir * ds.
                            if !clamped {
                                let a = mesh.positions[ids[0] as usize];
                                let b = mesh.positions[ids[1] as usize];
                                let c = mesh.positions[ids[2] as usize];
                                if let Some((ga, gb, gc)) =
                                    ray_plane_grads(a, b, c, &ray, s)
                                {
                                    let dq = bgr.dquery.dot(ray.dir);
                                    grads.position[ids[0] as usize] += dq * ga;
                                    grads.position[ids[1] as usize] += dq * gb;
                                    grads.position[ids[2] as usize] += dq * gc;
                                }
                            }
                        }
                        // Optical-depth path.
                        if let Some(depth_grads) = segment_depth_grad(
                            mesh,
                            seg.face_in,
                            seg.face_out,
                            &ray,
                            seg.d0,
                            seg.d1,
                            seg.entry_clamped,
                            seg_grads.dt,
                        ) {
                            for (vid, g) in depth_grads {
                                grads.position[vid as usize] += g;
                            }
                        }
                        state = prev;
                        dc = dc_prev;
                        da = da_prev;
                    }
                }
            }
            Ok((grads, stats))
        })
        .collect();
    let mut grads = GradientBuffer::new(mesh.num_vertices());
    let mut stats = RenderStats::default();
    for (partial, partial_stats) in partials? {
        grads.add(&partial);
        stats.dropped_fragments += partial_stats.dropped_fragments;
        stats.degenerate_faces += partial_stats.degenerate_faces;
    }
    for i in 0..grads.len() {
        grads.abs_color[i] = grads.color[i].length();
    }
    Ok(BackwardOutput { grads, stats })
}
