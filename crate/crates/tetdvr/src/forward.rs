//! Forward renderer: accumulates color and opacity along each ray through
//! paired tet segments and composites the final image front-to-back.
//!
//! Within a tet the color and extinction are barycentric at the entry and
//! exit faces. The segment is cut into `n_sub` sub-intervals; over each one
//! the extinction is held at its midpoint value and the color ramps linearly
//! from the sub-interval entry value to its exit value, which admits a closed
//! form. The lerp is normalized by arc length: over a sub-interval of length
//! `t` the color reaches exactly `c1` at `x = t`, so results do not depend on
//! world-unit scale.

use glam::DVec3;
use rayon::prelude::*;

use crate::assets::{composite_over_background, Camera, ImageBuffer, Ray};
use crate::raycast::{self, Segment};
use crate::tetmesh::TetMesh;
use crate::{Error, Result};

/// Per-segment opacity ceiling; keeps the backward inversion denominator
/// `alpha_acc - 1` away from zero.
pub const ALPHA_ACC_MAX: f64 = 1.0 - 1e-6;

/// Below this |alpha * t| the accumulation helpers switch to series branches
/// to avoid the 1/(alpha t) cancellation.
pub const U_SERIES: f64 = 1e-4;

/// Relative face-area threshold under which barycentric interpolation
/// reports a degenerate face.
pub const EPS_AREA_REL: f64 = 1e-12;

/// `1 - e^{-u}`, full precision near zero.
#[inline]
pub fn one_minus_exp_neg(u: f64) -> f64 {
    -f64::exp_m1(-u)
}

#[inline]
fn ramp_from(s: f64, a: f64, u: f64) -> f64 {
    if u.abs() < U_SERIES {
        u * (0.5 - u / 3.0 + u * u / 8.0 - u * u * u / 30.0)
    } else {
        s / u - a
    }
}

#[inline]
fn ramp_deriv_from(s: f64, a: f64, u: f64) -> f64 {
    if u.abs() < U_SERIES {
        0.5 - 2.0 * u / 3.0 + 3.0 * u * u / 8.0 - 2.0 * u * u * u / 15.0
    } else {
        (u * a - s) / (u * u) + a
    }
}

/// The color-ramp weight `(1 - e^{-u})/u - e^{-u}` with its series branch.
/// `c_acc = c0 * S(u) + (c1 - c0) * B(u)` for `u = alpha * t`.
#[inline]
pub fn ramp_weight(u: f64) -> f64 {
    ramp_from(one_minus_exp_neg(u), (-u).exp(), u)
}

/// d/du of [`ramp_weight`].
#[inline]
pub fn ramp_weight_deriv(u: f64) -> f64 {
    ramp_deriv_from(one_minus_exp_neg(u), (-u).exp(), u)
}

/// Shared evaluation of the closed form and everything the adjoint needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AccumEval {
    pub c_acc: DVec3,
    pub a_acc: f64,
    /// Unclamped `1 - e^{-u}`.
    pub s: f64,
    /// `e^{-u}`.
    pub a: f64,
    pub b: f64,
    pub b_prime: f64,
    pub clamped: bool,
}

#[inline]
pub(crate) fn accum_eval(t: f64, c0: DVec3, c1: DVec3, alpha: f64) -> AccumEval {
    let u = alpha * t;
    let a = (-u).exp();
    let s = -f64::exp_m1(-u);
    let b = ramp_from(s, a, u);
    let clamped = s > ALPHA_ACC_MAX;
    AccumEval {
        c_acc: c0 * s + (c1 - c0) * b,
        a_acc: if clamped { ALPHA_ACC_MAX } else { s },
        s,
        a,
        b,
        b_prime: ramp_deriv_from(s, a, u),
        clamped,
    }
}

#[inline]
pub(crate) fn accum_core(t: f64, c0: DVec3, c1: DVec3, alpha: f64) -> (DVec3, f64) {
    let u = alpha * t;
    let a = (-u).exp();
    let s = -f64::exp_m1(-u);
    let b = ramp_from(s, a, u);
    (c0 * s + (c1 - c0) * b, s.min(ALPHA_ACC_MAX))
}

/// Closed-form accumulation over one sub-interval: constant extinction
/// `alpha`, color ramping linearly from `c0` at 0 to `c1` at `t`. Returns
/// premultiplied color and opacity `1 - e^{-alpha t}` (clamped just below 1).
pub fn accum_segment(t: f64, c0: DVec3, c1: DVec3, alpha: f64) -> Result<(DVec3, f64)> {
    if t < 0.0 || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "accum_segment needs t >= 0 and alpha >= 0, got t={t}, alpha={alpha}"
        )));
    }
    Ok(accum_core(t, c0, c1, alpha))
}

/// Constant-color variant: exactly `((1 - e^{-alpha t}) c, 1 - e^{-alpha t})`.
pub fn accum_segment_const(t: f64, c: DVec3, alpha: f64) -> Result<(DVec3, f64)> {
    if t < 0.0 || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "accum_segment_const needs t >= 0 and alpha >= 0, got t={t}, alpha={alpha}"
        )));
    }
    let s = one_minus_exp_neg(alpha * t);
    Ok((c * s, s.min(ALPHA_ACC_MAX)))
}

/// Accumulated ray state: premultiplied color plus opacity in [0, 1),
/// non-decreasing along front-to-back traversal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayState {
    pub color: DVec3,
    pub alpha: f64,
}

impl RayState {
    /// Front-to-back compositing of one accumulated segment.
    #[inline]
    pub fn composite(&mut self, c_acc: DVec3, alpha_acc: f64) {
        let t = 1.0 - self.alpha;
        self.color += t * c_acc;
        self.alpha += t * alpha_acc;
    }
}

/// Result of barycentric interpolation on a face.
#[derive(Debug, Clone, Copy)]
pub struct BaryInterp {
    pub position: DVec3,
    pub color: DVec3,
    pub opacity: f64,
    pub weights: [f64; 3],
}

/// Barycentric weight of the triangle's first vertex at point `p`, by the
/// ratio of signed sub-triangle area to total area.
#[inline]
pub(crate) fn bary_weight(a: DVec3, b: DVec3, c: DVec3, p: DVec3, n: DVec3, n2: f64) -> f64 {
    let _ = a;
    (c - b).cross(p - b).dot(n) / n2
}

/// Interpolates vertex attributes of `face` at a query point on (or near)
/// the face plane. Weights sum to 1; the returned position is the same
/// weight combination of the vertex positions.
pub fn bary_interp(mesh: &TetMesh, face: u32, p: DVec3) -> Result<BaryInterp> {
    let f = &mesh.faces[face as usize];
    let [ia, ib, ic] = f.vertices;
    let a = mesh.positions[ia as usize];
    let b = mesh.positions[ib as usize];
    let c = mesh.positions[ic as usize];
    let n = (b - a).cross(c - a);
    let n2 = n.dot(n);
    let max_edge = (b - a)
        .length_squared()
        .max((c - a).length_squared())
        .max((c - b).length_squared());
    if n2.sqrt() <= EPS_AREA_REL * max_edge {
        return Err(Error::InvalidArgument(format!("degenerate face {face}")));
    }
    let u = bary_weight(a, b, c, p, n, n2);
    let v = bary_weight(b, c, a, p, n, n2);
    let w = bary_weight(c, a, b, p, n, n2);
    Ok(BaryInterp {
        position: a * u + b * v + c * w,
        color: mesh.colors[ia as usize] * u
            + mesh.colors[ib as usize] * v
            + mesh.colors[ic as usize] * w,
        opacity: mesh.opacities[ia as usize] * u
            + mesh.opacities[ib as usize] * v
            + mesh.opacities[ic as usize] * w,
        weights: [u, v, w],
    })
}

#[inline]
fn lerp_vec(a: DVec3, b: DVec3, x: f64) -> DVec3 {
    a + (b - a) * x
}

#[inline]
fn lerp(a: f64, b: f64, x: f64) -> f64 {
    a + (b - a) * x
}

/// The sub-interval accumulation loop on raw endpoint attributes, starting
/// from an empty state. Exposed for direct comparison against the quadrature
/// oracle.
pub fn accum_interval(
    t_total: f64,
    c0: DVec3,
    c1: DVec3,
    alpha0: f64,
    alpha1: f64,
    n_sub: u32,
) -> (DVec3, f64) {
    let mut state = RayState::default();
    accum_interval_onto(&mut state, t_total, c0, c1, alpha0, alpha1, n_sub);
    (state.color, state.alpha)
}

#[inline]
fn accum_interval_onto(
    state: &mut RayState,
    t_total: f64,
    c0: DVec3,
    c1: DVec3,
    alpha0: f64,
    alpha1: f64,
    n_sub: u32,
) {
    let n = n_sub.max(1);
    let t = t_total / n as f64;
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let ci0 = lerp_vec(c0, c1, i as f64 * inv);
        let ci1 = lerp_vec(c0, c1, (i + 1) as f64 * inv);
        let ai = lerp(alpha0, alpha1, (i as f64 + 0.5) * inv);
        let (c_acc, a_acc) = accum_core(t, ci0, ci1, ai);
        state.composite(c_acc, a_acc);
    }
}

/// Accumulates one paired tet segment onto the ray state: barycentric
/// attributes at the entry and exit faces, `n_sub` sub-intervals with
/// midpoint extinction, front-to-back compositing. Returns false when a
/// degenerate face forced the segment to be skipped.
pub fn accum_tet(
    mesh: &TetMesh,
    ray: &Ray,
    segment: &Segment,
    state: &mut RayState,
    n_sub: u32,
) -> bool {
    let entry = match bary_interp(mesh, segment.face_in, ray.at(segment.d0)) {
        Ok(e) => e,
        Err(_) => return false,
    };
    let exit = match bary_interp(mesh, segment.face_out, ray.at(segment.d1)) {
        Ok(e) => e,
        Err(_) => return false,
    };
    let t_total = segment.d1 - segment.d0;
    accum_interval_onto(
        state,
        t_total,
        entry.color,
        exit.color,
        entry.opacity,
        exit.opacity,
        n_sub,
    );
    true
}

/// Rendering knobs shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Sub-intervals per tet segment.
    pub n_sub: u32,
    /// Straight background RGBA composited behind the mesh.
    pub background: [f64; 4],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_sub: 8,
            background: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderStats {
    pub dropped_fragments: u64,
    pub degenerate_faces: u64,
}

pub struct RenderOutput {
    pub image: ImageBuffer,
    /// Pre-background ray states, row-major; the backward pass starts from
    /// these instead of storing per-segment intermediates.
    pub states: Vec<RayState>,
    pub stats: RenderStats,
}

/// Renders the mesh: per pixel, fragments are generated, sorted
/// front-to-back, paired into segments and folded with [`accum_tet`], then
/// composited over the background. Deterministic for fixed inputs.
pub fn render_with_states(mesh: &TetMesh, cam: &Camera, opts: &RenderOptions) -> RenderOutput {
    let mut frags = raycast::generate_fragments(mesh, cam);
    raycast::sort_front_to_back(&mut frags);
    let width = cam.width;
    let rows: Vec<(Vec<[f64; 4]>, Vec<RayState>, RenderStats)> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut px_row = Vec::with_capacity(width as usize);
            let mut state_row = Vec::with_capacity(width as usize);
            let mut stats = RenderStats::default();
            for x in 0..width {
                let ray = cam.ray_for_pixel(x, y);
                let (segments, dropped) = raycast::pair_segments(frags.pixel(x, y));
                stats.dropped_fragments += dropped;
                let mut state = RayState::default();
                for seg in &segments {
                    if !accum_tet(mesh, &ray, seg, &mut state, opts.n_sub) {
                        stats.degenerate_faces += 1;
                    }
                }
                px_row.push(composite_over_background(
                    state.color,
                    state.alpha,
                    opts.background,
                ));
                state_row.push(state);
            }
            (px_row, state_row, stats)
        })
        .collect();
    let mut image = ImageBuffer::new(cam.width, cam.height);
    let mut states = Vec::with_capacity((cam.width * cam.height) as usize);
    let mut stats = RenderStats::default();
    for (y, (px_row, state_row, row_stats)) in rows.into_iter().enumerate() {
        for (x, px) in px_row.into_iter().enumerate() {
            image.set(x as u32, y as u32, px);
        }
        states.extend(state_row);
        stats.dropped_fragments += row_stats.dropped_fragments;
        stats.degenerate_faces += row_stats.degenerate_faces;
    }
    RenderOutput {
        image,
        states,
        stats,
    }
}

pub fn render(mesh: &TetMesh, cam: &Camera, opts: &RenderOptions) -> ImageBuffer {
    render_with_states(mesh, cam, opts).image
}

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

/// Coefficients of the integrand `(r0 + r1 x + r2 x^2) e^{q1 x + q2 x^2}`
/// equal to `c(x) a(x) T(x)` for attributes ramping linearly over a segment
/// of length `t` (arc-length-normalized lerp). Used only by the quadrature
/// oracle; the production path uses the constant-extinction closed form.
#[derive(Debug, Clone, Copy)]
pub struct AccumCoeffs {
    pub r0: DVec3,
    pub r1: DVec3,
    pub r2: DVec3,
    pub q1: f64,
    pub q2: f64,
}

impl AccumCoeffs {
    pub fn from_endpoints(t: f64, c0: DVec3, c1: DVec3, alpha0: f64, alpha1: f64) -> Self {
        let dc = c1 - c0;
        let da = alpha1 - alpha0;
        AccumCoeffs {
            r0: c0 * alpha0,
            r1: (c0 * da + dc * alpha0) / t,
            r2: dc * da / (t * t),
            q1: -alpha0,
            q2: -da / (2.0 * t),
        }
    }

    #[inline]
    pub fn integrand(&self, x: f64) -> DVec3 {
        (self.r0 + self.r1 * x + self.r2 * (x * x)) * (self.q1 * x + self.q2 * x * x).exp()
    }
}

fn simpson(h: f64, fa: DVec3, fm: DVec3, fb: DVec3) -> DVec3 {
    (fa + fm * 4.0 + fb) * (h / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> DVec3,
    a: f64,
    b: f64,
    fa: DVec3,
    fm: DVec3,
    fb: DVec3,
    whole: DVec3,
    tol: f64,
    depth: u32,
) -> DVec3 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(m - a, fa, flm, fm);
    let right = simpson(b - m, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs().max_element() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> DVec3, a: f64, b: f64, tol: f64) -> DVec3 {
    if b <= a {
        return DVec3::ZERO;
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(b - a, fa, fm, fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 58)
}

/// Direct adaptive quadrature of the emission-absorption integral over one
/// segment with linearly ramping color and extinction (test oracle,
/// absolute error well below 1e-10). Returns premultiplied color and
/// opacity `1 - e^{-integral of alpha}`.
pub fn eval_eq1_quadrature(
    t: f64,
    c0: DVec3,
    c1: DVec3,
    alpha0: f64,
    alpha1: f64,
) -> (DVec3, f64) {
    if t == 0.0 {
        return (DVec3::ZERO, 0.0);
    }
    let coeffs = AccumCoeffs::from_endpoints(t, c0, c1, alpha0, alpha1);
    let color = integrate(|x| coeffs.integrand(x), 0.0, t, 1e-13);
    let tau = integrate(
        |x| DVec3::new(lerp(alpha0, alpha1, x / t), 0.0, 0.0),
        0.0,
        t,
        1e-14,
    )
    .x;
    (color, one_minus_exp_neg(tau))
}
