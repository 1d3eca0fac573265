//! Per-pixel fragment lists: the software analogue of per-pixel linked
//! lists. Camera rays are intersected with tet faces, and the resulting
//! fragments are sorted front-to-back (forward pass) or back-to-front
//! (backward pass) and paired into per-tet ray segments.
//!
//! Intersections are computed per tet as the interval between the entering
//! and exiting face planes. Shared faces are stored once in the global face
//! table, so the entry depth of a tet and the exit depth of its neighbor are
//! computed from the same plane and agree bit-exactly. Rays lying exactly in
//! a shared face plane are assigned to the face's first incident tet, which
//! keeps axis-aligned degenerate rays from double-counting.

use glam::DVec3;
use rayon::prelude::*;

use crate::assets::{Camera, Ray};
use crate::tetmesh::TetMesh;

/// A single ray/face hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub tet: u32,
    pub face: u32,
    /// Ray-parameter distance in world units (unit direction).
    pub depth_world: f64,
    /// NDC depth in [0, 1] for geometry inside the frustum.
    pub depth_ndc: f64,
    /// True when the ray enters the tet here, false when it exits.
    pub entering: bool,
    /// True when the hit was clipped to the near plane (depth replaced).
    pub near_clamped: bool,
}

/// All fragments of one camera view, variable-length per pixel.
#[derive(Debug, Clone)]
pub struct FragmentListImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec<Fragment>>,
}

impl FragmentListImage {
    pub fn pixel(&self, x: u32, y: u32) -> &[Fragment] {
        &self.pixels[(y * self.width + x) as usize]
    }
}

/// A paired entry/exit of one tet along a ray, `d0 < d1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub tet: u32,
    pub face_in: u32,
    pub face_out: u32,
    pub d0: f64,
    pub d1: f64,
    pub entry_clamped: bool,
}

/// One face of a tet with the outward-oriented plane `n . x = d` folded in.
/// `first` marks the face's first incident tet (used by the on-plane tie
/// rule); the flip negates both `n` and `d`, so the intersection parameter
/// computed from either side is the same IEEE ratio and shared depths match
/// bit-exactly across neighbors.
#[derive(Clone, Copy)]
struct TetFace {
    n: DVec3,
    d: f64,
    face: u32,
    first: bool,
}

/// Per-tet outward face planes, contiguous for the per-pixel loop.
pub struct FacePlanes {
    tet_faces: Vec<[TetFace; 4]>,
}

pub fn face_planes(mesh: &TetMesh) -> FacePlanes {
    let planes: Vec<(DVec3, f64)> = mesh
        .faces
        .iter()
        .map(|f| {
            let a = mesh.positions[f.vertices[0] as usize];
            let b = mesh.positions[f.vertices[1] as usize];
            let c = mesh.positions[f.vertices[2] as usize];
            let n = (b - a).cross(c - a);
            (n, n.dot(a))
        })
        .collect();
    let tet_faces = mesh
        .tet_faces
        .iter()
        .enumerate()
        .map(|(ti, faces)| {
            faces.map(|fid| {
                let (n, d) = planes[fid as usize];
                let first = mesh.faces[fid as usize].tets[0] == Some(ti as u32);
                let (n, d) = if first { (n, d) } else { (-n, -d) };
                TetFace {
                    n,
                    d,
                    face: fid,
                    first,
                }
            })
        })
        .collect();
    FacePlanes { tet_faces }
}

/// Computes the ray interval inside one tet. Returns entry/exit parameters
/// and face ids; `None` when the ray misses or only grazes the tet.
///
/// The entry parameter is clamped to the ray's near distance; the exit must
/// be beyond it.
#[inline]
fn tet_interval(planes: &FacePlanes, tet: u32, ray: &Ray) -> Option<(f64, u32, bool, f64, u32)> {
    let mut s_enter = f64::NEG_INFINITY;
    let mut f_enter = u32::MAX;
    let mut s_exit = f64::INFINITY;
    let mut f_exit = u32::MAX;
    for tf in &planes.tet_faces[tet as usize] {
        let denom = tf.n.dot(ray.dir);
        let num = tf.d - tf.n.dot(ray.origin);
        if denom > 0.0 {
            let s = num / denom;
            if s < s_exit {
                s_exit = s;
                f_exit = tf.face;
            }
        } else if denom < 0.0 {
            let s = num / denom;
            if s > s_enter {
                s_enter = s;
                f_enter = tf.face;
            }
        } else {
            // Ray parallel to the face plane. Strictly outside: no hit. A ray
            // exactly in the plane belongs to the first incident tet only.
            if num < 0.0 || (num == 0.0 && !tf.first) {
                return None;
            }
        }
    }
    if f_enter == u32::MAX || f_exit == u32::MAX || !s_exit.is_finite() {
        return None;
    }
    let clamped = s_enter < ray.near;
    let s0 = s_enter.max(ray.near);
    if s0 < s_exit {
        Some((s0, f_enter, clamped, s_exit, f_exit))
    } else {
        None
    }
}

const TILE: u32 = 8;

/// Bins tets into screen tiles by the conservative pixel bounding box of
/// their projection, clipping straddling edges against the near plane.
fn bin_tets(mesh: &TetMesh, cam: &Camera) -> (u32, u32, Vec<Vec<u32>>) {
    let tiles_x = cam.width.div_ceil(TILE);
    let tiles_y = cam.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    let to_pixel = |q: DVec3| -> (f64, f64) {
        let clip = cam.proj * q.extend(1.0);
        let ndc_x = clip.x / clip.w;
        let ndc_y = clip.y / clip.w;
        (
            (ndc_x + 1.0) * 0.5 * cam.width as f64,
            (1.0 - ndc_y) * 0.5 * cam.height as f64,
        )
    };
    for (ti, _) in mesh.tets.iter().enumerate() {
        let world = mesh.tet_positions(ti as u32);
        let q: Vec<DVec3> = world.iter().map(|p| cam.view.transform_point3(*p)).collect();
        // Camera looks down -z; in front of the near plane means z <= -near.
        let mut pts = Vec::with_capacity(8);
        for p in &q {
            if p.z <= -cam.near {
                pts.push(to_pixel(*p));
            }
        }
        if pts.is_empty() {
            continue;
        }
        if pts.len() < 4 {
            for a in 0..4 {
                for b in a + 1..4 {
                    let (za, zb) = (q[a].z + cam.near, q[b].z + cam.near);
                    if (za < 0.0) != (zb < 0.0) {
                        let t = za / (za - zb);
                        pts.push(to_pixel(q[a] + (q[b] - q[a]) * t));
                    }
                }
            }
        }
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if x1 < -1.0 || y1 < -1.0 || x0 > cam.width as f64 + 1.0 || y0 > cam.height as f64 + 1.0 {
            continue;
        }
        let px0 = ((x0 - 1.0).floor().max(0.0) as u32).min(cam.width - 1);
        let py0 = ((y0 - 1.0).floor().max(0.0) as u32).min(cam.height - 1);
        let px1 = ((x1 + 1.0).ceil().max(0.0) as u32).min(cam.width - 1);
        let py1 = ((y1 + 1.0).ceil().max(0.0) as u32).min(cam.height - 1);
        for ty in py0 / TILE..=py1 / TILE {
            for tx in px0 / TILE..=px1 / TILE {
                tiles[(ty * tiles_x + tx) as usize].push(ti as u32);
            }
        }
    }
    (tiles_x, tiles_y, tiles)
}

/// Intersects every pixel ray with the mesh and collects fragments. For each
/// pixel the list holds exactly the ray/face hits with positive parameter
/// beyond the near plane; entry hits in front of it are clipped to it when
/// the exit is visible. Deterministic for a fixed mesh and camera.
pub fn generate_fragments(mesh: &TetMesh, cam: &Camera) -> FragmentListImage {
    let planes = face_planes(mesh);
    let (tiles_x, _, tiles) = bin_tets(mesh, cam);
    let width = cam.width;
    // NDC depth of a point at camera-space depth zc is (A zc + B) / -zc with
    // A, B from the projection; zc comes from the view matrix's third row.
    let view_row_z = glam::DVec4::new(
        cam.view.x_axis.z,
        cam.view.y_axis.z,
        cam.view.z_axis.z,
        cam.view.w_axis.z,
    );
    let (proj_a, proj_b) = (cam.proj.z_axis.z, cam.proj.w_axis.z);
    let ndc_depth = move |p: DVec3| {
        let zc = view_row_z.dot(p.extend(1.0));
        (proj_a * zc + proj_b) / -zc
    };
    let pixels: Vec<Vec<Fragment>> = (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let tiles = &tiles;
            let planes = &planes;
            (0..width).map(move |x| {
                let ray = cam.ray_for_pixel(x, y);
                let bin = &tiles[((y / TILE) * tiles_x + x / TILE) as usize];
                let mut frags = Vec::with_capacity(bin.len() / 4);
                for &tet in bin {
                    if let Some((s0, f0, clamped, s1, f1)) = tet_interval(planes, tet, &ray) {
                        frags.push(Fragment {
                            tet,
                            face: f0,
                            depth_world: s0,
                            depth_ndc: ndc_depth(ray.at(s0)),
                            entering: true,
                            near_clamped: clamped,
                        });
                        frags.push(Fragment {
                            tet,
                            face: f1,
                            depth_world: s1,
                            depth_ndc: ndc_depth(ray.at(s1)),
                            entering: false,
                            near_clamped: false,
                        });
                    }
                }
                frags
            })
        })
        .collect();
    FragmentListImage {
        width: cam.width,
        height: cam.height,
        pixels,
    }
}

fn frag_key(f: &Fragment) -> (f64, u32, u32) {
    (f.depth_world, f.tet, f.face)
}

/// Sorts every pixel's fragments ascending by (depth, tet, face).
pub fn sort_front_to_back(image: &mut FragmentListImage) {
    image.pixels.par_iter_mut().for_each(|px| {
        px.sort_by(|a, b| {
            let (da, ta, fa) = frag_key(a);
            let (db, tb, fb) = frag_key(b);
            da.total_cmp(&db).then(ta.cmp(&tb)).then(fa.cmp(&fb))
        });
    });
}

/// Exact reverse of [`sort_front_to_back`] per pixel.
pub fn sort_back_to_front(image: &mut FragmentListImage) {
    sort_front_to_back(image);
    image.pixels.par_iter_mut().for_each(|px| px.reverse());
}

/// Pairs a front-to-back sorted pixel list into per-tet segments, matching
/// entry and exit by tet id so interleaved fragments from depth ties resolve
/// correctly. Unpaired fragments are dropped and counted, not fatal.
pub fn pair_segments(fragments: &[Fragment]) -> (Vec<Segment>, u64) {
    let mut open: Vec<Fragment> = Vec::new();
    let mut segments = Vec::new();
    let mut dropped = 0u64;
    for f in fragments {
        if f.entering {
            if open.iter().any(|o| o.tet == f.tet) {
                dropped += 1;
            }
            open.push(*f);
        } else {
            match open.iter().position(|o| o.tet == f.tet) {
                Some(i) => {
                    let entry = open.swap_remove(i);
                    if entry.depth_world < f.depth_world {
                        segments.push(Segment {
                            tet: f.tet,
                            face_in: entry.face,
                            face_out: f.face,
                            d0: entry.depth_world,
                            d1: f.depth_world,
                            entry_clamped: entry.near_clamped,
                        });
                    } else {
                        dropped += 1;
                    }
                }
                None => dropped += 1,
            }
        }
    }
    dropped += open.len() as u64;
    segments.sort_by(|a, b| {
        a.d0.total_cmp(&b.d0)
            .then(a.d1.total_cmp(&b.d1))
            .then(a.tet.cmp(&b.tet))
    });
    (segments, dropped)
}

/// Text dump of all non-empty pixels: `x y : (tet,face,d_world,d_ndc)*`.
pub fn dump_fragments(image: &FragmentListImage) -> String {
    let mut out = String::new();
    for y in 0..image.height {
        for x in 0..image.width {
            let px = image.pixel(x, y);
            if px.is_empty() {
                continue;
            }
            out.push_str(&format!("{x} {y} :"));
            for f in px {
                out.push_str(&format!(
                    " ({},{},{:.9},{:.9})",
                    f.tet, f.face, f.depth_world, f.depth_ndc
                ));
            }
            out.push('\n');
        }
    }
    out
}
