//! C ABI for the tetdvr renderer: opaque handles, status codes and flat
//! buffers so other languages can drive rendering, gradient computation and
//! refinement.
//!
//! Conventions:
//! - Every fallible call returns a [`TdvrStatus`]; `TDVR_STATUS_OK` is 0.
//! - On failure, [`tdvr_last_error_message`] returns a thread-local,
//!   NUL-terminated description valid until the next failing call.
//! - Handles are created and released by matching `_new`/`_load` and
//!   `_free` calls; `_free` accepts null.
//! - Colors are linear RGB, images row-major RGBA f64, pixel (0,0) top-left.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use glam::DVec3;

use tetdvr::assets::{Camera, ImageBuffer};
use tetdvr::backward::{
    backward_render, loss_and_adjoint, GradientBuffer, LossKind,
};
use tetdvr::forward::{render_with_states, RenderOptions};
use tetdvr::optim::psnr;
use tetdvr::subdivide::refine;
use tetdvr::tetmesh::{build_regular_grid, load_mesh, save_mesh, Aabb, TetMesh};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdvrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    DimensionMismatch = 5,
    Unsupported = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: String) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap();
    });
}

fn status_of(err: &tetdvr::Error) -> TdvrStatus {
    use tetdvr::Error::*;
    match err {
        InvalidArgument(_) => TdvrStatus::InvalidArgument,
        Parse { .. } => TdvrStatus::ParseError,
        Io { .. } => TdvrStatus::IoError,
        UnsupportedFormat(_) => TdvrStatus::Unsupported,
        DimensionMismatch(_) => TdvrStatus::DimensionMismatch,
        NonFinite(_) | InversionImpossible(_) | Unsatisfiable { .. } | RefineAborted(_) => {
            TdvrStatus::Internal
        }
    }
}

fn fail(err: tetdvr::Error) -> TdvrStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn fail_msg(status: TdvrStatus, msg: &str) -> TdvrStatus {
    set_error(msg.to_string());
    status
}

unsafe fn path_arg(ptr: *const c_char) -> Result<&'static Path, TdvrStatus> {
    if ptr.is_null() {
        return Err(fail_msg(TdvrStatus::NullPointer, "null path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail_msg(TdvrStatus::InvalidArgument, "path is not UTF-8")),
    }
}

/// Opaque tetrahedral mesh handle.
pub struct TdvrMesh(TetMesh);
/// Opaque image handle (row-major RGBA f64).
pub struct TdvrImage(ImageBuffer);
/// Opaque camera handle.
pub struct TdvrCamera(Camera);
/// Opaque per-vertex gradient buffer handle.
pub struct TdvrGradients(GradientBuffer);

/// Message describing the most recent failure on this thread.
#[no_mangle]
pub extern "C" fn tdvr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tdvr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Caps the worker thread count; 0 keeps the default. Must be called before
/// any rendering call to take effect.
#[no_mangle]
pub extern "C" fn tdvr_set_threads(threads: usize) -> TdvrStatus {
    if threads == 0 {
        return TdvrStatus::Ok;
    }
    match rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        Ok(()) => TdvrStatus::Ok,
        Err(e) => fail_msg(TdvrStatus::Internal, &e.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

/// Builds a regular grid mesh with `dims[0..3]` cells per axis tiling the
/// box `bbox = [x0, y0, z0, x1, y1, z1]`, constant initial color and
/// extinction.
///
/// # Safety
/// `dims` points to 3 u32 values, `bbox` to 6 and `color` to 3 doubles;
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_grid(
    dims: *const u32,
    bbox: *const f64,
    color: *const f64,
    opacity: f64,
    out: *mut *mut TdvrMesh,
) -> TdvrStatus {
    if dims.is_null() || bbox.is_null() || color.is_null() || out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null argument to tdvr_mesh_grid");
    }
    let dims = std::slice::from_raw_parts(dims, 3);
    let b = std::slice::from_raw_parts(bbox, 6);
    let c = std::slice::from_raw_parts(color, 3);
    let aabb = Aabb::new(DVec3::new(b[0], b[1], b[2]), DVec3::new(b[3], b[4], b[5]));
    match build_regular_grid([dims[0], dims[1], dims[2]], aabb) {
        Ok(mut mesh) => {
            for i in 0..mesh.num_vertices() {
                mesh.colors[i] = DVec3::new(c[0], c[1], c[2]);
                mesh.opacities[i] = opacity;
            }
            *out = Box::into_raw(Box::new(TdvrMesh(mesh)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads a mesh container file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_load(path: *const c_char, out: *mut *mut TdvrMesh) -> TdvrStatus {
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_mesh(path) {
        Ok(mesh) => {
            *out = Box::into_raw(Box::new(TdvrMesh(mesh)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `mesh` must come from this library; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_save(mesh: *const TdvrMesh, path: *const c_char) -> TdvrStatus {
    let Some(mesh) = mesh.as_ref() else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match save_mesh(&mesh.0, path) {
        Ok(()) => TdvrStatus::Ok,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `mesh` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_free(mesh: *mut TdvrMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_num_vertices(mesh: *const TdvrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_vertices())
}

/// # Safety
/// `mesh` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_num_tets(mesh: *const TdvrMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.num_tets())
}

/// Number of structural violations (inverted tets, nonconforming faces, bad
/// attributes, malformed tets); 0 means the mesh is valid.
///
/// # Safety
/// `mesh` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_validate(mesh: *const TdvrMesh) -> usize {
    mesh.as_ref().map_or(usize::MAX, |m| {
        let report = m.0.validate();
        report.inverted_tets.len()
            + report.nonconforming_faces.len()
            + report.bad_attributes.len()
            + report.malformed_tets.len()
    })
}

/// Copies per-vertex data out of the mesh. Any destination may be null to
/// skip it; non-null destinations need room for `num_vertices * 3` doubles
/// (positions, colors) or `num_vertices` (opacities).
///
/// # Safety
/// Destinations, when non-null, must satisfy the size contract above.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_get_vertices(
    mesh: *const TdvrMesh,
    positions: *mut f64,
    colors: *mut f64,
    opacities: *mut f64,
) -> TdvrStatus {
    let Some(mesh) = mesh.as_ref() else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh");
    };
    let n = mesh.0.num_vertices();
    if !positions.is_null() {
        let dst = std::slice::from_raw_parts_mut(positions, n * 3);
        for (i, p) in mesh.0.positions.iter().enumerate() {
            dst[i * 3] = p.x;
            dst[i * 3 + 1] = p.y;
            dst[i * 3 + 2] = p.z;
        }
    }
    if !colors.is_null() {
        let dst = std::slice::from_raw_parts_mut(colors, n * 3);
        for (i, c) in mesh.0.colors.iter().enumerate() {
            dst[i * 3] = c.x;
            dst[i * 3 + 1] = c.y;
            dst[i * 3 + 2] = c.z;
        }
    }
    if !opacities.is_null() {
        std::slice::from_raw_parts_mut(opacities, n).copy_from_slice(&mesh.0.opacities);
    }
    TdvrStatus::Ok
}

/// Overwrites per-vertex data; null sources are skipped. Sizes as in
/// [`tdvr_mesh_get_vertices`]. Opacities are clamped to be non-negative.
///
/// # Safety
/// Sources, when non-null, must satisfy the size contract.
#[no_mangle]
pub unsafe extern "C" fn tdvr_mesh_set_vertices(
    mesh: *mut TdvrMesh,
    positions: *const f64,
    colors: *const f64,
    opacities: *const f64,
) -> TdvrStatus {
    let Some(mesh) = mesh.as_mut() else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh");
    };
    let n = mesh.0.num_vertices();
    if !positions.is_null() {
        let src = std::slice::from_raw_parts(positions, n * 3);
        for i in 0..n {
            mesh.0.positions[i] = DVec3::new(src[i * 3], src[i * 3 + 1], src[i * 3 + 2]);
        }
        mesh.0.rebuild_faces();
    }
    if !colors.is_null() {
        let src = std::slice::from_raw_parts(colors, n * 3);
        for i in 0..n {
            mesh.0.colors[i] = DVec3::new(src[i * 3], src[i * 3 + 1], src[i * 3 + 2]);
        }
    }
    if !opacities.is_null() {
        let src = std::slice::from_raw_parts(opacities, n);
        for i in 0..n {
            mesh.0.opacities[i] = src[i].max(0.0);
        }
    }
    TdvrStatus::Ok
}

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

/// Look-at pinhole camera. `eye`, `target`, `up` each point to 3 doubles;
/// `fov_x` is the horizontal field of view in radians.
///
/// # Safety
/// Pointer arguments as documented; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_camera_look_at(
    eye: *const f64,
    target: *const f64,
    up: *const f64,
    fov_x: f64,
    width: u32,
    height: u32,
    near: f64,
    far: f64,
    out: *mut *mut TdvrCamera,
) -> TdvrStatus {
    if eye.is_null() || target.is_null() || up.is_null() || out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null argument to tdvr_camera_look_at");
    }
    let v = |p: *const f64| {
        let s = std::slice::from_raw_parts(p, 3);
        DVec3::new(s[0], s[1], s[2])
    };
    match Camera::look_at(v(eye), v(target), v(up), fov_x, width, height, near, far) {
        Ok(camera) => {
            *out = Box::into_raw(Box::new(TdvrCamera(camera)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads frame `index` of a pose file.
///
/// # Safety
/// `path` is NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_camera_from_pose_file(
    path: *const c_char,
    index: usize,
    width: u32,
    height: u32,
    near: f64,
    far: f64,
    out: *mut *mut TdvrCamera,
) -> TdvrStatus {
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match tetdvr::assets::load_camera_set(path, width, height, near, far) {
        Ok(cams) => match cams.into_iter().nth(index) {
            Some(loaded) => {
                *out = Box::into_raw(Box::new(TdvrCamera(loaded.camera)));
                TdvrStatus::Ok
            }
            None => fail_msg(TdvrStatus::InvalidArgument, "frame index out of range"),
        },
        Err(e) => fail(e),
    }
}

/// # Safety
/// `camera` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tdvr_camera_free(camera: *mut TdvrCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// # Safety
/// `path` is NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_read(path: *const c_char, out: *mut *mut TdvrImage) -> TdvrStatus {
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match tetdvr::assets::read_image(path) {
        Ok(image) => {
            *out = Box::into_raw(Box::new(TdvrImage(image)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Writes `.png` (8-bit sRGB) or `.pf64` (lossless float) by extension.
///
/// # Safety
/// `image` from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_write(image: *const TdvrImage, path: *const c_char) -> TdvrStatus {
    let Some(image) = image.as_ref() else {
        return fail_msg(TdvrStatus::NullPointer, "null image");
    };
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match tetdvr::assets::write_image(path, &image.0) {
        Ok(()) => TdvrStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Wraps a caller-provided RGBA f64 buffer (copied) as an image.
///
/// # Safety
/// `pixels` points to `width * height * 4` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_from_data(
    width: u32,
    height: u32,
    pixels: *const f64,
    out: *mut *mut TdvrImage,
) -> TdvrStatus {
    if pixels.is_null() || out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null argument to tdvr_image_from_data");
    }
    let n = (width as usize) * (height as usize);
    let src = std::slice::from_raw_parts(pixels, n * 4);
    let mut image = ImageBuffer::new(width, height);
    for i in 0..n {
        image.pixels[i] = [src[i * 4], src[i * 4 + 1], src[i * 4 + 2], src[i * 4 + 3]];
    }
    *out = Box::into_raw(Box::new(TdvrImage(image)));
    TdvrStatus::Ok
}

/// # Safety
/// `image` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_width(image: *const TdvrImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.width)
}

/// # Safety
/// `image` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_height(image: *const TdvrImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.height)
}

/// Copies the RGBA f64 pixels into `dst` (`width * height * 4` doubles).
///
/// # Safety
/// `dst` must satisfy the size contract.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_copy_data(image: *const TdvrImage, dst: *mut f64) -> TdvrStatus {
    let Some(image) = image.as_ref() else {
        return fail_msg(TdvrStatus::NullPointer, "null image");
    };
    if dst.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null destination");
    }
    let n = image.0.pixels.len();
    let dst = std::slice::from_raw_parts_mut(dst, n * 4);
    for (i, px) in image.0.pixels.iter().enumerate() {
        dst[i * 4..i * 4 + 4].copy_from_slice(px);
    }
    TdvrStatus::Ok
}

/// # Safety
/// `image` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tdvr_image_free(image: *mut TdvrImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// PSNR in dB over RGB; infinity for identical images.
///
/// # Safety
/// Handles from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_psnr(
    a: *const TdvrImage,
    b: *const TdvrImage,
    peak: f64,
    out: *mut f64,
) -> TdvrStatus {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        return fail_msg(TdvrStatus::NullPointer, "null image");
    };
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    match psnr(&a.0, &b.0, peak) {
        Ok(v) => {
            *out = v;
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Rendering and gradients
// ---------------------------------------------------------------------------

fn options(n_sub: u32, background: *const f64) -> RenderOptions {
    let bg = if background.is_null() {
        [0.0, 0.0, 0.0, 1.0]
    } else {
        let s = unsafe { std::slice::from_raw_parts(background, 4) };
        [s[0], s[1], s[2], s[3]]
    };
    RenderOptions {
        n_sub: n_sub.max(1),
        background: bg,
    }
}

/// Renders the mesh through `camera`. `background` may be null (opaque
/// black) or point to straight RGBA.
///
/// # Safety
/// Handles from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_render(
    mesh: *const TdvrMesh,
    camera: *const TdvrCamera,
    n_sub: u32,
    background: *const f64,
    out: *mut *mut TdvrImage,
) -> TdvrStatus {
    let (Some(mesh), Some(camera)) = (mesh.as_ref(), camera.as_ref()) else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh or camera");
    };
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    let opts = options(n_sub, background);
    let image = tetdvr::forward::render(&mesh.0, &camera.0, &opts);
    *out = Box::into_raw(Box::new(TdvrImage(image)));
    TdvrStatus::Ok
}

/// Renders, compares against `target` with an L1 (`loss_kind` = 1) or L2
/// (anything else) loss, and backpropagates to per-vertex gradients.
/// `out_loss` may be null.
///
/// # Safety
/// Handles from this library; `out_grads` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_render_backward(
    mesh: *const TdvrMesh,
    camera: *const TdvrCamera,
    target: *const TdvrImage,
    n_sub: u32,
    background: *const f64,
    loss_kind: i32,
    out_loss: *mut f64,
    out_grads: *mut *mut TdvrGradients,
) -> TdvrStatus {
    let (Some(mesh), Some(camera), Some(target)) =
        (mesh.as_ref(), camera.as_ref(), target.as_ref())
    else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh, camera or target");
    };
    if out_grads.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    let opts = options(n_sub, background);
    let kind = if loss_kind == 1 { LossKind::L1 } else { LossKind::L2 };
    let rendered = render_with_states(&mesh.0, &camera.0, &opts);
    let (loss, adjoint) = match loss_and_adjoint(&rendered.image, &target.0, kind) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match backward_render(&mesh.0, &camera.0, &opts, &adjoint, &rendered.states) {
        Ok(bw) => {
            if !out_loss.is_null() {
                *out_loss = loss;
            }
            *out_grads = Box::into_raw(Box::new(TdvrGradients(bw.grads)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Copies gradient data out; any destination may be null. Sizes:
/// `num_vertices * 3` (colors, positions), `num_vertices` (opacities,
/// magnitudes).
///
/// # Safety
/// Destinations, when non-null, must satisfy the size contract.
#[no_mangle]
pub unsafe extern "C" fn tdvr_gradients_copy(
    grads: *const TdvrGradients,
    color: *mut f64,
    opacity: *mut f64,
    position: *mut f64,
    magnitude: *mut f64,
) -> TdvrStatus {
    let Some(grads) = grads.as_ref() else {
        return fail_msg(TdvrStatus::NullPointer, "null gradients");
    };
    let n = grads.0.len();
    if !color.is_null() {
        let dst = std::slice::from_raw_parts_mut(color, n * 3);
        for (i, g) in grads.0.color.iter().enumerate() {
            dst[i * 3] = g.x;
            dst[i * 3 + 1] = g.y;
            dst[i * 3 + 2] = g.z;
        }
    }
    if !opacity.is_null() {
        std::slice::from_raw_parts_mut(opacity, n).copy_from_slice(&grads.0.opacity);
    }
    if !position.is_null() {
        let dst = std::slice::from_raw_parts_mut(position, n * 3);
        for (i, g) in grads.0.position.iter().enumerate() {
            dst[i * 3] = g.x;
            dst[i * 3 + 1] = g.y;
            dst[i * 3 + 2] = g.z;
        }
    }
    if !magnitude.is_null() {
        std::slice::from_raw_parts_mut(magnitude, n).copy_from_slice(&grads.0.abs_color);
    }
    TdvrStatus::Ok
}

/// # Safety
/// `grads` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tdvr_gradients_len(grads: *const TdvrGradients) -> usize {
    grads.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `grads` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn tdvr_gradients_free(grads: *mut TdvrGradients) {
    if !grads.is_null() {
        drop(Box::from_raw(grads));
    }
}

/// Refines the mesh around the vertices with the largest accumulated
/// gradient magnitudes, producing a new conforming mesh.
///
/// # Safety
/// Handles from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tdvr_refine(
    mesh: *const TdvrMesh,
    grads: *const TdvrGradients,
    fraction: f64,
    out: *mut *mut TdvrMesh,
) -> TdvrStatus {
    let (Some(mesh), Some(grads)) = (mesh.as_ref(), grads.as_ref()) else {
        return fail_msg(TdvrStatus::NullPointer, "null mesh or gradients");
    };
    if out.is_null() {
        return fail_msg(TdvrStatus::NullPointer, "null out pointer");
    }
    if grads.0.len() != mesh.0.num_vertices() {
        return fail_msg(
            TdvrStatus::DimensionMismatch,
            "gradient buffer does not match mesh vertex count",
        );
    }
    match refine(&mesh.0, &grads.0, fraction) {
        Ok(refined) => {
            *out = Box::into_raw(Box::new(TdvrMesh(refined)));
            TdvrStatus::Ok
        }
        Err(e) => fail(e),
    }
}
