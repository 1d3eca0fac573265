//! Pinhole cameras with normalized-device-coordinate depth in [0, 1], plus
//! the pose-file loader (camera-to-world matrices and a horizontal FOV).

use std::path::Path;

use glam::{DMat4, DVec3, DVec4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A view ray in world space. `dir` is unit length, so the ray parameter is
/// world-space distance.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
    /// Distance along the ray to the near plane.
    pub near: f64,
}

impl Ray {
    pub fn at(&self, s: f64) -> DVec3 {
        self.origin + self.dir * s
    }
}

/// Pinhole camera: view and projection matrices plus a pixel viewport.
///
/// Conventions: camera space is right-handed looking down -Z with +Y up.
/// NDC x, y are in [-1, 1] (x right, y up), depth d in [0, 1] between the
/// near and far planes. Pixel (0, 0) is the top-left corner of the image.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub view: DMat4,
    pub proj: DMat4,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    view_proj: DMat4,
    inv_view_proj: DMat4,
    position: DVec3,
}

impl Camera {
    pub fn from_view_proj(
        view: DMat4,
        proj: DMat4,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "viewport dimensions must be >= 1".into(),
            ));
        }
        let view_proj = proj * view;
        let det = view_proj.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidArgument(
                "projection*view is not invertible".into(),
            ));
        }
        let inv_view = view.inverse();
        let position = inv_view.transform_point3(DVec3::ZERO);
        Ok(Camera {
            view,
            proj,
            width,
            height,
            near,
            far,
            view_proj,
            inv_view_proj: view_proj.inverse(),
            position,
        })
    }

    /// Builds a camera from a camera-to-world transform and a horizontal
    /// field of view, the convention used by the pose files.
    pub fn from_camera_to_world(
        camera_to_world: DMat4,
        fov_x: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let det = camera_to_world.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidArgument(
                "camera-to-world matrix is not invertible".into(),
            ));
        }
        let aspect = width as f64 / height as f64;
        let fov_y = 2.0 * ((fov_x * 0.5).tan() / aspect).atan();
        let proj = DMat4::perspective_rh(fov_y, aspect, near, far);
        Camera::from_view_proj(camera_to_world.inverse(), proj, width, height, near, far)
    }

    pub fn look_at(
        eye: DVec3,
        target: DVec3,
        up: DVec3,
        fov_x: f64,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let aspect = width as f64 / height as f64;
        let fov_y = 2.0 * ((fov_x * 0.5).tan() / aspect).atan();
        let view = DMat4::look_at_rh(eye, target, up);
        let proj = DMat4::perspective_rh(fov_y, aspect, near, far);
        Camera::from_view_proj(view, proj, width, height, near, far)
    }

    pub fn position(&self) -> DVec3 {
        self.position
    }

    /// World point to (ndc_x, ndc_y, depth).
    pub fn project(&self, world: DVec3) -> DVec3 {
        self.view_proj.project_point3(world)
    }

    /// (ndc_x, ndc_y, depth) back to a world point.
    pub fn unproject(&self, ndc: DVec3) -> DVec3 {
        self.inv_view_proj.project_point3(ndc)
    }

    /// NDC depth of a world point (the z of [`Camera::project`]).
    pub fn ndc_depth(&self, world: DVec3) -> f64 {
        let clip = self.view_proj * DVec4::new(world.x, world.y, world.z, 1.0);
        clip.z / clip.w
    }

    /// Ray through continuous pixel coordinates (px, py); integer pixel
    /// (ix, iy) is sampled at its center (ix + 0.5, iy + 0.5).
    pub fn ray_through(&self, px: f64, py: f64) -> Ray {
        let ndc_x = 2.0 * px / self.width as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * py / self.height as f64;
        let on_near = self.unproject(DVec3::new(ndc_x, ndc_y, 0.0));
        let offset = on_near - self.position;
        let near = offset.length();
        Ray {
            origin: self.position,
            dir: offset / near,
            near,
        }
    }

    pub fn ray_for_pixel(&self, ix: u32, iy: u32) -> Ray {
        self.ray_through(ix as f64 + 0.5, iy as f64 + 0.5)
    }
}

/// Camera parsed from a pose file, tagged with the frame's file path stem.
#[derive(Debug, Clone)]
pub struct LoadedCamera {
    pub camera: Camera,
    pub name: String,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    camera_angle_x: f64,
    frames: Vec<PoseFrame>,
}

#[derive(Serialize, Deserialize)]
struct PoseFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn matrix_from_rows(rows: &[[f64; 4]; 4]) -> DMat4 {
    DMat4::from_cols_array_2d(rows).transpose()
}

/// Loads a pose file: a `camera_angle_x` horizontal FOV plus per-frame
/// row-major camera-to-world matrices. Cameras keep the file order.
pub fn load_camera_set(
    path: &Path,
    width: u32,
    height: u32,
    near: f64,
    far: f64,
) -> Result<Vec<LoadedCamera>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pose_file: PoseFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut cameras = Vec::with_capacity(pose_file.frames.len());
    for (i, frame) in pose_file.frames.iter().enumerate() {
        let c2w = matrix_from_rows(&frame.transform_matrix);
        let camera =
            Camera::from_camera_to_world(c2w, pose_file.camera_angle_x, width, height, near, far)
                .map_err(|e| {
                    Error::parse(
                        path.display().to_string(),
                        format!("frame {i} ({}): {e}", frame.file_path),
                    )
                })?;
        let name = Path::new(&frame.file_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("frame_{i}"));
        cameras.push(LoadedCamera { camera, name });
    }
    Ok(cameras)
}

/// Writes a pose file in the same convention that [`load_camera_set`] reads.
pub fn save_camera_set(path: &Path, fov_x: f64, frames: &[(String, DMat4)]) -> Result<()> {
    let pose_file = PoseFile {
        camera_angle_x: fov_x,
        frames: frames
            .iter()
            .map(|(name, c2w)| {
                let cols = c2w.to_cols_array_2d();
                let mut rows = [[0.0; 4]; 4];
                for (c, col) in cols.iter().enumerate() {
                    for (r, v) in col.iter().enumerate() {
                        rows[r][c] = *v;
                    }
                }
                PoseFrame {
                    file_path: name.clone(),
                    transform_matrix: rows,
                }
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&pose_file)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Camera-to-world matrix for an orbit viewpoint looking at `target`.
pub fn orbit_camera_to_world(target: DVec3, radius: f64, azimuth: f64, elevation: f64) -> DMat4 {
    let eye = target
        + radius
            * DVec3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
    DMat4::look_at_rh(eye, target, DVec3::Z).inverse()
}
