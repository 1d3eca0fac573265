//! Scalar volumes, transfer functions, and the reference ray marcher used to
//! bake ground-truth images.

use std::io::Read;
use std::path::Path;

use glam::DVec3;
use rayon::prelude::*;

use crate::assets::{Camera, ImageBuffer, Ray};
use crate::tetmesh::Aabb;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeDtype {
    Uint8,
    Uint16,
    Float32,
}

impl VolumeDtype {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "uint8" => Some(VolumeDtype::Uint8),
            "uint16" => Some(VolumeDtype::Uint16),
            "float32" => Some(VolumeDtype::Float32),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            VolumeDtype::Uint8 => "uint8",
            VolumeDtype::Uint16 => "uint16",
            VolumeDtype::Float32 => "float32",
        }
    }

    fn bytes(self) -> usize {
        match self {
            VolumeDtype::Uint8 => 1,
            VolumeDtype::Uint16 => 2,
            VolumeDtype::Float32 => 4,
        }
    }
}

/// Dense scalar field on a node-centered regular grid; sample (i, j, k) sits
/// at `(i, j, k) * spacing`, x fastest in memory.
#[derive(Debug, Clone)]
pub struct ScalarVolume {
    pub dims: [u32; 3],
    pub spacing: DVec3,
    /// Normalized samples in [0, 1].
    pub samples: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(dims: [u32; 3], spacing: DVec3, samples: Vec<f64>) -> Result<Self> {
        let n = dims.iter().map(|&d| d as usize).product::<usize>();
        if samples.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "volume expects {n} samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("volume contains non-finite samples".into()));
        }
        Ok(ScalarVolume {
            dims,
            spacing,
            samples,
        })
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::new(
            DVec3::ZERO,
            DVec3::new(
                (self.dims[0] - 1) as f64 * self.spacing.x,
                (self.dims[1] - 1) as f64 * self.spacing.y,
                (self.dims[2] - 1) as f64 * self.spacing.z,
            ),
        )
    }

    #[inline]
    fn at(&self, i: u32, j: u32, k: u32) -> f64 {
        self.samples
            [(i + j * self.dims[0] + k * self.dims[0] * self.dims[1]) as usize]
    }

    /// Trilinear interpolation at a world point; clamps to the grid extent.
    pub fn sample_trilinear(&self, p: DVec3) -> f64 {
        let g = DVec3::new(
            (p.x / self.spacing.x).clamp(0.0, (self.dims[0] - 1) as f64),
            (p.y / self.spacing.y).clamp(0.0, (self.dims[1] - 1) as f64),
            (p.z / self.spacing.z).clamp(0.0, (self.dims[2] - 1) as f64),
        );
        let i0 = (g.x.floor() as u32).min(self.dims[0] - 1);
        let j0 = (g.y.floor() as u32).min(self.dims[1] - 1);
        let k0 = (g.z.floor() as u32).min(self.dims[2] - 1);
        let i1 = (i0 + 1).min(self.dims[0] - 1);
        let j1 = (j0 + 1).min(self.dims[1] - 1);
        let k1 = (k0 + 1).min(self.dims[2] - 1);
        let f = g - DVec3::new(i0 as f64, j0 as f64, k0 as f64);
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.at(i0, j0, k0), self.at(i1, j0, k0), f.x);
        let c10 = lerp(self.at(i0, j1, k0), self.at(i1, j1, k0), f.x);
        let c01 = lerp(self.at(i0, j0, k1), self.at(i1, j0, k1), f.x);
        let c11 = lerp(self.at(i0, j1, k1), self.at(i1, j1, k1), f.x);
        let c0 = lerp(c00, c10, f.y);
        let c1 = lerp(c01, c11, f.y);
        lerp(c0, c1, f.z)
    }
}

/// Piecewise-linear RGBA transfer function over normalized scalar values.
#[derive(Debug, Clone)]
pub struct TransferFunction {
    /// Control points (position, rgba) with positions strictly increasing,
    /// first 0 and last 1 after normalization.
    pub points: Vec<(f64, [f64; 4])>,
}

impl TransferFunction {
    pub fn new(points: Vec<(f64, [f64; 4])>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(
                "transfer function needs at least 2 control points".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(
                    "transfer function positions must be strictly increasing".into(),
                ));
            }
        }
        let lo = points[0].0;
        let hi = points[points.len() - 1].0;
        let points = points
            .into_iter()
            .map(|(p, rgba)| ((p - lo) / (hi - lo), rgba))
            .collect();
        Ok(TransferFunction { points })
    }

    /// Parses lines of `position r g b a`, each value in [0, 1].
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut points = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| {
                    s.parse().map_err(|_| {
                        Error::parse(
                            path.display().to_string(),
                            format!("line {}: bad number", ln + 1),
                        )
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 5 {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {}: expected `position r g b a`", ln + 1),
                ));
            }
            points.push((vals[0], [vals[1], vals[2], vals[3], vals[4]]));
        }
        TransferFunction::new(points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (p, rgba) in &self.points {
            out.push_str(&format!(
                "{p} {} {} {} {}\n",
                rgba[0], rgba[1], rgba[2], rgba[3]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn evaluate(&self, x: f64) -> (DVec3, f64) {
        let x = x.clamp(0.0, 1.0);
        let mut hi = 1;
        while hi < self.points.len() - 1 && self.points[hi].0 < x {
            hi += 1;
        }
        let (x0, a) = self.points[hi - 1];
        let (x1, b) = self.points[hi];
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        let l = |i: usize| a[i] + (b[i] - a[i]) * t;
        (DVec3::new(l(0), l(1), l(2)), l(3))
    }
}

/// Options for [`bake_ground_truth`].
#[derive(Debug, Clone, Copy)]
pub struct BakeOptions {
    /// Length over which a transfer-function alpha of `a` produces opacity
    /// `a`; extinction is `-ln(1 - a) / reference_length`. Defaults to 1% of
    /// the volume diagonal when `None`.
    pub reference_length: Option<f64>,
    /// Straight (non-premultiplied) background color and alpha.
    pub background: [f64; 4],
}

impl Default for BakeOptions {
    fn default() -> Self {
        BakeOptions {
            reference_length: None,
            background: [0.0, 0.0, 0.0, 1.0],
        }
    }
}

/// Composites `(color, alpha)` over a straight background, returning the
/// final RGBA pixel. `color` is premultiplied.
pub fn composite_over_background(color: DVec3, alpha: f64, background: [f64; 4]) -> [f64; 4] {
    let t = 1.0 - alpha;
    [
        color.x + t * background[0] * background[3],
        color.y + t * background[1] * background[3],
        color.z + t * background[2] * background[3],
        alpha + t * background[3],
    ]
}

fn ray_box_interval(ray: &Ray, bbox: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = ray.near;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let (o, d) = (ray.origin[axis], ray.dir[axis]);
        let (lo, hi) = (bbox.min[axis], bbox.max[axis]);
        if d.abs() < 1e-300 {
            if o < lo || o > hi {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lo - o) / d, (hi - o) / d);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    (t0 < t1).then_some((t0, t1))
}

/// Renders reference images of a scalar volume by ray marching with
/// post-classification: the scalar is interpolated first, then the transfer
/// function is applied. Alpha converges to `1 - exp(-integral of extinction)`
/// as the step size shrinks.
pub fn bake_ground_truth(
    volume: &ScalarVolume,
    tf: &TransferFunction,
    cameras: &[Camera],
    step: f64,
    options: &BakeOptions,
) -> Result<Vec<ImageBuffer>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("no cameras to bake".into()));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("step size must be positive".into()));
    }
    let bbox = volume.bounding_box();
    let ref_len = options
        .reference_length
        .unwrap_or(0.01 * bbox.diagonal())
        .max(1e-12);
    let mut images = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let width = cam.width;
        let rows: Vec<Vec<[f64; 4]>> = (0..cam.height)
            .into_par_iter()
            .map(|y| {
                let mut row = Vec::with_capacity(width as usize);
                for x in 0..width {
                    let ray = cam.ray_for_pixel(x, y);
                    let mut color = DVec3::ZERO;
                    let mut alpha = 0.0;
                    if let Some((s0, s1)) = ray_box_interval(&ray, &bbox) {
                        let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
                        let h = (s1 - s0) / n as f64;
                        for i in 0..n {
                            let p = ray.at(s0 + (i as f64 + 0.5) * h);
                            let scalar = volume.sample_trilinear(p);
                            let (rgb, a) = tf.evaluate(scalar);
                            let a = a.clamp(0.0, 1.0 - 1e-9);
                            let sigma = -(1.0 - a).ln() / ref_len;
                            let step_alpha = 1.0 - (-sigma * h).exp();
                            color += (1.0 - alpha) * step_alpha * rgb;
                            alpha += (1.0 - alpha) * step_alpha;
                        }
                    }
                    row.push(composite_over_background(color, alpha, options.background));
                }
                row
            })
            .collect();
        let mut img = ImageBuffer::new(cam.width, cam.height);
        for (y, row) in rows.into_iter().enumerate() {
            for (x, px) in row.into_iter().enumerate() {
                img.set(x as u32, y as u32, px);
            }
        }
        images.push(img);
    }
    Ok(images)
}

/// Loads a volume from a sidecar text header naming dims, dtype, spacing and
/// the raw data file. Integer samples are normalized to [0, 1].
pub fn load_volume(header_path: &Path) -> Result<ScalarVolume> {
    let text = std::fs::read_to_string(header_path)
        .map_err(|e| Error::io(header_path.display().to_string(), e))?;
    let mut dims: Option<[u32; 3]> = None;
    let mut dtype: Option<VolumeDtype> = None;
    let mut spacing = DVec3::ONE;
    let mut data_file: Option<String> = None;
    let bad = |msg: String| Error::parse(header_path.display().to_string(), msg);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => {
                let v: Vec<u32> = value
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad("bad dims".into())))
                    .collect::<Result<_>>()?;
                if v.len() != 3 || v.iter().any(|&d| d == 0) {
                    return Err(bad("dims needs 3 positive integers".into()));
                }
                dims = Some([v[0], v[1], v[2]]);
            }
            "dtype" => {
                dtype = Some(
                    VolumeDtype::parse(value)
                        .ok_or_else(|| bad(format!("unknown dtype {value:?}")))?,
                );
            }
            "spacing" => {
                let v: Vec<f64> = value
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| bad("bad spacing".into())))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(bad("spacing needs 3 floats".into()));
                }
                spacing = DVec3::new(v[0], v[1], v[2]);
            }
            "data" => data_file = Some(value.to_string()),
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("missing dims".into()))?;
    let dtype = dtype.ok_or_else(|| bad("missing dtype".into()))?;
    let data_file = data_file.ok_or_else(|| bad("missing data".into()))?;
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&data_file);
    let mut raw = Vec::new();
    std::fs::File::open(&raw_path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(raw_path.display().to_string(), e))?;
    let n = dims.iter().map(|&d| d as usize).product::<usize>();
    if raw.len() != n * dtype.bytes() {
        return Err(bad(format!(
            "raw file has {} bytes, expected {}",
            raw.len(),
            n * dtype.bytes()
        )));
    }
    let samples: Vec<f64> = match dtype {
        VolumeDtype::Uint8 => raw.iter().map(|&b| b as f64 / 255.0).collect(),
        VolumeDtype::Uint16 => raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        VolumeDtype::Float32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    ScalarVolume::new(dims, spacing, samples)
}

/// Writes a volume as raw data plus sidecar header next to it.
pub fn save_volume(header_path: &Path, volume: &ScalarVolume, dtype: VolumeDtype) -> Result<()> {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into());
    let data_file = format!("{stem}.raw");
    let raw_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&data_file);
    let mut raw = Vec::with_capacity(volume.samples.len() * dtype.bytes());
    for &s in &volume.samples {
        match dtype {
            VolumeDtype::Uint8 => raw.push((s.clamp(0.0, 1.0) * 255.0).round() as u8),
            VolumeDtype::Uint16 => {
                raw.extend(((s.clamp(0.0, 1.0) * 65535.0).round() as u16).to_le_bytes())
            }
            VolumeDtype::Float32 => raw.extend((s as f32).to_le_bytes()),
        }
    }
    std::fs::write(&raw_path, raw).map_err(|e| Error::io(raw_path.display().to_string(), e))?;
    let header = format!(
        "dims = {} {} {}\ndtype = {}\nspacing = {} {} {}\ndata = {}\n",
        volume.dims[0],
        volume.dims[1],
        volume.dims[2],
        dtype.name(),
        volume.spacing.x,
        volume.spacing.y,
        volume.spacing.z,
        data_file
    );
    std::fs::write(header_path, header)
        .map_err(|e| Error::io(header_path.display().to_string(), e))
}
