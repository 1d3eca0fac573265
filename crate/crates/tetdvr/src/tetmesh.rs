//! Indexed tetrahedral mesh storage, adjacency, grid construction and
//! validity primitives.
//!
//! Attributes are stored struct-of-arrays (positions, colors, opacities in
//! separate dense arrays) so gradient buffers can be indexed in parallel with
//! the vertex arrays.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use glam::DVec3;

use crate::{Error, Result};

/// Per-vertex payload as a value type; storage inside [`TetMesh`] is
/// struct-of-arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub position: DVec3,
    /// Linear RGB. Unbounded during optimization, clamped on image output.
    pub color: DVec3,
    /// Extinction coefficient in 1/world-unit, >= 0.
    pub opacity: f64,
}

/// A triangular face of the mesh. Interior faces have two incident tets,
/// boundary faces one. `vertices` is wound outward for `tets[0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub vertices: [u32; 3],
    pub tets: [Option<u32>; 2],
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.tets[1].is_none()
    }
}

/// Axis-aligned box, used for grid construction and scene extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub fn new(min: DVec3, max: DVec3) -> Self {
        Aabb { min, max }
    }

    pub fn unit() -> Self {
        Aabb::new(DVec3::ZERO, DVec3::ONE)
    }

    pub fn extent(&self) -> DVec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().length()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn is_degenerate(&self) -> bool {
        let e = self.extent();
        !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0)
    }
}

/// Signed volume of a tet: one sixth of the triple product
/// `(p3 - p0) . ((p1 - p0) x (p2 - p0))`.
///
/// Positive for positively oriented tets, zero for coplanar points, negative
/// for inverted tets. Carries the 1/6 factor so the regularizer quality
/// measure evaluates to 1 on regular tets.
pub fn signed_volume(p0: DVec3, p1: DVec3, p2: DVec3, p3: DVec3) -> f64 {
    (p3 - p0).dot((p1 - p0).cross(p2 - p0)) / 6.0
}

/// Validity report produced by [`TetMesh::validate`]. Empty report means the
/// mesh satisfies all structural invariants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidityReport {
    /// Tets with signed volume <= 0.
    pub inverted_tets: Vec<u32>,
    /// Faces whose stored incidence disagrees with a recount from the tet
    /// array, or that are shared by more than two tets.
    pub nonconforming_faces: Vec<u32>,
    /// Vertices with non-finite position, color or opacity, or negative
    /// opacity.
    pub bad_attributes: Vec<u32>,
    /// Tets with repeated vertex indices or out-of-range indices.
    pub malformed_tets: Vec<u32>,
}

impl ValidityReport {
    pub fn is_empty(&self) -> bool {
        self.inverted_tets.is_empty()
            && self.nonconforming_faces.is_empty()
            && self.bad_attributes.is_empty()
            && self.malformed_tets.is_empty()
    }
}

/// Map from an undirected edge (sorted vertex pair) to the tets containing
/// it. Rebuilt on demand before subdivision.
pub type EdgeIndex = HashMap<(u32, u32), Vec<u32>>;

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Indexed tetrahedral mesh with per-vertex attributes and a derived global
/// face table.
///
/// The mesh is immutable during render passes; mutation (subdivision,
/// optimizer updates) happens between passes with a single writer.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub positions: Vec<DVec3>,
    pub colors: Vec<DVec3>,
    pub opacities: Vec<f64>,
    /// Vertex indices per tet, positively oriented for valid meshes.
    pub tets: Vec<[u32; 4]>,
    /// Global face table, derived from `tets`.
    pub faces: Vec<Face>,
    /// Face ids per tet, parallel to `tets`; entry k is the face opposite
    /// local vertex k.
    pub tet_faces: Vec<[u32; 4]>,
}

/// Local faces of tet `(v0,v1,v2,v3)`, wound outward for a positively
/// oriented tet. Entry k is the face opposite vertex k.
const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

impl TetMesh {
    /// Builds a mesh from raw vertex data and tet indices; the face table is
    /// derived here.
    pub fn from_parts(
        positions: Vec<DVec3>,
        colors: Vec<DVec3>,
        opacities: Vec<f64>,
        tets: Vec<[u32; 4]>,
    ) -> Result<Self> {
        if colors.len() != positions.len() || opacities.len() != positions.len() {
            return Err(Error::DimensionMismatch(format!(
                "attribute arrays disagree: {} positions, {} colors, {} opacities",
                positions.len(),
                colors.len(),
                opacities.len()
            )));
        }
        let n = positions.len() as u32;
        for (i, t) in tets.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::InvalidArgument(format!(
                    "tet {i} references vertex out of range"
                )));
            }
        }
        let mut mesh = TetMesh {
            positions,
            colors,
            opacities,
            tets,
            faces: Vec::new(),
            tet_faces: Vec::new(),
        };
        mesh.rebuild_faces();
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn vertex(&self, i: u32) -> Vertex {
        Vertex {
            position: self.positions[i as usize],
            color: self.colors[i as usize],
            opacity: self.opacities[i as usize],
        }
    }

    pub fn tet_positions(&self, t: u32) -> [DVec3; 4] {
        let v = self.tets[t as usize];
        [
            self.positions[v[0] as usize],
            self.positions[v[1] as usize],
            self.positions[v[2] as usize],
            self.positions[v[3] as usize],
        ]
    }

    pub fn tet_volume(&self, t: u32) -> f64 {
        let p = self.tet_positions(t);
        signed_volume(p[0], p[1], p[2], p[3])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len() as u32).map(|t| self.tet_volume(t)).sum()
    }

    pub fn bounding_box(&self) -> Aabb {
        let mut min = DVec3::splat(f64::INFINITY);
        let mut max = DVec3::splat(f64::NEG_INFINITY);
        for p in &self.positions {
            min = min.min(*p);
            max = max.max(*p);
        }
        Aabb { min, max }
    }

    /// Rebuilds the global face table from the tet array. Faces are keyed by
    /// their sorted vertex triple; winding comes from the first tet that
    /// claims the face.
    pub fn rebuild_faces(&mut self) {
        let mut lookup: HashMap<[u32; 3], u32> = HashMap::new();
        self.faces.clear();
        self.tet_faces.clear();
        self.tet_faces.reserve(self.tets.len());
        for (ti, tet) in self.tets.iter().enumerate() {
            let mut ids = [0u32; 4];
            for (k, local) in LOCAL_FACES.iter().enumerate() {
                let tri = [tet[local[0]], tet[local[1]], tet[local[2]]];
                let mut key = tri;
                key.sort_unstable();
                let fid = match lookup.get(&key) {
                    Some(&fid) => {
                        let face = &mut self.faces[fid as usize];
                        if face.tets[1].is_none() && face.tets[0] != Some(ti as u32) {
                            face.tets[1] = Some(ti as u32);
                        } else {
                            // More than two incident tets; keep the face and
                            // let validate() flag it.
                            face.tets[1] = Some(ti as u32);
                        }
                        fid
                    }
                    None => {
                        let fid = self.faces.len() as u32;
                        lookup.insert(key, fid);
                        self.faces.push(Face {
                            vertices: tri,
                            tets: [Some(ti as u32), None],
                        });
                        fid
                    }
                };
                ids[k] = fid;
            }
            self.tet_faces.push(ids);
        }
    }

    /// Checks structural invariants: positive volumes, face incidence
    /// consistency, finite attributes. Returns an empty report iff all hold.
    pub fn validate(&self) -> ValidityReport {
        let mut report = ValidityReport::default();
        let nv = self.num_vertices() as u32;
        for (i, tet) in self.tets.iter().enumerate() {
            let out_of_range = tet.iter().any(|&v| v >= nv);
            let repeated = (0..4).any(|a| (a + 1..4).any(|b| tet[a] == tet[b]));
            if out_of_range || repeated {
                report.malformed_tets.push(i as u32);
                continue;
            }
            if self.tet_volume(i as u32) <= 0.0 {
                report.inverted_tets.push(i as u32);
            }
        }
        for (i, p) in self.positions.iter().enumerate() {
            let c = self.colors[i];
            let o = self.opacities[i];
            if !p.is_finite() || !c.is_finite() || !o.is_finite() || o < 0.0 {
                report.bad_attributes.push(i as u32);
            }
        }
        // Recount incidences independently of the stored face table.
        let mut counted: HashMap<[u32; 3], Vec<u32>> = HashMap::new();
        for (ti, tet) in self.tets.iter().enumerate() {
            for local in &LOCAL_FACES {
                let mut key = [tet[local[0]], tet[local[1]], tet[local[2]]];
                key.sort_unstable();
                counted.entry(key).or_default().push(ti as u32);
            }
        }
        for (fid, face) in self.faces.iter().enumerate() {
            let mut key = face.vertices;
            key.sort_unstable();
            let distinct = key[0] != key[1] && key[1] != key[2];
            let recounted = counted.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let mut stored: Vec<u32> = face.tets.iter().flatten().copied().collect();
            stored.sort_unstable();
            let mut fresh = recounted.to_vec();
            fresh.sort_unstable();
            if !distinct || fresh.len() > 2 || stored != fresh {
                report.nonconforming_faces.push(fid as u32);
            }
        }
        report
    }

    /// Builds the undirected edge-to-tets map. Rebuilt lazily; subdivision is
    /// rare relative to render passes.
    pub fn build_edge_index(&self) -> EdgeIndex {
        let mut index: EdgeIndex = HashMap::new();
        for (ti, tet) in self.tets.iter().enumerate() {
            for a in 0..4 {
                for b in a + 1..4 {
                    index
                        .entry(edge_key(tet[a], tet[b]))
                        .or_default()
                        .push(ti as u32);
                }
            }
        }
        index
    }

    /// Tets incident to each vertex, in ascending tet order.
    pub fn vertex_tets(&self) -> Vec<Vec<u32>> {
        let mut incident = vec![Vec::new(); self.num_vertices()];
        for (ti, tet) in self.tets.iter().enumerate() {
            for &v in tet {
                incident[v as usize].push(ti as u32);
            }
        }
        incident
    }
}

/// Builds a conforming tet mesh tiling `bbox` with `dims` cells per axis,
/// six tets per cell split around the cell's main diagonal. The same split in
/// every cell keeps shared faces compatible across neighboring cells.
///
/// Vertices start with mid-gray color and zero opacity.
pub fn build_regular_grid(dims: [u32; 3], bbox: Aabb) -> Result<TetMesh> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "grid dims must be >= 1 per axis, got {dims:?}"
        )));
    }
    if bbox.is_degenerate() {
        return Err(Error::InvalidArgument(
            "grid bounding box is degenerate".into(),
        ));
    }
    let [nx, ny, nz] = dims;
    let (vx, vy, vz) = (nx + 1, ny + 1, nz + 1);
    let ext = bbox.extent();
    let mut positions = Vec::with_capacity((vx * vy * vz) as usize);
    for k in 0..vz {
        for j in 0..vy {
            for i in 0..vx {
                let f = DVec3::new(
                    i as f64 / nx as f64,
                    j as f64 / ny as f64,
                    k as f64 / nz as f64,
                );
                positions.push(bbox.min + f * ext);
            }
        }
    }
    let vid = |i: u32, j: u32, k: u32| -> u32 { i + j * vx + k * vx * vy };

    // Six path tets per cell: one per permutation of the axis order, walking
    // corner (0,0,0) -> (1,1,1). Odd permutations need a swap to stay
    // positively oriented.
    const PERMS: [([usize; 3], bool); 6] = [
        ([0, 1, 2], true),
        ([0, 2, 1], false),
        ([1, 0, 2], false),
        ([1, 2, 0], true),
        ([2, 0, 1], true),
        ([2, 1, 0], false),
    ];
    let mut tets = Vec::with_capacity((6 * nx * ny * nz) as usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let base = [i, j, k];
                for (perm, even) in &PERMS {
                    let mut corner = base;
                    let v0 = vid(corner[0], corner[1], corner[2]);
                    corner[perm[0]] += 1;
                    let va = vid(corner[0], corner[1], corner[2]);
                    corner[perm[1]] += 1;
                    let vb = vid(corner[0], corner[1], corner[2]);
                    corner[perm[2]] += 1;
                    let v7 = vid(corner[0], corner[1], corner[2]);
                    if *even {
                        tets.push([v0, va, vb, v7]);
                    } else {
                        tets.push([v0, vb, va, v7]);
                    }
                }
            }
        }
    }
    let n = positions.len();
    TetMesh::from_parts(positions, vec![DVec3::splat(0.5); n], vec![0.0; n], tets)
}

// ---------------------------------------------------------------------------
// Mesh file format
//
// Binary container: text header naming counts and section offsets, then
// little-endian sections `positions` (f64 x3 per vertex), `colors` (f64 x3),
// `opacities` (f64), `tets` (u32 x4). Offsets are relative to the first byte
// after the `end` line. A plain-text variant mirrors the layout for
// debugging.
// ---------------------------------------------------------------------------

const BINARY_MAGIC: &str = "tetmesh-binary 1";
const TEXT_MAGIC: &str = "tetmesh-text 1";

pub fn save_mesh(mesh: &TetMesh, path: &Path) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("txt") {
        save_mesh_text(mesh, path)
    } else {
        save_mesh_binary(mesh, path)
    }
}

pub fn save_mesh_binary(mesh: &TetMesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let nv = mesh.num_vertices();
    let nt = mesh.num_tets();
    let pos_bytes = nv * 24;
    let col_bytes = nv * 24;
    let opa_bytes = nv * 8;
    let tet_bytes = nt * 16;
    let mut header = String::new();
    header.push_str(BINARY_MAGIC);
    header.push('\n');
    header.push_str(&format!("vertices {nv}\n"));
    header.push_str(&format!("tets {nt}\n"));
    let mut off = 0usize;
    for (name, bytes) in [
        ("positions", pos_bytes),
        ("colors", col_bytes),
        ("opacities", opa_bytes),
        ("tets", tet_bytes),
    ] {
        header.push_str(&format!("section {name} {off} {bytes}\n"));
        off += bytes;
    }
    header.push_str("end\n");
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(header.as_bytes()).map_err(io_err)?;
    for p in &mesh.positions {
        for v in [p.x, p.y, p.z] {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    for c in &mesh.colors {
        for v in [c.x, c.y, c.z] {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    for o in &mesh.opacities {
        w.write_all(&o.to_le_bytes()).map_err(io_err)?;
    }
    for t in &mesh.tets {
        for v in t {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn save_mesh_text(mesh: &TetMesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "{TEXT_MAGIC}").map_err(io_err)?;
    writeln!(w, "vertices {}", mesh.num_vertices()).map_err(io_err)?;
    writeln!(w, "tets {}", mesh.num_tets()).map_err(io_err)?;
    for i in 0..mesh.num_vertices() {
        let p = mesh.positions[i];
        let c = mesh.colors[i];
        writeln!(
            w,
            "v {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            p.x, p.y, p.z, c.x, c.y, c.z, mesh.opacities[i]
        )
        .map_err(io_err)?;
    }
    for t in &mesh.tets {
        writeln!(w, "t {} {} {} {}", t[0], t[1], t[2], t[3]).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_mesh(path: &Path) -> Result<TetMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    match first.trim_end() {
        BINARY_MAGIC => load_mesh_binary(reader, path),
        TEXT_MAGIC => load_mesh_text(reader, path),
        other => Err(Error::parse(
            path.display().to_string(),
            format!("unknown mesh magic {other:?}"),
        )),
    }
}

fn parse_count(line: &str, key: &str, path: &Path) -> Result<usize> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::parse(path.display().to_string(), format!("expected `{key}` line")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::parse(path.display().to_string(), format!("bad `{key}` count")))
}

fn load_mesh_binary(mut reader: BufReader<std::fs::File>, path: &Path) -> Result<TetMesh> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(io_err)?;
    let nv = parse_count(&line, "vertices", path)?;
    line.clear();
    reader.read_line(&mut line).map_err(io_err)?;
    let nt = parse_count(&line, "tets", path)?;
    // Section lines are validated but layout is fixed; read until `end`.
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(Error::parse(path.display().to_string(), "missing end of header"));
        }
        let t = line.trim_end();
        if t == "end" {
            break;
        }
        if !t.starts_with("section ") {
            return Err(Error::parse(
                path.display().to_string(),
                format!("unexpected header line {t:?}"),
            ));
        }
    }
    let mut read_f64 = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let pos_raw = read_f64(nv * 3)?;
    let col_raw = read_f64(nv * 3)?;
    let opacities = read_f64(nv)?;
    let mut tet_buf = vec![0u8; nt * 16];
    reader
        .read_exact(&mut tet_buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let positions = pos_raw
        .chunks_exact(3)
        .map(|c| DVec3::new(c[0], c[1], c[2]))
        .collect();
    let colors = col_raw
        .chunks_exact(3)
        .map(|c| DVec3::new(c[0], c[1], c[2]))
        .collect();
    let tets = tet_buf
        .chunks_exact(16)
        .map(|c| {
            [
                u32::from_le_bytes(c[0..4].try_into().unwrap()),
                u32::from_le_bytes(c[4..8].try_into().unwrap()),
                u32::from_le_bytes(c[8..12].try_into().unwrap()),
                u32::from_le_bytes(c[12..16].try_into().unwrap()),
            ]
        })
        .collect();
    TetMesh::from_parts(positions, colors, opacities, tets)
}

fn load_mesh_text(reader: BufReader<std::fs::File>, path: &Path) -> Result<TetMesh> {
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut opacities = Vec::new();
    let mut tets = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        let fields: Vec<&str> = parts.collect();
        let bad = |msg: &str| Error::parse(path.display().to_string(), format!("line {}: {msg}", ln + 2));
        match tag {
            "vertices" | "tets" => {}
            "v" => {
                if fields.len() != 7 {
                    return Err(bad("vertex line needs 7 fields"));
                }
                let f: Vec<f64> = fields
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad("bad float")))
                    .collect::<Result<_>>()?;
                positions.push(DVec3::new(f[0], f[1], f[2]));
                colors.push(DVec3::new(f[3], f[4], f[5]));
                opacities.push(f[6]);
            }
            "t" => {
                if fields.len() != 4 {
                    return Err(bad("tet line needs 4 fields"));
                }
                let v: Vec<u32> = fields
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad("bad index")))
                    .collect::<Result<_>>()?;
                tets.push([v[0], v[1], v[2], v[3]]);
            }
            other => return Err(bad(&format!("unknown tag {other:?}"))),
        }
    }
    TetMesh::from_parts(positions, colors, opacities, tets)
}
