//! Gradient-driven conforming refinement: split all edges incident to
//! selected vertices, cut each incident tet into an apex tet plus a
//! truncated-pyramid prism, and tessellate the prisms into tets.
//!
//! Each prism quad face is split along one of its two diagonals, classified
//! as a falling (F) or rising (R) edge. A valid assignment never uses FFF or
//! RRR within a prism, and the two prisms sharing a quad must use one F and
//! one R, which selects the same geometric diagonal on both sides and keeps
//! the mesh conforming.

use std::collections::{HashMap, HashSet};

use glam::DVec3;

use crate::backward::GradientBuffer;
use crate::tetmesh::{edge_key, TetMesh};
use crate::{Error, Result};

/// Falling / rising diagonal orientation of a prism quad face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fr {
    F,
    R,
}

impl Fr {
    pub fn flip(self) -> Fr {
        match self {
            Fr::F => Fr::R,
            Fr::R => Fr::F,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Fr::F => 'F',
            Fr::R => 'R',
        }
    }
}

pub fn pattern_string(p: [Fr; 3]) -> String {
    p.iter().map(|f| f.as_char()).collect()
}

pub fn parse_pattern(s: &str) -> Result<[Fr; 3]> {
    let chars: Vec<Fr> = s
        .chars()
        .map(|c| match c {
            'F' => Ok(Fr::F),
            'R' => Ok(Fr::R),
            other => Err(Error::InvalidArgument(format!(
                "bad flip pattern character {other:?}"
            ))),
        })
        .collect::<Result<_>>()?;
    chars
        .try_into()
        .map_err(|_| Error::InvalidArgument(format!("flip pattern {s:?} must have 3 letters")))
}

/// Tessellation lookup: local tet index quadruples per split pattern. Prism
/// vertices 0..2 form one triangle, 3..5 the other, vertex k above k+3; quad
/// k lies between bottom edge (k, k+1 mod 3) and top edge (k+3, (k+1)+3).
const SPLIT_LOOKUP: [([Fr; 3], [[usize; 4]; 3]); 6] = [
    ([Fr::F, Fr::R, Fr::R], [[0, 1, 3, 2], [3, 4, 5, 1], [1, 2, 5, 3]]),
    ([Fr::R, Fr::F, Fr::R], [[0, 1, 4, 2], [3, 4, 5, 2], [0, 2, 4, 3]]),
    ([Fr::F, Fr::F, Fr::R], [[0, 1, 3, 2], [3, 4, 5, 2], [1, 2, 4, 3]]),
    ([Fr::R, Fr::R, Fr::F], [[0, 1, 5, 2], [3, 4, 5, 0], [0, 1, 4, 5]]),
    ([Fr::F, Fr::R, Fr::F], [[0, 1, 5, 2], [3, 4, 5, 1], [0, 1, 3, 5]]),
    ([Fr::R, Fr::F, Fr::F], [[0, 1, 4, 2], [3, 4, 5, 0], [0, 2, 4, 5]]),
];

/// Splits a triangular prism into exactly three tets using the lookup table.
/// `verts` are the six prism vertex ids in the convention above.
pub fn tessellate_prism(verts: [u32; 6], pattern: [Fr; 3]) -> Result<[[u32; 4]; 3]> {
    if pattern[0] == pattern[1] && pattern[1] == pattern[2] {
        return Err(Error::InvalidArgument(format!(
            "prism split pattern {} is not allowed",
            pattern_string(pattern)
        )));
    }
    let rows = SPLIT_LOOKUP
        .iter()
        .find(|(p, _)| *p == pattern)
        .map(|(_, rows)| rows)
        .expect("all six mixed patterns are in the table");
    Ok(rows.map(|row| row.map(|i| verts[i])))
}

/// Vertices to split around plus the edge split parameter, measured from the
/// selected vertex toward each edge's far end.
#[derive(Debug, Clone)]
pub struct SplitSelection {
    pub vertices: Vec<u32>,
    pub param: f64,
}

/// Picks the `ceil(fraction * N)` vertices with the largest accumulated
/// gradient magnitudes; ties break toward lower vertex index.
pub fn select_split_vertices(abs_grads: &[f64], fraction: f64) -> Result<SplitSelection> {
    if abs_grads.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot select split vertices from an empty gradient buffer".into(),
        ));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1], got {fraction}"
        )));
    }
    let count = ((fraction * abs_grads.len() as f64).ceil() as usize).min(abs_grads.len());
    let mut order: Vec<u32> = (0..abs_grads.len() as u32).collect();
    order.sort_by(|&a, &b| {
        abs_grads[b as usize]
            .total_cmp(&abs_grads[a as usize])
            .then(a.cmp(&b))
    });
    order.truncate(count);
    Ok(SplitSelection {
        vertices: order,
        param: 0.5,
    })
}

/// Flip-orientation constraint problem over prism quad slots. Slots are
/// `(prism, k)` with k in 0..3; `links` couple the two sides of shared
/// quads.
#[derive(Debug, Clone, Default)]
pub struct PrismCspGraph {
    pub num_prisms: usize,
    pub links: Vec<((usize, u8), (usize, u8))>,
}

impl PrismCspGraph {
    fn slot(&self, (p, k): (usize, u8)) -> usize {
        p * 3 + k as usize
    }
}

struct CspState {
    assigned: Vec<Option<Fr>>,
    reason: Vec<Option<usize>>,
    twin: Vec<Option<usize>>,
}

impl CspState {
    fn conflict_prisms(&self, a: usize, b: usize) -> Vec<usize> {
        let mut prisms = HashSet::new();
        for start in [a, b] {
            let mut cur = Some(start);
            while let Some(s) = cur {
                prisms.insert(s / 3);
                cur = self.reason[s];
            }
        }
        let mut out: Vec<usize> = prisms.into_iter().collect();
        out.sort_unstable();
        out
    }

    /// Assigns `slot = value` and propagates twin complements and the
    /// not-all-equal prism rule. Returns the conflicting prisms on failure;
    /// `trail` records assignments for backtracking.
    fn propagate(
        &mut self,
        slot: usize,
        value: Fr,
        trail: &mut Vec<usize>,
    ) -> std::result::Result<(), Vec<usize>> {
        let mut queue = vec![(slot, value, None::<usize>)];
        while let Some((s, v, why)) = queue.pop() {
            match self.assigned[s] {
                Some(existing) if existing == v => continue,
                Some(_) => {
                    return Err(self.conflict_prisms(s, why.unwrap_or(s)));
                }
                None => {}
            }
            self.assigned[s] = Some(v);
            self.reason[s] = why;
            trail.push(s);
            if let Some(t) = self.twin[s] {
                queue.push((t, v.flip(), Some(s)));
            }
            // If two slots of the prism now share a value, the third must
            // differ.
            let p = s / 3;
            let slots = [p * 3, p * 3 + 1, p * 3 + 2];
            let vals: Vec<Option<Fr>> = slots.iter().map(|&i| self.assigned[i]).collect();
            if let (Some(a), Some(b), Some(c)) = (vals[0], vals[1], vals[2]) {
                if a == b && b == c {
                    return Err(self.conflict_prisms(s, why.unwrap_or(s)));
                }
            } else {
                for i in 0..3 {
                    if vals[i].is_none() {
                        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                        if let (Some(a), Some(b)) = (vals[j], vals[k]) {
                            if a == b {
                                queue.push((slots[i], a.flip(), Some(s)));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn undo(&mut self, trail: &[usize]) {
        for &s in trail {
            self.assigned[s] = None;
            self.reason[s] = None;
        }
    }
}

/// Solves the flip CSP by constraint propagation with depth-first
/// backtracking. Deterministic: slots are decided in index order; the first
/// slot decided in a prism prefers F, later free slots prefer R. Returns an
/// assignment satisfying both constraints or the conflicting prism set.
pub fn solve_flip_csp(graph: &PrismCspGraph) -> Result<Vec<[Fr; 3]>> {
    solve_flip_csp_seeded(graph, Fr::F)
}

fn solve_flip_csp_seeded(graph: &PrismCspGraph, first_pref: Fr) -> Result<Vec<[Fr; 3]>> {
    let n = graph.num_prisms * 3;
    let mut twin = vec![None; n];
    for (a, b) in &graph.links {
        let (sa, sb) = (graph.slot(*a), graph.slot(*b));
        if sa == sb {
            return Err(Error::Unsatisfiable { cycle: vec![a.0] });
        }
        twin[sa] = Some(sb);
        twin[sb] = Some(sa);
    }
    let mut state = CspState {
        assigned: vec![None; n],
        reason: vec![None; n],
        twin,
    };

    fn dfs(
        state: &mut CspState,
        slot: usize,
        n: usize,
        first_pref: Fr,
    ) -> std::result::Result<(), Vec<usize>> {
        let mut s = slot;
        while s < n && state.assigned[s].is_some() {
            s += 1;
        }
        if s >= n {
            return Ok(());
        }
        let p = s / 3;
        let prism_untouched = (0..3).all(|k| state.assigned[p * 3 + k].is_none());
        let preferred = if prism_untouched { first_pref } else { first_pref.flip() };
        let mut last_conflict = Vec::new();
        for value in [preferred, preferred.flip()] {
            let mut trail = Vec::new();
            match state.propagate(s, value, &mut trail) {
                Ok(()) => match dfs(state, s + 1, n, first_pref) {
                    Ok(()) => return Ok(()),
                    Err(c) => {
                        state.undo(&trail);
                        last_conflict = c;
                    }
                },
                Err(c) => {
                    state.undo(&trail);
                    last_conflict = c;
                }
            }
        }
        Err(last_conflict)
    }

    match dfs(&mut state, 0, n, first_pref) {
        Ok(()) => Ok((0..graph.num_prisms)
            .map(|p| {
                [
                    state.assigned[p * 3].unwrap(),
                    state.assigned[p * 3 + 1].unwrap(),
                    state.assigned[p * 3 + 2].unwrap(),
                ]
            })
            .collect()),
        Err(cycle) => Err(Error::Unsatisfiable { cycle }),
    }
}

/// Checks an assignment against both CSP constraints.
pub fn assignment_satisfies(graph: &PrismCspGraph, assignment: &[[Fr; 3]]) -> bool {
    if assignment.len() != graph.num_prisms {
        return false;
    }
    for p in assignment {
        if p[0] == p[1] && p[1] == p[2] {
            return false;
        }
    }
    for (a, b) in &graph.links {
        if assignment[a.0][a.1 as usize] == assignment[b.0][b.1 as usize] {
            return false;
        }
    }
    true
}

/// Text dump of the dual graph and its solution, one prism per line plus the
/// shared-quad links.
pub fn dump_csp(graph: &PrismCspGraph, assignment: &[[Fr; 3]]) -> String {
    let mut out = String::new();
    for (p, pattern) in assignment.iter().enumerate() {
        out.push_str(&format!("prism {p}: {}\n", pattern_string(*pattern)));
    }
    for ((pa, ka), (pb, kb)) in &graph.links {
        out.push_str(&format!("link {pa}.{ka} -- {pb}.{kb}\n"));
    }
    out
}

/// One truncated-pyramid prism produced by a vertex split.
#[derive(Debug, Clone, Copy)]
pub struct Prism {
    /// (b, c, d, b', c', d'): original triangle then split-edge vertices.
    pub verts: [u32; 6],
    pub source_tet: u32,
}

/// Result of splitting around a set of vertices, before prism tessellation.
pub struct SplitRegion {
    pub new_vertices: Vec<(DVec3, DVec3, f64)>,
    pub apex_tets: Vec<[u32; 4]>,
    pub prisms: Vec<Prism>,
    pub graph: PrismCspGraph,
    pub replaced_tets: HashSet<u32>,
    /// Midpoint vertex id per split edge.
    pub edge_vertices: HashMap<(u32, u32), u32>,
}

impl SplitRegion {
    fn new() -> Self {
        SplitRegion {
            new_vertices: Vec::new(),
            apex_tets: Vec::new(),
            prisms: Vec::new(),
            graph: PrismCspGraph::default(),
            replaced_tets: HashSet::new(),
            edge_vertices: HashMap::new(),
        }
    }
}

/// Splits all edges incident to vertex `a`: each incident tet is replaced by
/// an apex tet (similar to the original, scaled by the split parameter) and
/// a prism queued in the CSP graph. New vertices carry linearly interpolated
/// attributes; edges shared between incident tets split once.
pub fn split_around_vertex(
    mesh: &TetMesh,
    a: u32,
    param: f64,
    incident: &[u32],
    region: &mut SplitRegion,
) -> Result<()> {
    if !(param > 0.0 && param < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split parameter must be in (0, 1), got {param}"
        )));
    }
    let base_id = mesh.num_vertices() as u32;
    let mut quad_slots: HashMap<(u32, u32, u32), (usize, u8)> = HashMap::new();
    for &tet_id in incident {
        let tet = mesh.tets[tet_id as usize];
        let local = tet.iter().position(|&v| v == a).expect("tet not incident");
        let mut rest: Vec<u32> = tet.iter().copied().filter(|&v| v != a).collect();
        if local % 2 == 1 {
            rest.swap(1, 2);
        }
        let (b, c, d) = (rest[0], rest[1], rest[2]);
        let mut midpoint = |other: u32| -> u32 {
            let key = edge_key(a, other);
            *region.edge_vertices.entry(key).or_insert_with(|| {
                let id = base_id + region.new_vertices.len() as u32;
                let lerp3 = |x: DVec3, y: DVec3| x + (y - x) * param;
                region.new_vertices.push((
                    lerp3(
                        mesh.positions[a as usize],
                        mesh.positions[other as usize],
                    ),
                    lerp3(mesh.colors[a as usize], mesh.colors[other as usize]),
                    mesh.opacities[a as usize]
                        + (mesh.opacities[other as usize] - mesh.opacities[a as usize]) * param,
                ));
                id
            })
        };
        let (bm, cm, dm) = (midpoint(b), midpoint(c), midpoint(d));
        region.replaced_tets.insert(tet_id);
        region.apex_tets.push([a, bm, cm, dm]);
        let prism_idx = region.prisms.len();
        region.prisms.push(Prism {
            verts: [b, c, d, bm, cm, dm],
            source_tet: tet_id,
        });
        region.graph.num_prisms += 1;
        // Quad k sits on the original face (a, bottom_k, bottom_{k+1}).
        let bottom = [b, c, d];
        for k in 0..3u8 {
            let (x, y) = (bottom[k as usize], bottom[(k as usize + 1) % 3]);
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            match quad_slots.insert((a, lo, hi), (prism_idx, k)) {
                None => {}
                Some(other) => {
                    region.graph.links.push((other, (prism_idx, k)));
                }
            }
        }
    }
    Ok(())
}

/// Gradient-driven refinement: selects high-gradient vertices, splits their
/// neighborhoods, solves the flip CSP and rebuilds the mesh. Conformity and
/// total volume are preserved; the caller's gradient buffers are invalidated
/// by the new vertex count.
///
/// Selected vertices adjacent to an already-accepted vertex are deferred to
/// a later refinement round: splitting both ends of one edge in the same
/// pass cannot be expressed with apex-plus-prism cuts. Works on a copy and
/// swaps on success, so a constraint failure leaves the input untouched.
pub fn refine(mesh: &TetMesh, grads: &GradientBuffer, fraction: f64) -> Result<TetMesh> {
    if fraction == 0.0 {
        return Ok(mesh.clone());
    }
    let selection = select_split_vertices(&grads.abs_color, fraction)?;
    refine_with_selection(mesh, &selection)
}

/// Builds the split region for a selection: filters the selected vertices to
/// an independent set (ascending index; later conflicting vertices wait for
/// the next refinement round) and splits around each accepted vertex.
pub fn build_split_region(mesh: &TetMesh, selection: &SplitSelection) -> Result<SplitRegion> {
    let vertex_tets = mesh.vertex_tets();
    let mut chosen: Vec<u32> = selection.vertices.clone();
    chosen.sort_unstable();
    let mut accepted: Vec<u32> = Vec::new();
    let mut blocked: HashSet<u32> = HashSet::new();
    for v in chosen {
        if blocked.contains(&v) {
            continue;
        }
        accepted.push(v);
        for &t in &vertex_tets[v as usize] {
            for &w in &mesh.tets[t as usize] {
                blocked.insert(w);
            }
        }
    }
    let mut region = SplitRegion::new();
    for &a in &accepted {
        let incident = &vertex_tets[a as usize];
        if incident.is_empty() {
            continue;
        }
        split_around_vertex(mesh, a, selection.param, incident, &mut region)?;
    }
    Ok(region)
}

pub fn refine_with_selection(mesh: &TetMesh, selection: &SplitSelection) -> Result<TetMesh> {
    let region = build_split_region(mesh, selection)?;
    if region.prisms.is_empty() {
        return Ok(mesh.clone());
    }
    let assignment = match solve_flip_csp(&region.graph) {
        Ok(a) => a,
        // Re-seed propagation with the opposite preference before giving up.
        Err(_) => solve_flip_csp_seeded(&region.graph, Fr::R).map_err(|e| {
            Error::RefineAborted(format!("flip constraints unsatisfiable: {e}"))
        })?,
    };
    let mut positions = mesh.positions.clone();
    let mut colors = mesh.colors.clone();
    let mut opacities = mesh.opacities.clone();
    for (p, c, o) in &region.new_vertices {
        positions.push(*p);
        colors.push(*c);
        opacities.push(*o);
    }
    let mut tets = Vec::with_capacity(mesh.num_tets() + region.prisms.len() * 4);
    for (ti, tet) in mesh.tets.iter().enumerate() {
        if !region.replaced_tets.contains(&(ti as u32)) {
            tets.push(*tet);
        }
    }
    tets.extend_from_slice(&region.apex_tets);
    for (prism, pattern) in region.prisms.iter().zip(&assignment) {
        tets.extend_from_slice(&tessellate_prism(prism.verts, *pattern)?);
    }
    TetMesh::from_parts(positions, colors, opacities, tets)
}
