//! Unit-sphere ray sets, their convex-hull triangulation, and the layout of
//! control-point rays over that triangulation.
//!
//! All vectors are stored in `(z, y, x)` component order, matching the
//! volume layout used everywhere else in the crate.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

const DUPLICATE_TOL: f64 = 1e-12;
const PLANE_TOL: f64 = 1e-10;

/// How the vertex rays of a lattice are placed on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    /// Regular tetrahedron, octahedron or icosahedron (4, 6 or 12 rays).
    Canonical,
    /// Spherical Fibonacci lattice, any count >= 4.
    Fibonacci,
}

impl LatticeKind {
    /// Canonical when an exactly equidistant set exists for `rays`, Fibonacci otherwise.
    pub fn default_for(rays: usize) -> Self {
        if matches!(rays, 4 | 6 | 12) {
            LatticeKind::Canonical
        } else {
            LatticeKind::Fibonacci
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LatticeKind::Canonical => "canonical",
            LatticeKind::Fibonacci => "fibonacci",
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LatticeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(LatticeKind::Canonical),
            "fibonacci" => Ok(LatticeKind::Fibonacci),
            other => Err(Error::InvalidParameter(format!(
                "unknown lattice kind `{other}` (expected canonical or fibonacci)"
            ))),
        }
    }
}

/// A set of distinct unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDirectionSet {
    directions: Vec<Vec3>,
}

impl UnitDirectionSet {
    /// Normalizes every input vector and rejects zero vectors and duplicates.
    pub fn new(directions: Vec<Vec3>) -> Result<Self> {
        let mut out = Vec::with_capacity(directions.len());
        for (i, d) in directions.into_iter().enumerate() {
            let norm = d.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::DegenerateDirections(format!(
                    "direction {i} has zero or non-finite length"
                )));
            }
            out.push(d / norm);
        }
        for i in 0..out.len() {
            for j in (i + 1)..out.len() {
                if (out[i] - out[j]).norm() <= DUPLICATE_TOL {
                    return Err(Error::DegenerateDirections(format!(
                        "directions {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(Self { directions: out })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.directions
    }

    /// Divides each direction component-wise by `scale` and renormalizes.
    pub fn scaled(&self, scale: [f64; 3]) -> Result<Self> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "anisotropy components must be positive and finite, got {scale:?}"
            )));
        }
        let s = Vec3::new(scale[0], scale[1], scale[2]);
        Self::new(self.directions.iter().map(|d| d.component_div(&s)).collect())
    }
}

/// `n` directions from the spherical Fibonacci lattice.
///
/// Latitudes sit at `z_i = 1 - (2i + 1)/n` and longitudes advance by the
/// golden angle.
pub fn fibonacci_directions(n: usize) -> Result<UnitDirectionSet> {
    if n < 4 {
        return Err(Error::InsufficientVertices(n));
    }
    let golden_angle = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let dirs = (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            Vec3::new(z, r * phi.sin(), r * phi.cos())
        })
        .collect();
    UnitDirectionSet::new(dirs)
}

/// Vertices of the regular tetrahedron (4), octahedron (6) or icosahedron (12).
pub fn canonical_directions(n: usize) -> Result<UnitDirectionSet> {
    let dirs: Vec<Vec3> = match n {
        4 => vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ],
        6 => vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ],
        12 => {
            let phi = (1.0 + 5f64.sqrt()) / 2.0;
            let mut v = Vec::with_capacity(12);
            // cyclic permutations of (0, ±1, ±phi)
            for &(a, b) in &[(1.0, phi), (1.0, -phi), (-1.0, phi), (-1.0, -phi)] {
                v.push(Vec3::new(0.0, a, b));
            }
            for &(a, b) in &[(1.0, phi), (1.0, -phi), (-1.0, phi), (-1.0, -phi)] {
                v.push(Vec3::new(a, b, 0.0));
            }
            for &(a, b) in &[(1.0, phi), (1.0, -phi), (-1.0, phi), (-1.0, -phi)] {
                v.push(Vec3::new(b, 0.0, a));
            }
            v
        }
        other => return Err(Error::UnsupportedCanonical(other)),
    };
    UnitDirectionSet::new(dirs)
}

/// Closed triangulation of the sphere: the convex hull of a direction set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeshTopology {
    pub vertex_count: usize,
    /// Sorted `(lo, hi)` pairs.
    pub edges: Vec<[usize; 2]>,
    /// Outward-wound triples, lowest index first, sorted.
    pub triangles: Vec<[usize; 3]>,
}

impl MeshTopology {
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count as i64 - self.edges.len() as i64 + self.triangles.len() as i64
    }

    /// Index of the edge joining `a` and `b`, in either order.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }
}

/// Builds the convex-hull triangulation of `dirs`.
///
/// Every direction must end up as a hull vertex; coplanar, duplicate or
/// hemispherical inputs are rejected.
pub fn build_topology(dirs: &UnitDirectionSet) -> Result<MeshTopology> {
    let pts = dirs.as_slice();
    if pts.len() < 4 {
        return Err(Error::InsufficientVertices(pts.len()));
    }
    let faces = convex_hull(pts)?;

    let mut triangles: Vec<[usize; 3]> = faces
        .into_iter()
        .map(|[a, b, c]| {
            // rotate so the smallest index leads; rotation keeps the winding
            if a < b && a < c {
                [a, b, c]
            } else if b < a && b < c {
                [b, c, a]
            } else {
                [c, a, b]
            }
        })
        .collect();
    triangles.sort_unstable();

    let mut edge_faces: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    let mut directed = HashSet::new();
    for t in &triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if !directed.insert((a, b)) {
                return Err(Error::DegenerateDirections(
                    "hull is not an oriented 2-manifold".into(),
                ));
            }
            *edge_faces.entry([a.min(b), a.max(b)]).or_default() += 1;
        }
    }
    if edge_faces.values().any(|&c| c != 2) {
        return Err(Error::DegenerateDirections(
            "hull has an edge not shared by exactly two triangles".into(),
        ));
    }
    let edges: Vec<[usize; 2]> = edge_faces.into_keys().collect();

    let mut used = vec![false; pts.len()];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    if let Some(v) = used.iter().position(|u| !u) {
        return Err(Error::DegenerateDirections(format!(
            "direction {v} is not a vertex of the convex hull"
        )));
    }

    for t in &triangles {
        let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
        let normal = (b - a).cross(&(c - a));
        if normal.dot(&(a + b + c)) <= 0.0 {
            return Err(Error::DegenerateDirections(
                "directions do not surround the origin".into(),
            ));
        }
    }

    let topo = MeshTopology {
        vertex_count: pts.len(),
        edges,
        triangles,
    };
    debug_assert_eq!(topo.euler_characteristic(), 2);
    Ok(topo)
}

/// Incremental (beneath-beyond) hull. Returns outward-wound faces.
fn convex_hull(pts: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let n = pts.len();
    let degenerate = |msg: &str| Error::DegenerateDirections(msg.to_string());

    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| {
            let da = (pts[a] - pts[i0]).norm();
            let db = (pts[b] - pts[i0]).norm();
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .unwrap();
    if (pts[i1] - pts[i0]).norm() <= DUPLICATE_TOL {
        return Err(degenerate("all directions coincide"));
    }
    let axis = (pts[i1] - pts[i0]).normalize();
    let line_dist = |p: &Vec3| {
        let v = p - pts[i0];
        (v - axis * v.dot(&axis)).norm()
    };
    let i2 = (0..n)
        .filter(|&i| i != i0 && i != i1)
        .max_by(|&a, &b| {
            line_dist(&pts[a])
                .total_cmp(&line_dist(&pts[b]))
                .then(b.cmp(&a))
        })
        .unwrap();
    if line_dist(&pts[i2]) <= PLANE_TOL {
        return Err(degenerate("directions are collinear"));
    }
    let plane_n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let plane_dist = |p: &Vec3| plane_n.dot(&(p - pts[i0]));
    let i3 = (0..n)
        .filter(|&i| i != i0 && i != i1 && i != i2)
        .max_by(|&a, &b| {
            plane_dist(&pts[a])
                .abs()
                .total_cmp(&plane_dist(&pts[b]).abs())
                .then(b.cmp(&a))
        })
        .unwrap();
    if plane_dist(&pts[i3]).abs() <= PLANE_TOL {
        return Err(degenerate("directions are coplanar"));
    }

    let interior = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
    let orient = |f: [usize; 3]| -> [usize; 3] {
        let [a, b, c] = f;
        let normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        if normal.dot(&(interior - pts[a])) > 0.0 {
            [a, c, b]
        } else {
            [a, b, c]
        }
    };

    let mut faces: Vec<[usize; 3]> = vec![
        orient([i0, i1, i2]),
        orient([i0, i1, i3]),
        orient([i0, i2, i3]),
        orient([i1, i2, i3]),
    ];

    let above = |f: &[usize; 3], p: &Vec3| -> f64 {
        let [a, b, c] = *f;
        let normal = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let len = normal.norm();
        if len == 0.0 {
            return 0.0;
        }
        normal.dot(&(p - pts[a])) / len
    };

    for (i, p) in pts.iter().enumerate() {
        if i == i0 || i == i1 || i == i2 || i == i3 {
            continue;
        }
        let visible: Vec<bool> = faces.iter().map(|f| above(f, p) > PLANE_TOL).collect();
        if !visible.iter().any(|&v| v) {
            return Err(Error::DegenerateDirections(format!(
                "direction {i} is not a vertex of the convex hull"
            )));
        }
        let mut visible_edges = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                visible_edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut next = Vec::with_capacity(faces.len() + 4);
        let mut horizon = Vec::new();
        for (f, vis) in faces.iter().zip(&visible) {
            if *vis {
                for k in 0..3 {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    if !visible_edges.contains(&(b, a)) {
                        horizon.push((a, b));
                    }
                }
            } else {
                next.push(*f);
            }
        }
        horizon.sort_unstable();
        next.extend(horizon.into_iter().map(|(a, b)| [a, b, i]));
        faces = next;
    }
    Ok(faces)
}

/// Which mesh element a control ray belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum ControlRole {
    Vertex {
        vertex: usize,
    },
    /// The third-point of `edge` nearer to vertex `near`.
    Edge {
        edge: usize,
        near: usize,
        far: usize,
    },
    Interior {
        triangle: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlEntry {
    #[serde(flatten)]
    pub role: ControlRole,
    pub direction: [f64; 3],
}

impl ControlEntry {
    pub fn direction(&self) -> Vec3 {
        Vec3::from(self.direction)
    }
}

/// Control rays in the fixed order: vertices, then two entries per edge
/// (the one nearer the lower vertex index first), then one per triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlLayout {
    pub entries: Vec<ControlEntry>,
}

impl ControlLayout {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lays out control rays: vertex directions, chord third-points of each edge
/// and the centroid of each triangle, all renormalized.
pub fn control_layout(topo: &MeshTopology, dirs: &UnitDirectionSet) -> ControlLayout {
    let d = dirs.as_slice();
    assert_eq!(topo.vertex_count, d.len(), "topology built from another direction set");
    let mut entries =
        Vec::with_capacity(topo.vertex_count + 2 * topo.edges.len() + topo.triangles.len());
    let entry = |role, v: Vec3| {
        let u = v.normalize();
        ControlEntry {
            role,
            direction: [u[0], u[1], u[2]],
        }
    };
    for (i, v) in d.iter().enumerate() {
        entries.push(entry(ControlRole::Vertex { vertex: i }, *v));
    }
    for (e, &[lo, hi]) in topo.edges.iter().enumerate() {
        let near_lo = d[lo] * (2.0 / 3.0) + d[hi] * (1.0 / 3.0);
        let near_hi = d[lo] * (1.0 / 3.0) + d[hi] * (2.0 / 3.0);
        entries.push(entry(ControlRole::Edge { edge: e, near: lo, far: hi }, near_lo));
        entries.push(entry(ControlRole::Edge { edge: e, near: hi, far: lo }, near_hi));
    }
    for (t, &[a, b, c]) in topo.triangles.iter().enumerate() {
        entries.push(entry(ControlRole::Interior { triangle: t }, d[a] + d[b] + d[c]));
    }
    ControlLayout { entries }
}

/// A fully built ray lattice: directions, hull topology and control layout,
/// plus the per-triangle map from local Bezier control slots to layout entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    kind: LatticeKind,
    anisotropy: [f64; 3],
    directions: UnitDirectionSet,
    topology: MeshTopology,
    layout: ControlLayout,
    triangle_entries: Vec<[usize; 10]>,
}

impl Lattice {
    pub fn new(kind: LatticeKind, rays: usize) -> Result<Self> {
        Self::with_anisotropy(kind, rays, [1.0, 1.0, 1.0])
    }

    /// Builds a lattice whose base directions are divided by `anisotropy`
    /// (per `(z, y, x)` axis) and renormalized before the hull is taken.
    pub fn with_anisotropy(kind: LatticeKind, rays: usize, anisotropy: [f64; 3]) -> Result<Self> {
        let base = match kind {
            LatticeKind::Canonical => canonical_directions(rays)?,
            LatticeKind::Fibonacci => fibonacci_directions(rays)?,
        };
        let directions = if anisotropy == [1.0, 1.0, 1.0] {
            base
        } else {
            base.scaled(anisotropy)?
        };
        let topology = build_topology(&directions)?;
        let layout = control_layout(&topology, &directions);
        let triangle_entries = triangle_entries(&topology);
        Ok(Self {
            kind,
            anisotropy,
            directions,
            topology,
            layout,
            triangle_entries,
        })
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn anisotropy(&self) -> [f64; 3] {
        self.anisotropy
    }

    pub fn rays(&self) -> usize {
        self.directions.len()
    }

    pub fn directions(&self) -> &UnitDirectionSet {
        &self.directions
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn layout(&self) -> &ControlLayout {
        &self.layout
    }

    /// Number of free radial parameters, `V + 2E + T`.
    pub fn control_count(&self) -> usize {
        self.layout.len()
    }

    /// Layout entry for each of the ten Bezier slots of triangle `t`, in the
    /// order b300, b030, b003, b210, b201, b120, b021, b102, b012, b111.
    pub fn triangle_entries(&self, t: usize) -> &[usize; 10] {
        &self.triangle_entries[t]
    }

    pub fn entry_direction(&self, entry: usize) -> Vec3 {
        self.layout.entries[entry].direction()
    }

    /// Range of layout indices holding edge entries.
    pub fn edge_entries(&self) -> std::ops::Range<usize> {
        let v = self.topology.vertex_count;
        v..v + 2 * self.topology.edges.len()
    }

    /// Range of layout indices holding interior entries.
    pub fn interior_entries(&self) -> std::ops::Range<usize> {
        let end = self.layout.len();
        end - self.topology.triangles.len()..end
    }
}

fn triangle_entries(topo: &MeshTopology) -> Vec<[usize; 10]> {
    let v = topo.vertex_count;
    let e = topo.edges.len();
    // entry for the third-point of edge {p, q} nearer to p
    let third = |p: usize, q: usize| {
        let idx = topo.edge_index(p, q).expect("triangle edge missing from topology");
        v + 2 * idx + usize::from(p > q)
    };
    topo.triangles
        .iter()
        .enumerate()
        .map(|(t, &[a, b, c])| {
            [
                a,
                b,
                c,
                third(a, b),
                third(a, c),
                third(b, a),
                third(b, c),
                third(c, a),
                third(c, b),
                v + 2 * e + t,
            ]
        })
        .collect()
}
