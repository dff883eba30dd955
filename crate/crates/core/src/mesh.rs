//! Flat triangle meshes: watertightness audit, ray casting and OBJ export.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::Vec3;

const BARY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Edge statistics of a mesh. A closed, consistently oriented mesh has no
/// boundary, non-manifold or flipped edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeAudit {
    pub edges: usize,
    pub boundary_edges: usize,
    pub nonmanifold_edges: usize,
    pub misoriented_edges: usize,
}

impl EdgeAudit {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0
    }

    pub fn is_consistently_oriented(&self) -> bool {
        self.is_watertight() && self.misoriented_edges == 0
    }
}

impl TriangleMesh {
    pub fn audit(&self) -> EdgeAudit {
        // undirected edge -> (uses as (lo, hi), uses as (hi, lo))
        let mut uses: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let entry = uses.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
            }
        }
        let mut audit = EdgeAudit {
            edges: uses.len(),
            ..Default::default()
        };
        for &(fwd, back) in uses.values() {
            match fwd + back {
                1 => audit.boundary_edges += 1,
                2 => {
                    if fwd != 1 {
                        audit.misoriented_edges += 1;
                    }
                }
                _ => audit.nonmanifold_edges += 1,
            }
        }
        audit
    }

    pub fn is_watertight(&self) -> bool {
        self.audit().is_watertight()
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(v), hi.sup(v))
        }))
    }

    /// Distance along `dir` (unit) from `origin` to the farthest face hit,
    /// or 0 when the ray misses every face.
    pub fn farthest_hit(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        self.farthest_hit_among(origin, dir, 0..self.faces.len())
    }

    fn farthest_hit_among(
        &self,
        origin: &Vec3,
        dir: &Vec3,
        faces: impl IntoIterator<Item = usize>,
    ) -> f64 {
        let mut best = 0.0f64;
        for f in faces {
            let [a, b, c] = self.faces[f];
            if let Some(t) =
                ray_triangle(origin, dir, &self.vertices[a], &self.vertices[b], &self.vertices[c])
            {
                best = best.max(t);
            }
        }
        best
    }

    /// Writes the mesh as ASCII Wavefront OBJ.
    ///
    /// Internal coordinates are `(z, y, x)`; they are written as `v x y z`.
    /// Reversing the axes mirrors the frame, so face winding is reversed too
    /// and faces stay counter-clockwise seen from outside.
    pub fn write_obj<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# star-convex instance mesh")?;
        writeln!(
            w,
            "# vertices stored internally as (z, y, x); written as x y z with winding reversed to stay outward"
        )?;
        writeln!(w, "# {} vertices, {} faces", self.vertices.len(), self.faces.len())?;
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v[2], v[1], v[0])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[2] + 1, f[1] + 1)?;
        }
        Ok(())
    }
}

/// Two-sided Moller-Trumbore intersection; returns the ray parameter of the
/// hit, if any, with `t >= 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    let scale = e1.norm() * e2.norm();
    if scale == 0.0 || det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(-BARY_SLACK..=1.0 + BARY_SLACK).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -BARY_SLACK || u + v > 1.0 + BARY_SLACK {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t < -1e-12 {
        return None;
    }
    Some(t.max(0.0))
}

/// Cube-map bucketing of mesh faces by the directions under which they are
/// seen from a fixed origin. Lookups return the same farthest hit as
/// [`TriangleMesh::farthest_hit`] while testing only nearby faces.
pub struct RadialIndex<'a> {
    mesh: &'a TriangleMesh,
    origin: Vec3,
    res: usize,
    cells: Vec<Vec<u32>>,
    everywhere: Vec<u32>,
}

impl<'a> RadialIndex<'a> {
    pub fn new(mesh: &'a TriangleMesh, origin: Vec3) -> Self {
        let res = ((mesh.faces.len() as f64 / 6.0).sqrt().ceil() as usize).clamp(1, 24);
        let cell_cones: Vec<(Vec3, f64)> = (0..6 * res * res).map(|c| cell_cone(c, res)).collect();
        let mut cells = vec![Vec::new(); cell_cones.len()];
        let mut everywhere = Vec::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            match face_cone(mesh, f, &origin) {
                Some((axis, half)) => {
                    for (ci, (c_axis, c_half)) in cell_cones.iter().enumerate() {
                        let gap = axis.dot(c_axis).clamp(-1.0, 1.0).acos();
                        if gap <= half + c_half + 1e-9 {
                            cells[ci].push(fi as u32);
                        }
                    }
                }
                None => everywhere.push(fi as u32),
            }
        }
        Self {
            mesh,
            origin,
            res,
            cells,
            everywhere,
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn farthest_hit(&self, dir: &Vec3) -> f64 {
        let cell = &self.cells[cube_cell(dir, self.res)];
        let faces = cell
            .iter()
            .chain(&self.everywhere)
            .map(|&f| f as usize);
        self.mesh.farthest_hit_among(&self.origin, dir, faces)
    }
}

/// Bounding cone (axis, half-angle) of a face seen from `origin`, or `None`
/// when no cone narrower than a hemisphere exists.
fn face_cone(mesh: &TriangleMesh, f: &[usize; 3], origin: &Vec3) -> Option<(Vec3, f64)> {
    let mut units = [Vec3::zeros(); 3];
    for (u, &vi) in units.iter_mut().zip(f) {
        let d = mesh.vertices[vi] - origin;
        let n = d.norm();
        if n < 1e-12 {
            return None;
        }
        *u = d / n;
    }
    let sum = units[0] + units[1] + units[2];
    if sum.norm() < 1e-9 {
        return None;
    }
    let axis = sum.normalize();
    let half = units
        .iter()
        .map(|u| axis.dot(u).clamp(-1.0, 1.0).acos())
        .fold(0.0, f64::max);
    if half > 1.4 {
        return None;
    }
    Some((axis, half))
}

fn cube_cell(dir: &Vec3, res: usize) -> usize {
    let abs = dir.abs();
    let ax = if abs[0] >= abs[1] && abs[0] >= abs[2] {
        0
    } else if abs[1] >= abs[2] {
        1
    } else {
        2
    };
    let face = 2 * ax + usize::from(dir[ax] < 0.0);
    let m = abs[ax];
    let to_cell = |c: f64| (((c / m + 1.0) * 0.5 * res as f64).floor() as isize).clamp(0, res as isize - 1) as usize;
    let iu = to_cell(dir[(ax + 1) % 3]);
    let iv = to_cell(dir[(ax + 2) % 3]);
    (face * res + iu) * res + iv
}

fn cell_cone(cell: usize, res: usize) -> (Vec3, f64) {
    let iv = cell % res;
    let iu = (cell / res) % res;
    let face = cell / (res * res);
    let ax = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let point = |u: f64, v: f64| {
        let mut p = Vec3::zeros();
        p[ax] = sign;
        p[(ax + 1) % 3] = u;
        p[(ax + 2) % 3] = v;
        p.normalize()
    };
    let coord = |i: f64| 2.0 * i / res as f64 - 1.0;
    let (u0, u1) = (coord(iu as f64), coord(iu as f64 + 1.0));
    let (v0, v1) = (coord(iv as f64), coord(iv as f64 + 1.0));
    let center = point((u0 + u1) / 2.0, (v0 + v1) / 2.0);
    let half = [(u0, v0), (u0, v1), (u1, v0), (u1, v1)]
        .iter()
        .map(|&(u, v)| center.dot(&point(u, v)).clamp(-1.0, 1.0).acos())
        .fold(0.0, f64::max);
    (center, half)
}
