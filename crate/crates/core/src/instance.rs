//! Instance shapes: the curved control-net representation and the flat
//! polyhedral baseline, with surface sampling, meshing and ray queries.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::{grid_indices, Barycentric, BezierTriangle};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeKind};
use crate::mesh::TriangleMesh;
use crate::Vec3;

/// Points sampled on a closed patch mesh, one per distinct mesh location.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSampleSet {
    pub points: Vec<Vec3>,
    /// Triangle and barycentric coordinate each point was first produced from.
    pub provenance: Vec<(usize, Barycentric)>,
}

impl SurfaceSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Mesh-wide identity of a grid sample, so points on shared vertices and
/// edges are produced once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum SampleKey {
    Vertex(usize),
    Edge { lo: usize, hi: usize, step: usize },
    Face { triangle: usize, i: usize, j: usize },
}

fn sample_key(tri: &[usize; 3], t: usize, [i, j, k]: [usize; 3], m: usize) -> SampleKey {
    let [a, b, c] = *tri;
    let edge = |p: usize, q: usize, steps_from_p: usize| {
        if p < q {
            SampleKey::Edge { lo: p, hi: q, step: steps_from_p }
        } else {
            SampleKey::Edge { lo: q, hi: p, step: m - steps_from_p }
        }
    };
    if i == m {
        SampleKey::Vertex(a)
    } else if j == m {
        SampleKey::Vertex(b)
    } else if k == m {
        SampleKey::Vertex(c)
    } else if k == 0 {
        edge(a, b, j)
    } else if i == 0 {
        edge(b, c, k)
    } else if j == 0 {
        edge(c, a, i)
    } else {
        SampleKey::Face { triangle: t, i, j }
    }
}

/// Position of grid point `(i, j, _)` in [`grid_indices`] order.
fn grid_position(i: usize, j: usize, m: usize) -> usize {
    (m - i) * (m - i + 1) / 2 + (m - i - j)
}

struct GridSampling {
    samples: SurfaceSampleSet,
    /// Global sample id of every grid point of every triangle.
    global: Vec<Vec<usize>>,
}

fn sample_patches(patches: &[BezierTriangle], triangles: &[[usize; 3]], level: u32) -> GridSampling {
    let m = 1usize << level;
    let grid = grid_indices(level);
    let evaluated: Vec<Vec<(Barycentric, Vec3)>> =
        patches.par_iter().map(|p| p.sample_grid(level)).collect();

    let mut ids: HashMap<SampleKey, usize> = HashMap::new();
    let mut points = Vec::new();
    let mut provenance = Vec::new();
    let mut global = Vec::with_capacity(triangles.len());
    for (t, (tri, samples)) in triangles.iter().zip(&evaluated).enumerate() {
        let mut row = Vec::with_capacity(grid.len());
        for (g, (bc, p)) in grid.iter().zip(samples) {
            let key = sample_key(tri, t, *g, m);
            let id = *ids.entry(key).or_insert_with(|| {
                points.push(*p);
                provenance.push((t, *bc));
                points.len() - 1
            });
            row.push(id);
        }
        global.push(row);
    }
    GridSampling {
        samples: SurfaceSampleSet { points, provenance },
        global,
    }
}

/// A closed surface made of one cubic patch per lattice triangle, star-shaped
/// about `center`.
pub trait StarSurface: Sync {
    fn lattice(&self) -> &Lattice;

    fn center(&self) -> Vec3;

    /// Patch over lattice triangle `t`, wound outward.
    fn patch(&self, t: usize) -> BezierTriangle;

    fn patches(&self) -> Vec<BezierTriangle> {
        (0..self.lattice().topology().triangles.len())
            .map(|t| self.patch(t))
            .collect()
    }

    /// Samples every patch on the level-`level` barycentric grid, keeping
    /// points on shared vertices and edges once.
    fn surface_samples(&self, level: u32) -> SurfaceSampleSet {
        sample_patches(&self.patches(), &self.lattice().topology().triangles, level).samples
    }

    /// Flat mesh through the level-`subdiv` grid points of every patch;
    /// `T * 4^subdiv` faces sharing vertices across patch boundaries.
    fn to_triangle_mesh(&self, subdiv: u32) -> TriangleMesh {
        let m = 1usize << subdiv;
        let sampling =
            sample_patches(&self.patches(), &self.lattice().topology().triangles, subdiv);
        let mut faces = Vec::with_capacity(sampling.global.len() * m * m);
        for ids in &sampling.global {
            let at = |i: usize, j: usize| ids[grid_position(i, j, m)];
            for i in 0..m {
                for j in 0..m - i {
                    faces.push([at(i + 1, j), at(i, j + 1), at(i, j)]);
                }
            }
            for i in 0..m.saturating_sub(1) {
                for j in 0..m - 1 - i {
                    faces.push([at(i, j + 1), at(i + 1, j), at(i + 1, j + 1)]);
                }
            }
        }
        TriangleMesh {
            vertices: sampling.samples.points,
            faces,
        }
    }

    /// Distance from `origin` along unit `direction` to the farthest crossing
    /// of the level-`subdiv` flat mesh, or 0 if there is none.
    fn radial_surface_distance(&self, origin: &Vec3, direction: &Vec3, subdiv: u32) -> f64 {
        self.to_triangle_mesh(subdiv).farthest_hit(origin, direction)
    }
}

fn check_distances(distances: &[f64], expected: usize) -> Result<()> {
    if distances.len() != expected {
        return Err(Error::InvalidInstance(format!(
            "expected {expected} distances, got {}",
            distances.len()
        )));
    }
    if let Some(i) = distances.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidInstance(format!(
            "distance {i} is negative or not finite ({})",
            distances[i]
        )));
    }
    Ok(())
}

fn check_center(center: &Vec3) -> Result<()> {
    if center.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInstance("center is not finite".into()))
    }
}

/// A center plus one radial distance per control ray of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceShape {
    lattice: Arc<Lattice>,
    center: Vec3,
    distances: Vec<f64>,
}

impl InstanceShape {
    pub fn new(lattice: Arc<Lattice>, center: Vec3, distances: Vec<f64>) -> Result<Self> {
        check_center(&center)?;
        check_distances(&distances, lattice.control_count())?;
        Ok(Self {
            lattice,
            center,
            distances,
        })
    }

    /// Every control ray at distance `r`.
    pub fn uniform(lattice: Arc<Lattice>, center: Vec3, r: f64) -> Result<Self> {
        let n = lattice.control_count();
        Self::new(lattice, center, vec![r; n])
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn lattice_arc(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn with_center(&self, center: Vec3) -> Self {
        Self {
            center,
            ..self.clone()
        }
    }

    pub fn with_distances(&self, distances: Vec<f64>) -> Result<Self> {
        Self::new(self.lattice.clone(), self.center, distances)
    }

    /// World position of control point `entry`.
    pub fn control_point(&self, entry: usize) -> Vec3 {
        self.center + self.lattice.entry_direction(entry) * self.distances[entry]
    }

    pub fn assemble_patches(&self) -> Vec<BezierTriangle> {
        self.patches()
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            version: 1,
            rays: self.lattice.rays(),
            kind: self.lattice.kind(),
            anisotropy: self.lattice.anisotropy(),
            center: [self.center[0], self.center[1], self.center[2]],
            distances: self.distances.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("instance record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: InstanceRecord = serde_json::from_str(text)?;
        record.into_shape(&mut LatticeCache::default())
    }
}

impl StarSurface for InstanceShape {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn center(&self) -> Vec3 {
        self.center
    }

    fn patch(&self, t: usize) -> BezierTriangle {
        let entries = self.lattice.triangle_entries(t);
        BezierTriangle::new(entries.map(|e| self.control_point(e)))
    }
}

/// Flat-faced star polyhedron: one radial distance per vertex ray.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedralInstance {
    lattice: Arc<Lattice>,
    center: Vec3,
    distances: Vec<f64>,
}

impl PolyhedralInstance {
    pub fn new(lattice: Arc<Lattice>, center: Vec3, distances: Vec<f64>) -> Result<Self> {
        check_center(&center)?;
        check_distances(&distances, lattice.rays())?;
        Ok(Self {
            lattice,
            center,
            distances,
        })
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn vertex(&self, v: usize) -> Vec3 {
        self.center + self.lattice.directions().as_slice()[v] * self.distances[v]
    }

    pub fn polyhedron_samples(&self, level: u32) -> SurfaceSampleSet {
        self.surface_samples(level)
    }
}

impl StarSurface for PolyhedralInstance {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn center(&self) -> Vec3 {
        self.center
    }

    fn patch(&self, t: usize) -> BezierTriangle {
        let [a, b, c] = self.lattice.topology().triangles[t];
        BezierTriangle::flat(self.vertex(a), self.vertex(b), self.vertex(c))
    }
}

/// Unit vectors from `voxel` toward each sample, in sample order.
pub fn radial_directions(samples: &SurfaceSampleSet, voxel: &Vec3) -> Result<Vec<Vec3>> {
    samples
        .points
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let d = s - voxel;
            let n = d.norm();
            if n == 0.0 || !n.is_finite() {
                Err(Error::DegenerateRadialDirection { index })
            } else {
                Ok(d / n)
            }
        })
        .collect()
}

/// On-disk form of an [`InstanceShape`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub version: u32,
    pub rays: usize,
    pub kind: LatticeKind,
    pub anisotropy: [f64; 3],
    pub center: [f64; 3],
    pub distances: Vec<f64>,
}

impl InstanceRecord {
    pub fn into_shape(self, cache: &mut LatticeCache) -> Result<InstanceShape> {
        if self.version != 1 {
            return Err(Error::InvalidInstance(format!(
                "unsupported instance version {}",
                self.version
            )));
        }
        let lattice = cache.get(self.kind, self.rays, self.anisotropy)?;
        InstanceShape::new(lattice, Vec3::from(self.center), self.distances)
    }
}

/// Reuses built lattices across many instances with the same parameters.
#[derive(Debug, Default)]
pub struct LatticeCache {
    built: HashMap<(LatticeKind, usize, [u64; 3]), Arc<Lattice>>,
}

impl LatticeCache {
    pub fn get(&mut self, kind: LatticeKind, rays: usize, anisotropy: [f64; 3]) -> Result<Arc<Lattice>> {
        let key = (kind, rays, anisotropy.map(f64::to_bits));
        if let Some(l) = self.built.get(&key) {
            return Ok(l.clone());
        }
        let l = Arc::new(Lattice::with_anisotropy(kind, rays, anisotropy)?);
        self.built.insert(key, l.clone());
        Ok(l)
    }
}
