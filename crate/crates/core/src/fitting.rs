//! Sphere reconstruction with polyhedral (one distance per ray) and Bezier
//! (one distance per control point) parameterizations, and mask fitting.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::basis;
use crate::error::{Error, Result};
use crate::instance::{InstanceShape, PolyhedralInstance, StarSurface};
use crate::lattice::{Lattice, LatticeKind};
use crate::lm::{levenberg_marquardt, LmConfig};
use crate::volume::{ground_truth_distances, voxelize_sparse, Grid, LabelVolume, SparseMask};
use crate::Vec3;

/// Grid level of the surface samples that define the radial error.
pub const RMS_SAMPLE_LEVEL: u32 = 3;
/// Mesh subdivision used when rasterizing curved reconstructions.
pub const VOXELIZE_SUBDIV: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    StarDist,
    SurfDist,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::StarDist => "stardist",
            ModelKind::SurfDist => "surfdist",
        }
    }

    /// Free parameters for `rays` lattice vertices.
    pub fn params(self, rays: usize) -> usize {
        match self {
            ModelKind::StarDist => rays,
            ModelKind::SurfDist => 9 * rays - 16,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stardist" => Ok(ModelKind::StarDist),
            "surfdist" => Ok(ModelKind::SurfDist),
            other => Err(Error::InvalidParameter(format!(
                "unknown model kind {other:?} (expected stardist or surfdist)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub radius: usize,
    pub kind: ModelKind,
    pub rays: usize,
    pub params: usize,
    pub iou: f64,
    pub rms_radial_error: f64,
    pub converged: bool,
    /// Shared edge and face control distances (surfdist only).
    pub edge_scalar: Option<f64>,
    pub face_scalar: Option<f64>,
}

/// Ball of radius `radius` about the central voxel of a `(2r+1)^3` volume.
pub fn sphere_mask(radius: usize) -> Result<LabelVolume> {
    if radius == 0 {
        return Err(Error::InvalidParameter("sphere radius must be at least 1".into()));
    }
    let n = 2 * radius + 1;
    let r2 = (radius * radius) as i64;
    let c = radius as i64;
    let labels = ndarray::Array3::from_shape_fn([n, n, n], |(z, y, x)| {
        let (dz, dy, dx) = (z as i64 - c, y as i64 - c, x as i64 - c);
        u32::from(dz * dz + dy * dy + dx * dx <= r2)
    });
    LabelVolume::new(labels, [1.0; 3])
}

struct SphereSetup {
    mask: LabelVolume,
    sparse: SparseMask,
    lattice: Arc<Lattice>,
    center: Vec3,
    vertex_lengths: Vec<f64>,
}

fn sphere_setup(radius: usize, rays: usize) -> Result<SphereSetup> {
    let mask = sphere_mask(radius)?;
    let sparse = SparseMask::from_volume(&mask, 1);
    let lattice = Arc::new(Lattice::new(LatticeKind::default_for(rays), rays)?);
    let voxel = [radius; 3];
    let center = mask.world_position(voxel);
    let vertex_lengths = ground_truth_distances(&mask, 1, voxel, lattice.directions().as_slice())?;
    Ok(SphereSetup {
        mask,
        sparse,
        lattice,
        center,
        vertex_lengths,
    })
}

fn rms_radial_error<S: StarSurface + ?Sized>(shape: &S, radius: f64) -> f64 {
    let c = shape.center();
    let samples = shape.surface_samples(RMS_SAMPLE_LEVEL);
    let sq: f64 = samples
        .points
        .iter()
        .map(|s| {
            let e = (s - c).norm() - radius;
            e * e
        })
        .sum();
    (sq / samples.len() as f64).sqrt()
}

/// Polyhedron through ray-cast boundary points along the lattice rays.
pub fn reconstruct_sphere_stardist(radius: usize, rays: usize) -> Result<ReconstructionReport> {
    let setup = sphere_setup(radius, rays)?;
    let poly = PolyhedralInstance::new(setup.lattice.clone(), setup.center, setup.vertex_lengths)?;
    let iou = voxelize_sparse(&poly, setup.mask.grid(), 0).iou(&setup.sparse);
    Ok(ReconstructionReport {
        radius,
        kind: ModelKind::StarDist,
        rays,
        params: ModelKind::StarDist.params(rays),
        iou,
        rms_radial_error: rms_radial_error(&poly, radius as f64),
        converged: true,
        edge_scalar: None,
        face_scalar: None,
    })
}

fn sphere_residuals(base: &InstanceShape, distances: &[f64], radius: f64) -> Vec<f64> {
    let shape = base
        .with_distances(distances.iter().map(|d| d.max(0.0)).collect())
        .expect("clamped distances are valid");
    let c = shape.center();
    shape
        .surface_samples(RMS_SAMPLE_LEVEL)
        .points
        .iter()
        .map(|s| (s - c).norm() - radius)
        .collect()
}

fn fit_sphere(radius: usize, rays: usize, shared: bool) -> Result<(SphereSetup, InstanceShape, bool)> {
    let setup = sphere_setup(radius, rays)?;
    let lattice = setup.lattice.clone();
    let v = lattice.rays();
    let edges = lattice.edge_entries();
    let faces = lattice.interior_entries();
    let mean = setup.vertex_lengths.iter().sum::<f64>() / v as f64;
    let mut base_d = vec![mean; lattice.control_count()];
    base_d[..v].copy_from_slice(&setup.vertex_lengths);
    let base = InstanceShape::new(lattice.clone(), setup.center, base_d.clone())?;
    let r = radius as f64;
    let expand = |p: &[f64]| -> Vec<f64> {
        let mut d = base_d.clone();
        if shared {
            d[edges.clone()].fill(p[0]);
            d[faces.clone()].fill(p[1]);
        } else {
            d[v..].copy_from_slice(p);
        }
        d
    };
    let x0 = if shared {
        vec![mean, mean]
    } else {
        vec![mean; lattice.control_count() - v]
    };
    let out = levenberg_marquardt(
        |p: &[f64]| sphere_residuals(&base, &expand(p), r),
        &x0,
        LmConfig::default(),
    );
    let d: Vec<f64> = expand(&out.params).into_iter().map(|x| x.max(0.0)).collect();
    let shape = base.with_distances(d)?;
    Ok((setup, shape, out.converged))
}

fn surfdist_report(
    radius: usize,
    rays: usize,
    setup: &SphereSetup,
    shape: &InstanceShape,
    converged: bool,
) -> ReconstructionReport {
    let lattice = shape.lattice();
    let d = shape.distances();
    ReconstructionReport {
        radius,
        kind: ModelKind::SurfDist,
        rays,
        params: ModelKind::SurfDist.params(rays),
        iou: voxelize_sparse(shape, setup.mask.grid(), VOXELIZE_SUBDIV).iou(&setup.sparse),
        rms_radial_error: rms_radial_error(shape, radius as f64),
        converged,
        edge_scalar: Some(d[lattice.edge_entries().start]),
        face_scalar: Some(d[lattice.interior_entries().start]),
    }
}

/// Bezier reconstruction with vertex distances measured on the mask and one
/// shared edge distance and one shared face distance fitted by least squares
/// on the sample radial error.
pub fn reconstruct_sphere_surfdist(radius: usize, rays: usize) -> Result<ReconstructionReport> {
    let (setup, shape, converged) = fit_sphere(radius, rays, true)?;
    Ok(surfdist_report(radius, rays, &setup, &shape, converged))
}

/// As [`reconstruct_sphere_surfdist`] but every edge and face distance is
/// fitted independently. Returns the fitted shape with its report.
pub fn reconstruct_sphere_surfdist_unshared(
    radius: usize,
    rays: usize,
) -> Result<(ReconstructionReport, InstanceShape)> {
    let (setup, shape, converged) = fit_sphere(radius, rays, false)?;
    Ok((surfdist_report(radius, rays, &setup, &shape, converged), shape))
}

pub fn reconstruct_sphere(kind: ModelKind, radius: usize, rays: usize) -> Result<ReconstructionReport> {
    match kind {
        ModelKind::StarDist => reconstruct_sphere_stardist(radius, rays),
        ModelKind::SurfDist => reconstruct_sphere_surfdist(radius, rays),
    }
}

/// Every `(radius, kind, rays)` combination, radius-major.
pub fn sweep(radii: &[usize], rays: &[usize], kinds: &[ModelKind]) -> Result<Vec<ReconstructionReport>> {
    let configs: Vec<(usize, ModelKind, usize)> = radii
        .iter()
        .flat_map(|&r| kinds.iter().flat_map(move |&k| rays.iter().map(move |&v| (r, k, v))))
        .collect();
    configs
        .into_par_iter()
        .map(|(r, k, v)| reconstruct_sphere(k, r, v))
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "radius,kind,rays,params,iou,rms_radial_error,converged";

pub fn sweep_csv(reports: &[ReconstructionReport]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{}\n",
            r.radius, r.kind, r.rays, r.params, r.iou, r.rms_radial_error, r.converged
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub sample_level: u32,
    /// First step as a fraction of the mean ground-truth distance.
    pub initial_step: f64,
    /// Per-iteration step multiplier.
    pub decay: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            sample_level: 3,
            initial_step: 0.05,
            decay: 0.985,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub shape: InstanceShape,
    /// Mean absolute radial error of `shape`.
    pub loss: f64,
    pub iterations: usize,
}

/// Fits every control distance of `init` to the mask of `instance` by
/// projected, per-parameter normalized subgradient descent on the mean
/// absolute radial error. The center is snapped to the voxel containing it.
pub fn fit_mask(init: &InstanceShape, vol: &LabelVolume, instance: u32, cfg: FitConfig) -> Result<FitOutcome> {
    if !(cfg.initial_step > 0.0 && cfg.decay > 0.0 && cfg.decay <= 1.0) {
        return Err(Error::InvalidParameter(
            "fit step must be positive and decay in (0, 1]".into(),
        ));
    }
    let grid: Grid = vol.grid();
    let voxel = grid
        .voxel_at(&init.center())
        .ok_or_else(|| Error::InvalidParameter("fit center lies outside the volume".into()))?;
    if instance == 0 || vol.get(voxel) != Some(instance) {
        return Err(Error::NotInInstance { voxel, instance });
    }
    let c = grid.world_position(voxel);
    let base = init.with_center(c);
    let lattice = base.lattice_arc().clone();
    let count = lattice.control_count();
    let unit_dirs: Vec<Vec3> = {
        let unit = base.with_distances(vec![1.0; count])?;
        unit.surface_samples(cfg.sample_level)
            .points
            .iter()
            .map(|s| (s - c).normalize())
            .collect()
    };
    let entry_dirs: Vec<Vec3> = (0..count).map(|j| lattice.entry_direction(j)).collect();

    let mut d = base.distances().to_vec();
    let mut best = (f64::INFINITY, d.clone());
    let mut scale = None;
    for t in 0..=cfg.iterations {
        let shape = base.with_distances(d.clone())?;
        let samples = shape.surface_samples(cfg.sample_level);
        let n = samples.len() as f64;
        let radii: Vec<f64> = samples.points.iter().map(|s| (s - c).norm()).collect();
        let dirs: Vec<Vec3> = samples
            .points
            .iter()
            .zip(&radii)
            .zip(&unit_dirs)
            .map(|((s, r), u)| if *r > 0.0 { (s - c) / *r } else { *u })
            .collect();
        let truth: Vec<f64> = dirs
            .par_iter()
            .map(|k| ground_truth_distances(vol, instance, voxel, std::slice::from_ref(k)).map(|v| v[0]))
            .collect::<Result<_>>()?;
        let loss = truth.iter().zip(&radii).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        if loss < best.0 {
            best = (loss, d.clone());
        }
        if t == cfg.iterations {
            break;
        }
        let scale = *scale.get_or_insert_with(|| truth.iter().sum::<f64>() / n);
        let mut grad = vec![0.0; count];
        let mut weight = vec![0.0; count];
        for (i, (t_idx, bc)) in samples.provenance.iter().enumerate() {
            let s = (radii[i] - truth[i]).signum() * f64::from(radii[i] != truth[i]);
            let b = basis(bc);
            for (slot, &j) in lattice.triangle_entries(*t_idx).iter().enumerate() {
                let dr = b[slot] * dirs[i].dot(&entry_dirs[j]);
                grad[j] += s * dr / n;
                weight[j] += dr.abs() / n;
            }
        }
        let eta = cfg.initial_step * scale * cfg.decay.powi(t as i32);
        for j in 0..count {
            if weight[j] > 0.0 {
                d[j] = (d[j] - eta * grad[j] / weight[j]).max(0.0);
            }
        }
    }
    Ok(FitOutcome {
        shape: base.with_distances(best.1)?,
        loss: best.0,
        iterations: cfg.iterations,
    })
}
