//! Labeled voxel volumes: storage and I/O, object-probability targets,
//! ray-cast distances through instance masks, and rasterization of shapes.
//!
//! Voxel `(z, y, x)` has its center at world position
//! `(z * az, y * ay, x * ax)` and occupies `[i - 0.5, i + 0.5)` voxel widths
//! along each axis.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayViewMut1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::StarSurface;
use crate::mesh::RadialIndex;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    U32,
}

impl Dtype {
    pub fn max_label(self) -> u32 {
        match self {
            Dtype::U8 => u8::MAX as u32,
            Dtype::U16 => u16::MAX as u32,
            Dtype::U32 => u32::MAX,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::U32 => "u32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "u32" => Ok(Dtype::U32),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    /// Narrowest dtype that holds `label`.
    pub fn fitting(label: u32) -> Self {
        if label <= Dtype::U8.max_label() {
            Dtype::U8
        } else if label <= Dtype::U16.max_label() {
            Dtype::U16
        } else {
            Dtype::U32
        }
    }
}

fn check_anisotropy(a: [f64; 3]) -> Result<()> {
    if a.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "anisotropy components must be positive and finite, got {a:?}"
        )))
    }
}

/// Grid geometry without labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub shape: [usize; 3],
    pub anisotropy: [f64; 3],
}

impl Grid {
    pub fn new(shape: [usize; 3], anisotropy: [f64; 3]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be at least 1, got {shape:?}"
            )));
        }
        check_anisotropy(anisotropy)?;
        Ok(Self { shape, anisotropy })
    }

    pub fn isotropic(shape: [usize; 3]) -> Result<Self> {
        Self::new(shape, [1.0, 1.0, 1.0])
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn world_position(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            idx[0] as f64 * self.anisotropy[0],
            idx[1] as f64 * self.anisotropy[1],
            idx[2] as f64 * self.anisotropy[2],
        )
    }

    /// Voxel containing world point `p`, if it lies inside the grid.
    pub fn voxel_at(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let i = (p[axis] / self.anisotropy[axis] + 0.5).floor();
            if !(i >= 0.0 && i < self.shape[axis] as f64) {
                return None;
            }
            out[axis] = i as usize;
        }
        Some(out)
    }

    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.shape[1] + idx[1]) * self.shape[2] + idx[2]
    }

    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.shape[2];
        let y = (linear / self.shape[2]) % self.shape[1];
        let z = linear / (self.shape[1] * self.shape[2]);
        [z, y, x]
    }
}

/// Integer labels on a `(z, y, x)` grid; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    labels: Array3<u32>,
    anisotropy: [f64; 3],
    dtype: Dtype,
}

impl LabelVolume {
    /// Wraps `labels`, choosing the narrowest dtype that holds them.
    pub fn new(labels: Array3<u32>, anisotropy: [f64; 3]) -> Result<Self> {
        if labels.shape().contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "volume dimensions must be at least 1, got {:?}",
                labels.shape()
            )));
        }
        check_anisotropy(anisotropy)?;
        let max = labels.iter().copied().max().unwrap_or(0);
        Ok(Self {
            labels,
            anisotropy,
            dtype: Dtype::fitting(max),
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            labels: Array3::zeros(grid.shape),
            anisotropy: grid.anisotropy,
            dtype: Dtype::U8,
        }
    }

    /// Overrides the storage dtype; range is checked on save.
    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn grid(&self) -> Grid {
        Grid {
            shape: self.shape(),
            anisotropy: self.anisotropy,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    pub fn anisotropy(&self) -> [f64; 3] {
        self.anisotropy
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn labels(&self) -> &Array3<u32> {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut Array3<u32> {
        &mut self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, idx: [usize; 3]) -> Option<u32> {
        self.labels.get(idx).copied()
    }

    pub fn world_position(&self, idx: [usize; 3]) -> Vec3 {
        self.grid().world_position(idx)
    }

    /// Sorted distinct nonzero labels.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Number of voxels carrying `id`.
    pub fn count(&self, id: u32) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s: OsString = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".raw"))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    shape: [usize; 3],
    dtype: String,
    order: String,
    anisotropy: [f64; 3],
}

const ORDER: &str = "zyx-C";

/// Writes `<name>.json` (header) and `<name>.raw` (little-endian C-order
/// payload). `path` may name either file or the shared stem.
pub fn save_volume(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = sidecar_paths(path.as_ref());
    let dtype = vol.dtype;
    if let Some(&label) = vol.labels.iter().find(|&&l| l > dtype.max_label()) {
        return Err(Error::LabelExceedsDtype {
            label,
            dtype: dtype.name(),
        });
    }
    let header = VolumeHeader {
        shape: vol.shape(),
        dtype: dtype.name().to_string(),
        order: ORDER.to_string(),
        anisotropy: vol.anisotropy,
    };
    let mut payload = Vec::with_capacity(vol.len() * dtype.bytes());
    for &l in vol.labels.iter() {
        match dtype {
            Dtype::U8 => payload.push(l as u8),
            Dtype::U16 => payload.extend_from_slice(&(l as u16).to_le_bytes()),
            Dtype::U32 => payload.extend_from_slice(&l.to_le_bytes()),
        }
    }
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    fs::write(&raw_path, payload)?;
    Ok(())
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let (json_path, raw_path) = sidecar_paths(path.as_ref());
    let text = fs::read_to_string(&json_path)?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.order != ORDER {
        return Err(Error::MalformedHeader(format!(
            "unsupported order `{}` (expected {ORDER})",
            header.order
        )));
    }
    if header.shape.contains(&0) {
        return Err(Error::MalformedHeader(format!(
            "shape {:?} has an empty axis",
            header.shape
        )));
    }
    check_anisotropy(header.anisotropy).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let dtype = Dtype::parse(&header.dtype)?;
    let payload = fs::read(&raw_path)?;
    let count: usize = header.shape.iter().product();
    let expected = count * dtype.bytes();
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let values: Vec<u32> = match dtype {
        Dtype::U8 => payload.iter().map(|&b| b as u32).collect(),
        Dtype::U16 => payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect(),
        Dtype::U32 => payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    let labels = Array3::from_shape_vec(header.shape, values)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    Ok(LabelVolume {
        labels,
        anisotropy: header.anisotropy,
        dtype,
    })
}

/// Per-voxel normalized distance to the nearest voxel outside the voxel's
/// instance; 0 on background.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVolume {
    pub p: Array3<f64>,
}

impl TargetVolume {
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.p[idx]
    }
}

/// Squared 1-D distance transform (lower envelope of parabolas) with sample
/// spacing `h`; `f` holds squared distances, `INFINITY` for no site.
fn edt_1d(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * h;
        while let Some(&vk) = v.last() {
            let xv = vk as f64 * h;
            let s = ((f[q] + xq * xq) - (f[vk] + xv * xv)) / (2.0 * (xq - xv));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let xq = q as f64 * h;
        while k + 1 < v.len() && z[k + 1] < xq {
            k += 1;
        }
        let d = xq - v[k] as f64 * h;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance to the nearest `false` voxel.
fn squared_edt(inside: &Array3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = inside.mapv(|b| if b { f64::INFINITY } else { 0.0 });
    let mut line_in = Vec::new();
    let mut line_out = Vec::new();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let h = spacing[axis];
        for mut lane in dist.lanes_mut(Axis(axis)) {
            line_in.clear();
            line_in.extend(lane.iter().copied());
            line_out.resize(line_in.len(), 0.0);
            edt_1d(&line_in, h, &mut line_out, &mut v, &mut z);
            write_lane(&mut lane, &line_out);
        }
    }
    dist
}

fn write_lane(lane: &mut ArrayViewMut1<f64>, values: &[f64]) {
    lane.iter_mut().zip(values).for_each(|(o, v)| *o = *v);
}

/// Inclusive per-instance bounding boxes, keyed by label.
fn bounding_boxes(vol: &LabelVolume) -> Vec<(u32, [usize; 3], [usize; 3])> {
    let mut boxes: std::collections::BTreeMap<u32, ([usize; 3], [usize; 3])> = Default::default();
    for ((z, y, x), &l) in vol.labels.indexed_iter() {
        if l == 0 {
            continue;
        }
        let b = boxes.entry(l).or_insert(([z, y, x], [z, y, x]));
        let idx = [z, y, x];
        for a in 0..3 {
            b.0[a] = b.0[a].min(idx[a]);
            b.1[a] = b.1[a].max(idx[a]);
        }
    }
    boxes.into_iter().map(|(l, (lo, hi))| (l, lo, hi)).collect()
}

/// Normalized nearest-exterior distances (world units, center to center).
///
/// Exterior means any voxel with a different label, background included.
/// Voxels beyond the volume border only count as exterior when the whole
/// volume is a single nonzero label, which otherwise would have no exterior.
pub fn object_probabilities(vol: &LabelVolume) -> TargetVolume {
    let shape = vol.shape();
    let first = vol.labels.iter().next().copied().unwrap_or(0);
    let padded = first != 0 && vol.labels.iter().all(|&l| l == first);
    let per_instance: Vec<Vec<([usize; 3], f64)>> = bounding_boxes(vol)
        .into_par_iter()
        .map(|(id, lo, hi)| {
            // region = bounding box grown by one voxel; every voxel in the
            // grown shell is exterior, so it contains the nearest one
            let mut start = [0isize; 3];
            let mut dims = [0usize; 3];
            for a in 0..3 {
                let s = lo[a] as isize - 1;
                let e = hi[a] as isize + 1;
                let (s, e) = if padded {
                    (s, e)
                } else {
                    (s.max(0), e.min(shape[a] as isize - 1))
                };
                start[a] = s;
                dims[a] = (e - s + 1) as usize;
            }
            let inside = Array3::from_shape_fn(dims, |(z, y, x)| {
                let g = [z as isize + start[0], y as isize + start[1], x as isize + start[2]];
                if (0..3).any(|a| g[a] < 0 || g[a] >= shape[a] as isize) {
                    return false;
                }
                vol.labels[[g[0] as usize, g[1] as usize, g[2] as usize]] == id
            });
            let d2 = squared_edt(&inside, vol.anisotropy);
            let mut cells = Vec::new();
            let mut max = 0.0f64;
            Zip::indexed(&inside).and(&d2).for_each(|(z, y, x), &is_in, &dd| {
                if is_in {
                    let d = dd.sqrt();
                    max = max.max(d);
                    let g = [
                        (z as isize + start[0]) as usize,
                        (y as isize + start[1]) as usize,
                        (x as isize + start[2]) as usize,
                    ];
                    cells.push((g, d));
                }
            });
            if max > 0.0 {
                cells.iter_mut().for_each(|c| c.1 /= max);
            }
            cells
        })
        .collect();
    let mut p = Array3::zeros(shape);
    for cells in per_instance {
        for (idx, value) in cells {
            p[idx] = value;
        }
    }
    TargetVolume { p }
}

/// Fixed-step marching followed by bisection, both in voxel widths of the
/// finest axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self {
            step: 0.25,
            tolerance: 1e-3,
        }
    }
}

/// World distance from the center of `origin` along unit `direction` to
/// where the ray first leaves the voxels labeled `instance`.
pub fn ray_cast_mask_distance(
    vol: &LabelVolume,
    instance: u32,
    origin: [usize; 3],
    direction: &Vec3,
) -> Result<f64> {
    ray_cast_mask_distance_with(vol, instance, origin, direction, MarchConfig::default())
}

pub fn ray_cast_mask_distance_with(
    vol: &LabelVolume,
    instance: u32,
    origin: [usize; 3],
    direction: &Vec3,
    cfg: MarchConfig,
) -> Result<f64> {
    match vol.get(origin) {
        None => return Err(Error::OutOfBounds(origin)),
        Some(l) if l != instance || instance == 0 => {
            return Err(Error::NotInInstance {
                voxel: origin,
                instance,
            })
        }
        _ => {}
    }
    let grid = vol.grid();
    let unit = grid.anisotropy.iter().copied().fold(f64::INFINITY, f64::min);
    let step = cfg.step * unit;
    let tol = cfg.tolerance * unit;
    let o = grid.world_position(origin);
    let inside = |t: f64| {
        grid.voxel_at(&(o + direction * t))
            .is_some_and(|v| vol.labels[v] == instance)
    };
    let mut t_in = 0.0;
    loop {
        let t = t_in + step;
        if !inside(t) {
            break;
        }
        t_in = t;
    }
    let (mut lo, mut hi) = (t_in, t_in + step);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mask distances from `voxel` along every direction of `directions`.
pub fn ground_truth_distances(
    vol: &LabelVolume,
    instance: u32,
    voxel: [usize; 3],
    directions: &[Vec3],
) -> Result<Vec<f64>> {
    directions
        .iter()
        .map(|d| ray_cast_mask_distance(vol, instance, voxel, d))
        .collect()
}

/// Voxels of a rasterized shape, as sorted linear indices into `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    pub voxels: Vec<usize>,
    /// Inclusive voxel bounding box of the rasterization window.
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl SparseMask {
    /// Voxels of `vol` carrying label `id`.
    pub fn from_volume(vol: &LabelVolume, id: u32) -> Self {
        let grid = vol.grid();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut voxels = Vec::new();
        for (i, &l) in vol.labels.iter().enumerate() {
            if l == id {
                let v = grid.unravel(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a]);
                }
                voxels.push(i);
            }
        }
        if voxels.is_empty() {
            lo = [0; 3];
        }
        Self { voxels, lo, hi }
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn boxes_overlap(&self, other: &SparseMask) -> bool {
        (0..3).all(|a| self.lo[a] <= other.hi[a] && other.lo[a] <= self.hi[a])
    }

    pub fn intersection_len(&self, other: &SparseMask) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.voxels.len() && j < other.voxels.len() {
            match self.voxels[i].cmp(&other.voxels[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn iou(&self, other: &SparseMask) -> f64 {
        if !self.boxes_overlap(other) {
            return 0.0;
        }
        let inter = self.intersection_len(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Rasterizes `shape`: voxel `v` is set iff `|v - c|` does not exceed the
/// radial surface distance from `c` toward `v` on the level-`subdiv` mesh.
pub fn voxelize_sparse<S: StarSurface + ?Sized>(shape: &S, grid: Grid, subdiv: u32) -> SparseMask {
    let mesh = shape.to_triangle_mesh(subdiv);
    let c = shape.center();
    let empty = SparseMask {
        voxels: Vec::new(),
        lo: [0; 3],
        hi: [0; 3],
    };
    let Some((mut bmin, mut bmax)) = mesh.bounding_box() else {
        return empty;
    };
    bmin = bmin.inf(&c);
    bmax = bmax.sup(&c);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let s = (bmin[a] / grid.anisotropy[a] - 1e-9).ceil().max(0.0);
        let e = (bmax[a] / grid.anisotropy[a] + 1e-9)
            .floor()
            .min(grid.shape[a] as f64 - 1.0);
        if !(s <= e) {
            return empty;
        }
        lo[a] = s as usize;
        hi[a] = e as usize;
    }
    let index = RadialIndex::new(&mesh, c);
    let slices: Vec<Vec<usize>> = (lo[0]..=hi[0])
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::new();
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let v = grid.world_position([z, y, x]);
                    let off = v - c;
                    let dist = off.norm();
                    let inside = dist == 0.0 || dist <= index.farthest_hit(&(off / dist)) + 1e-9;
                    if inside {
                        out.push(grid.linear_index([z, y, x]));
                    }
                }
            }
            out
        })
        .collect();
    SparseMask {
        voxels: slices.concat(),
        lo,
        hi,
    }
}

/// Rasterizes `shape` into a fresh volume with label 1.
pub fn voxelize<S: StarSurface + ?Sized>(shape: &S, grid: Grid, subdiv: u32) -> LabelVolume {
    let mask = voxelize_sparse(shape, grid, subdiv);
    let mut vol = LabelVolume::zeros(grid);
    let flat = vol.labels.as_slice_mut().expect("standard layout");
    for i in mask.voxels {
        flat[i] = 1;
    }
    vol
}
