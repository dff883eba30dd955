//! Per-voxel training loss: binary cross-entropy on the object probability
//! plus a weighted mean absolute radial-distance error, where the radial
//! directions are derived per voxel from the predicted surface samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{radial_directions, InstanceShape, StarSurface};
use crate::volume::{ground_truth_distances, Grid, LabelVolume, TargetVolume};
use crate::Vec3;

/// Clamp applied to predicted probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the distance term.
    pub lambda_d: f64,
    /// Weight of the background shrinkage term.
    pub lambda_reg: f64,
    /// Barycentric grid level used to sample predicted surfaces.
    pub sample_level: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.1,
            lambda_reg: 1e-4,
            sample_level: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_d", self.lambda_d), ("lambda_reg", self.lambda_reg)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy with `p_hat` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn object_loss(p: f64, p_hat: f64) -> f64 {
    let q = p_hat.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
}

fn check_lengths(d: &[f64], d_hat: &[f64]) -> Result<()> {
    if d.len() != d_hat.len() || d.is_empty() {
        return Err(Error::LengthMismatch {
            left: d.len(),
            right: d_hat.len(),
        });
    }
    Ok(())
}

/// `p * mean|d - d_hat|` on foreground, `lambda_reg * mean|d_hat|` on background.
pub fn distance_loss(p: f64, d: &[f64], d_hat: &[f64], cfg: &LossConfig) -> Result<f64> {
    check_lengths(d, d_hat)?;
    let n = d.len() as f64;
    Ok(if p > 0.0 {
        p * d.iter().zip(d_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    } else {
        cfg.lambda_reg * d_hat.iter().map(|b| b.abs()).sum::<f64>() / n
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`distance_loss`] with respect to `d_hat`; the subgradient of
/// `|x|` at 0 is taken as 0.
pub fn distance_loss_gradient(p: f64, d: &[f64], d_hat: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    check_lengths(d, d_hat)?;
    let n = d.len() as f64;
    Ok(if p > 0.0 {
        d.iter().zip(d_hat).map(|(a, b)| p * sign(b - a) / n).collect()
    } else {
        d_hat.iter().map(|b| cfg.lambda_reg * sign(*b) / n).collect()
    })
}

/// A prediction made at one voxel: confidence plus a shape centered there.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPrediction {
    pub voxel: [usize; 3],
    pub p_hat: f64,
    pub shape: InstanceShape,
}

impl VoxelPrediction {
    /// Recenters `shape` on the world position of `voxel`.
    pub fn new(grid: &Grid, voxel: [usize; 3], p_hat: f64, shape: &InstanceShape) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_hat) {
            return Err(Error::InvalidParameter(format!(
                "predicted probability must lie in [0, 1], got {p_hat}"
            )));
        }
        if (0..3).any(|a| voxel[a] >= grid.shape[a]) {
            return Err(Error::OutOfBounds(voxel));
        }
        Ok(Self {
            voxel,
            p_hat,
            shape: shape.with_center(grid.world_position(voxel)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoxelLoss {
    pub object: f64,
    pub distance: f64,
    pub total: f64,
}

/// Predicted radii `|s_i - c|` and radial directions for a shape's samples.
/// Samples collapsed onto the center borrow their direction from the same
/// sample of the unit-distance shape.
pub fn predicted_radial_geometry(shape: &InstanceShape, level: u32) -> (Vec<f64>, Vec<Vec3>) {
    let c = shape.center();
    let samples = shape.surface_samples(level);
    let radii: Vec<f64> = samples.points.iter().map(|s| (s - c).norm()).collect();
    let dirs = match radial_directions(&samples, &c) {
        Ok(dirs) => dirs,
        Err(_) => {
            let n = shape.distances().len();
            let unit = shape
                .with_distances(vec![1.0; n])
                .expect("unit distances are valid")
                .surface_samples(level);
            samples
                .points
                .iter()
                .zip(&unit.points)
                .zip(&radii)
                .map(|((s, u), r)| if *r > 0.0 { (s - c) / *r } else { (u - c).normalize() })
                .collect()
        }
    };
    (radii, dirs)
}

pub fn voxel_loss_terms(
    p: f64,
    pred: &VoxelPrediction,
    vol: &LabelVolume,
    cfg: &LossConfig,
) -> Result<VoxelLoss> {
    cfg.validate()?;
    let object = object_loss(p, pred.p_hat);
    let (d_hat, dirs) = predicted_radial_geometry(&pred.shape, cfg.sample_level);
    let distance = if p > 0.0 {
        let label = vol.get(pred.voxel).ok_or(Error::OutOfBounds(pred.voxel))?;
        if label == 0 {
            return Err(Error::NotInInstance {
                voxel: pred.voxel,
                instance: label,
            });
        }
        let d = ground_truth_distances(vol, label, pred.voxel, &dirs)?;
        distance_loss(p, &d, &d_hat, cfg)?
    } else {
        distance_loss(p, &d_hat, &d_hat, cfg)?
    };
    Ok(VoxelLoss {
        object,
        distance,
        total: object + cfg.lambda_d * distance,
    })
}

/// Object loss plus `lambda_d` times distance loss at one voxel.
pub fn voxel_loss(p: f64, pred: &VoxelPrediction, vol: &LabelVolume, cfg: &LossConfig) -> Result<f64> {
    voxel_loss_terms(p, pred, vol, cfg).map(|l| l.total)
}

/// Mean of [`voxel_loss`] over one prediction per voxel.
pub fn volume_loss(
    preds: &[VoxelPrediction],
    vol: &LabelVolume,
    targets: &TargetVolume,
    cfg: &LossConfig,
) -> Result<f64> {
    if preds.is_empty() || vol.is_empty() {
        return Err(Error::EmptyVolume);
    }
    if preds.len() != vol.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: vol.len(),
        });
    }
    let tshape = targets.p.shape();
    if tshape != vol.shape() {
        return Err(Error::ShapeMismatch([tshape[0], tshape[1], tshape[2]], vol.shape()));
    }
    let losses: Vec<f64> = preds
        .par_iter()
        .map(|pred| voxel_loss(targets.get(pred.voxel), pred, vol, cfg))
        .collect::<Result<_>>()?;
    // sequential sum in voxel order keeps the result independent of threads
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub failures: usize,
}

/// Compares [`distance_loss_gradient`] against central differences on
/// seeded random inputs kept at least `1e-3` away from every kink.
pub fn gradient_check(seed: u64, trials: usize, step: f64, tolerance: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=24);
        let p = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.01..=1.0) };
        let cfg = LossConfig {
            lambda_d: 0.1,
            lambda_reg: rng.random_range(1e-4..1.0),
            sample_level: 2,
        };
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let d_hat: Vec<f64> = d
            .iter()
            .map(|&dk| loop {
                let x: f64 = rng.random_range(-20.0..40.0);
                if (x - dk).abs() > 1e-3 && x.abs() > 1e-3 {
                    break x;
                }
            })
            .collect();
        let grad = distance_loss_gradient(p, &d, &d_hat, &cfg).expect("lengths match");
        let mut trial_bad = false;
        for k in 0..n {
            let mut plus = d_hat.clone();
            let mut minus = d_hat.clone();
            plus[k] += step;
            minus[k] -= step;
            let fd = (distance_loss(p, &d, &plus, &cfg).unwrap()
                - distance_loss(p, &d, &minus, &cfg).unwrap())
                / (2.0 * step);
            let scale = grad[k].abs().max(fd.abs());
            let rel = if scale == 0.0 { 0.0 } else { (grad[k] - fd).abs() / scale };
            max_rel = max_rel.max(rel);
            trial_bad |= rel > tolerance;
        }
        failures += usize::from(trial_bad);
    }
    GradCheckReport {
        trials,
        max_relative_error: max_rel,
        failures,
    }
}
