//! `surfdist` command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or schema error, 3 I/O error, 4 numerical
//! failure. `SURFDIST_THREADS` caps the worker pool.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use surfdist::fitting::{fit_mask, sweep, sweep_csv, FitConfig, ModelKind};
use surfdist::instance::{InstanceRecord, InstanceShape, LatticeCache, StarSurface};
use surfdist::lattice::{ControlEntry, Lattice, LatticeKind};
use surfdist::loss::{gradient_check, voxel_loss_terms, LossConfig, VoxelPrediction};
use surfdist::metrics::{
    default_thresholds, metrics_csv, metrics_over_thresholds, nms_indices, Candidate, CandidateSet, NmsConfig,
};
use surfdist::volume::{load_volume, object_probabilities, save_volume, voxelize, Grid};

#[derive(Debug, Parser)]
#[command(name = "surfdist", version, about = "Bezier-triangle star-convex instance shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit the hull topology and control layout of a ray lattice as JSON.
    Lattice {
        #[arg(long)]
        rays: usize,
        /// canonical or fibonacci; defaults to canonical for 4, 6 and 12 rays.
        #[arg(long)]
        kind: Option<LatticeKind>,
        /// Voxel size per axis as az,ay,ax.
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
        anisotropy: [f64; 3],
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sphere reconstruction sweep; writes one CSV row per configuration.
    ReconstructSphere {
        #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 12, 16, 20, 24, 28, 32])]
        radius: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [6, 12, 96])]
        rays: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [ModelKind::StarDist, ModelKind::SurfDist])]
        kinds: Vec<ModelKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an instance to one label of a volume, starting from unit distances
    /// at the voxel of highest object probability.
    Fit {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        instance: u32,
        #[arg(long)]
        rays: usize,
        #[arg(long)]
        kind: Option<LatticeKind>,
        #[arg(long, default_value_t = 3)]
        level: u32,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize an instance JSON into a label volume (label 1).
    Voxelize {
        #[arg(long)]
        instance: PathBuf,
        /// Volume shape as z,y,x.
        #[arg(long, value_parser = parse_triple::<usize>)]
        shape: [usize; 3],
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
        anisotropy: [f64; 3],
        #[arg(long, default_value_t = 3)]
        subdiv: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the subdivided surface of an instance as Wavefront OBJ.
    ExportObj {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 2)]
        subdiv: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matching metrics of a predicted against a true label volume.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy non-maximum suppression of instance candidates.
    Nms {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_parser = parse_triple::<usize>)]
        shape: [usize; 3],
        #[arg(long, value_parser = parse_triple::<f64>, default_value = "1,1,1")]
        anisotropy: [f64; 3],
        #[arg(long, default_value_t = 0.5)]
        prob_threshold: f64,
        #[arg(long, default_value_t = 0.4)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 2)]
        subdiv: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the distance-loss gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-voxel and mean training loss of predictions against a label volume.
    LossEval {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lambda_d: f64,
        #[arg(long, default_value_t = 1e-4)]
        lambda_reg: f64,
        #[arg(long, default_value_t = 2)]
        level: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<surfdist::Error> for Failure {
    fn from(e: surfdist::Error) -> Self {
        use surfdist::Error as E;
        match e {
            E::Io(_) => Failure::Io(e.to_string()),
            E::DegenerateDirections(_) | E::DegenerateRadialDirection { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn check_input(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Io(format!("{}: no such file", path.display())))
    }
}

/// Volumes are addressed by stem or by either sidecar path.
fn check_volume_input(path: &Path) -> CliResult {
    let json = path.with_extension("json");
    if json.is_file() {
        Ok(())
    } else {
        Err(Failure::Io(format!("{}: no such volume header", json.display())))
    }
}

fn check_output(path: &Path) -> CliResult {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::Io(format!("{}: output directory does not exist", parent.display())))
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Io(format!("stdout: {e}"))),
    }
}

/// Parses `a,b,c`.
fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|e| format!("{p:?}: {e}"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn read_text(path: &Path) -> CliResult<String> {
    check_input(path)?;
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn schema_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn read_instance(path: &Path) -> CliResult<InstanceShape> {
    let text = read_text(path)?;
    InstanceShape::from_json(&text).map_err(|e| schema_err(path, e))
}

#[derive(Serialize)]
struct LatticeDoc<'a> {
    rays: usize,
    kind: LatticeKind,
    anisotropy: [f64; 3],
    vertices: Vec<[f64; 3]>,
    edges: &'a [[usize; 2]],
    triangles: &'a [[usize; 3]],
    control_count: usize,
    controls: &'a [ControlEntry],
}

fn cmd_lattice(rays: usize, kind: Option<LatticeKind>, anisotropy: [f64; 3], out: Option<&Path>) -> CliResult {
    if let Some(p) = out {
        check_output(p)?;
    }
    let kind = kind.unwrap_or(LatticeKind::default_for(rays));
    let l = Lattice::with_anisotropy(kind, rays, anisotropy)?;
    let doc = LatticeDoc {
        rays,
        kind,
        anisotropy,
        vertices: l.directions().as_slice().iter().map(|d| [d[0], d[1], d[2]]).collect(),
        edges: &l.topology().edges,
        triangles: &l.topology().triangles,
        control_count: l.control_count(),
        controls: &l.layout().entries,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("lattice serializes");
    text.push('\n');
    emit(out, &text)
}

fn cmd_reconstruct(radius: &[usize], rays: &[usize], kinds: &[ModelKind], out: &Path) -> CliResult {
    check_output(out)?;
    if radius.contains(&0) {
        return Err(Failure::Usage("radii must be at least 1".into()));
    }
    let reports = sweep(radius, rays, kinds)?;
    emit(Some(out), &sweep_csv(&reports))
}

fn cmd_fit(volume: &Path, id: u32, rays: usize, kind: Option<LatticeKind>, level: u32, iterations: usize, out: &Path) -> CliResult {
    check_volume_input(volume)?;
    check_output(out)?;
    let vol = load_volume(volume)?;
    if id == 0 || vol.count(id) == 0 {
        return Err(Failure::Usage(format!("instance {id} not present in {}", volume.display())));
    }
    let targets = object_probabilities(&vol);
    let grid = vol.grid();
    // first voxel in C order attaining the maximum object probability
    let mut best: Option<([usize; 3], f64)> = None;
    for (i, &l) in vol.labels().iter().enumerate() {
        if l == id {
            let v = grid.unravel(i);
            let p = targets.get(v);
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((v, p));
            }
        }
    }
    let (voxel, _) = best.expect("instance has voxels");
    let kind = kind.unwrap_or(LatticeKind::default_for(rays));
    let lattice = Arc::new(Lattice::with_anisotropy(kind, rays, vol.anisotropy())?);
    let init = InstanceShape::uniform(lattice, grid.world_position(voxel), 1.0)?;
    let cfg = FitConfig {
        iterations,
        sample_level: level,
        ..FitConfig::default()
    };
    let fitted = fit_mask(&init, &vol, id, cfg)?;
    emit(Some(out), &(fitted.shape.to_json() + "\n"))
}

fn cmd_voxelize(instance: &Path, shape: [usize; 3], anisotropy: [f64; 3], subdiv: u32, out: &Path) -> CliResult {
    check_output(out)?;
    let inst = read_instance(instance)?;
    let grid = Grid::new(shape, anisotropy)?;
    let vol = voxelize(&inst, grid, subdiv);
    save_volume(&vol, out)?;
    Ok(())
}

fn cmd_export_obj(instance: &Path, subdiv: u32, out: &Path) -> CliResult {
    check_output(out)?;
    let inst = read_instance(instance)?;
    let mesh = inst.to_triangle_mesh(subdiv);
    let mut buf = Vec::new();
    mesh.write_obj(&mut buf).expect("writing to memory");
    fs::write(out, buf).map_err(|e| io_err(out, e))
}

fn cmd_evaluate(truth: &Path, pred: &Path, thresholds: Option<&[f64]>, out: Option<&Path>) -> CliResult {
    check_volume_input(truth)?;
    check_volume_input(pred)?;
    if let Some(p) = out {
        check_output(p)?;
    }
    let t = load_volume(truth)?;
    let p = load_volume(pred)?;
    let taus = thresholds.map(<[f64]>::to_vec).unwrap_or_else(default_thresholds);
    let m = metrics_over_thresholds(&t, &p, &taus)?;
    emit(out, &metrics_csv(&m))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateDoc {
    instance: InstanceRecord,
    prob: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidatesDoc {
    candidates: Vec<CandidateDoc>,
}

#[derive(Serialize)]
struct NmsDoc {
    /// Input positions of the kept candidates, in keep order.
    kept: Vec<usize>,
    candidates: Vec<CandidateDoc>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_nms(
    path: &Path,
    shape: [usize; 3],
    anisotropy: [f64; 3],
    prob_threshold: f64,
    iou_threshold: f64,
    subdiv: u32,
    out: Option<&Path>,
) -> CliResult {
    if let Some(p) = out {
        check_output(p)?;
    }
    let text = read_text(path)?;
    let doc: CandidatesDoc = serde_json::from_str(&text).map_err(|e| schema_err(path, e))?;
    let mut cache = LatticeCache::default();
    let mut list = Vec::with_capacity(doc.candidates.len());
    for (i, c) in doc.candidates.into_iter().enumerate() {
        let shape = c
            .instance
            .into_shape(&mut cache)
            .map_err(|e| schema_err(path, format!("candidate {i}: {e}")))?;
        list.push(Candidate { shape, prob: c.prob });
    }
    let set = CandidateSet::new(list).map_err(|e| schema_err(path, e))?;
    let grid = Grid::new(shape, anisotropy)?;
    let cfg = NmsConfig {
        prob_threshold,
        iou_threshold,
        subdiv,
    };
    let kept = nms_indices(&set, grid, cfg)?;
    let result = NmsDoc {
        candidates: kept
            .iter()
            .map(|&i| CandidateDoc {
                instance: set.candidates[i].shape.to_record(),
                prob: set.candidates[i].prob,
            })
            .collect(),
        kept,
    };
    let mut text = serde_json::to_string_pretty(&result).expect("nms result serializes");
    text.push('\n');
    emit(out, &text)
}

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn cmd_gradcheck(seed: u64, trials: usize, out: Option<&Path>) -> CliResult {
    if let Some(p) = out {
        check_output(p)?;
    }
    let r = gradient_check(seed, trials, GRADCHECK_STEP, GRADCHECK_TOLERANCE);
    let text = format!(
        "seed={seed} trials={} failures={} max_relative_error={:.3e}\n",
        r.trials, r.failures, r.max_relative_error
    );
    emit(out, &text)?;
    if r.failures > 0 {
        return Err(Failure::Numerical(format!(
            "{} of {} trials exceed relative error {GRADCHECK_TOLERANCE:e}",
            r.failures, r.trials
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionDoc {
    voxel: [usize; 3],
    prob: f64,
    instance: InstanceRecord,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionsDoc {
    predictions: Vec<PredictionDoc>,
}

#[derive(Serialize)]
struct VoxelLossDoc {
    voxel: [usize; 3],
    p: f64,
    p_hat: f64,
    object: f64,
    distance: f64,
    total: f64,
}

#[derive(Serialize)]
struct LossDoc {
    config: LossConfig,
    voxels: Vec<VoxelLossDoc>,
    mean: f64,
}

fn cmd_loss_eval(volume: &Path, predictions: &Path, cfg: LossConfig, out: Option<&Path>) -> CliResult {
    check_volume_input(volume)?;
    if let Some(p) = out {
        check_output(p)?;
    }
    cfg.validate()?;
    let vol = load_volume(volume)?;
    let text = read_text(predictions)?;
    let doc: PredictionsDoc = serde_json::from_str(&text).map_err(|e| schema_err(predictions, e))?;
    if doc.predictions.is_empty() {
        return Err(schema_err(predictions, "no predictions"));
    }
    let targets = object_probabilities(&vol);
    let grid = vol.grid();
    let mut cache = LatticeCache::default();
    let mut voxels = Vec::with_capacity(doc.predictions.len());
    for (i, p) in doc.predictions.into_iter().enumerate() {
        let shape = p
            .instance
            .into_shape(&mut cache)
            .map_err(|e| schema_err(predictions, format!("prediction {i}: {e}")))?;
        let pred = VoxelPrediction::new(&grid, p.voxel, p.prob, &shape)?;
        let target = targets.get(p.voxel);
        let terms = voxel_loss_terms(target, &pred, &vol, &cfg)?;
        voxels.push(VoxelLossDoc {
            voxel: p.voxel,
            p: target,
            p_hat: p.prob,
            object: terms.object,
            distance: terms.distance,
            total: terms.total,
        });
    }
    let mean = voxels.iter().map(|v| v.total).sum::<f64>() / voxels.len() as f64;
    let mut text = serde_json::to_string_pretty(&LossDoc { config: cfg, voxels, mean }).expect("loss serializes");
    text.push('\n');
    emit(out, &text)
}

fn configure_threads() -> CliResult {
    let Ok(raw) = std::env::var("SURFDIST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SURFDIST_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Lattice {
            rays,
            kind,
            anisotropy,
            out,
        } => cmd_lattice(rays, kind, anisotropy, out.as_deref()),
        Command::ReconstructSphere {
            radius,
            rays,
            kinds,
            out,
        } => cmd_reconstruct(&radius, &rays, &kinds, &out),
        Command::Fit {
            volume,
            instance,
            rays,
            kind,
            level,
            iterations,
            out,
        } => cmd_fit(&volume, instance, rays, kind, level, iterations, &out),
        Command::Voxelize {
            instance,
            shape,
            anisotropy,
            subdiv,
            out,
        } => cmd_voxelize(&instance, shape, anisotropy, subdiv, &out),
        Command::ExportObj { instance, subdiv, out } => cmd_export_obj(&instance, subdiv, &out),
        Command::Evaluate {
            truth,
            pred,
            thresholds,
            out,
        } => cmd_evaluate(&truth, &pred, thresholds.as_deref(), out.as_deref()),
        Command::Nms {
            candidates,
            shape,
            anisotropy,
            prob_threshold,
            iou_threshold,
            subdiv,
            out,
        } => cmd_nms(
            &candidates,
            shape,
            anisotropy,
            prob_threshold,
            iou_threshold,
            subdiv,
            out.as_deref(),
        ),
        Command::Gradcheck { seed, trials, out } => cmd_gradcheck(seed, trials, out.as_deref()),
        Command::LossEval {
            volume,
            predictions,
            lambda_d,
            lambda_reg,
            level,
            out,
        } => cmd_loss_eval(
            &volume,
            &predictions,
            LossConfig {
                lambda_d,
                lambda_reg,
                sample_level: level,
            },
            out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
