//! Instance IoU, optimal one-to-one matching, detection and panoptic metrics
//! over IoU thresholds, and greedy non-maximum suppression of candidates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::InstanceShape;
use crate::volume::{voxelize_sparse, Grid, LabelVolume, SparseMask};

fn check_same_grid(a: &LabelVolume, b: &LabelVolume) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

/// IoU of the nonzero voxels of two masks; 0 when both are empty.
pub fn pair_iou(a: &LabelVolume, b: &LabelVolume) -> Result<f64> {
    check_same_grid(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels().iter()) {
        inter += usize::from(x != 0 && y != 0);
        union += usize::from(x != 0 || y != 0);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// IoU between every truth instance (rows) and predicted instance (columns),
/// both in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct IouTable {
    pub truth_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    pub iou: Vec<Vec<f64>>,
}

pub fn iou_table(truth: &LabelVolume, pred: &LabelVolume) -> Result<IouTable> {
    check_same_grid(truth, pred)?;
    let mut t_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut p_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&t, &p) in truth.labels().iter().zip(pred.labels().iter()) {
        if t != 0 {
            *t_count.entry(t).or_default() += 1;
        }
        if p != 0 {
            *p_count.entry(p).or_default() += 1;
        }
        if t != 0 && p != 0 {
            *overlap.entry((t, p)).or_default() += 1;
        }
    }
    let truth_ids: Vec<u32> = t_count.keys().copied().collect();
    let pred_ids: Vec<u32> = p_count.keys().copied().collect();
    let iou = truth_ids
        .iter()
        .map(|t| {
            pred_ids
                .iter()
                .map(|p| {
                    let i = overlap.get(&(*t, *p)).copied().unwrap_or(0);
                    i as f64 / (t_count[t] + p_count[p] - i) as f64
                })
                .collect()
        })
        .collect();
    Ok(IouTable {
        truth_ids,
        pred_ids,
        iou,
    })
}

/// Minimum-cost assignment of every row of a `rows <= cols` cost matrix to
/// a distinct column; returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // 1-based potentials formulation; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub truth: u32,
    pub pred: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub threshold: f64,
    /// Sorted by truth id.
    pub pairs: Vec<MatchedPair>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Pairs maximizing the summed IoU among pairs with IoU at least `tau`.
pub fn match_table(table: &IouTable, tau: f64) -> Result<MatchReport> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "IoU threshold must lie in (0, 1], got {tau}"
        )));
    }
    let nt = table.truth_ids.len();
    let np = table.pred_ids.len();
    let weight = |t: usize, p: usize| {
        let w = table.iou[t][p];
        if w >= tau { w } else { 0.0 }
    };
    let mut pairs = Vec::new();
    if nt > 0 && np > 0 {
        let transpose = nt > np;
        let (rows, cols) = if transpose { (np, nt) } else { (nt, np) };
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|r| {
                (0..cols)
                    .map(|c| if transpose { -weight(c, r) } else { -weight(r, c) })
                    .collect()
            })
            .collect();
        for (r, c) in hungarian(&cost).into_iter().enumerate() {
            let (t, p) = if transpose { (c, r) } else { (r, c) };
            let w = weight(t, p);
            if w > 0.0 {
                pairs.push(MatchedPair {
                    truth: table.truth_ids[t],
                    pred: table.pred_ids[p],
                    iou: w,
                });
            }
        }
    }
    pairs.sort_by_key(|p| p.truth);
    let tp = pairs.len();
    Ok(MatchReport {
        threshold: tau,
        pairs,
        true_positives: tp,
        false_positives: np - tp,
        false_negatives: nt - tp,
    })
}

pub fn match_instances(truth: &LabelVolume, pred: &LabelVolume, tau: f64) -> Result<MatchReport> {
    match_table(&iou_table(truth, pred)?, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub panoptic_quality: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    /// Ratios with `0/0` taken as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, matched_iou_sum: f64) -> Self {
        let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
        Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp, tp + fp + fn_),
            f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
            panoptic_quality: ratio(matched_iou_sum, tp + 0.5 * fp + 0.5 * fn_),
        }
    }

    fn mean(all: &[Metrics]) -> Self {
        let n = all.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Self {
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            accuracy: sum(|m| m.accuracy),
            f1: sum(|m| m.f1),
            panoptic_quality: sum(|m| m.panoptic_quality),
        }
    }
}

pub fn metrics(report: &MatchReport) -> Metrics {
    Metrics::from_counts(
        report.true_positives,
        report.false_positives,
        report.false_negatives,
        report.pairs.iter().map(|p| p.iou).sum(),
    )
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub per_threshold: Vec<(f64, Metrics)>,
    pub mean: Metrics,
}

pub fn metrics_over_thresholds(truth: &LabelVolume, pred: &LabelVolume, taus: &[f64]) -> Result<ThresholdMetrics> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter("no IoU thresholds given".into()));
    }
    let table = iou_table(truth, pred)?;
    let per_threshold = taus
        .iter()
        .map(|&t| match_table(&table, t).map(|r| (t, metrics(&r))))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<Metrics> = per_threshold.iter().map(|(_, m)| *m).collect();
    Ok(ThresholdMetrics {
        mean: Metrics::mean(&all),
        per_threshold,
    })
}

pub const METRICS_CSV_HEADER: &str = "tau,precision,recall,accuracy,f1,pq";

pub fn metrics_csv(m: &ThresholdMetrics) -> String {
    let row = |label: String, x: &Metrics| {
        format!(
            "{label},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            x.precision, x.recall, x.accuracy, x.f1, x.panoptic_quality
        )
    };
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for (t, x) in &m.per_threshold {
        out.push_str(&row(format!("{t:.2}"), x));
    }
    out.push_str(&row("mean".into(), &m.mean));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub shape: InstanceShape,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if let Some(i) = candidates.iter().position(|c| !(0.0..=1.0).contains(&c.prob)) {
            return Err(Error::InvalidParameter(format!(
                "candidate {i} probability {} outside [0, 1]",
                candidates[i].prob
            )));
        }
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NmsConfig {
    pub prob_threshold: f64,
    /// Suppress a candidate whose IoU with a kept one reaches this value;
    /// 1 disables suppression.
    pub iou_threshold: f64,
    pub subdiv: u32,
}

/// Indices of the kept candidates in keep order (descending probability,
/// ties by index).
pub fn nms_indices(cands: &CandidateSet, grid: Grid, cfg: NmsConfig) -> Result<Vec<usize>> {
    for (name, t) in [("prob", cfg.prob_threshold), ("iou", cfg.iou_threshold)] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!(
                "{name} threshold must lie in [0, 1], got {t}"
            )));
        }
    }
    let mut order: Vec<usize> = (0..cands.len())
        .filter(|&i| cands.candidates[i].prob >= cfg.prob_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        cands.candidates[b]
            .prob
            .total_cmp(&cands.candidates[a].prob)
            .then(a.cmp(&b))
    });
    if cfg.iou_threshold >= 1.0 {
        return Ok(order);
    }
    let masks: Vec<SparseMask> = order
        .par_iter()
        .map(|&i| voxelize_sparse(&cands.candidates[i].shape, grid, cfg.subdiv))
        .collect();
    let mut kept: Vec<usize> = Vec::new();
    for k in 0..order.len() {
        if kept.iter().all(|&j| masks[k].iou(&masks[j]) < cfg.iou_threshold) {
            kept.push(k);
        }
    }
    Ok(kept.into_iter().map(|k| order[k]).collect())
}

pub fn nms(cands: &CandidateSet, grid: Grid, cfg: NmsConfig) -> Result<CandidateSet> {
    Ok(CandidateSet {
        candidates: nms_indices(cands, grid, cfg)?
            .into_iter()
            .map(|i| cands.candidates[i].clone())
            .collect(),
    })
}
