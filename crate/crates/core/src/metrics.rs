//! Scores for the benchmarked tasks.
//!
//! Instances without an answer always score 0; they are never dropped
//! from the denominator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::edt::squared_distances;
use crate::mask::{mask_to_box, BBox, BinaryMask, MaskError, RegionSet};
use crate::parse::{select_region, Triplet};
use crate::task::TaskKind;

pub const HIT_IOU: f64 = 0.5;
/// Boundary tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE: f64 = 0.008;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("instance {id} lacks {field}")]
    MissingField { id: String, field: &'static str },
    #[error("prediction has {pred} frames, ground truth {gt}")]
    FrameCountMismatch { pred: usize, gt: usize },
    #[error("frame {frame}: object {object} is not in the ground truth")]
    UnknownObject { frame: usize, object: u32 },
    #[error("need at least one frame after the reference frame")]
    NoScoredFrames,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub id: String,
    pub task: TaskKind,
    /// The marked region this instance describes, for per-region tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<BinaryMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
}

impl GtInstance {
    pub fn new(id: impl Into<String>, task: TaskKind) -> Self {
        Self {
            id: id.into(),
            task,
            region_id: None,
            gt_mask: None,
            gt_box: None,
            gt_label: None,
            phrase: None,
        }
    }

    fn need<'a, T>(&self, v: &'a Option<T>, field: &'static str) -> Result<&'a T, MetricError> {
        v.as_ref().ok_or_else(|| MetricError::MissingField {
            id: self.id.clone(),
            field,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "Precision")]
    Precision,
    #[serde(rename = "Recall@1")]
    RecallAt1,
    #[serde(rename = "mIoU")]
    MeanIou,
    #[serde(rename = "ACC@0.5")]
    AccAt05,
    #[serde(rename = "J&F")]
    JAndF,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Precision => "Precision",
            Self::RecallAt1 => "Recall@1",
            Self::MeanIou => "mIoU",
            Self::AccAt05 => "ACC@0.5",
            Self::JAndF => "J&F",
        }
    }

    pub fn for_task(task: TaskKind) -> Option<Self> {
        match task {
            TaskKind::OpenVocabSeg => Some(Self::Precision),
            TaskKind::ReferringSeg => Some(Self::MeanIou),
            TaskKind::ReferringComprehension => Some(Self::AccAt05),
            TaskKind::PhraseGrounding => Some(Self::RecallAt1),
            TaskKind::VideoObjectSeg => Some(Self::JAndF),
            TaskKind::FreeChat => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub score: f64,
    pub matched_region_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub metric: MetricKind,
    pub n_instances: usize,
    /// Mean of `per_instance` scores; 0 when there are none.
    pub value: f64,
    pub per_instance: Vec<InstanceScore>,
}

impl MetricReport {
    pub fn from_scores(task: TaskKind, metric: MetricKind, per_instance: Vec<InstanceScore>) -> Self {
        Self {
            task,
            metric,
            n_instances: per_instance.len(),
            value: mean(per_instance.iter().map(|s| s.score)),
            per_instance,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// One row per report, columns aligned.
pub fn format_table(reports: &[MetricReport]) -> String {
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.task.to_string(),
                r.metric.as_str().to_string(),
                r.n_instances.to_string(),
                format!("{:.1}", r.value * 100.0),
            ]
        })
        .collect();
    let header = ["task", "metric", "n", "score"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}",
            row[0],
            row[1],
            row[2],
            row[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    }
    out
}

/// Lowercase, trim and collapse inner whitespace.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn precision_classification(
    triplets: &[Triplet],
    gts: &[GtInstance],
    vocabulary: &[String],
) -> Result<MetricReport, MetricError> {
    if vocabulary.is_empty() {
        return Err(MetricError::EmptyVocabulary);
    }
    let mut scores = Vec::with_capacity(gts.len());
    for gt in gts {
        let region = *gt.need(&gt.region_id, "region_id")?;
        let label = normalize_label(gt.need(&gt.gt_label, "gt_label")?);
        let predicted = triplets.iter().find(|t| t.region_id == region);
        let correct = predicted.is_some_and(|t| normalize_label(&t.payload) == label);
        scores.push(InstanceScore {
            id: gt.id.clone(),
            score: if correct { 1.0 } else { 0.0 },
            matched_region_id: predicted.map(|t| t.region_id),
        });
    }
    Ok(MetricReport::from_scores(TaskKind::OpenVocabSeg, MetricKind::Precision, scores))
}

fn selected<'a>(
    triplets: &[Triplet],
    gt: &GtInstance,
    single: bool,
    rs: &'a RegionSet,
) -> Result<Option<(u32, &'a BinaryMask)>, MetricError> {
    let phrase = gt.need(&gt.phrase, "phrase")?;
    Ok(select_region(triplets, phrase, single).and_then(|id| rs.get(id).map(|r| (id, r.mask()))))
}

fn box_hits(
    task: TaskKind,
    metric: MetricKind,
    triplets: &[Triplet],
    gts: &[GtInstance],
    rs: &RegionSet,
) -> Result<MetricReport, MetricError> {
    let single = gts.len() == 1;
    let mut scores = Vec::with_capacity(gts.len());
    for gt in gts {
        let gt_box = *gt.need(&gt.gt_box, "gt_box")?;
        let sel = selected(triplets, gt, single, rs)?;
        let hit = sel
            .and_then(|(_, m)| mask_to_box(m))
            .is_some_and(|b| b.iou(&gt_box) >= HIT_IOU);
        scores.push(InstanceScore {
            id: gt.id.clone(),
            score: if hit { 1.0 } else { 0.0 },
            matched_region_id: sel.map(|(id, _)| id),
        });
    }
    Ok(MetricReport::from_scores(task, metric, scores))
}

/// Each phrase is a hit when its region's box overlaps the truth by at
/// least [`HIT_IOU`].
pub fn recall_at_1(triplets: &[Triplet], gts: &[GtInstance], rs: &RegionSet) -> Result<MetricReport, MetricError> {
    box_hits(TaskKind::PhraseGrounding, MetricKind::RecallAt1, triplets, gts, rs)
}

pub fn acc_at_05(triplets: &[Triplet], gts: &[GtInstance], rs: &RegionSet) -> Result<MetricReport, MetricError> {
    box_hits(TaskKind::ReferringComprehension, MetricKind::AccAt05, triplets, gts, rs)
}

pub fn miou_referring(triplets: &[Triplet], gts: &[GtInstance], rs: &RegionSet) -> Result<MetricReport, MetricError> {
    let single = gts.len() == 1;
    let mut scores = Vec::with_capacity(gts.len());
    for gt in gts {
        let gt_mask = gt.need(&gt.gt_mask, "gt_mask")?;
        let sel = selected(triplets, gt, single, rs)?;
        let score = match sel {
            Some((_, m)) => m.iou(gt_mask)?,
            None => 0.0,
        };
        scores.push(InstanceScore {
            id: gt.id.clone(),
            score,
            matched_region_id: sel.map(|(id, _)| id),
        });
    }
    Ok(MetricReport::from_scores(TaskKind::ReferringSeg, MetricKind::MeanIou, scores))
}

/// Foreground pixels with a 4-neighbour in the background; pixels past
/// the edge count as background.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        mask.get_signed(x, y)
            && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(dx, dy)| !mask.get_signed(x + dx, y + dy))
    })
    .expect("nonzero dims")
}

pub fn tolerance_radius(width: u32, height: u32) -> f64 {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    (BOUNDARY_TOLERANCE * diag).ceil()
}

/// Fraction of `from` pixels lying within `radius` of some `to` pixel.
fn matched_fraction(from: &BinaryMask, to: &BinaryMask, radius: f64) -> f64 {
    let (w, h) = to.dims();
    let d2 = squared_distances(w as usize, h as usize, to.bits(), false);
    let r2 = radius * radius;
    let total = from.area();
    let hits = from
        .pixels()
        .filter(|&(x, y)| (d2[(y * w + x) as usize] as f64) <= r2)
        .count();
    hits as f64 / total as f64
}

/// Boundary F-measure with the given matching radius.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, radius: f64) -> Result<f64, MetricError> {
    if pred.dims() != gt.dims() {
        let (a, b) = (pred.dims(), gt.dims());
        return Err(MaskError::DimensionMismatch(a.0, a.1, b.0, b.1).into());
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, radius);
    let recall = matched_fraction(&bg, &bp, radius);
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Masks of each tracked object in one frame.
pub type FrameMasks = BTreeMap<u32, BinaryMask>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JfScore {
    pub j: f64,
    pub f: f64,
    /// Per (object, frame) entries score `(j + f) / 2`.
    pub report: MetricReport,
}

pub fn jf_score(pred: &[FrameMasks], gt: &[FrameMasks]) -> Result<JfScore, MetricError> {
    let radius = gt
        .iter()
        .flat_map(|f| f.values())
        .next()
        .map(|m| tolerance_radius(m.width(), m.height()))
        .unwrap_or(1.0);
    jf_score_with_radius(pred, gt, radius)
}

/// Frame 0 is the reference and is not scored. Objects missing from a
/// predicted frame count as empty predictions.
pub fn jf_score_with_radius(pred: &[FrameMasks], gt: &[FrameMasks], radius: f64) -> Result<JfScore, MetricError> {
    if pred.len() != gt.len() {
        return Err(MetricError::FrameCountMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.len() < 2 {
        return Err(MetricError::NoScoredFrames);
    }
    let mut js = Vec::new();
    let mut fs = Vec::new();
    let mut scores = Vec::new();
    for (frame, (p, g)) in pred.iter().zip(gt).enumerate().skip(1) {
        if let Some(&object) = p.keys().find(|k| !g.contains_key(k)) {
            return Err(MetricError::UnknownObject { frame, object });
        }
        for (&object, gm) in g {
            let empty;
            let pm = match p.get(&object) {
                Some(m) => m,
                None => {
                    empty = BinaryMask::new(gm.width(), gm.height())?;
                    &empty
                }
            };
            let j = pm.iou(gm)?;
            let f = boundary_f(pm, gm, radius)?;
            js.push(j);
            fs.push(f);
            scores.push(InstanceScore {
                id: format!("frame{frame}/object{object}"),
                score: (j + f) / 2.0,
                matched_region_id: Some(object),
            });
        }
    }
    Ok(JfScore {
        j: mean(js.into_iter()),
        f: mean(fs.into_iter()),
        report: MetricReport::from_scores(TaskKind::VideoObjectSeg, MetricKind::JAndF, scores),
    })
}
