//! Building a [`RegionSet`] from annotation files or a segmenter service,
//! and pruning it before marks are allocated.

mod coco;
pub mod remote;

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BinaryMask, MaskError, Region, RegionSet};

pub use coco::{rasterize_polygons, CocoAnnotation, CocoDataset, CocoImage, CocoSegmentation};
pub use remote::{SegmenterMode, SegmenterRequest, SegmenterResponse, WireRegion};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("cannot parse {what}: {message}")]
    Malformed { what: String, message: String },
    #[error("partition is {found:?} but the image is {declared:?}")]
    DimensionMismatch { declared: (u32, u32), found: (u32, u32) },
    #[error("partition contains no regions")]
    EmptyPartition,
    #[error("image id {0} not found in annotation file")]
    UnknownImage(u64),
    #[error("remote sources must be fetched through a segmenter client")]
    RemoteSource,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Where a partition comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSource {
    CocoJson { path: PathBuf, image_id: u64 },
    LabelMapPng { path: PathBuf },
    RleFile { path: PathBuf },
    Remote {
        endpoint: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        granularity: Option<String>,
        #[serde(default)]
        mode: SegmenterMode,
    },
}

impl PartitionSource {
    /// Paths are resolved against `root` when relative.
    pub fn resolved(&self, root: &Path) -> PartitionSource {
        let fix = |p: &PathBuf| if p.is_absolute() { p.clone() } else { root.join(p) };
        match self {
            PartitionSource::CocoJson { path, image_id } => PartitionSource::CocoJson {
                path: fix(path),
                image_id: *image_id,
            },
            PartitionSource::LabelMapPng { path } => PartitionSource::LabelMapPng { path: fix(path) },
            PartitionSource::RleFile { path } => PartitionSource::RleFile { path: fix(path) },
            other => other.clone(),
        }
    }
}

/// Command-line form: `coco:PATH#IMAGE_ID`, `labelmap:PATH`, `rle:PATH` or
/// `remote:URL`.
impl std::str::FromStr for PartitionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("source {s:?} lacks a kind prefix"))?;
        match kind {
            "coco" => {
                let (path, id) = rest
                    .rsplit_once('#')
                    .ok_or_else(|| "coco source needs PATH#IMAGE_ID".to_string())?;
                let image_id = id.parse().map_err(|_| format!("bad image id {id:?}"))?;
                Ok(PartitionSource::CocoJson {
                    path: path.into(),
                    image_id,
                })
            }
            "labelmap" => Ok(PartitionSource::LabelMapPng { path: rest.into() }),
            "rle" => Ok(PartitionSource::RleFile { path: rest.into() }),
            "remote" => Ok(PartitionSource::Remote {
                endpoint: rest.to_string(),
                granularity: None,
                mode: SegmenterMode::Automatic,
            }),
            other => Err(format!("unknown source kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub score_threshold: f64,
    pub dedupe_iou: f64,
    pub max_regions: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.27,
            dedupe_iou: 0.9,
            max_regions: 50,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("score_threshold", self.score_threshold), ("dedupe_iou", self.dedupe_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.max_regions == 0 {
            return Err("max_regions must be at least 1".into());
        }
        Ok(())
    }
}

pub fn load_regions(source: &PartitionSource, image_dims: (u32, u32)) -> Result<RegionSet, IngestError> {
    let rs = match source {
        PartitionSource::CocoJson { path, image_id } => {
            let bytes = read(path)?;
            let ds: CocoDataset = serde_json::from_slice(&bytes).map_err(|e| IngestError::Malformed {
                what: path.display().to_string(),
                message: e.to_string(),
            })?;
            ds.region_set(*image_id)?
        }
        PartitionSource::LabelMapPng { path } => {
            let bytes = read(path)?;
            label_map_regions(&bytes)?
        }
        PartitionSource::RleFile { path } => {
            let bytes = read(path)?;
            let resp: SegmenterResponse =
                serde_json::from_slice(&bytes).map_err(|e| IngestError::Malformed {
                    what: path.display().to_string(),
                    message: e.to_string(),
                })?;
            resp.into_region_set()?
        }
        PartitionSource::Remote { .. } => return Err(IngestError::RemoteSource),
    };
    if rs.dims() != image_dims {
        return Err(IngestError::DimensionMismatch {
            declared: image_dims,
            found: rs.dims(),
        });
    }
    if rs.is_empty() {
        return Err(IngestError::EmptyPartition);
    }
    Ok(rs)
}

fn read(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|e| IngestError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// One region per distinct nonzero pixel value; the value is the region id.
/// Grayscale values are used as-is, colour pixels pack as `r | g << 8 | b << 16`.
pub fn label_map_regions(png: &[u8]) -> Result<RegionSet, IngestError> {
    let img = image::load_from_memory(png).map_err(|e| IngestError::Malformed {
        what: "label map".into(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width(), img.height());
    let values: Vec<u32> = match &img {
        image::DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p[0] as u32).collect(),
        image::DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p[0] as u32).collect(),
        image::DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p[0] as u32).collect(),
        image::DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| p[0] as u32).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| p[0] as u32 | (p[1] as u32) << 8 | (p[2] as u32) << 16)
            .collect(),
    };
    label_values_to_regions(w, h, &values)
}

pub fn label_values_to_regions(w: u32, h: u32, values: &[u32]) -> Result<RegionSet, IngestError> {
    let mut ids: Vec<u32> = values.iter().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let regions = ids
        .into_iter()
        .map(|id| {
            let bits = values.iter().map(|&v| v == id).collect();
            Region::new(id, BinaryMask::from_bits(w, h, bits)?)
        })
        .collect::<Result<Vec<_>, MaskError>>()?;
    Ok(RegionSet::new(w, h, regions)?)
}

fn by_priority(a: &Region, b: &Region) -> Ordering {
    let sa = a.score().unwrap_or(1.0);
    let sb = b.score().unwrap_or(1.0);
    sb.total_cmp(&sa)
        .then(b.area().cmp(&a.area()))
        .then(a.id().cmp(&b.id()))
}

/// Score threshold, overlap dedupe, size cap, then ids 1..K by descending area.
/// Unscored regions pass the threshold and rank as fully confident.
pub fn filter_regions(rs: &RegionSet, cfg: &IngestConfig) -> RegionSet {
    let mut candidates: Vec<&Region> = rs
        .regions()
        .iter()
        .filter(|r| r.score().is_none_or(|s| s >= cfg.score_threshold))
        .collect();
    candidates.sort_by(|a, b| by_priority(a, b));

    let mut kept: Vec<&Region> = Vec::new();
    for r in candidates {
        let duplicate = kept
            .iter()
            .any(|k| k.mask().iou(r.mask()).expect("same set") >= cfg.dedupe_iou);
        if !duplicate {
            kept.push(r);
        }
    }

    kept.sort_by(|a, b| b.area().cmp(&a.area()).then(a.id().cmp(&b.id())));
    kept.truncate(cfg.max_regions);
    let regions = kept
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.clone().with_id(i as u32 + 1).expect("positive id"))
        .collect();
    RegionSet::new(rs.image_width(), rs.image_height(), regions).expect("subset of a valid set")
}

#[cfg(test)]
mod tests;
