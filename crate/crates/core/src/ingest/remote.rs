//! Wire format of the external segmenter service.
//!
//! Request: `{image: base64 PNG, mode, points?, granularity?}`.
//! Response: `{regions: [{rle, score?, label?}], width, height}` or
//! `{error: "..."}`. The same response shape doubles as the on-disk
//! region file format.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::mask::{CocoRle, Region, RegionSet};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmenterMode {
    #[default]
    Automatic,
    /// Click points `(x, y)`; the service returns regions containing them.
    InteractivePoints { points: Vec<[u32; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterRequest {
    /// Base64-encoded PNG.
    pub image: String,
    /// `"automatic"` or `"interactive"`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[u32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<String>,
}

impl SegmenterRequest {
    pub fn new(image_base64: String, mode: &SegmenterMode, granularity: Option<String>) -> Self {
        let (mode, points) = match mode {
            SegmenterMode::Automatic => ("automatic", None),
            SegmenterMode::InteractivePoints { points } => ("interactive", Some(points.clone())),
        };
        Self {
            image: image_base64,
            mode: mode.to_string(),
            points,
            granularity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRegion {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    pub rle: CocoRle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterResponse {
    pub width: u32,
    pub height: u32,
    pub regions: Vec<WireRegion>,
}

impl SegmenterResponse {
    pub fn from_region_set(rs: &RegionSet) -> Self {
        Self {
            width: rs.image_width(),
            height: rs.image_height(),
            regions: rs
                .regions()
                .iter()
                .map(|r| WireRegion {
                    id: Some(r.id()),
                    rle: CocoRle::from_mask(r.mask()),
                    score: r.score(),
                    label: r.label().map(str::to_string),
                })
                .collect(),
        }
    }

    /// Regions missing an id get their 1-based position.
    pub fn into_region_set(self) -> Result<RegionSet, IngestError> {
        let mut regions = Vec::with_capacity(self.regions.len());
        for (i, wr) in self.regions.into_iter().enumerate() {
            if (wr.rle.width(), wr.rle.height()) != (self.width, self.height) {
                return Err(IngestError::DimensionMismatch {
                    declared: (self.width, self.height),
                    found: (wr.rle.width(), wr.rle.height()),
                });
            }
            let mut region = Region::new(wr.id.unwrap_or(i as u32 + 1), wr.rle.to_mask()?)?;
            if let Some(l) = wr.label {
                region = region.with_label(l);
            }
            if let Some(s) = wr.score {
                region = region.with_score(s)?;
            }
            regions.push(region);
        }
        Ok(RegionSet::new(self.width, self.height, regions)?)
    }
}

/// Error body a segmenter may return instead of regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterErrorBody {
    pub error: String,
}
