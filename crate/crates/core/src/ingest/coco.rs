//! COCO instance annotations.

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::mask::{BinaryMask, CocoRle, Region, RegionSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(CocoRle),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoAnnotation {
    #[serde(default)]
    pub id: Option<u64>,
    pub image_id: u64,
    pub segmentation: CocoSegmentation,
    #[serde(default)]
    pub category_id: Option<u64>,
    #[serde(default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

impl CocoDataset {
    /// Regions for one image, ids 1..K in annotation order, category names as labels.
    pub fn region_set(&self, image_id: u64) -> Result<RegionSet, IngestError> {
        let image = self
            .images
            .iter()
            .find(|i| i.id == image_id)
            .ok_or(IngestError::UnknownImage(image_id))?;
        let (w, h) = (image.width, image.height);
        let mut regions = Vec::new();
        for ann in self.annotations.iter().filter(|a| a.image_id == image_id) {
            let mask = match &ann.segmentation {
                CocoSegmentation::Polygons(polys) => rasterize_polygons(polys, w, h)?,
                CocoSegmentation::Rle(rle) => {
                    if (rle.width(), rle.height()) != (w, h) {
                        return Err(IngestError::DimensionMismatch {
                            declared: (w, h),
                            found: (rle.width(), rle.height()),
                        });
                    }
                    rle.to_mask()?
                }
            };
            let mut region = Region::new(regions.len() as u32 + 1, mask)?;
            if let Some(name) = ann
                .category_id
                .and_then(|c| self.categories.iter().find(|cat| cat.id == c))
            {
                region = region.with_label(name.name.clone());
            }
            if let Some(s) = ann.score {
                region = region.with_score(s)?;
            }
            regions.push(region);
        }
        Ok(RegionSet::new(w, h, regions)?)
    }
}

/// Even-odd fill of each polygon sampled at pixel centres; polygons are unioned.
/// Each polygon is a flat `[x0, y0, x1, y1, ...]` list.
pub fn rasterize_polygons(polys: &[Vec<f64>], width: u32, height: u32) -> Result<BinaryMask, IngestError> {
    let mut mask = BinaryMask::new(width, height)?;
    for poly in polys {
        if poly.len() < 6 || poly.len() % 2 != 0 {
            return Err(IngestError::Malformed {
                what: "polygon".into(),
                message: format!("{} coordinates", poly.len()),
            });
        }
        let pts: Vec<(f64, f64)> = poly.chunks(2).map(|c| (c[0], c[1])).collect();
        let mut xs = Vec::new();
        for y in 0..height {
            let yc = y as f64 + 0.5;
            xs.clear();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                    xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks(2) {
                let [a, b] = pair else { continue };
                // pixel x is inside when its centre lies in [a, b)
                let start = (a - 0.5).ceil().max(0.0);
                let end = (b - 0.5).ceil().min(width as f64);
                let mut x = start;
                while x < end {
                    mask.set(x as u32, y, true);
                    x += 1.0;
                }
            }
        }
    }
    Ok(mask)
}
