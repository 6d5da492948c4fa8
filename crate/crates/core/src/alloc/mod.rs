//! Mark placement.
//!
//! Regions are visited from smallest to largest area. Each region keeps only
//! the pixels not already claimed by a smaller region (its residual), and its
//! mark goes to the residual pixel farthest from any residual boundary. When
//! the mark glyph would swamp the residual, the mark is pushed just outside
//! the region's box instead.

pub(crate) mod edt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{BBox, BinaryMask, Region, RegionSet};

pub(crate) use edt::squared_distances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("cannot allocate marks for an empty region set")]
    EmptyRegionSet,
    #[error("{texts} mark texts for {regions} regions")]
    TextCountMismatch { texts: usize, regions: usize },
    #[error("invalid allocation config: {0}")]
    BadConfig(String),
}

/// Per-pixel distance to the nearest out-of-mask pixel. Pixels beyond the
/// image bounds count as out-of-mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: u32,
    height: u32,
    squared: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn value(&self, x: u32, y: u32) -> f64 {
        (self.squared_value(x, y) as f64).sqrt()
    }

    pub fn squared_value(&self, x: u32, y: u32) -> u64 {
        self.squared[y as usize * self.width as usize + x as usize]
    }

    /// Distances in row-major order.
    pub fn values(&self) -> Vec<f64> {
        self.squared.iter().map(|&d| (d as f64).sqrt()).collect()
    }

    /// Farthest-from-boundary pixel; the first one in row-major order wins ties.
    /// `None` for an all-zero field.
    pub fn argmax(&self) -> Option<(u32, u32, u64)> {
        let mut best: Option<(usize, u64)> = None;
        for (i, &d) in self.squared.iter().enumerate() {
            if d > 0 && best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        let w = self.width as usize;
        best.map(|(i, d)| ((i % w) as u32, (i / w) as u32, d))
    }
}

pub fn distance_transform(mask: &BinaryMask) -> DistanceField {
    let (w, h) = mask.dims();
    let background: Vec<bool> = mask.bits().iter().map(|&b| !b).collect();
    DistanceField {
        width: w,
        height: h,
        squared: squared_distances(w as usize, h as usize, &background, true),
    }
}

/// Residual masks of a region set, listed in the set's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub masks: Vec<BinaryMask>,
    /// Region ids in the order they were processed (ascending area, then id).
    pub processing_order: Vec<u32>,
}

impl Residuals {
    pub fn for_region(&self, rs: &RegionSet, id: u32) -> Option<&BinaryMask> {
        rs.regions()
            .iter()
            .position(|r| r.id() == id)
            .map(|i| &self.masks[i])
    }
}

fn processing_order(regions: &[Region]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by_key(|&i| (regions[i].area(), regions[i].id()));
    order
}

pub fn compute_residuals(rs: &RegionSet) -> Residuals {
    let regions = rs.regions();
    let order = processing_order(regions);
    let (w, h) = rs.dims();
    let mut covered = BinaryMask::new(w, h).expect("region set dims are nonzero");
    let mut masks = vec![None; regions.len()];
    for &i in &order {
        let mask = regions[i].mask();
        masks[i] = Some(mask.subtract(&covered).expect("same dims"));
        covered.union_in_place(mask).expect("same dims");
    }
    Residuals {
        masks: masks.into_iter().map(|m| m.expect("every index visited")).collect(),
        processing_order: order.iter().map(|&i| regions[i].id()).collect(),
    }
}

/// Estimated rendered size of a mark label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphEstimate {
    /// Width per character.
    pub char_width: f64,
    pub height: f64,
}

impl GlyphEstimate {
    pub const WIDTH_RATIO: f64 = 0.62;

    pub fn for_font(font_px: f64) -> Self {
        Self {
            char_width: Self::WIDTH_RATIO * font_px,
            height: font_px,
        }
    }

    pub fn area_for(&self, text: &str) -> f64 {
        self.char_width * text.chars().count() as f64 * self.height
    }
}

/// Font size used for marks on an image of the given size: one
/// twenty-fifth of the shorter side, clamped to [12, 48].
pub fn auto_font_px(width: u32, height: u32) -> u32 {
    (width.min(height) / 25).clamp(12, 48)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub glyph_box_estimate: GlyphEstimate,
    /// Largest fraction of the residual a mark may cover before it moves off-region.
    pub coverage_limit: f64,
    pub off_region_offset: f64,
}

impl AllocationConfig {
    pub fn for_font(font_px: f64) -> Self {
        let glyph = GlyphEstimate::for_font(font_px);
        Self {
            glyph_box_estimate: glyph,
            coverage_limit: 0.8,
            off_region_offset: 1.2 * glyph.height,
        }
    }

    pub fn for_image(width: u32, height: u32) -> Self {
        Self::for_font(auto_font_px(width, height) as f64)
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.coverage_limit > 0.0 && self.coverage_limit <= 1.0) {
            return Err(AllocError::BadConfig(format!(
                "coverage_limit {} outside (0, 1]",
                self.coverage_limit
            )));
        }
        let g = self.glyph_box_estimate;
        if !(g.char_width > 0.0 && g.height > 0.0) || self.off_region_offset.is_nan() || self.off_region_offset < 0.0 {
            return Err(AllocError::BadConfig("glyph sizes must be positive".into()));
        }
        Ok(())
    }
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self::for_font(12.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkLocation {
    pub region_id: u32,
    pub x: u32,
    pub y: u32,
    pub off_region: bool,
    /// Distance-transform value at (x, y); 0 when off-region.
    pub clearance: f64,
}

impl MarkLocation {
    /// Location for a user-chosen point, with off-region status and
    /// clearance recomputed against the region's residual.
    pub fn at_point(region_id: u32, residual: &BinaryMask, x: u32, y: u32) -> Self {
        if residual.get(x, y) {
            let field = distance_transform(residual);
            Self {
                region_id,
                x,
                y,
                off_region: false,
                clearance: field.value(x, y),
            }
        } else {
            Self {
                region_id,
                x,
                y,
                off_region: true,
                clearance: 0.0,
            }
        }
    }
}

pub fn allocate_marks(
    rs: &RegionSet,
    cfg: &AllocationConfig,
    mark_texts: &[String],
) -> Result<Vec<MarkLocation>, AllocError> {
    cfg.validate()?;
    if rs.is_empty() {
        return Err(AllocError::EmptyRegionSet);
    }
    if mark_texts.len() != rs.len() {
        return Err(AllocError::TextCountMismatch {
            texts: mark_texts.len(),
            regions: rs.len(),
        });
    }
    let residuals = compute_residuals(rs);
    Ok(rs
        .regions()
        .iter()
        .zip(&residuals.masks)
        .zip(mark_texts)
        .map(|((region, residual), text)| place(region, residual, text, cfg, rs.dims()))
        .collect())
}

fn place(
    region: &Region,
    residual: &BinaryMask,
    text: &str,
    cfg: &AllocationConfig,
    (w, h): (u32, u32),
) -> MarkLocation {
    let field = distance_transform(residual);
    let peak = field.argmax();
    let residual_area = residual.area() as f64;
    let glyph_area = cfg.glyph_box_estimate.area_for(text);
    if let Some((x, y, sq)) = peak {
        if glyph_area <= cfg.coverage_limit * residual_area {
            return MarkLocation {
                region_id: region.id(),
                x,
                y,
                off_region: false,
                clearance: (sq as f64).sqrt(),
            };
        }
    }
    let Some(bbox) = region.bbox() else {
        return MarkLocation {
            region_id: region.id(),
            x: w / 2,
            y: h / 2,
            off_region: true,
            clearance: 0.0,
        };
    };
    let anchor = peak.map_or(
        ((bbox.x_min + bbox.x_max) / 2, (bbox.y_min + bbox.y_max) / 2),
        |(x, y, _)| (x, y),
    );
    let (x, y) = off_region_point(bbox, anchor, cfg.off_region_offset, w, h);
    MarkLocation {
        region_id: region.id(),
        x,
        y,
        off_region: true,
        clearance: 0.0,
    }
}

/// Nearest point just outside `bbox` from `anchor`, pushed a further
/// `offset` pixels outward and clamped to the image. Sides that touch the
/// image border are skipped; ties prefer above, below, left, right.
fn off_region_point(bbox: BBox, anchor: (u32, u32), offset: f64, w: u32, h: u32) -> (u32, u32) {
    let (ax, ay) = (anchor.0 as i64, anchor.1 as i64);
    let (x0, y0, x1, y1) = (
        bbox.x_min as i64,
        bbox.y_min as i64,
        bbox.x_max as i64,
        bbox.y_max as i64,
    );
    let push = |edge: i64, dir: f64| (edge as f64 + dir * offset).round() as i64;
    let mut candidates: Vec<(i64, (i64, i64))> = Vec::with_capacity(4);
    if y0 >= 1 {
        candidates.push((ay - y0 + 1, (ax, push(y0 - 1, -1.0))));
    }
    if y1 + 1 < h as i64 {
        candidates.push((y1 - ay + 1, (ax, push(y1 + 1, 1.0))));
    }
    if x0 >= 1 {
        candidates.push((ax - x0 + 1, (push(x0 - 1, -1.0), ay)));
    }
    if x1 + 1 < w as i64 {
        candidates.push((x1 - ax + 1, (push(x1 + 1, 1.0), ay)));
    }
    // min_by_key keeps the first minimum, which encodes the tie order
    let (px, py) = candidates
        .into_iter()
        .min_by_key(|&(d, _)| d)
        .map_or((ax, ay), |(_, p)| p);
    (
        px.clamp(0, w as i64 - 1) as u32,
        py.clamp(0, h as i64 - 1) as u32,
    )
}

#[cfg(test)]
mod tests;
