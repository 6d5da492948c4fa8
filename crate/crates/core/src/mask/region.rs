use serde::{Deserialize, Serialize};

use super::{BBox, BinaryMask, MaskError};

/// One element of an image partition. Area and box are derived from the
/// mask at construction and cannot drift from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr", into = "RegionRepr")]
pub struct Region {
    id: u32,
    mask: BinaryMask,
    area: u64,
    bbox: Option<BBox>,
    label: Option<String>,
    score: Option<f64>,
}

impl Region {
    pub fn new(id: u32, mask: BinaryMask) -> Result<Self, MaskError> {
        if id == 0 {
            return Err(MaskError::ZeroRegionId);
        }
        let area = mask.area();
        let bbox = mask.bbox();
        Ok(Self {
            id,
            mask,
            area,
            bbox,
            label: None,
            score: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_score(mut self, score: f64) -> Result<Self, MaskError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MaskError::BadScore(score));
        }
        self.score = Some(score);
        Ok(self)
    }

    pub fn with_id(mut self, id: u32) -> Result<Self, MaskError> {
        if id == 0 {
            return Err(MaskError::ZeroRegionId);
        }
        self.id = id;
        Ok(self)
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.bbox
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn score(&self) -> Option<f64> {
        self.score
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRepr {
    id: u32,
    mask: BinaryMask,
    #[serde(default)]
    area: Option<u64>,
    #[serde(default)]
    bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl TryFrom<RegionRepr> for Region {
    type Error = MaskError;

    fn try_from(r: RegionRepr) -> Result<Self, Self::Error> {
        // area/bbox in the payload are informational; always re-derived
        let mut region = Region::new(r.id, r.mask)?;
        region.label = r.label;
        if let Some(s) = r.score {
            region = region.with_score(s)?;
        }
        Ok(region)
    }
}

impl From<Region> for RegionRepr {
    fn from(r: Region) -> Self {
        Self {
            id: r.id,
            area: Some(r.area),
            bbox: r.bbox,
            mask: r.mask,
            label: r.label,
            score: r.score,
        }
    }
}

/// The partition of one image into regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionSetRepr", into = "RegionSetRepr")]
pub struct RegionSet {
    image_width: u32,
    image_height: u32,
    regions: Vec<Region>,
}

impl RegionSet {
    pub fn new(image_width: u32, image_height: u32, regions: Vec<Region>) -> Result<Self, MaskError> {
        if image_width == 0 || image_height == 0 {
            return Err(MaskError::ZeroSized(image_width, image_height));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &regions {
            let (w, h) = r.mask.dims();
            if (w, h) != (image_width, image_height) {
                return Err(MaskError::DimensionMismatch(w, h, image_width, image_height));
            }
            if !seen.insert(r.id) {
                return Err(MaskError::DuplicateRegionId(r.id));
            }
        }
        Ok(Self {
            image_width,
            image_height,
            regions,
        })
    }

    pub fn empty(image_width: u32, image_height: u32) -> Result<Self, MaskError> {
        Self::new(image_width, image_height, Vec::new())
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.image_width, self.image_height)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.regions.iter().map(|r| r.id).collect()
    }

    pub fn into_regions(self) -> Vec<Region> {
        self.regions
    }

    /// Appends a region, enforcing the set invariants.
    pub fn push(&mut self, region: Region) -> Result<(), MaskError> {
        let (w, h) = region.mask.dims();
        if (w, h) != self.dims() {
            return Err(MaskError::DimensionMismatch(w, h, self.image_width, self.image_height));
        }
        if self.get(region.id).is_some() {
            return Err(MaskError::DuplicateRegionId(region.id));
        }
        self.regions.push(region);
        Ok(())
    }

    pub fn remove(&mut self, id: u32) -> Option<Region> {
        let pos = self.regions.iter().position(|r| r.id == id)?;
        Some(self.regions.remove(pos))
    }

    pub fn next_free_id(&self) -> u32 {
        self.regions.iter().map(|r| r.id).max().unwrap_or(0) + 1
    }
}

#[derive(Serialize, Deserialize)]
struct RegionSetRepr {
    image_width: u32,
    image_height: u32,
    regions: Vec<Region>,
}

impl TryFrom<RegionSetRepr> for RegionSet {
    type Error = MaskError;

    fn try_from(r: RegionSetRepr) -> Result<Self, Self::Error> {
        RegionSet::new(r.image_width, r.image_height, r.regions)
    }
}

impl From<RegionSet> for RegionSetRepr {
    fn from(r: RegionSet) -> Self {
        Self {
            image_width: r.image_width,
            image_height: r.image_height,
            regions: r.regions,
        }
    }
}
