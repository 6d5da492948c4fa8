//! Session state and the edits that change it.
//!
//! A [`Session`] is immutable; every edit produces a new one with a higher
//! revision.

use std::collections::HashSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use som_core::alloc::{allocate_marks, compute_residuals, AllocationConfig, MarkLocation};
use som_core::ingest::{PartitionSource, SegmenterResponse};
use som_core::parse::{GroundedAnswer, Triplet};
use som_core::render::{
    assign_mark_ids, encode_png, mark_text, render_with_texts, Manifest, MarkScheme, MarkStyle,
};
use som_core::{Region, RegionSet};

use crate::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    /// Each question starts a new conversation.
    Fresh,
    /// Earlier turns are sent along with each question.
    #[default]
    Accumulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub role: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounded: Option<GroundedAnswer>,
    /// Revision the turn was produced against.
    pub revision: u64,
    /// The marks changed while the answer was in flight.
    #[serde(default)]
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MarkEdit {
    Move { region_id: u32, x: u32, y: u32 },
    Relabel { region_id: u32, mark_text: String },
    Remove { region_id: u32 },
    /// Segment the object under a click and add it as a region.
    Add { x: u32, y: u32 },
    SetStyle { style: MarkStyle },
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub image: RgbImage,
    pub region_set: RegionSet,
    pub source: Option<PartitionSource>,
    /// Aligned with `region_set.regions()`.
    pub locations: Vec<MarkLocation>,
    /// Aligned with `region_set.regions()`.
    pub texts: Vec<String>,
    pub style: MarkStyle,
    pub manifest: Manifest,
    pub preview_png: Vec<u8>,
    pub conversation: Vec<ConversationTurn>,
    pub context: ContextPolicy,
    pub revision: u64,
    /// Revision at which the marks last changed.
    pub marks_revision: u64,
}

pub fn alloc_config(style: &MarkStyle, w: u32, h: u32) -> AllocationConfig {
    AllocationConfig::for_font(style.font_px_for(w, h) as f64)
}

fn check_mark_text(text: &str) -> Result<(), ApiError> {
    if text.is_empty() || text.len() > 8 || !text.chars().all(|c| c.is_ascii_alphanumeric()) {
        return Err(ApiError::BadRequest(format!(
            "mark text {text:?} must be 1 to 8 ASCII letters or digits"
        )));
    }
    Ok(())
}

impl Session {
    pub fn create(
        id: String,
        image: RgbImage,
        region_set: RegionSet,
        source: Option<PartitionSource>,
        style: MarkStyle,
        context: ContextPolicy,
    ) -> Result<Self, ApiError> {
        style.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let (w, h) = image.dimensions();
        let (texts, locations) = if region_set.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let texts = assign_mark_ids(region_set.len(), style.scheme()).map_err(|e| ApiError::Internal(e.to_string()))?;
            let locs = allocate_marks(&region_set, &alloc_config(&style, w, h), &texts)
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            (texts, locs)
        };
        let mut s = Session {
            id,
            image,
            region_set,
            source,
            locations,
            texts,
            style,
            manifest: Manifest {
                entries: Vec::new(),
                image_width: w,
                image_height: h,
                style: MarkStyle::default(),
            },
            preview_png: Vec::new(),
            conversation: Vec::new(),
            context,
            revision: 1,
            marks_revision: 1,
        };
        s.rerender()?;
        Ok(s)
    }

    fn rerender(&mut self) -> Result<(), ApiError> {
        let marked = render_with_texts(&self.image, &self.region_set, &self.locations, &self.texts, &self.style)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        marked
            .manifest
            .check_against(&self.region_set)
            .map_err(ApiError::Internal)?;
        self.preview_png = marked.to_png().map_err(|e| ApiError::Internal(e.to_string()))?;
        self.manifest = marked.manifest;
        Ok(())
    }

    fn index_of(&self, region_id: u32) -> Result<usize, ApiError> {
        self.region_set
            .regions()
            .iter()
            .position(|r| r.id() == region_id)
            .ok_or(ApiError::UnknownRegion(region_id))
    }

    fn bump_marks(&mut self) -> Result<(), ApiError> {
        self.rerender()?;
        self.revision += 1;
        self.marks_revision = self.revision;
        Ok(())
    }

    pub fn move_mark(&self, region_id: u32, x: u32, y: u32) -> Result<Self, ApiError> {
        let i = self.index_of(region_id)?;
        let (w, h) = self.image.dimensions();
        if x >= w || y >= h {
            return Err(ApiError::BadRequest(format!("({x}, {y}) is outside the {w}x{h} image")));
        }
        let residuals = compute_residuals(&self.region_set);
        let residual = residuals
            .for_region(&self.region_set, region_id)
            .ok_or(ApiError::UnknownRegion(region_id))?;
        let mut next = self.clone();
        next.locations[i] = MarkLocation::at_point(region_id, residual, x, y);
        next.bump_marks()?;
        Ok(next)
    }

    pub fn relabel(&self, region_id: u32, text: &str) -> Result<Self, ApiError> {
        let i = self.index_of(region_id)?;
        check_mark_text(text)?;
        if self.texts.iter().enumerate().any(|(j, t)| j != i && t == text) {
            return Err(ApiError::DuplicateMark(text.to_string()));
        }
        let mut next = self.clone();
        next.texts[i] = text.to_string();
        next.bump_marks()?;
        Ok(next)
    }

    pub fn remove(&self, region_id: u32) -> Result<Self, ApiError> {
        let i = self.index_of(region_id)?;
        let mut next = self.clone();
        next.region_set.remove(region_id);
        next.locations.remove(i);
        next.texts.remove(i);
        next.bump_marks()?;
        Ok(next)
    }

    /// Adds `mask` as a new region with the next unused mark.
    pub fn add_region(&self, mask: som_core::BinaryMask) -> Result<Self, ApiError> {
        if mask.dims() != self.image.dimensions() {
            return Err(ApiError::BadRequest("segmented mask does not match the image".into()));
        }
        if mask.is_empty() {
            return Err(ApiError::BadRequest("nothing was segmented at that point".into()));
        }
        let id = self.region_set.next_free_id();
        let mut next = self.clone();
        next.region_set
            .push(Region::new(id, mask).map_err(|e| ApiError::Internal(e.to_string()))?)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let used: HashSet<&str> = self.texts.iter().map(String::as_str).collect();
        let text = (1..)
            .map(|n| mark_text(n, self.style.scheme()))
            .find(|t| !used.contains(t.as_str()))
            .expect("unbounded sequence");
        next.texts.push(text);
        // place the new mark without disturbing the others
        let (w, h) = self.image.dimensions();
        let all = allocate_marks(&next.region_set, &alloc_config(&next.style, w, h), &next.texts)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        next.locations.push(*all.last().expect("new region"));
        next.bump_marks()?;
        Ok(next)
    }

    /// Keeps mark positions. Switching between numbers and letters renames
    /// every mark.
    pub fn set_style(&self, style: MarkStyle) -> Result<Self, ApiError> {
        style.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let mut next = self.clone();
        if style.scheme() != self.style.scheme() && !self.region_set.is_empty() {
            next.texts =
                assign_mark_ids(self.region_set.len(), style.scheme()).map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        next.style = style;
        next.bump_marks()?;
        Ok(next)
    }

    /// Triplets that still point at the same region and mark in this
    /// session.
    pub fn live_triplets(&self, triplets: &[Triplet]) -> Vec<Triplet> {
        triplets
            .iter()
            .filter(|t| self.manifest.mark_for_region(t.region_id) == Some(t.mark_text.as_str()))
            .cloned()
            .collect()
    }

    pub fn scheme(&self) -> MarkScheme {
        self.style.scheme()
    }

    pub fn image_png(&self) -> Result<Vec<u8>, ApiError> {
        encode_png(&self.image).map_err(|e| ApiError::Internal(e.to_string()))
    }
}

/// What `GET /sessions/{id}` returns; enough for a client to rebuild its
/// view without local state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub revision: u64,
    pub marks_revision: u64,
    pub width: u32,
    pub height: u32,
    pub manifest: Manifest,
    pub regions: SegmenterResponse,
    pub conversation: Vec<ConversationTurn>,
    pub context: ContextPolicy,
    pub preview_url: String,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        SessionView {
            id: s.id.clone(),
            revision: s.revision,
            marks_revision: s.marks_revision,
            width: s.image.width(),
            height: s.image.height(),
            manifest: s.manifest.clone(),
            regions: SegmenterResponse::from_region_set(&s.region_set),
            conversation: s.conversation.clone(),
            context: s.context,
            preview_url: format!("/sessions/{}/preview.png?rev={}", s.id, s.revision),
        }
    }
}
