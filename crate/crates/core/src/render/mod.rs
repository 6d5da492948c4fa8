//! Drawing marks onto an image and describing them in a manifest.
//!
//! Everything here is integer arithmetic so that a given input renders to
//! the same bytes on every platform.

pub mod font;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{auto_font_px, MarkLocation};
use crate::mask::{BBox, BinaryMask, RegionSet};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image is {image:?} but regions are {regions:?}")]
    DimensionMismatch { image: (u32, u32), regions: (u32, u32) },
    #[error("mark for region {region_id} at ({x}, {y}) lies outside the image")]
    LocationOutOfBounds { region_id: u32, x: u32, y: u32 },
    #[error("mark locations do not line up with regions: {0}")]
    LocationMismatch(String),
    #[error("invalid style: {0}")]
    BadStyle(String),
    #[error("cannot assign marks to zero regions")]
    NoMarks,
    #[error("duplicate mark text {0:?}")]
    DuplicateMark(String),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkKind {
    NumericLabel,
    AlphabeticLabel,
    MaskFill,
    Contour,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkScheme {
    Numeric,
    Alphabetic,
}

pub const DEFAULT_ALPHA: f64 = 0.4;
/// Lighter fill for scenes with many small regions.
pub const DENSE_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkStyle {
    pub kinds: BTreeSet<MarkKind>,
    pub alpha: f64,
    pub palette_seed: u64,
    /// `None` picks [`auto_font_px`] for the image.
    pub font_px: Option<u32>,
    pub label_halo: bool,
}

impl Default for MarkStyle {
    fn default() -> Self {
        Self {
            kinds: [MarkKind::NumericLabel, MarkKind::MaskFill].into_iter().collect(),
            alpha: DEFAULT_ALPHA,
            palette_seed: 0,
            font_px: None,
            label_halo: true,
        }
    }
}

impl MarkStyle {
    pub fn with_kinds(kinds: &[MarkKind]) -> Self {
        Self {
            kinds: kinds.iter().copied().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.kinds.is_empty() {
            return Err(RenderError::BadStyle("no mark kinds selected".into()));
        }
        let numeric = self.kinds.contains(&MarkKind::NumericLabel);
        let alpha = self.kinds.contains(&MarkKind::AlphabeticLabel);
        if numeric == alpha {
            return Err(RenderError::BadStyle(
                "exactly one of numeric_label / alphabetic_label is required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RenderError::BadStyle(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn scheme(&self) -> MarkScheme {
        if self.kinds.contains(&MarkKind::AlphabeticLabel) {
            MarkScheme::Alphabetic
        } else {
            MarkScheme::Numeric
        }
    }

    pub fn font_px_for(&self, width: u32, height: u32) -> u32 {
        self.font_px.unwrap_or_else(|| auto_font_px(width, height))
    }

    fn has(&self, kind: MarkKind) -> bool {
        self.kinds.contains(&kind)
    }
}

/// `"1".."k"` or `"a".."z", "aa", "ab", ...`.
pub fn assign_mark_ids(k: usize, scheme: MarkScheme) -> Result<Vec<String>, RenderError> {
    if k == 0 {
        return Err(RenderError::NoMarks);
    }
    Ok((1..=k).map(|i| mark_text(i, scheme)).collect())
}

/// The `n`-th (1-based) mark text of a scheme.
pub fn mark_text(n: usize, scheme: MarkScheme) -> String {
    match scheme {
        MarkScheme::Numeric => n.to_string(),
        MarkScheme::Alphabetic => {
            // bijective base 26
            let mut n = n;
            let mut out = Vec::new();
            while n > 0 {
                n -= 1;
                out.push(b'a' + (n % 26) as u8);
                n /= 26;
            }
            out.reverse();
            String::from_utf8(out).expect("ascii")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Color(pub [u8; 3]);

impl Color {
    pub fn luminance(self) -> u32 {
        let [r, g, b] = self.0;
        (299 * r as u32 + 587 * g as u32 + 114 * b as u32) / 1000
    }
}

/// `k` hues evenly spread around the colour wheel, order shuffled by seed.
pub fn choose_colors(k: usize, palette_seed: u64) -> Vec<Color> {
    let mut hues: Vec<f64> = (0..k).map(|i| i as f64 * 360.0 / k as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(palette_seed);
    hues.shuffle(&mut rng);
    hues.into_iter().map(|h| hsv_to_rgb(h, 0.75, 0.95)).collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Color {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to_u8 = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Color([to_u8(r), to_u8(g), to_u8(b)])
}

/// Hue in degrees, used by tests and the playground legend.
pub fn hue_of(c: Color) -> f64 {
    let [r, g, b] = c.0.map(|v| v as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        60.0 * (((g - b) / d).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    h.rem_euclid(360.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub region_id: u32,
    pub mark_text: String,
    pub location: MarkLocation,
    pub color: Color,
    /// Pixels the label may touch, outline included.
    pub label_box: Option<BBox>,
}

/// Machine-readable description of a marked image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub image_width: u32,
    pub image_height: u32,
    pub style: MarkStyle,
}

impl Manifest {
    pub fn mark_texts(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.mark_text.as_str()).collect()
    }

    pub fn region_for_mark(&self, mark: &str) -> Option<u32> {
        self.entries.iter().find(|e| e.mark_text == mark).map(|e| e.region_id)
    }

    pub fn mark_for_region(&self, region_id: u32) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.region_id == region_id)
            .map(|e| e.mark_text.as_str())
    }

    /// Marks are unique and each region of `rs` has exactly one entry.
    pub fn check_against(&self, rs: &RegionSet) -> Result<(), String> {
        let mut texts = HashSet::new();
        for e in &self.entries {
            if !texts.insert(e.mark_text.as_str()) {
                return Err(format!("mark {:?} used twice", e.mark_text));
            }
        }
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.region_id).collect();
        ids.sort_unstable();
        let mut expected = rs.ids();
        expected.sort_unstable();
        if ids != expected {
            return Err(format!("manifest regions {ids:?} != region set {expected:?}"));
        }
        if (self.image_width, self.image_height) != rs.dims() {
            return Err("manifest dimensions differ from region set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedImage {
    pub pixels: RgbImage,
    pub manifest: Manifest,
}

impl MarkedImage {
    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        encode_png(&self.pixels)
    }

    /// Writes `path` and the manifest next to it as `<stem>.som.json`.
    pub fn save(&self, path: &Path) -> Result<PathBuf, RenderError> {
        std::fs::write(path, self.to_png()?)?;
        let manifest_path = manifest_path_for(path);
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| RenderError::Encode(e.to_string()))?;
        std::fs::write(&manifest_path, json)?;
        Ok(manifest_path)
    }
}

pub fn manifest_path_for(image_path: &Path) -> PathBuf {
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image_path.with_file_name(format!("{stem}.som.json"))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, RenderError> {
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out)
}

/// Where a label is drawn: text centred on the location, plus a one-pixel
/// outline, shifted to stay inside the image.
pub fn label_box(x: u32, y: u32, text: &str, font_px: u32, width: u32, height: u32) -> Option<BBox> {
    let scale = font::scale_for(font_px);
    let (tw, th) = font::text_size(text, scale);
    if tw == 0 {
        return None;
    }
    let (bw, bh) = (tw as i64 + 2, th as i64 + 2);
    let place = |c: i64, extent: i64, limit: i64| -> i64 { (c - extent / 2).clamp(0, (limit - extent).max(0)) };
    let left = place(x as i64, bw, width as i64);
    let top = place(y as i64, bh, height as i64);
    BBox::new(
        left as u32,
        top as u32,
        ((left + bw - 1).min(width as i64 - 1)) as u32,
        ((top + bh - 1).min(height as i64 - 1)) as u32,
    )
}

/// Renders with marks `1..k` (or `a..`) assigned in region order.
pub fn render(
    image: &RgbImage,
    rs: &RegionSet,
    locs: &[MarkLocation],
    style: &MarkStyle,
) -> Result<MarkedImage, RenderError> {
    let texts = if rs.is_empty() {
        Vec::new()
    } else {
        assign_mark_ids(rs.len(), style.scheme())?
    };
    render_with_texts(image, rs, locs, &texts, style)
}

pub fn render_with_texts(
    image: &RgbImage,
    rs: &RegionSet,
    locs: &[MarkLocation],
    texts: &[String],
    style: &MarkStyle,
) -> Result<MarkedImage, RenderError> {
    style.validate()?;
    let (w, h) = image.dimensions();
    if (w, h) != rs.dims() {
        return Err(RenderError::DimensionMismatch {
            image: (w, h),
            regions: rs.dims(),
        });
    }
    if locs.len() != rs.len() || texts.len() != rs.len() {
        return Err(RenderError::LocationMismatch(format!(
            "{} regions, {} locations, {} texts",
            rs.len(),
            locs.len(),
            texts.len()
        )));
    }
    let mut seen = HashSet::new();
    for (region, (loc, text)) in rs.regions().iter().zip(locs.iter().zip(texts)) {
        if loc.region_id != region.id() {
            return Err(RenderError::LocationMismatch(format!(
                "location for region {} given where region {} expected",
                loc.region_id,
                region.id()
            )));
        }
        if loc.x >= w || loc.y >= h {
            return Err(RenderError::LocationOutOfBounds {
                region_id: loc.region_id,
                x: loc.x,
                y: loc.y,
            });
        }
        if !seen.insert(text.as_str()) {
            return Err(RenderError::DuplicateMark(text.clone()));
        }
    }

    let colors = choose_colors(rs.len(), style.palette_seed);
    let font_px = style.font_px_for(w, h);
    let mut out = image.clone();
    let alpha_q = (style.alpha * 256.0).round() as u32;

    if style.has(MarkKind::MaskFill) && alpha_q > 0 {
        for (region, &color) in rs.regions().iter().zip(&colors) {
            for (x, y) in region.mask().pixels() {
                let p = out.get_pixel_mut(x, y);
                *p = blend(color, *p, alpha_q);
            }
        }
    }
    if style.has(MarkKind::Contour) {
        for (region, &color) in rs.regions().iter().zip(&colors) {
            for (x, y) in contour(region.mask()).pixels() {
                out.put_pixel(x, y, Rgb(color.0));
            }
        }
    }
    if style.has(MarkKind::Box) {
        for (region, &color) in rs.regions().iter().zip(&colors) {
            if let Some(b) = region.bbox() {
                draw_box_outline(&mut out, b, color, 2);
            }
        }
    }

    let mut entries = Vec::with_capacity(rs.len());
    for ((region, loc), (text, &color)) in rs
        .regions()
        .iter()
        .zip(locs)
        .zip(texts.iter().zip(&colors))
    {
        let lum = mean_luminance(image, region.mask());
        let lbox = label_box(loc.x, loc.y, text, font_px, w, h);
        if let Some(b) = lbox {
            draw_label(&mut out, b, text, font_px, lum, style.label_halo);
        }
        entries.push(ManifestEntry {
            region_id: region.id(),
            mark_text: text.clone(),
            location: *loc,
            color,
            label_box: lbox,
        });
    }

    Ok(MarkedImage {
        pixels: out,
        manifest: Manifest {
            entries,
            image_width: w,
            image_height: h,
            style: style.clone(),
        },
    })
}

/// `(src * a + dst * (256 - a)) >> 8` per channel.
#[inline]
pub fn blend(src: Color, dst: Rgb<u8>, alpha_q: u32) -> Rgb<u8> {
    let a = alpha_q.min(256);
    let mix = |s: u8, d: u8| ((s as u32 * a + d as u32 * (256 - a)) >> 8) as u8;
    Rgb([mix(src.0[0], dst[0]), mix(src.0[1], dst[1]), mix(src.0[2], dst[2])])
}

/// Mask pixels within two steps (8-connected) of the background; pixels
/// beyond the image count as background.
pub fn contour(mask: &BinaryMask) -> BinaryMask {
    let eroded = erode(&erode(mask));
    mask.subtract(&eroded).expect("same dims")
}

fn erode(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (-1i64..=1).all(|dy| (-1i64..=1).all(|dx| mask.get_signed(x as i64 + dx, y as i64 + dy)))
    })
    .expect("nonzero dims")
}

fn draw_box_outline(img: &mut RgbImage, b: BBox, color: Color, thickness: u32) {
    for y in b.y_min..=b.y_max {
        for x in b.x_min..=b.x_max {
            let inner = x >= b.x_min + thickness
                && x + thickness <= b.x_max
                && y >= b.y_min + thickness
                && y + thickness <= b.y_max;
            if !inner {
                img.put_pixel(x, y, Rgb(color.0));
            }
        }
    }
}

fn mean_luminance(image: &RgbImage, mask: &BinaryMask) -> u32 {
    let (mut sum, mut n) = (0u64, 0u64);
    for (x, y) in mask.pixels() {
        let p = image.get_pixel(x, y);
        sum += Color(p.0).luminance() as u64;
        n += 1;
    }
    sum.checked_div(n).unwrap_or(0) as u32
}

const DARK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const CREAM: Rgb<u8> = Rgb([255, 255, 160]);

/// Halo labels: light strokes with a one-pixel dark outline. The stroke is
/// white over dark regions and cream over bright ones. Without halo, the
/// strokes alone are drawn black or white against the region.
fn draw_label(img: &mut RgbImage, b: BBox, text: &str, font_px: u32, region_lum: u32, halo: bool) {
    let scale = font::scale_for(font_px);
    let (ox, oy) = (b.x_min + 1, b.y_min + 1);
    let mut lit = Vec::new();
    font::for_each_pixel(text, scale, |dx, dy| lit.push((ox + dx, oy + dy)));
    let inside = |x: u32, y: u32| b.contains(x, y);
    if halo {
        let fill = if region_lum < 128 { WHITE } else { CREAM };
        let strokes: HashSet<(u32, u32)> = lit.iter().copied().collect();
        for &(x, y) in &lit {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 {
                        continue;
                    }
                    let (nx, ny) = (nx as u32, ny as u32);
                    if inside(nx, ny) && !strokes.contains(&(nx, ny)) {
                        img.put_pixel(nx, ny, DARK);
                    }
                }
            }
        }
        for &(x, y) in &lit {
            if inside(x, y) {
                img.put_pixel(x, y, fill);
            }
        }
    } else {
        let ink = if region_lum >= 128 { DARK } else { WHITE };
        for &(x, y) in &lit {
            if inside(x, y) {
                img.put_pixel(x, y, ink);
            }
        }
    }
}
