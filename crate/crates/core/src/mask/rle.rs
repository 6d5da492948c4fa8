//! COCO-style run-length encoding.
//!
//! Runs are taken over pixels in column-major (Fortran) order and alternate
//! background/foreground starting with background, so the first count may be
//! zero. Only the uncompressed form is ever produced; the compressed string
//! form used by COCO annotation files is accepted on input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BinaryMask, MaskError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RleError {
    #[error("run counts sum to {got}, expected {expected}")]
    BadSum { expected: u64, got: i128 },
    #[error("negative run count at index {0}")]
    NegativeCount(usize),
    #[error("malformed compressed RLE string: {0}")]
    BadCompressed(String),
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(counts: &[i64], width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    let expected = width as u64 * height as u64;
    let mut total: i128 = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c < 0 {
            return Err(RleError::NegativeCount(i).into());
        }
        total += c as i128;
    }
    if total != expected as i128 {
        return Err(RleError::BadSum { expected, got: total }.into());
    }
    let mut mask = BinaryMask::new(width, height)?;
    let h = height as u64;
    let mut pos = 0u64;
    for (i, &c) in counts.iter().enumerate() {
        let c = c as u64;
        if i % 2 == 1 {
            for p in pos..pos + c {
                mask.set((p / h) as u32, (p % h) as u32, true);
            }
        }
        pos += c;
    }
    Ok(mask)
}

/// Decodes the LEB128-like string alphabet used by COCO for compressed RLE.
pub fn decode_compressed_counts(s: &str) -> Result<Vec<i64>, RleError> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            let Some(&b) = bytes.get(i) else {
                return Err(RleError::BadCompressed("truncated run".into()));
            };
            if !(48..48 + 64).contains(&b) {
                return Err(RleError::BadCompressed(format!("byte {b} outside alphabet")));
            }
            if shift > 55 {
                return Err(RleError::BadCompressed("run too long".into()));
            }
            let c = (b - 48) as i64;
            i += 1;
            x |= (c & 0x1f) << shift;
            shift += 5;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Uncompressed(Vec<i64>),
    Compressed(String),
}

/// COCO's `{"size": [h, w], "counts": ...}` object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CocoRle {
    pub size: [u32; 2],
    pub counts: RleCounts,
}

impl CocoRle {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            size: [mask.height(), mask.width()],
            counts: RleCounts::Uncompressed(rle_encode(mask).into_iter().map(i64::from).collect()),
        }
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn to_mask(&self) -> Result<BinaryMask, MaskError> {
        let counts = match &self.counts {
            RleCounts::Uncompressed(c) => c.clone(),
            RleCounts::Compressed(s) => decode_compressed_counts(s)?,
        };
        rle_decode(&counts, self.width(), self.height())
    }
}
