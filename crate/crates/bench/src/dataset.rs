use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use som_core::ingest::PartitionSource;
use som_core::metrics::GtInstance;
use som_core::TaskKind;

use crate::BenchError;

/// Benchmark items for one task. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub task: TaskKind,
    /// Class names offered to the model for open-vocabulary segmentation.
    #[serde(default)]
    pub vocabulary: Vec<String>,
    pub items: Vec<IndexItem>,
}

/// One prompt unit: an image (or the first frame of a clip) with its partition.
///
/// For open-vocabulary segmentation the partition regions carry the
/// ground-truth labels; for video the partition holds the reference
/// objects, keyed by object id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexItem {
    pub id: String,
    pub image: PathBuf,
    pub partition: PartitionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt: Vec<GtInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<VideoFrame>,
}

/// A later frame of a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub image: PathBuf,
    /// Candidate regions the model picks from.
    pub proposals: PartitionSource,
    /// Ground-truth objects, region id = object id.
    pub gt: PartitionSource,
}

impl DatasetIndex {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let bytes = std::fs::read(path).map_err(BenchError::io(path))?;
        let index: DatasetIndex =
            serde_json::from_slice(&bytes).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        index.validate()?;
        Ok(index)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.items.is_empty() {
            return bad("dataset index has no items".into());
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if item.id.is_empty() || !item.id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b)) {
                return bad(format!("item id {:?} must be letters, digits, '.', '_' or '-'", item.id));
            }
            if !seen.insert(item.id.as_str()) {
                return bad(format!("duplicate item id {:?}", item.id));
            }
            match self.task {
                TaskKind::OpenVocabSeg if self.vocabulary.is_empty() => {
                    return bad("open_vocab_seg needs a vocabulary".into());
                }
                TaskKind::ReferringSeg | TaskKind::ReferringComprehension | TaskKind::PhraseGrounding
                    if item.gt.is_empty() =>
                {
                    return bad(format!("item {} has no ground truth", item.id));
                }
                TaskKind::PhraseGrounding if item.caption.is_none() => {
                    return bad(format!("item {} has no caption", item.id));
                }
                TaskKind::VideoObjectSeg if item.frames.is_empty() => {
                    return bad(format!("item {} has no later frames", item.id));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Every path an item reads, resolved against `root`.
    pub fn files(&self, root: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut src = |s: &PartitionSource| match s.resolved(root) {
            PartitionSource::CocoJson { path, .. }
            | PartitionSource::LabelMapPng { path }
            | PartitionSource::RleFile { path } => out.push(path),
            PartitionSource::Remote { .. } => {}
        };
        for item in &self.items {
            src(&item.partition);
            for f in &item.frames {
                src(&f.proposals);
                src(&f.gt);
            }
        }
        for item in &self.items {
            out.push(root.join(&item.image));
            out.extend(item.frames.iter().map(|f| root.join(&f.image)));
        }
        out
    }
}

/// Uniform sample without replacement, in shuffled order.
///
/// Fisher-Yates over a ChaCha8 stream with 64-bit draws, so the result does
/// not depend on the platform's pointer width.
pub fn sample_subset<T: Clone>(population: &[T], sample_size: usize, seed: u64) -> Result<Vec<T>, BenchError> {
    if sample_size > population.len() {
        return Err(BenchError::SampleTooLarge {
            requested: sample_size,
            population: population.len(),
        });
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        order.swap(i, j);
    }
    Ok(order[..sample_size].iter().map(|&i| population[i].clone()).collect())
}
