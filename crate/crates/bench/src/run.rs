use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use som_core::alloc::{allocate_marks, AllocationConfig};
use som_core::ingest::{filter_regions, load_regions, PartitionSource};
use som_core::metrics::{
    acc_at_05, jf_score, miou_referring, precision_classification, recall_at_1, FrameMasks, GtInstance,
    InstanceScore, MetricReport,
};
use som_core::parse::{bind_triplets, parse_response, GroundedAnswer};
use som_core::prompt::{build_task_prompt_with, with_format_hint, PromptSpec, TaskInputs, Templates};
use som_core::render::{assign_mark_ids, render_with_texts, Manifest, MarkedImage};
use som_core::{RegionSet, TaskKind};
use som_gateway::{
    CacheKey, CacheMode, ChatRequest, ChatTransport, DiskCache, Gateway, GatewayError, SegmenterClient,
};

use crate::dataset::{sample_subset, DatasetIndex, IndexItem};
use crate::report::{aggregate_report, write_report};
use crate::{BenchError, BenchSpec};

const SEGMENTER_TIMEOUT: Duration = Duration::from_secs(120);

/// The parts of a chat response that do not vary between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub text: String,
    pub model_echo: String,
    pub cache_key: CacheKey,
}

/// One prompt and its answer. Video items have one per later frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    /// Paths relative to the run directory, in attachment order.
    pub marked_images: Vec<String>,
    /// The manifest the answer was bound against.
    pub manifest: Manifest,
    pub prompt: PromptSpec,
    pub response: ResponseRecord,
    pub grounded: GroundedAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub task: TaskKind,
    pub model: String,
    pub exchanges: Vec<Exchange>,
    pub scores: Vec<InstanceScore>,
}

/// An item that did not produce a record. Scored as misses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub instance_id: String,
    pub task: TaskKind,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub error: String,
    /// Score ids this item would have produced.
    pub expected: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub sampled: usize,
    pub written: usize,
    pub skipped: usize,
    pub failures: Vec<FailureRecord>,
    pub network_calls: u64,
    /// Absent when no item succeeded.
    pub reports: Option<(Vec<MetricReport>, String)>,
}

pub fn run_dir_for(spec: &BenchSpec, out: &Path) -> PathBuf {
    out.join("runs").join(spec.hash())
}

pub fn record_path(run_dir: &Path, id: &str) -> PathBuf {
    run_dir.join("records").join(format!("{id}.json"))
}

pub fn failure_path(run_dir: &Path, id: &str) -> PathBuf {
    run_dir.join("failures").join(format!("{id}.json"))
}

/// Write via a temporary file and rename so readers never see half a file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(BenchError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(BenchError::io(path))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

struct Failure {
    stage: &'static str,
    code: Option<String>,
    message: String,
}

impl Failure {
    fn at(stage: &'static str) -> impl Fn(String) -> Failure {
        move |message| Failure {
            stage,
            code: None,
            message,
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure {
            stage: "send",
            code: Some(e.code().to_string()),
            message: e.to_string(),
        }
    }
}

struct Ctx<'a> {
    spec: &'a BenchSpec,
    index: &'a DatasetIndex,
    templates: Templates,
    gateway: Gateway,
    segmenter: SegmenterClient,
    run_dir: PathBuf,
}

/// Marked frame ready to send.
struct Marked {
    rel_path: String,
    png: Vec<u8>,
    image: MarkedImage,
}

impl Ctx<'_> {
    fn root(&self) -> &Path {
        &self.spec.dataset_root
    }

    fn load_image(&self, rel: &Path) -> Result<RgbImage, Failure> {
        let path = self.root().join(rel);
        image::open(&path)
            .map(|i| i.to_rgb8())
            .map_err(|e| Failure::at("load")(format!("{}: {e}", path.display())))
    }

    async fn regions(&self, source: &PartitionSource, image: &RgbImage, filter: bool) -> Result<RegionSet, Failure> {
        let dims = image.dimensions();
        let rs = match source {
            PartitionSource::Remote { .. } => {
                let png = som_core::render::encode_png(image).map_err(|e| Failure::at("ingest")(e.to_string()))?;
                self.segmenter
                    .fetch_source(source, &png)
                    .await
                    .map_err(|e| Failure::at("ingest")(e.to_string()))?
            }
            _ => load_regions(&source.resolved(self.root()), dims).map_err(|e| Failure::at("ingest")(e.to_string()))?,
        };
        if rs.dims() != dims {
            return Err(Failure::at("ingest")(format!(
                "partition is {:?}, image is {dims:?}",
                rs.dims()
            )));
        }
        Ok(if filter { filter_regions(&rs, &self.spec.ingest) } else { rs })
    }

    fn mark(&self, name: &str, image: &RgbImage, rs: &RegionSet) -> Result<Marked, Failure> {
        let fail = Failure::at("render");
        let style = &self.spec.style;
        let (w, h) = image.dimensions();
        let alloc = self
            .spec
            .alloc
            .unwrap_or_else(|| AllocationConfig::for_font(style.font_px_for(w, h) as f64));
        let texts = assign_mark_ids(rs.len(), style.scheme()).map_err(|e| fail(e.to_string()))?;
        let locs = allocate_marks(rs, &alloc, &texts).map_err(|e| fail(e.to_string()))?;
        let image = render_with_texts(image, rs, &locs, &texts, style).map_err(|e| fail(e.to_string()))?;
        let png = image.to_png().map_err(|e| fail(e.to_string()))?;
        let rel_path = format!("images/{name}.png");
        let path = self.run_dir.join(&rel_path);
        std::fs::write(&path, &png).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        let manifest_path = self.run_dir.join(format!("images/{name}.som.json"));
        std::fs::write(&manifest_path, to_json(&image.manifest))
            .map_err(|e| fail(format!("{}: {e}", manifest_path.display())))?;
        Ok(Marked { rel_path, png, image })
    }

    fn prompt(&self, manifest: &Manifest, inputs: &TaskInputs) -> Result<PromptSpec, Failure> {
        let p = build_task_prompt_with(&self.templates, self.spec.task, manifest, inputs)
            .map_err(|e| Failure::at("prompt")(e.to_string()))?;
        Ok(if self.spec.format_hint { with_format_hint(p, &self.templates) } else { p })
    }

    async fn ask(&self, images: &[&Marked], prompt: &PromptSpec) -> Result<ResponseRecord, Failure> {
        let req = ChatRequest::single(
            self.spec.model.clone(),
            images.iter().map(|m| m.png.clone()).collect(),
            prompt.text.clone(),
        );
        let resp = self.gateway.send_chat(&req).await?;
        Ok(ResponseRecord {
            text: resp.text,
            model_echo: resp.model_echo,
            cache_key: resp.key,
        })
    }

    fn ground(&self, text: &str, manifest: &Manifest, rs: &RegionSet) -> Result<GroundedAnswer, Failure> {
        let mentions = parse_response(text, manifest, self.spec.task);
        bind_triplets(text, mentions, manifest, rs).map_err(|e| Failure::at("parse")(e.to_string()))
    }

    async fn single_image(&self, item: &IndexItem) -> Result<RunRecord, Failure> {
        let task = self.spec.task;
        let image = self.load_image(&item.image)?;
        // Open-vocabulary ground truth lives on the partition, so its ids must survive.
        let rs = self.regions(&item.partition, &image, task != TaskKind::OpenVocabSeg).await?;
        if rs.is_empty() {
            return Err(Failure::at("ingest")("no regions left after filtering".into()));
        }
        let marked = self.mark(&item.id, &image, &rs)?;
        let manifest = &marked.image.manifest;
        let (inputs, gts) = match task {
            TaskKind::OpenVocabSeg => {
                let gts = labelled_gt(item, &rs);
                if gts.is_empty() {
                    return Err(Failure::at("ingest")("partition has no labelled regions".into()));
                }
                let names = self.index.vocabulary.clone();
                (TaskInputs::Vocabulary { names }, gts)
            }
            TaskKind::ReferringSeg | TaskKind::ReferringComprehension => {
                let expressions = phrases(item);
                (TaskInputs::Expressions { expressions }, prefixed_gt(item))
            }
            TaskKind::PhraseGrounding => (
                TaskInputs::Grounding {
                    caption: item.caption.clone().unwrap_or_default(),
                    phrases: phrases(item),
                },
                prefixed_gt(item),
            ),
            TaskKind::VideoObjectSeg | TaskKind::FreeChat => unreachable!("handled elsewhere"),
        };
        let prompt = self.prompt(manifest, &inputs)?;
        let response = self.ask(&[&marked], &prompt).await?;
        let grounded = self.ground(&response.text, manifest, &rs)?;
        let t = &grounded.triplets;
        let score = Failure::at("score");
        let report = match task {
            TaskKind::OpenVocabSeg => precision_classification(t, &gts, &self.index.vocabulary),
            TaskKind::ReferringSeg => miou_referring(t, &gts, &rs),
            TaskKind::ReferringComprehension => acc_at_05(t, &gts, &rs),
            _ => recall_at_1(t, &gts, &rs),
        }
        .map_err(|e| score(e.to_string()))?;
        Ok(RunRecord {
            instance_id: item.id.clone(),
            task,
            model: self.spec.model.clone(),
            exchanges: vec![Exchange {
                frame: None,
                marked_images: vec![marked.rel_path.clone()],
                manifest: manifest.clone(),
                prompt,
                response,
                grounded,
            }],
            scores: report.per_instance,
        })
    }

    /// Pairs the first frame with each later frame in a fresh conversation.
    /// Each reference object follows the later-frame region whose mark the
    /// model names for it.
    async fn video(&self, item: &IndexItem) -> Result<RunRecord, Failure> {
        let first = self.load_image(&item.image)?;
        let reference = self.regions(&item.partition, &first, false).await?;
        if reference.is_empty() {
            return Err(Failure::at("ingest")("no reference objects".into()));
        }
        let ref_marked = self.mark(&format!("{}_f0", item.id), &first, &reference)?;
        let ref_manifest = &ref_marked.image.manifest;
        let marks: Vec<String> = ref_manifest.entries.iter().map(|e| e.mark_text.clone()).collect();
        let prompt = self.prompt(ref_manifest, &TaskInputs::Tracking { marks })?;

        let objects: FrameMasks = reference.regions().iter().map(|r| (r.id(), r.mask().clone())).collect();
        let mut pred = vec![objects.clone()];
        let mut gt = vec![objects];
        let mut exchanges = Vec::new();
        for (i, frame) in item.frames.iter().enumerate() {
            let t = i + 1;
            let image = self.load_image(&frame.image)?;
            let truth = self.regions(&frame.gt, &image, false).await?;
            let gt_frame: FrameMasks = truth.regions().iter().map(|r| (r.id(), r.mask().clone())).collect();
            let proposals = match self.regions(&frame.proposals, &image, true).await {
                Ok(rs) if !rs.is_empty() => rs,
                _ => {
                    pred.push(FrameMasks::new());
                    gt.push(gt_frame);
                    continue;
                }
            };
            let marked = self.mark(&format!("{}_f{t}", item.id), &image, &proposals)?;
            let manifest = &marked.image.manifest;
            let response = self.ask(&[&ref_marked, &marked], &prompt).await?;
            let vocabulary = tracking_grammar(manifest, ref_manifest);
            let mentions = parse_response(&response.text, &vocabulary, TaskKind::VideoObjectSeg);
            let grounded = bind_triplets(&response.text, mentions, manifest, &proposals)
                .map_err(|e| Failure::at("parse")(e.to_string()))?;
            let mut frame_pred = FrameMasks::new();
            for tr in &grounded.triplets {
                let Some(object) = ref_manifest.region_for_mark(tr.payload.trim()) else {
                    continue;
                };
                if gt_frame.contains_key(&object) && !frame_pred.contains_key(&object) {
                    let mask = proposals.get(tr.region_id).expect("bound region exists").mask().clone();
                    frame_pred.insert(object, mask);
                }
            }
            pred.push(frame_pred);
            gt.push(gt_frame);
            exchanges.push(Exchange {
                frame: Some(t),
                marked_images: vec![ref_marked.rel_path.clone(), marked.rel_path.clone()],
                manifest: manifest.clone(),
                prompt: prompt.clone(),
                response,
                grounded,
            });
        }
        let jf = jf_score(&pred, &gt).map_err(|e| Failure::at("score")(e.to_string()))?;
        let scores = jf
            .report
            .per_instance
            .into_iter()
            .map(|s| InstanceScore {
                id: format!("{}/{}", item.id, s.id),
                ..s
            })
            .collect();
        Ok(RunRecord {
            instance_id: item.id.clone(),
            task: TaskKind::VideoObjectSeg,
            model: self.spec.model.clone(),
            exchanges,
            scores,
        })
    }

    async fn run_item(&self, item: &IndexItem) -> Result<RunRecord, Failure> {
        if self.spec.task == TaskKind::VideoObjectSeg {
            self.video(item).await
        } else {
            self.single_image(item).await
        }
    }

    /// Score ids a failed item stands for.
    fn expected_ids(&self, item: &IndexItem) -> Vec<String> {
        match self.spec.task {
            TaskKind::ReferringSeg | TaskKind::ReferringComprehension | TaskKind::PhraseGrounding => {
                prefixed_gt(item).into_iter().map(|g| g.id).collect()
            }
            TaskKind::OpenVocabSeg => {
                let labelled = self
                    .load_image(&item.image)
                    .ok()
                    .and_then(|img| load_regions(&item.partition.resolved(self.root()), img.dimensions()).ok())
                    .map(|rs| labelled_gt(item, &rs))
                    .unwrap_or_default();
                if labelled.is_empty() {
                    vec![item.id.clone()]
                } else {
                    labelled.into_iter().map(|g| g.id).collect()
                }
            }
            _ => vec![item.id.clone()],
        }
    }
}

fn phrases(item: &IndexItem) -> Vec<String> {
    item.gt.iter().map(|g| g.phrase.clone().unwrap_or_default()).collect()
}

fn prefixed_gt(item: &IndexItem) -> Vec<GtInstance> {
    item.gt
        .iter()
        .map(|g| GtInstance {
            id: format!("{}/{}", item.id, g.id),
            ..g.clone()
        })
        .collect()
}

fn labelled_gt(item: &IndexItem, rs: &RegionSet) -> Vec<GtInstance> {
    rs.regions()
        .iter()
        .filter_map(|r| {
            let label = r.label()?;
            let mut g = GtInstance::new(format!("{}/region{}", item.id, r.id()), TaskKind::OpenVocabSeg);
            g.region_id = Some(r.id());
            g.gt_label = Some(label.to_string());
            Some(g)
        })
        .collect()
}

/// Manifest whose marks cover both frames, so either side of a tracking
/// answer is recognised. Only used for parsing.
fn tracking_grammar(later: &Manifest, reference: &Manifest) -> Manifest {
    let mut m = later.clone();
    for e in &reference.entries {
        if later.region_for_mark(&e.mark_text).is_none() {
            m.entries.push(e.clone());
        }
    }
    m
}

/// Runs every sampled item that has no record yet, then rewrites the report.
pub async fn run_benchmark(
    spec: &BenchSpec,
    out: &Path,
    transport: Arc<dyn ChatTransport>,
) -> Result<RunSummary, BenchError> {
    spec.validate()?;
    let index = DatasetIndex::load(&spec.annotation_file())?;
    if index.task != spec.task {
        return Err(BenchError::Config(format!(
            "spec task is {} but the dataset index is for {}",
            spec.task, index.task
        )));
    }
    let items = sample_subset(&index.items, spec.sample_size, spec.seed)?;
    let sampled = DatasetIndex {
        items: items.clone(),
        ..index.clone()
    };
    if let Some(missing) = sampled.files(&spec.dataset_root).into_iter().find(|p| !p.is_file()) {
        return Err(BenchError::Config(format!("missing dataset file {}", missing.display())));
    }
    let templates = match &spec.template_dir {
        Some(dir) => Templates::load_dir(dir).map_err(|e| BenchError::Config(e.to_string()))?,
        None => Templates::default(),
    };
    let cache_dir = spec.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
    if spec.mode == CacheMode::ReplayOnly && !cache_dir.is_dir() {
        return Err(BenchError::Config(format!(
            "replay needs an existing cache at {}",
            cache_dir.display()
        )));
    }
    let cache = DiskCache::new(&cache_dir);
    let gateway = Gateway::builder(transport)
        .cache(cache)
        .mode(spec.mode)
        .budget(spec.budget)
        .max_in_flight(spec.max_in_flight)
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;

    let run_dir = run_dir_for(spec, out);
    for sub in ["records", "failures", "images"] {
        let d = run_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(BenchError::io(&d))?;
    }
    write_atomic(&run_dir.join("spec.json"), &to_json(spec))?;

    let ctx = Ctx {
        spec,
        index: &index,
        templates,
        gateway,
        segmenter: SegmenterClient::new(spec.max_in_flight, SEGMENTER_TIMEOUT),
        run_dir: run_dir.clone(),
    };
    let (done, todo): (Vec<_>, Vec<_>) = items.iter().partition(|i| record_path(&run_dir, &i.id).is_file());
    tracing::info!(run = %run_dir.display(), todo = todo.len(), done = done.len(), "starting");

    let results: Vec<(&IndexItem, Result<RunRecord, Failure>)> = futures::stream::iter(todo)
        .map(|item| {
            let ctx = &ctx;
            async move { (item, ctx.run_item(item).await) }
        })
        .buffer_unordered(spec.max_in_flight)
        .collect()
        .await;

    let mut written = 0;
    let mut failures = Vec::new();
    for (item, result) in results {
        let fpath = failure_path(&run_dir, &item.id);
        match result {
            Ok(record) => {
                write_atomic(&record_path(&run_dir, &item.id), &to_json(&record))?;
                if fpath.exists() {
                    std::fs::remove_file(&fpath).map_err(BenchError::io(&fpath))?;
                }
                written += 1;
            }
            Err(f) => {
                tracing::warn!(item = %item.id, stage = f.stage, "{}", f.message);
                let rec = FailureRecord {
                    instance_id: item.id.clone(),
                    task: spec.task,
                    stage: f.stage.to_string(),
                    code: f.code,
                    error: f.message,
                    expected: ctx.expected_ids(item),
                };
                write_atomic(&fpath, &to_json(&rec))?;
                failures.push(rec);
            }
        }
    }
    failures.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let reports = match aggregate_report(&run_dir) {
        Ok(r) => {
            write_report(&run_dir, spec, &r.0, &r.1)?;
            Some(r)
        }
        Err(BenchError::EmptyRun(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunSummary {
        run_dir,
        sampled: items.len(),
        written,
        skipped: done.len(),
        failures,
        network_calls: ctx.gateway.network_calls(),
        reports,
    })
}

/// Read a run's records, keyed by instance id.
pub fn read_records(run_dir: &Path) -> Result<BTreeMap<String, RunRecord>, BenchError> {
    read_dir_json(&run_dir.join("records"))
}

pub fn read_failures(run_dir: &Path) -> Result<BTreeMap<String, FailureRecord>, BenchError> {
    read_dir_json(&run_dir.join("failures"))
}

fn read_dir_json<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<BTreeMap<String, T>, BenchError> {
    let mut out = BTreeMap::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(BenchError::io(dir)(e)),
    };
    for entry in entries {
        let path = entry.map_err(BenchError::io(dir))?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(BenchError::io(&path))?;
        let v: T = serde_json::from_slice(&bytes).map_err(|e| BenchError::Json {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        out.insert(stem, v);
    }
    Ok(out)
}
