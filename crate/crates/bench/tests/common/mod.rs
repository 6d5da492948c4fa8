//! Sealed 10-item datasets, one per task, with a scripted model whose
//! answers are planted per item. Every item uses the same 64x48 scene:
//!
//! ```text
//! A = (2,2)-(29,21)   560 px  mark 1
//! B = (34,2)-(57,21)  480 px  mark 2
//! C = (2,26)-(21,43)  360 px  mark 3
//! ```
//!
//! Boxes are inclusive. The gaps between them exceed the 1 px boundary
//! tolerance of a 64x48 frame, so disjoint pairs score zero on both J and F.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use som_bench::BenchSpec;
use som_core::ingest::{PartitionSource, SegmenterResponse};
use som_core::metrics::GtInstance;
use som_core::{BBox, BinaryMask, Region, RegionSet, TaskKind};
use som_gateway::{CacheMode, ChatRequest, Part, ScriptedTransport};

pub const W: u32 = 64;
pub const H: u32 = 48;

pub fn bbox(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

pub fn box_a() -> BBox {
    bbox(2, 2, 29, 21)
}
pub fn box_b() -> BBox {
    bbox(34, 2, 57, 21)
}
pub fn box_c() -> BBox {
    bbox(2, 26, 21, 43)
}
/// Left half of A: IoU with A is exactly 0.5.
pub fn half_a() -> BBox {
    bbox(2, 2, 15, 21)
}
/// One column short of half of A: IoU 260/560.
pub fn under_half_a() -> BBox {
    bbox(2, 2, 14, 21)
}

pub fn mask(b: BBox) -> BinaryMask {
    BinaryMask::from_box(W, H, b).unwrap()
}

pub fn scene_png() -> Vec<u8> {
    let img = image::RgbImage::from_fn(W, H, |x, y| {
        let inside = |b: BBox| b.contains(x, y);
        if inside(box_a()) {
            image::Rgb([200, 60, 40])
        } else if inside(box_b()) {
            image::Rgb([40, 160, 70])
        } else if inside(box_c()) {
            image::Rgb([50, 70, 190])
        } else {
            image::Rgb([(x * 3) as u8 + 30, (y * 4) as u8 + 30, 120])
        }
    });
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    png
}

fn regions(boxes: &[(u32, BBox, Option<&str>)]) -> SegmenterResponse {
    let rs = RegionSet::new(
        W,
        H,
        boxes
            .iter()
            .map(|(id, b, label)| {
                let r = Region::new(*id, mask(*b)).unwrap();
                match label {
                    Some(l) => r.with_label(*l),
                    None => r,
                }
            })
            .collect(),
    )
    .unwrap();
    SegmenterResponse::from_region_set(&rs)
}

fn write_json(path: &Path, v: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_vec_pretty(v).unwrap()).unwrap();
}

fn rle(name: &str) -> PartitionSource {
    PartitionSource::RleFile { path: PathBuf::from(name) }
}

/// Planted answers: a prompt containing `key` gets `line` in the reply.
pub type Script = Vec<(String, String)>;

pub struct Fixture {
    pub spec: BenchSpec,
    pub script: Script,
    /// Hand count of the expected score.
    pub expected: f64,
    pub expected_n: usize,
}

pub fn mock(script: Script) -> ScriptedTransport {
    ScriptedTransport::new(move |req: &ChatRequest| {
        let prompt = last_text(req);
        let lines: Vec<&str> = script
            .iter()
            .filter(|(k, _)| prompt.contains(k.as_str()))
            .map(|(_, v)| v.as_str())
            .collect();
        Ok(if lines.is_empty() {
            "I am not sure.".to_string()
        } else {
            lines.join("\n")
        })
    })
}

pub fn mock_arc(script: Script) -> Arc<ScriptedTransport> {
    Arc::new(mock(script))
}

pub fn last_text(req: &ChatRequest) -> String {
    req.turns
        .last()
        .unwrap()
        .parts
        .iter()
        .filter_map(|p| match p {
            Part::Text { text } => Some(text.as_str()),
            _ => None,
        })
        .collect()
}

fn spec(task: TaskKind, root: &Path) -> BenchSpec {
    BenchSpec {
        task,
        dataset_root: root.to_path_buf(),
        annotation_path: PathBuf::from("index.json"),
        sample_size: 10,
        seed: 7,
        ingest: Default::default(),
        style: Default::default(),
        alloc: None,
        model: "mock-lmm".into(),
        mode: CacheMode::Record,
        endpoint: None,
        cache_dir: None,
        budget: Some(1000),
        format_hint: false,
        template_dir: None,
        max_in_flight: 4,
    }
}

fn common_files(root: &Path) {
    std::fs::write(root.join("scene.png"), scene_png()).unwrap();
    let proposals = regions(&[(1, box_a(), None), (2, box_b(), None), (3, box_c(), None)]);
    write_json(&root.join("proposals.json"), &proposals);
}

fn gt_box(id: &str, task: TaskKind, phrase: &str, b: BBox) -> GtInstance {
    let mut g = GtInstance::new(id, task);
    g.phrase = Some(phrase.into());
    match task {
        TaskKind::ReferringSeg => g.gt_mask = Some(mask(b)),
        _ => g.gt_box = Some(b),
    }
    g
}

/// Referring tasks: one expression per item.
/// mIoU: five exact hits, two half-overlaps at 0.5, one exact hit on B,
/// one wrong region, one unparseable answer = (5 + 1 + 1) / 10 = 0.7.
/// ACC@0.5: four exact hits, one at IoU exactly 0.5, one at 260/560,
/// one hit on B, one miss on B, two unparseable = 6 / 10 = 0.6.
fn referring(task: TaskKind, root: &Path) -> Fixture {
    common_files(root);
    let plan: [(BBox, Option<&str>); 10] = if task == TaskKind::ReferringSeg {
        [
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (half_a(), Some("1")),
            (half_a(), Some("1")),
            (box_b(), Some("2")),
            (box_a(), Some("3")),
            (box_a(), None),
        ]
    } else {
        [
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (box_a(), Some("1")),
            (half_a(), Some("1")),
            (under_half_a(), Some("1")),
            (box_b(), Some("2")),
            (box_b(), Some("1")),
            (box_a(), None),
            (box_a(), None),
        ]
    };
    let mut items = Vec::new();
    let mut script = Vec::new();
    for (i, (b, answer)) in plan.iter().enumerate() {
        let phrase = format!("the block q{i:02}");
        if let Some(m) = answer {
            script.push((phrase.clone(), format!("{m}: {phrase}")));
        }
        items.push(json!({
            "id": format!("ref{i:02}"),
            "image": "scene.png",
            "partition": rle("proposals.json"),
            "gt": [gt_box("e0", task, &phrase, *b)],
        }));
    }
    write_json(&root.join("index.json"), &json!({"task": task, "items": items}));
    let expected = if task == TaskKind::ReferringSeg { 0.7 } else { 0.6 };
    Fixture {
        spec: spec(task, root),
        script,
        expected,
        expected_n: 10,
    }
}

/// Two phrases per item: five items with both right, three with one right,
/// two with none = 13 / 20 = 0.65.
fn grounding(root: &Path) -> Fixture {
    common_files(root);
    let mut items = Vec::new();
    let mut script = Vec::new();
    for i in 0..10 {
        let cup = format!("the cup q{i:02}");
        let plate = format!("the plate q{i:02}");
        let (cup_mark, plate_mark) = match i {
            0..=4 => ("1", "3"),
            5..=7 => ("1", "2"),
            _ => ("2", "2"),
        };
        script.push((format!("for {cup}, "), format!("{cup_mark}: {cup}")));
        script.push((format!(", {plate}."), format!("{plate_mark}: {plate}")));
        items.push(json!({
            "id": format!("pg{i:02}"),
            "image": "scene.png",
            "partition": rle("proposals.json"),
            "caption": format!("a cup and a plate on a table, scene {i}"),
            "gt": [
                gt_box("cup", TaskKind::PhraseGrounding, &cup, box_a()),
                gt_box("plate", TaskKind::PhraseGrounding, &plate, box_c()),
            ],
        }));
    }
    write_json(
        &root.join("index.json"),
        &json!({"task": TaskKind::PhraseGrounding, "items": items}),
    );
    Fixture {
        spec: spec(TaskKind::PhraseGrounding, root),
        script,
        expected: 0.65,
        expected_n: 20,
    }
}

/// The model always answers "1: cat / 2: dog / 3: bird". Six items are
/// labelled exactly that way (3 right each), two have C as "fish" (2 right)
/// and two have A as "horse" and C as "fish" (1 right) = 24 / 30 = 0.8.
fn open_vocab(root: &Path) -> Fixture {
    std::fs::write(root.join("scene.png"), scene_png()).unwrap();
    let labels: [[&str; 3]; 3] = [["cat", "dog", "bird"], ["cat", "dog", "fish"], ["horse", "dog", "fish"]];
    for (k, l) in labels.iter().enumerate() {
        let p = regions(&[(1, box_a(), Some(l[0])), (2, box_b(), Some(l[1])), (3, box_c(), Some(l[2]))]);
        write_json(&root.join(format!("labels{k}.json")), &p);
    }
    let items: Vec<_> = (0..10)
        .map(|i| {
            let k = match i {
                0..=5 => 0,
                6..=7 => 1,
                _ => 2,
            };
            json!({
                "id": format!("ovs{i:02}"),
                "image": "scene.png",
                "partition": rle(&format!("labels{k}.json")),
            })
        })
        .collect();
    write_json(
        &root.join("index.json"),
        &json!({
            "task": TaskKind::OpenVocabSeg,
            "vocabulary": ["cat", "dog", "bird", "fish", "horse"],
            "items": items,
        }),
    );
    Fixture {
        spec: spec(TaskKind::OpenVocabSeg, root),
        script: vec![("enumerate their names".into(), "1: cat\n2: dog\n3: bird".into())],
        expected: 0.8,
        expected_n: 30,
    }
}

/// Two reference objects (1 = A, 2 = B), one later frame with proposals
/// A, B, C. The model always says object 1 went to mark 2 and object 2 to
/// mark 1. Six clips really swapped (2 exact pairs each), two moved
/// object 2 onto C (1 exact pair), two moved both elsewhere (none)
/// = 14 / 20 = 0.7.
fn video(root: &Path) -> Fixture {
    common_files(root);
    write_json(
        &root.join("reference.json"),
        &regions(&[(1, box_a(), None), (2, box_b(), None)]),
    );
    let truths = [(box_b(), box_a()), (box_b(), box_c()), (box_c(), box_b())];
    for (k, (o1, o2)) in truths.iter().enumerate() {
        write_json(
            &root.join(format!("truth{k}.json")),
            &regions(&[(1, *o1, None), (2, *o2, None)]),
        );
    }
    let items: Vec<_> = (0..10)
        .map(|i| {
            let k = match i {
                0..=5 => 0,
                6..=7 => 1,
                _ => 2,
            };
            json!({
                "id": format!("vos{i:02}"),
                "image": "scene.png",
                "partition": rle("reference.json"),
                "frames": [{
                    "image": "scene.png",
                    "proposals": rle("proposals.json"),
                    "gt": rle(&format!("truth{k}.json")),
                }],
            })
        })
        .collect();
    write_json(
        &root.join("index.json"),
        &json!({"task": TaskKind::VideoObjectSeg, "items": items}),
    );
    let answer = "1. The object labeled with 1 (a red block) is most similar to the object labeled with 2 (a green block).\n\
                  2. The object labeled with 2 (a green block) is most similar to the object labeled with 1 (a red block).";
    Fixture {
        spec: spec(TaskKind::VideoObjectSeg, root),
        script: vec![("track these".into(), answer.into())],
        expected: 0.7,
        expected_n: 20,
    }
}

pub fn fixture(task: TaskKind, root: &Path) -> Fixture {
    match task {
        TaskKind::OpenVocabSeg => open_vocab(root),
        TaskKind::ReferringSeg | TaskKind::ReferringComprehension => referring(task, root),
        TaskKind::PhraseGrounding => grounding(root),
        TaskKind::VideoObjectSeg => video(root),
        TaskKind::FreeChat => panic!("no benchmark for free chat"),
    }
}

pub const BENCH_TASKS: [TaskKind; 5] = [
    TaskKind::OpenVocabSeg,
    TaskKind::ReferringSeg,
    TaskKind::ReferringComprehension,
    TaskKind::PhraseGrounding,
    TaskKind::VideoObjectSeg,
];

/// Every file under `dir`, relative path to bytes.
pub fn tree(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
