use super::*;
use proptest::prelude::*;
use std::io::Cursor;

fn png_gray(w: u32, h: u32, values: &[u8]) -> Vec<u8> {
    let img = image::GrayImage::from_raw(w, h, values.to_vec()).unwrap();
    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

fn write_temp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, bytes).unwrap();
    p
}

fn scored(id: u32, mask: BinaryMask, score: Option<f64>) -> Region {
    let r = Region::new(id, mask).unwrap();
    match score {
        Some(s) => r.with_score(s).unwrap(),
        None => r,
    }
}

#[test]
fn coco_json_five_instances() {
    let dir = tempfile::tempdir().unwrap();
    let rle = crate::mask::CocoRle::from_mask(&BinaryMask::from_fn(20, 10, |x, _| x == 0).unwrap());
    let json = serde_json::json!({
        "images": [{"id": 7, "width": 20, "height": 10}, {"id": 8, "width": 5, "height": 5}],
        "categories": [{"id": 1, "name": "person"}, {"id": 41, "name": "surfboard"}],
        "annotations": [
            {"image_id": 7, "category_id": 1, "segmentation": [[1, 1, 4, 1, 4, 4, 1, 4]]},
            {"image_id": 7, "category_id": 1, "segmentation": [[10, 0, 14, 0, 14, 3, 10, 3]]},
            {"image_id": 8, "category_id": 1, "segmentation": [[0, 0, 2, 0, 2, 2]]},
            {"image_id": 7, "category_id": 1, "segmentation": [[5, 5, 8, 5, 8, 9, 5, 9]]},
            {"image_id": 7, "category_id": 41, "segmentation": rle, "score": 0.8},
            {"image_id": 7, "segmentation": [[15, 5, 19, 5, 19, 9, 15, 9]]}
        ]
    });
    let path = write_temp(&dir, "ann.json", json.to_string().as_bytes());
    let rs = load_regions(&PartitionSource::CocoJson { path, image_id: 7 }, (20, 10)).unwrap();
    assert_eq!(rs.len(), 5);
    assert_eq!(rs.ids(), vec![1, 2, 3, 4, 5]);
    assert_eq!(rs.regions()[0].label(), Some("person"));
    assert_eq!(rs.regions()[0].area(), 9);
    assert_eq!(rs.regions()[3].label(), Some("surfboard"));
    assert_eq!(rs.regions()[3].score(), Some(0.8));
    assert_eq!(rs.regions()[3].area(), 10);
    assert_eq!(rs.regions()[4].label(), None);
}

#[test]
fn polygon_square_covers_centres() {
    let m = rasterize_polygons(&[vec![1.0, 1.0, 4.0, 1.0, 4.0, 4.0, 1.0, 4.0]], 6, 6).unwrap();
    let expected = BinaryMask::from_fn(6, 6, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y)).unwrap();
    assert_eq!(m, expected);
    assert!(rasterize_polygons(&[vec![1.0, 2.0]], 4, 4).is_err());
}

#[test]
fn label_map_single_value_full_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(&dir, "lm.png", &png_gray(4, 3, &[9; 12]));
    let rs = load_regions(&PartitionSource::LabelMapPng { path }, (4, 3)).unwrap();
    assert_eq!(rs.len(), 1);
    assert_eq!(rs.regions()[0].id(), 9);
    assert_eq!(rs.regions()[0].area(), 12);
}

#[test]
fn label_map_three_values() {
    let values: Vec<u8> = (0..64u32)
        .map(|i| {
            let (x, y) = (i % 8, i / 8);
            match (x, y) {
                (0..=2, 0..=2) => 1,
                (5..=7, _) => 2,
                (_, 6..=7) => 3,
                _ => 0,
            }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(&dir, "lm.png", &png_gray(8, 8, &values));
    let rs = load_regions(&PartitionSource::LabelMapPng { path }, (8, 8)).unwrap();
    assert_eq!(rs.ids(), vec![1, 2, 3]);
    let nonzero = values.iter().filter(|&&v| v != 0).count() as u64;
    assert_eq!(rs.regions().iter().map(|r| r.area()).sum::<u64>(), nonzero);
    for r in rs.regions() {
        for (x, y) in r.mask().pixels() {
            assert_eq!(values[(y * 8 + x) as usize] as u32, r.id());
        }
    }
}

#[test]
fn rle_file_and_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let rs = RegionSet::new(
        6,
        4,
        vec![scored(3, BinaryMask::from_fn(6, 4, |x, _| x < 2).unwrap(), Some(0.6)).with_label("cup")],
    )
    .unwrap();
    let body = serde_json::to_vec(&SegmenterResponse::from_region_set(&rs)).unwrap();
    let path = write_temp(&dir, "r.json", &body);
    let src = PartitionSource::RleFile { path: path.clone() };
    assert_eq!(load_regions(&src, (6, 4)).unwrap(), rs);
    assert!(matches!(load_regions(&src, (4, 6)), Err(IngestError::DimensionMismatch { .. })));

    let missing = PartitionSource::RleFile { path: dir.path().join("nope.json") };
    assert!(matches!(load_regions(&missing, (6, 4)), Err(IngestError::Unreadable { .. })));

    let empty = write_temp(&dir, "e.png", &png_gray(2, 2, &[0; 4]));
    assert!(matches!(
        load_regions(&PartitionSource::LabelMapPng { path: empty }, (2, 2)),
        Err(IngestError::EmptyPartition)
    ));
    let remote: PartitionSource = "remote:http://localhost:1/seg".parse().unwrap();
    assert!(matches!(load_regions(&remote, (2, 2)), Err(IngestError::RemoteSource)));
}

#[test]
fn source_strings() {
    assert_eq!(
        "coco:a/b.json#42".parse::<PartitionSource>().unwrap(),
        PartitionSource::CocoJson { path: "a/b.json".into(), image_id: 42 }
    );
    assert_eq!(
        "labelmap:x.png".parse::<PartitionSource>().unwrap(),
        PartitionSource::LabelMapPng { path: "x.png".into() }
    );
    assert!("coco:a.json".parse::<PartitionSource>().is_err());
    assert!("bogus:x".parse::<PartitionSource>().is_err());
}

#[test]
fn dedupe_keeps_higher_score() {
    let m = BinaryMask::from_fn(5, 5, |x, _| x < 3).unwrap();
    let rs = RegionSet::new(5, 5, vec![scored(1, m.clone(), Some(0.3)), scored(2, m, Some(0.9))]).unwrap();
    let out = filter_regions(&rs, &IngestConfig::default());
    assert_eq!(out.len(), 1);
    assert_eq!(out.regions()[0].score(), Some(0.9));
    assert_eq!(out.regions()[0].id(), 1);
}

#[test]
fn score_threshold_drops_low_scores() {
    let a = BinaryMask::from_fn(5, 5, |x, _| x < 2).unwrap();
    let b = BinaryMask::from_fn(5, 5, |x, _| x > 2).unwrap();
    let c = BinaryMask::from_fn(5, 5, |x, _| x == 2).unwrap();
    let rs = RegionSet::new(5, 5, vec![scored(1, a, Some(0.5)), scored(2, b, Some(0.2))]).unwrap();
    assert_eq!(filter_regions(&rs, &IngestConfig::default()).len(), 1);
    // unscored regions survive any threshold
    let rs = RegionSet::new(5, 5, vec![scored(1, c, None)]).unwrap();
    let strict = IngestConfig { score_threshold: 1.0, ..IngestConfig::default() };
    assert_eq!(filter_regions(&rs, &strict).len(), 1);
}

#[test]
fn max_regions_keeps_largest() {
    // 60 disjoint regions with distinct areas: region i is a run of i+1 pixels
    let w = 100u32;
    let h = 60u32;
    let regions: Vec<Region> = (0..60u32)
        .map(|i| scored(i + 1, BinaryMask::from_fn(w, h, |x, y| y == i && x <= i).unwrap(), None))
        .collect();
    let rs = RegionSet::new(w, h, regions).unwrap();
    let out = filter_regions(&rs, &IngestConfig::default());
    assert_eq!(out.len(), 50);
    assert_eq!(out.ids(), (1..=50).collect::<Vec<_>>());
    // sort oracle: the 50 largest areas are 60 down to 11
    let areas: Vec<u64> = out.regions().iter().map(|r| r.area()).collect();
    assert_eq!(areas, (11..=60).rev().collect::<Vec<u64>>());
}

#[test]
fn config_validation() {
    assert!(IngestConfig::default().validate().is_ok());
    assert!(IngestConfig { score_threshold: 1.5, ..Default::default() }.validate().is_err());
    assert!(IngestConfig { max_regions: 0, ..Default::default() }.validate().is_err());
}

fn random_set() -> impl Strategy<Value = RegionSet> {
    proptest::collection::vec((0u32..8, 0u32..8, 1u32..6, 1u32..6, proptest::option::of(0.0f64..1.0)), 0..12)
        .prop_map(|specs| {
            let regions = specs
                .into_iter()
                .enumerate()
                .map(|(i, (x0, y0, bw, bh, score))| {
                    let m = BinaryMask::from_fn(12, 12, |x, y| x >= x0 && x < x0 + bw && y >= y0 && y < y0 + bh).unwrap();
                    scored(i as u32 + 1, m, score)
                })
                .collect();
            RegionSet::new(12, 12, regions).unwrap()
        })
}

proptest! {
    #[test]
    fn filter_is_idempotent_with_dense_ids(rs in random_set(), thr in 0.0f64..0.6, iou in 0.3f64..1.0, cap in 1usize..10) {
        let cfg = IngestConfig { score_threshold: thr, dedupe_iou: iou, max_regions: cap };
        let once = filter_regions(&rs, &cfg);
        prop_assert_eq!(filter_regions(&once, &cfg), once.clone());
        prop_assert_eq!(once.ids(), (1..=once.len() as u32).collect::<Vec<_>>());
        let areas: Vec<u64> = once.regions().iter().map(|r| r.area()).collect();
        prop_assert!(areas.windows(2).all(|w| w[0] >= w[1]));
    }
}
