use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute force: min squared distance to any out-of-mask pixel, scanning the
/// raster plus a one-pixel frame outside it.
fn brute_squared(mask: &BinaryMask, x: u32, y: u32) -> u64 {
    if !mask.get(x, y) {
        return 0;
    }
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut best = u64::MAX;
    for qy in -1..=h {
        for qx in -1..=w {
            if !mask.get_signed(qx, qy) {
                let d = ((qx - x as i64).pow(2) + (qy - y as i64).pow(2)) as u64;
                best = best.min(d);
            }
        }
    }
    best
}

fn random_mask(rng: &mut ChaCha8Rng, w: u32, h: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap()
}

fn blob_region_set(rng: &mut ChaCha8Rng, w: u32, h: u32, k: usize) -> RegionSet {
    let regions = (0..k)
        .map(|i| {
            let cx = rng.random_range(0..w) as i64;
            let cy = rng.random_range(0..h) as i64;
            let rx = rng.random_range(1..=w as i64 / 2);
            let ry = rng.random_range(1..=h as i64 / 2);
            let m = BinaryMask::from_fn(w, h, |x, y| {
                let dx = (x as i64 - cx) as f64 / rx as f64;
                let dy = (y as i64 - cy) as f64 / ry as f64;
                dx * dx + dy * dy <= 1.0
            })
            .unwrap();
            Region::new(i as u32 + 1, m).unwrap()
        })
        .collect();
    RegionSet::new(w, h, regions).unwrap()
}

fn texts(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

#[test]
fn edt_small_examples() {
    let empty = BinaryMask::new(4, 3).unwrap();
    assert!(distance_transform(&empty).values().iter().all(|&v| v == 0.0));

    let mut single = BinaryMask::new(5, 5).unwrap();
    single.set(2, 2, true);
    let f = distance_transform(&single);
    assert_eq!(f.value(2, 2), 1.0);
    assert_eq!(f.value(0, 0), 0.0);

    let square = BinaryMask::from_fn(11, 11, |x, y| (3..=7).contains(&x) && (3..=7).contains(&y)).unwrap();
    assert_eq!(brute_squared(&square, 5, 5), 9);
    assert_eq!(distance_transform(&square).value(5, 5), 3.0);
}

#[test]
fn edt_counts_image_border_as_background() {
    let full = BinaryMask::full(7, 3).unwrap();
    let f = distance_transform(&full);
    assert_eq!(f.value(3, 1), 2.0);
    assert_eq!(f.value(0, 0), 1.0);
}

#[test]
fn edt_without_border_features_handles_sparse_input() {
    let mut feat = vec![false; 6 * 4];
    feat[2 * 6 + 5] = true;
    let d = squared_distances(6, 4, &feat, false);
    for y in 0..4i64 {
        for x in 0..6i64 {
            assert_eq!(d[(y * 6 + x) as usize], ((x - 5).pow(2) + (y - 2).pow(2)) as u64);
        }
    }
    assert!(squared_distances(3, 3, &[false; 9], false).iter().all(|&v| v == u64::MAX));
}

proptest! {
    #[test]
    fn edt_matches_brute_force(w in 1u32..24, h in 1u32..24, density in 0.3f64..0.95, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mask(&mut rng, w, h, density);
        let f = distance_transform(&m);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(f.squared_value(x, y), brute_squared(&m, x, y));
            }
        }
    }
}

#[test]
fn residuals_disjoint_regions_unchanged() {
    let a = BinaryMask::from_fn(6, 6, |x, _| x < 2).unwrap();
    let b = BinaryMask::from_fn(6, 6, |x, _| x > 3).unwrap();
    let rs = RegionSet::new(6, 6, vec![Region::new(1, a.clone()).unwrap(), Region::new(2, b.clone()).unwrap()]).unwrap();
    let res = compute_residuals(&rs);
    assert_eq!(res.masks, vec![a, b]);
}

#[test]
fn residual_of_container_excludes_nested_region() {
    let big = BinaryMask::full(9, 9).unwrap();
    let small = BinaryMask::from_fn(9, 9, |x, y| (3..=5).contains(&x) && (3..=5).contains(&y)).unwrap();
    let rs = RegionSet::new(9, 9, vec![Region::new(1, big.clone()).unwrap(), Region::new(2, small.clone()).unwrap()]).unwrap();
    let res = compute_residuals(&rs);
    assert_eq!(res.processing_order, vec![2, 1]);
    assert_eq!(res.masks[1], small);
    assert_eq!(res.masks[0], big.subtract(&small).unwrap());
    assert_eq!(res.masks[0].area(), 81 - 9);
}

#[test]
fn residual_empty_when_covered_by_smaller_regions() {
    let left = BinaryMask::from_fn(8, 4, |x, _| x < 4).unwrap();
    let right = BinaryMask::from_fn(8, 4, |x, _| x >= 4).unwrap();
    // union of two halves is the whole image but each half is smaller
    let whole = BinaryMask::full(8, 4).unwrap();
    let rs = RegionSet::new(
        8,
        4,
        vec![
            Region::new(1, whole).unwrap(),
            Region::new(2, left).unwrap(),
            Region::new(3, right).unwrap(),
        ],
    )
    .unwrap();
    let res = compute_residuals(&rs);
    assert!(res.masks[0].is_empty());
}

#[test]
fn area_ties_processed_by_id() {
    let a = BinaryMask::from_fn(4, 4, |x, _| x < 2).unwrap();
    let b = BinaryMask::from_fn(4, 4, |x, _| (1..3).contains(&x)).unwrap();
    let rs = RegionSet::new(4, 4, vec![Region::new(5, a).unwrap(), Region::new(2, b).unwrap()]).unwrap();
    let res = compute_residuals(&rs);
    assert_eq!(res.processing_order, vec![2, 5]);
    // region 5 loses column 1 to region 2
    assert_eq!(res.masks[0].area(), 4);
}

#[test]
fn full_square_mark_at_center() {
    let rs = RegionSet::new(20, 20, vec![Region::new(1, BinaryMask::full(20, 20).unwrap()).unwrap()]).unwrap();
    let locs = allocate_marks(&rs, &AllocationConfig::default(), &texts(1)).unwrap();
    assert_eq!(locs[0], MarkLocation { region_id: 1, x: 9, y: 9, off_region: false, clearance: 10.0 });
}

#[test]
fn empty_residual_goes_off_region() {
    let whole = BinaryMask::from_fn(40, 40, |x, y| (10..30).contains(&x) && (10..30).contains(&y)).unwrap();
    let left = BinaryMask::from_fn(40, 40, |x, y| (10..20).contains(&x) && (10..30).contains(&y)).unwrap();
    let right = BinaryMask::from_fn(40, 40, |x, y| (20..30).contains(&x) && (10..30).contains(&y)).unwrap();
    let rs = RegionSet::new(
        40,
        40,
        vec![Region::new(1, whole).unwrap(), Region::new(2, left).unwrap(), Region::new(3, right).unwrap()],
    )
    .unwrap();
    let cfg = AllocationConfig::for_font(4.0);
    let locs = allocate_marks(&rs, &cfg, &texts(3)).unwrap();
    let l = locs[0];
    assert!(l.off_region);
    assert_eq!(l.clearance, 0.0);
    let bbox = rs.regions()[0].bbox().unwrap();
    assert!(!bbox.contains(l.x, l.y));
    // anchor is the box center (19,19); all sides are equally near so it goes above
    let expected_y = (9.0 - cfg.off_region_offset).round() as u32;
    assert_eq!((l.x, l.y), (19, expected_y));
    assert!(!locs[1].off_region && !locs[2].off_region);
}

#[test]
fn tiny_region_relocated_outside_bbox() {
    let mut dot = BinaryMask::new(50, 50).unwrap();
    dot.set(2, 25, true);
    let rs = RegionSet::new(50, 50, vec![Region::new(1, dot).unwrap()]).unwrap();
    let cfg = AllocationConfig::for_font(12.0);
    let l = allocate_marks(&rs, &cfg, &texts(1)).unwrap()[0];
    assert!(l.off_region);
    // left side is 1 px away from the anchor, as are above and below; above wins
    assert_eq!(l.x, 2);
    assert_eq!(l.y, (24.0 - cfg.off_region_offset).round() as u32);
}

#[test]
fn region_spanning_image_falls_back_to_anchor() {
    let mut m = BinaryMask::full(6, 6).unwrap();
    m.set(0, 0, false);
    let rs = RegionSet::new(6, 6, vec![Region::new(1, m).unwrap()]).unwrap();
    let l = allocate_marks(&rs, &AllocationConfig::for_font(12.0), &texts(1)).unwrap()[0];
    assert!(l.off_region);
    assert!(l.x < 6 && l.y < 6);
}

#[test]
fn allocation_errors() {
    let rs = RegionSet::empty(5, 5).unwrap();
    assert_eq!(allocate_marks(&rs, &AllocationConfig::default(), &[]), Err(AllocError::EmptyRegionSet));
    let rs = RegionSet::new(5, 5, vec![Region::new(1, BinaryMask::full(5, 5).unwrap()).unwrap()]).unwrap();
    assert!(matches!(
        allocate_marks(&rs, &AllocationConfig::default(), &texts(2)),
        Err(AllocError::TextCountMismatch { .. })
    ));
    let bad = AllocationConfig { coverage_limit: 0.0, ..AllocationConfig::default() };
    assert!(matches!(allocate_marks(&rs, &bad, &texts(1)), Err(AllocError::BadConfig(_))));
}

#[test]
fn in_region_marks_match_brute_force_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = AllocationConfig::for_font(3.0);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let k = rng.random_range(1..6);
        let rs = blob_region_set(&mut rng, w, h, k);
        let res = compute_residuals(&rs);
        let locs = allocate_marks(&rs, &cfg, &texts(k)).unwrap();
        for (loc, residual) in locs.iter().zip(&res.masks) {
            if loc.off_region {
                continue;
            }
            let mut best: Option<(u32, u32, u64)> = None;
            for y in 0..h {
                for x in 0..w {
                    let d = brute_squared(residual, x, y);
                    if d > 0 && best.is_none_or(|b| d > b.2) {
                        best = Some((x, y, d));
                    }
                }
            }
            let (bx, by, bd) = best.unwrap();
            assert_eq!((loc.x, loc.y), (bx, by));
            assert_eq!(loc.clearance, (bd as f64).sqrt());
        }
    }
}

#[test]
fn permutation_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = AllocationConfig::for_font(4.0);
    for _ in 0..10 {
        let rs = blob_region_set(&mut rng, 48, 40, 5);
        let a = allocate_marks(&rs, &cfg, &texts(5)).unwrap();
        assert_eq!(a, allocate_marks(&rs, &cfg, &texts(5)).unwrap());
        let mut rev = rs.clone().into_regions();
        rev.reverse();
        let rs_rev = RegionSet::new(48, 40, rev).unwrap();
        let mut b = allocate_marks(&rs_rev, &cfg, &texts(5)).unwrap();
        b.sort_by_key(|l| l.region_id);
        let mut a_sorted = a.clone();
        a_sorted.sort_by_key(|l| l.region_id);
        assert_eq!(a_sorted, b);
    }
}

#[test]
fn at_point_recomputes_status() {
    let m = BinaryMask::from_fn(10, 10, |x, y| x < 5 && y < 5).unwrap();
    let inside = MarkLocation::at_point(4, &m, 2, 2);
    assert!(!inside.off_region);
    assert_eq!(inside.clearance, 3.0);
    let outside = MarkLocation::at_point(4, &m, 8, 8);
    assert!(outside.off_region);
    assert_eq!(outside.clearance, 0.0);
}

#[test]
fn auto_font_clamps() {
    assert_eq!(auto_font_px(64, 64), 12);
    assert_eq!(auto_font_px(640, 480), 19);
    assert_eq!(auto_font_px(4000, 3000), 48);
}
