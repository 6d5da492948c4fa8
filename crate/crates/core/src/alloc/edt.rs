//! Exact Euclidean distance transform.
//!
//! Separable two-phase method: per-column 1-D distances, then a lower
//! envelope of parabolas per row. Everything is integer arithmetic on
//! squared distances, so results are exact.

/// Squared distance from every pixel to the nearest feature pixel.
///
/// With `border_is_feature`, the ring of pixels just outside the raster
/// counts as feature. Without it, `u64::MAX` marks pixels that have no
/// feature to reach (only possible when there are no features at all).
pub(crate) fn squared_distances(
    width: usize,
    height: usize,
    is_feature: &[bool],
    border_is_feature: bool,
) -> Vec<u64> {
    debug_assert_eq!(is_feature.len(), width * height);
    if border_is_feature {
        let (pw, ph) = (width + 2, height + 2);
        let mut padded = vec![true; pw * ph];
        for y in 0..height {
            let row = &is_feature[y * width..(y + 1) * width];
            padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + width].copy_from_slice(row);
        }
        let full = meijster(pw, ph, &padded);
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            out.extend_from_slice(&full[(y + 1) * pw + 1..(y + 1) * pw + 1 + width]);
        }
        out
    } else if !is_feature.iter().any(|&f| f) {
        vec![u64::MAX; width * height]
    } else {
        meijster(width, height, is_feature)
    }
}

fn meijster(width: usize, height: usize, is_feature: &[bool]) -> Vec<u64> {
    let inf = (width + height) as i64;
    // phase 1: vertical distance to the nearest feature in the same column
    let mut g = vec![0i64; width * height];
    for x in 0..width {
        g[x] = if is_feature[x] { 0 } else { inf };
        for y in 1..height {
            let i = y * width + x;
            g[i] = if is_feature[i] { 0 } else { (g[i - width] + 1).min(inf) };
        }
        for y in (0..height.saturating_sub(1)).rev() {
            let i = y * width + x;
            let below = g[i + width];
            if below < g[i] {
                g[i] = below + 1;
            }
        }
    }

    // phase 2: lower envelope along each row
    let mut out = vec![0u64; width * height];
    let mut s = vec![0i64; width];
    let mut t = vec![0i64; width];
    for y in 0..height {
        let row = &g[y * width..(y + 1) * width];
        let f = |x: i64, i: i64| -> i64 {
            let gi = row[i as usize];
            (x - i) * (x - i) + gi * gi
        };
        let sep = |i: i64, u: i64| -> i64 {
            let (gi, gu) = (row[i as usize], row[u as usize]);
            (u * u - i * i + gu * gu - gi * gi).div_euclid(2 * (u - i))
        };
        let m = width as i64;
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..m {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let w = 1 + sep(s[q as usize], u);
                if w < m {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = w;
                }
            }
        }
        for u in (0..m).rev() {
            out[y * width + u as usize] = f(u, s[q as usize]) as u64;
            if u == t[q as usize] {
                q -= 1;
            }
        }
    }
    out
}
