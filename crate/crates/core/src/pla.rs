//! Streaming optimal piecewise-linear approximation for packed cold nodes.
//!
//! Each segment is grown greedily while some line stays within the error
//! bound of every point seen so far. Feasibility is tracked with the upper
//! and lower convex hulls of the error bars, using exact integer slope
//! comparisons, so the segment count is minimal for the integer bound.

use crate::model::LinearModel;
use crate::node::{PackedNode, PlaSegment};
use crate::{Key, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Point {
    x: i128,
    y: i128,
}

/// A slope `dy/dx` with `dx > 0`, compared exactly.
#[derive(Debug, Clone, Copy)]
struct Slope {
    dx: i128,
    dy: i128,
}

impl Slope {
    fn between(from: Point, to: Point) -> Slope {
        Slope {
            dx: to.x - from.x,
            dy: to.y - from.y,
        }
    }
    fn lt(self, o: Slope) -> bool {
        self.dy * o.dx < o.dy * self.dx
    }
    fn gt(self, o: Slope) -> bool {
        self.dy * o.dx > o.dy * self.dx
    }
    fn as_f64(self) -> f64 {
        self.dy as f64 / self.dx as f64
    }
}

fn cross(o: Point, a: Point, b: Point) -> i128 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

struct Hull {
    eps: i128,
    points: usize,
    first_x: i128,
    last_x: i128,
    rect: [Point; 4],
    upper: Vec<Point>,
    lower: Vec<Point>,
    upper_start: usize,
    lower_start: usize,
}

impl Hull {
    fn new(eps: u64) -> Self {
        let z = Point { x: 0, y: 0 };
        Hull {
            eps: eps as i128,
            points: 0,
            first_x: 0,
            last_x: 0,
            rect: [z; 4],
            upper: Vec::new(),
            lower: Vec::new(),
            upper_start: 0,
            lower_start: 0,
        }
    }

    /// Adds `(x, y)` with strictly increasing `x`. Returns false, leaving the
    /// hull unchanged, when no single line covers the points plus this one.
    fn add(&mut self, x: i128, y: i128) -> bool {
        debug_assert!(self.points == 0 || x > self.last_x);
        self.last_x = x;
        let p1 = Point { x, y: y + self.eps };
        let p2 = Point { x, y: y - self.eps };
        if self.points == 0 {
            self.first_x = x;
            self.rect[0] = p1;
            self.rect[1] = p2;
            self.upper.clear();
            self.lower.clear();
            self.upper.push(p1);
            self.lower.push(p2);
            self.upper_start = 0;
            self.lower_start = 0;
            self.points = 1;
            return true;
        }
        if self.points == 1 {
            self.rect[2] = p2;
            self.rect[3] = p1;
            self.upper.push(p1);
            self.lower.push(p2);
            self.points = 2;
            return true;
        }
        let slope1 = Slope::between(self.rect[0], self.rect[2]);
        let slope2 = Slope::between(self.rect[1], self.rect[3]);
        let outside1 = Slope::between(self.rect[2], p1).lt(slope1);
        let outside2 = Slope::between(self.rect[3], p2).gt(slope2);
        if outside1 || outside2 {
            return false;
        }
        if Slope::between(self.rect[1], p1).lt(slope2) {
            let mut min = Slope::between(p1, self.lower[self.lower_start]);
            let mut min_i = self.lower_start;
            for i in self.lower_start + 1..self.lower.len() {
                let v = Slope::between(p1, self.lower[i]);
                if v.gt(min) {
                    break;
                }
                min = v;
                min_i = i;
            }
            self.rect[1] = self.lower[min_i];
            self.rect[3] = p1;
            self.lower_start = min_i;
            let mut end = self.upper.len();
            while end >= self.upper_start + 2
                && cross(self.upper[end - 2], self.upper[end - 1], p1) <= 0
            {
                end -= 1;
            }
            self.upper.truncate(end);
            self.upper.push(p1);
        }
        if Slope::between(self.rect[0], p2).gt(slope1) {
            let mut max = Slope::between(p2, self.upper[self.upper_start]);
            let mut max_i = self.upper_start;
            for i in self.upper_start + 1..self.upper.len() {
                let v = Slope::between(p2, self.upper[i]);
                if v.lt(max) {
                    break;
                }
                max = v;
                max_i = i;
            }
            self.rect[0] = self.upper[max_i];
            self.rect[2] = p2;
            self.upper_start = max_i;
            let mut end = self.lower.len();
            while end >= self.lower_start + 2
                && cross(self.lower[end - 2], self.lower[end - 1], p2) >= 0
            {
                end -= 1;
            }
            self.lower.truncate(end);
            self.lower.push(p2);
        }
        self.points += 1;
        true
    }

    /// A line inside the feasible region, as `(slope, intercept)` relative
    /// to the segment's first x.
    fn line(&self) -> (f64, f64) {
        let [p0, p1, p2, p3] = self.rect;
        if self.points == 1 {
            return (0.0, (p0.y + p1.y) as f64 / 2.0);
        }
        let s1 = Slope::between(p0, p2);
        let s2 = Slope::between(p1, p3);
        let slope = ((s1.as_f64() + s2.as_f64()) / 2.0).max(0.0);
        let a = s1.dx * s2.dy - s1.dy * s2.dx;
        let (ix, iy) = if a == 0 {
            (p0.x as f64, (p0.y + p1.y) as f64 / 2.0)
        } else {
            let b = ((p1.x - p0.x) * (p3.y - p1.y) - (p1.y - p0.y) * (p3.x - p1.x)) as f64
                / a as f64;
            (
                p0.x as f64 + b * s1.dx as f64,
                p0.y as f64 + b * s1.dy as f64,
            )
        };
        (slope, iy - (ix - self.first_x as f64) * slope)
    }
}

/// First index in `keys` whose prediction misses its position by more than
/// `eps`, if any.
fn first_violation(keys: &[Key], model: &LinearModel, eps: u64) -> Option<usize> {
    let n = keys.len();
    keys.iter()
        .enumerate()
        .position(|(i, &k)| model.predict(k, n).abs_diff(i) as u64 > eps)
}

/// Segments `keys` (sorted, unique) so that every key's predicted position
/// within its segment is within `epsilon` of its true position.
///
/// The hull is run with a bound of `epsilon - 1`, which leaves one unit for
/// the floor in prediction. Each fitted segment is then verified and, in the
/// rare case of a floating-point miss, cut before the first violation.
pub fn segment(keys: &[Key], epsilon: u32) -> Vec<PlaSegment> {
    assert!(epsilon >= 1, "pla epsilon must be at least 1");
    let eps = epsilon as u64;
    let mut out = Vec::new();
    let mut start = 0;
    let mut hull = Hull::new(eps - 1);
    while start < keys.len() {
        let base = keys[start];
        let mut end = start;
        while end < keys.len() {
            let x = (keys[end] - base) as i128;
            if !hull.add(x, (end - start) as i128) {
                break;
            }
            end += 1;
        }
        let (slope, intercept) = hull.line();
        let mut model = LinearModel::anchored(base, slope, intercept);
        if let Some(bad) = first_violation(&keys[start..end], &model, eps) {
            // The prefix before `bad` already satisfies the model, and a
            // shorter segment only tightens the clamp.
            end = start + bad.max(1);
            if bad == 0 {
                model = LinearModel::anchored(base, 0.0, 0.0);
            }
        }
        out.push(PlaSegment {
            first_key: base,
            model,
            start,
            len: end - start,
        });
        start = end;
        hull = Hull::new(eps - 1);
    }
    out
}

/// Packs sorted `entries` gap-free under an error-bounded segment index.
pub fn pack(entries: &[(Key, Value)], epsilon: u32) -> PackedNode {
    let keys: Vec<Key> = entries.iter().map(|e| e.0).collect();
    let segments = segment(&keys, epsilon);
    PackedNode {
        segments: segments.into_boxed_slice(),
        keys: keys.into_boxed_slice(),
        values: entries.iter().map(|e| e.1).collect(),
        epsilon,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_error(p: &PackedNode) -> usize {
        p.keys
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let s = p.segments[p.segments.partition_point(|s| s.first_key <= k) - 1];
                (s.start + s.model.predict(k, s.len)).abs_diff(i)
            })
            .max()
            .unwrap_or(0)
    }

    fn pairs(keys: &[Key]) -> Vec<(Key, Value)> {
        keys.iter().map(|&k| (k, k + 1)).collect()
    }

    #[test]
    fn linear_keys_one_segment() {
        for eps in [1, 2, 16, 64] {
            let keys: Vec<Key> = (0..5000).map(|i| 1000 + 10 * i).collect();
            assert_eq!(segment(&keys, eps).len(), 1, "eps {eps}");
        }
    }

    #[test]
    fn jump_needs_two_segments() {
        let p = pack(&pairs(&[0, 1, 2, 1000, 1001]), 1);
        assert!(p.segments.len() >= 2);
        assert!(max_error(&p) <= 1);
        for (i, &k) in p.keys.iter().enumerate() {
            let mut probes = 0;
            assert_eq!(p.get(k, &mut probes), Some(p.values[i]));
        }
    }

    #[test]
    fn probe_bound() {
        let keys: Vec<Key> = (0..20_000u64).map(|i| i * i / 7 + i).collect();
        let mut dedup = keys.clone();
        dedup.dedup();
        let eps = 16;
        let p = pack(&pairs(&dedup), eps);
        let bound = (2.0 * eps as f64 + 1.0).log2().ceil() as u32 + 1;
        for &k in dedup.iter() {
            let mut probes = 0;
            assert!(p.get(k, &mut probes).is_some());
            assert!(probes <= bound, "{probes} > {bound}");
        }
        let mut probes = 0;
        assert_eq!(p.get(u64::MAX, &mut probes), None);
    }

    #[test]
    fn segment_count_not_above_greedy_cone() {
        // The hull-based segmentation is never worse than the greedy
        // shrinking-cone segmentation at the same integer bound.
        let mut keys: Vec<Key> = (0..3000u64).map(|i| (i * 2654435761) % 1_000_003).collect();
        keys.sort_unstable();
        keys.dedup();
        let eps = 8u32;
        let optimal = segment(&keys, eps).len();
        let cone = cone_segments(&keys, (eps - 1) as f64);
        assert!(optimal <= cone, "{optimal} > {cone}");
    }

    fn cone_segments(keys: &[Key], eps: f64) -> usize {
        let mut count = 0;
        let mut i = 0;
        while i < keys.len() {
            count += 1;
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut j = i + 1;
            while j < keys.len() {
                let dx = (keys[j] - keys[i]) as f64;
                let dy = (j - i) as f64;
                let (l, h) = ((dy - eps) / dx, (dy + eps) / dx);
                if l > hi || h < lo {
                    break;
                }
                lo = lo.max(l);
                hi = hi.min(h);
                j += 1;
            }
            i = j;
        }
        count
    }

    proptest! {
        #[test]
        fn error_bound_holds(mut keys in proptest::collection::vec(any::<u64>(), 1..800),
                             eps in 1u32..40) {
            keys.sort_unstable();
            keys.dedup();
            let p = pack(&pairs(&keys), eps);
            prop_assert!(max_error(&p) <= eps as usize);
            let covered: usize = p.segments.iter().map(|s| s.len).sum();
            prop_assert_eq!(covered, keys.len());
            for &k in keys.iter() {
                let mut probes = 0;
                prop_assert_eq!(p.get(k, &mut probes), Some(k + 1));
            }
        }
    }
}
