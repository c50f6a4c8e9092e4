//! Uniform-grid hashing for fixed-radius neighbour queries on planar point sets.

use rustc_hash::FxHashMap;

/// Bucketed point index; queries visit the 3×3 block of cells around the probe.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    /// Cell key to a range of `order`.
    buckets: FxHashMap<(i64, i64), (u32, u32)>,
    /// Point indices grouped by cell, ascending within each cell.
    order: Vec<u32>,
    points: Vec<[f64; 2]>,
}

impl GridIndex {
    /// `cell` must be at least the largest query radius.
    pub fn new(points: Vec<[f64; 2]>, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let mut keyed: Vec<((i64, i64), u32)> = points.iter().enumerate().map(|(i, p)| (Self::key_of(*p, cell), i as u32)).collect();
        keyed.sort_unstable();
        let mut buckets = FxHashMap::default();
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let end = start + keyed[start..].iter().take_while(|k| k.0 == key).count();
            buckets.insert(key, (start as u32, end as u32));
            start = end;
        }
        Self { cell, buckets, order: keyed.into_iter().map(|k| k.1).collect(), points }
    }

    fn key_of(p: [f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Calls `f(index, squared_distance)` for every point within `radius` of `q`, in a
    /// deterministic order.
    pub fn for_each_within(&self, q: [f64; 2], radius: f64, mut f: impl FnMut(usize, f64)) {
        debug_assert!(radius <= self.cell + 1e-12);
        let (cx, cy) = Self::key_of(q, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(&(a, b)) = self.buckets.get(&(cx + dx, cy + dy)) {
                    for &i in &self.order[a as usize..b as usize] {
                        let p = self.points[i as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 <= r2 {
                            f(i as usize, d2);
                        }
                    }
                }
            }
        }
    }

    /// Nearest point within `radius`; ties go to the lower index.
    pub fn nearest_within(&self, q: [f64; 2], radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_within(q, radius, |i, d2| {
            if best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                best = Some((i, d2));
            }
        });
        best
    }

    pub fn any_within(&self, q: [f64; 2], radius: f64) -> bool {
        let mut found = false;
        self.for_each_within(q, radius, |_, _| found = true);
        found
    }
}
