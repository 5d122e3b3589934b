//! Static 3D KD-tree over box centroids supporting radius queries.

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Permutation of point indices laid out as an implicit balanced tree:
    /// the median of `order[lo..hi]` splits on axis `depth % 3`.
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build_range(&points, &mut order, 0);
        Self { points, order }
    }

    fn build_range(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
        if order.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let (left, right) = order.split_at_mut(mid);
        Self::build_range(points, left, depth + 1);
        Self::build_range(points, &mut right[1..], depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points within Euclidean distance `radius` of `query`
    /// (inclusive), in ascending index order.
    pub fn within_radius(&self, query: &[f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.search(
            query,
            radius * radius,
            radius,
            0,
            self.order.len(),
            0,
            &mut out,
        );
        out.sort_unstable();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        query: &[f64; 3],
        r2: f64,
        radius: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        out: &mut Vec<usize>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (0..3).map(|k| (p[k] - query[k]).powi(2)).sum::<f64>();
        if d2 <= r2 {
            out.push(idx);
        }
        let axis = depth % 3;
        let diff = query[axis] - p[axis];
        if diff - radius <= 0.0 {
            self.search(query, r2, radius, lo, mid, depth + 1, out);
        }
        if diff + radius >= 0.0 {
            self.search(query, r2, radius, mid + 1, hi, depth + 1, out);
        }
    }
}
