use super::Point;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a point set.
///
/// Distances are squared Euclidean and ties are broken by the lower point
/// index, so results match an exhaustive scan exactly.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &[Point]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build_node(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (self.points[self.order[start]], self.points[self.order[start]]);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, query: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, query, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: &Point, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `min(k, len)` nearest points in nondecreasing distance order.
    pub fn knn(&self, query: &Point, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        self.knn_in(0, query, k, &mut heap);
        heap
    }

    fn knn_in(&self, node: usize, q: &Point, k: usize, best: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    let worse = |e: &(usize, f64)| e.1 > d2 || (e.1 == d2 && e.0 > i);
                    if best.len() == k && !worse(&best[k - 1]) {
                        continue;
                    }
                    let at = best.partition_point(|e| !worse(e));
                    best.insert(at, (i, d2));
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].1 {
                    self.knn_in(far, q, k, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), sorted by distance then index.
    pub fn within(&self, query: &Point, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_in(0, query, radius * radius, &mut out);
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn within_in(&self, node: usize, q: &Point, r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 <= r2 {
                        out.push((i, d2));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_in(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_in(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[Point], q: &Point, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn cloud() -> impl Strategy<Value = Vec<Point>> {
        prop::collection::vec(
            (-3i32..3, -3i32..3, -3i32..3, -1.0f64..1.0).prop_map(|(x, y, z, j)| {
                // Half the points on an integer lattice to create exact ties.
                if j > 0.0 {
                    Point::new(x as f64, y as f64, z as f64)
                } else {
                    Point::new(x as f64 + j, y as f64 * j, z as f64 - j)
                }
            }),
            1..200,
        )
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(points in cloud(), q in (-4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0), k in 1usize..40) {
            let index = NeighborIndex::build(&points);
            let q = Point::new(q.0, q.1, q.2);
            prop_assert_eq!(index.knn(&q, k), brute_knn(&points, &q, k.min(points.len())));
            prop_assert_eq!(index.nearest(&q).unwrap(), brute_knn(&points, &q, 1)[0]);
        }

        #[test]
        fn within_matches_brute_force(points in cloud(), r in 0.0f64..3.0) {
            let index = NeighborIndex::build(&points);
            let q = Point::new(0.25, -0.5, 0.0);
            let expected: Vec<_> = brute_knn(&points, &q, points.len())
                .into_iter()
                .filter(|e| e.1 <= r * r)
                .collect();
            prop_assert_eq!(index.within(&q, r), expected);
        }
    }

    #[test]
    fn knn_caps_at_len() {
        let pts = vec![Point::origin(), Point::new(1.0, 0.0, 0.0)];
        let index = NeighborIndex::build(&pts);
        assert_eq!(index.knn(&Point::origin(), 10).len(), 2);
        assert!(NeighborIndex::build(&[]).nearest(&Point::origin()).is_none());
    }
}
