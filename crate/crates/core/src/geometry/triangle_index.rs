use super::{Point, TriMesh};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
struct Node {
    lo: Point,
    hi: Point,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Bounding-volume hierarchy over the faces of a mesh for exact
/// point-to-surface distance queries.
#[derive(Debug, Clone)]
pub struct TriangleIndex {
    triangles: Vec<[Point; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleIndex {
    pub fn build(mesh: &TriMesh) -> Self {
        let triangles: Vec<_> = (0..mesh.faces().len()).map(|f| mesh.triangle(f)).collect();
        let mut index = Self {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        if !index.triangles.is_empty() {
            index.build_node(0, index.triangles.len());
        }
        index
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn bounds(&self, start: usize, end: usize) -> (Point, Point) {
        let first = self.triangles[self.order[start]][0];
        self.order[start..end]
            .iter()
            .flat_map(|&t| self.triangles[t].iter())
            .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)))
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let (lo, hi) = self.bounds(start, end);
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let tris = &self.triangles;
        let centroid = |t: usize| tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis];
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroid(a).total_cmp(&centroid(b)));
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    /// Squared distance from `p` to the closest face, with that face index.
    pub fn closest(&self, p: &Point) -> Option<(usize, f64)> {
        if self.triangles.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.closest_in(0, p, &mut best);
        Some(best)
    }

    pub fn distance(&self, p: &Point) -> f64 {
        self.closest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }

    fn closest_in(&self, node: usize, p: &Point, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        if box_distance_squared(&n.lo, &n.hi, p) > best.1 {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &t in &self.order[start..end] {
                    let [a, b, c] = self.triangles[t];
                    let d2 = (closest_point_on_triangle(p, &a, &b, &c) - p).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && t < best.0) {
                        *best = (t, d2);
                    }
                }
            }
            NodeKind::Inner { left, right } => {
                let dl = box_distance_squared(&self.nodes[left].lo, &self.nodes[left].hi, p);
                let dr = box_distance_squared(&self.nodes[right].lo, &self.nodes[right].hi, p);
                let (first, second) = if dl <= dr { (left, right) } else { (right, left) };
                self.closest_in(first, p, best);
                self.closest_in(second, p, best);
            }
        }
    }
}

fn box_distance_squared(lo: &Point, hi: &Point, p: &Point) -> f64 {
    (0..3)
        .map(|i| {
            let d = (lo[i] - p[i]).max(0.0).max(p[i] - hi[i]);
            d * d
        })
        .sum()
}

/// Closest point on triangle `abc` to `p` (Voronoi-region method).
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
