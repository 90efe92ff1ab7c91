//! Exact KD-tree over fixed-dimension points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::SVector;

const LEAF_SIZE: usize = 8;
const GROUP_SIZE: usize = 32;

#[derive(Clone, Debug)]
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

/// Static KD-tree with exact nearest and k-nearest queries.
///
/// Results are ordered by `(squared distance, point index)`, so ties resolve
/// to the lowest index.
#[derive(Clone, Debug)]
pub struct KdTree<const D: usize> {
    points: Vec<SVector<f64, D>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<SVector<f64, D>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build(&points, &mut order, 0, n, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SVector<f64, D>] {
        &self.points
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &SVector<f64, D>) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    /// The `k` nearest points as `(index, squared distance)`, ascending.
    pub fn knn(&self, q: &SVector<f64, D>, k: usize) -> Vec<(usize, f64)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut offsets = SVector::<f64, D>::zeros();
        self.search(0, q, k, 0.0, &mut offsets, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    /// `rd` is the squared distance from `q` to the cell of `node`, built
    /// from the per-axis `offsets`.
    fn search(
        &self,
        node: usize,
        q: &SVector<f64, D>,
        k: usize,
        rd: f64,
        offsets: &mut SVector<f64, D>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
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
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, rd, offsets, heap);
                let old = offsets[axis];
                let far_rd = rd - old * old + diff * diff;
                // Equal distances must still be visited for index tie-breaks.
                if heap.len() < k || far_rd <= heap.peek().unwrap().dist2 {
                    offsets[axis] = diff;
                    self.search(far, q, k, far_rd, offsets, heap);
                    offsets[axis] = old;
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), unordered.
    pub fn within_radius(&self, q: &SVector<f64, D>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            let mut offsets = SVector::<f64, D>::zeros();
            self.radius_search(0, q, radius * radius, 0.0, &mut offsets, &mut out);
        }
        out
    }

    fn radius_search(
        &self,
        node: usize,
        q: &SVector<f64, D>,
        r2: f64,
        rd: f64,
        offsets: &mut SVector<f64, D>,
        out: &mut Vec<usize>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.radius_search(near, q, r2, rd, offsets, out);
                let old = offsets[axis];
                let far_rd = rd - old * old + diff * diff;
                if far_rd <= r2 {
                    offsets[axis] = diff;
                    self.radius_search(far, q, r2, far_rd, offsets, out);
                    offsets[axis] = old;
                }
            }
        }
    }
}

/// Closest pair between `a` and `b` among pairs no farther apart than
/// `bound`, as `(index in a, index in b, distance)`. Ties resolve to the
/// lowest `a` index, then the lowest `b` index.
///
/// Each set is grouped around evenly strided seed points (about 32 points
/// per group); a pair of groups
/// is expanded only if the seed distance minus both group radii does not
/// exceed the best distance found so far.
pub fn closest_pair<const D: usize>(
    a: &[SVector<f64, D>],
    b: &[SVector<f64, D>],
    bound: f64,
) -> Option<(usize, usize, f64)> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    // inclusive up to rounding of the squared bound
    let slack = 1.0 + 4.0 * f64::EPSILON;
    let ga = Groups::new(a);
    let gb = Groups::new(b);

    // seeds are members, so the closest seed pair is achievable
    let seed_tree = KdTree::new(gb.seeds.iter().map(|&j| b[j]).collect());
    let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
    for &i in &ga.seeds {
        let (k, d2) = seed_tree.nearest(&a[i]).expect("nonempty");
        best = min_pair(best, (d2, i, gb.seeds[k]));
    }
    let limit = best.0.sqrt().min(bound);

    let reach_b = gb.radius.iter().cloned().fold(0.0, f64::max);
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ka, &i) in ga.seeds.iter().enumerate() {
        for kb in seed_tree.within_radius(&a[i], limit + ga.radius[ka] + reach_b) {
            let lb = (a[i] - b[gb.seeds[kb]]).norm() - ga.radius[ka] - gb.radius[kb];
            if lb <= limit * slack {
                pairs.push((lb.max(0.0), ka, kb));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for (lb, ka, kb) in pairs {
        if lb * lb > best.0 * slack {
            break;
        }
        let seed = b[gb.seeds[kb]];
        for &i in &ga.members[ka] {
            let lb = ((a[i] - seed).norm() - gb.radius[kb]).max(0.0);
            if lb * lb > best.0 * slack {
                continue;
            }
            for &j in &gb.members[kb] {
                best = min_pair(best, ((a[i] - b[j]).norm_squared(), i, j));
            }
        }
    }
    (best.0 <= bound * bound * slack).then(|| (best.1, best.2, best.0.sqrt()))
}

fn min_pair(x: (f64, usize, usize), y: (f64, usize, usize)) -> (f64, usize, usize) {
    if y.0 < x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) {
        y
    } else {
        x
    }
}

/// Points grouped around strided seeds, with each group's covering radius.
struct Groups {
    seeds: Vec<usize>,
    members: Vec<Vec<usize>>,
    radius: Vec<f64>,
}

impl Groups {
    fn new<const D: usize>(points: &[SVector<f64, D>]) -> Self {
        let n = points.len();
        let k = n.div_ceil(GROUP_SIZE).clamp(1, n);
        let stride = n / k;
        let seeds: Vec<usize> = (0..k).map(|s| s * stride).collect();
        let tree = KdTree::new(seeds.iter().map(|&i| points[i]).collect());
        let mut members = vec![Vec::new(); k];
        let mut radius = vec![0.0f64; k];
        for (i, p) in points.iter().enumerate() {
            let (g, d2) = tree.nearest(p).expect("nonempty");
            members[g].push(i);
            radius[g] = radius[g].max(d2.sqrt());
        }
        Self {
            seeds,
            members,
            radius,
        }
    }
}

fn build<const D: usize>(
    points: &[SVector<f64, D>],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    // split along the widest extent
    let mut lo = SVector::<f64, D>::repeat(f64::INFINITY);
    let mut hi = SVector::<f64, D>::repeat(f64::NEG_INFINITY);
    for &i in &order[start..end] {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    if hi[axis] - lo[axis] <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis])
    });
    let value = points[order[mid]][axis];
    // Left subtree holds coordinates <= value, right subtree >= value.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, mid, nodes);
    let right = build(points, order, mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
