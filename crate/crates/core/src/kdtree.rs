//! Static 2D kd-tree over quantized canvas positions.
//!
//! Every point carries the index of the stream event it came from. Each node
//! also stores the smallest event index found in its subtree, so "is there an
//! event *before index k* within radius r of q" can prune whole subtrees that
//! only contain later events.

/// Integer pixel position.
pub type PixelPos = (i64, i64);

#[derive(Debug, Clone)]
struct Node {
    pos: PixelPos,
    event_index: usize,
    /// Smallest `event_index` in the subtree rooted here (inclusive).
    min_index: usize,
    axis: u8,
    left: Option<usize>,
    right: Option<usize>,
}

/// Kd-tree answering radius queries restricted to earlier events.
#[derive(Debug, Clone, Default)]
pub struct PositionIndex {
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl PositionIndex {
    /// Builds the tree from `(position, event_index)` pairs.
    pub fn build(points: &[(PixelPos, usize)]) -> Self {
        let mut items = points.to_vec();
        let mut nodes = Vec::with_capacity(items.len());
        let root = build_rec(&mut items, 0, &mut nodes);
        Self { nodes, root }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True when some point with `event_index < before` lies within
    /// Euclidean distance `radius` of `query`.
    pub fn any_before_within(&self, query: PixelPos, radius: f64, before: usize) -> bool {
        let r2 = radius * radius;
        let mut stack = Vec::with_capacity(32);
        if let Some(root) = self.root {
            stack.push(root);
        }
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.min_index >= before {
                continue;
            }
            if node.event_index < before && dist2(node.pos, query) <= r2 {
                return true;
            }
            let (q, p) = if node.axis == 0 { (query.0, node.pos.0) } else { (query.1, node.pos.1) };
            let diff = (q - p) as f64;
            // left subtree holds coordinates <= p, right holds >= p
            let (near, far) = if diff <= 0.0 { (node.left, node.right) } else { (node.right, node.left) };
            if let Some(f) = far {
                if diff * diff <= r2 {
                    stack.push(f);
                }
            }
            if let Some(n) = near {
                stack.push(n);
            }
        }
        false
    }
}

fn dist2(a: PixelPos, b: PixelPos) -> f64 {
    let dx = (a.0 - b.0) as f64;
    let dy = (a.1 - b.1) as f64;
    dx * dx + dy * dy
}

fn build_rec(items: &mut [(PixelPos, usize)], depth: usize, nodes: &mut Vec<Node>) -> Option<usize> {
    if items.is_empty() {
        return None;
    }
    let axis = (depth % 2) as u8;
    let key = |p: &(PixelPos, usize)| if axis == 0 { (p.0 .0, p.0 .1, p.1) } else { (p.0 .1, p.0 .0, p.1) };
    items.sort_unstable_by_key(key);
    let mid = items.len() / 2;
    let (pos, event_index) = items[mid];
    let id = nodes.len();
    nodes.push(Node { pos, event_index, min_index: event_index, axis, left: None, right: None });
    let (lo, rest) = items.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(lo, depth + 1, nodes);
    let right = build_rec(hi, depth + 1, nodes);
    let mut min_index = event_index;
    for child in [left, right].into_iter().flatten() {
        min_index = min_index.min(nodes[child].min_index);
    }
    let node = &mut nodes[id];
    node.left = left;
    node.right = right;
    node.min_index = min_index;
    Some(id)
}
