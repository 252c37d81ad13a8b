//! Knowledge-graph extraction from decoded plans.
//!
//! Every 4-connected component of a room-class label becomes a node carrying
//! its pixel area, bounding box, center and radius; two nodes are connected
//! when their bounding boxes (optionally dilated) intersect. Graphs
//! serialize to a fixed JSON document with unknown fields rejected.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{RasterPlan, RoomClass};

/// Inclusive pixel bounding box, serialized as `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[u32; 4]> for BBox {
    fn from([x0, y0, x1, y1]: [u32; 4]) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 as f64 + self.x1 as f64) / 2.0,
            (self.y0 as f64 + self.y1 as f64) / 2.0,
        )
    }

    /// Closed-interval intersection test with both boxes expanded by
    /// `dilation` pixels on every side; touching counts as intersecting.
    pub fn intersects_dilated(&self, other: &BBox, dilation: u32) -> bool {
        let d = dilation as i64;
        let overlap = |a0: u32, a1: u32, b0: u32, b1: u32| {
            a0 as i64 - d <= b1 as i64 + d && b0 as i64 - d <= a1 as i64 + d
        };
        overlap(self.x0, self.x1, other.x0, other.x1)
            && overlap(self.y0, self.y1, other.y0, other.y1)
    }
}

/// One room instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomNode {
    pub id: usize,
    pub class: RoomClass,
    /// 1-based rank within the class, descending pixel area.
    pub index: u32,
    /// Pixel count of the room mask.
    pub area: u64,
    /// Inclusive bounds as `[x0, y0, x1, y1]`.
    pub bbox: BBox,
    /// Midpoint of the bounding box.
    pub center: (f64, f64),
    /// Bounding-box width, kept as node metadata.
    pub radius: u32,
}

/// Rooms as nodes plus bbox-adjacency edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeGraph {
    pub image_width: u32,
    pub image_height: u32,
    pub nodes: Vec<RoomNode>,
    /// Unordered pairs stored as `(min_id, max_id)`, lexicographically sorted.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::Parse { .. } => "ParseError",
            GraphError::InvariantViolation(_) => "InvariantViolation",
        }
    }
}

/// One connected component of a room-class label.
#[derive(Debug, Clone)]
pub struct RoomMask {
    pub class: RoomClass,
    /// Member pixels as `(x, y)`.
    pub pixels: Vec<(u32, u32)>,
}

impl RoomMask {
    pub fn bbox(&self) -> BBox {
        let mut it = self.pixels.iter();
        let &(x, y) = it.next().expect("mask is never empty");
        let mut b = BBox { x0: x, y0: y, x1: x, y1: y };
        for &(x, y) in it {
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x);
            b.y1 = b.y1.max(y);
        }
        b
    }
}

/// Splits the plan's room pixels into 4-connected components, one mask per
/// room instance. Masks are disjoint and cover every room-class pixel;
/// ordering follows the row-major position of each component's first pixel.
pub fn segment_rooms(plan: &RasterPlan) -> Vec<RoomMask> {
    let width = plan.width();
    let height = plan.height();
    let mut visited = vec![false; (width as usize) * (height as usize)];
    let mut masks = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let idx = (y * width + x) as usize;
            if visited[idx] {
                continue;
            }
            let class = match plan.label(x, y).room_class() {
                Some(c) => c,
                None => continue,
            };
            // Depth-first fill over same-label neighbors.
            let label = plan.label(x, y);
            let mut pixels = Vec::new();
            let mut stack = vec![(x, y)];
            visited[idx] = true;
            while let Some((cx, cy)) = stack.pop() {
                pixels.push((cx, cy));
                let neighbors = [
                    (cx.wrapping_sub(1), cy),
                    (cx + 1, cy),
                    (cx, cy.wrapping_sub(1)),
                    (cx, cy + 1),
                ];
                for (nx, ny) in neighbors {
                    if nx >= width || ny >= height {
                        continue;
                    }
                    let nidx = (ny * width + nx) as usize;
                    if !visited[nidx] && plan.label(nx, ny) == label {
                        visited[nidx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            masks.push(RoomMask { class, pixels });
        }
    }
    masks
}

/// Builds the knowledge graph of a plan.
///
/// Instance indices are assigned within each class by descending pixel area,
/// breaking ties by smaller `(y0, x0)`. Node ids run over classes in palette
/// order, then by instance index. An edge is present exactly when the two
/// bounding boxes, each expanded by `dilation`, intersect.
pub fn extract_graph(plan: &RasterPlan, dilation: u32) -> KnowledgeGraph {
    let masks = segment_rooms(plan);
    let mut per_class: HashMap<RoomClass, Vec<(BBox, u64)>> = HashMap::new();
    for mask in &masks {
        per_class
            .entry(mask.class)
            .or_default()
            .push((mask.bbox(), mask.pixels.len() as u64));
    }
    let mut nodes = Vec::new();
    for class in RoomClass::ALL {
        let Some(mut instances) = per_class.remove(&class) else {
            continue;
        };
        instances.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(a.0.y0.cmp(&b.0.y0))
                .then(a.0.x0.cmp(&b.0.x0))
        });
        for (i, (bbox, area)) in instances.into_iter().enumerate() {
            nodes.push(RoomNode {
                id: nodes.len(),
                class,
                index: (i + 1) as u32,
                area,
                center: bbox.center(),
                radius: bbox.width(),
                bbox,
            });
        }
    }
    let mut edges = Vec::new();
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            if nodes[i].bbox.intersects_dilated(&nodes[j].bbox, dilation) {
                edges.push((i, j));
            }
        }
    }
    KnowledgeGraph {
        image_width: plan.width(),
        image_height: plan.height(),
        nodes,
        edges,
    }
}

impl KnowledgeGraph {
    /// Checks the structural invariants of the document format.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut ids = std::collections::HashSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id) {
                return Err(GraphError::InvariantViolation(format!(
                    "duplicate node id {}",
                    node.id
                )));
            }
            if node.bbox.x0 > node.bbox.x1 || node.bbox.y0 > node.bbox.y1 {
                return Err(GraphError::InvariantViolation(format!(
                    "node {} has an inverted bbox",
                    node.id
                )));
            }
            if node.bbox.x1 >= self.image_width || node.bbox.y1 >= self.image_height {
                return Err(GraphError::InvariantViolation(format!(
                    "node {} bbox exceeds image bounds",
                    node.id
                )));
            }
            let cell_count = node.bbox.width() as u64 * node.bbox.height() as u64;
            if node.area < 1 || node.area > cell_count {
                return Err(GraphError::InvariantViolation(format!(
                    "node {} area {} outside [1, {}]",
                    node.id, node.area, cell_count
                )));
            }
            let center = node.bbox.center();
            if node.center != center {
                return Err(GraphError::InvariantViolation(format!(
                    "node {} center is not the bbox midpoint",
                    node.id
                )));
            }
            if node.radius != node.bbox.width() {
                return Err(GraphError::InvariantViolation(format!(
                    "node {} radius is not the bbox width",
                    node.id
                )));
            }
        }
        for class in RoomClass::ALL {
            let mut indices: Vec<u32> = self
                .nodes
                .iter()
                .filter(|n| n.class == class)
                .map(|n| n.index)
                .collect();
            indices.sort_unstable();
            for (i, idx) in indices.iter().enumerate() {
                if *idx != (i + 1) as u32 {
                    return Err(GraphError::InvariantViolation(format!(
                        "class {class} instance indices are not 1..k"
                    )));
                }
            }
        }
        for (u, v) in &self.edges {
            if u == v {
                return Err(GraphError::InvariantViolation(format!("self-edge at {u}")));
            }
            if !ids.contains(u) || !ids.contains(v) {
                return Err(GraphError::InvariantViolation(format!(
                    "edge ({u}, {v}) names an unknown node"
                )));
            }
        }
        Ok(())
    }

    pub fn node_by_id(&self, id: usize) -> Option<&RoomNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn class_count(&self, class: RoomClass) -> usize {
        self.nodes.iter().filter(|n| n.class == class).count()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == key)
    }

    /// Adjacency lists keyed by position in `nodes`.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let pos: HashMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            let (pu, pv) = (pos[&u], pos[&v]);
            adj[pu].push(pv);
            adj[pv].push(pu);
        }
        adj
    }

    /// True when every node is reachable from every other (vacuously true
    /// for empty and single-node graphs).
    pub fn is_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.nodes.len()
    }

    /// BFS hop distances from a set of start positions (indices into `nodes`).
    pub fn bfs_distances(&self, starts: &[usize]) -> Vec<Option<u32>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.nodes.len()];
        let mut queue = std::collections::VecDeque::new();
        for &s in starts {
            dist[s] = Some(0);
            queue.push_back(s);
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if dist[j].is_none() {
                    dist[j] = Some(dist[i].unwrap() + 1);
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// Serializes a graph to its JSON document form.
pub fn serialize_graph(kg: &KnowledgeGraph) -> String {
    serde_json::to_string_pretty(kg).expect("graph serialization is infallible")
}

/// Parses and validates a graph document.
pub fn deserialize_graph(text: &str) -> Result<KnowledgeGraph, GraphError> {
    let kg: KnowledgeGraph = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    kg.validate()?;
    Ok(kg)
}
