//! Deterministic synthetic fixtures: plans with known room layouts and
//! random knowledge graphs honoring all document invariants.
//!
//! The plan generator splits the interior with a seeded binary space
//! partition, separating rooms by one-pixel interior walls inside a
//! two-pixel exterior wall ring, the same shape real plans decode to.

use rand::Rng;

use crate::graph::{BBox, KnowledgeGraph, RoomNode};
use crate::raster::{RasterPlan, RoomClass, SemanticLabel};

/// A generated plan plus the intended room rectangles.
#[derive(Debug, Clone)]
pub struct SynthPlan {
    pub plan: RasterPlan,
    pub rooms: Vec<(RoomClass, BBox)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthPlanConfig {
    pub width: u32,
    pub height: u32,
    pub rooms: usize,
    pub with_front_door: bool,
}

impl Default for SynthPlanConfig {
    fn default() -> Self {
        SynthPlanConfig { width: 64, height: 64, rooms: 4, with_front_door: true }
    }
}

const MARGIN: u32 = 2;
const WALL: u32 = 2;
const MIN_CELL: u32 = 6;

/// Class pool by descending cell size: the largest cell becomes the living
/// room, and bedrooms repeat so multi-instance classes are common.
const CLASS_POOL: [RoomClass; 8] = [
    RoomClass::Living,
    RoomClass::Bedroom,
    RoomClass::Kitchen,
    RoomClass::Bathroom,
    RoomClass::Bedroom,
    RoomClass::Balcony,
    RoomClass::Storage,
    RoomClass::Bedroom,
];

/// Generates a plan with roughly `cfg.rooms` rooms (fewer when the canvas
/// cannot be split further).
pub fn synth_plan<R: Rng>(rng: &mut R, cfg: SynthPlanConfig) -> SynthPlan {
    let (w, h) = (cfg.width, cfg.height);
    let inner = BBox {
        x0: MARGIN + WALL,
        y0: MARGIN + WALL,
        x1: w - 1 - MARGIN - WALL,
        y1: h - 1 - MARGIN - WALL,
    };
    // Binary space partition: always split the largest splittable cell.
    let mut cells = vec![inner];
    while cells.len() < cfg.rooms {
        cells.sort_by_key(|c| std::cmp::Reverse(c.width() as u64 * c.height() as u64));
        let Some(pos) = cells.iter().position(|c| {
            c.width() > 2 * MIN_CELL || c.height() > 2 * MIN_CELL
        }) else {
            break;
        };
        let cell = cells.remove(pos);
        let split_vertical = if cell.width() > 2 * MIN_CELL && cell.height() > 2 * MIN_CELL
        {
            if cell.width() == cell.height() {
                rng.random::<bool>()
            } else {
                cell.width() > cell.height()
            }
        } else {
            cell.width() > 2 * MIN_CELL
        };
        if split_vertical {
            let s = rng.random_range(cell.x0 + MIN_CELL..=cell.x1 - MIN_CELL);
            cells.push(BBox { x1: s - 1, ..cell });
            cells.push(BBox { x0: s + 1, ..cell });
        } else {
            let s = rng.random_range(cell.y0 + MIN_CELL..=cell.y1 - MIN_CELL);
            cells.push(BBox { y1: s - 1, ..cell });
            cells.push(BBox { y0: s + 1, ..cell });
        }
    }
    cells.sort_by_key(|c| {
        (
            std::cmp::Reverse(c.width() as u64 * c.height() as u64),
            c.y0,
            c.x0,
        )
    });
    let rooms: Vec<(RoomClass, BBox)> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (CLASS_POOL[i % CLASS_POOL.len()], *c))
        .collect();

    let mut labels = vec![SemanticLabel::ExternalArea; (w as usize) * (h as usize)];
    let paint = |b: &BBox, label: SemanticLabel, labels: &mut Vec<SemanticLabel>| {
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                labels[(y * w + x) as usize] = label;
            }
        }
    };
    let wall_outer = BBox { x0: MARGIN, y0: MARGIN, x1: w - 1 - MARGIN, y1: h - 1 - MARGIN };
    paint(&wall_outer, SemanticLabel::ExteriorWall, &mut labels);
    paint(&inner, SemanticLabel::InteriorWall, &mut labels);
    for (class, cell) in &rooms {
        paint(cell, class.label(), &mut labels);
    }
    if cfg.with_front_door {
        // Two-pixel door on the top exterior wall above the first room.
        let cx = (rooms[0].1.x0 + rooms[0].1.x1) / 2;
        for y in MARGIN..MARGIN + WALL {
            for x in cx..=(cx + 1).min(w - 1) {
                labels[(y * w + x) as usize] = SemanticLabel::FrontDoor;
            }
        }
    }
    let plan = RasterPlan::from_label_grid(w, h, labels).expect("consistent grid");
    SynthPlan { plan, rooms }
}

/// A random graph over up to ten rooms with unique per-class areas, valid
/// canonical instance indices, shuffled node order and random edges.
pub fn random_graph<R: Rng>(rng: &mut R) -> KnowledgeGraph {
    let n = rng.random_range(1..=10);
    random_graph_sized(rng, n, false)
}

/// A random connected graph that always contains a living room.
pub fn random_connected_graph<R: Rng>(rng: &mut R) -> KnowledgeGraph {
    let n = rng.random_range(2..=9);
    random_graph_sized(rng, n, true)
}

fn random_graph_sized<R: Rng>(rng: &mut R, n: usize, connected: bool) -> KnowledgeGraph {
    let mut specs: Vec<(RoomClass, u64)> = Vec::with_capacity(n);
    let mut used_areas = std::collections::HashSet::new();
    for i in 0..n {
        let class = if connected && i == 0 {
            RoomClass::Living
        } else {
            RoomClass::ALL[rng.random_range(0..RoomClass::ALL.len())]
        };
        let area = loop {
            let a = rng.random_range(20..=1900u64);
            if used_areas.insert((class, a)) {
                break a;
            }
        };
        specs.push((class, area));
    }
    // Canonical instance index: descending area within class.
    let mut index_of = vec![0u32; n];
    for class in RoomClass::ALL {
        let mut members: Vec<usize> = (0..n).filter(|i| specs[*i].0 == class).collect();
        members.sort_by_key(|i| std::cmp::Reverse(specs[*i].1));
        for (rank, i) in members.into_iter().enumerate() {
            index_of[i] = (rank + 1) as u32;
        }
    }
    // Shuffled node order; ids follow list positions.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let nodes: Vec<RoomNode> = order
        .iter()
        .enumerate()
        .map(|(id, &i)| {
            let (class, area) = specs[i];
            let side = (area as f64).sqrt().ceil() as u32;
            let x0 = (id as u32 % 5) * 50;
            let y0 = (id as u32 / 5) * 50;
            let bbox = BBox { x0, y0, x1: x0 + side - 1, y1: y0 + side - 1 };
            RoomNode {
                id,
                class,
                index: index_of[i],
                area,
                center: bbox.center(),
                radius: bbox.width(),
                bbox,
            }
        })
        .collect();
    let mut edges = Vec::new();
    if connected && n >= 2 {
        // Random spanning tree first.
        for id in 1..n {
            let parent = rng.random_range(0..id);
            edges.push((parent, id));
        }
    }
    for u in 0..n {
        for v in (u + 1)..n {
            if !edges.contains(&(u, v)) && rng.random::<f64>() < 0.3 {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    KnowledgeGraph {
        image_width: 256,
        image_height: 256,
        nodes,
        edges,
    }
}
