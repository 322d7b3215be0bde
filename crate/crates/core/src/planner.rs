//! Vertex-cost shortest paths over the 4-connected grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_world::{CellPos, GridDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn apply(self, dims: GridDims, pos: CellPos) -> Option<CellPos> {
        let (dr, dc) = self.delta();
        dims.offset(pos, dr, dc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Constant cost `a` for entering any cell.
    pub step_cost: f64,
    /// Cells with occupancy above this threshold are infeasible.
    pub epsilon: f64,
    /// Total cell count `N`; scales the infeasible-cell cost.
    pub cell_count: usize,
    pub actions: Vec<Action>,
}

impl PlannerConfig {
    pub fn new(step_cost: f64, epsilon: f64, cell_count: usize) -> Result<Self> {
        let cfg = PlannerConfig {
            step_cost,
            epsilon,
            cell_count,
            actions: Action::ALL.to_vec(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_cost > 0.0 && self.step_cost.is_finite()) {
            return Err(Error::Argument(format!(
                "step cost must be positive, got {}",
                self.step_cost
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Argument(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.actions.is_empty() {
            return Err(Error::Argument("action set is empty".into()));
        }
        Ok(())
    }

    /// Cost assigned to every cell above the feasibility threshold.
    pub fn infeasible_cost(&self) -> f64 {
        self.cell_count as f64 * (self.epsilon + self.step_cost)
    }
}

/// Cost of traversing a cell with occupancy `x`.
pub fn cell_cost(x: f64, cfg: &PlannerConfig) -> f64 {
    if x <= cfg.epsilon {
        x + cfg.step_cost
    } else {
        cfg.infeasible_cost()
    }
}

pub fn cost_map(occupancy: &[f64], cfg: &PlannerConfig) -> Vec<f64> {
    occupancy.iter().map(|&x| cell_cost(x, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub vertices: Vec<CellPos>,
    pub total_cost: f64,
}

impl Path {
    pub fn start(&self) -> CellPos {
        self.vertices[0]
    }

    pub fn goal(&self) -> CellPos {
        *self.vertices.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Left-to-right sum of vertex costs, the same order the search uses.
    pub fn recompute_cost(&self, dims: GridDims, costs: &[f64]) -> f64 {
        self.vertices
            .iter()
            .fold(0.0, |acc, &p| acc + costs[dims.index(p)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    cost: f64,
    seq: u64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // min-heap on cost, then FIFO on insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over vertex costs; the path cost counts both endpoints.
///
/// Neighbours are expanded in the configured action order and a predecessor
/// is only replaced on a strict improvement, so ties resolve to the
/// earliest-settled predecessor and the result is reproducible.
pub fn shortest_path(
    costs: &[f64],
    dims: GridDims,
    start: CellPos,
    goal: CellPos,
    cfg: &PlannerConfig,
) -> Result<Path> {
    if costs.len() != dims.len() {
        return Err(Error::Argument(format!(
            "cost vector has {} entries for a {}-cell grid",
            costs.len(),
            dims.len()
        )));
    }
    for p in [start, goal] {
        if !dims.contains(p) {
            return Err(Error::Argument(format!("{p:?} is outside the grid")));
        }
    }
    if let Some(c) = costs.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::Argument(format!("negative or NaN cell cost {c}")));
    }

    let n = dims.len();
    let src = dims.index(start);
    let dst = dims.index(goal);
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    dist[src] = costs[src];
    heap.push(QueueEntry {
        cost: dist[src],
        seq,
        node: src,
    });

    while let Some(QueueEntry { cost, node, .. }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node == dst {
            break;
        }
        let pos = dims.pos(node);
        for action in &cfg.actions {
            let Some(next) = action.apply(dims, pos) else {
                continue;
            };
            let j = dims.index(next);
            if settled[j] {
                continue;
            }
            let candidate = cost + costs[j];
            if candidate < dist[j] {
                dist[j] = candidate;
                prev[j] = node;
                seq += 1;
                heap.push(QueueEntry {
                    cost: candidate,
                    seq,
                    node: j,
                });
            }
        }
    }

    if !settled[dst] {
        return Err(Error::NoPath {
            from: start,
            to: goal,
        });
    }
    let mut vertices = vec![goal];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        vertices.push(dims.pos(cur));
    }
    vertices.reverse();
    Ok(Path {
        vertices,
        total_cost: dist[dst],
    })
}
