//! Seeded random desk-scale worlds for ensemble experiments.
//!
//! A map is a noisy free background crossed by vertical walls, each pierced
//! by a single gap, plus round obstacle blobs. Wall gaps are where a robot
//! without outside help loses time. Scenarios are resampled until the
//! Seeker's goal is reachable through cells at or below the feasibility
//! threshold.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_world::{CellPos, GridDims, WorldMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenParams {
    pub width: usize,
    pub height: usize,
    /// Number of vertical walls, spread across the interior columns.
    pub walls: usize,
    /// Height of the opening in each wall.
    pub gap: usize,
    pub blobs: usize,
    pub blob_radius: (f64, f64),
    /// Background occupancy is drawn from `[0, free_max]`.
    pub free_max: f64,
    /// Obstacle occupancy is drawn from `[obstacle_min, 1]`.
    pub obstacle_min: f64,
    /// Feasibility threshold used by the reachability check. Experiment
    /// files take it from the planner section.
    #[serde(skip)]
    pub epsilon: f64,
    pub max_attempts: usize,
}

impl Default for MapGenParams {
    fn default() -> Self {
        MapGenParams {
            width: 24,
            height: 24,
            walls: 2,
            gap: 2,
            blobs: 4,
            blob_radius: (1.0, 2.5),
            free_max: 0.3,
            obstacle_min: 0.8,
            epsilon: 0.501,
            max_attempts: 1000,
        }
    }
}

/// One sampled world plus the robots' endpoints and the Supporter's route.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomScenario {
    pub map: WorldMap,
    pub seeker_start: CellPos,
    pub seeker_goal: CellPos,
    pub supporter_path: Vec<CellPos>,
}

pub fn generate_map<R: Rng + ?Sized>(params: &MapGenParams, rng: &mut R) -> Result<WorldMap> {
    let dims = GridDims::new(params.width, params.height)?;
    if !(0.0..=1.0).contains(&params.free_max) || !(0.0..=1.0).contains(&params.obstacle_min) {
        return Err(Error::Argument("occupancy ranges must lie in [0, 1]".into()));
    }
    let mut occ: Vec<f64> = (0..dims.len())
        .map(|_| rng.random::<f64>() * params.free_max)
        .collect();
    let obstacle = |occ: &mut Vec<f64>, p: CellPos, rng: &mut R| {
        occ[dims.index(p)] = params.obstacle_min + rng.random::<f64>() * (1.0 - params.obstacle_min);
    };

    if params.walls > 0 && params.width > 4 {
        let span = params.width - 4;
        for w in 0..params.walls {
            let base = 2 + span * (w + 1) / (params.walls + 1);
            let jitter = rng.random_range(0..=2) as i64 - 1;
            let col = (base as i64 + jitter).clamp(2, params.width as i64 - 3) as usize;
            let gap = params.gap.min(params.height);
            let gap_start = rng.random_range(0..=params.height - gap);
            for row in 0..params.height {
                if row < gap_start || row >= gap_start + gap {
                    obstacle(&mut occ, CellPos::new(row, col), rng);
                }
            }
        }
    }

    for _ in 0..params.blobs {
        let center = CellPos::new(rng.random_range(0..params.height), rng.random_range(0..params.width));
        let (lo, hi) = params.blob_radius;
        let radius = lo + rng.random::<f64>() * (hi - lo).max(0.0);
        for i in 0..dims.len() {
            let p = dims.pos(i);
            if p.dist2(center) <= radius * radius {
                obstacle(&mut occ, p, rng);
            }
        }
    }
    WorldMap::new(params.width, params.height, occ)
}

/// Whether `goal` is reachable from `start` through cells at or below
/// `epsilon`, moving in the four grid directions.
pub fn feasible_connected(map: &WorldMap, start: CellPos, goal: CellPos, epsilon: f64) -> bool {
    let dims = map.dims();
    let ok = |p: CellPos| map.value(p) <= epsilon;
    if !ok(start) || !ok(goal) {
        return false;
    }
    let mut seen = vec![false; dims.len()];
    let mut queue = VecDeque::from([start]);
    seen[dims.index(start)] = true;
    while let Some(p) = queue.pop_front() {
        if p == goal {
            return true;
        }
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            if let Some(q) = dims.offset(p, dr, dc) {
                let qi = dims.index(q);
                if !seen[qi] && ok(q) {
                    seen[qi] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    false
}

/// A 4-connected staircase route from `from` to `to` that interleaves row
/// and column moves evenly.
pub fn staircase(from: CellPos, to: CellPos) -> Vec<CellPos> {
    let total_r = from.row.abs_diff(to.row);
    let total_c = from.col.abs_diff(to.col);
    let (mut done_r, mut done_c) = (0usize, 0usize);
    let mut cur = from;
    let mut path = vec![from];
    while cur != to {
        let row_next = done_c == total_c
            || (done_r < total_r
                && (done_r as f64 + 0.5) / total_r as f64 <= (done_c as f64 + 0.5) / total_c as f64);
        if row_next {
            cur.row = if to.row > cur.row { cur.row + 1 } else { cur.row - 1 };
            done_r += 1;
        } else {
            cur.col = if to.col > cur.col { cur.col + 1 } else { cur.col - 1 };
            done_c += 1;
        }
        path.push(cur);
    }
    path
}

/// One draw of Seeker endpoints: start in the two leftmost columns, goal in
/// the two rightmost. `None` when the goal is not reachable through feasible
/// cells.
pub fn random_endpoints<R: Rng + ?Sized>(map: &WorldMap, epsilon: f64, rng: &mut R) -> Option<(CellPos, CellPos)> {
    let (w, h) = (map.width(), map.height());
    let start = CellPos::new(rng.random_range(0..h), rng.random_range(0..2.min(w)));
    let goal = CellPos::new(rng.random_range(0..h), rng.random_range(w.saturating_sub(2)..w));
    feasible_connected(map, start, goal, epsilon).then_some((start, goal))
}

/// A staircase route from a random cell in the three leftmost columns to a
/// random cell in the three rightmost.
pub fn random_supporter_path<R: Rng + ?Sized>(dims: GridDims, rng: &mut R) -> Vec<CellPos> {
    let (w, h) = (dims.width, dims.height);
    let from = CellPos::new(rng.random_range(0..h), rng.random_range(0..3.min(w)));
    let to = CellPos::new(rng.random_range(0..h), rng.random_range(w.saturating_sub(3)..w));
    staircase(from, to)
}

fn check_size(params: &MapGenParams) -> Result<()> {
    if params.width < 8 || params.height < 4 {
        return Err(Error::Argument(format!(
            "random scenarios need at least an 8x4 map, got {}x{}",
            params.width, params.height
        )));
    }
    Ok(())
}

/// Samples a world with the Seeker crossing it left to right and the
/// Supporter flying a staircase between random points on the Seeker's side
/// and the goal side.
pub fn random_scenario<R: Rng + ?Sized>(params: &MapGenParams, rng: &mut R) -> Result<RandomScenario> {
    check_size(params)?;
    for _ in 0..params.max_attempts.max(1) {
        let map = generate_map(params, rng)?;
        let Some((seeker_start, seeker_goal)) = random_endpoints(&map, params.epsilon, rng) else {
            continue;
        };
        let supporter_path = random_supporter_path(map.dims(), rng);
        return Ok(RandomScenario {
            map,
            seeker_start,
            seeker_goal,
            supporter_path,
        });
    }
    Err(Error::Argument(format!(
        "no feasible scenario after {} attempts",
        params.max_attempts
    )))
}

/// Rejection-samples feasible Seeker endpoints on a fixed map.
pub fn sample_endpoints<R: Rng + ?Sized>(
    map: &WorldMap,
    epsilon: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(CellPos, CellPos)> {
    (0..max_attempts.max(1))
        .find_map(|_| random_endpoints(map, epsilon, rng))
        .ok_or_else(|| Error::Argument(format!("no feasible endpoints after {max_attempts} attempts")))
}
