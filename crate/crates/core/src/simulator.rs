//! The two-robot closed loop and the ensemble metrics.
//!
//! Each timestep the Seeker senses its window, the Supporter (while its
//! horizon lasts) senses its own window and transmits according to the
//! framework, then the Seeker decodes, replans on the estimated costs and
//! takes the first move of the new plan. Accumulated cost is always scored
//! on the true map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::{BitAccounting, BitCostParams, TemplateSet};
use crate::constraints::ConstraintStore;
use crate::decoder::{Decoder, PriorModel};
use crate::encoder::{path_weights, select_abstraction, CandidateScore, EncoderConfig, SelectionInput, SupporterBelief};
use crate::error::{Error, Result};
use crate::grid_world::{CellPos, WorldMap};
use crate::planner::{cell_cost, cost_map, shortest_path, Path, PlannerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Framework {
    /// Supporter sends every new cell at full resolution.
    #[serde(rename = "FI")]
    FullyInformed,
    /// Supporter sends the selected abstraction.
    #[serde(rename = "AS")]
    AbstractionSelection,
    /// No help from the Supporter.
    #[serde(rename = "U")]
    Uninformed,
}

impl Framework {
    pub const ALL: [Framework; 3] = [
        Framework::FullyInformed,
        Framework::AbstractionSelection,
        Framework::Uninformed,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Framework::FullyInformed => "FI",
            Framework::AbstractionSelection => "AS",
            Framework::Uninformed => "U",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FI" => Ok(Framework::FullyInformed),
            "AS" => Ok(Framework::AbstractionSelection),
            "U" => Ok(Framework::Uninformed),
            other => Err(Error::Argument(format!("unknown framework {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seeker_start: CellPos,
    pub seeker_goal: CellPos,
    pub supporter_path: Vec<CellPos>,
    /// Number of timesteps the Supporter transmits, `T_B,max`.
    pub supporter_horizon: usize,
    pub seeker_fov: (usize, usize),
    pub supporter_fov: (usize, usize),
    pub step_cost: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub beta: f64,
    pub bits: BitCostParams,
    pub accounting: BitAccounting,
    /// Defaults to `20 N`.
    pub step_cap: Option<usize>,
}

impl ScenarioConfig {
    /// Desk-scale defaults around the given endpoints and route.
    pub fn new(seeker_start: CellPos, seeker_goal: CellPos, supporter_path: Vec<CellPos>) -> Self {
        let supporter_horizon = supporter_path.len();
        ScenarioConfig {
            seeker_start,
            seeker_goal,
            supporter_path,
            supporter_horizon,
            seeker_fov: (3, 3),
            supporter_fov: (7, 7),
            step_cost: 0.025,
            epsilon: 0.501,
            sigma: 20.0,
            beta: 0.003,
            bits: BitCostParams::default(),
            accounting: BitAccounting::Effective,
            step_cap: None,
        }
    }

    pub fn planner(&self, cell_count: usize) -> Result<PlannerConfig> {
        PlannerConfig::new(self.step_cost, self.epsilon, cell_count)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            beta: self.beta,
            bits: self.bits,
            accounting: self.accounting,
        }
    }

    pub fn step_cap_for(&self, cell_count: usize) -> usize {
        self.step_cap.unwrap_or(20 * cell_count)
    }

    pub fn validate(&self, map: &WorldMap, thetas: &TemplateSet) -> Result<()> {
        let dims = map.dims();
        for (name, p) in [("seeker start", self.seeker_start), ("seeker goal", self.seeker_goal)] {
            if !dims.contains(p) {
                return Err(Error::Argument(format!("{name} {p:?} outside the map")));
            }
        }
        if let Some(p) = self.supporter_path.iter().find(|p| !dims.contains(**p)) {
            return Err(Error::Argument(format!("supporter path cell {p:?} outside the map")));
        }
        for pair in self.supporter_path.windows(2) {
            if pair[0].manhattan(pair[1]) > 1 {
                return Err(Error::Argument(format!(
                    "supporter path jumps from {:?} to {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.supporter_horizon > self.supporter_path.len() {
            return Err(Error::Argument(format!(
                "supporter horizon {} exceeds its {}-cell path",
                self.supporter_horizon,
                self.supporter_path.len()
            )));
        }
        for (name, (w, h)) in [("seeker", self.seeker_fov), ("supporter", self.supporter_fov)] {
            if w % 2 == 0 || h % 2 == 0 || w == 0 || h == 0 {
                return Err(Error::Argument(format!(
                    "{name} field of view must be odd, got {w}x{h}"
                )));
            }
        }
        if (thetas.window_w, thetas.window_h) != self.supporter_fov {
            return Err(Error::Argument(format!(
                "templates are for a {}x{} window but the supporter sees {}x{}",
                thetas.window_w, thetas.window_h, self.supporter_fov.0, self.supporter_fov.1
            )));
        }
        if !(self.sigma > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Argument("sigma must be positive and beta nonnegative".into()));
        }
        self.bits.validate(thetas.len())?;
        self.planner(map.len())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub seeker: CellPos,
    pub supporter: Option<CellPos>,
    pub theta: Option<usize>,
    /// Values (or exact cells) transmitted this step.
    pub k_effective: usize,
    pub bits: u64,
    pub candidates: Vec<CandidateScore>,
    /// `max |x_supporter - x_seeker|` when the Supporter's replica describes
    /// the same constraint set as the Seeker's store.
    pub replica_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub framework: Framework,
    /// Every cell occupied, start included, duplicates kept.
    pub trajectory: Vec<CellPos>,
    pub cost: f64,
    pub total_bits: u64,
    pub steps: Vec<StepRecord>,
    pub reached: bool,
}

/// Per-step view handed to a frame observer.
pub struct Frame<'a> {
    pub t: usize,
    pub estimate: &'a [f64],
    pub trajectory: &'a [CellPos],
    pub plan: &'a Path,
    pub supporter: Option<CellPos>,
}

/// Sum of true cell costs along the trajectory, repeats included.
pub fn accumulated_cost(trajectory: &[CellPos], map: &WorldMap, cfg: &PlannerConfig) -> f64 {
    trajectory
        .iter()
        .map(|&p| cell_cost(map.value(p), cfg))
        .sum()
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    map: &WorldMap,
    thetas: &TemplateSet,
    framework: Framework,
) -> Result<ScenarioResult> {
    run_scenario_with(cfg, map, thetas, framework, |_| {})
}

pub fn run_scenario_with<F>(
    cfg: &ScenarioConfig,
    map: &WorldMap,
    thetas: &TemplateSet,
    framework: Framework,
    mut observer: F,
) -> Result<ScenarioResult>
where
    F: FnMut(&Frame<'_>),
{
    cfg.validate(map, thetas)?;
    let dims = map.dims();
    let n = map.len();
    let planner = cfg.planner(n)?;
    let encoder = cfg.encoder();
    let prior = PriorModel::uniform(n);
    let step_cap = cfg.step_cap_for(n);
    let horizon = cfg.supporter_horizon.min(cfg.supporter_path.len());

    let mut seeker_store = ConstraintStore::new(n);
    let mut seeker_decoder = Decoder::default();
    let mut replica = ConstraintStore::new(n);
    let mut supporter_decoder = Decoder::default();
    let mut belief = SupporterBelief::new(n);

    let mut pos = cfg.seeker_start;
    let mut trajectory = vec![pos];
    let mut steps = Vec::new();
    let mut total_bits = 0u64;
    let mut shared_plan: Option<Path> = None;
    let mut t = 0usize;

    let reached = loop {
        if pos == cfg.seeker_goal {
            break true;
        }
        if t >= step_cap {
            break false;
        }

        let seeker_lm = map.local_window(pos, cfg.seeker_fov.0, cfg.seeker_fov.1)?;
        let observed: Vec<(usize, f64)> = seeker_lm.iter().collect();
        seeker_store.add_exact(&observed)?;
        belief.mark_seeker_window(&seeker_lm);

        let mut record = StepRecord {
            t,
            seeker: pos,
            supporter: None,
            theta: None,
            k_effective: 0,
            bits: 0,
            candidates: Vec::new(),
            replica_gap: None,
        };
        let mut predicted = None;

        if t < horizon && framework != Framework::Uninformed {
            let supporter_pos = cfg.supporter_path[t];
            record.supporter = Some(supporter_pos);
            let supporter_lm = map.local_window(supporter_pos, cfg.supporter_fov.0, cfg.supporter_fov.1)?;
            match framework {
                Framework::FullyInformed => {
                    let fresh: Vec<(usize, f64)> = supporter_lm
                        .iter()
                        .filter(|&(c, _)| !belief.has_sensed(c) && !belief.seeker_sensed[c])
                        .collect();
                    seeker_store.add_exact(&fresh)?;
                    record.k_effective = fresh.len();
                    record.bits = fresh.len() as u64 * cfg.bits.n_m as u64;
                }
                Framework::AbstractionSelection => {
                    let plan = match shared_plan.take() {
                        Some(p) => p,
                        None => {
                            let est = seeker_decoder.estimate(&seeker_store, &prior)?;
                            shortest_path(&cost_map(&est.values, &planner), dims, pos, cfg.seeker_goal, &planner)?
                        }
                    };
                    let weights = path_weights(&plan, cfg.sigma, dims)?;
                    belief.sense(&supporter_lm);
                    let selection = select_abstraction(
                        &SelectionInput {
                            weights: &weights,
                            belief: &belief,
                            store_prev: &replica,
                            theta_set: thetas,
                            seeker_lm: &seeker_lm,
                            supporter_lm: &supporter_lm,
                            prior: &prior,
                            config: &encoder,
                        },
                        &mut supporter_decoder,
                    )?;
                    record.candidates = selection.candidates.clone();
                    if let Some(chosen) = &selection.chosen {
                        seeker_store.add_message(&chosen.message);
                        seeker_store.reduce_independent()?;
                        record.theta = Some(chosen.theta);
                        record.k_effective = chosen.message.k_effective();
                        record.bits = chosen.message.bits;
                        predicted = Some(chosen.estimate.values.clone());
                    }
                    replica = selection.into_store();
                }
                Framework::Uninformed => unreachable!(),
            }
            belief.sense(&supporter_lm);
        }
        total_bits += record.bits;

        let est = seeker_decoder.estimate(&seeker_store, &prior)?;
        if let Some(pred) = predicted {
            if replica.same_solution_set(&seeker_store) {
                record.replica_gap = Some(
                    pred.iter()
                        .zip(&est.values)
                        .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
                );
            }
        }
        let plan = shortest_path(&cost_map(&est.values, &planner), dims, pos, cfg.seeker_goal, &planner)?;
        observer(&Frame {
            t,
            estimate: &est.values,
            trajectory: &trajectory,
            plan: &plan,
            supporter: record.supporter,
        });
        pos = plan.vertices[1];
        trajectory.push(pos);
        shared_plan = Some(plan);
        steps.push(record);
        t += 1;
    };

    Ok(ScenarioResult {
        framework,
        cost: accumulated_cost(&trajectory, map, &planner),
        trajectory,
        total_bits,
        steps,
        reached,
    })
}

/// Compact per-run numbers used by the ensemble metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub framework: Framework,
    pub cost: f64,
    pub bits: u64,
    pub steps: usize,
    pub reached: bool,
}

impl From<&ScenarioResult> for RunSummary {
    fn from(r: &ScenarioResult) -> Self {
        RunSummary {
            framework: r.framework,
            cost: r.cost,
            bits: r.total_bits,
            steps: r.steps.len(),
            reached: r.reached,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub n_sim: usize,
    /// Indexed like [`Framework::ALL`]: FI, AS, U.
    pub r_time: [f64; 3],
    /// AS bits over FI bits, averaged over simulations where FI sent anything.
    pub r_bits: Option<f64>,
    pub failures: [usize; 3],
    pub neutral: usize,
}

impl BatchMetrics {
    pub fn r_time_of(&self, f: Framework) -> f64 {
        self.r_time[slot(f)]
    }

    pub fn failures_of(&self, f: Framework) -> usize {
        self.failures[slot(f)]
    }
}

fn slot(f: Framework) -> usize {
    match f {
        Framework::FullyInformed => 0,
        Framework::AbstractionSelection => 1,
        Framework::Uninformed => 2,
    }
}

/// Relative tolerance for calling two accumulated costs equal.
pub const COST_TIE_TOL: f64 = 1e-9;

fn cost_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Time ratios, bit ratio, failures and neutral counts over simulations.
///
/// A framework fails in a simulation when it misses the goal or its cost is
/// strictly above both others; a simulation is neutral when all three costs
/// tie.
pub fn batch_metrics(simulations: &[Vec<RunSummary>]) -> Result<BatchMetrics> {
    let mut r_time = [0.0; 3];
    let mut failures = [0usize; 3];
    let mut neutral = 0;
    let mut bit_ratios = Vec::new();
    for (s, runs) in simulations.iter().enumerate() {
        let mut by = [None; 3];
        for r in runs {
            if by[slot(r.framework)].replace(*r).is_some() {
                return Err(Error::Argument(format!(
                    "simulation {s} has two {} results",
                    r.framework
                )));
            }
        }
        let mut got = [RunSummary {
            framework: Framework::FullyInformed,
            cost: 0.0,
            bits: 0,
            steps: 0,
            reached: false,
        }; 3];
        for f in Framework::ALL {
            got[slot(f)] = by[slot(f)].ok_or(Error::MissingFramework {
                framework: f.to_string(),
                simulation: s,
            })?;
        }
        let best = got.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
        for k in 0..3 {
            r_time[k] += got[k].cost / best;
            let strictly_worst = (0..3)
                .filter(|&o| o != k)
                .all(|o| got[k].cost > got[o].cost && !cost_eq(got[k].cost, got[o].cost));
            if !got[k].reached || strictly_worst {
                failures[k] += 1;
            }
        }
        if cost_eq(got[0].cost, got[1].cost) && cost_eq(got[1].cost, got[2].cost) && cost_eq(got[0].cost, got[2].cost) {
            neutral += 1;
        }
        let fi_bits = got[slot(Framework::FullyInformed)].bits;
        if fi_bits > 0 {
            bit_ratios.push(got[slot(Framework::AbstractionSelection)].bits as f64 / fi_bits as f64);
        }
    }
    let n_sim = simulations.len();
    if n_sim > 0 {
        for r in &mut r_time {
            *r /= n_sim as f64;
        }
    }
    let r_bits = if bit_ratios.is_empty() {
        None
    } else {
        Some(bit_ratios.iter().sum::<f64>() / bit_ratios.len() as f64)
    };
    Ok(BatchMetrics {
        n_sim,
        r_time,
        r_bits,
        failures,
        neutral,
    })
}
