//! Experiment files, batch execution and output artifacts.
//!
//! An experiment file is TOML with one section per concern. Every key is
//! optional unless the chosen sweep needs it:
//!
//! ```toml
//! [map]
//! file = "maps/office.csv"      # .csv or .pgm; omitted -> generated from [generate]
//!
//! [generate]                    # random map parameters (see MapGenParams)
//! width = 24
//! height = 24
//!
//! [sim]
//! seeker_start = [12, 0]
//! seeker_goal = [12, 23]
//! supporter_path = [[0, 0], [0, 1], [1, 1]]
//! supporter_horizon = 3         # default: path length
//! seeker_fov = [3, 3]
//! supporter_fov = [7, 7]
//! step_cap = 1000               # default: 20 N
//!
//! [planner]
//! step_cost = 0.025
//! epsilon = 0.501
//!
//! [encoder]
//! sigma = 20.0
//! beta = 0.003
//! accounting = "effective"      # or "nominal"
//! templates = "theta.txt"       # omitted -> generated set of template_count
//! template_count = 10
//!
//! [bits]
//! n_m = 12
//! n_i = 4
//!
//! [experiment]
//! n_sim = 50
//! seed = 1
//! sweep = "random_scenario"     # fixed | supporter_path | seeker_endpoints | random_scenario
//! frames = false
//! frame_scale = 8
//! ```
//!
//! Simulation `i` draws from `ChaCha8Rng::seed_from_u64(seed + i)`, so any
//! row of the results can be rerun alone. A map that is generated rather
//! than loaded for the `fixed`, `supporter_path` and `seeker_endpoints`
//! sweeps is drawn once from `seed` itself. Relative paths are resolved
//! against the experiment file's directory.
//!
//! Outputs, all in the output directory:
//!
//! - `results.csv`: `sim,seed,framework,cost,bits,steps,reached`
//! - `metrics.csv`: `framework,failures,neutral,r_time,r_bits,n_sim`
//! - `steps.csv`: one line per timestep of every run
//! - `encoder.csv`: every scored candidate of every AS step
//! - `config.toml`: the fully resolved experiment, rerunnable as is
//! - `frames/simNNNN/`: `truth.ppm` and `{FI,AS,U}_tNNNN.ppm` when enabled

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{default_theta_set, BitAccounting, BitCostParams, TemplateSet};
use crate::error::{Error, Result};
use crate::grid_world::{CellPos, WorldMap};
use crate::mapgen::{generate_map, random_scenario, random_supporter_path, sample_endpoints, MapGenParams};
use crate::render::{self, Frame};
use crate::simulator::{batch_metrics, run_scenario_with, BatchMetrics, Framework, RunSummary, ScenarioConfig, ScenarioResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ABSNAV_OUT";
pub const DEFAULT_OUT_DIR: &str = "absnav-out";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub map: MapSection,
    pub generate: MapGenParams,
    pub sim: SimSection,
    pub planner: PlannerSection,
    pub encoder: EncoderSection,
    pub bits: BitCostParams,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeker_start: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeker_goal: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supporter_path: Option<Vec<[usize; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supporter_horizon: Option<usize>,
    pub seeker_fov: [usize; 2],
    pub supporter_fov: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            seeker_start: None,
            seeker_goal: None,
            supporter_path: None,
            supporter_horizon: None,
            seeker_fov: [3, 3],
            supporter_fov: [7, 7],
            step_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub step_cost: f64,
    pub epsilon: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            step_cost: 0.025,
            epsilon: 0.501,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub sigma: f64,
    pub beta: f64,
    pub accounting: BitAccounting,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub template_count: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            sigma: 20.0,
            beta: 0.003,
            accounting: BitAccounting::Effective,
            templates: None,
            template_count: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Every simulation runs the configuration as written.
    #[default]
    Fixed,
    /// New Supporter route per simulation.
    SupporterPath,
    /// New Seeker start and goal per simulation.
    SeekerEndpoints,
    /// New map, endpoints and route per simulation.
    RandomScenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_sim: usize,
    pub seed: u64,
    pub sweep: Sweep,
    pub frames: bool,
    pub frame_scale: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            n_sim: 1,
            seed: 0,
            sweep: Sweep::Fixed,
            frames: false,
            frame_scale: 8,
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn pos(p: [usize; 2]) -> CellPos {
    CellPos::new(p[0], p[1])
}

/// Everything one simulation needs.
#[derive(Debug, Clone)]
pub struct SimInstance {
    pub index: usize,
    pub seed: u64,
    pub map: WorldMap,
    pub config: ScenarioConfig,
}

impl ExperimentSpec {
    /// Parses experiment text; `base` anchors relative paths.
    pub fn parse(text: &str, context: &str, base: Option<&Path>) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            Error::Parse {
                context: context.to_string(),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        if let Some(base) = base {
            for p in [&mut spec.map.file, &mut spec.encoder.templates].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), path.parent())
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn mapgen(&self) -> MapGenParams {
        MapGenParams {
            epsilon: self.planner.epsilon,
            ..self.generate.clone()
        }
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.encoder.templates {
            Some(p) => TemplateSet::load(p),
            None => default_theta_set(self.sim.supporter_fov[0], self.sim.supporter_fov[1], self.encoder.template_count),
        }
    }

    /// The map shared by every simulation, if the sweep uses one.
    pub fn base_map(&self) -> Result<Option<WorldMap>> {
        if self.experiment.sweep == Sweep::RandomScenario {
            if self.map.file.is_some() {
                return Err(Error::Config(
                    "map.file cannot be combined with sweep = \"random_scenario\"".into(),
                ));
            }
            return Ok(None);
        }
        match &self.map.file {
            Some(p) => WorldMap::load_auto(p).map(Some),
            None => generate_map(&self.mapgen(), &mut ChaCha8Rng::seed_from_u64(self.experiment.seed)).map(Some),
        }
    }

    fn scenario_config(&self, start: CellPos, goal: CellPos, path: Vec<CellPos>, strict_horizon: bool) -> Result<ScenarioConfig> {
        let horizon = match self.sim.supporter_horizon {
            Some(h) if strict_horizon => h,
            Some(h) => h.min(path.len()),
            None => path.len(),
        };
        let mut cfg = ScenarioConfig::new(start, goal, path);
        cfg.supporter_horizon = horizon;
        cfg.seeker_fov = (self.sim.seeker_fov[0], self.sim.seeker_fov[1]);
        cfg.supporter_fov = (self.sim.supporter_fov[0], self.sim.supporter_fov[1]);
        cfg.step_cost = self.planner.step_cost;
        cfg.epsilon = self.planner.epsilon;
        cfg.sigma = self.encoder.sigma;
        cfg.beta = self.encoder.beta;
        cfg.bits = self.bits;
        cfg.accounting = self.encoder.accounting;
        cfg.step_cap = self.sim.step_cap;
        Ok(cfg)
    }

    fn need<T: Clone>(&self, value: &Option<T>, key: &str) -> Result<T> {
        value.clone().ok_or_else(|| {
            Error::Config(format!(
                "sim.{key} is required for sweep = {:?}",
                self.experiment.sweep
            ))
        })
    }

    /// Builds simulation `index`; `base` is the result of [`Self::base_map`].
    pub fn instance(&self, index: usize, base: Option<&WorldMap>) -> Result<SimInstance> {
        let seed = self.experiment.seed.wrapping_add(index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fixed_path = || -> Result<Vec<CellPos>> {
            Ok(self.need(&self.sim.supporter_path, "supporter_path")?.into_iter().map(pos).collect())
        };
        let fixed_ends = || -> Result<(CellPos, CellPos)> {
            Ok((
                pos(self.need(&self.sim.seeker_start, "seeker_start")?),
                pos(self.need(&self.sim.seeker_goal, "seeker_goal")?),
            ))
        };
        let base = || base.cloned().ok_or_else(|| Error::Config("sweep needs a base map".into()));
        let (map, config) = match self.experiment.sweep {
            Sweep::Fixed => {
                let (s, g) = fixed_ends()?;
                (base()?, self.scenario_config(s, g, fixed_path()?, true)?)
            }
            Sweep::SupporterPath => {
                let (s, g) = fixed_ends()?;
                let map = base()?;
                let path = random_supporter_path(map.dims(), &mut rng);
                let cfg = self.scenario_config(s, g, path, false)?;
                (map, cfg)
            }
            Sweep::SeekerEndpoints => {
                let map = base()?;
                let (s, g) = sample_endpoints(&map, self.planner.epsilon, self.generate.max_attempts, &mut rng)?;
                let cfg = self.scenario_config(s, g, fixed_path()?, true)?;
                (map, cfg)
            }
            Sweep::RandomScenario => {
                let sc = random_scenario(&self.mapgen(), &mut rng)?;
                let cfg = self.scenario_config(sc.seeker_start, sc.seeker_goal, sc.supporter_path, false)?;
                (sc.map, cfg)
            }
        };
        Ok(SimInstance {
            index,
            seed,
            map,
            config,
        })
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.n_sim < 1 {
            return Err(Error::Config("experiment.n_sim must be at least 1".into()));
        }
        if self.experiment.frame_scale < 1 {
            return Err(Error::Config("experiment.frame_scale must be at least 1".into()));
        }
        let thetas = self.templates()?;
        let base = self.base_map()?;
        if self.experiment.sweep != Sweep::RandomScenario {
            let first = self.instance(0, base.as_ref())?;
            first
                .config
                .validate(&first.map, &thetas)
                .map_err(|e| Error::Config(format!("simulation 0: {e}")))?;
        }
        Ok(())
    }
}

/// Runtime knobs that are not part of the experiment itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `0` lets the pool decide.
    pub jobs: usize,
    /// Forces frame output on.
    pub frames: bool,
    pub out_dir: PathBuf,
}

/// The default output directory: `$ABSNAV_OUT` or `absnav-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub index: usize,
    pub seed: u64,
    /// In [`Framework::ALL`] order.
    pub results: Vec<ScenarioResult>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub simulations: Vec<SimOutcome>,
    pub metrics: BatchMetrics,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run_one(
    spec: &ExperimentSpec,
    inst: &SimInstance,
    thetas: &TemplateSet,
    frame_dir: Option<&Path>,
) -> Result<SimOutcome> {
    inst.config
        .validate(&inst.map, thetas)
        .map_err(|e| Error::Config(format!("simulation {}: {e}", inst.index)))?;
    let dims = inst.map.dims();
    let scale = spec.experiment.frame_scale;
    let cfg = &inst.config;
    let dir = frame_dir.map(|d| d.join(format!("sim{:04}", inst.index)));
    if let Some(dir) = &dir {
        mkdir(dir)?;
        let truth = Frame::new()
            .layer(render::SUPPORTER_PATH, cfg.supporter_path.iter().copied())
            .layer(render::SEEKER, [cfg.seeker_start])
            .layer(render::GOAL, [cfg.seeker_goal]);
        write(&dir.join("truth.ppm"), truth.render(dims, inst.map.occupancy(), scale))?;
    }
    let mut results = Vec::with_capacity(3);
    for fw in Framework::ALL {
        let mut io_error = None;
        let r = run_scenario_with(cfg, &inst.map, thetas, fw, |f| {
            let Some(dir) = &dir else { return };
            if io_error.is_some() {
                return;
            }
            let frame = Frame::new()
                .layer(render::SUPPORTER_PATH, cfg.supporter_path.iter().copied())
                .layer(render::TRAJECTORY, f.trajectory.iter().copied())
                .layer(render::PLAN, f.plan.vertices.iter().copied())
                .layer(render::GOAL, [cfg.seeker_goal])
                .layer(render::SUPPORTER, f.supporter)
                .layer(render::SEEKER, f.trajectory.last().copied());
            let path = dir.join(format!("{}_t{:04}.ppm", fw.tag(), f.t));
            if let Err(e) = write(&path, frame.render(dims, f.estimate, scale)) {
                io_error = Some(e);
            }
        })?;
        if let Some(e) = io_error {
            return Err(e);
        }
        results.push(r);
    }
    Ok(SimOutcome {
        index: inst.index,
        seed: inst.seed,
        results,
    })
}

/// Runs every simulation of the experiment; results come back in
/// simulation order whatever the thread count.
pub fn execute(spec: &ExperimentSpec, jobs: usize, frame_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let thetas = spec.templates()?;
    let base = spec.base_map()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    let simulations: Vec<SimOutcome> = pool.install(|| {
        (0..spec.experiment.n_sim)
            .into_par_iter()
            .map(|i| {
                let inst = spec.instance(i, base.as_ref())?;
                run_one(spec, &inst, &thetas, frame_dir)
            })
            .collect::<Result<_>>()
    })?;
    let grouped: Vec<Vec<RunSummary>> = simulations
        .iter()
        .map(|s| s.results.iter().map(RunSummary::from).collect())
        .collect();
    let metrics = batch_metrics(&grouped)?;
    Ok(ExperimentOutcome {
        simulations,
        metrics,
    })
}

/// `execute` plus every output file.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let mut spec = spec.clone();
    spec.experiment.frames |= opts.frames;
    let out = &opts.out_dir;
    mkdir(out)?;
    let frame_dir = out.join("frames");
    let outcome = execute(&spec, opts.jobs, spec.experiment.frames.then_some(frame_dir.as_path()))?;
    write(&out.join("config.toml"), spec.to_toml()?)?;
    write(&out.join("results.csv"), results_csv(&outcome))?;
    write(&out.join("metrics.csv"), metrics_csv(&outcome.metrics))?;
    write(&out.join("steps.csv"), steps_csv(&outcome))?;
    write(&out.join("encoder.csv"), encoder_csv(&outcome))?;
    Ok(outcome)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn results_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from("sim,seed,framework,cost,bits,steps,reached\n");
    for s in &outcome.simulations {
        for r in &s.results {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.index,
                s.seed,
                r.framework,
                r.cost,
                r.total_bits,
                r.steps.len(),
                r.reached
            )
            .unwrap();
        }
    }
    out
}

pub fn metrics_csv(m: &BatchMetrics) -> String {
    let mut out = String::from("framework,failures,neutral,r_time,r_bits,n_sim\n");
    for f in Framework::ALL {
        let r_bits = if f == Framework::AbstractionSelection { opt(m.r_bits) } else { String::new() };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f,
            m.failures_of(f),
            m.neutral,
            m.r_time_of(f),
            r_bits,
            m.n_sim
        )
        .unwrap();
    }
    out
}

pub fn steps_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from(
        "sim,framework,t,seeker_row,seeker_col,supporter_row,supporter_col,theta,k_effective,bits,replica_gap\n",
    );
    for s in &outcome.simulations {
        for r in &s.results {
            for st in &r.steps {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    s.index,
                    r.framework,
                    st.t,
                    st.seeker.row,
                    st.seeker.col,
                    opt(st.supporter.map(|p| p.row)),
                    opt(st.supporter.map(|p| p.col)),
                    opt(st.theta),
                    st.k_effective,
                    st.bits,
                    opt(st.replica_gap)
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn encoder_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from("sim,t,theta,k_effective,bits,weighted_error,j,chosen\n");
    for s in &outcome.simulations {
        for r in s.results.iter().filter(|r| r.framework == Framework::AbstractionSelection) {
            for st in &r.steps {
                for c in &st.candidates {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        s.index,
                        st.t,
                        c.theta,
                        opt(c.k_effective),
                        opt(c.bits),
                        opt(c.weighted_error),
                        opt(c.j),
                        st.theta == Some(c.theta)
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}

/// Checks a template file and returns the printable report.
pub fn validate_templates(path: impl AsRef<Path>) -> Result<crate::abstraction::TemplateReport> {
    Ok(TemplateSet::load_unchecked(path)?.report())
}

/// Writes `count` generated maps as `map_NNNN.<ext>`; map `i` uses seed
/// `seed + i`.
pub fn gen_maps(params: &MapGenParams, seed: u64, count: usize, out_dir: &Path, format: crate::grid_world::MapFormat) -> Result<Vec<PathBuf>> {
    mkdir(out_dir)?;
    let ext = match format {
        crate::grid_world::MapFormat::Csv => "csv",
        crate::grid_world::MapFormat::Pgm => "pgm",
    };
    (0..count)
        .map(|i| {
            let map = generate_map(params, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))?;
            let path = out_dir.join(format!("map_{i:04}.{ext}"));
            map.save(&path, format)?;
            Ok(path)
        })
        .collect()
}
