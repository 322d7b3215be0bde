//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! of them fails.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use absnav::abstraction::{apply_template, default_theta_set, BitAccounting, BitCostParams, TemplateSet};
use absnav::constraints::ConstraintStore;
use absnav::decoder::{estimate, saa_check, Decoder, PriorModel};
use absnav::encoder::{path_weights, select_abstraction, EncoderConfig, PathWeightField, Selection, SelectionInput, SupporterBelief};
use absnav::experiment::{execute, run_experiment, ExperimentOutcome, ExperimentSpec, RunOptions};
use absnav::grid_world::{CellPos, GridDims, LocalMap, WorldMap};
use absnav::mapgen::{generate_map, random_scenario, staircase, MapGenParams};
use absnav::planner::{cost_map, shortest_path, Path, PlannerConfig};
use absnav::simulator::{run_scenario, Framework, ScenarioConfig, ScenarioResult};
use absnav::sparse::SparseRow;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------------------
// brute-force grid search over the free coordinates of {Ax = b}

/// Dense row-reduced echelon form of `[A | b]`.
struct Echelon {
    n: usize,
    /// (pivot column, coefficients on the free columns, rhs)
    pivots: Vec<(usize, Vec<f64>, f64)>,
    free: Vec<usize>,
}

fn echelon(rows: &[(Vec<f64>, f64)], n: usize) -> Echelon {
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|(a, b)| {
            let mut r = a.clone();
            r.push(*b);
            r
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..n {
        let Some(p) = (r..m.len()).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())) else {
            break;
        };
        if m[p][c].abs() < 1e-12 {
            continue;
        }
        m.swap(r, p);
        let lead = m[r][c];
        for v in m[r].iter_mut() {
            *v /= lead;
        }
        for i in 0..m.len() {
            if i != r && m[i][c] != 0.0 {
                let f = m[i][c];
                for k in 0..=n {
                    m[i][k] -= f * m[r][k];
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();
    let pivots = pivot_cols
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, free.iter().map(|&f| m[i][f]).collect(), m[i][n]))
        .collect();
    Echelon { n, pivots, free }
}

impl Echelon {
    fn point(&self, free_vals: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (&f, &v) in self.free.iter().zip(free_vals) {
            x[f] = v;
        }
        for (c, coef, rhs) in &self.pivots {
            x[*c] = rhs - coef.iter().zip(free_vals).map(|(a, v)| a * v).sum::<f64>();
        }
        x
    }
}

fn box_violation(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, &v| m.max(-v).max(v - 1.0))
}

/// Minimizes `f` over `{Ax = b, 0 <= x <= 1}` by enumerating the free
/// coordinates on a 0.01 grid, then refining around the best point on
/// successively finer local grids. Infeasible points carry a steep penalty.
fn grid_search(ech: &Echelon, f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let d = ech.free.len();
    let score = |z: &[f64]| {
        let x = ech.point(z);
        let v = box_violation(&x);
        (f(&x) + 1e8 * v * v, x)
    };
    let mut best_z = vec![0.0; d];
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; d];
    loop {
        let z: Vec<f64> = idx.iter().map(|&i| i as f64 / 100.0).collect();
        let (s, _) = score(&z);
        if s < best {
            best = s;
            best_z = z;
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] <= 100 {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    for step in [1e-3, 1e-4, 1e-5, 1e-6] {
        let center = best_z.clone();
        let mut off = vec![-10i32; d];
        loop {
            let z: Vec<f64> = center
                .iter()
                .zip(&off)
                .map(|(c, &o)| (c + o as f64 * step).clamp(0.0, 1.0))
                .collect();
            let (s, _) = score(&z);
            if s < best {
                best = s;
                best_z = z;
            }
            let mut k = 0;
            while k < d {
                off[k] += 1;
                if off[k] <= 10 {
                    break;
                }
                off[k] = -10;
                k += 1;
            }
            if k == d {
                break;
            }
        }
    }
    let x = ech.point(&best_z);
    (x.clone(), f(&x))
}

/// Averaging rows consistent with a random truth, at most `max_rows` of
/// them, with `n - rank <= max_free`.
fn small_instance(rng: &mut ChaCha8Rng, n_range: std::ops::RangeInclusive<usize>, max_rows: usize, max_free: usize) -> (Vec<(Vec<f64>, f64)>, Echelon) {
    loop {
        let n = rng.random_range(n_range.clone());
        let truth: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let k = rng.random_range(1..=max_rows);
        let rows: Vec<(Vec<f64>, f64)> = (0..k)
            .map(|_| {
                let s = rng.random_range(1..=n.min(4));
                let mut a = vec![0.0; n];
                for c in sample(rng, n, s) {
                    a[c] = 1.0 / s as f64;
                }
                let b = a.iter().zip(&truth).map(|(p, q)| p * q).sum();
                (a, b)
            })
            .collect();
        let ech = echelon(&rows, n);
        if ech.free.len() <= max_free {
            return (rows, ech);
        }
    }
}

fn store_from_dense(rows: &[(Vec<f64>, f64)], n: usize) -> ConstraintStore {
    let mut s = ConstraintStore::new(n);
    for (a, b) in rows {
        let row = SparseRow::new(a.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(c, &w)| (c, w)).collect());
        s.add_row(row, *b);
    }
    s.reduce_independent().unwrap();
    s
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut dx, mut df) = (0.0f64, 0.0f64);
    let mut viol = 0.0f64;
    for _ in 0..100 {
        let (rows, ech) = small_instance(&mut rng, 1..=6, 3, 3);
        let n = ech.n;
        let mu: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let f = |x: &[f64]| sq_dist(x, &mu);
        let (xg, fg) = grid_search(&ech, &f);
        viol = viol.max(box_violation(&xg));
        let qp = estimate(&store_from_dense(&rows, n), &PriorModel::with_mean(mu.clone()).unwrap()).unwrap();
        dx = dx.max(max_abs_diff(&qp.values, &xg));
        df = df.max((f(&qp.values) - fg).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        dx <= 1e-2 && df <= 1e-4 && viol <= 1e-6 && secs < 60.0,
        format!("100 instances, max |dx| = {dx:.2e} (tol 1e-2), max |df| = {df:.2e} (tol 1e-4), grid box slack {viol:.1e} (tol 1e-6), {secs:.1} s (< 60 s)"),
    )
}

// ---------------------------------------------------------------------------

fn random_store(rng: &mut ChaCha8Rng, n: usize) -> (ConstraintStore, Vec<(SparseRow, f64)>) {
    let truth: Vec<f64> = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0..=2 => 0.0,
            3..=4 => 1.0,
            _ => rng.random(),
        })
        .collect();
    let mut raw = Vec::new();
    for _ in 0..rng.random_range(0..=n) {
        let s = rng.random_range(1..=n.min(5));
        let cells = sample(rng, n, s);
        let row = SparseRow::new(cells.iter().map(|c| (c, 1.0 / s as f64)).collect());
        let v = row.dot(&truth);
        raw.push((row, v));
    }
    let pins = rng.random_range(0..=n / 3);
    for c in sample(rng, n, pins) {
        raw.push((SparseRow::new(vec![(c, 1.0)]), truth[c]));
    }
    let mut store = ConstraintStore::new(n);
    for (row, v) in &raw {
        store.add_row(row.clone(), *v);
    }
    store.reduce_independent().unwrap();
    (store, raw)
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut identical = 0;
    for _ in 0..20 {
        let n = rng.random_range(6..=30);
        let (store, _) = random_store(&mut rng, n);
        let prior = PriorModel::with_mean((0..n).map(|_| rng.random()).collect()).unwrap();
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let spd = &b * b.transpose() + DMatrix::identity(n, n);
        let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.01..10.0)));
        let plain = estimate(&store, &prior).unwrap();
        let same = [spd, diag].into_iter().all(|cov| {
            let e = estimate(&store, &prior.clone().with_covariance(cov)).unwrap();
            e.values.iter().zip(&plain.values).all(|(p, q)| p.to_bits() == q.to_bits())
        });
        identical += same as usize;
    }

    let mut worst = 0.0f64;
    let mut worst_lib = 0.0f64;
    for _ in 0..10 {
        let (rows, ech) = small_instance(&mut rng, 4..=4, 2, 3);
        let m = 10_000;
        let samples: Vec<[f64; 4]> = (0..m).map(|_| std::array::from_fn(|_| rng.random())).collect();
        // (1/m) sum_i ||x - xi_i||^2 = ||x||^2 - 2 x.mean + mean ||xi||^2
        let mut mean = [0.0; 4];
        let mut mean_sq = 0.0;
        for s in &samples {
            for k in 0..4 {
                mean[k] += s[k] / m as f64;
            }
            mean_sq += s.iter().map(|v| v * v).sum::<f64>() / m as f64;
        }
        let saa = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() - 2.0 * x.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>() + mean_sq;
        let (x_saa, _) = grid_search(&ech, &saa);
        let store = store_from_dense(&rows, 4);
        let exact = estimate(&store, &PriorModel::uniform(4)).unwrap();
        worst = worst.max(max_abs_diff(&x_saa, &exact.values));
        worst_lib = worst_lib.max(saa_check(&store, &PriorModel::uniform(4), m, &mut rng).unwrap());
    }
    verdict(
        identical == 20 && worst <= 0.05 && worst_lib <= 0.05,
        format!("(a) {identical}/20 bit-identical under two covariances; (b) SAA m = 1e4, max inf-norm = {worst:.3e} grid, {worst_lib:.3e} solver (tol 0.05)"),
    )
}

// ---------------------------------------------------------------------------

/// Lawson-Hanson: `min ||C z - d||` subject to `z >= 0`.
fn nnls(c: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let n = c.ncols();
    let mut z = DVector::zeros(n);
    let mut passive = vec![false; n];
    let solve = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = c.select_columns(&idx);
        let sol = sub.svd(true, true).solve(d, 1e-12).unwrap();
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };
    for _ in 0..10 * n.max(1) {
        let w = c.transpose() * (d - c * &z);
        let Some(j) = (0..n).filter(|&j| !passive[j] && w[j] > 1e-12).max_by(|&a, &b| w[a].total_cmp(&w[b])) else {
            break;
        };
        passive[j] = true;
        loop {
            let s = solve(&passive);
            if (0..n).filter(|&k| passive[k]).all(|k| s[k] > 0.0) {
                z = s;
                break;
            }
            let mut alpha = 1.0f64;
            for k in (0..n).filter(|&k| passive[k] && s[k] <= 0.0) {
                alpha = alpha.min(z[k] / (z[k] - s[k]));
            }
            z += (s - &z) * alpha;
            for k in 0..n {
                if passive[k] && z[k] <= 1e-14 {
                    passive[k] = false;
                    z[k] = 0.0;
                }
            }
        }
    }
    z
}

/// Smallest stationarity residual `||x - mu + A^T l - nu_lo + nu_up||_inf`
/// over free `l` and nonnegative multipliers on the active bounds.
fn kkt_residual(x: &[f64], mu: &[f64], rows: &[(SparseRow, f64)]) -> f64 {
    let n = x.len();
    let lower: Vec<usize> = (0..n).filter(|&i| x[i] <= 1e-7).collect();
    let upper: Vec<usize> = (0..n).filter(|&i| x[i] >= 1.0 - 1e-7).collect();
    let cols = 2 * rows.len() + lower.len() + upper.len();
    let mut c = DMatrix::zeros(n, cols.max(1));
    for (k, (row, _)) in rows.iter().enumerate() {
        for &(j, w) in &row.entries {
            c[(j, 2 * k)] += w;
            c[(j, 2 * k + 1)] -= w;
        }
    }
    let mut col = 2 * rows.len();
    for &i in &lower {
        c[(i, col)] = -1.0;
        col += 1;
    }
    for &i in &upper {
        c[(i, col)] = 1.0;
        col += 1;
    }
    let g = DVector::from_fn(n, |i, _| x[i] - mu[i]);
    let z = nnls(&c, &(-&g));
    (&c * z + g).amax()
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut decoder = Decoder::default();
    let (mut kkt, mut boxv, mut eq) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(3..=25);
        let (store, raw) = random_store(&mut rng, n);
        let mu: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let est = decoder.estimate(&store, &PriorModel::with_mean(mu.clone()).unwrap()).unwrap();
        boxv = boxv.max(box_violation(&est.values));
        for (row, v) in &raw {
            eq = eq.max((row.dot(&est.values) - v).abs());
        }
        kkt = kkt.max(kkt_residual(&est.values, &mu, &raw));
    }
    verdict(
        kkt <= 1e-5 && boxv <= 1e-8 && eq <= 1e-6,
        format!("1000 solves, multiplier fit {kkt:.2e} (tol 1e-5), box {boxv:.2e} (tol 1e-8), equality {eq:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------------------

fn brute_force(costs: &[f64], dims: GridDims, start: CellPos, goal: CellPos) -> f64 {
    fn go(costs: &[f64], dims: GridDims, at: CellPos, goal: CellPos, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if at == goal {
            *best = best.min(acc);
            return;
        }
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (r, c) = (at.row as i64 + dr, at.col as i64 + dc);
            if r < 0 || c < 0 || r >= dims.height as i64 || c >= dims.width as i64 {
                continue;
            }
            let next = CellPos::new(r as usize, c as usize);
            let i = dims.index(next);
            if !seen[i] {
                seen[i] = true;
                go(costs, dims, next, goal, seen, acc + costs[i], best);
                seen[i] = false;
            }
        }
    }
    let mut seen = vec![false; dims.len()];
    seen[dims.index(start)] = true;
    let mut best = f64::INFINITY;
    go(costs, dims, start, goal, &mut seen, costs[dims.index(start)], &mut best);
    best
}

fn is_walk(path: &Path, start: CellPos, goal: CellPos) -> bool {
    path.start() == start && path.goal() == goal && path.vertices.windows(2).all(|w| w[0].manhattan(w[1]) == 1)
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let dims = GridDims::new(4, 4).unwrap();
    // dyadic values keep every sum exact
    let cfg = PlannerConfig::new(1.0 / 32.0, 0.5, 16).unwrap();
    let mut exact = 0;
    for _ in 0..200 {
        let occ: Vec<f64> = (0..16).map(|_| rng.random_range(0..=16) as f64 / 16.0).collect();
        let costs = cost_map(&occ, &cfg);
        let start = dims.pos(rng.random_range(0..16));
        let goal = dims.pos(rng.random_range(0..16));
        let p = shortest_path(&costs, dims, start, goal, &cfg).unwrap();
        let ok = is_walk(&p, start, goal) && p.total_cost == brute_force(&costs, dims, start, goal) && p.recompute_cost(dims, &costs) == p.total_cost;
        exact += ok as usize;
    }

    let dims = GridDims::new(10, 10).unwrap();
    let cfg = PlannerConfig::new(0.025, 0.501, 100).unwrap();
    let mut feasible = 0;
    for _ in 0..100 {
        let mut occ: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let start = CellPos::new(rng.random_range(0..10), rng.random_range(0..10));
        let goal = CellPos::new(rng.random_range(0..10), rng.random_range(0..10));
        for p in staircase(start, goal) {
            occ[dims.index(p)] = rng.random_range(0.0..=cfg.epsilon);
        }
        let p = shortest_path(&cost_map(&occ, &cfg), dims, start, goal, &cfg).unwrap();
        feasible += (is_walk(&p, start, goal) && p.vertices.iter().all(|&v| occ[dims.index(v)] <= cfg.epsilon)) as usize;
    }
    verdict(
        exact == 200 && feasible == 100,
        format!("{exact}/200 4x4 optima equal brute force exactly, {feasible}/100 planted maps give eps-feasible paths"),
    )
}

// ---------------------------------------------------------------------------

fn check_bits(r: &ScenarioResult, n_m: u64, n_i: u64) -> bool {
    let summed: u64 = r.steps.iter().map(|s| s.bits).sum();
    let per_step = r.steps.iter().all(|s| match r.framework {
        Framework::Uninformed => s.bits == 0,
        Framework::FullyInformed => s.bits == s.k_effective as u64 * n_m && s.theta.is_none(),
        Framework::AbstractionSelection => match s.theta {
            Some(_) => s.k_effective > 0 && s.bits == s.k_effective as u64 * n_m + n_i,
            None => s.bits == 0 && s.k_effective == 0,
        },
    });
    summed == r.total_bits && per_step
}

fn criterion_5(ensemble: &ExperimentOutcome) -> Verdict {
    let set = default_theta_set(7, 7, 10).unwrap();
    let identity = set.templates.iter().find(|t| t.k_theta() == 49).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let map = WorldMap::new(9, 9, (0..81).map(|_| rng.random()).collect()).unwrap();
    let lm = map.local_window(CellPos::new(4, 4), 7, 7).unwrap();
    let params = BitCostParams { n_m: 12, n_i: 4 };
    let eff = apply_template(identity, &lm, |_| false, &params, BitAccounting::Effective).unwrap().bits;
    let nom = apply_template(identity, &lm, |_| false, &params, BitAccounting::Nominal).unwrap().bits;
    let runs: Vec<&ScenarioResult> = ensemble.simulations.iter().flat_map(|s| &s.results).collect();
    let conserved = runs.iter().filter(|r| check_bits(r, 12, 4)).count();
    verdict(
        eff == 592 && nom == 592 && 49 * params.n_m + params.n_i == 592 && conserved == runs.len(),
        format!("identity 7x7 = {eff} bits (expected 592), conservation on {conserved}/{} runs", runs.len()),
    )
}

// ---------------------------------------------------------------------------

/// Everything one encoder step needs, built from a short replayed history.
struct StepFixture {
    map: WorldMap,
    weights: PathWeightField,
    belief: SupporterBelief,
    store_prev: ConstraintStore,
    seeker_lm: LocalMap,
    supporter_lm: LocalMap,
}

fn step_fixture(rng: &mut ChaCha8Rng, thetas: &TemplateSet, config: &EncoderConfig) -> StepFixture {
    let params = MapGenParams {
        width: 16,
        height: 16,
        walls: 1,
        ..MapGenParams::default()
    };
    let map = generate_map(&params, rng).unwrap();
    let n = map.len();
    let prior = PriorModel::uniform(n);
    let supporter = staircase(CellPos::new(rng.random_range(0..16), 0), CellPos::new(rng.random_range(0..16), 15));
    let corridor = Path {
        vertices: staircase(CellPos::new(rng.random_range(0..16), 0), CellPos::new(rng.random_range(0..16), 15)),
        total_cost: 0.0,
    };
    let weights = path_weights(&corridor, rng.random_range(2.0..20.0), map.dims()).unwrap();
    let mut belief = SupporterBelief::new(n);
    let mut store_prev = ConstraintStore::new(n);
    let mut decoder = Decoder::default();
    let history = rng.random_range(0..6);
    let mut seeker = CellPos::new(rng.random_range(0..16), rng.random_range(0..4));
    for t in 0..=history {
        let seeker_lm = map.local_window(seeker, 3, 3).unwrap();
        belief.mark_seeker_window(&seeker_lm);
        let supporter_lm = map.local_window(supporter[t.min(supporter.len() - 1)], 7, 7).unwrap();
        belief.sense(&supporter_lm);
        if t == history {
            return StepFixture { map, weights, belief, store_prev, seeker_lm, supporter_lm };
        }
        let sel = select_abstraction(
            &SelectionInput {
                weights: &weights,
                belief: &belief,
                store_prev: &store_prev,
                theta_set: thetas,
                seeker_lm: &seeker_lm,
                supporter_lm: &supporter_lm,
                prior: &prior,
                config,
            },
            &mut decoder,
        )
        .unwrap();
        store_prev = sel.into_store();
        seeker = CellPos::new(seeker.row, (seeker.col + 1).min(15));
    }
    unreachable!()
}

fn select(f: &StepFixture, thetas: &TemplateSet, config: &EncoderConfig) -> Selection {
    select_abstraction(
        &SelectionInput {
            weights: &f.weights,
            belief: &f.belief,
            store_prev: &f.store_prev,
            theta_set: thetas,
            seeker_lm: &f.seeker_lm,
            supporter_lm: &f.supporter_lm,
            prior: &PriorModel::uniform(f.map.len()),
            config,
        },
        &mut Decoder::default(),
    )
    .unwrap()
}

/// (theta, bits, weighted error) per template with something to send,
/// recomputed from the template definitions and the true map.
fn recompute(f: &StepFixture, thetas: &TemplateSet) -> Vec<(usize, u64, f64)> {
    let mut base = f.store_prev.clone();
    base.reduce_independent().unwrap();
    let mut pins: Vec<(usize, f64)> = Vec::new();
    for &c in &f.supporter_lm.cells {
        if f.belief.seeker_sensed[c] {
            pins.push((c, f.map.occupancy()[c]));
        }
    }
    for &c in &f.seeker_lm.cells {
        if f.belief.sensed[c].is_some() {
            pins.push((c, f.map.occupancy()[c]));
        }
    }
    pins.sort_by_key(|p| p.0);
    pins.dedup_by_key(|p| p.0);
    base.add_exact(&pins).unwrap();

    let window: HashMap<(i32, i32), usize> = f.supporter_lm.offsets.iter().zip(&f.supporter_lm.cells).map(|(&o, &c)| (o, c)).collect();
    let mut out = Vec::new();
    for tpl in &thetas.templates {
        let mut store = base.clone();
        let mut k = 0;
        for g in &tpl.groups {
            let members: Vec<(usize, f64)> = g
                .offsets
                .iter()
                .zip(&g.weights)
                .filter_map(|(o, &w)| window.get(o).map(|&c| (c, w)))
                .filter(|&(c, w)| w > 0.0 && !base.is_known(c))
                .collect();
            let total: f64 = members.iter().map(|m| m.1).sum();
            if members.is_empty() {
                continue;
            }
            let value: f64 = members.iter().map(|&(c, w)| w / total * f.map.occupancy()[c]).sum();
            store.add_row(SparseRow::new(members.iter().map(|&(c, w)| (c, w / total)).collect()), value);
            k += 1;
        }
        if k == 0 {
            continue;
        }
        store.reduce_independent().unwrap();
        let est = Decoder::default().estimate(&store, &PriorModel::uniform(f.map.len())).unwrap();
        let err: f64 = (0..f.map.len())
            .filter(|&i| f.belief.sensed[i].is_some())
            .map(|i| (f.weights.weights[i] * (f.map.occupancy()[i] - est.values[i])).powi(2))
            .sum();
        out.push((tpl.id, k as u64 * 12 + 4, err));
    }
    out
}

fn argmin_by(items: &[(usize, u64, f64)], key: impl Fn(&(usize, u64, f64)) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for it in items {
        let v = key(it);
        if best.is_none_or(|b| v < b.1) {
            best = Some((it.0, v));
        }
    }
    best.map(|b| b.0)
}

fn criterion_6() -> Verdict {
    let thetas = default_theta_set(7, 7, 10).unwrap();
    let config = EncoderConfig {
        beta: 0.003,
        bits: BitCostParams::default(),
        accounting: BitAccounting::Effective,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut argmin_ok, mut big_beta_ok, mut zero_err_ok) = (0, 0, 0);
    let mut worst_j = 0.0f64;
    for _ in 0..50 {
        let f = step_fixture(&mut rng, &thetas, &config);
        let mine = recompute(&f, &thetas);

        let sel = select(&f, &thetas, &config);
        let expected = argmin_by(&mine, |&(_, bits, err)| err + config.beta * bits as f64);
        for &(id, bits, err) in &mine {
            let c = sel.candidates.iter().find(|c| c.theta == id).unwrap();
            let j = err + config.beta * bits as f64;
            worst_j = worst_j.max((c.j.unwrap_or(f64::NAN) - j).abs());
        }
        let j_star = mine.iter().find(|m| Some(m.0) == sel.theta()).map(|&(_, b, e)| e + config.beta * b as f64);
        let optimal = j_star.is_some_and(|js| mine.iter().all(|&(_, b, e)| js <= e + config.beta * b as f64 + 1e-12));
        argmin_ok += (optimal && sel.theta() == expected) as usize;

        let heavy = EncoderConfig { beta: 1e6, ..config };
        let cheapest = argmin_by(&mine, |&(_, bits, _)| bits as f64);
        big_beta_ok += (select(&f, &thetas, &heavy).theta() == cheapest) as usize;

        // a Supporter window nobody has seen yet, with bandwidth free
        let mut fresh = SupporterBelief::new(f.map.len());
        fresh.sense(&f.supporter_lm);
        let far = f.map.local_window(CellPos::new(0, 0), 1, 1).unwrap();
        let far = if f.supporter_lm.cells.contains(&far.cells[0]) { f.map.local_window(CellPos::new(15, 15), 1, 1).unwrap() } else { far };
        let fresh_fixture = StepFixture {
            map: f.map.clone(),
            weights: f.weights.clone(),
            belief: fresh,
            store_prev: ConstraintStore::new(f.map.len()),
            seeker_lm: far,
            supporter_lm: f.supporter_lm.clone(),
        };
        let free = EncoderConfig { beta: 0.0, ..config };
        let sel = select(&fresh_fixture, &thetas, &free);
        let err = sel.candidates.iter().find(|c| Some(c.theta) == sel.theta()).and_then(|c| c.weighted_error);
        zero_err_ok += err.is_some_and(|e| e <= 1e-20) as usize;
    }
    verdict(
        argmin_ok == 50 && big_beta_ok == 50 && zero_err_ok == 50 && worst_j <= 1e-9,
        format!("argmin {argmin_ok}/50, recomputed J within {worst_j:.1e} (tol 1e-9), large beta -> fewest bits {big_beta_ok}/50, zero price -> zero error {zero_err_ok}/50"),
    )
}

// ---------------------------------------------------------------------------

fn criterion_7() -> Verdict {
    let thetas = default_theta_set(7, 7, 10).unwrap();
    let params = MapGenParams {
        width: 16,
        height: 16,
        ..MapGenParams::default()
    };
    let (mut steps, mut coincide, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..20 {
        let sc = random_scenario(&params, &mut ChaCha8Rng::seed_from_u64(7000 + seed)).unwrap();
        let cfg = ScenarioConfig::new(sc.seeker_start, sc.seeker_goal, sc.supporter_path);
        let r = run_scenario(&cfg, &sc.map, &thetas, Framework::AbstractionSelection).unwrap();
        for s in &r.steps {
            steps += 1;
            if let Some(g) = s.replica_gap {
                coincide += 1;
                worst = worst.max(g);
            }
        }
    }
    verdict(
        coincide > 0 && worst <= 1e-9,
        format!("20 runs, replicas coincide on {coincide}/{steps} steps, max inf-norm gap {worst:.1e} (tol 1e-9)"),
    )
}

// ---------------------------------------------------------------------------

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// (r_time, failures, r_bits) computed straight from the per-run costs.
fn ensemble_metrics(outcome: &ExperimentOutcome) -> ([f64; 3], [usize; 3], f64) {
    let mut r_time = [0.0; 3];
    let mut failures = [0; 3];
    let mut ratios = Vec::new();
    for s in &outcome.simulations {
        let cost: Vec<f64> = s.results.iter().map(|r| r.cost).collect();
        let best = cost.iter().cloned().fold(f64::INFINITY, f64::min);
        for k in 0..3 {
            r_time[k] += cost[k] / best;
            let others_lower = (0..3).filter(|&j| j != k).all(|j| cost[k] > cost[j] * (1.0 + 1e-9));
            if !s.results[k].reached || others_lower {
                failures[k] += 1;
            }
        }
        if s.results[0].total_bits > 0 {
            ratios.push(s.results[1].total_bits as f64 / s.results[0].total_bits as f64);
        }
    }
    let n = outcome.simulations.len() as f64;
    for r in &mut r_time {
        *r /= n;
    }
    (r_time, failures, ratios.iter().sum::<f64>() / ratios.len() as f64)
}

fn criterion_8(outcome: &ExperimentOutcome, elapsed: Duration) -> Verdict {
    let n = outcome.simulations.len();
    let order_ok = outcome.simulations.iter().all(|s| s.results.iter().map(|r| r.framework).eq(Framework::ALL));
    let (rt, fail, rb) = ensemble_metrics(outcome);
    let m = &outcome.metrics;
    let agree = max_abs_diff(&rt, &m.r_time) <= 1e-12 && fail == m.failures && m.r_bits.is_some_and(|b| (b - rb).abs() <= 1e-12);
    let pass = order_ok
        && agree
        && n >= 50
        && rt[0] <= rt[1]
        && rt[1] <= rt[2]
        && fail[0] <= fail[1]
        && fail[1] <= fail[2]
        && rb < 1.0
        && elapsed.as_secs_f64() < 600.0;
    verdict(
        pass,
        format!(
            "n = {n}, r_time FI/AS/U = {:.3}/{:.3}/{:.3}, failures = {}/{}/{}, r_bits = {rb:.3} (< 1, target <= 0.8: {}), {:.0} s (< 600 s)",
            rt[0],
            rt[1],
            rt[2],
            fail[0],
            fail[1],
            fail[2],
            if rb <= 0.8 { "met" } else { "missed" },
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn criterion_9() -> Verdict {
    let text = "[generate]\nwidth = 16\nheight = 16\nwalls = 1\n\n[experiment]\nn_sim = 40\nseed = 11\nsweep = \"random_scenario\"\n";
    let spec = ExperimentSpec::parse(text, "determinism", None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", 1), ("b", 4), ("c", 1)] {
        let out_dir = dir.path().join(name);
        run_experiment(&spec, &RunOptions { jobs, frames: false, out_dir: out_dir.clone() }).unwrap();
        let files: Vec<Vec<u8>> = ["results.csv", "metrics.csv", "steps.csv", "encoder.csv"]
            .iter()
            .map(|f| std::fs::read(out_dir.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let rows = String::from_utf8_lossy(&outputs[0][0]).lines().count() - 1;
    verdict(identical, format!("40 sims, jobs 1 / 4 / 1 rerun, {rows} result rows, outputs byte-identical: {identical}"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let spec = ExperimentSpec::load(configs_dir().join("ensemble.toml")).unwrap();
    let t0 = Instant::now();
    let ensemble = execute(&spec, 0, None).unwrap();
    let ensemble_time = t0.elapsed();

    let checks: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("decoder matches grid search", Box::new(criterion_1)),
        ("covariance invariance and SAA", Box::new(criterion_2)),
        ("KKT certificate", Box::new(criterion_3)),
        ("planner exactness", Box::new(criterion_4)),
        ("bit accounting", Box::new(|| criterion_5(&ensemble))),
        ("encoder argmin", Box::new(criterion_6)),
        ("replica fidelity", Box::new(criterion_7)),
        ("ensemble trend", Box::new(|| criterion_8(&ensemble, ensemble_time))),
        ("determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let v = check();
        failed += !v.pass as usize;
        println!("[{}] {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("{}/{} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
