//! Minimum-variance reconstruction of the map from the constraint store.
//!
//! The estimate is the Euclidean projection of the prior mean onto
//! `{x : A x = o, 0 <= x <= 1}`; it depends on the prior only through its
//! mean. Known cells are fixed and cells no row touches keep the prior mean,
//! so only the coupled unknown cells are solved for, one connected component
//! at a time.
//!
//! Each component is solved through its dual. For multipliers `nu`, the
//! box-constrained minimizer of the Lagrangian is `clip(mu + A' nu, 0, 1)`
//! and the dual function is concave and piecewise quadratic. A regularized
//! semismooth Newton iteration with backtracking drives the equality
//! residual to zero; the primal point then lies in the box by construction.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::constraints::ConstraintStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub mean: Vec<f64>,
    /// Kept for completeness; the projection never reads it.
    pub covariance: Option<DMatrix<f64>>,
}

impl PriorModel {
    /// Mean 0.5 in every cell, the centre of the admissible range.
    pub fn uniform(n: usize) -> Self {
        PriorModel {
            mean: vec![0.5; n],
            covariance: None,
        }
    }

    pub fn with_mean(mean: Vec<f64>) -> Result<Self> {
        if let Some(m) = mean.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Argument(format!("prior mean {m} outside [0, 1]")));
        }
        Ok(PriorModel {
            mean,
            covariance: None,
        })
    }

    pub fn with_covariance(mut self, covariance: DMatrix<f64>) -> Self {
        self.covariance = Some(covariance);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    /// Newton iterations summed over freshly solved components.
    pub iterations: usize,
    /// `max |A x - o|` over the store's accepted rows.
    pub equality_residual: f64,
    pub components: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefEstimate {
    pub values: Vec<f64>,
    /// `||x - mu||^2`.
    pub objective: f64,
    /// Cells whose value is forced by the equality rows.
    pub known: Vec<bool>,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Stop once `max |A x - o|` on a component drops to this level.
    pub tolerance: f64,
    /// Residual still accepted when the line search stalls.
    pub stall_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            tolerance: 1e-13,
            stall_tolerance: 1e-9,
            max_iterations: 100_000,
        }
    }
}

/// A decoder with a memo of solved components.
///
/// Components are keyed by their exact bit pattern (cells, rows, right-hand
/// sides and prior means), so a cache hit returns exactly what a fresh solve
/// would.
#[derive(Debug, Default)]
pub struct Decoder {
    pub config: DecoderConfig,
    cache: HashMap<Vec<u64>, Vec<f64>>,
}

struct Component {
    cells: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl Decoder {
    pub fn new(config: DecoderConfig) -> Self {
        Decoder {
            config,
            cache: HashMap::new(),
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn estimate(&mut self, store: &ConstraintStore, prior: &PriorModel) -> Result<BeliefEstimate> {
        let n = store.n();
        if prior.mean.len() != n {
            return Err(Error::Argument(format!(
                "prior has {} entries for a {n}-cell store",
                prior.mean.len()
            )));
        }
        if store.pending_len() > 0 {
            return Err(Error::Argument(
                "store has unreduced rows; call reduce_independent first".into(),
            ));
        }
        let mut values = prior.mean.clone();
        let mut known = vec![false; n];
        for (i, k) in store.known().iter().enumerate() {
            if let Some(v) = *k {
                values[i] = v;
                known[i] = true;
            }
        }

        let mut stats = SolverStats::default();
        for comp in components(store) {
            stats.components += 1;
            let key = component_key(&comp, &prior.mean);
            let solution = match self.cache.get(&key) {
                Some(sol) => {
                    stats.cache_hits += 1;
                    sol.clone()
                }
                None => {
                    let mu: Vec<f64> = comp.cells.iter().map(|&c| prior.mean[c]).collect();
                    let (sol, iters) = solve_component(&comp, &mu, &self.config)?;
                    stats.iterations += iters;
                    self.cache.insert(key, sol.clone());
                    sol
                }
            };
            for (&c, v) in comp.cells.iter().zip(solution) {
                values[c] = v;
            }
        }

        stats.equality_residual = store.residual(&values);
        if stats.equality_residual > 1e-6 {
            return Err(Error::SolverNonConvergence {
                iterations: stats.iterations,
                residual: stats.equality_residual,
            });
        }
        let objective = values
            .iter()
            .zip(&prior.mean)
            .map(|(x, m)| (x - m) * (x - m))
            .sum();
        Ok(BeliefEstimate {
            values,
            objective,
            known,
            stats,
        })
    }
}

/// Projects the prior mean onto the store's feasible set.
pub fn estimate(store: &ConstraintStore, prior: &PriorModel) -> Result<BeliefEstimate> {
    Decoder::default().estimate(store, prior)
}

/// Sample-average check of the mean-only property.
///
/// Draws `sample_count` maps uniformly from `[0, 1]^N`, minimizes the sample
/// average of `||x_i - x||^2` over the feasible set and returns the
/// infinity-norm distance to the estimate for `prior`. The sample-average
/// objective equals a constant plus `||x - mean(x_i)||^2`, so its minimizer
/// is the projection of the sample mean.
pub fn saa_check<R: Rng + ?Sized>(
    store: &ConstraintStore,
    prior: &PriorModel,
    sample_count: usize,
    rng: &mut R,
) -> Result<f64> {
    if sample_count == 0 {
        return Err(Error::Argument("sample_count must be at least 1".into()));
    }
    let n = store.n();
    let mut sum = vec![0.0; n];
    for _ in 0..sample_count {
        for s in sum.iter_mut() {
            *s += rng.random::<f64>();
        }
    }
    let sample_mean: Vec<f64> = sum.iter().map(|s| s / sample_count as f64).collect();
    let mut decoder = Decoder::default();
    let saa = decoder.estimate(store, &PriorModel::with_mean(sample_mean)?)?;
    let exact = decoder.estimate(store, prior)?;
    Ok(saa
        .values
        .iter()
        .zip(&exact.values)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

fn components(store: &ConstraintStore) -> Vec<Component> {
    let rows: Vec<_> = store.coupling_rows().collect();
    if rows.is_empty() {
        return Vec::new();
    }
    let mut parent: HashMap<usize, usize> = HashMap::new();
    fn find(parent: &mut HashMap<usize, usize>, x: usize) -> usize {
        let mut root = x;
        while let Some(&p) = parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = x;
        while cur != root {
            let next = parent[&cur];
            parent.insert(cur, root);
            cur = next;
        }
        root
    }
    for r in &rows {
        let first = r.row.entries[0].0;
        parent.entry(first).or_insert(first);
        for &(c, _) in &r.row.entries[1..] {
            parent.entry(c).or_insert(c);
            let (a, b) = (find(&mut parent, first), find(&mut parent, c));
            if a != b {
                // smaller index wins so roots do not depend on insertion order
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent.insert(hi, lo);
            }
        }
    }
    let mut by_root: HashMap<usize, usize> = HashMap::new();
    let mut comps: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let root = find(&mut parent, r.row.entries[0].0);
        let slot = *by_root.entry(root).or_insert_with(|| {
            comps.push((Vec::new(), Vec::new()));
            comps.len() - 1
        });
        comps[slot].1.push(k);
    }
    let mut cells: Vec<usize> = parent.keys().copied().collect();
    cells.sort_unstable();
    for c in cells {
        let root = find(&mut parent, c);
        comps[by_root[&root]].0.push(c);
    }
    comps
        .into_iter()
        .map(|(cells, row_ids)| {
            let local: HashMap<usize, usize> =
                cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            let mut rows_local = Vec::with_capacity(row_ids.len());
            let mut rhs = Vec::with_capacity(row_ids.len());
            for k in row_ids {
                rows_local.push(rows[k].row.entries.iter().map(|&(c, w)| (local[&c], w)).collect());
                rhs.push(rows[k].rhs);
            }
            Component {
                cells,
                rows: rows_local,
                rhs,
            }
        })
        .collect()
}

fn component_key(comp: &Component, mean: &[f64]) -> Vec<u64> {
    let nnz: usize = comp.rows.iter().map(Vec::len).sum();
    let mut key = Vec::with_capacity(2 + 2 * comp.cells.len() + 2 * nnz + 2 * comp.rows.len());
    key.push(comp.cells.len() as u64);
    for &c in &comp.cells {
        key.push(c as u64);
        key.push(mean[c].to_bits());
    }
    key.push(comp.rows.len() as u64);
    for (row, rhs) in comp.rows.iter().zip(&comp.rhs) {
        key.push(row.len() as u64);
        for &(i, w) in row {
            key.push(i as u64);
            key.push(w.to_bits());
        }
        key.push(rhs.to_bits());
    }
    key
}

fn primal(comp: &Component, mu: &[f64], nu: &[f64], z: &mut [f64], x: &mut [f64]) {
    z.copy_from_slice(mu);
    for (row, &v) in comp.rows.iter().zip(nu) {
        for &(i, w) in row {
            z[i] += w * v;
        }
    }
    for (xi, &zi) in x.iter_mut().zip(z.iter()) {
        *xi = zi.clamp(0.0, 1.0);
    }
}

fn residual(comp: &Component, x: &[f64], r: &mut [f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for ((row, &b), ri) in comp.rows.iter().zip(&comp.rhs).zip(r.iter_mut()) {
        let ax: f64 = row.iter().map(|&(i, w)| w * x[i]).sum();
        *ri = b - ax;
        worst = worst.max(ri.abs());
    }
    worst
}

fn dual_value(mu: &[f64], x: &[f64], nu: &[f64], r: &[f64]) -> f64 {
    let half_dist: f64 = 0.5 * x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    half_dist + nu.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()
}

fn solve_component(comp: &Component, mu: &[f64], cfg: &DecoderConfig) -> Result<(Vec<f64>, usize)> {
    let n = comp.cells.len();
    let m = comp.rows.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (k, row) in comp.rows.iter().enumerate() {
        for &(i, w) in row {
            cols[i].push((k, w));
        }
    }

    let mut nu = vec![0.0; m];
    let mut z = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; m];
    primal(comp, mu, &nu, &mut z, &mut x);
    let mut rnorm = residual(comp, &x, &mut r);
    let mut g = dual_value(mu, &x, &nu, &r);

    let mut trial_nu = vec![0.0; m];
    let mut trial_z = vec![0.0; n];
    let mut trial_x = vec![0.0; n];
    let mut trial_r = vec![0.0; m];

    let mut iterations = 0;
    let mut best_rnorm = rnorm;
    let mut stalled = 0;
    while rnorm > cfg.tolerance {
        if iterations >= cfg.max_iterations {
            return Err(Error::SolverNonConvergence {
                iterations,
                residual: rnorm,
            });
        }
        iterations += 1;

        // generalized Hessian of the dual over the cells strictly inside the box
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for (i, col) in cols.iter().enumerate() {
            if z[i] > 0.0 && z[i] < 1.0 {
                for &(a, wa) in col {
                    for &(b, wb) in col {
                        hess[(a, b)] += wa * wb;
                    }
                }
            }
        }
        let mut reg = 1e-12 + 1e-3 * rnorm.min(1.0);
        let rhs = DVector::from_column_slice(&r);
        let direction = loop {
            let mut h = hess.clone();
            for k in 0..m {
                h[(k, k)] += reg;
            }
            if let Some(chol) = h.cholesky() {
                break chol.solve(&rhs);
            }
            reg *= 100.0;
            if reg > 1e6 {
                return Err(Error::SolverNonConvergence {
                    iterations,
                    residual: rnorm,
                });
            }
        };

        let slope: f64 = direction.iter().zip(&r).map(|(d, ri)| d * ri).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            for k in 0..m {
                trial_nu[k] = nu[k] + step * direction[k];
            }
            primal(comp, mu, &trial_nu, &mut trial_z, &mut trial_x);
            let trial_rnorm = residual(comp, &trial_x, &mut trial_r);
            let trial_g = dual_value(mu, &trial_x, &trial_nu, &trial_r);
            let slack = 1e-15 * g.abs().max(1.0);
            if trial_g >= g + 1e-4 * step * slope - slack {
                std::mem::swap(&mut nu, &mut trial_nu);
                std::mem::swap(&mut z, &mut trial_z);
                std::mem::swap(&mut x, &mut trial_x);
                std::mem::swap(&mut r, &mut trial_r);
                rnorm = trial_rnorm;
                g = trial_g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if rnorm < 0.5 * best_rnorm {
            best_rnorm = rnorm;
            stalled = 0;
        } else {
            stalled += 1;
        }
        // float noise can make the dual flat long before the residual is tiny
        if !accepted || stalled > 50 {
            if rnorm <= cfg.stall_tolerance {
                break;
            }
            return Err(Error::SolverNonConvergence {
                iterations,
                residual: rnorm,
            });
        }
    }
    Ok((x, iterations))
}
