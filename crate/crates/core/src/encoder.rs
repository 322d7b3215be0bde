//! The Supporter's side: path-proximity weights, the selection criterion and
//! the exhaustive search over the template set.

use serde::{Deserialize, Serialize};

use crate::abstraction::{apply_template, AbstractionMessage, BitAccounting, BitCostParams, TemplateSet};
use crate::constraints::ConstraintStore;
use crate::decoder::{BeliefEstimate, Decoder, PriorModel};
use crate::error::{Error, Result};
use crate::grid_world::{GridDims, LocalMap};
use crate::planner::Path;

/// Per-cell weight `exp(-d^2 / (2 sigma^2))`, `d` the distance to the
/// nearest path cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PathWeightField {
    pub weights: Vec<f64>,
    pub sigma: f64,
}

pub fn path_weights(path: &Path, sigma: f64, dims: GridDims) -> Result<PathWeightField> {
    if path.is_empty() {
        return Err(Error::Argument("path is empty".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let weights = (0..dims.len())
        .map(|i| {
            let p = dims.pos(i);
            let d2 = path
                .vertices
                .iter()
                .map(|&q| p.dist2(q))
                .fold(f64::INFINITY, f64::min);
            // stay strictly positive even where the exponential underflows
            (-d2 / denom).exp().max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(PathWeightField { weights, sigma })
}

/// What the Supporter knows: its own readings and where the Seeker has looked.
#[derive(Debug, Clone, PartialEq)]
pub struct SupporterBelief {
    /// Ground-truth readings over the Supporter's sensed set.
    pub sensed: Vec<Option<f64>>,
    /// Cells covered by the Seeker's field of view so far.
    pub seeker_sensed: Vec<bool>,
}

impl SupporterBelief {
    pub fn new(n: usize) -> Self {
        SupporterBelief {
            sensed: vec![None; n],
            seeker_sensed: vec![false; n],
        }
    }

    pub fn sense(&mut self, lm: &LocalMap) {
        for (c, v) in lm.iter() {
            self.sensed[c] = Some(v);
        }
    }

    /// Records the Seeker's window; only cell identities are used.
    pub fn mark_seeker_window(&mut self, lm: &LocalMap) {
        for &c in &lm.cells {
            self.seeker_sensed[c] = true;
        }
    }

    pub fn has_sensed(&self, cell: usize) -> bool {
        self.sensed[cell].is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// `lambda(theta) = beta * n_theta`.
    pub beta: f64,
    pub bits: BitCostParams,
    pub accounting: BitAccounting,
}

impl EncoderConfig {
    pub fn lambda(&self, bits: u64) -> f64 {
        self.beta * bits as f64
    }
}

/// Weighted squared reconstruction error over the Supporter's sensed cells.
pub fn weighted_error(weights: &PathWeightField, belief: &SupporterBelief, estimate: &[f64]) -> f64 {
    belief
        .sensed
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|truth| (i, truth)))
        .map(|(i, truth)| {
            let e = weights.weights[i] * (truth - estimate[i]);
            e * e
        })
        .sum()
}

/// `J = sum_{p sensed} (w(p) (x~(p) - x^(p)))^2 + lambda`.
pub fn criterion(weights: &PathWeightField, belief: &SupporterBelief, estimate: &BeliefEstimate, lambda: f64) -> f64 {
    weighted_error(weights, belief, &estimate.values) + lambda
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub theta: usize,
    /// `None` when the template has nothing left to send.
    pub k_effective: Option<usize>,
    pub bits: Option<u64>,
    pub weighted_error: Option<f64>,
    pub j: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Chosen {
    pub theta: usize,
    pub message: AbstractionMessage,
    /// Replica after the message is applied.
    pub store: ConstraintStore,
    /// Decoder output the Supporter predicts for the Seeker.
    pub estimate: BeliefEstimate,
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Replica after the exact-cell update, before any message.
    pub base: ConstraintStore,
    pub chosen: Option<Chosen>,
    pub candidates: Vec<CandidateScore>,
}

impl Selection {
    pub fn theta(&self) -> Option<usize> {
        self.chosen.as_ref().map(|c| c.theta)
    }

    /// The replica to carry into the next step.
    pub fn into_store(self) -> ConstraintStore {
        match self.chosen {
            Some(c) => c.store,
            None => self.base,
        }
    }
}

/// Inputs to one round of abstraction selection.
pub struct SelectionInput<'a> {
    pub weights: &'a PathWeightField,
    pub belief: &'a SupporterBelief,
    pub store_prev: &'a ConstraintStore,
    pub theta_set: &'a TemplateSet,
    pub seeker_lm: &'a LocalMap,
    pub supporter_lm: &'a LocalMap,
    pub prior: &'a PriorModel,
    pub config: &'a EncoderConfig,
}

/// Picks the template minimizing `J` for the current step.
///
/// First pins every cell both robots have measured and that lies in either
/// current window, using the Supporter's own readings. Then each template is
/// applied to the Supporter's window with those known cells excluded, the
/// candidate system is reduced and decoded exactly as the Seeker would, and
/// `J` is scored. Templates with nothing left to send are skipped; ties go
/// to the lower id. `belief` must already include `supporter_lm` and the
/// Seeker's current window.
pub fn select_abstraction(input: &SelectionInput<'_>, decoder: &mut Decoder) -> Result<Selection> {
    let SelectionInput {
        weights,
        belief,
        store_prev,
        theta_set,
        seeker_lm,
        supporter_lm,
        prior,
        config,
    } = *input;

    let mut base = store_prev.clone();
    base.reduce_independent()?;
    let mut exact = Vec::new();
    for &c in &supporter_lm.cells {
        if belief.seeker_sensed[c] {
            exact.push(c);
        }
    }
    for &c in &seeker_lm.cells {
        if belief.has_sensed(c) {
            exact.push(c);
        }
    }
    exact.sort_unstable();
    exact.dedup();
    let exact: Vec<(usize, f64)> = exact
        .into_iter()
        .map(|c| (c, belief.sensed[c].expect("cell sensed by the supporter")))
        .collect();
    base.add_exact(&exact)?;

    let mut candidates = Vec::with_capacity(theta_set.len());
    let mut best: Option<Chosen> = None;
    let mut best_j = f64::INFINITY;
    for tpl in &theta_set.templates {
        let msg = apply_template(tpl, supporter_lm, |c| base.is_known(c), &config.bits, config.accounting);
        let Some(msg) = msg else {
            candidates.push(CandidateScore {
                theta: tpl.id,
                k_effective: None,
                bits: None,
                weighted_error: None,
                j: None,
            });
            continue;
        };
        let mut store = base.clone();
        store.add_message(&msg);
        store.reduce_independent()?;
        let est = decoder.estimate(&store, prior)?;
        let err = weighted_error(weights, belief, &est.values);
        let j = err + config.lambda(msg.bits);
        candidates.push(CandidateScore {
            theta: tpl.id,
            k_effective: Some(msg.k_effective()),
            bits: Some(msg.bits),
            weighted_error: Some(err),
            j: Some(j),
        });
        if j < best_j {
            best_j = j;
            best = Some(Chosen {
                theta: tpl.id,
                message: msg,
                store,
                estimate: est,
            });
        }
    }
    Ok(Selection {
        base,
        chosen: best,
        candidates,
    })
}
