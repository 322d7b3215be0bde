//! Compression templates over a robot's local window and their bit cost.
//!
//! A template partitions (part of) a `w x h` window into groups; each group
//! becomes one transmitted value, the weighted average of its member cells.
//! Offsets are `(dr, dc)` relative to the window centre. Offsets not covered
//! by any group are never transmitted.
//!
//! # Template file format
//!
//! Line oriented, `#` starts a comment:
//!
//! ```text
//! window 7 7
//! template 1
//! group -3,-3 -3,-2
//! group 0,0@0.25 0,1@0.75
//! end
//! ```
//!
//! `window` must come first. Each `group` lists its member offsets; a member
//! may carry an explicit weight after `@`, otherwise the group's weights are
//! uniform. Explicit weights must be given for every member of a group or
//! for none.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_world::LocalMap;
use crate::sparse::SparseRow;

pub type Offset = (i32, i32);

/// Tolerance on a group's weight sum.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub offsets: Vec<Offset>,
    pub weights: Vec<f64>,
}

impl Group {
    pub fn uniform(offsets: Vec<Offset>) -> Self {
        let w = 1.0 / offsets.len().max(1) as f64;
        let weights = vec![w; offsets.len()];
        Group { offsets, weights }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionTemplate {
    pub id: usize,
    pub window_w: usize,
    pub window_h: usize,
    pub groups: Vec<Group>,
}

impl AbstractionTemplate {
    pub fn k_theta(&self) -> usize {
        self.groups.len()
    }

    pub fn coverage_mask(&self) -> BTreeSet<Offset> {
        self.groups
            .iter()
            .flat_map(|g| g.offsets.iter().copied())
            .collect()
    }

    fn in_window(&self, (dr, dc): Offset) -> bool {
        dr.unsigned_abs() as usize <= self.window_h / 2 && dc.unsigned_abs() as usize <= self.window_w / 2
    }

    /// Every invariant violation in this template, as human-readable lines.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.groups.is_empty() {
            out.push("template has no groups".to_string());
        }
        let mut seen: HashMap<Offset, usize> = HashMap::new();
        for (g, group) in self.groups.iter().enumerate() {
            let gid = g + 1;
            if group.offsets.is_empty() {
                out.push(format!("group {gid} is empty"));
                continue;
            }
            if group.weights.len() != group.offsets.len() {
                out.push(format!(
                    "group {gid} has {} weights for {} members",
                    group.weights.len(),
                    group.offsets.len()
                ));
                continue;
            }
            if let Some(w) = group.weights.iter().find(|w| !(**w >= 0.0)) {
                out.push(format!("group {gid} has negative or NaN weight {w}"));
            }
            let sum: f64 = group.weights.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                out.push(format!(
                    "group {gid} weights sum to {sum} (|sum - 1| = {:.3e} > tolerance {ROW_SUM_TOL:e})",
                    (sum - 1.0).abs()
                ));
            }
            for &off in &group.offsets {
                if !self.in_window(off) {
                    out.push(format!(
                        "group {gid} offset {off:?} lies outside the {}x{} window",
                        self.window_w, self.window_h
                    ));
                }
                if let Some(prev) = seen.insert(off, gid) {
                    out.push(format!("groups {prev} and {gid} overlap at offset {off:?}"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(message) => Err(Error::Template {
                template: self.id,
                message,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitCostParams {
    /// Bits per transmitted occupancy value.
    pub n_m: u32,
    /// Bits per abstraction index.
    pub n_i: u32,
}

impl Default for BitCostParams {
    fn default() -> Self {
        BitCostParams { n_m: 12, n_i: 4 }
    }
}

impl BitCostParams {
    pub fn validate(&self, template_count: usize) -> Result<()> {
        if self.n_m < 1 {
            return Err(Error::Argument("n_m must be at least 1".into()));
        }
        let need = index_bits(template_count);
        if self.n_i < need {
            return Err(Error::Argument(format!(
                "n_i = {} cannot index {template_count} templates (needs {need})",
                self.n_i
            )));
        }
        Ok(())
    }

    /// Bits for transmitting `k` compressed values plus the template index.
    pub fn bits(&self, k: usize) -> u64 {
        k as u64 * self.n_m as u64 + self.n_i as u64
    }
}

fn index_bits(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}

/// Which group count feeds the bit cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitAccounting {
    /// Groups that survive clipping and exclusion.
    #[default]
    Effective,
    /// The template's nominal `k_theta`.
    Nominal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionMessage {
    pub theta: usize,
    pub rows: Vec<SparseRow>,
    pub values: Vec<f64>,
    pub bits: u64,
}

impl AbstractionMessage {
    pub fn k_effective(&self) -> usize {
        self.rows.len()
    }
}

/// Compresses `lm` with `tpl`, skipping cells for which `excluded` holds.
///
/// Groups lose clipped and excluded members and the survivors' weights are
/// renormalized; groups left empty are dropped. Returns `None` when nothing
/// survives.
pub fn apply_template<F>(
    tpl: &AbstractionTemplate,
    lm: &LocalMap,
    excluded: F,
    params: &BitCostParams,
    accounting: BitAccounting,
) -> Option<AbstractionMessage>
where
    F: Fn(usize) -> bool,
{
    let lookup: HashMap<Offset, usize> = lm
        .offsets
        .iter()
        .enumerate()
        .map(|(k, &off)| (off, k))
        .collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for group in &tpl.groups {
        let members: Vec<(usize, f64, f64)> = group
            .offsets
            .iter()
            .zip(&group.weights)
            .filter_map(|(off, &w)| lookup.get(off).map(|&k| (lm.cells[k], lm.values[k], w)))
            .filter(|&(cell, _, w)| w > 0.0 && !excluded(cell))
            .collect();
        if members.is_empty() {
            continue;
        }
        let total: f64 = members.iter().map(|m| m.2).sum();
        let row = SparseRow::new(members.iter().map(|&(c, _, w)| (c, w / total)).collect());
        let value = members.iter().map(|&(_, v, w)| v * (w / total)).sum::<f64>();
        rows.push(row);
        values.push(value.clamp(0.0, 1.0));
    }
    if rows.is_empty() {
        return None;
    }
    let k = match accounting {
        BitAccounting::Effective => rows.len(),
        BitAccounting::Nominal => tpl.k_theta(),
    };
    Some(AbstractionMessage {
        theta: tpl.id,
        bits: params.bits(k),
        rows,
        values,
    })
}

/// The ordered set of templates both robots share.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub window_w: usize,
    pub window_h: usize,
    pub templates: Vec<AbstractionTemplate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSummary {
    pub id: usize,
    pub k_theta: usize,
    pub covered: usize,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateReport {
    pub templates: Vec<TemplateSummary>,
    /// Violations that concern the set as a whole (labelling, ids).
    pub set_violations: Vec<String>,
}

impl TemplateReport {
    pub fn passed(&self) -> bool {
        self.set_violations.is_empty() && self.templates.iter().all(|t| t.violations.is_empty())
    }
}

impl std::fmt::Display for TemplateReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.templates {
            let status = if t.violations.is_empty() { "ok" } else { "FAIL" };
            writeln!(
                f,
                "template {:>3}: k = {:>3}, covered = {:>3}  {status}",
                t.id, t.k_theta, t.covered
            )?;
            for v in &t.violations {
                writeln!(f, "    template {}: {v}", t.id)?;
            }
        }
        for v in &self.set_violations {
            writeln!(f, "set: {v}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

impl TemplateSet {
    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&AbstractionTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn report(&self) -> TemplateReport {
        let templates = self
            .templates
            .iter()
            .map(|t| TemplateSummary {
                id: t.id,
                k_theta: t.k_theta(),
                covered: t.coverage_mask().len(),
                violations: t.violations(),
            })
            .collect();
        let mut set_violations = Vec::new();
        if self.templates.is_empty() {
            set_violations.push("no templates".to_string());
        }
        for (pos, t) in self.templates.iter().enumerate() {
            if t.id != pos + 1 {
                set_violations.push(format!(
                    "template at position {} has id {}, expected {}",
                    pos + 1,
                    t.id,
                    pos + 1
                ));
            }
        }
        for pair in self.templates.windows(2) {
            if pair[1].k_theta() >= pair[0].k_theta() {
                set_violations.push(format!(
                    "k_theta must strictly decrease with id: template {} has k = {}, template {} has k = {}",
                    pair[0].id,
                    pair[0].k_theta(),
                    pair[1].id,
                    pair[1].k_theta()
                ));
            }
        }
        TemplateReport {
            templates,
            set_violations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let report = self.report();
        if let Some(t) = report.templates.iter().find(|t| !t.violations.is_empty()) {
            return Err(Error::Template {
                template: t.id,
                message: t.violations[0].clone(),
            });
        }
        if let Some(v) = report.set_violations.first() {
            return Err(Error::Validation(v.clone()));
        }
        Ok(())
    }

    /// Parses the template file format without checking invariants.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let err = |line: usize, column: usize, message: String| Error::Parse {
            context: context.to_string(),
            line,
            column,
            message,
        };
        let mut window: Option<(usize, usize)> = None;
        let mut templates: Vec<AbstractionTemplate> = Vec::new();
        let mut open: Option<AbstractionTemplate> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap();
            match keyword {
                "window" => {
                    if window.is_some() {
                        return Err(err(line_no, 1, "duplicate window line".into()));
                    }
                    let dims: Vec<usize> = words
                        .map(|w| w.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err(line_no, 8, "window needs two integers".into()))?;
                    match dims[..] {
                        [w, h] if w % 2 == 1 && h % 2 == 1 => window = Some((w, h)),
                        _ => {
                            return Err(err(
                                line_no,
                                8,
                                "window needs two odd positive integers".into(),
                            ))
                        }
                    }
                }
                "template" => {
                    let (w, h) = window
                        .ok_or_else(|| err(line_no, 1, "template before window line".into()))?;
                    if open.is_some() {
                        return Err(err(line_no, 1, "template opened before previous end".into()));
                    }
                    let id = words
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| err(line_no, 10, "template needs an integer id".into()))?;
                    open = Some(AbstractionTemplate {
                        id,
                        window_w: w,
                        window_h: h,
                        groups: Vec::new(),
                    });
                }
                "group" => {
                    let tpl = open
                        .as_mut()
                        .ok_or_else(|| err(line_no, 1, "group outside template".into()))?;
                    let mut offsets = Vec::new();
                    let mut weights = Vec::new();
                    let mut explicit = 0;
                    for word in words {
                        let column = raw.find(word).map(|c| c + 1).unwrap_or(1);
                        let (coord, weight) = match word.split_once('@') {
                            Some((c, w)) => (c, Some(w)),
                            None => (word, None),
                        };
                        let (dr, dc) = coord
                            .split_once(',')
                            .and_then(|(a, b)| Some((a.parse::<i32>().ok()?, b.parse::<i32>().ok()?)))
                            .ok_or_else(|| {
                                err(line_no, column, format!("expected dr,dc offset, found {word:?}"))
                            })?;
                        offsets.push((dr, dc));
                        if let Some(w) = weight {
                            explicit += 1;
                            weights.push(w.parse::<f64>().map_err(|_| {
                                err(line_no, column, format!("bad weight in {word:?}"))
                            })?);
                        }
                    }
                    if explicit != 0 && explicit != offsets.len() {
                        return Err(err(
                            line_no,
                            1,
                            "weights must be given for all members of a group or none".into(),
                        ));
                    }
                    let group = if explicit == 0 {
                        Group::uniform(offsets)
                    } else {
                        Group { offsets, weights }
                    };
                    tpl.groups.push(group);
                }
                "end" => {
                    let tpl = open
                        .take()
                        .ok_or_else(|| err(line_no, 1, "end without template".into()))?;
                    templates.push(tpl);
                }
                other => {
                    return Err(err(line_no, 1, format!("unknown keyword {other:?}")));
                }
            }
        }
        if open.is_some() {
            return Err(err(text.lines().count(), 1, "missing end".into()));
        }
        let (window_w, window_h) =
            window.ok_or_else(|| err(1, 1, "missing window line".into()))?;
        Ok(TemplateSet {
            window_w,
            window_h,
            templates,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("window {} {}\n", self.window_w, self.window_h);
        for t in &self.templates {
            writeln!(out, "template {}", t.id).unwrap();
            for g in &t.groups {
                out.push_str("group");
                let uniform = g.weights.iter().all(|&w| w == g.weights[0])
                    && (g.weights[0] - 1.0 / g.weights.len() as f64).abs() == 0.0;
                for (k, &(dr, dc)) in g.offsets.iter().enumerate() {
                    if uniform {
                        write!(out, " {dr},{dc}").unwrap();
                    } else {
                        write!(out, " {dr},{dc}@{}", g.weights[k]).unwrap();
                    }
                }
                out.push('\n');
            }
            out.push_str("end\n");
        }
        out
    }

    /// Reads and validates a template file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set = Self::load_unchecked(path)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load_unchecked(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Block partition of the window anchored at its top-left corner; offsets
/// rejected by `keep` are left out.
fn block_groups(w: usize, h: usize, block: usize, keep: impl Fn(Offset) -> bool) -> Vec<Group> {
    let (hw, hh) = ((w / 2) as i32, (h / 2) as i32);
    let (bw, bh) = (w.div_ceil(block), h.div_ceil(block));
    let mut cells: Vec<Vec<Offset>> = vec![Vec::new(); bw * bh];
    for r in 0..h {
        for c in 0..w {
            let off = (r as i32 - hh, c as i32 - hw);
            if keep(off) {
                cells[(r / block) * bw + c / block].push(off);
            }
        }
    }
    cells
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(Group::uniform)
        .collect()
}

fn in_center(off: Offset, c: usize) -> bool {
    let r = (c / 2) as i32;
    off.0.abs() <= r && off.1.abs() <= r
}

fn center_singletons(c: usize) -> Vec<Group> {
    let r = (c / 2) as i32;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            out.push(Group::uniform(vec![(dr, dc)]));
        }
    }
    out
}

/// Builds `k` templates for a `w x h` window with strictly decreasing
/// group counts.
///
/// Candidates, in priority order: uniform blocks of side 1 (identity), the
/// whole window, 2, 3 and 4; then mixed-resolution templates with fine
/// singletons in a central 3x3 (or 5x5) and coarse groups or nothing
/// outside. Candidates repeating an earlier group count are skipped and the
/// first `k` distinct ones are kept.
pub fn default_theta_set(w: usize, h: usize, k: usize) -> Result<TemplateSet> {
    if w.is_multiple_of(2) || h.is_multiple_of(2) || w == 0 || h == 0 {
        return Err(Error::Argument(format!(
            "window must have odd dimensions, got {w}x{h}"
        )));
    }
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 templates, got {k}")));
    }
    let all = |_: Offset| true;
    let whole = w.max(h);
    let mut pool: Vec<Vec<Group>> = vec![
        block_groups(w, h, 1, all),
        block_groups(w, h, whole, all),
        block_groups(w, h, 2, all),
        block_groups(w, h, 3, all),
        block_groups(w, h, 4, all),
    ];
    for c in [3usize, 5] {
        if c >= w.min(h) {
            continue;
        }
        let outside = move |off: Offset| !in_center(off, c);
        let mixed = |block: usize| {
            let mut g = center_singletons(c);
            g.extend(block_groups(w, h, block, outside));
            g
        };
        if c == 3 {
            pool.push(mixed(whole));
            pool.push(mixed(2));
            pool.push(mixed(3));
            pool.push(mixed(4));
            pool.push(center_singletons(c));
        } else {
            pool.push(center_singletons(c));
            pool.push(mixed(whole));
        }
    }

    let mut seen = BTreeSet::new();
    let mut chosen: Vec<Vec<Group>> = Vec::new();
    for groups in pool {
        if seen.insert(groups.len()) {
            chosen.push(groups);
        }
        if chosen.len() == k {
            break;
        }
    }
    if chosen.len() < k {
        return Err(Error::Argument(format!(
            "only {} distinct templates can be built for a {w}x{h} window, {k} requested",
            chosen.len()
        )));
    }
    chosen.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let templates = chosen
        .into_iter()
        .enumerate()
        .map(|(i, groups)| AbstractionTemplate {
            id: i + 1,
            window_w: w,
            window_h: h,
            groups,
        })
        .collect();
    Ok(TemplateSet {
        window_w: w,
        window_h: h,
        templates,
    })
}
