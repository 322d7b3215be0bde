//! The accumulated measurement system `A x = o` with `0 <= x <= 1`.
//!
//! Accepted rows are kept verbatim for reporting, and mirrored in a reduced
//! row-echelon basis that is updated one row at a time. The basis drives the
//! rank test, the consistency check and the known-cell flags: a cell is
//! known exactly when its pivot row has no other entry.

use std::fmt::Write as _;

use crate::abstraction::AbstractionMessage;
use crate::error::{Error, Result};
use crate::sparse::SparseRow;

/// A residual entry below this fraction of the row's largest entry is zero.
pub const PIVOT_TOL: f64 = 1e-9;
/// Largest right-hand-side mismatch tolerated on a dependent row.
pub const CONSISTENCY_TOL: f64 = 1e-7;
/// Largest disagreement tolerated between two exact values of one cell.
pub const EXACT_TOL: f64 = 1e-9;
/// Entries this small are dropped from basis rows to keep them sparse.
const DROP_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BasisRow {
    pub pivot: usize,
    pub row: SparseRow,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintStore {
    n: usize,
    rows: Vec<SparseRow>,
    rhs: Vec<f64>,
    pending: Vec<(SparseRow, f64)>,
    basis: Vec<BasisRow>,
    pivot_row: Vec<Option<usize>>,
    known: Vec<Option<f64>>,
}

/// Outcome of inserting one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Independent,
    Dependent,
}

impl ConstraintStore {
    pub fn new(n: usize) -> Self {
        ConstraintStore {
            n,
            rows: Vec::new(),
            rhs: Vec::new(),
            pending: Vec::new(),
            basis: Vec::new(),
            pivot_row: vec![None; n],
            known: vec![None; n],
        }
    }

    /// Ambient dimension `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of independent equality rows `k_t` (pending rows excluded).
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.pending.is_empty()
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn known(&self) -> &[Option<f64>] {
        &self.known
    }

    pub fn is_known(&self, cell: usize) -> bool {
        self.known[cell].is_some()
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|k| k.is_some()).count()
    }

    /// Basis rows that still couple two or more unknown cells.
    pub(crate) fn coupling_rows(&self) -> impl Iterator<Item = &BasisRow> {
        self.basis.iter().filter(|b| b.row.len() > 1)
    }

    /// Pins each listed cell to its value; idempotent for repeated values.
    pub fn add_exact(&mut self, cells: &[(usize, f64)]) -> Result<()> {
        self.reduce_independent()?;
        for &(cell, value) in cells {
            if cell >= self.n {
                return Err(Error::Argument(format!("cell {cell} outside {}-cell map", self.n)));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Argument(format!(
                    "exact value {value} for cell {cell} outside [0, 1]"
                )));
            }
            if let Some(old) = self.known[cell] {
                if (old - value).abs() > EXACT_TOL {
                    return Err(Error::Consistency(format!(
                        "cell {cell} is pinned to {old} but a new measurement says {value}"
                    )));
                }
                continue;
            }
            self.insert(SparseRow::unit(cell), value)?;
        }
        Ok(())
    }

    /// Queues the message's rows; they join the basis on the next reduction.
    pub fn add_message(&mut self, msg: &AbstractionMessage) {
        for (row, &v) in msg.rows.iter().zip(&msg.values) {
            self.add_row(row.clone(), v);
        }
    }

    pub fn add_row(&mut self, row: SparseRow, value: f64) {
        debug_assert!(row.indices().all(|i| i < self.n));
        self.pending.push((row, value));
    }

    /// Moves pending rows into the basis, dropping dependent ones.
    pub fn reduce_independent(&mut self) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        for (row, value) in pending {
            self.insert(row, value)?;
        }
        Ok(())
    }

    /// Reduces `row` against the basis; returns the remainder and its rhs.
    fn residual_against_basis(&self, row: &SparseRow, value: f64) -> (SparseRow, f64) {
        let mut rem = row.clone();
        let mut rhs = value;
        for &(col, _) in &row.entries {
            if let Some(b) = self.pivot_row[col] {
                // basis rows carry no other pivot column, so one pass suffices
                let factor = rem.get(col);
                if factor == 0.0 {
                    continue;
                }
                let basis = &self.basis[b];
                rem = rem.axpy(factor, &basis.row, col, DROP_TOL);
                rhs -= factor * basis.rhs;
            }
        }
        (rem, rhs)
    }

    fn insert(&mut self, row: SparseRow, value: f64) -> Result<Insertion> {
        let scale = row.max_abs();
        if scale == 0.0 {
            if value.abs() > CONSISTENCY_TOL {
                return Err(Error::Consistency(format!(
                    "empty row with nonzero value {value}"
                )));
            }
            return Ok(Insertion::Dependent);
        }
        let (mut rem, mut rhs) = self.residual_against_basis(&row, value);
        rem.entries.retain(|e| e.1.abs() > DROP_TOL * scale);
        let Some(&(pivot, pv)) = rem
            .entries
            .iter()
            .fold(None, |best: Option<&(usize, f64)>, e| match best {
                Some(b) if b.1.abs() >= e.1.abs() => Some(b),
                _ => Some(e),
            })
        else {
            return self.dependent(rhs);
        };
        if pv.abs() <= PIVOT_TOL * scale {
            return self.dependent(rhs);
        }

        rem.scale(1.0 / pv);
        rhs /= pv;
        if let Ok(k) = rem.entries.binary_search_by_key(&pivot, |e| e.0) {
            rem.entries[k].1 = 1.0;
        }
        rem.entries.retain(|e| e.0 == pivot || e.1.abs() > DROP_TOL);

        for b in 0..self.basis.len() {
            let factor = self.basis[b].row.get(pivot);
            if factor == 0.0 {
                continue;
            }
            let updated = self.basis[b].row.axpy(factor, &rem, pivot, DROP_TOL);
            self.basis[b].rhs -= factor * rhs;
            self.basis[b].row = updated;
            if self.basis[b].row.len() == 1 {
                let p = self.basis[b].pivot;
                self.known[p] = Some(self.basis[b].rhs);
            }
        }
        if rem.len() == 1 {
            self.known[pivot] = Some(rhs);
        }
        self.pivot_row[pivot] = Some(self.basis.len());
        self.basis.push(BasisRow {
            pivot,
            row: rem,
            rhs,
        });
        self.rows.push(row);
        self.rhs.push(value);
        Ok(Insertion::Independent)
    }

    fn dependent(&self, rhs_residual: f64) -> Result<Insertion> {
        if rhs_residual.abs() > CONSISTENCY_TOL {
            Err(Error::Consistency(format!(
                "dependent row disagrees with earlier rows by {rhs_residual:e}"
            )))
        } else {
            Ok(Insertion::Dependent)
        }
    }

    /// `max_i |A_i x - o_i|` over accepted rows.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .fold(0.0, |m, (r, &o)| m.max((r.dot(x) - o).abs()))
    }

    /// Whether every equality of `other` follows from the equalities here,
    /// i.e. this store's affine set lies inside the other's.
    pub fn implies(&self, other: &ConstraintStore) -> bool {
        if self.n != other.n || !self.pending.is_empty() || !other.pending.is_empty() {
            return false;
        }
        other.basis.iter().all(|b| {
            let (rem, rhs) = self.residual_against_basis(&b.row, b.rhs);
            rem.entries.iter().all(|e| e.1.abs() <= PIVOT_TOL) && rhs.abs() <= CONSISTENCY_TOL
        })
    }

    /// Whether the equality constraints of both stores define the same
    /// affine set (same rank, and every row of `other` is implied here).
    pub fn same_solution_set(&self, other: &ConstraintStore) -> bool {
        self.basis.len() == other.basis.len() && self.implies(other)
    }

    /// Long-format dump: one line per nonzero, `row,cell,weight,rhs`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,cell,weight,rhs\n");
        for (k, (row, rhs)) in self.rows.iter().zip(&self.rhs).enumerate() {
            for &(cell, w) in &row.entries {
                writeln!(out, "{k},{cell},{w},{rhs}").unwrap();
            }
        }
        out
    }
}
