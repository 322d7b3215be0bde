/// A sparse linear row over global cell indices, sorted by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    /// Builds a row, sorting entries and merging duplicate indices.
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => merged.push((i, w)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        SparseRow { entries: merged }
    }

    pub fn unit(index: usize) -> Self {
        SparseRow {
            entries: vec![(index, 1.0)],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * x[i]).sum()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.1.abs()))
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// `self - factor * other`, dropping entries at or below `drop_tol`
    /// and the entry at `cancel` (which the caller knows is eliminated).
    pub(crate) fn axpy(&self, factor: f64, other: &SparseRow, cancel: usize, drop_tol: f64) -> Self {
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let (idx, v) = match (a.get(i), b.get(j)) {
                (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                    i += 1;
                    j += 1;
                    (ia, va - factor * vb)
                }
                (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                    i += 1;
                    (ia, va)
                }
                (Some(_), Some(&(ib, vb))) => {
                    j += 1;
                    (ib, -factor * vb)
                }
                (Some(&(ia, va)), None) => {
                    i += 1;
                    (ia, va)
                }
                (None, Some(&(ib, vb))) => {
                    j += 1;
                    (ib, -factor * vb)
                }
                (None, None) => unreachable!(),
            };
            if idx != cancel && v.abs() > drop_tol {
                out.push((idx, v));
            }
        }
        SparseRow { entries: out }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }
}
