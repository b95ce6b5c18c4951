//! Structural edits: support deltas and magnitude pruning.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sparse::SparseWeights;

/// A batch of structural edits against one layer's support.
///
/// Removals must reference existing positions; additions must not collide
/// with surviving positions. Adding back a position removed in the same
/// delta is allowed.
#[derive(Clone, Debug, Default)]
pub struct SupportDelta<T> {
    pub removals: Vec<(usize, usize)>,
    pub additions: Vec<(usize, usize, T)>,
}

impl<T> SupportDelta<T> {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.additions.is_empty()
    }
}

/// Applies a delta, producing a new layer with
/// `support = (old ∖ removals) ∪ additions`. Surviving entries keep their
/// values exactly.
pub fn apply_support_delta<T: Real>(w: &SparseWeights<T>, delta: &SupportDelta<T>) -> Result<SparseWeights<T>> {
    let mut removals = delta.removals.clone();
    removals.sort_unstable();
    for pair in removals.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::StructuralEdit { row: pair[0].0, col: pair[0].1, reason: "duplicate removal" });
        }
    }
    let mut additions: Vec<(usize, usize, T)> = delta.additions.clone();
    additions.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for pair in additions.windows(2) {
        if (pair[0].0, pair[0].1) == (pair[1].0, pair[1].1) {
            return Err(Error::StructuralEdit { row: pair[0].0, col: pair[0].1, reason: "duplicate addition" });
        }
    }

    let mut row_ptr = Vec::with_capacity(w.rows() + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::with_capacity(w.nnz() + additions.len());
    let mut values = Vec::with_capacity(w.nnz() + additions.len());

    let mut rm = removals.iter().peekable();
    let mut ad = additions.iter().peekable();
    for r in 0..w.rows() {
        let (cols, vals) = w.row_entries(r);
        // Drop removals, verifying each one exists.
        let mut survivors: Vec<(u32, T)> = Vec::with_capacity(cols.len());
        let mut k = 0;
        while let Some(&&(rr, rc)) = rm.peek() {
            if rr != r {
                break;
            }
            let rc = rc as u32;
            while k < cols.len() && cols[k] < rc {
                survivors.push((cols[k], vals[k]));
                k += 1;
            }
            if k < cols.len() && cols[k] == rc {
                k += 1; // removed
            } else {
                return Err(Error::StructuralEdit { row: rr, col: rc as usize, reason: "removal of non-existing position" });
            }
            rm.next();
        }
        while k < cols.len() {
            survivors.push((cols[k], vals[k]));
            k += 1;
        }
        // Merge additions, rejecting collisions with survivors.
        let start = col_idx.len();
        let mut s = 0;
        while let Some(&&(ar, ac, av)) = ad.peek() {
            if ar != r {
                break;
            }
            if ac >= w.cols() {
                return Err(Error::StructuralEdit { row: ar, col: ac, reason: "addition out of bounds" });
            }
            let ac32 = ac as u32;
            while s < survivors.len() && survivors[s].0 < ac32 {
                col_idx.push(survivors[s].0);
                values.push(survivors[s].1);
                s += 1;
            }
            if s < survivors.len() && survivors[s].0 == ac32 {
                return Err(Error::StructuralEdit { row: ar, col: ac, reason: "addition of existing position" });
            }
            col_idx.push(ac32);
            values.push(av);
            ad.next();
        }
        while s < survivors.len() {
            col_idx.push(survivors[s].0);
            values.push(survivors[s].1);
            s += 1;
        }
        let _ = start;
        row_ptr.push(col_idx.len());
    }
    if let Some(&&(rr, rc)) = rm.peek() {
        return Err(Error::StructuralEdit { row: rr, col: rc, reason: "removal out of bounds" });
    }
    if let Some(&&(ar, ac, _)) = ad.peek() {
        return Err(Error::StructuralEdit { row: ar, col: ac, reason: "addition out of bounds" });
    }
    SparseWeights::from_csr(w.rows(), w.cols(), row_ptr, col_idx, values)
}

/// Keeps the `target_nnz` entries of largest magnitude; ties broken by
/// (row, col) lexicographic order so results are reproducible.
pub fn magnitude_prune_to_count<T: Real>(w: &SparseWeights<T>, target_nnz: usize) -> Result<SparseWeights<T>> {
    let nnz = w.nnz();
    if target_nnz > nnz {
        return Err(Error::Argument(format!(
            "target_nnz {target_nnz} exceeds nnz {nnz}"
        )));
    }
    let drop = nnz - target_nnz;
    if drop == 0 {
        return Ok(w.clone());
    }
    let mut order: Vec<usize> = (0..nnz).collect();
    let row_of = entry_rows(w);
    let cols = w.col_idx();
    let vals = w.values();
    order.sort_unstable_by(|&a, &b| {
        vals[a]
            .abs()
            .partial_cmp(&vals[b].abs())
            .unwrap_or(Ordering::Equal)
            .then_with(|| (row_of[a], cols[a]).cmp(&(row_of[b], cols[b])))
    });
    let mut keep = vec![true; nnz];
    for &k in order.iter().take(drop) {
        keep[k] = false;
    }
    rebuild_filtered(w, |k, _, _| keep[k])
}

/// Expands `row_ptr` into one row id per stored entry.
pub(crate) fn entry_rows<T: Real>(w: &SparseWeights<T>) -> Vec<usize> {
    let mut out = vec![0usize; w.nnz()];
    for r in 0..w.rows() {
        for k in w.row_ptr()[r]..w.row_ptr()[r + 1] {
            out[k] = r;
        }
    }
    out
}

/// Rebuilds a layer keeping only entries where `pred(entry_index, row, col)`.
pub(crate) fn rebuild_filtered<T: Real>(
    w: &SparseWeights<T>,
    pred: impl Fn(usize, usize, u32) -> bool,
) -> Result<SparseWeights<T>> {
    let mut row_ptr = Vec::with_capacity(w.rows() + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for r in 0..w.rows() {
        for k in w.row_ptr()[r]..w.row_ptr()[r + 1] {
            let c = w.col_idx()[k];
            if pred(k, r, c) {
                col_idx.push(c);
                values.push(w.values()[k]);
            }
        }
        row_ptr.push(col_idx.len());
    }
    SparseWeights::from_csr(w.rows(), w.cols(), row_ptr, col_idx, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w_from(entries: Vec<(usize, usize, f64)>) -> SparseWeights<f64> {
        SparseWeights::from_entries(10, 10, entries).unwrap()
    }

    #[test]
    fn empty_delta_is_identity() {
        let w = w_from(vec![(0, 1, 2.0), (3, 4, -1.0)]);
        let out = apply_support_delta(&w, &SupportDelta::default()).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn removing_sole_entry_empties_matrix() {
        let w = SparseWeights::from_entries(3, 3, vec![(1, 2, 5.0)]).unwrap();
        let out = apply_support_delta(
            &w,
            &SupportDelta { removals: vec![(1, 2)], additions: vec![] },
        )
        .unwrap();
        assert_eq!(out.nnz(), 0);
        assert!(out.row_ptr().iter().all(|&p| p == 0));
    }

    #[test]
    fn bad_edits_identify_position() {
        let w = w_from(vec![(0, 1, 2.0)]);
        let err = apply_support_delta(
            &w,
            &SupportDelta { removals: vec![(5, 5)], additions: vec![] },
        )
        .unwrap_err();
        assert!(err.to_string().contains("(5, 5)"));
        let err = apply_support_delta(
            &w,
            &SupportDelta { removals: vec![], additions: vec![(0, 1, 9.0)] },
        )
        .unwrap_err();
        assert!(err.to_string().contains("(0, 1)"));
    }

    #[test]
    fn readding_removed_position_is_allowed() {
        let w = w_from(vec![(0, 1, 2.0)]);
        let out = apply_support_delta(
            &w,
            &SupportDelta { removals: vec![(0, 1)], additions: vec![(0, 1, 7.0)] },
        )
        .unwrap();
        assert_eq!(out.get(0, 1), Some(7.0));
    }

    #[test]
    fn magnitude_keeps_extremes() {
        let w = SparseWeights::from_entries(
            2,
            2,
            vec![(0, 0, -5.0), (0, 1, -0.1), (1, 0, 0.2), (1, 1, 4.0)],
        )
        .unwrap();
        let out = magnitude_prune_to_count(&w, 2).unwrap();
        assert_eq!(out.nnz(), 2);
        assert_eq!(out.get(0, 0), Some(-5.0));
        assert_eq!(out.get(1, 1), Some(4.0));
        assert!(magnitude_prune_to_count(&w, 5).is_err());
        assert_eq!(magnitude_prune_to_count(&w, 4).unwrap(), w);
    }

    #[test]
    fn magnitude_split_is_exact() {
        use rand::Rng as _;
        let mut rng = crate::seeds::rng_for(3, 9);
        let mut entries = Vec::new();
        for r in 0..8 {
            for c in 0..8 {
                if rng.random::<f64>() < 0.5 {
                    entries.push((r, c, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let w = SparseWeights::from_entries(8, 8, entries).unwrap();
        let target = w.nnz() / 2;
        let out = magnitude_prune_to_count(&w, target).unwrap();
        let kept_min = out.values().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let removed_max = w
            .entries()
            .filter(|&(r, c, _)| out.get(r, c).is_none())
            .map(|(_, _, v)| v.abs())
            .fold(0.0f64, f64::max);
        assert!(kept_min >= removed_max);
    }

    proptest! {
        // Round trip: applying a delta then its inverse restores the
        // original support and values exactly.
        #[test]
        fn delta_inverse_round_trip(seed in 0u64..500) {
            use rand::Rng as _;
            let mut rng = crate::seeds::rng_for(seed, 42);
            let mut entries = Vec::new();
            for r in 0..10 {
                for c in 0..10 {
                    if rng.random::<f64>() < 0.2 {
                        entries.push((r, c, rng.random_range(-1.0..1.0f64)));
                    }
                }
            }
            let w = w_from(entries.clone());
            let removals: Vec<(usize, usize)> = entries
                .iter()
                .filter(|_| rng.random::<f64>() < 0.3)
                .map(|&(r, c, _)| (r, c))
                .collect();
            let mut additions = Vec::new();
            for r in 0..10usize {
                for c in 0..10usize {
                    if !w.contains(r, c) && rng.random::<f64>() < 0.05 {
                        additions.push((r, c, rng.random_range(-1.0..1.0f64)));
                    }
                }
            }
            let fwd = SupportDelta { removals: removals.clone(), additions: additions.clone() };
            let edited = apply_support_delta(&w, &fwd).unwrap();
            edited.validate().unwrap();
            prop_assert_eq!(edited.nnz(), w.nnz() - removals.len() + additions.len());
            let inverse = SupportDelta {
                removals: additions.iter().map(|&(r, c, _)| (r, c)).collect(),
                additions: removals
                    .iter()
                    .map(|&(r, c)| (r, c, w.get(r, c).unwrap()))
                    .collect(),
            };
            let restored = apply_support_delta(&edited, &inverse).unwrap();
            prop_assert_eq!(restored, w);
        }

        // Pruning depends only on the entry set, not construction order.
        #[test]
        fn magnitude_prune_permutation_invariant(seed in 0u64..200) {
            use rand::seq::SliceRandom as _;
            use rand::Rng as _;
            let mut rng = crate::seeds::rng_for(seed, 77);
            let mut entries = Vec::new();
            for r in 0..6 {
                for c in 0..6 {
                    if rng.random::<f64>() < 0.5 {
                        entries.push((r, c, rng.random_range(-1.0..1.0f64)));
                    }
                }
            }
            let a = SparseWeights::from_entries(6, 6, entries.clone()).unwrap();
            entries.shuffle(&mut rng);
            let b = SparseWeights::from_entries(6, 6, entries).unwrap();
            let target = a.nnz() / 3;
            prop_assert_eq!(
                magnitude_prune_to_count(&a, target).unwrap(),
                magnitude_prune_to_count(&b, target).unwrap()
            );
        }
    }
}
