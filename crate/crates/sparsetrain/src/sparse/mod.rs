//! Compressed sparse row weight storage and the kernels that make
//! training truly sparse: forward product, support-restricted gradient,
//! and structural edits. Only existing connections are ever materialized.

mod edit;
mod io;

pub use edit::{apply_support_delta, magnitude_prune_to_count, SupportDelta};
pub(crate) use edit::rebuild_filtered;
pub use io::{read_spw1, write_spw1};
pub(crate) use io::{read_f32_le, read_u32_le, read_u64_le, write_f32_le, write_u32_le, write_u64_le};

use std::sync::OnceLock;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;

/// One layer's connection set, fan-in (`rows`) by fan-out (`cols`).
///
/// Per-row column indices are strictly increasing; `row_ptr` has length
/// `rows + 1` with `row_ptr[0] == 0` and `row_ptr[rows] == nnz`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseWeights<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<T>,
}

/// A structure-only snapshot of a layer's support, used for optimizer
/// realignment and for gradient messages in the parallel protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
}

impl Support {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn row_cols(&self, r: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }
}

impl<T: Real> SparseWeights<T> {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseWeights {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from an unsorted entry list. Duplicate positions are an error.
    pub fn from_entries(rows: usize, cols: usize, mut entries: Vec<(usize, usize, T)>) -> Result<Self> {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::StructuralEdit { row: r, col: c, reason: "position out of bounds" });
            }
            if prev == Some((r, c)) {
                return Err(Error::StructuralEdit { row: r, col: c, reason: "duplicate position" });
            }
            prev = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c as u32);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseWeights { rows, cols, row_ptr, col_idx, values })
    }

    /// Builds from raw CSR arrays, validating every invariant.
    pub fn from_csr(rows: usize, cols: usize, row_ptr: Vec<usize>, col_idx: Vec<u32>, values: Vec<T>) -> Result<Self> {
        let w = SparseWeights { rows, cols, row_ptr, col_idx, values };
        w.validate()?;
        Ok(w)
    }

    /// Full structural scan: monotone `row_ptr`, strictly increasing
    /// in-bounds columns per row, consistent lengths.
    pub fn validate(&self) -> Result<()> {
        let nnz = self.col_idx.len();
        let fail = |reason: String| Error::Format { context: "sparse weights", reason };
        if self.values.len() != nnz {
            return Err(fail(format!("values length {} != col_idx length {}", self.values.len(), nnz)));
        }
        if self.row_ptr.len() != self.rows + 1 {
            return Err(fail(format!("row_ptr length {} != rows+1 {}", self.row_ptr.len(), self.rows + 1)));
        }
        if self.row_ptr[0] != 0 || self.row_ptr[self.rows] != nnz {
            return Err(fail("row_ptr must start at 0 and end at nnz".into()));
        }
        for r in 0..self.rows {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if lo > hi {
                return Err(fail(format!("row_ptr decreases at row {r}")));
            }
            let mut prev: Option<u32> = None;
            for &c in &self.col_idx[lo..hi] {
                if c as usize >= self.cols {
                    return Err(fail(format!("column {c} out of bounds in row {r}")));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(fail(format!("columns not strictly increasing in row {r}")));
                    }
                }
                prev = Some(c);
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable view of the stored weights, aligned with `col_idx`.
    /// Structure is untouchable through this path.
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn row_entries(&self, r: usize) -> (&[u32], &[T]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        let (cols, vals) = self.row_entries(row);
        cols.binary_search(&(col as u32)).ok().map(|k| vals[k])
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.row_entries(row).0.binary_search(&(col as u32)).is_ok()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row_entries(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c as usize, v))
        })
    }

    pub fn support(&self) -> Support {
        Support {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            out.set(r, c, v);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> SparseWeights<U> {
        SparseWeights {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Kernel-internal parallelism cap, from `SPARSETRAIN_THREADS` (default 1).
pub fn kernel_threads() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("SPARSETRAIN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(1)
            .max(1)
    })
}

/// Splits `0..n` into at most `parts` contiguous chunks of near-equal size.
fn chunk_ranges(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let parts = parts.min(n).max(1);
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Dense-by-sparse forward product: `out[b][j] = Σ_i batch[b][i]·w[i][j] + bias[j]`.
///
/// Iteration order is fixed (batch row, then fan-in row, then stored
/// column order), and any internal parallelization partitions output rows
/// disjointly, so results are bit-identical for a given thread setting.
pub fn spmm_forward<T: Real>(batch: &DenseMatrix<T>, w: &SparseWeights<T>, bias: &[T]) -> Result<DenseMatrix<T>> {
    if batch.cols() != w.rows {
        return Err(Error::shape(
            "spmm_forward",
            format!("batch width {}", w.rows),
            format!("{}", batch.cols()),
        ));
    }
    if bias.len() != w.cols {
        return Err(Error::shape(
            "spmm_forward",
            format!("bias length {}", w.cols),
            format!("{}", bias.len()),
        ));
    }
    let b_rows = batch.rows();
    let mut out = DenseMatrix::zeros(b_rows, w.cols);
    let threads = kernel_threads().min(b_rows);
    if threads <= 1 {
        for b in 0..b_rows {
            forward_row(batch.row(b), w, bias, out.row_mut(b));
        }
    } else {
        let ranges = chunk_ranges(b_rows, threads);
        let cols = w.cols;
        let out_slice = out.as_mut_slice();
        std::thread::scope(|scope| {
            let mut rest = out_slice;
            for &(lo, hi) in &ranges {
                let (chunk, tail) = rest.split_at_mut((hi - lo) * cols);
                rest = tail;
                scope.spawn(move || {
                    for (off, b) in (lo..hi).enumerate() {
                        forward_row(batch.row(b), w, bias, &mut chunk[off * cols..(off + 1) * cols]);
                    }
                });
            }
        });
    }
    Ok(out)
}

#[inline]
fn forward_row<T: Real>(x: &[T], w: &SparseWeights<T>, bias: &[T], out: &mut [T]) {
    out.copy_from_slice(bias);
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            let (cols, vals) = w.row_entries(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c as usize] = out[c as usize] + xi * v;
            }
        }
    }
}

/// Support-restricted backpropagation through one sparse layer.
///
/// Returns `(grad_values, grad_bias, grad_input)` where `grad_values` is
/// aligned entry-for-entry with `w`'s stored support and averages over the
/// batch; `grad_input` carries the un-normalized per-sample upstream for
/// the previous layer. No gradient is ever materialized for a
/// non-existing connection.
pub fn backward_support_gradient<T: Real>(
    batch: &DenseMatrix<T>,
    upstream: &DenseMatrix<T>,
    w: &SparseWeights<T>,
) -> Result<(Vec<T>, Vec<T>, DenseMatrix<T>)> {
    if batch.cols() != w.rows {
        return Err(Error::shape(
            "backward_support_gradient",
            format!("batch width {}", w.rows),
            format!("{}", batch.cols()),
        ));
    }
    if upstream.cols() != w.cols || upstream.rows() != batch.rows() {
        return Err(Error::shape(
            "backward_support_gradient",
            format!("upstream {}x{}", batch.rows(), w.cols),
            format!("{}x{}", upstream.rows(), upstream.cols()),
        ));
    }
    let b_rows = batch.rows();
    let inv_b = T::from_f64(1.0 / b_rows.max(1) as f64);
    let mut grad_values = vec![T::zero(); w.nnz()];
    let mut grad_input = DenseMatrix::zeros(b_rows, w.rows);

    let threads = kernel_threads().min(w.rows);
    if threads <= 1 {
        backward_rows(0, w.rows, batch, upstream, w, &mut grad_values, grad_input.as_mut_slice());
    } else {
        // Partition by fan-in row: each chunk owns a disjoint slice of
        // grad_values and a contiguous block of a transposed grad_input
        // buffer, which is flipped back afterwards.
        let ranges = chunk_ranges(w.rows, threads);
        let mut gi_t = vec![T::zero(); w.rows * b_rows];
        std::thread::scope(|scope| {
            let mut gv_rest = grad_values.as_mut_slice();
            let mut gi_rest = gi_t.as_mut_slice();
            let mut offset = 0usize;
            for &(lo, hi) in &ranges {
                let take = w.row_ptr[hi] - offset;
                let (gv_chunk, gv_tail) = gv_rest.split_at_mut(take);
                let (gi_chunk, gi_tail) = gi_rest.split_at_mut((hi - lo) * b_rows);
                offset += take;
                gv_rest = gv_tail;
                gi_rest = gi_tail;
                scope.spawn(move || {
                    let gv_base = w.row_ptr[lo];
                    for b in 0..b_rows {
                        let xb = batch.row(b);
                        let ub = upstream.row(b);
                        for i in lo..hi {
                            let (cols, vals) = w.row_entries(i);
                            let xi = xb[i];
                            let mut acc = T::zero();
                            let gv_off = w.row_ptr[i] - gv_base;
                            for (k, (&c, &v)) in cols.iter().zip(vals).enumerate() {
                                let u = ub[c as usize];
                                gv_chunk[gv_off + k] = gv_chunk[gv_off + k] + xi * u;
                                acc = acc + v * u;
                            }
                            gi_chunk[(i - lo) * b_rows + b] = acc;
                        }
                    }
                });
            }
        });
        let gi = grad_input.as_mut_slice();
        let n_in = w.rows;
        for i in 0..n_in {
            for b in 0..b_rows {
                gi[b * n_in + i] = gi_t[i * b_rows + b];
            }
        }
    }

    for g in &mut grad_values {
        *g = *g * inv_b;
    }
    let mut grad_bias = vec![T::zero(); w.cols];
    for b in 0..b_rows {
        for (gb, &u) in grad_bias.iter_mut().zip(upstream.row(b)) {
            *gb = *gb + u;
        }
    }
    for g in &mut grad_bias {
        *g = *g * inv_b;
    }
    Ok((grad_values, grad_bias, grad_input))
}

fn backward_rows<T: Real>(
    lo: usize,
    hi: usize,
    batch: &DenseMatrix<T>,
    upstream: &DenseMatrix<T>,
    w: &SparseWeights<T>,
    grad_values: &mut [T],
    grad_input: &mut [T],
) {
    let n_in = w.rows;
    for b in 0..batch.rows() {
        let xb = batch.row(b);
        let ub = upstream.row(b);
        for i in lo..hi {
            let (cols, vals) = w.row_entries(i);
            let xi = xb[i];
            let base = w.row_ptr[i];
            let mut acc = T::zero();
            if xi != T::zero() {
                for (k, (&c, &v)) in cols.iter().zip(vals).enumerate() {
                    let u = ub[c as usize];
                    grad_values[base + k] = grad_values[base + k] + xi * u;
                    acc = acc + v * u;
                }
            } else {
                for (&c, &v) in cols.iter().zip(vals) {
                    acc = acc + v * ub[c as usize];
                }
            }
            grad_input[b * n_in + i] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_entry() -> SparseWeights<f64> {
        SparseWeights::from_entries(2, 2, vec![(0, 1, 3.0)]).unwrap()
    }

    #[test]
    fn forward_single_entry_product() {
        let w = single_entry();
        let batch = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = spmm_forward(&batch, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(out.row(0), &[0.0, 3.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn forward_empty_support_yields_bias() {
        let w = SparseWeights::<f64>::empty(3, 4);
        let batch = DenseMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![4.0, 4.0, 4.0]]);
        let bias = [0.1, 0.2, 0.3, 0.4];
        let out = spmm_forward(&batch, &w, &bias).unwrap();
        for b in 0..2 {
            assert_eq!(out.row(b), &bias);
        }
    }

    #[test]
    fn forward_shape_error_names_op() {
        let w = single_entry();
        let batch = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]);
        let err = spmm_forward(&batch, &w, &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("spmm_forward"));
    }

    #[test]
    fn forward_matches_dense_oracle() {
        use rand::Rng as _;
        let mut rng = crate::seeds::rng_for(11, 0);
        for _ in 0..50 {
            let (n_in, n_out) = (3usize, 5usize);
            let mut entries = Vec::new();
            for r in 0..n_in {
                for c in 0..n_out {
                    if rng.random::<f64>() < 0.4 {
                        entries.push((r, c, rng.random_range(-1.0..1.0)));
                    }
                }
            }
            let w = SparseWeights::from_entries(n_in, n_out, entries).unwrap();
            let batch = DenseMatrix::from_vec(
                4,
                n_in,
                (0..4 * n_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            let bias: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = spmm_forward(&batch, &w, &bias).unwrap();
            let dense = w.to_dense();
            for b in 0..4 {
                for j in 0..n_out {
                    let mut expect = bias[j];
                    for i in 0..n_in {
                        expect += batch.get(b, i) * dense.get(i, j);
                    }
                    assert!((out.get(b, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_zero_upstream_is_zero() {
        let w = single_entry();
        let batch = DenseMatrix::from_rows(&[vec![1.0, 2.0]]);
        let upstream = DenseMatrix::zeros(1, 2);
        let (gv, gb, gi) = backward_support_gradient(&batch, &upstream, &w).unwrap();
        assert!(gv.iter().all(|&g| g == 0.0));
        assert!(gb.iter().all(|&g| g == 0.0));
        assert!(gi.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        let w = SparseWeights::from_entries(1, 1, vec![(0, 0, 0.7)]).unwrap();
        let batch = DenseMatrix::from_rows(&[vec![2.0]]);
        let upstream = DenseMatrix::from_rows(&[vec![3.0]]);
        let (gv, gb, gi) = backward_support_gradient(&batch, &upstream, &w).unwrap();
        assert_eq!(gv, vec![6.0]);
        assert_eq!(gb, vec![3.0]);
        assert_eq!(gi.get(0, 0), 3.0 * 0.7);
    }

    #[test]
    fn validate_rejects_unsorted_columns() {
        let w = SparseWeights::<f32> {
            rows: 1,
            cols: 3,
            row_ptr: vec![0, 2],
            col_idx: vec![2, 1],
            values: vec![1.0, 2.0],
        };
        assert!(w.validate().is_err());
    }
}
