//! Block-row sparse linear operator.
//!
//! `A` is stored row-major (CSR) and partitioned into `n` contiguous row
//! blocks `A_1, ..., A_n`. SPDHG touches a single block per iteration, so
//! every per-block operation costs `O(nnz(A_i))`.

use std::ops::Range;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance on successive Rayleigh quotients used for cached norms.
pub const NORM_TOL: f64 = 1e-10;
/// Iteration cap for the cached power iteration.
pub const NORM_MAX_ITER: usize = 1000;

const NORM_SEED_SALT: u64 = 0x5bd1_e995_9e37_79b9;

#[derive(Debug)]
pub struct BlockLinearOperator {
    p: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    /// Row offsets of the blocks, length `n + 1`.
    block_ptr: Vec<usize>,
    norms: Vec<OnceLock<f64>>,
}

impl Clone for BlockLinearOperator {
    fn clone(&self) -> Self {
        let norms = self
            .norms
            .iter()
            .map(|cell| {
                let out = OnceLock::new();
                if let Some(v) = cell.get() {
                    let _ = out.set(*v);
                }
                out
            })
            .collect();
        Self {
            p: self.p,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.clone(),
            block_ptr: self.block_ptr.clone(),
            norms,
        }
    }
}

impl BlockLinearOperator {
    /// Builds from sparse rows given as `(column, value)` lists. Every row is
    /// its own block; use [`regrouped`](Self::regrouped) for coarser blocks.
    pub fn from_sparse_rows(p: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut sorted: Vec<(usize, f64)> = row.clone();
            sorted.sort_by_key(|&(c, _)| c);
            for w in sorted.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate column {} in a row",
                        w[0].0
                    )));
                }
            }
            for (c, v) in sorted {
                if c >= p {
                    return Err(Error::InvalidArgument(format!(
                        "column index {c} out of range for primal dimension {p}"
                    )));
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let m = rows.len();
        Ok(Self::assemble(p, row_ptr, col_idx, values, (0..=m).collect()))
    }

    /// Builds from a dense row-major `m × p` array, one block per row.
    pub fn from_dense(m: usize, p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * p {
            return Err(Error::dim("dense data", m * p, data.len()));
        }
        let rows: Vec<Vec<(usize, f64)>> = data
            .chunks(p.max(1))
            .take(m)
            .map(|r| r.iter().copied().enumerate().collect())
            .collect();
        Self::from_sparse_rows(p, &rows)
    }

    /// Builds from `(row, col, value)` triplets; duplicate entries are summed.
    pub fn from_triplets(
        m: usize,
        p: usize,
        triplets: &[(usize, usize, f64)],
        block_sizes: &[usize],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for &(r, c, v) in triplets {
            if r >= m {
                return Err(Error::InvalidArgument(format!(
                    "row index {r} out of range for {m} rows"
                )));
            }
            if let Some(slot) = rows[r].iter_mut().find(|(cc, _)| *cc == c) {
                slot.1 += v;
            } else {
                rows[r].push((c, v));
            }
        }
        Self::from_sparse_rows(p, &rows)?.regrouped(block_sizes)
    }

    fn assemble(
        p: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
        block_ptr: Vec<usize>,
    ) -> Self {
        let n = block_ptr.len() - 1;
        Self {
            p,
            row_ptr,
            col_idx,
            values,
            block_ptr,
            norms: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    /// Same nonzeros partitioned into blocks of the given row counts.
    pub fn regrouped(&self, block_sizes: &[usize]) -> Result<Self> {
        let total: usize = block_sizes.iter().sum();
        if total != self.dual_dim() {
            return Err(Error::dim("block sizes", self.dual_dim(), total));
        }
        if block_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("empty block".into()));
        }
        let mut block_ptr = Vec::with_capacity(block_sizes.len() + 1);
        block_ptr.push(0);
        for s in block_sizes {
            block_ptr.push(block_ptr.last().unwrap() + s);
        }
        Ok(Self::assemble(
            self.p,
            self.row_ptr.clone(),
            self.col_idx.clone(),
            self.values.clone(),
            block_ptr,
        ))
    }

    /// Same nonzeros grouped into blocks of `size` rows (the last may be shorter).
    pub fn grouped_by(&self, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        let m = self.dual_dim();
        let sizes: Vec<usize> = (0..m).step_by(size).map(|s| size.min(m - s)).collect();
        self.regrouped(&sizes)
    }

    /// The whole operator as one block.
    pub fn single_block(&self) -> Self {
        self.regrouped(&[self.dual_dim()])
            .expect("single block covers all rows")
    }

    pub fn n_blocks(&self) -> usize {
        self.block_ptr.len() - 1
    }

    pub fn primal_dim(&self) -> usize {
        self.p
    }

    pub fn dual_dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn block_offsets(&self) -> &[usize] {
        &self.block_ptr
    }

    pub fn block_rows(&self, i: usize) -> Range<usize> {
        self.block_ptr[i]..self.block_ptr[i + 1]
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.block_ptr[i + 1] - self.block_ptr[i]
    }

    pub fn block_dims(&self) -> Vec<usize> {
        (0..self.n_blocks()).map(|i| self.block_dim(i)).collect()
    }

    pub fn block_nnz(&self, i: usize) -> usize {
        let rows = self.block_rows(i);
        self.row_ptr[rows.end] - self.row_ptr[rows.start]
    }

    /// Nonzeros of one row as `(columns, values)`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Sorted distinct columns touched by block `i`.
    pub fn block_support(&self, i: usize) -> Vec<usize> {
        let rows = self.block_rows(i);
        let mut cols: Vec<usize> =
            self.col_idx[self.row_ptr[rows.start]..self.row_ptr[rows.end]].to_vec();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    fn check_block(&self, i: usize) -> Result<()> {
        if i >= self.n_blocks() {
            return Err(Error::InvalidArgument(format!(
                "block index {i} out of range for {} blocks",
                self.n_blocks()
            )));
        }
        Ok(())
    }

    /// `A_i x`.
    pub fn block_apply(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_block(i)?;
        if x.len() != self.p {
            return Err(Error::dim("primal vector", self.p, x.len()));
        }
        let mut out = vec![0.0; self.block_dim(i)];
        self.block_apply_into(i, x, &mut out);
        Ok(out)
    }

    /// `out = A_i x` without validation; `out.len()` must equal `m_i`.
    #[inline]
    pub fn block_apply_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(self.block_rows(i)) {
            *o = self.row_dot(r, x);
        }
    }

    #[inline]
    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `A_i^T y_i` as a dense primal vector.
    pub fn adjoint_block_apply(&self, i: usize, y_i: &[f64]) -> Result<Vec<f64>> {
        self.check_block(i)?;
        if y_i.len() != self.block_dim(i) {
            return Err(Error::dim("dual block", self.block_dim(i), y_i.len()));
        }
        let mut out = vec![0.0; self.p];
        self.adjoint_block_axpy(i, 1.0, y_i, &mut out);
        Ok(out)
    }

    /// `out += alpha · A_i^T y_i` without validation.
    #[inline]
    pub fn adjoint_block_axpy(&self, i: usize, alpha: f64, y_i: &[f64], out: &mut [f64]) {
        for (&yr, r) in y_i.iter().zip(self.block_rows(i)) {
            if yr == 0.0 {
                continue;
            }
            let s = alpha * yr;
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += s * v;
            }
        }
    }

    /// Stacked `A x`.
    pub fn full_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::dim("primal vector", self.p, x.len()));
        }
        Ok((0..self.dual_dim()).map(|r| self.row_dot(r, x)).collect())
    }

    /// `A^T y = Σ_i A_i^T y_i`, accumulated block by block in index order.
    pub fn full_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dual_dim() {
            return Err(Error::dim("dual vector", self.dual_dim(), y.len()));
        }
        let mut out = vec![0.0; self.p];
        self.full_adjoint_into(y, &mut out);
        Ok(out)
    }

    pub(crate) fn full_adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n_blocks() {
            self.adjoint_block_axpy(i, 1.0, &y[self.block_rows(i)], out);
        }
    }

    /// Cached spectral norm `||A_i||` (tolerance [`NORM_TOL`], cap [`NORM_MAX_ITER`]).
    pub fn block_norm(&self, i: usize) -> f64 {
        self.block_norm_with(i, NORM_TOL, NORM_MAX_ITER)
    }

    /// Spectral norm of block `i` by power iteration on the Gram matrix.
    ///
    /// The first call for a block fixes the cached value; later calls return
    /// it regardless of `tol` and `max_iter`.
    pub fn block_norm_with(&self, i: usize, tol: f64, max_iter: usize) -> f64 {
        *self.norms[i].get_or_init(|| self.power_iteration(i, tol, max_iter))
    }

    pub fn block_norms(&self) -> Vec<f64> {
        (0..self.n_blocks()).map(|i| self.block_norm(i)).collect()
    }

    pub fn max_block_norm(&self) -> f64 {
        self.block_norms().into_iter().fold(0.0, f64::max)
    }

    fn power_iteration(&self, i: usize, tol: f64, max_iter: usize) -> f64 {
        let m_i = self.block_dim(i);
        if self.block_nnz(i) == 0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(NORM_SEED_SALT ^ i as u64);
        // Iterate on whichever Gram matrix (A_i A_i^T or A_i^T A_i) is smaller.
        let row_side = m_i <= self.p;
        let dim = if row_side { m_i } else { self.p };
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = linalg::norm(&v);
        v.iter_mut().for_each(|e| *e /= nv);

        let mut primal = vec![0.0; self.p];
        let mut dual = vec![0.0; m_i];
        let mut rayleigh_prev = f64::NAN;
        let mut rayleigh = 0.0;
        for _ in 0..max_iter {
            let gv = if row_side {
                primal.iter_mut().for_each(|e| *e = 0.0);
                self.adjoint_block_axpy(i, 1.0, &v, &mut primal);
                self.block_apply_into(i, &primal, &mut dual);
                &dual
            } else {
                self.block_apply_into(i, &v, &mut dual);
                primal.iter_mut().for_each(|e| *e = 0.0);
                self.adjoint_block_axpy(i, 1.0, &dual, &mut primal);
                &primal
            };
            rayleigh = linalg::dot(&v, gv);
            let ngv = linalg::norm(gv);
            if ngv == 0.0 {
                return 0.0;
            }
            if (rayleigh - rayleigh_prev).abs() < tol * rayleigh.abs() {
                break;
            }
            rayleigh_prev = rayleigh;
            for (e, g) in v.iter_mut().zip(gv.iter()) {
                *e = g / ngv;
            }
        }
        rayleigh.max(0.0).sqrt()
    }

    /// Dense row-major copy, for oracles and small problems.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dual_dim() * self.p];
        for r in 0..self.dual_dim() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[r * self.p + c] = v;
            }
        }
        out
    }

    /// Copy with rows scaled by `scale[r]` (same block partition).
    pub fn scale_rows(&self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.dual_dim() {
            return Err(Error::dim("row scales", self.dual_dim(), scale.len()));
        }
        let mut values = self.values.clone();
        for (r, &s) in scale.iter().enumerate() {
            for v in &mut values[self.row_ptr[r]..self.row_ptr[r + 1]] {
                *v *= s;
            }
        }
        Ok(Self::assemble(
            self.p,
            self.row_ptr.clone(),
            self.col_idx.clone(),
            values,
            self.block_ptr.clone(),
        ))
    }
}
