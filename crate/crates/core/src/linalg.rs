//! Compressed-sparse-row matrices and Jacobi-preconditioned conjugate gradients.
//!
//! Everything here is single-threaded and deterministic: the same inputs give
//! bit-identical outputs. Parallelism lives at the sample level further up.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative residual tolerance used throughout the pipeline.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Square or rectangular CSR matrix in canonical form (sorted, duplicate-free rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR arrays, validating the canonical-form invariants.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::DimensionMismatch {
                expected: n_rows + 1,
                got: row_offsets.len(),
            });
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != values.len() {
            return Err(Error::Structural(
                "row_offsets, col_indices and values disagree on nnz".into(),
            ));
        }
        for r in 0..n_rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if start > end {
                return Err(Error::Structural(format!("row_offsets decreases at row {r}")));
            }
            for k in start..end {
                if col_indices[k] >= n_cols {
                    return Err(Error::Structural(format!(
                        "column index {} out of range in row {r}",
                        col_indices[k]
                    )));
                }
                if k > start && col_indices[k] <= col_indices[k - 1] {
                    return Err(Error::Structural(format!(
                        "column indices not strictly increasing in row {r}"
                    )));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Structural(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty after first push") += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Dense row-major input; exact zeros are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n_rows, n_cols, &triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries of row `r` as (column, value) pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Entry (i, j), zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Structural and numerical symmetry check with absolute tolerance `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// y = A x; errors on dimension mismatch.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *out = acc;
        }
    }
}

/// Free-function form of [`SparseMatrix::spmv`].
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    a.spmv(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearSolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    /// `None` means `20 * n_rows`.
    pub max_iter: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            preconditioner: Preconditioner::Jacobi,
        }
    }
}

impl CgOptions {
    pub fn new(tol: f64, max_iter: usize, preconditioner: Preconditioner) -> Self {
        Self {
            tol,
            max_iter: Some(max_iter),
            preconditioner,
        }
    }

    fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(20 * n.max(1))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nullspace handling for the periodic case.
struct MeanZero<'a> {
    weights: &'a [f64],
    weight_sum: f64,
}

impl MeanZero<'_> {
    fn project_weighted(&self, x: &mut [f64]) {
        let mean = dot(self.weights, x) / self.weight_sum;
        x.iter_mut().for_each(|v| *v -= mean);
    }
}

fn project_euclidean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn check_square(a: &SparseMatrix, b: &[f64]) -> Result<()> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::InvalidInput(format!(
            "CG needs a square matrix, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: a.n_rows(),
            got: b.len(),
        });
    }
    Ok(())
}

fn pcg(
    a: &SparseMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    meanzero: Option<&MeanZero<'_>>,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let n = a.n_rows();
    let max_iter = opts.max_iter_for(n);
    let inv_diag: Vec<f64> = match opts.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };

    let mut x = match x0 {
        Some(g) => {
            if g.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g.len(),
                });
            }
            g.to_vec()
        }
        None => vec![0.0; n],
    };

    let b_norm = norm2(b);
    if !b_norm.is_finite() {
        return Err(Error::solver("non-finite right-hand side", None));
    }
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            LinearSolveReport {
                iterations: 0,
                final_residual_norm: 0.0,
                converged: true,
            },
        ));
    }
    let target = opts.tol * b_norm;

    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| {
        a.spmv_into(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
    };
    true_residual(&x, &mut r, &mut q);
    if let Some(mz) = meanzero {
        project_euclidean(&mut r);
        mz.project_weighted(&mut x);
    }

    let mut r_norm = norm2(&r);
    let mut iterations = 0usize;
    let finish = |x: Vec<f64>, iterations: usize, r_norm: f64, converged: bool| {
        Ok((
            x,
            LinearSolveReport {
                iterations,
                final_residual_norm: r_norm,
                converged,
            },
        ))
    };
    if r_norm <= target {
        return finish(x, 0, r_norm, true);
    }

    // Outer loop restarts from the true residual whenever the recursive
    // residual claims convergence but the true one disagrees.
    loop {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut claimed = false;
        while iterations < max_iter {
            iterations += 1;
            a.spmv_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !pq.is_finite() {
                return Err(Error::solver(
                    format!("non-finite curvature at iteration {iterations}"),
                    None,
                ));
            }
            if pq == 0.0 {
                return finish(x, iterations, r_norm, false);
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if let Some(mz) = meanzero {
                mz.project_weighted(&mut x);
            }
            r_norm = norm2(&r);
            if !r_norm.is_finite() {
                return Err(Error::solver(
                    format!("NaN residual at iteration {iterations}"),
                    Some(LinearSolveReport {
                        iterations,
                        final_residual_norm: r_norm,
                        converged: false,
                    }),
                ));
            }
            if r_norm <= target {
                claimed = true;
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }

        true_residual(&x, &mut r, &mut q);
        if meanzero.is_some() {
            project_euclidean(&mut r);
        }
        r_norm = norm2(&r);
        if r_norm <= target {
            return finish(x, iterations, r_norm, true);
        }
        if !claimed || iterations >= max_iter {
            return finish(x, iterations, r_norm, false);
        }
    }
}

/// Solve `A x = b` for symmetric positive (semi-)definite `A`.
///
/// A non-converged solve is returned as `Ok` with `converged == false`;
/// a NaN residual is an error.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    check_square(a, b)?;
    pcg(a, b, None, opts, None)
}

/// CG for a singular system whose nullspace is spanned by the constant vector.
///
/// The right-hand side is projected orthogonal to constants and every iterate
/// is shifted to zero weighted mean, so the result is the unique solution with
/// `sum(w_i x_i) == 0`.
pub fn cg_solve_meanzero(
    a: &SparseMatrix,
    b: &[f64],
    weights: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    cg_solve_meanzero_from(a, b, weights, None, opts)
}

/// [`cg_solve_meanzero`] started from an initial guess.
pub fn cg_solve_meanzero_from(
    a: &SparseMatrix,
    b: &[f64],
    weights: &[f64],
    guess: Option<&[f64]>,
    opts: &CgOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    check_square(a, b)?;
    if weights.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidInput("mean-zero weights must be positive".into()));
    }
    let mut b_proj = b.to_vec();
    project_euclidean(&mut b_proj);
    let mz = MeanZero {
        weights,
        weight_sum: weights.iter().sum(),
    };
    let (mut x, report) = pcg(a, &b_proj, guess, opts, Some(&mz))?;
    mz.project_weighted(&mut x);
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Gaussian elimination with partial pivoting; test oracle only.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn spmv_examples() {
        assert_eq!(
            SparseMatrix::identity(3).spmv(&[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            SparseMatrix::from_diagonal(&[2.0, 3.0]).spmv(&[1.0, 1.0]).unwrap(),
            vec![2.0, 3.0]
        );
        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(a.spmv(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn spmv_rejects_bad_length() {
        let a = SparseMatrix::identity(3);
        assert!(matches!(
            a.spmv(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn from_csr_validates() {
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn cg_identity_one_iteration() {
        let (x, rep) = cg_solve(
            &SparseMatrix::identity(2),
            &[5.0, 7.0],
            &CgOptions::new(1e-12, 100, Preconditioner::None),
        )
        .unwrap();
        assert_eq!(x, vec![5.0, 7.0]);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn cg_diagonal_and_2x2() {
        let (x, _) = cg_solve(
            &SparseMatrix::from_diagonal(&[4.0, 9.0]),
            &[4.0, 9.0],
            &CgOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);

        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        for pc in [Preconditioner::None, Preconditioner::Jacobi] {
            let (x, rep) = cg_solve(&a, &[3.0, 3.0], &CgOptions::new(1e-12, 10, pc)).unwrap();
            assert!(rep.converged);
            assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let a = SparseMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ])
        .unwrap();
        let (_, rep) =
            cg_solve(&a, &[1.0, 2.0, 3.0], &CgOptions::new(1e-14, 1, Preconditioner::None)).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn cg_nan_is_failure() {
        let a = SparseMatrix::from_diagonal(&[1.0, f64::NAN]);
        assert!(matches!(
            cg_solve(&a, &[1.0, 1.0], &CgOptions::new(1e-10, 10, Preconditioner::None)),
            Err(Error::Solver { .. })
        ));
    }

    fn three_cycle() -> SparseMatrix {
        SparseMatrix::from_dense(&[
            vec![2.0, -1.0, -1.0],
            vec![-1.0, 2.0, -1.0],
            vec![-1.0, -1.0, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn meanzero_three_cycle_matches_pseudoinverse() {
        // L = 3I - J, so on the mean-zero subspace L^+ b = b / 3.
        let b = [1.0, -1.0, 0.0];
        let (x, rep) =
            cg_solve_meanzero(&three_cycle(), &b, &[1.0; 3], &CgOptions::default()).unwrap();
        assert!(rep.converged);
        for (xi, bi) in x.iter().zip(b) {
            assert_relative_eq!(*xi, bi / 3.0, epsilon = 1e-12);
        }
        let s: f64 = x.iter().sum();
        assert!(s.abs() <= 1e-10 * norm2(&x));
    }

    #[test]
    fn meanzero_constant_load_gives_zero() {
        let (x, rep) =
            cg_solve_meanzero(&three_cycle(), &[2.0; 3], &[1.0; 3], &CgOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn meanzero_rejects_bad_weights() {
        assert!(cg_solve_meanzero(&three_cycle(), &[1.0, -1.0, 0.0], &[1.0, 0.0, 1.0], &CgOptions::default()).is_err());
    }

    fn ring_laplacian(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            t.push((i, i, 1.0));
            t.push((j, j, 1.0));
            t.push((i, j, -1.0));
            t.push((j, i, -1.0));
        }
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    proptest! {
        #[test]
        fn cg_matches_dense_oracle(seed in proptest::collection::vec(-1.0f64..1.0, 25), rhs in proptest::collection::vec(-5.0f64..5.0, 5)) {
            let mut dense = vec![vec![0.0; 5]; 5];
            for i in 0..5 {
                for j in 0..=i {
                    let v = seed[i * 5 + j];
                    dense[i][j] = v;
                    dense[j][i] = v;
                }
            }
            for i in 0..5 {
                let off: f64 = (0..5).filter(|&j| j != i).map(|j| dense[i][j].abs()).sum();
                dense[i][i] = off + 1.0 + seed[i * 5 + i].abs();
            }
            let a = SparseMatrix::from_dense(&dense).unwrap();
            let (x, rep) = cg_solve(&a, &rhs, &CgOptions::new(1e-14, 200, Preconditioner::Jacobi)).unwrap();
            prop_assert!(rep.converged);
            let oracle = dense_solve(dense, rhs.clone());
            let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            for (xi, oi) in x.iter().zip(&oracle) {
                prop_assert!((xi - oi).abs() <= 1e-8 * scale);
            }
        }

        #[test]
        fn meanzero_invariant_under_constant_shift_of_guess(
            b in proptest::collection::vec(-1.0f64..1.0, 8),
            guess in proptest::collection::vec(-1.0f64..1.0, 8),
            shift in -100.0f64..100.0,
        ) {
            let a = ring_laplacian(8);
            let w = vec![1.0; 8];
            let opts = CgOptions::default();
            let shifted: Vec<f64> = guess.iter().map(|g| g + shift).collect();
            let (x1, _) = cg_solve_meanzero_from(&a, &b, &w, Some(&guess), &opts).unwrap();
            let (x2, _) = cg_solve_meanzero_from(&a, &b, &w, Some(&shifted), &opts).unwrap();
            for (u, v) in x1.iter().zip(&x2) {
                prop_assert!((u - v).abs() <= 1e-10);
            }
            let s: f64 = x1.iter().sum();
            prop_assert!(s.abs() <= 1e-10 * norm2(&x1).max(1e-300));
        }
    }

    #[test]
    fn cg_is_bitwise_deterministic() {
        let a = ring_laplacian(50);
        let mut b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        project_euclidean(&mut b);
        let w = vec![1.0; 50];
        let r1 = cg_solve_meanzero(&a, &b, &w, &CgOptions::default()).unwrap();
        let r2 = std::thread::spawn(move || cg_solve_meanzero(&a, &b, &w, &CgOptions::default()).unwrap())
            .join()
            .unwrap();
        assert_eq!(r1.0, r2.0);
    }
}
