//! Sparse symmetric linear algebra: CSR storage, matrix-vector products,
//! and a direct Cholesky factorization meant to be computed once per time
//! loop and reused for every step.
//!
//! The factorization is an up-looking sparse Cholesky (elimination tree +
//! per-row reach) over a reverse Cuthill-McKee permutation. A Jacobi
//! preconditioned conjugate gradient is provided as a memory safety valve
//! for meshes too large to factor directly.

use crate::exec::{self, ExecMode};
use crate::{invalid_argument, Error, Result};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of Cholesky factorizations performed by this process so far.
/// Used by tests to assert factor reuse across a time loop.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.load(AtomicOrdering::Relaxed)
}

/// Row-compressed sparse matrix with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Incremental COO-style builder; duplicate entries are summed in a
/// deterministic (column-sorted, insertion-stable) order.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        SparseBuilder {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.rows[i].push((j, v));
    }

    pub fn build(mut self) -> SparseMatrix {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut self.rows {
            row.sort_by_key(|&(j, _)| j);
            let mut iter = row.iter().peekable();
            while let Some(&(j, v)) = iter.next() {
                let mut sum = v;
                while let Some(&&(j2, v2)) = iter.peek() {
                    if j2 == j {
                        sum += v2;
                        iter.next();
                    } else {
                        break;
                    }
                }
                col_idx.push(j);
                values.push(sum);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = SparseBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    pub fn zeros(n: usize) -> Self {
        SparseMatrix {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Entries of one row as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&j, &v)| (j, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    /// Exact entrywise symmetry check.
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if self.get(j, i) != v {
                    return false;
                }
            }
        }
        true
    }

    pub fn spmv(&self, x: &[f64]) -> Vec<f64> {
        self.spmv_with(ExecMode::auto(), x)
    }

    /// `A x` with an explicit execution mode; each row is reduced
    /// sequentially, so results are identical in both modes.
    pub fn spmv_with(&self, mode: ExecMode, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "spmv dimension mismatch");
        exec::map_collect(mode, self.n, |i| {
            let lo = self.row_ptr[i];
            let hi = self.row_ptr[i + 1];
            let mut acc = 0.0;
            for p in lo..hi {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            acc
        })
    }

    /// Quadratic form `x' A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let ax = self.spmv(x);
        dot(x, &ax)
    }

    /// `self + scale * other`, merging sparsity patterns.
    pub fn add_scaled(&self, scale: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.n, other.n);
        let mut b = SparseBuilder::new(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.add(i, j, v);
            }
            for (j, v) in other.row(i) {
                b.add(i, j, scale * v);
            }
        }
        b.build()
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut m = self.clone();
        for v in &mut m.values {
            *v *= s;
        }
        m
    }

    pub fn to_dense(&self) -> crate::dense::DenseMatrix {
        let mut d = crate::dense::DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fill-reducing ordering used by [`factorize_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillOrdering {
    /// Keep the input numbering.
    Natural,
    /// Reverse Cuthill-McKee over the matrix graph.
    ReverseCuthillMcKee,
}

/// Reusable sparse Cholesky factorization `P A P' = L L'`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Factor a symmetric positive definite matrix with the default
/// (reverse Cuthill-McKee) ordering.
pub fn factorize(a: &SparseMatrix) -> Result<CholeskyFactor> {
    factorize_with(a, FillOrdering::ReverseCuthillMcKee)
}

pub fn factorize_with(a: &SparseMatrix, ordering: FillOrdering) -> Result<CholeskyFactor> {
    if !a.is_symmetric() {
        return invalid_argument("factorize requires an exactly symmetric matrix");
    }
    FACTORIZATIONS.fetch_add(1, AtomicOrdering::Relaxed);

    let n = a.dim();
    let perm = match ordering {
        FillOrdering::Natural => (0..n).collect::<Vec<_>>(),
        FillOrdering::ReverseCuthillMcKee => reverse_cuthill_mckee(a),
    };
    let mut iperm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }

    // Permuted lower triangle in CSR (row k holds columns <= k, sorted).
    let mut lower_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for old_i in 0..n {
        let i = iperm[old_i];
        for (old_j, v) in a.row(old_i) {
            let j = iperm[old_j];
            if j <= i {
                lower_rows[i].push((j, v));
            }
        }
    }
    for row in &mut lower_rows {
        row.sort_by_key(|&(j, _)| j);
    }

    // Elimination tree from the strictly-lower pattern.
    const NONE: usize = usize::MAX;
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &(j, _) in &lower_rows[k] {
            let mut i = j;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }

    // Row reach in the elimination tree, children before ancestors.
    let mut mark = vec![NONE; n];
    let mut stack = vec![0usize; n];
    let mut reach =
        |k: usize, mark: &mut Vec<usize>, out: &mut Vec<usize>, row: &[(usize, f64)]| {
            out.clear();
            mark[k] = k;
            for &(j, _) in row {
                if j == k {
                    continue;
                }
                let mut len = 0;
                let mut i = j;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                // Splice this root-ward path in front of the already-collected
                // reach so the whole list stays topologically ordered
                // (children before ancestors).
                let tail = out.len();
                out.extend_from_slice(&stack[..len]);
                out[..tail + len].rotate_right(len);
            }
        };

    // Symbolic pass: column counts.
    let mut counts = vec![1usize; n];
    let mut pattern = Vec::new();
    for k in 0..n {
        reach(k, &mut mark, &mut pattern, &lower_rows[k]);
        for &j in &pattern {
            counts[j] += 1;
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for k in 0..n {
        col_ptr[k + 1] = col_ptr[k] + counts[k];
    }
    let nnz = col_ptr[n];
    let mut row_idx = vec![0u32; nnz];
    let mut values = vec![0.0f64; nnz];
    let mut col_len = vec![0usize; n];

    // Numeric pass, up-looking by rows.
    let mut mark = vec![NONE; n];
    let mut x = vec![0.0f64; n];
    for k in 0..n {
        reach(k, &mut mark, &mut pattern, &lower_rows[k]);
        let mut d = 0.0;
        for &(j, v) in &lower_rows[k] {
            if j == k {
                d = v;
            } else {
                x[j] = v;
            }
        }
        for &j in &pattern {
            let pj = col_ptr[j];
            let lkj = x[j] / values[pj];
            x[j] = 0.0;
            for p in pj + 1..pj + col_len[j] {
                x[row_idx[p] as usize] -= values[p] * lkj;
            }
            d -= lkj * lkj;
            let dst = pj + col_len[j];
            row_idx[dst] = k as u32;
            values[dst] = lkj;
            col_len[j] += 1;
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotSpd {
                col: perm[k],
                pivot: d,
            });
        }
        let pk = col_ptr[k];
        row_idx[pk] = k as u32;
        values[pk] = d.sqrt();
        col_len[k] = 1;
    }

    Ok(CholeskyFactor {
        n,
        perm,
        col_ptr,
        row_idx,
        values,
    })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = rhs` with the stored factorization.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let mut y: Vec<f64> = (0..self.n).map(|new| rhs[self.perm[new]]).collect();
        // Forward substitution L y = P rhs (columns of L are row-sorted,
        // diagonal first).
        for j in 0..self.n {
            let pj = self.col_ptr[j];
            let yj = y[j] / self.values[pj];
            y[j] = yj;
            for p in pj + 1..self.col_ptr[j + 1] {
                y[self.row_idx[p] as usize] -= self.values[p] * yj;
            }
        }
        // Backward substitution L' z = y.
        for j in (0..self.n).rev() {
            let pj = self.col_ptr[j];
            let mut acc = y[j];
            for p in pj + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * y[self.row_idx[p] as usize];
            }
            y[j] = acc / self.values[pj];
        }
        let mut x = vec![0.0; self.n];
        for new in 0..self.n {
            x[self.perm[new]] = y[new];
        }
        Ok(x)
    }

    /// Dense lower factor in the permuted ordering (tests only; small n).
    pub fn factor_to_dense(&self) -> crate::dense::DenseMatrix {
        let mut l = crate::dense::DenseMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                l[(self.row_idx[p] as usize, j)] = self.values[p];
            }
        }
        l
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

/// Jacobi-preconditioned conjugate gradient fallback for very large
/// systems: relative tolerance 1e-12, at most `10 * dim` iterations.
pub fn solve_pcg(a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: rhs.len(),
        });
    }
    let n = a.dim();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d <= 0.0 {
                0.0
            } else {
                1.0 / d
            }
        })
        .collect();
    let norm_b = dot(rhs, rhs).sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let tol = 1e-12 * norm_b;
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..10 * n {
        let ap = a.spmv(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol {
            return Ok(x);
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
    Err(Error::Numerical(format!(
        "conjugate gradient did not reach 1e-12 relative residual in {} iterations",
        10 * n
    )))
}

/// Reverse Cuthill-McKee permutation (`perm[new] = old`) over the matrix
/// graph, breadth-first from a pseudo-peripheral vertex, neighbors visited
/// by increasing degree.
fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n)
        .map(|i| a.row(i).filter(|&(j, _)| j != i).count())
        .collect();

    // BFS appending to `order`; returns (depth, start index of last level).
    let bfs = |start: usize, visited: &mut Vec<bool>, order: &mut Vec<usize>| -> (usize, usize) {
        order.push(start);
        visited[start] = true;
        let mut level_start = order.len() - 1;
        let mut depth = 0;
        let mut last_level = level_start;
        while level_start < order.len() {
            let level_end = order.len();
            for idx in level_start..level_end {
                let v = order[idx];
                let mut nbrs: Vec<usize> = a
                    .row(v)
                    .filter(|&(j, _)| j != v && !visited[j])
                    .map(|(j, _)| j)
                    .collect();
                nbrs.sort_by_key(|&j| (degree[j], j));
                for j in nbrs {
                    if !visited[j] {
                        visited[j] = true;
                        order.push(j);
                    }
                }
            }
            last_level = level_start;
            level_start = level_end;
            depth += 1;
        }
        (depth, last_level)
    };

    let mut perm = Vec::with_capacity(n);
    let mut done = vec![false; n];
    loop {
        let Some(seed) = (0..n).filter(|&i| !done[i]).min_by_key(|&i| (degree[i], i)) else {
            break;
        };
        // A few BFS rounds toward a pseudo-peripheral vertex: restart from
        // the min-degree vertex of the deepest level while depth grows.
        let mut start = seed;
        let mut best_depth = 0;
        for _ in 0..4 {
            let mut visited = done.clone();
            let mut order = Vec::new();
            let (depth, last_level) = bfs(start, &mut visited, &mut order);
            if depth <= best_depth {
                break;
            }
            best_depth = depth;
            start = *order[last_level..]
                .iter()
                .min_by_key(|&&v| (degree[v], v))
                .unwrap();
        }
        let before = perm.len();
        bfs(start, &mut done, &mut perm);
        perm[before..].reverse();
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_dense(rows: &[&[f64]]) -> SparseMatrix {
        let n = rows.len();
        let mut b = SparseBuilder::new(n);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    b.add(i, j, v);
                }
            }
        }
        b.build()
    }

    /// Test-local dense Gaussian elimination with partial pivoting,
    /// independent of the library solvers.
    fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut rhs = b.to_vec();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
                .unwrap();
            m.swap(k, piv);
            rhs.swap(k, piv);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                rhs[i] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = rhs[i];
            for j in i + 1..n {
                acc -= m[i][j] * x[j];
            }
            x[i] = acc / m[i][i];
        }
        x
    }

    fn random_spd(n: usize, seed: u64) -> (SparseMatrix, Vec<Vec<f64>>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                dense[i][j] = v;
                dense[j][i] = v;
            }
            dense[i][i] += n as f64;
        }
        let mut b = SparseBuilder::new(n);
        for i in 0..n {
            for j in 0..n {
                b.add(i, j, dense[i][j]);
            }
        }
        (b.build(), dense)
    }

    #[test]
    fn identity_factors_to_identity() {
        let a = SparseMatrix::identity(5);
        for ordering in [FillOrdering::Natural, FillOrdering::ReverseCuthillMcKee] {
            let f = factorize_with(&a, ordering).unwrap();
            let l = f.factor_to_dense();
            for i in 0..5 {
                for j in 0..5 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(l[(i, j)], expect);
                }
            }
        }
    }

    #[test]
    fn hand_cholesky_2x2() {
        let a = from_dense(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = factorize_with(&a, FillOrdering::Natural).unwrap();
        let l = f.factor_to_dense();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn reconstruction_matches_input() {
        let (a, dense) = random_spd(40, 7);
        let f = factorize(&a).unwrap();
        let l = f.factor_to_dense();
        // P A P' = L L' -> check A[perm[i]][perm[j]] = sum_k L[i,k] L[j,k].
        let perm = f.permutation();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..40 {
            for j in 0..40 {
                let mut rec = 0.0;
                for k in 0..=i.min(j) {
                    rec += l[(i, k)] * l[(j, k)];
                }
                let aij = dense[perm[i]][perm[j]];
                num += (rec - aij) * (rec - aij);
                den += aij * aij;
            }
        }
        assert!((num / den).sqrt() < 1e-12);
    }

    #[test]
    fn solve_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let (a, dense) = random_spd(50, 42);
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = factorize(&a).unwrap();
        let x = f.solve(&b).unwrap();
        let y = gauss_solve(&dense, &b);
        for i in 0..50 {
            assert!((x[i] - y[i]).abs() < 1e-10, "{} vs {}", x[i], y[i]);
        }
    }

    #[test]
    fn solve_trivial_cases() {
        let a = SparseMatrix::identity(4);
        let f = factorize(&a).unwrap();
        assert_eq!(f.solve(&[0.0; 4]).unwrap(), vec![0.0; 4]);
        let rhs = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(f.solve(&rhs).unwrap(), rhs.to_vec());
        assert!(matches!(
            f.solve(&[1.0; 3]),
            Err(Error::DimensionMismatch {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn mesh_operator_roundtrip() {
        use crate::assembly::{assemble_mass, assemble_stiffness, DofMap};
        use crate::mesh::{build_mesh, BoundaryLayout, InterfaceSpec, Subdomain};
        use rand::{Rng, SeedableRng};
        let mesh = build_mesh(
            3,
            InterfaceSpec::Horizontal { c: 0.5 },
            BoundaryLayout::NeumannSides,
        )
        .unwrap();
        let dofs = DofMap::new(&mesh, Subdomain::Fluid);
        let a = assemble_mass(&mesh, &dofs)
            .add_scaled(1.0, &assemble_stiffness(&mesh, &dofs, 1.0).unwrap());
        let f = factorize(&a).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let x: Vec<f64> = (0..a.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = f.solve(&a.spmv(&x)).unwrap();
        for i in 0..a.dim() {
            assert!((back[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = from_dense(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match factorize_with(&a, FillOrdering::Natural) {
            Err(Error::NotSpd { .. }) => {}
            other => panic!("expected NotSpd, got {other:?}"),
        }
        let asym = from_dense(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(factorize(&asym).is_err());
    }

    #[test]
    fn spmv_cases() {
        let a = SparseMatrix::identity(3);
        assert_eq!(a.spmv(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        let z = SparseMatrix::zeros(3);
        assert_eq!(z.spmv(&[1.0, 2.0, 3.0]), vec![0.0, 0.0, 0.0]);

        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let n = 20;
        let mut b = SparseBuilder::new(n);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if rng.gen_bool(0.3) {
                    let v = rng.gen_range(-2.0..2.0);
                    b.add(i, j, v);
                    dense[i][j] = v;
                }
            }
        }
        let a = b.build();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = a.spmv(&x);
        for i in 0..n {
            let exact: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            assert!((y[i] - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn pcg_matches_direct() {
        use crate::assembly::{assemble_mass, assemble_stiffness, DofMap};
        use crate::mesh::{build_mesh, BoundaryLayout, InterfaceSpec, Subdomain};
        let mesh = build_mesh(
            8,
            InterfaceSpec::Horizontal { c: 0.5 },
            BoundaryLayout::NeumannSides,
        )
        .unwrap();
        let dofs = DofMap::new(&mesh, Subdomain::Solid);
        let a = assemble_mass(&mesh, &dofs)
            .scale(32.0)
            .add_scaled(1.0, &assemble_stiffness(&mesh, &dofs, 1.0).unwrap());
        let rhs: Vec<f64> = (0..a.dim()).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let direct = factorize(&a).unwrap().solve(&rhs).unwrap();
        let iterative = solve_pcg(&a, &rhs).unwrap();
        let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..a.dim() {
            assert!((direct[i] - iterative[i]).abs() < 1e-9 * scale.max(1.0));
        }
        assert_eq!(
            solve_pcg(&a, &vec![0.0; a.dim()]).unwrap(),
            vec![0.0; a.dim()]
        );
        assert!(solve_pcg(&a, &[1.0]).is_err());
    }

    #[test]
    fn builder_sums_duplicates() {
        let mut b = SparseBuilder::new(2);
        b.add(0, 1, 1.5);
        b.add(0, 1, 2.5);
        b.add(1, 0, 4.0);
        b.add(1, 0, 0.0);
        let a = b.build();
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert!(a.is_symmetric());
        assert_eq!(a.nnz(), 2);
    }
}
