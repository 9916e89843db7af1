//! Sparse propagation operators in compressed row form.
//!
//! A [`PropagationOperator`] wraps a CSR matrix together with a cached
//! power-iteration estimate of its spectral norm and a provenance flag that
//! records how the operator was produced (raw adjacency, symmetric
//! normalization, spectral clipping, or soft adversarial perturbation).

use serde::{Deserialize, Serialize};

use crate::dense::Mat;
use crate::graph::SparseGraph;
use crate::spectral::{self, PowerIterConfig};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are
    /// summed; rows are sorted by column index for deterministic iteration.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_rows];
        for &(r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            per_row[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last_col = usize::MAX;
            for &(c, v) in row.iter() {
                if c == last_col {
                    let n = values.len();
                    values[n - 1] += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last_col = c;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
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

    /// (column, value) pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn iter_coords(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = A^T x.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        y.fill(0.0);
        for i in 0..self.n_rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
    }

    /// Y = A X for a dense right-hand side, row-parallel when `threads > 1`.
    /// Each output row only depends on its own input rows, so the parallel
    /// split is deterministic.
    pub fn matmat(&self, x: &Mat, threads: usize) -> Mat {
        assert_eq!(x.rows(), self.n_cols, "matmat shape mismatch");
        let mut out = Mat::zeros(self.n_rows, x.cols());
        if threads <= 1 || self.n_rows < 64 {
            for i in 0..self.n_rows {
                self.matmat_row(x, &mut out, i);
            }
            return out;
        }
        let cols = x.cols();
        let chunk = self.n_rows.div_ceil(threads);
        let rows: Vec<std::ops::Range<usize>> = (0..threads)
            .map(|t| (t * chunk).min(self.n_rows)..((t + 1) * chunk).min(self.n_rows))
            .collect();
        let mut buffers: Vec<Mat> = rows
            .iter()
            .map(|r| Mat::zeros(r.len(), cols))
            .collect();
        std::thread::scope(|scope| {
            for (range, buf) in rows.iter().zip(buffers.iter_mut()) {
                let me = &*self;
                let xr = &*x;
                let range = range.clone();
                scope.spawn(move || {
                    for (local, i) in range.enumerate() {
                        let dst = buf.row_mut(local);
                        for (j, v) in me.row(i) {
                            let src = xr.row(j);
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += v * s;
                            }
                        }
                    }
                });
            }
        });
        for (range, buf) in rows.iter().zip(buffers.iter()) {
            for (local, i) in range.clone().enumerate() {
                out.row_mut(i).copy_from_slice(buf.row(local));
            }
        }
        out
    }

    fn matmat_row(&self, x: &Mat, out: &mut Mat, i: usize) {
        for (j, v) in self.row(i) {
            let src = x.row(j);
            let dst = out.row_mut(i);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Entrywise difference as a new CSR matrix.
    pub fn sub(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut triplets: Vec<(usize, usize, f64)> = self.iter_coords().collect();
        triplets.extend(other.iter_coords().map(|(i, j, v)| (i, j, -v)));
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &triplets)
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter_coords() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let d = self.to_dense();
        for i in 0..self.n_rows {
            for j in (i + 1)..self.n_cols {
                if (d[(i, j)] - d[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// How a propagation operator was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    Normalized,
    Clipped,
    Perturbed,
    PerturbedRenormalized,
}

/// A (possibly clipped or soft-perturbed) propagation operator with a cached
/// spectral-norm estimate.
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    pub values: CsrMatrix,
    pub norm_estimate: f64,
    pub provenance: Provenance,
    pub self_loops: bool,
}

impl PropagationOperator {
    pub fn n(&self) -> usize {
        self.values.n_rows()
    }

    /// Wrap a CSR matrix, estimating its spectral norm with the given
    /// power-iteration profile.
    pub fn from_csr(
        values: CsrMatrix,
        provenance: Provenance,
        self_loops: bool,
        pi: &PowerIterConfig,
    ) -> Self {
        let norm_estimate = spectral::power_iteration_csr(&values, pi);
        PropagationOperator {
            values,
            norm_estimate,
            provenance,
            self_loops,
        }
    }

    /// Neighborhood support: per-row column indices with |value| above `tol`,
    /// excluding the diagonal. Used to derive attention neighborhoods from
    /// soft operators.
    pub fn support(&self, tol: f64) -> Vec<Vec<usize>> {
        (0..self.n())
            .map(|i| {
                self.values
                    .row(i)
                    .filter(|&(j, v)| j != i && v.abs() > tol)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect()
    }
}

/// Symmetric degree normalization `D^{-1/2} (A + I) D^{-1/2}` (or without the
/// self-loop term). Isolated nodes keep an all-zero row.
pub fn normalize_adjacency(g: &SparseGraph, with_self_loops: bool) -> PropagationOperator {
    let n = g.n_nodes();
    let mut degree = vec![0.0f64; n];
    for &(i, j) in g.edges() {
        degree[i] += 1.0;
        degree[j] += 1.0;
    }
    if with_self_loops {
        for d in &mut degree {
            *d += 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(2 * g.n_edges() + n);
    for &(i, j) in g.edges() {
        let w = inv_sqrt[i] * inv_sqrt[j];
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    if with_self_loops {
        for i in 0..n {
            let w = inv_sqrt[i] * inv_sqrt[i];
            if w > 0.0 {
                triplets.push((i, i, w));
            }
        }
    }
    let csr = CsrMatrix::from_triplets(n, n, &triplets);
    PropagationOperator::from_csr(
        csr,
        Provenance::Normalized,
        with_self_loops,
        &PowerIterConfig::oracle(),
    )
}

/// Raw binary adjacency as an operator (no normalization, no self-loops).
pub fn adjacency_operator(g: &SparseGraph) -> PropagationOperator {
    let n = g.n_nodes();
    let mut triplets = Vec::with_capacity(2 * g.n_edges());
    for &(i, j) in g.edges() {
        triplets.push((i, j, 1.0));
        triplets.push((j, i, 1.0));
    }
    let csr = CsrMatrix::from_triplets(n, n, &triplets);
    PropagationOperator::from_csr(csr, Provenance::Raw, false, &PowerIterConfig::oracle())
}
