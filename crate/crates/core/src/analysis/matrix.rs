use ndarray::Array2;
use num_rational::Ratio;
use serde::Serialize;

use crate::graph::NodeSet;
use crate::protocol::ExecutionTrace;

/// The row-stochastic matrix `A[t]` of one iteration, stored sparsely with
/// exact rational weights and their `f64` images.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMatrix {
    pub t: u64,
    rows: Vec<Vec<(usize, Ratio<i64>)>>,
    rows_f64: Vec<Vec<(usize, f64)>>,
}

impl UpdateMatrix {
    pub fn from_rows(t: u64, rows: Vec<Vec<(usize, Ratio<i64>)>>) -> Self {
        let rows_f64 = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&(j, w)| (j, *w.numer() as f64 / *w.denom() as f64))
                    .collect()
            })
            .collect();
        Self { t, rows, rows_f64 }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(0, (0..n).map(|i| vec![(i, Ratio::from_integer(1))]).collect())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, Ratio<i64>)] {
        &self.rows[i]
    }

    pub fn row_f64(&self, i: usize) -> &[(usize, f64)] {
        &self.rows_f64[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> Ratio<i64> {
        self.rows[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(Ratio::from_integer(0), |&(_, w)| w)
    }

    /// Columns with a positive entry in row `i`.
    pub fn support(&self, i: usize) -> NodeSet {
        self.rows[i].iter().map(|&(j, _)| j).collect()
    }

    pub fn supports(&self) -> Vec<NodeSet> {
        (0..self.n()).map(|i| self.support(i)).collect()
    }

    /// Every row sums to exactly one.
    pub fn is_row_stochastic(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.iter().map(|&(_, w)| w).sum::<Ratio<i64>>() == Ratio::from_integer(1))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for (i, r) in self.rows_f64.iter().enumerate() {
            for &(j, w) in r {
                a[[i, j]] = w;
            }
        }
        a
    }
}

/// Builds `A[t]`: agents that complete iteration `t` weight themselves and
/// their quorum equally by `1/(|I_i| − f + 1)`; every other row is a unit row.
pub fn build_update_matrix(trace: &ExecutionTrace, t: u64) -> UpdateMatrix {
    let n = trace.n();
    let step = trace.step(t);
    let rows = (0..n)
        .map(|i| match &step.agents[i] {
            Some(a) if a.alive => {
                let q = a.quorum.as_deref().unwrap_or(&[]);
                let w = Ratio::new(1, (trace.graph.in_degree(i) - trace.f + 1) as i64);
                let mut cols: Vec<usize> = q.iter().copied().chain(std::iter::once(i)).collect();
                cols.sort_unstable();
                cols.into_iter().map(|j| (j, w)).collect()
            }
            _ => vec![(i, Ratio::from_integer(1))],
        })
        .collect();
    UpdateMatrix::from_rows(t, rows)
}

/// `A[1], …, A[T]`; index `t - 1` holds `A[t]`.
pub fn build_update_matrices(trace: &ExecutionTrace) -> Vec<UpdateMatrix> {
    (1..=trace.horizon()).map(|t| build_update_matrix(trace, t)).collect()
}

/// `A · Φ`.
pub fn left_multiply(a: &UpdateMatrix, phi: &Array2<f64>) -> Array2<f64> {
    let n = a.n();
    let mut out = Array2::zeros((n, phi.ncols()));
    for i in 0..n {
        let mut row = out.row_mut(i);
        for &(j, w) in a.row_f64(i) {
            row.scaled_add(w, &phi.row(j));
        }
    }
    out
}

/// `Φ · A`.
pub fn right_multiply(phi: &Array2<f64>, a: &UpdateMatrix) -> Array2<f64> {
    let n = a.n();
    let mut out = Array2::zeros((phi.nrows(), n));
    for j in 0..n {
        let col = phi.column(j);
        for &(k, w) in a.row_f64(j) {
            out.column_mut(k).scaled_add(w, &col);
        }
    }
    out
}

/// `Φ(t, r) = A[t] ⋯ A[r]`, with `Φ(t, t + 1) = I`.
pub fn backward_product(matrices: &[UpdateMatrix], t: u64, r: u64) -> Array2<f64> {
    assert!(r >= 1 && r <= t + 1, "backward product needs 1 <= r <= t + 1");
    let n = matrices.first().map_or(0, UpdateMatrix::n);
    let mut phi = Array2::eye(n);
    for s in r..=t {
        phi = left_multiply(&matrices[(s - 1) as usize], &phi);
    }
    phi
}

/// Support of `A[t] ⋯ A[r]` computed with booleans only.
pub fn support_product(matrices: &[UpdateMatrix], t: u64, r: u64) -> Vec<NodeSet> {
    let n = matrices.first().map_or(0, UpdateMatrix::n);
    let mut sup: Vec<NodeSet> = (0..n).map(NodeSet::singleton).collect();
    for s in r..=t {
        let a = &matrices[(s - 1) as usize];
        sup = (0..n)
            .map(|i| a.support(i).iter().fold(NodeSet::EMPTY, |acc, j| acc.union(sup[j])))
            .collect();
    }
    sup
}

/// Ergodic coefficients of a matrix restricted to row pairs in a node set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicCoefficients {
    /// Largest column-wise disagreement between two restricted rows.
    pub delta: f64,
    /// Smallest overlap `Σ_j min(Φ_ij, Φ_i'j)` between two restricted rows.
    pub eta: f64,
}

pub fn ergodic_coefficients(phi: &Array2<f64>, rows: NodeSet) -> ErgodicCoefficients {
    let idx: Vec<usize> = rows.iter().collect();
    let mut delta = 0.0f64;
    let mut eta = 1.0f64;
    for (a, &i) in idx.iter().enumerate() {
        for &k in &idx[a..] {
            let (ri, rk) = (phi.row(i), phi.row(k));
            let mut overlap = 0.0;
            for (x, y) in ri.iter().zip(rk.iter()) {
                delta = delta.max((x - y).abs());
                overlap += x.min(*y);
            }
            eta = eta.min(overlap);
        }
    }
    ErgodicCoefficients { delta, eta }
}
