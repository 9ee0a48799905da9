//! Graph Laplacian operators in compressed sparse row form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Mat;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `L = D - A`
    Combinatorial,
    /// `N = D^{-1/2} L D^{-1/2}`
    Normalized,
    /// `I + L`
    CombinatorialSelfloop,
    /// `I + N`
    NormalizedSelfloop,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Combinatorial,
        Variant::Normalized,
        Variant::CombinatorialSelfloop,
        Variant::NormalizedSelfloop,
    ];

    pub fn from_flags(normalized: bool, self_loops: bool) -> Variant {
        match (normalized, self_loops) {
            (false, false) => Variant::Combinatorial,
            (true, false) => Variant::Normalized,
            (false, true) => Variant::CombinatorialSelfloop,
            (true, true) => Variant::NormalizedSelfloop,
        }
    }

    pub fn is_normalized(self) -> bool {
        matches!(self, Variant::Normalized | Variant::NormalizedSelfloop)
    }

    pub fn has_selfloops(self) -> bool {
        matches!(
            self,
            Variant::CombinatorialSelfloop | Variant::NormalizedSelfloop
        )
    }
}

/// Symmetric positive semi-definite operator. Column indices are sorted
/// within each row, so products accumulate in a fixed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianOperator {
    variant: Variant,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    max_eigenvalue_bound: f64,
    isolated: Vec<usize>,
}

/// Build the requested operator. Isolated vertices under a normalized variant
/// get a zero row (their signal stays constant) and a logged warning.
pub fn build_operator(graph: &Graph, variant: Variant) -> LaplacianOperator {
    let adj = graph.adjacency();
    let n = graph.num_vertices();
    let deg: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
    let isolated: Vec<usize> = (0..n).filter(|&v| adj[v].is_empty()).collect();
    if variant == Variant::Normalized && !isolated.is_empty() {
        log::warn!(
            "{} isolated vertices under the normalized operator; their rows are zero",
            isolated.len()
        );
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let shift = if variant.has_selfloops() { 1.0 } else { 0.0 };

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(n + 2 * graph.edges().len());
    let mut values = Vec::with_capacity(n + 2 * graph.edges().len());
    row_ptr.push(0);
    for i in 0..n {
        let diag = if variant.is_normalized() {
            if deg[i] > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            deg[i]
        } + shift;
        let mut diag_done = false;
        for &j in &adj[i] {
            if !diag_done && j > i {
                col_idx.push(i);
                values.push(diag);
                diag_done = true;
            }
            let w = if variant.is_normalized() {
                -inv_sqrt[i] * inv_sqrt[j]
            } else {
                -1.0
            };
            col_idx.push(j);
            values.push(w);
        }
        if !diag_done {
            col_idx.push(i);
            values.push(diag);
        }
        row_ptr.push(col_idx.len());
    }

    let max_deg = deg.iter().cloned().fold(0.0, f64::max);
    let base = if variant.is_normalized() { 2.0 } else { 2.0 * max_deg };
    LaplacianOperator {
        variant,
        n,
        row_ptr,
        col_idx,
        values,
        max_eigenvalue_bound: base + shift,
        isolated,
    }
}

/// As [`build_operator`] but refuses isolated vertices under the plain
/// normalized variant.
pub fn build_operator_strict(graph: &Graph, variant: Variant) -> Result<LaplacianOperator> {
    let op = build_operator(graph, variant);
    if variant == Variant::Normalized {
        if let Some(&v) = op.isolated.first() {
            return Err(Error::IsolatedVertexInNormalized(v));
        }
    }
    Ok(op)
}

const MATVEC_CHUNK: usize = 256;

impl LaplacianOperator {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn max_eigenvalue_bound(&self) -> f64 {
        self.max_eigenvalue_bound
    }

    pub fn isolated_vertices(&self) -> &[usize] {
        &self.isolated
    }

    /// `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `out = M · x` for an `n × d` block, written into `out`.
    pub fn apply_into(&self, x: &[f64], d: usize, out: &mut [f64]) {
        assert_eq!(x.len(), self.n * d);
        assert_eq!(out.len(), self.n * d);
        let chunk = MATVEC_CHUNK * d.max(1);
        par::for_each_chunk_mut(out, chunk, |ci, block| {
            let first = ci * MATVEC_CHUNK;
            for (k, orow) in block.chunks_mut(d).enumerate() {
                let i = first + k;
                orow.iter_mut().for_each(|o| *o = 0.0);
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    let w = self.values[p];
                    let xr = &x[self.col_idx[p] * d..(self.col_idx[p] + 1) * d];
                    for (o, xv) in orow.iter_mut().zip(xr) {
                        *o += w * xv;
                    }
                }
            }
        });
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        if x.rows != self.n {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{} but input has {} rows",
                self.n, self.n, x.rows
            )));
        }
        let mut out = Mat::zeros(x.rows, x.cols);
        self.apply_into(&x.data, x.cols, &mut out.data);
        Ok(out)
    }

    /// `trace(xᵀ M x)`.
    pub fn quadratic_form(&self, x: &Mat) -> Result<f64> {
        let mx = self.apply(x)?;
        Ok(x.dot(&mx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::unlabeled(n, edges, Mat::zeros(n, 1)).unwrap()
    }

    #[test]
    fn p2_combinatorial() {
        let op = build_operator(&graph(2, &[(0, 1)]), Variant::Combinatorial);
        assert_eq!(op.to_dense().data, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(op.max_eigenvalue_bound(), 2.0);
    }

    #[test]
    fn p2_normalized_equals_combinatorial() {
        let op = build_operator(&graph(2, &[(0, 1)]), Variant::Normalized);
        assert_eq!(op.to_dense().data, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn triangle_combinatorial() {
        let op = build_operator(&graph(3, &[(0, 1), (1, 2), (0, 2)]), Variant::Combinatorial);
        assert_eq!(
            op.to_dense().data,
            vec![2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]
        );
        assert_eq!(op.max_eigenvalue_bound(), 4.0);
    }

    #[test]
    fn selfloop_variants_shift_diagonal() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let l = build_operator(&g, Variant::Combinatorial).to_dense();
        let il = build_operator(&g, Variant::CombinatorialSelfloop).to_dense();
        let n = build_operator(&g, Variant::Normalized).to_dense();
        let inn = build_operator(&g, Variant::NormalizedSelfloop);
        assert_eq!(il.lincomb(1.0, &l, -1.0), Mat::identity(3));
        assert!(inn.to_dense().lincomb(1.0, &n, -1.0).max_abs_diff(&Mat::identity(3)) == 0.0);
        assert_eq!(inn.max_eigenvalue_bound(), 3.0);
        let half = -1.0 / 2f64.sqrt();
        assert_eq!(n.get(0, 1), half);
        assert_eq!(n.get(1, 1), 1.0);
    }

    #[test]
    fn isolated_vertex_normalized() {
        let g = graph(3, &[(0, 1)]);
        let op = build_operator(&g, Variant::Normalized);
        assert_eq!(op.isolated_vertices(), &[2]);
        assert_eq!(op.entry(2, 2), 0.0);
        assert!(matches!(
            build_operator_strict(&g, Variant::Normalized),
            Err(Error::IsolatedVertexInNormalized(2))
        ));
        assert!(build_operator_strict(&g, Variant::NormalizedSelfloop).is_ok());
        assert_eq!(build_operator(&g, Variant::NormalizedSelfloop).entry(2, 2), 1.0);
    }

    #[test]
    fn columns_sorted_per_row() {
        let g = graph(5, &[(0, 4), (0, 2), (1, 3), (2, 3), (3, 4)]);
        let op = build_operator(&g, Variant::Combinatorial);
        for i in 0..5 {
            let cols: Vec<_> = op.row(i).map(|(j, _)| j).collect();
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn apply_rejects_wrong_rows() {
        let op = build_operator(&graph(2, &[(0, 1)]), Variant::Combinatorial);
        assert!(op.apply(&Mat::zeros(3, 1)).is_err());
    }
}
