//! Undirected graphs with node features, labels and train/val/test masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Classes {
        values: Vec<usize>,
        num_classes: usize,
    },
    /// Real-valued targets, one row per vertex.
    Targets(Mat),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { values, .. } => values.len(),
            Labels::Targets(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output width of a model predicting these labels.
    pub fn output_dim(&self) -> usize {
        match self {
            Labels::Classes { num_classes, .. } => *num_classes,
            Labels::Targets(m) => m.cols,
        }
    }

    pub fn class(&self, v: usize) -> Option<usize> {
        match self {
            Labels::Classes { values, .. } => Some(values[v]),
            Labels::Targets(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut m = Masks::empty(n);
        for (mask, idx) in [(&mut m.train, train), (&mut m.val, val), (&mut m.test, test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::VertexOutOfRange { vertex: i, n });
                }
                mask[i] = true;
            }
        }
        Ok(m)
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgePolicy {
    /// Orient every pair as `u < v`, drop repeats and record them in the report.
    Canonicalize,
    /// Reject repeated pairs with [`Error::DuplicateEdge`].
    Strict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub duplicates_removed: usize,
    pub isolated_vertices: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Mat,
    labels: Labels,
    masks: Masks,
}

/// Validate and canonicalize a graph. Edge direction is ignored; repeated
/// pairs are dropped with a warning in the returned report.
pub fn build_graph(
    n: usize,
    edges: &[(usize, usize)],
    features: Mat,
    labels: Labels,
    masks: Masks,
) -> Result<(Graph, ValidationReport)> {
    build_graph_with(n, edges, features, labels, masks, EdgePolicy::Canonicalize)
}

pub fn build_graph_with(
    n: usize,
    edges: &[(usize, usize)],
    features: Mat,
    labels: Labels,
    masks: Masks,
    policy: EdgePolicy,
) -> Result<(Graph, ValidationReport)> {
    let mut report = ValidationReport::default();

    if features.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "feature matrix has {} rows for {n} vertices",
            features.rows
        )));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} vertices",
            labels.len()
        )));
    }
    for (name, m) in [("train", &masks.train), ("val", &masks.val), ("test", &masks.test)] {
        if m.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} mask has length {} for {n} vertices",
                m.len()
            )));
        }
    }

    let mut canon = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::OutOfRangeEdge { u, v, n });
        }
        if u == v {
            return Err(Error::SelfLoopInEdgeList(u));
        }
        canon.push((u.min(v), u.max(v)));
    }
    canon.sort_unstable();
    let before = canon.len();
    if policy == EdgePolicy::Strict {
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateEdge(w[0].0, w[0].1));
        }
    }
    canon.dedup();
    report.duplicates_removed = before - canon.len();
    if report.duplicates_removed > 0 {
        let msg = format!("{} duplicate edges removed", report.duplicates_removed);
        log::warn!("{msg}");
        report.warnings.push(msg);
    }

    for v in 0..n {
        let flags = [masks.train[v], masks.val[v], masks.test[v]];
        if flags.iter().filter(|&&b| b).count() > 1 {
            return Err(Error::MaskOverlap(v));
        }
    }

    match &labels {
        Labels::Classes {
            values,
            num_classes,
        } => {
            for (v, &l) in values.iter().enumerate() {
                if l >= *num_classes {
                    return Err(Error::LabelOutOfRange {
                        vertex: v,
                        label: l,
                        classes: *num_classes,
                    });
                }
            }
        }
        Labels::Targets(t) => {
            if !t.is_finite() {
                return Err(Error::DimensionMismatch("non-finite regression target".into()));
            }
        }
    }
    if !features.is_finite() {
        return Err(Error::DimensionMismatch("non-finite feature value".into()));
    }

    let graph = Graph {
        n,
        edges: canon,
        features,
        labels,
        masks,
    };
    let deg = graph.degrees();
    report.isolated_vertices = (0..n).filter(|&v| deg[v] == 0).collect();
    Ok((graph, report))
}

impl Graph {
    /// Graph without labels or masks, handy for encoder experiments.
    pub fn unlabeled(n: usize, edges: &[(usize, usize)], features: Mat) -> Result<Graph> {
        let labels = Labels::Classes {
            values: vec![0; n],
            num_classes: 1,
        };
        build_graph(n, edges, features, labels, Masks::empty(n)).map(|(g, _)| g)
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    /// Canonical edges, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Component id per vertex, ids assigned in order of lowest member.
    pub fn components(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Replace the feature matrix, keeping structure, labels and masks.
    pub fn with_features(&self, features: Mat) -> Result<Graph> {
        if features.rows != self.n {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} rows for {} vertices",
                features.rows, self.n
            )));
        }
        Ok(Graph {
            features,
            ..self.clone()
        })
    }

    pub fn with_masks(&self, masks: Masks) -> Result<Graph> {
        build_graph_with(
            self.n,
            &self.edges,
            self.features.clone(),
            self.labels.clone(),
            masks,
            EdgePolicy::Strict,
        )
        .map(|(g, _)| g)
    }

    /// Relabel vertices: old vertex `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n;
        if perm.len() != n {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::DimensionMismatch("not a permutation".into()));
            }
            seen[p] = true;
        }
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = Mat::zeros(n, self.features.cols);
        for v in 0..n {
            features.row_mut(perm[v]).copy_from_slice(self.features.row(v));
        }
        let labels = match &self.labels {
            Labels::Classes {
                values,
                num_classes,
            } => {
                let mut out = vec![0; n];
                for v in 0..n {
                    out[perm[v]] = values[v];
                }
                Labels::Classes {
                    values: out,
                    num_classes: *num_classes,
                }
            }
            Labels::Targets(t) => {
                let mut out = Mat::zeros(n, t.cols);
                for v in 0..n {
                    out.row_mut(perm[v]).copy_from_slice(t.row(v));
                }
                Labels::Targets(out)
            }
        };
        let permute_mask = |m: &[bool]| {
            let mut out = vec![false; n];
            for v in 0..n {
                out[perm[v]] = m[v];
            }
            out
        };
        let masks = Masks {
            train: permute_mask(&self.masks.train),
            val: permute_mask(&self.masks.val),
            test: permute_mask(&self.masks.test),
        };
        build_graph(n, &edges, features, labels, masks).map(|(g, _)| g)
    }
}
