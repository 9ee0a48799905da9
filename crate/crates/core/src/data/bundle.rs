//! Canonical JSON graph bundle.
//!
//! ```json
//! {
//!   "format_version": "1",
//!   "num_nodes": 3,
//!   "edges": [[0, 1], [1, 2]],
//!   "features": {"kind": "sparse", "dim": 4, "rows": [{"indices": [0, 3]}, ...]},
//!   "labels": {"classes": {"values": [0, 1, 0], "num_classes": 2}},
//!   "splits": {"train": [0], "val": [1], "test": [2]},
//!   "metadata": {"name": "toy", "class_names": ["a", "b"], "notes": []}
//! }
//! ```
//!
//! Sparse rows list strictly ascending column indices; `values` may be
//! omitted, in which case every listed entry is 1.0.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph, Labels, Masks, ValidationReport};
use crate::linalg::Mat;

pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Features {
    Dense { dim: usize, rows: Vec<Vec<f64>> },
    Sparse { dim: usize, rows: Vec<SparseRow> },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense { dim, .. } | Features::Sparse { dim, .. } => *dim,
        }
    }

    pub fn num_rows(&self) -> usize {
        match self {
            Features::Dense { rows, .. } => rows.len(),
            Features::Sparse { rows, .. } => rows.len(),
        }
    }

    pub fn to_mat(&self) -> Mat {
        let mut m = Mat::zeros(self.num_rows(), self.dim());
        match self {
            Features::Dense { rows, .. } => {
                for (r, row) in rows.iter().enumerate() {
                    m.row_mut(r).copy_from_slice(row);
                }
            }
            Features::Sparse { rows, .. } => {
                for (r, row) in rows.iter().enumerate() {
                    for (k, &c) in row.indices.iter().enumerate() {
                        let v = row.values.as_ref().map_or(1.0, |vals| vals[k]);
                        m.set(r, c, v);
                    }
                }
            }
        }
        m
    }

    /// Sparse form when at most half the entries are nonzero, values omitted
    /// when all nonzeros equal 1.
    pub fn from_mat(m: &Mat) -> Features {
        let nnz = m.data.iter().filter(|&&x| x != 0.0).count();
        if 2 * nnz > m.data.len() {
            return Features::Dense {
                dim: m.cols,
                rows: (0..m.rows).map(|r| m.row(r).to_vec()).collect(),
            };
        }
        let binary = m.data.iter().all(|&x| x == 0.0 || x == 1.0);
        let rows = (0..m.rows)
            .map(|r| {
                let row = m.row(r);
                let indices: Vec<usize> = (0..m.cols).filter(|&c| row[c] != 0.0).collect();
                let values = (!binary).then(|| indices.iter().map(|&c| row[c]).collect());
                SparseRow { indices, values }
            })
            .collect();
        Features::Sparse { dim: m.cols, rows }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BundleLabels {
    Classes { values: Vec<usize>, num_classes: usize },
    Targets(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Metadata {
    pub name: Option<String>,
    pub class_names: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBundle {
    pub format_version: String,
    pub num_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Features,
    #[serde(default)]
    pub labels: Option<BundleLabels>,
    #[serde(default)]
    pub splits: Option<Splits>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl GraphBundle {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.features.num_rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {n} nodes",
                self.features.num_rows()
            )));
        }
        for &[u, v] in &self.edges {
            if u >= n || v >= n {
                return Err(Error::OutOfRangeEdge { u, v, n });
            }
        }
        match &self.features {
            Features::Dense { dim, rows } => {
                if let Some(r) = rows.iter().position(|r| r.len() != *dim) {
                    return Err(Error::DimensionMismatch(format!(
                        "feature row {r} has {} entries, dim is {dim}",
                        rows[r].len()
                    )));
                }
            }
            Features::Sparse { dim, rows } => {
                for (r, row) in rows.iter().enumerate() {
                    if !row.indices.windows(2).all(|w| w[0] < w[1]) {
                        return Err(Error::DimensionMismatch(format!(
                            "sparse row {r} indices are not strictly ascending"
                        )));
                    }
                    if row.indices.last().is_some_and(|&c| c >= *dim) {
                        return Err(Error::DimensionMismatch(format!(
                            "sparse row {r} has an index beyond dim {dim}"
                        )));
                    }
                    if row.values.as_ref().is_some_and(|v| v.len() != row.indices.len()) {
                        return Err(Error::DimensionMismatch(format!(
                            "sparse row {r} has mismatched values"
                        )));
                    }
                }
            }
        }
        match &self.labels {
            Some(BundleLabels::Classes { values, .. }) if values.len() != n => {
                return Err(Error::DimensionMismatch(format!("{} labels for {n} nodes", values.len())))
            }
            Some(BundleLabels::Targets(rows)) if rows.len() != n => {
                return Err(Error::DimensionMismatch(format!("{} targets for {n} nodes", rows.len())))
            }
            _ => {}
        }
        if let Some(s) = &self.splits {
            s.masks(n)?;
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<Labels> {
        let n = self.num_nodes;
        Ok(match &self.labels {
            None => Labels::Classes {
                values: vec![0; n],
                num_classes: 1,
            },
            Some(BundleLabels::Classes {
                values,
                num_classes,
            }) => Labels::Classes {
                values: values.clone(),
                num_classes: *num_classes,
            },
            Some(BundleLabels::Targets(rows)) => Labels::Targets(Mat::from_rows(rows)?),
        })
    }

    /// Validate and build the in-memory graph.
    pub fn to_graph(&self) -> Result<(Graph, ValidationReport)> {
        self.validate()?;
        let masks = match &self.splits {
            Some(s) => s.masks(self.num_nodes)?,
            None => Masks::empty(self.num_nodes),
        };
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&[u, v]| (u, v)).collect();
        build_graph(
            self.num_nodes,
            &edges,
            self.features.to_mat(),
            self.labels()?,
            masks,
        )
    }

    pub fn from_graph(graph: &Graph, metadata: Metadata) -> GraphBundle {
        let labels = match graph.labels() {
            Labels::Classes {
                values,
                num_classes,
            } => BundleLabels::Classes {
                values: values.clone(),
                num_classes: *num_classes,
            },
            Labels::Targets(m) => BundleLabels::Targets((0..m.rows).map(|r| m.row(r).to_vec()).collect()),
        };
        let m = graph.masks();
        let splits = Splits {
            train: Masks::indices(&m.train),
            val: Masks::indices(&m.val),
            test: Masks::indices(&m.test),
        };
        let has_splits = !(splits.train.is_empty() && splits.val.is_empty() && splits.test.is_empty());
        GraphBundle {
            format_version: FORMAT_VERSION.to_string(),
            num_nodes: graph.num_vertices(),
            edges: graph.edges().iter().map(|&(u, v)| [u, v]).collect(),
            features: Features::from_mat(graph.features()),
            labels: Some(labels),
            splits: has_splits.then_some(splits),
            metadata,
        }
    }
}

impl Splits {
    /// Boolean masks; errors on out-of-range or overlapping indices.
    pub fn masks(&self, n: usize) -> Result<Masks> {
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if let Some(&v) = idx.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidSplit(format!("{name} index {v} out of range for {n} nodes")));
            }
        }
        let mut seen = vec![false; n];
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if seen[v] {
                return Err(Error::MaskOverlap(v));
            }
            seen[v] = true;
        }
        Masks::from_indices(n, &self.train, &self.val, &self.test)
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn save_bundle(bundle: &GraphBundle, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string(bundle)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parse a bundle from JSON text, checking the version before the schema.
pub fn parse_bundle(text: &str) -> Result<GraphBundle> {
    #[derive(Deserialize)]
    struct Header {
        format_version: String,
    }
    let header: Header = serde_json::from_str(text).map_err(parse_error)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let bundle: GraphBundle = serde_json::from_str(text).map_err(parse_error)?;
    bundle.validate()?;
    Ok(bundle)
}

pub fn load_bundle(path: &Path) -> Result<GraphBundle> {
    parse_bundle(&fs::read_to_string(path)?)
}
