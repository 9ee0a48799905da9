//! Raw text ingestion for the public citation and WebKB distributions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bundle::{BundleLabels, Features, GraphBundle, Metadata, SparseRow, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Counts of rows that did not become edges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub unknown_endpoint: usize,
    pub self_citations: usize,
    pub duplicates: usize,
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        line,
        reason: reason.into(),
    }
}

struct NodeTable {
    ids: HashMap<String, usize>,
    features: Vec<SparseRow>,
    dim: usize,
    binary: bool,
    labels: Vec<String>,
}

impl NodeTable {
    fn new() -> Self {
        NodeTable {
            ids: HashMap::new(),
            features: Vec::new(),
            dim: 0,
            binary: true,
            labels: Vec::new(),
        }
    }

    fn push(&mut self, line: usize, id: &str, feats: &[&str], label: &str) -> Result<()> {
        if self.features.is_empty() {
            self.dim = feats.len();
        } else if feats.len() != self.dim {
            return Err(malformed(
                line,
                format!("{} features, earlier rows have {}", feats.len(), self.dim),
            ));
        }
        if self.ids.contains_key(id) {
            return Err(malformed(line, format!("duplicate node id {id}")));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (c, tok) in feats.iter().enumerate() {
            let x: f64 = tok
                .parse()
                .map_err(|_| malformed(line, format!("feature {tok:?} is not a number")))?;
            if !x.is_finite() {
                return Err(malformed(line, format!("feature {tok:?} is not finite")));
            }
            if x != 0.0 {
                self.binary &= x == 1.0;
                indices.push(c);
                values.push(x);
            }
        }
        self.ids.insert(id.to_string(), self.features.len());
        self.features.push(SparseRow {
            indices,
            values: Some(values),
        });
        self.labels.push(label.to_string());
        Ok(())
    }

    fn finish(
        mut self,
        pairs: Vec<(usize, &str, &str)>,
        name: Option<String>,
    ) -> Result<(GraphBundle, IngestReport)> {
        let mut report = IngestReport::default();
        let mut edges = Vec::with_capacity(pairs.len());
        for (_, a, b) in pairs {
            match (self.ids.get(a), self.ids.get(b)) {
                (Some(&u), Some(&v)) if u == v => report.self_citations += 1,
                (Some(&u), Some(&v)) => edges.push([u.min(v), u.max(v)]),
                _ => report.unknown_endpoint += 1,
            }
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        report.duplicates = before - edges.len();
        if report.unknown_endpoint > 0 {
            log::warn!(
                "{} edges reference unknown ids and were dropped",
                report.unknown_endpoint
            );
        }
        if report.self_citations > 0 {
            log::warn!("{} self-citations dropped", report.self_citations);
        }

        let mut class_names = self.labels.clone();
        class_names.sort();
        class_names.dedup();
        let values = self
            .labels
            .iter()
            .map(|l| class_names.binary_search(l).expect("label listed"))
            .collect();
        if self.binary {
            for row in &mut self.features {
                row.values = None;
            }
        }
        let bundle = GraphBundle {
            format_version: FORMAT_VERSION.to_string(),
            num_nodes: self.features.len(),
            edges,
            features: Features::Sparse {
                dim: self.dim,
                rows: self.features,
            },
            labels: Some(BundleLabels::Classes {
                values,
                num_classes: class_names.len(),
            }),
            splits: None,
            metadata: Metadata {
                name,
                class_names,
                notes: Vec::new(),
            },
        };
        Ok((bundle, report))
    }
}

fn read_nonempty(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.display().to_string()));
    }
    Ok(text)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parse `id feat_1 … feat_k label` rows and `cited citing` rows.
///
/// Ids are numbered in order of first appearance in the content file, class
/// names are sorted, citations are symmetrized and deduplicated. Citations to
/// unknown ids and self-citations are dropped and counted.
pub fn parse_content_cites(content: &str, cites: &str) -> Result<(GraphBundle, IngestReport)> {
    let mut table = NodeTable::new();
    for (line, row) in content_lines(content) {
        let toks: Vec<&str> = row.split_whitespace().collect();
        if toks.len() < 2 {
            return Err(malformed(line, "expected an id, features and a label"));
        }
        table.push(line, toks[0], &toks[1..toks.len() - 1], toks[toks.len() - 1])?;
    }
    if table.features.is_empty() {
        return Err(Error::EmptyFile("content".into()));
    }
    let mut pairs = Vec::new();
    for (line, row) in content_lines(cites) {
        let toks: Vec<&str> = row.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(malformed(line, format!("expected 2 ids, found {}", toks.len())));
        }
        pairs.push((line, toks[0], toks[1]));
    }
    table.finish(pairs, None)
}

pub fn load_content_cites(content_path: &Path, cites_path: &Path) -> Result<(GraphBundle, IngestReport)> {
    let content = read_nonempty(content_path)?;
    let cites = read_nonempty(cites_path)?;
    let (mut bundle, report) = parse_content_cites(&content, &cites)?;
    bundle.metadata.name = content_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());
    Ok((bundle, report))
}

/// Parse the tab-separated layout used by the Geom-GCN WebKB release:
/// `node_id<TAB>f1,f2,…<TAB>label` and `node_id<TAB>node_id`, each file with a
/// header line.
pub fn parse_geom_gcn(nodes: &str, edges: &str) -> Result<(GraphBundle, IngestReport)> {
    let mut table = NodeTable::new();
    for (line, row) in content_lines(nodes).skip(1) {
        let cols: Vec<&str> = row.split('\t').collect();
        if cols.len() != 3 {
            return Err(malformed(line, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        let feats: Vec<&str> = cols[1].split(',').map(str::trim).collect();
        table.push(line, cols[0].trim(), &feats, cols[2].trim())?;
    }
    if table.features.is_empty() {
        return Err(Error::EmptyFile("node table".into()));
    }
    let mut pairs = Vec::new();
    for (line, row) in content_lines(edges).skip(1) {
        let toks: Vec<&str> = row.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(malformed(line, format!("expected 2 ids, found {}", toks.len())));
        }
        pairs.push((line, toks[0], toks[1]));
    }
    table.finish(pairs, None)
}

pub fn load_geom_gcn(nodes_path: &Path, edges_path: &Path) -> Result<(GraphBundle, IngestReport)> {
    let nodes = read_nonempty(nodes_path)?;
    let edges = read_nonempty(edges_path)?;
    parse_geom_gcn(&nodes, &edges)
}
