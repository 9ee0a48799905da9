use std::path::PathBuf;

use glaudio::data::{
    chain_ends, load_bundle, load_content_cites, parse_bundle, save_bundle, synth_distance_task,
    synth_sbm, BundleLabels, Features, GraphBundle,
};
use glaudio::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

const FIXTURES: [&str; 4] = ["p2.json", "p3.json", "k3.json", "star4.json"];

#[test]
fn fixtures_round_trip_structurally() {
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURES {
        let b = load_bundle(&fixture(name)).unwrap();
        b.to_graph().unwrap();
        let out = dir.path().join(name);
        save_bundle(&b, &out).unwrap();
        assert_eq!(load_bundle(&out).unwrap(), b, "{name}");
    }
}

#[test]
fn graph_round_trip_preserves_everything() {
    let b = load_bundle(&fixture("p3.json")).unwrap();
    let (g, _) = b.to_graph().unwrap();
    let again = GraphBundle::from_graph(&g, b.metadata.clone());
    let (g2, _) = again.to_graph().unwrap();
    assert_eq!(g, g2);
}

#[test]
fn truncated_file_is_a_parse_error() {
    let text = std::fs::read_to_string(fixture("p3.json")).unwrap();
    let cut = &text[..text.len() / 2];
    match parse_bundle(cut) {
        Err(Error::ParseError { line, .. }) => assert!(line >= 1),
        other => panic!("expected ParseError, got {other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let text = std::fs::read_to_string(fixture("p2.json"))
        .unwrap()
        .replace("\"format_version\": \"1\"", "\"format_version\": \"7\"");
    assert!(matches!(
        parse_bundle(&text),
        Err(Error::VersionMismatch { found, .. }) if found == "7"
    ));
}

#[test]
fn invalid_bundles_are_rejected() {
    let text = std::fs::read_to_string(fixture("k3.json")).unwrap();
    let unsorted = text.replace("[0, 2], \"values\"", "[2, 0], \"values\"");
    assert!(parse_bundle(&unsorted).is_err());
    let overlapping = std::fs::read_to_string(fixture("p3.json"))
        .unwrap()
        .replace("\"test\": [2]", "\"test\": [1]");
    assert!(matches!(parse_bundle(&overlapping), Err(Error::MaskOverlap(1))));
}

#[test]
fn sparse_features_expand_with_implicit_ones() {
    let b = load_bundle(&fixture("k3.json")).unwrap();
    let m = b.features.to_mat();
    assert_eq!(m.row(0), &[1.0, 0.0, 0.0]);
    assert_eq!(m.row(2), &[0.5, 0.0, -1.5]);
}

#[test]
fn raw_toy_dataset_loads() {
    let (b, report) = load_content_cites(
        &fixture("toy/toy.content"),
        &fixture("toy/toy.cites"),
    )
    .unwrap();
    assert_eq!(b.num_nodes, 3);
    assert_eq!(b.edges.len(), 2);
    assert_eq!(report.unknown_endpoint, 0);
    assert_eq!(b.metadata.name.as_deref(), Some("toy"));
    b.to_graph().unwrap();
}

#[test]
fn empty_raw_file() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("x.content");
    std::fs::write(&empty, "  \n").unwrap();
    assert!(matches!(
        load_content_cites(&empty, &fixture("toy/toy.cites")),
        Err(Error::EmptyFile(_))
    ));
}

fn classes(b: &GraphBundle) -> Vec<usize> {
    match &b.labels {
        Some(BundleLabels::Classes { values, .. }) => values.clone(),
        _ => panic!("classification bundle expected"),
    }
}

#[test]
fn sbm_without_cross_edges() {
    let b = synth_sbm(60, 3, 0.3, 0.0, 0.1, 4).unwrap();
    let c = classes(&b);
    assert!(!b.edges.is_empty());
    assert!(b.edges.iter().all(|&[u, v]| c[u] == c[v]));
    b.to_graph().unwrap();
}

#[test]
fn sbm_with_equal_probabilities_has_chance_homophily() {
    let (n, k) = (300, 3);
    let b = synth_sbm(n, k, 0.05, 0.05, 0.1, 9).unwrap();
    let c = classes(&b);
    let m = b.edges.len() as f64;
    let same = b.edges.iter().filter(|&&[u, v]| c[u] == c[v]).count() as f64;
    // each edge is a uniformly random pair; same-class pair probability
    let block = n / k;
    let pairs = (n * (n - 1) / 2) as f64;
    let p = (k * block * (block - 1) / 2) as f64 / pairs;
    let sigma = (m * p * (1.0 - p)).sqrt();
    assert!((same - m * p).abs() < 3.0 * sigma, "{same} vs {}", m * p);
}

#[test]
fn generators_are_pure_functions_of_the_seed() {
    assert_eq!(
        synth_sbm(50, 2, 0.2, 0.05, 0.3, 1).unwrap(),
        synth_sbm(50, 2, 0.2, 0.05, 0.3, 1).unwrap()
    );
    assert_ne!(
        synth_sbm(50, 2, 0.2, 0.05, 0.3, 1).unwrap(),
        synth_sbm(50, 2, 0.2, 0.05, 0.3, 2).unwrap()
    );
    assert_eq!(
        synth_distance_task(8, 200, 5).unwrap(),
        synth_distance_task(8, 200, 5).unwrap()
    );
}

#[test]
fn distance_task_labels_come_from_heads() {
    let k = 8;
    let b = synth_distance_task(k, 200, 5).unwrap();
    let c = classes(&b);
    let Features::Dense { rows, .. } = &b.features else {
        panic!("dense features expected");
    };
    for chain in 0..200 {
        let (head, tail) = chain_ends(k, chain);
        assert_eq!(c[tail], rows[head][0] as usize);
    }
    let s = b.splits.as_ref().unwrap();
    let tails: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    assert_eq!(tails.len(), 200);
    assert!(tails.iter().all(|&v| v % (k + 1) == k));
    // majority baseline near 1/2
    let ones = (0..200).filter(|&ch| c[chain_ends(k, ch).1] == 1).count() as f64;
    let majority = ones.max(200.0 - ones) / 200.0;
    assert!(majority - 0.5 < 3.0 * (0.25f64 / 200.0).sqrt());
    let (g, report) = b.to_graph().unwrap();
    assert!(report.isolated_vertices.is_empty());
    assert_eq!(g.components().iter().max(), Some(&199));
}

#[test]
fn distance_one_is_decidable_from_the_neighbour() {
    let b = synth_distance_task(1, 50, 2).unwrap();
    assert_eq!(b.edges.len(), 50);
    let c = classes(&b);
    let Features::Dense { rows, .. } = &b.features else {
        unreachable!()
    };
    for &[head, tail] in &b.edges {
        assert_eq!(rows[head][0] as usize, c[tail]);
    }
}
