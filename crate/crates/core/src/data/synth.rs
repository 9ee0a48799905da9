//! Seeded synthetic graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::bundle::{BundleLabels, Features, GraphBundle, Metadata, Splits, FORMAT_VERSION};
use super::splits::make_splits;
use crate::error::{Error, Result};

/// Stochastic block model with `num_classes` contiguous, near-equal blocks.
/// Features are one-hot class indicators plus Gaussian noise of standard
/// deviation `feature_noise`. Splits are seeded 60/20/20.
pub fn synth_sbm(
    n: usize,
    num_classes: usize,
    p_in: f64,
    p_out: f64,
    feature_noise: f64,
    seed: u64,
) -> Result<GraphBundle> {
    if num_classes == 0 || n < num_classes {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= num_classes <= n, got {num_classes} classes for {n} nodes"
        )));
    }
    if ![p_in, p_out].iter().all(|p| (0.0..=1.0).contains(p)) {
        return Err(Error::InvalidConfig("edge probabilities must lie in [0, 1]".into()));
    }
    let noise = Normal::new(0.0, feature_noise)
        .map_err(|e| Error::InvalidConfig(format!("feature noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class: Vec<usize> = (0..n).map(|v| v * num_classes / n).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class[u] == class[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push([u, v]);
            }
        }
    }
    let rows = (0..n)
        .map(|v| {
            (0..num_classes)
                .map(|c| f64::from(u8::from(c == class[v])) + noise.sample(&mut rng))
                .collect()
        })
        .collect();
    Ok(GraphBundle {
        format_version: FORMAT_VERSION.to_string(),
        num_nodes: n,
        edges,
        features: Features::Dense {
            dim: num_classes,
            rows,
        },
        labels: Some(BundleLabels::Classes {
            values: class,
            num_classes,
        }),
        splits: Some(make_splits(n, (0.6, 0.2, 0.2), seed)?),
        metadata: Metadata {
            name: Some(format!("sbm-{n}-{num_classes}")),
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            notes: vec![format!("p_in={p_in} p_out={p_out} noise={feature_noise} seed={seed}")],
        },
    })
}

/// `(head, tail)` of chain `c` in a distance task with path length `k`.
pub fn chain_ends(k: usize, c: usize) -> (usize, usize) {
    let head = c * (k + 1);
    (head, head + k)
}

/// Disjoint paths of `k + 1` vertices (head and tail at distance `k`). Every
/// vertex carries one random bit as its feature; every vertex of a chain is
/// labelled with its head's bit. Only tails enter the splits (60/20/20 over
/// chains), so the task needs information carried across distance `k`.
pub fn synth_distance_task(k: usize, num_chains: usize, seed: u64) -> Result<GraphBundle> {
    if k == 0 || num_chains == 0 {
        return Err(Error::InvalidConfig(
            "distance task needs k >= 1 and at least one chain".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_chains * (k + 1);
    let bits: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<bool>())).collect();
    let mut labels = vec![0; n];
    let mut edges = Vec::with_capacity(num_chains * k);
    for c in 0..num_chains {
        let (head, tail) = chain_ends(k, c);
        for v in head..=tail {
            labels[v] = bits[head];
        }
        for v in head..tail {
            edges.push([v, v + 1]);
        }
    }
    let chains = make_splits(num_chains, (0.6, 0.2, 0.2), seed)?;
    let tails = |cs: &[usize]| cs.iter().map(|&c| chain_ends(k, c).1).collect();
    Ok(GraphBundle {
        format_version: FORMAT_VERSION.to_string(),
        num_nodes: n,
        edges,
        features: Features::Dense {
            dim: 1,
            rows: bits.iter().map(|&b| vec![b as f64]).collect(),
        },
        labels: Some(BundleLabels::Classes {
            values: labels,
            num_classes: 2,
        }),
        splits: Some(Splits {
            train: tails(&chains.train),
            val: tails(&chains.val),
            test: tails(&chains.test),
        }),
        metadata: Metadata {
            name: Some(format!("distance-k{k}")),
            class_names: vec!["0".into(), "1".into()],
            notes: vec![format!("k={k} chains={num_chains} seed={seed}")],
        },
    })
}
