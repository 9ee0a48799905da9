use glaudio::analysis::{energy_trace, oversmoothing_metric};
use glaudio::data::{make_splits, parse_bundle, GraphBundle, Metadata};
use glaudio::decoder::{
    forward_batch, init_params, Activation, Architecture, DecoderDims, DecoderSpec,
    EmbeddingPlacement,
};
use glaudio::encoder::{
    propagate, propagate_adjoint, propagate_sequences, NodeSequences, SequenceLayout, WaveConfig,
};
use glaudio::graph::{Graph, Labels, Masks};
use glaudio::operator::{build_operator, Variant};
use glaudio::spectral::eigendecompose;
use glaudio::Mat;
use proptest::prelude::*;

#[derive(Clone, Debug)]
struct Case {
    n: usize,
    edges: Vec<(usize, usize)>,
    x: Mat,
}

impl Case {
    fn graph(&self) -> Graph {
        Graph::unlabeled(self.n, &self.edges, self.x.clone()).unwrap()
    }
}

fn case(max_n: usize, d: usize) -> impl Strategy<Value = Case> {
    (2..=max_n).prop_flat_map(move |n| {
        let pairs = n * (n - 1) / 2;
        (
            proptest::collection::vec(any::<bool>(), pairs),
            proptest::collection::vec(-2.0f64..2.0, n * d),
        )
            .prop_map(move |(keep, xs)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for u in 0..n {
                    for v in u + 1..n {
                        if keep[k] {
                            edges.push((u, v));
                        }
                        k += 1;
                    }
                }
                Case {
                    n,
                    edges,
                    x: Mat::from_vec(n, d, xs).unwrap(),
                }
            })
    })
}

fn variant() -> impl Strategy<Value = Variant> {
    (0..4usize).prop_map(|i| Variant::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_is_linear(c in case(8, 2), y in proptest::collection::vec(-2.0f64..2.0, 16),
                         a in -2.0f64..2.0, b in -2.0f64..2.0, var in variant()) {
        let op = build_operator(&c.graph(), var);
        let y = Mat::from_vec(c.n, 2, y[..2 * c.n].to_vec()).unwrap();
        let cfg = WaveConfig::new(12, 0.2).unwrap();
        let px = propagate(&op, &c.x, cfg).unwrap();
        let py = propagate(&op, &y, cfg).unwrap();
        let pz = propagate(&op, &c.x.lincomb(a, &y, b), cfg).unwrap();
        for ((sx, sy), sz) in px.positions().iter().zip(py.positions()).zip(pz.positions()) {
            prop_assert!(sx.lincomb(a, sy, b).max_abs_diff(sz) < 1e-10);
        }
    }

    #[test]
    fn encoder_commutes_with_relabelling(c in case(7, 1), seed in any::<u64>(), var in variant()) {
        let mut perm: Vec<usize> = (0..c.n).collect();
        let mut s = seed;
        for i in (1..c.n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let g = c.graph();
        let gp = g.permuted(&perm).unwrap();
        let cfg = WaveConfig::new(9, 0.3).unwrap();
        let a = propagate(&build_operator(&g, var), g.features(), cfg).unwrap();
        let b = propagate(&build_operator(&gp, var), gp.features(), cfg).unwrap();
        for (xa, xb) in a.positions().iter().zip(b.positions()) {
            for v in 0..c.n {
                prop_assert!((xa.get(v, 0) - xb.get(perm[v], 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_satisfies_its_recurrence(c in case(8, 2), h in 0.01f64..0.6, var in variant()) {
        let op = build_operator(&c.graph(), var);
        let s = propagate(&op, &c.x, WaveConfig::new(20, h).unwrap()).unwrap();
        prop_assert!(s.recurrence_residual(&op).unwrap() < 1e-12);
    }

    #[test]
    fn signal_never_crosses_components(c in case(8, 1), var in variant()) {
        let g = c.graph();
        let comp = g.components();
        let op = build_operator(&g, var);
        for u in 0..c.n {
            let mut e = Mat::zeros(c.n, 1);
            e.set(u, 0, 1.0);
            let s = propagate(&op, &e, WaveConfig::new(15, 0.25).unwrap()).unwrap();
            for x in s.positions() {
                for v in 0..c.n {
                    if comp[v] != comp[u] {
                        prop_assert_eq!(x.get(v, 0), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn adjoint_passes_the_dot_test(c in case(8, 2), g in proptest::collection::vec(-1.0f64..1.0, 8 * 10 * 4),
                                   velocity in any::<bool>(), initial in any::<bool>(), var in variant()) {
        let op = build_operator(&c.graph(), var);
        let layout = SequenceLayout { include_velocity: velocity, include_initial: initial };
        let cfg = WaveConfig::new(9, 0.3).unwrap();
        let nodes: Vec<usize> = (0..c.n).collect();
        let fwd = propagate_sequences(&op, &c.x, cfg, &nodes, layout).unwrap();
        let mut grads = NodeSequences::zeros(nodes, fwd.len, fwd.width);
        let k = grads.data.len();
        grads.data.copy_from_slice(&g[..k]);
        let back = propagate_adjoint(&op, cfg, &grads, layout, 2).unwrap();
        let lhs: f64 = fwd.data.iter().zip(&grads.data).map(|(a, b)| a * b).sum();
        let rhs = c.x.dot(&back);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn stable_energy_drift_is_bounded(c in case(8, 2), courant in 0.01f64..1.0, var in variant()) {
        let op = build_operator(&c.graph(), var);
        let dec = eigendecompose(&op).unwrap();
        let wmax = dec.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l)).sqrt();
        prop_assume!(wmax > 1e-6);
        let h = courant / wmax;
        let s = propagate(&op, &c.x, WaveConfig::new(400, h).unwrap()).unwrap();
        let t = energy_trace(&s, &op).unwrap();
        prop_assume!(t.energies[0] > 1e-9);
        // per-mode drift of symplectic Euler is at most hω/(2 − hω)
        let bound = courant / (2.0 - courant);
        prop_assert!(t.max_relative_drift <= bound + 1e-9,
            "drift {} > bound {}", t.max_relative_drift, bound);
        prop_assert!(!t.unstable);
    }

    #[test]
    fn mu_vanishes_exactly_on_componentwise_constant_rows(c in case(8, 2), vals in proptest::collection::vec(-3.0f64..3.0, 16)) {
        let g = c.graph();
        let comp = g.components();
        let op = build_operator(&g, Variant::Combinatorial);
        let mut y = Mat::zeros(c.n, 2);
        for v in 0..c.n {
            y.row_mut(v).copy_from_slice(&vals[2 * comp[v]..2 * comp[v] + 2]);
        }
        prop_assert_eq!(oversmoothing_metric(&op, &y).unwrap(), 0.0);
        let mu = oversmoothing_metric(&op, &c.x).unwrap();
        let varies = c.edges.iter().any(|&(u, v)| c.x.row(u) != c.x.row(v));
        prop_assert_eq!(mu > 0.0, varies);
        let shifted = Mat::from_vec(c.n, 2, c.x.data.iter().map(|a| a + 1.5).collect()).unwrap();
        prop_assert!((oversmoothing_metric(&op, &shifted).unwrap() - mu).abs() < 1e-12);
        prop_assert!((oversmoothing_metric(&op, &c.x.scale(-2.0)).unwrap() - 2.0 * mu).abs() < 1e-12);
    }

    #[test]
    fn bundles_round_trip(c in case(8, 3), labels in proptest::collection::vec(0usize..3, 8), seed in any::<u64>()) {
        let masks = {
            let s = make_splits(c.n, (0.5, 0.25, 0.25), seed).unwrap();
            Masks::from_indices(c.n, &s.train, &s.val, &s.test).unwrap()
        };
        let (g, _) = glaudio::graph::build_graph(
            c.n,
            &c.edges,
            c.x.clone(),
            Labels::Classes { values: labels[..c.n].to_vec(), num_classes: 3 },
            masks,
        ).unwrap();
        let b = GraphBundle::from_graph(&g, Metadata::default());
        let text = serde_json::to_string_pretty(&b).unwrap();
        let back = parse_bundle(&text).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(back.to_graph().unwrap().0, g);
    }

    #[test]
    fn splits_partition_their_share(n in 1usize..200, a in 0.0f64..0.5, b in 0.0f64..0.25, seed in any::<u64>()) {
        let s = make_splits(n, (a, b, 1.0 - a - b), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s, make_splits(n, (a, b, 1.0 - a - b), seed).unwrap());
    }
}

fn decoder_spec(arch: Architecture) -> DecoderSpec {
    let mut s = DecoderSpec::new(
        arch,
        Activation::Tanh,
        DecoderDims {
            input_dim: 2,
            hidden_dim: 3,
            output_dim: 2,
            layers: 2,
        },
    );
    s.placement = EmbeddingPlacement::PostPropagation;
    s.cornn.dt = 0.3;
    s
}

fn architecture() -> impl Strategy<Value = Architecture> {
    prop_oneof![
        Just(Architecture::Rnn),
        Just(Architecture::Lstm),
        Just(Architecture::Cornn)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The same weights read every vertex: a sequence's output does not
    /// depend on its batch neighbours or its position in the batch.
    #[test]
    fn weights_are_shared_across_vertices(arch in architecture(), seed in any::<u64>(),
                                          data in proptest::collection::vec(-1.0f64..1.0, 4 * 6 * 2)) {
        let params = init_params(decoder_spec(arch), seed).unwrap();
        let seqs = NodeSequences { nodes: vec![0, 1, 2, 3], len: 6, width: 2, data };
        let (all, _) = forward_batch(&params, &seqs, None).unwrap();
        let rev = seqs.select(&[3, 2, 1, 0]);
        let (back, _) = forward_batch(&params, &rev, None).unwrap();
        for b in 0..4 {
            let (one, _) = forward_batch(&params, &seqs.select(&[b]), None).unwrap();
            prop_assert_eq!(one.row(0), all.row(b));
            prop_assert_eq!(back.row(3 - b), all.row(b));
        }
    }

    /// The readout of a prefix does not depend on what follows it.
    #[test]
    fn decoding_is_causal(arch in architecture(), seed in any::<u64>(), t in 1usize..6,
                          data in proptest::collection::vec(-1.0f64..1.0, 6 * 2),
                          tail in proptest::collection::vec(-1.0f64..1.0, 6 * 2)) {
        let params = init_params(decoder_spec(arch), seed).unwrap();
        let prefix = NodeSequences { nodes: vec![0], len: t, width: 2, data: data[..2 * t].to_vec() };
        let mut a = data.clone();
        let mut b = data.clone();
        a[2 * t..].copy_from_slice(&tail[2 * t..]);
        b[2 * t..].iter_mut().for_each(|x| *x = -*x);
        let (p, _) = forward_batch(&params, &prefix, None).unwrap();
        for full in [a, b] {
            let (_, tape) = forward_batch(
                &params,
                &NodeSequences { nodes: vec![0], len: 6, width: 2, data: full },
                None,
            )
            .unwrap();
            let (q, _) = forward_batch(&params, &prefix, None).unwrap();
            prop_assert_eq!(&p, &q);
            prop_assert_eq!(tape.len(), 6);
        }
    }
}
