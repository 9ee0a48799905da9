//! Recurrent sequence decoders with shared weights across vertices.
//!
//! A decoder is an optional node-wise embedding, a stack of recurrent layers
//! (simple RNN, LSTM or CoRNN) run from zero initial state, and a linear head
//! applied to the last layer's final hidden state.

mod activation;
mod checkpoint;
mod cornn;
mod network;

pub use activation::{Activation, LEAKY_SLOPE};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Tensor, CHECKPOINT_VERSION};
pub use cornn::cornn_step;
pub use network::{
    backward, backward_batch, embed_features, embed_features_backward, forward, forward_batch,
    Dropout, Tape,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Rnn,
    Lstm,
    Cornn,
}

/// Where the node-wise embedding is applied relative to wave propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingPlacement {
    /// Embed features, then propagate the embedded features.
    #[default]
    PrePropagation,
    /// Propagate raw features, embed every time step inside the decoder.
    PostPropagation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornnScalars {
    pub gamma: f64,
    pub epsilon: f64,
    pub dt: f64,
}

impl Default for CornnScalars {
    fn default() -> Self {
        CornnScalars {
            gamma: 1.0,
            epsilon: 1.0,
            dt: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderDims {
    /// Raw node feature width `d0`.
    pub input_dim: usize,
    /// Hidden width `q`, also the embedding width.
    pub hidden_dim: usize,
    /// Output width `d1`.
    pub output_dim: usize,
    pub layers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub architecture: Architecture,
    pub activation: Activation,
    pub dims: DecoderDims,
    /// Optional elementwise nonlinearity after the linear embedding.
    pub embedding_activation: Option<Activation>,
    pub placement: EmbeddingPlacement,
    /// Sequences carry velocities next to positions.
    pub include_velocity: bool,
    pub cornn: CornnScalars,
}

impl DecoderSpec {
    pub fn new(architecture: Architecture, activation: Activation, dims: DecoderDims) -> Self {
        DecoderSpec {
            architecture,
            activation,
            dims,
            embedding_activation: None,
            placement: EmbeddingPlacement::PrePropagation,
            include_velocity: false,
            cornn: CornnScalars::default(),
        }
    }

    fn velocity_factor(&self) -> usize {
        if self.include_velocity {
            2
        } else {
            1
        }
    }

    /// Input width of the embedding.
    pub fn embedding_in(&self) -> usize {
        match self.placement {
            EmbeddingPlacement::PrePropagation => self.dims.input_dim,
            EmbeddingPlacement::PostPropagation => self.dims.input_dim * self.velocity_factor(),
        }
    }

    /// Width of each step of the sequences handed to [`forward`].
    pub fn sequence_width(&self) -> usize {
        match self.placement {
            EmbeddingPlacement::PrePropagation => self.dims.hidden_dim * self.velocity_factor(),
            EmbeddingPlacement::PostPropagation => self.dims.input_dim * self.velocity_factor(),
        }
    }

    /// Input width of the first recurrent layer.
    pub fn recurrent_in(&self) -> usize {
        match self.placement {
            EmbeddingPlacement::PrePropagation => self.sequence_width(),
            EmbeddingPlacement::PostPropagation => self.dims.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.input_dim == 0 || d.hidden_dim == 0 || d.output_dim == 0 || d.layers == 0 {
            return Err(Error::BadDimensions(format!(
                "all dimensions must be positive: {d:?}"
            )));
        }
        if self.architecture == Architecture::Cornn {
            let c = &self.cornn;
            if !(c.dt > 0.0 && c.gamma.is_finite() && c.epsilon.is_finite() && c.dt.is_finite()) {
                return Err(Error::BadDimensions(format!("invalid CoRNN scalars {c:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(out: usize, inp: usize) -> Self {
        Linear {
            weight: Mat::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }
}

/// Per-layer recurrent weights. Matrices are `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentLayer {
    /// `s_t = σ(W s_{t-1} + U x_t + b)`
    Rnn { w: Mat, u: Mat, b: Vec<f64> },
    /// Gate blocks stacked in the order input, forget, cell, output.
    Lstm { w_ih: Mat, w_hh: Mat, b: Vec<f64> },
    /// `z' = z + Δt(σ(W y + W̃ z + V u + b) − γ y − ε z)`, `y' = y + Δt z'`
    Cornn {
        w: Mat,
        w_tilde: Mat,
        v_in: Mat,
        b: Vec<f64>,
    },
}

impl RecurrentLayer {
    fn zeros(arch: Architecture, q: usize, inp: usize) -> Self {
        match arch {
            Architecture::Rnn => RecurrentLayer::Rnn {
                w: Mat::zeros(q, q),
                u: Mat::zeros(q, inp),
                b: vec![0.0; q],
            },
            Architecture::Lstm => RecurrentLayer::Lstm {
                w_ih: Mat::zeros(4 * q, inp),
                w_hh: Mat::zeros(4 * q, q),
                b: vec![0.0; 4 * q],
            },
            Architecture::Cornn => RecurrentLayer::Cornn {
                w: Mat::zeros(q, q),
                w_tilde: Mat::zeros(q, q),
                v_in: Mat::zeros(q, inp),
                b: vec![0.0; q],
            },
        }
    }

    fn blocks(&self) -> Vec<(&'static str, (usize, usize), &[f64])> {
        match self {
            RecurrentLayer::Rnn { w, u, b } => vec![
                ("w", w.shape(), &w.data),
                ("u", u.shape(), &u.data),
                ("b", (b.len(), 1), b),
            ],
            RecurrentLayer::Lstm { w_ih, w_hh, b } => vec![
                ("w_ih", w_ih.shape(), &w_ih.data),
                ("w_hh", w_hh.shape(), &w_hh.data),
                ("b", (b.len(), 1), b),
            ],
            RecurrentLayer::Cornn { w, w_tilde, v_in, b } => vec![
                ("w", w.shape(), &w.data),
                ("w_tilde", w_tilde.shape(), &w_tilde.data),
                ("v_in", v_in.shape(), &v_in.data),
                ("b", (b.len(), 1), b),
            ],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            RecurrentLayer::Rnn { w, u, b } => vec![&mut w.data, &mut u.data, b],
            RecurrentLayer::Lstm { w_ih, w_hh, b } => vec![&mut w_ih.data, &mut w_hh.data, b],
            RecurrentLayer::Cornn { w, w_tilde, v_in, b } => {
                vec![&mut w.data, &mut w_tilde.data, &mut v_in.data, b]
            }
        }
    }
}

/// All trainable tensors. Shared by parameters and gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub embedding: Linear,
    pub layers: Vec<RecurrentLayer>,
    pub head: Linear,
}

impl Weights {
    pub fn zeros(spec: &DecoderSpec) -> Self {
        let q = spec.dims.hidden_dim;
        let layers = (0..spec.dims.layers)
            .map(|l| {
                let inp = if l == 0 { spec.recurrent_in() } else { q };
                RecurrentLayer::zeros(spec.architecture, q, inp)
            })
            .collect();
        Weights {
            embedding: Linear::zeros(q, spec.embedding_in()),
            layers,
            head: Linear::zeros(spec.dims.output_dim, q),
        }
    }

    /// Tensors in declared order: embedding, layers bottom-up, head.
    pub fn blocks(&self) -> Vec<(String, (usize, usize), &[f64])> {
        let mut out = vec![
            (
                "embedding.weight".to_string(),
                self.embedding.weight.shape(),
                &self.embedding.weight.data[..],
            ),
            (
                "embedding.bias".to_string(),
                (self.embedding.bias.len(), 1),
                &self.embedding.bias[..],
            ),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, shape, values) in layer.blocks() {
                out.push((format!("layers.{l}.{name}"), shape, values));
            }
        }
        out.push((
            "head.weight".to_string(),
            self.head.weight.shape(),
            &self.head.weight.data,
        ));
        out.push(("head.bias".to_string(), (self.head.bias.len(), 1), &self.head.bias));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            vec![&mut self.embedding.weight.data, &mut self.embedding.bias];
        for layer in &mut self.layers {
            out.extend(layer.blocks_mut());
        }
        out.push(&mut self.head.weight.data);
        out.push(&mut self.head.bias);
        out
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.blocks().into_iter().map(|(_, s, _)| s).collect()
    }

    pub fn num_values(&self) -> usize {
        self.blocks().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks()
            .into_iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .collect()
    }

    /// `self += other`, requiring identical shapes.
    pub fn add_assign(&mut self, other: &Weights) -> Result<()> {
        if self.shapes() != other.shapes() {
            return Err(Error::ShapeMismatch("weight sets differ in layout".into()));
        }
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b.2) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for blk in self.blocks_mut() {
            blk.iter_mut().for_each(|x| *x *= a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub spec: DecoderSpec,
    pub weights: Weights,
}

/// Gradients mirroring [`DecoderParams::weights`] exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub weights: Weights,
}

impl GradientSet {
    pub fn zeros_for(params: &DecoderParams) -> Self {
        GradientSet {
            weights: Weights::zeros(&params.spec),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .blocks()
            .iter()
            .flat_map(|(_, _, v)| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl DecoderParams {
    pub fn num_parameters(&self) -> usize {
        self.weights.num_values()
    }

    pub fn zeros(spec: DecoderSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DecoderParams {
            weights: Weights::zeros(&spec),
            spec,
        })
    }
}

/// Glorot-uniform weights from `seed`, zero biases, LSTM forget-gate bias 1.
pub fn init_params(spec: DecoderSpec, seed: u64) -> Result<DecoderParams> {
    let mut params = DecoderParams::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = params.weights.shapes();
    let names: Vec<String> = params.weights.blocks().into_iter().map(|b| b.0).collect();
    for ((blk, (rows, cols)), name) in params
        .weights
        .blocks_mut()
        .into_iter()
        .zip(shapes)
        .zip(names)
    {
        let is_bias = name.ends_with(".b") || name.ends_with("bias");
        if is_bias {
            continue;
        }
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for x in blk.iter_mut() {
            *x = rng.random_range(-bound..bound);
        }
    }
    let q = spec.dims.hidden_dim;
    for layer in &mut params.weights.layers {
        if let RecurrentLayer::Lstm { b, .. } = layer {
            b[q..2 * q].iter_mut().for_each(|x| *x = 1.0);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(arch: Architecture, d0: usize, q: usize, d1: usize, layers: usize) -> DecoderSpec {
        DecoderSpec::new(
            arch,
            Activation::LeakyRelu,
            DecoderDims {
                input_dim: d0,
                hidden_dim: q,
                output_dim: d1,
                layers,
            },
        )
    }

    #[test]
    fn same_seed_same_params() {
        let s = spec(Architecture::Lstm, 5, 4, 3, 2);
        assert_eq!(init_params(s, 7).unwrap(), init_params(s, 7).unwrap());
        assert_ne!(init_params(s, 7).unwrap(), init_params(s, 8).unwrap());
    }

    #[test]
    fn cora_sized_rnn_parameter_count() {
        let p = init_params(spec(Architecture::Rnn, 1433, 32, 7, 2), 0).unwrap();
        let expect = (1433 * 32 + 32) + 2 * (32 * 32 + 32 * 32 + 32) + (32 * 7 + 7);
        assert_eq!(p.num_parameters(), expect);
    }

    #[test]
    fn init_bounds_and_biases() {
        let p = init_params(spec(Architecture::Lstm, 6, 4, 2, 1), 3).unwrap();
        let bound = (6.0f64 / (16 + 4) as f64).sqrt();
        if let RecurrentLayer::Lstm { w_ih, b, .. } = &p.weights.layers[0] {
            assert!(w_ih.data.iter().all(|x| x.abs() <= bound));
            assert_eq!(&b[0..4], &[0.0; 4]);
            assert_eq!(&b[4..8], &[1.0; 4]);
            assert_eq!(&b[8..], &[0.0; 8]);
        } else {
            panic!("expected lstm");
        }
        assert!(p.weights.head.bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bad_dimensions() {
        assert!(matches!(
            init_params(spec(Architecture::Rnn, 0, 4, 2, 1), 0),
            Err(Error::BadDimensions(_))
        ));
        assert!(init_params(spec(Architecture::Rnn, 3, 4, 2, 0), 0).is_err());
    }

    #[test]
    fn cornn_defaults() {
        let s = spec(Architecture::Cornn, 2, 3, 1, 1);
        assert_eq!(s.cornn, CornnScalars { gamma: 1.0, epsilon: 1.0, dt: 1.0 });
    }
}
