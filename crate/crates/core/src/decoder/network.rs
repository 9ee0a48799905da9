//! Batched forward pass and backpropagation through time.
//!
//! Internal buffers are step-major: `buf[(t * batch + b) * width + c]`, so a
//! whole time step of the batch is one contiguous `batch × width` block.

use rand::{Rng, RngCore};

use super::activation::sigmoid;
use super::{Activation, DecoderParams, DecoderSpec, EmbeddingPlacement, GradientSet, RecurrentLayer};
use crate::encoder::NodeSequences;
use crate::error::{Error, Result};
use crate::linalg::{gemm_nn_acc, gemm_nt_acc, gemm_tn_acc, sum_rows_acc, Mat};

/// Inverted dropout applied to the decoder input at every step and to the
/// final state before the head.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

struct LayerCache {
    /// Pre-activations (RNN, CoRNN) or activated gates (LSTM).
    pre: Vec<f64>,
    /// Hidden outputs `s`, `h` or `y`.
    out: Vec<f64>,
    /// LSTM cell state or CoRNN velocity `z`.
    aux: Vec<f64>,
}

/// Intermediate values recorded by a forward pass.
pub struct Tape {
    spec: DecoderSpec,
    nodes: Vec<usize>,
    batch: usize,
    len: usize,
    raw: Vec<f64>,
    emb_pre: Option<Vec<f64>>,
    in_mask: Option<Vec<f64>>,
    layer_in: Vec<f64>,
    caches: Vec<LayerCache>,
    head_mask: Option<Vec<f64>>,
    head_in: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    /// Final hidden state of the top layer, before dropout.
    pub fn final_state(&self) -> &[f64] {
        let q = self.spec.dims.hidden_dim;
        let out = &self.caches.last().expect("at least one layer").out;
        &out[(self.len - 1) * self.batch * q..]
    }
}

fn mask(rng: &mut dyn RngCore, rate: f64, len: usize) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn fill_bias(block: &mut [f64], bias: &[f64]) {
    for row in block.chunks_mut(bias.len()) {
        row.copy_from_slice(bias);
    }
}

/// Apply the node-wise embedding to raw features: `act(x Wᵀ + b)`.
/// Returns the output and the pre-activation.
pub fn embed_features(params: &DecoderParams, x: &Mat) -> Result<(Mat, Mat)> {
    let emb = &params.weights.embedding;
    if x.cols != emb.weight.cols {
        return Err(Error::ShapeMismatch(format!(
            "features have width {}, embedding expects {}",
            x.cols, emb.weight.cols
        )));
    }
    let mut pre = Mat::zeros(x.rows, emb.weight.rows);
    fill_bias(&mut pre.data, &emb.bias);
    gemm_nt_acc(&x.data, x.rows, &emb.weight, &mut pre.data);
    let out = match params.spec.embedding_activation {
        Some(act) => Mat {
            rows: pre.rows,
            cols: pre.cols,
            data: pre.data.iter().map(|&p| act.apply(p)).collect(),
        },
        None => pre.clone(),
    };
    Ok((out, pre))
}

/// Accumulate embedding gradients from `d_out = ∂ℓ/∂(embedded features)`.
pub fn embed_features_backward(
    params: &DecoderParams,
    x: &Mat,
    pre: &Mat,
    d_out: &Mat,
    grads: &mut GradientSet,
) -> Result<()> {
    if d_out.shape() != pre.shape() || x.rows != pre.rows {
        return Err(Error::ShapeMismatch(
            "embedding gradient does not match cached shapes".into(),
        ));
    }
    let d_pre: Vec<f64> = match params.spec.embedding_activation {
        Some(act) => d_out
            .data
            .iter()
            .zip(&pre.data)
            .map(|(g, &p)| g * act.derivative(p))
            .collect(),
        None => d_out.data.clone(),
    };
    let g = &mut grads.weights.embedding;
    gemm_tn_acc(&d_pre, &x.data, x.rows, &mut g.weight);
    sum_rows_acc(&d_pre, x.rows, &mut g.bias);
    Ok(())
}

/// Decode a single sequence (`N × width`). Returns the `d1` outputs.
pub fn forward(
    params: &DecoderParams,
    sequence: &Mat,
    dropout: Option<Dropout<'_>>,
) -> Result<(Vec<f64>, Tape)> {
    let seqs = NodeSequences {
        nodes: vec![0],
        len: sequence.rows,
        width: sequence.cols,
        data: sequence.data.clone(),
    };
    let (out, tape) = forward_batch(params, &seqs, dropout)?;
    Ok((out.data, tape))
}

/// Gradients for a single-sequence tape. Also returns `∂ℓ/∂sequence`.
pub fn backward(
    params: &DecoderParams,
    tape: &Tape,
    output_grad: &[f64],
) -> Result<(GradientSet, Mat)> {
    let dy = Mat::from_vec(1, output_grad.len(), output_grad.to_vec())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let (g, d_in) = backward_batch(params, tape, &dy)?;
    Ok((g, d_in.sequence_mat(0)))
}

/// Decode every sequence in `seqs`; outputs are `batch × d1`.
pub fn forward_batch(
    params: &DecoderParams,
    seqs: &NodeSequences,
    dropout: Option<Dropout<'_>>,
) -> Result<(Mat, Tape)> {
    let spec = params.spec;
    let q = spec.dims.hidden_dim;
    let (m, len, w_seq) = (seqs.batch(), seqs.len, seqs.width);
    if w_seq != spec.sequence_width() {
        return Err(Error::ShapeMismatch(format!(
            "sequence width {w_seq}, decoder expects {}",
            spec.sequence_width()
        )));
    }
    if len == 0 {
        return Err(Error::ShapeMismatch("empty sequence".into()));
    }
    let mut dropout = dropout.filter(|d| d.rate > 0.0);
    if let Some(d) = &dropout {
        if !(0.0..1.0).contains(&d.rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} not in [0,1)", d.rate)));
        }
    }

    let mut raw = vec![0.0; len * m * w_seq];
    for b in 0..m {
        let src = seqs.sequence(b);
        for t in 0..len {
            raw[(t * m + b) * w_seq..(t * m + b + 1) * w_seq]
                .copy_from_slice(&src[t * w_seq..(t + 1) * w_seq]);
        }
    }

    let (mut layer_in, emb_pre) = match spec.placement {
        EmbeddingPlacement::PrePropagation => (raw.clone(), None),
        EmbeddingPlacement::PostPropagation => {
            let emb = &params.weights.embedding;
            let mut pre = vec![0.0; len * m * q];
            fill_bias(&mut pre, &emb.bias);
            gemm_nt_acc(&raw, len * m, &emb.weight, &mut pre);
            match spec.embedding_activation {
                Some(act) => {
                    let out = pre.iter().map(|&p| act.apply(p)).collect();
                    (out, Some(pre))
                }
                None => (pre, None),
            }
        }
    };

    let in_mask = dropout.as_mut().map(|d| {
        let mk = mask(d.rng, d.rate, layer_in.len());
        layer_in.iter_mut().zip(&mk).for_each(|(x, k)| *x *= k);
        mk
    });

    let mut caches: Vec<LayerCache> = Vec::with_capacity(spec.dims.layers);
    for (l, layer) in params.weights.layers.iter().enumerate() {
        let input = if l == 0 { &layer_in } else { &caches[l - 1].out };
        let cache = layer_forward(&spec, layer, input, m, len);
        caches.push(cache);
    }

    let last = &caches.last().expect("at least one layer").out;
    let mut head_in = last[(len - 1) * m * q..].to_vec();
    let head_mask = dropout.as_mut().map(|d| {
        let mk = mask(d.rng, d.rate, head_in.len());
        head_in.iter_mut().zip(&mk).for_each(|(x, k)| *x *= k);
        mk
    });
    let head = &params.weights.head;
    let mut out = Mat::zeros(m, spec.dims.output_dim);
    fill_bias(&mut out.data, &head.bias);
    gemm_nt_acc(&head_in, m, &head.weight, &mut out.data);

    let tape = Tape {
        spec,
        nodes: seqs.nodes.clone(),
        batch: m,
        len,
        raw,
        emb_pre,
        in_mask,
        layer_in,
        caches,
        head_mask,
        head_in,
    };
    Ok((out, tape))
}

fn layer_forward(
    spec: &DecoderSpec,
    layer: &RecurrentLayer,
    input: &[f64],
    m: usize,
    len: usize,
) -> LayerCache {
    let q = spec.dims.hidden_dim;
    let act = spec.activation;
    let w_in = input.len() / (len * m);
    let step_in = |t: usize| &input[t * m * w_in..(t + 1) * m * w_in];
    let blk = m * q;
    match layer {
        RecurrentLayer::Rnn { w, u, b } => {
            let mut pre = vec![0.0; len * blk];
            let mut out = vec![0.0; len * blk];
            for t in 0..len {
                let pt = &mut pre[t * blk..(t + 1) * blk];
                fill_bias(pt, b);
                gemm_nt_acc(step_in(t), m, u, pt);
                if t > 0 {
                    gemm_nt_acc(&out[(t - 1) * blk..t * blk], m, w, pt);
                }
                for (o, &p) in out[t * blk..(t + 1) * blk].iter_mut().zip(pt.iter()) {
                    *o = act.apply(p);
                }
            }
            LayerCache {
                pre,
                out,
                aux: Vec::new(),
            }
        }
        RecurrentLayer::Lstm { w_ih, w_hh, b } => {
            let gblk = 4 * blk;
            let mut gates = vec![0.0; len * gblk];
            let mut c = vec![0.0; len * blk];
            let mut h = vec![0.0; len * blk];
            for t in 0..len {
                let gt = &mut gates[t * gblk..(t + 1) * gblk];
                fill_bias(gt, b);
                gemm_nt_acc(step_in(t), m, w_ih, gt);
                if t > 0 {
                    gemm_nt_acc(&h[(t - 1) * blk..t * blk], m, w_hh, gt);
                }
                for r in 0..m {
                    let g = &mut gt[r * 4 * q..(r + 1) * 4 * q];
                    for j in 0..q {
                        let i_g = sigmoid(g[j]);
                        let f_g = sigmoid(g[q + j]);
                        let c_g = g[2 * q + j].tanh();
                        let o_g = sigmoid(g[3 * q + j]);
                        g[j] = i_g;
                        g[q + j] = f_g;
                        g[2 * q + j] = c_g;
                        g[3 * q + j] = o_g;
                        let idx = t * blk + r * q + j;
                        let c_prev = if t > 0 { c[idx - blk] } else { 0.0 };
                        c[idx] = f_g * c_prev + i_g * c_g;
                        h[idx] = o_g * c[idx].tanh();
                    }
                }
            }
            LayerCache {
                pre: gates,
                out: h,
                aux: c,
            }
        }
        RecurrentLayer::Cornn { w, w_tilde, v_in, b } => {
            let s = spec.cornn;
            let mut pre = vec![0.0; len * blk];
            let mut y = vec![0.0; len * blk];
            let mut z = vec![0.0; len * blk];
            for t in 0..len {
                let pt = &mut pre[t * blk..(t + 1) * blk];
                fill_bias(pt, b);
                gemm_nt_acc(step_in(t), m, v_in, pt);
                if t > 0 {
                    gemm_nt_acc(&y[(t - 1) * blk..t * blk], m, w, pt);
                    gemm_nt_acc(&z[(t - 1) * blk..t * blk], m, w_tilde, pt);
                }
                for k in 0..blk {
                    let idx = t * blk + k;
                    let (yp, zp) = if t > 0 {
                        (y[idx - blk], z[idx - blk])
                    } else {
                        (0.0, 0.0)
                    };
                    z[idx] = zp + s.dt * (act.apply(pt[k]) - s.gamma * yp - s.epsilon * zp);
                    y[idx] = yp + s.dt * z[idx];
                }
            }
            LayerCache { pre, out: y, aux: z }
        }
    }
}

/// Backpropagate `dy = ∂ℓ/∂outputs` (`batch × d1`) through a recorded pass.
/// Returns parameter gradients and `∂ℓ/∂sequences`.
pub fn backward_batch(
    params: &DecoderParams,
    tape: &Tape,
    dy: &Mat,
) -> Result<(GradientSet, NodeSequences)> {
    if tape.spec != params.spec {
        return Err(Error::TapeMismatch(
            "tape was recorded with a different decoder configuration".into(),
        ));
    }
    let spec = params.spec;
    let (m, len, q) = (tape.batch, tape.len, spec.dims.hidden_dim);
    if dy.shape() != (m, spec.dims.output_dim) {
        return Err(Error::TapeMismatch(format!(
            "output gradient is {:?}, tape expects ({m}, {})",
            dy.shape(),
            spec.dims.output_dim
        )));
    }
    let mut grads = GradientSet::zeros_for(params);
    let gw = &mut grads.weights;

    let head = &params.weights.head;
    gemm_tn_acc(&dy.data, &tape.head_in, m, &mut gw.head.weight);
    sum_rows_acc(&dy.data, m, &mut gw.head.bias);
    let mut d_final = vec![0.0; m * q];
    gemm_nn_acc(&dy.data, m, &head.weight, &mut d_final);
    if let Some(mk) = &tape.head_mask {
        d_final.iter_mut().zip(mk).for_each(|(g, k)| *g *= k);
    }

    let mut d_out = vec![0.0; len * m * q];
    d_out[(len - 1) * m * q..].copy_from_slice(&d_final);
    for l in (0..spec.dims.layers).rev() {
        let input = if l == 0 {
            &tape.layer_in
        } else {
            &tape.caches[l - 1].out
        };
        d_out = layer_backward(
            &spec,
            &params.weights.layers[l],
            &mut gw.layers[l],
            &tape.caches[l],
            input,
            &d_out,
            m,
            len,
        );
    }

    let mut d_in = d_out;
    if let Some(mk) = &tape.in_mask {
        d_in.iter_mut().zip(mk).for_each(|(g, k)| *g *= k);
    }
    let w_seq = spec.sequence_width();
    let d_raw = match spec.placement {
        EmbeddingPlacement::PrePropagation => d_in,
        EmbeddingPlacement::PostPropagation => {
            if let (Some(act), Some(pre)) = (spec.embedding_activation, &tape.emb_pre) {
                d_in.iter_mut()
                    .zip(pre)
                    .for_each(|(g, &p)| *g *= act.derivative(p));
            }
            let emb = &params.weights.embedding;
            gemm_tn_acc(&d_in, &tape.raw, len * m, &mut gw.embedding.weight);
            sum_rows_acc(&d_in, len * m, &mut gw.embedding.bias);
            let mut d_raw = vec![0.0; len * m * w_seq];
            gemm_nn_acc(&d_in, len * m, &emb.weight, &mut d_raw);
            d_raw
        }
    };

    let mut d_seq = NodeSequences::zeros(tape.nodes.clone(), len, w_seq);
    for b in 0..m {
        let dst = d_seq.sequence_mut(b);
        for t in 0..len {
            dst[t * w_seq..(t + 1) * w_seq]
                .copy_from_slice(&d_raw[(t * m + b) * w_seq..(t * m + b + 1) * w_seq]);
        }
    }
    Ok((grads, d_seq))
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    spec: &DecoderSpec,
    layer: &RecurrentLayer,
    grad: &mut RecurrentLayer,
    cache: &LayerCache,
    input: &[f64],
    d_out: &[f64],
    m: usize,
    len: usize,
) -> Vec<f64> {
    let q = spec.dims.hidden_dim;
    let act: Activation = spec.activation;
    let w_in = input.len() / (len * m);
    let blk = m * q;
    let mut d_in = vec![0.0; len * m * w_in];
    match (layer, grad) {
        (RecurrentLayer::Rnn { w, u, .. }, RecurrentLayer::Rnn { w: gw, u: gu, b: gb }) => {
            let mut dpre = vec![0.0; len * blk];
            let mut ds_next = vec![0.0; blk];
            for t in (0..len).rev() {
                let dp = &mut dpre[t * blk..(t + 1) * blk];
                for k in 0..blk {
                    let idx = t * blk + k;
                    dp[k] = (d_out[idx] + ds_next[k]) * act.derivative(cache.pre[idx]);
                }
                ds_next.iter_mut().for_each(|x| *x = 0.0);
                if t > 0 {
                    gemm_nn_acc(dp, m, w, &mut ds_next);
                }
            }
            gemm_tn_acc(&dpre, input, len * m, gu);
            if len > 1 {
                gemm_tn_acc(&dpre[blk..], &cache.out[..(len - 1) * blk], (len - 1) * m, gw);
            }
            sum_rows_acc(&dpre, len * m, gb);
            gemm_nn_acc(&dpre, len * m, u, &mut d_in);
        }
        (
            RecurrentLayer::Lstm { w_ih, w_hh, .. },
            RecurrentLayer::Lstm {
                w_ih: g_ih,
                w_hh: g_hh,
                b: gb,
            },
        ) => {
            let gblk = 4 * blk;
            let mut dgates = vec![0.0; len * gblk];
            let mut dh_next = vec![0.0; blk];
            let mut dc_next = vec![0.0; blk];
            for t in (0..len).rev() {
                let a = &cache.pre[t * gblk..(t + 1) * gblk];
                let dg = &mut dgates[t * gblk..(t + 1) * gblk];
                for r in 0..m {
                    for j in 0..q {
                        let k = r * q + j;
                        let idx = t * blk + k;
                        let gi = r * 4 * q + j;
                        let (i_g, f_g, c_g, o_g) = (a[gi], a[gi + q], a[gi + 2 * q], a[gi + 3 * q]);
                        let tc = cache.aux[idx].tanh();
                        let dh = d_out[idx] + dh_next[k];
                        let dc = dc_next[k] + dh * o_g * (1.0 - tc * tc);
                        let c_prev = if t > 0 { cache.aux[idx - blk] } else { 0.0 };
                        dg[gi] = dc * c_g * i_g * (1.0 - i_g);
                        dg[gi + q] = dc * c_prev * f_g * (1.0 - f_g);
                        dg[gi + 2 * q] = dc * i_g * (1.0 - c_g * c_g);
                        dg[gi + 3 * q] = dh * tc * o_g * (1.0 - o_g);
                        dc_next[k] = dc * f_g;
                    }
                }
                dh_next.iter_mut().for_each(|x| *x = 0.0);
                if t > 0 {
                    gemm_nn_acc(dg, m, w_hh, &mut dh_next);
                }
            }
            gemm_tn_acc(&dgates, input, len * m, g_ih);
            if len > 1 {
                gemm_tn_acc(&dgates[gblk..], &cache.out[..(len - 1) * blk], (len - 1) * m, g_hh);
            }
            sum_rows_acc(&dgates, len * m, gb);
            gemm_nn_acc(&dgates, len * m, w_ih, &mut d_in);
        }
        (
            RecurrentLayer::Cornn { w, w_tilde, v_in, .. },
            RecurrentLayer::Cornn {
                w: gw,
                w_tilde: gwt,
                v_in: gv,
                b: gb,
            },
        ) => {
            let s = spec.cornn;
            let mut dpre = vec![0.0; len * blk];
            // gradients flowing into y_t and z_t from step t+1
            let mut gy_carry = vec![0.0; blk];
            let mut gz_carry = vec![0.0; blk];
            for t in (0..len).rev() {
                let dp = &mut dpre[t * blk..(t + 1) * blk];
                for k in 0..blk {
                    let idx = t * blk + k;
                    let gy = d_out[idx] + gy_carry[k];
                    let gz = gz_carry[k] + s.dt * gy;
                    dp[k] = s.dt * gz * act.derivative(cache.pre[idx]);
                    gy_carry[k] = gy - s.dt * s.gamma * gz;
                    gz_carry[k] = gz * (1.0 - s.dt * s.epsilon);
                }
                if t > 0 {
                    gemm_nn_acc(dp, m, w, &mut gy_carry);
                    gemm_nn_acc(dp, m, w_tilde, &mut gz_carry);
                }
            }
            gemm_tn_acc(&dpre, input, len * m, gv);
            if len > 1 {
                let prev = (len - 1) * blk;
                gemm_tn_acc(&dpre[blk..], &cache.out[..prev], (len - 1) * m, gw);
                gemm_tn_acc(&dpre[blk..], &cache.aux[..prev], (len - 1) * m, gwt);
            }
            sum_rows_acc(&dpre, len * m, gb);
            gemm_nn_acc(&dpre, len * m, v_in, &mut d_in);
        }
        _ => unreachable!("gradient layout mirrors parameters"),
    }
    d_in
}
