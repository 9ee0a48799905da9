//! Node-level training: losses, Adam, learning-rate schedule, early stopping.
//!
//! One epoch evaluates the validation and test vertices with the current
//! weights, then takes one optimizer step per batch of training vertices.
//! With the embedding placed before propagation, every step re-runs the
//! encoder on the embedded features and backpropagates through it with the
//! exact adjoint recurrence.

mod loss;
mod optim;

pub use loss::{accuracy, argmax, l1_loss, masked_cross_entropy, mean_absolute_error};
pub use optim::{adam_step, AdamConfig, AdamState, Schedule, Scheduler};

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{
    backward_batch, embed_features, embed_features_backward, forward_batch, init_params,
    Activation, Architecture, CornnScalars, DecoderDims, DecoderParams, DecoderSpec, Dropout,
    EmbeddingPlacement, GradientSet, Tape,
};
use crate::encoder::{propagate_adjoint, propagate_sequences, NodeSequences, SequenceLayout, WaveConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, Masks};
use crate::linalg::Mat;
use crate::operator::{build_operator, LaplacianOperator, Variant};
use crate::par;

/// Vertices decoded together in one batched forward pass. Fixed so that the
/// gradient reduction order does not depend on the thread count.
pub const DECODE_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    MeanAbsoluteError,
}

impl MetricKind {
    /// Higher is better after this transform.
    fn oriented(self, value: f64) -> f64 {
        match self {
            MetricKind::Accuracy => value,
            MetricKind::MeanAbsoluteError => -value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Recurrent layers `L`.
    pub layers: usize,
    /// Time steps `N`.
    pub steps: usize,
    /// Step size `h`.
    pub step_size: f64,
    /// Optional `T`; must equal `N·h` when given.
    pub stop_time: Option<f64>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub activation: Activation,
    pub hidden_dim: usize,
    pub normalized: bool,
    pub dropout: f64,
    pub self_loops: bool,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub schedule: Schedule,
    /// Patience in epochs on validation loss; `None` disables.
    pub early_stopping: Option<usize>,
    pub architecture: Architecture,
    pub placement: EmbeddingPlacement,
    pub embedding_activation: Option<Activation>,
    pub include_velocity: bool,
    pub include_initial: bool,
    pub cornn: CornnScalars,
    /// Training vertices per optimizer step; `None` is full batch.
    pub batch_size: Option<usize>,
    /// Reuse the propagated signal across epochs when it does not depend on
    /// trainable weights (post-propagation embedding).
    pub cache_signal: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 1,
            steps: 10,
            step_size: 0.1,
            stop_time: None,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            activation: Activation::LeakyRelu,
            hidden_dim: 32,
            normalized: false,
            dropout: 0.0,
            self_loops: false,
            epochs: 300,
            seed: 0,
            loss: LossKind::CrossEntropy,
            schedule: Schedule::default(),
            early_stopping: Some(50),
            architecture: Architecture::Cornn,
            placement: EmbeddingPlacement::PrePropagation,
            embedding_activation: None,
            include_velocity: false,
            include_initial: false,
            cornn: CornnScalars::default(),
            batch_size: None,
            cache_signal: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps (N) must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(invalid("layers and hidden_dim must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size must be positive"));
        }
        if let Schedule::ReduceOnPlateau { factor, min_lr, .. } = self.schedule {
            if !(factor > 0.0 && factor < 1.0) || !(min_lr >= 0.0) {
                return Err(invalid("plateau factor must lie in (0, 1), min_lr >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.wave()?;
        Ok(())
    }

    pub fn wave(&self) -> Result<WaveConfig> {
        let w = match self.stop_time {
            Some(t) => WaveConfig::checked(self.steps, self.step_size, t),
            None => WaveConfig::new(self.steps, self.step_size),
        };
        w.map_err(|e| invalid(e.to_string()))
    }

    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.normalized, self.self_loops)
    }

    pub fn layout(&self) -> SequenceLayout {
        SequenceLayout {
            include_velocity: self.include_velocity,
            include_initial: self.include_initial,
        }
    }

    pub fn decoder_spec(&self, input_dim: usize, output_dim: usize) -> DecoderSpec {
        DecoderSpec {
            architecture: self.architecture,
            activation: self.activation,
            dims: DecoderDims {
                input_dim,
                hidden_dim: self.hidden_dim,
                output_dim,
                layers: self.layers,
            },
            embedding_activation: self.embedding_activation,
            placement: self.placement,
            include_velocity: self.include_velocity,
            cornn: self.cornn,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_metric: f64,
    pub val_loss: Option<f64>,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config_hash: String,
    pub metric: MetricKind,
    pub num_parameters: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (selected on validation).
    pub best_epoch: usize,
    pub best_val_metric: Option<f64>,
    pub test_metric: Option<f64>,
    pub stopped_early: bool,
    pub notes: Vec<String>,
    /// Not serialized, so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Encoded sequences for a set of vertices, plus what backpropagation into
/// a pre-propagation embedding needs.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub seqs: NodeSequences,
    embed_pre: Option<Mat>,
}

impl Encoded {
    pub fn select(&self, positions: &[usize]) -> Encoded {
        Encoded {
            seqs: self.seqs.select(positions),
            embed_pre: self.embed_pre.clone(),
        }
    }
}

/// Graph, operator, encoder and decoder layout bound together.
pub struct Pipeline<'g> {
    graph: &'g Graph,
    config: TrainConfig,
    op: LaplacianOperator,
    wave: WaveConfig,
    spec: DecoderSpec,
}

fn chunks(len: usize) -> Vec<Range<usize>> {
    (0..len)
        .step_by(DECODE_CHUNK)
        .map(|s| s..(s + DECODE_CHUNK).min(len))
        .collect()
}

fn dropout_rng(seed: u64, epoch: u64, batch: u64, chunk: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, epoch, batch, chunk].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

impl<'g> Pipeline<'g> {
    pub fn new(graph: &'g Graph, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let wave = config.wave()?;
        let op = build_operator(graph, config.variant());
        let spec = config.decoder_spec(graph.feature_dim(), graph.labels().output_dim());
        spec.validate()?;
        Ok(Pipeline {
            graph,
            config: config.clone(),
            op,
            wave,
            spec,
        })
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn operator(&self) -> &LaplacianOperator {
        &self.op
    }

    pub fn wave(&self) -> WaveConfig {
        self.wave
    }

    pub fn spec(&self) -> DecoderSpec {
        self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn init_params(&self) -> Result<DecoderParams> {
        init_params(self.spec, self.config.seed)
    }

    /// Encoder output for `nodes` under the current weights.
    pub fn encode(&self, params: &DecoderParams, nodes: &[usize]) -> Result<Encoded> {
        self.encode_features(params, self.graph.features(), nodes)
    }

    /// As [`Pipeline::encode`] with replacement raw features.
    pub fn encode_features(
        &self,
        params: &DecoderParams,
        features: &Mat,
        nodes: &[usize],
    ) -> Result<Encoded> {
        let layout = self.config.layout();
        match self.spec.placement {
            EmbeddingPlacement::PrePropagation => {
                let (emb, pre) = embed_features(params, features)?;
                let seqs = propagate_sequences(&self.op, &emb, self.wave, nodes, layout)?;
                Ok(Encoded {
                    seqs,
                    embed_pre: Some(pre),
                })
            }
            EmbeddingPlacement::PostPropagation => {
                let seqs = propagate_sequences(&self.op, features, self.wave, nodes, layout)?;
                Ok(Encoded {
                    seqs,
                    embed_pre: None,
                })
            }
        }
    }

    /// Decoder outputs for every sequence, no dropout, tapes discarded.
    pub fn predict(&self, params: &DecoderParams, seqs: &NodeSequences) -> Result<Mat> {
        let parts = par::map(&chunks(seqs.batch()), |r| {
            let pos: Vec<usize> = r.clone().collect();
            forward_batch(params, &seqs.select(&pos), None).map(|(out, _)| out)
        });
        let mut out = Mat::zeros(seqs.batch(), self.spec.dims.output_dim);
        let w = out.cols;
        for (r, part) in chunks(seqs.batch()).into_iter().zip(parts) {
            out.data[r.start * w..r.end * w].copy_from_slice(&part?.data);
        }
        Ok(out)
    }

    /// Decoder outputs with tapes, dropout keyed by `(epoch, batch)`.
    pub fn decode_for_training(
        &self,
        params: &DecoderParams,
        seqs: &NodeSequences,
        key: Option<(u64, u64)>,
    ) -> Result<(Mat, Vec<Tape>)> {
        let rate = self.config.dropout;
        let seed = self.config.seed;
        let ranges = chunks(seqs.batch());
        let indexed: Vec<(usize, Range<usize>)> = ranges.into_iter().enumerate().collect();
        let parts = par::map(&indexed, |(ci, r)| {
            let pos: Vec<usize> = r.clone().collect();
            let sub = seqs.select(&pos);
            match key {
                Some((epoch, batch)) if rate > 0.0 => {
                    let mut rng = dropout_rng(seed, epoch, batch, *ci as u64);
                    forward_batch(params, &sub, Some(Dropout { rate, rng: &mut rng }))
                }
                _ => forward_batch(params, &sub, None),
            }
        });
        let mut out = Mat::zeros(seqs.batch(), self.spec.dims.output_dim);
        let w = out.cols;
        let mut tapes = Vec::with_capacity(parts.len());
        for ((_, r), part) in indexed.iter().zip(parts) {
            let (o, tape) = part?;
            out.data[r.start * w..r.end * w].copy_from_slice(&o.data);
            tapes.push(tape);
        }
        Ok((out, tapes))
    }

    /// Gradients of all weights from `dy = ∂ℓ/∂outputs`, including the
    /// path through the encoder into a pre-propagation embedding.
    pub fn backpropagate(
        &self,
        params: &DecoderParams,
        encoded: &Encoded,
        tapes: &[Tape],
        dy: &Mat,
    ) -> Result<GradientSet> {
        let (grads, d_seq) = self.backpropagate_to_sequences(params, encoded, tapes, dy)?;
        let mut grads = grads;
        if let Some(pre) = &encoded.embed_pre {
            let d_emb = propagate_adjoint(
                &self.op,
                self.wave,
                &d_seq,
                self.config.layout(),
                self.spec.dims.hidden_dim,
            )?;
            embed_features_backward(params, self.graph.features(), pre, &d_emb, &mut grads)?;
        }
        Ok(grads)
    }

    /// Decoder gradients and `∂ℓ/∂sequences`, reduced over chunks in order.
    pub fn backpropagate_to_sequences(
        &self,
        params: &DecoderParams,
        encoded: &Encoded,
        tapes: &[Tape],
        dy: &Mat,
    ) -> Result<(GradientSet, NodeSequences)> {
        let ranges = chunks(encoded.seqs.batch());
        if ranges.len() != tapes.len() || dy.rows != encoded.seqs.batch() {
            return Err(Error::TapeMismatch(format!(
                "{} tapes and {} gradient rows for {} sequences",
                tapes.len(),
                dy.rows,
                encoded.seqs.batch()
            )));
        }
        let work: Vec<(&Tape, Range<usize>)> = tapes.iter().zip(ranges).collect();
        let w = dy.cols;
        let parts = par::map(&work, |(tape, r)| {
            let dchunk = Mat {
                rows: r.len(),
                cols: w,
                data: dy.data[r.start * w..r.end * w].to_vec(),
            };
            backward_batch(params, tape, &dchunk)
        });
        let mut grads = GradientSet::zeros_for(params);
        let seqs = &encoded.seqs;
        let mut d_seq = NodeSequences::zeros(seqs.nodes.clone(), seqs.len, seqs.width);
        let stride = seqs.len * seqs.width;
        for ((_, r), part) in work.iter().zip(parts) {
            let (g, d) = part?;
            grads.weights.add_assign(&g.weights)?;
            d_seq.data[r.start * stride..r.end * stride].copy_from_slice(&d.data);
        }
        Ok((grads, d_seq))
    }

    fn metric_kind(&self) -> MetricKind {
        match self.config.loss {
            LossKind::CrossEntropy => MetricKind::Accuracy,
            LossKind::L1 => MetricKind::MeanAbsoluteError,
        }
    }

    fn check_labels(&self) -> Result<()> {
        match (self.config.loss, self.graph.labels()) {
            (LossKind::CrossEntropy, Labels::Classes { .. }) | (LossKind::L1, Labels::Targets(_)) => {
                Ok(())
            }
            (loss, _) => Err(invalid(format!(
                "loss {loss:?} does not match the graph's label type"
            ))),
        }
    }

    /// Loss, `∂ℓ/∂outputs` and metric for outputs of `nodes`.
    fn score(&self, out: &Mat, nodes: &[usize]) -> Result<(f64, Mat, f64)> {
        let all = vec![true; nodes.len()];
        match (self.config.loss, self.graph.labels()) {
            (LossKind::CrossEntropy, Labels::Classes { values, .. }) => {
                let labels: Vec<usize> = nodes.iter().map(|&v| values[v]).collect();
                let (l, g) = masked_cross_entropy(out, &labels, &all)?;
                Ok((l, g, accuracy(out, &labels, &all)?))
            }
            (LossKind::L1, Labels::Targets(t)) => {
                let mut target = Mat::zeros(nodes.len(), t.cols);
                for (i, &v) in nodes.iter().enumerate() {
                    target.row_mut(i).copy_from_slice(t.row(v));
                }
                let (l, g) = l1_loss(out, &target, &all)?;
                Ok((l, g, l))
            }
            (loss, _) => Err(invalid(format!(
                "loss {loss:?} does not match the graph's label type"
            ))),
        }
    }

    /// Full-batch training loss and gradient at `params` (dropout off).
    pub fn loss_and_gradient(&self, params: &DecoderParams) -> Result<(f64, GradientSet)> {
        let nodes = Masks::indices(&self.graph.masks().train);
        if nodes.is_empty() {
            return Err(Error::EmptyMask);
        }
        let enc = self.encode(params, &nodes)?;
        let (out, tapes) = self.decode_for_training(params, &enc.seqs, None)?;
        let (loss, dy, _) = self.score(&out, &nodes)?;
        let grads = self.backpropagate(params, &enc, &tapes, &dy)?;
        Ok((loss, grads))
    }

    /// Full-batch training loss at `params` (dropout off).
    pub fn loss(&self, params: &DecoderParams) -> Result<f64> {
        let nodes = Masks::indices(&self.graph.masks().train);
        if nodes.is_empty() {
            return Err(Error::EmptyMask);
        }
        let enc = self.encode(params, &nodes)?;
        let out = self.predict(params, &enc.seqs)?;
        Ok(self.score(&out, &nodes)?.0)
    }

    /// Metric on the vertices selected by `mask`.
    pub fn evaluate(&self, params: &DecoderParams, mask: &[bool]) -> Result<f64> {
        let nodes = Masks::indices(mask);
        if nodes.is_empty() {
            return Err(Error::EmptyMask);
        }
        let enc = self.encode(params, &nodes)?;
        let out = self.predict(params, &enc.seqs)?;
        Ok(self.score(&out, &nodes)?.2)
    }
}

/// Metric (accuracy or MAE, by the configured loss) of `params` on `mask`.
pub fn evaluate(
    params: &DecoderParams,
    graph: &Graph,
    config: &TrainConfig,
    mask: &[bool],
) -> Result<f64> {
    let pipe = Pipeline::new(graph, config)?;
    if params.spec != pipe.spec {
        return Err(Error::ShapeMismatch(
            "parameters were built for a different configuration".into(),
        ));
    }
    pipe.evaluate(params, mask)
}

/// Train from the configured seed. Returns the weights of the epoch with the
/// best validation metric and a report of the run.
pub fn train(graph: &Graph, config: &TrainConfig) -> Result<(DecoderParams, TrainReport)> {
    let start = Instant::now();
    let pipe = Pipeline::new(graph, config)?;
    let metric = pipe.metric_kind();
    pipe.check_labels()?;

    let masks = graph.masks();
    let train_nodes = Masks::indices(&masks.train);
    if train_nodes.is_empty() {
        return Err(Error::EmptyMask);
    }
    let val_nodes = Masks::indices(&masks.val);
    let test_nodes = Masks::indices(&masks.test);
    let mut all_nodes: Vec<usize> = train_nodes
        .iter()
        .chain(&val_nodes)
        .chain(&test_nodes)
        .copied()
        .collect();
    all_nodes.sort_unstable();
    all_nodes.dedup();
    let position = |v: usize| all_nodes.binary_search(&v).expect("node listed");
    let train_pos: Vec<usize> = train_nodes.iter().map(|&v| position(v)).collect();
    let val_pos: Vec<usize> = val_nodes.iter().map(|&v| position(v)).collect();
    let test_pos: Vec<usize> = test_nodes.iter().map(|&v| position(v)).collect();
    let eval_pos: Vec<usize> = val_pos.iter().chain(&test_pos).copied().collect();

    let mut notes = Vec::new();
    if let Some(w) = pipe.wave.stability(pipe.op.max_eigenvalue_bound()) {
        notes.push(format!(
            "step size {} exceeds the stability limit (h*sqrt(lambda_max) = {:.3})",
            w.step_size, w.courant
        ));
    }

    let mut params = pipe.init_params()?;
    let mut adam = AdamState::new(&params.weights);
    let mut adam_cfg = config.adam();
    let mut scheduler = Scheduler::new(config.schedule);
    let post = pipe.spec.placement == EmbeddingPlacement::PostPropagation;
    let cached = if post && config.cache_signal {
        Some(pipe.encode(&params, &all_nodes)?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<((f64, f64), usize, DecoderParams, Option<f64>, Option<f64>)> = None;
    let mut best_val_loss = f64::INFINITY;
    let mut since_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let fresh;
        let enc: &Encoded = match &cached {
            Some(c) => c,
            None => {
                fresh = pipe.encode(&params, &all_nodes)?;
                &fresh
            }
        };

        let (mut val_loss, mut val_metric, mut test_metric) = (None, None, None);
        if !eval_pos.is_empty() {
            let out = pipe.predict(&params, &enc.seqs.select(&eval_pos))?;
            let split = val_pos.len();
            let take = |a: usize, b: usize| Mat {
                rows: b - a,
                cols: out.cols,
                data: out.data[a * out.cols..b * out.cols].to_vec(),
            };
            if split > 0 {
                let (l, _, m) = pipe.score(&take(0, split), &val_nodes)?;
                val_loss = Some(l);
                val_metric = Some(m);
            }
            if !test_pos.is_empty() {
                test_metric = Some(pipe.score(&take(split, eval_pos.len()), &test_nodes)?.2);
            }
        }
        let snapshot = params.clone();

        let batches: Vec<Vec<usize>> = match config.batch_size {
            None => vec![(0..train_pos.len()).collect()],
            Some(bs) => {
                let mut order: Vec<usize> = (0..train_pos.len()).collect();
                let mut rng = dropout_rng(config.seed, epoch as u64, u64::MAX, 0);
                order.shuffle(&mut rng);
                order.chunks(bs).map(|c| c.to_vec()).collect()
            }
        };
        let (mut train_loss, mut train_metric) = (0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            let nodes: Vec<usize> = batch.iter().map(|&i| train_nodes[i]).collect();
            let enc_b = if bi == 0 || cached.is_some() {
                let pos: Vec<usize> = batch.iter().map(|&i| train_pos[i]).collect();
                enc.select(&pos)
            } else {
                pipe.encode(&params, &nodes)?
            };
            let (out, tapes) =
                pipe.decode_for_training(&params, &enc_b.seqs, Some((epoch as u64, bi as u64)))?;
            let (loss, dy, m) = pipe.score(&out, &nodes)?;
            let grads = pipe.backpropagate(&params, &enc_b, &tapes, &dy)?;
            adam_step(&mut params.weights, &grads.weights, &mut adam, &adam_cfg)?;
            let share = nodes.len() as f64 / train_nodes.len() as f64;
            train_loss += share * loss;
            train_metric += share * m;
        }
        if !params.weights.is_finite() {
            return Err(Error::ConvergenceFailure(format!(
                "non-finite weights after epoch {epoch}"
            )));
        }

        records.push(EpochRecord {
            epoch,
            learning_rate: adam_cfg.lr,
            train_loss,
            train_metric,
            val_loss,
            val_metric,
        });

        let key = match (val_metric, val_loss) {
            (Some(m), Some(l)) => (metric.oriented(m), -l),
            _ => (-train_loss, 0.0),
        };
        if best.as_ref().is_none_or(|b| key > b.0) {
            best = Some((key, epoch, snapshot, val_metric, test_metric));
        }

        let monitored = val_loss.unwrap_or(train_loss);
        adam_cfg.lr = scheduler.step(monitored, adam_cfg.lr);
        if monitored < best_val_loss {
            best_val_loss = monitored;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if config.early_stopping.is_some_and(|p| since_improvement > p) {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_params, best_val_metric, test_metric) =
        best.expect("at least one epoch");
    let report = TrainReport {
        seed: config.seed,
        config_hash: config.hash(),
        metric,
        num_parameters: best_params.num_parameters(),
        epochs: records,
        best_epoch,
        best_val_metric,
        test_metric,
        stopped_early,
        notes,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
