//! Discrete wave propagation.
//!
//! Each step updates the velocity from the current position and then the
//! position from the new velocity:
//!
//! ```text
//! V^{i+1} = V^i - h L X^i
//! X^{i+1} = X^i + h V^{i+1}
//! X^0 = x,  V^0 = 0
//! ```
//!
//! Multi-column inputs are propagated columnwise (the operator acts on rows).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::LaplacianOperator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveConfig {
    steps: usize,
    step_size: f64,
}

/// Non-fatal: the step size exceeds the linear stability limit `h·√λmax < 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityWarning {
    pub step_size: f64,
    pub eigenvalue_bound: f64,
    pub courant: f64,
}

impl WaveConfig {
    pub fn new(steps: usize, step_size: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidWaveConfig("need at least one time step".into()));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidWaveConfig(format!(
                "step size must be positive, got {step_size}"
            )));
        }
        Ok(WaveConfig { steps, step_size })
    }

    /// `h = T / N`.
    pub fn from_stop_time(stop_time: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidWaveConfig("need at least one time step".into()));
        }
        WaveConfig::new(steps, stop_time / steps as f64)
    }

    /// Validate an explicit `(N, h, T)` triple.
    pub fn checked(steps: usize, step_size: f64, stop_time: f64) -> Result<Self> {
        let cfg = WaveConfig::new(steps, step_size)?;
        let t = cfg.stop_time();
        if (t - stop_time).abs() > 1e-12 * stop_time.abs().max(t.abs()) {
            return Err(Error::InvalidWaveConfig(format!(
                "stop time {stop_time} differs from N*h = {t}"
            )));
        }
        Ok(cfg)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn stop_time(&self) -> f64 {
        self.steps as f64 * self.step_size
    }

    pub fn stability(&self, eigenvalue_bound: f64) -> Option<StabilityWarning> {
        let courant = self.step_size * eigenvalue_bound.max(0.0).sqrt();
        (courant >= 2.0).then_some(StabilityWarning {
            step_size: self.step_size,
            eigenvalue_bound,
            courant,
        })
    }
}

/// Full trajectory `X^0..X^N`, `V^0..V^N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveSignal {
    positions: Vec<Mat>,
    velocities: Vec<Mat>,
    config: WaveConfig,
    warning: Option<StabilityWarning>,
}

/// Which snapshots make up a per-vertex decoder input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    /// Append `V^i_v` after `X^i_v` at every step.
    pub include_velocity: bool,
    /// Start the sequence at `X^0` instead of `X^1`.
    pub include_initial: bool,
}

impl SequenceLayout {
    pub fn len(&self, cfg: &WaveConfig) -> usize {
        cfg.steps + usize::from(self.include_initial)
    }

    pub fn width(&self, d: usize) -> usize {
        if self.include_velocity {
            2 * d
        } else {
            d
        }
    }

    fn first_step(&self) -> usize {
        usize::from(!self.include_initial)
    }
}

fn check_input(op: &LaplacianOperator, x0: &Mat) -> Result<()> {
    if x0.rows != op.dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} rows, operator dimension is {}",
            x0.rows,
            op.dim()
        )));
    }
    Ok(())
}

fn warn_if_unstable(op: &LaplacianOperator, config: &WaveConfig) -> Option<StabilityWarning> {
    let w = config.stability(op.max_eigenvalue_bound());
    if let Some(w) = &w {
        log::warn!(
            "h*sqrt(bound) = {:.3} >= 2; the scheme may be unstable",
            w.courant
        );
    }
    w
}

/// One step in place. `lx` is scratch of the same size.
#[inline]
fn step(op: &LaplacianOperator, h: f64, d: usize, x: &mut [f64], v: &mut [f64], lx: &mut [f64]) {
    op.apply_into(x, d, lx);
    for ((xi, vi), li) in x.iter_mut().zip(v.iter_mut()).zip(lx.iter()) {
        *vi -= h * li;
        *xi += h * *vi;
    }
}

pub fn propagate(op: &LaplacianOperator, x0: &Mat, config: WaveConfig) -> Result<WaveSignal> {
    check_input(op, x0)?;
    let warning = warn_if_unstable(op, &config);
    let d = x0.cols;
    let h = config.step_size;
    let mut x = x0.data.clone();
    let mut v = vec![0.0; x.len()];
    let mut lx = vec![0.0; x.len()];
    let mut positions = Vec::with_capacity(config.steps + 1);
    let mut velocities = Vec::with_capacity(config.steps + 1);
    positions.push(x0.clone());
    velocities.push(Mat::zeros(x0.rows, d));
    for _ in 0..config.steps {
        step(op, h, d, &mut x, &mut v, &mut lx);
        positions.push(Mat::from_vec(x0.rows, d, x.clone())?);
        velocities.push(Mat::from_vec(x0.rows, d, v.clone())?);
    }
    Ok(WaveSignal {
        positions,
        velocities,
        config,
        warning,
    })
}

impl WaveSignal {
    pub fn config(&self) -> WaveConfig {
        self.config
    }

    pub fn positions(&self) -> &[Mat] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Mat] {
        &self.velocities
    }

    pub fn warning(&self) -> Option<&StabilityWarning> {
        self.warning.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.positions[0].rows
    }

    pub fn feature_dim(&self) -> usize {
        self.positions[0].cols
    }

    /// Largest absolute residual of the update recurrences over all recorded
    /// steps. Zero up to rounding for a signal produced by [`propagate`].
    pub fn recurrence_residual(&self, op: &LaplacianOperator) -> Result<f64> {
        let h = self.config.step_size;
        let mut worst = 0.0f64;
        for i in 0..self.config.steps {
            let lx = op.apply(&self.positions[i])?;
            let v_next = self.velocities[i].lincomb(1.0, &lx, -h);
            let x_next = self.positions[i].lincomb(1.0, &self.velocities[i + 1], h);
            worst = worst
                .max(v_next.max_abs_diff(&self.velocities[i + 1]))
                .max(x_next.max_abs_diff(&self.positions[i + 1]));
        }
        Ok(worst)
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        let n = self.num_vertices();
        if v >= n {
            return Err(Error::VertexOutOfRange { vertex: v, n });
        }
        Ok(())
    }
}

/// Piecewise-constant interpolant: `X^1` on `(0, h]`, `X^i` on `((i-1)h, ih]`.
pub fn sample_step_function(signal: &WaveSignal, v: usize, t: f64) -> Result<Vec<f64>> {
    signal.check_vertex(v)?;
    let cfg = signal.config;
    let stop = cfg.stop_time();
    if !(t > 0.0 && t <= stop * (1.0 + 1e-12)) {
        return Err(Error::TimeOutOfRange { t, stop_time: stop });
    }
    // Absorb rounding so that t = i*h lands in cell i, not i+1.
    let ratio = t / cfg.step_size;
    let i = ((ratio - 1e-9 * ratio.max(1.0)).ceil() as usize).clamp(1, cfg.steps);
    Ok(signal.positions[i].row(v).to_vec())
}

/// Decoder input for one vertex: `X^1_v .. X^N_v`, one row per step.
pub fn node_sequence(signal: &WaveSignal, v: usize, include_velocity: bool) -> Result<Mat> {
    node_sequence_with(
        signal,
        v,
        SequenceLayout {
            include_velocity,
            include_initial: false,
        },
    )
}

pub fn node_sequence_with(signal: &WaveSignal, v: usize, layout: SequenceLayout) -> Result<Mat> {
    signal.check_vertex(v)?;
    let d = signal.feature_dim();
    let width = layout.width(d);
    let first = layout.first_step();
    let len = layout.len(&signal.config);
    let mut out = Mat::zeros(len, width);
    for (k, i) in (first..=signal.config.steps).enumerate() {
        let row = out.row_mut(k);
        row[..d].copy_from_slice(signal.positions[i].row(v));
        if layout.include_velocity {
            row[d..].copy_from_slice(signal.velocities[i].row(v));
        }
    }
    Ok(out)
}

/// Per-vertex sequences for a subset of vertices, stored node-major:
/// `data[(b * len + t) * width + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSequences {
    pub nodes: Vec<usize>,
    pub len: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl NodeSequences {
    pub fn zeros(nodes: Vec<usize>, len: usize, width: usize) -> Self {
        let data = vec![0.0; nodes.len() * len * width];
        NodeSequences {
            nodes,
            len,
            width,
            data,
        }
    }

    pub fn batch(&self) -> usize {
        self.nodes.len()
    }

    pub fn sequence(&self, b: usize) -> &[f64] {
        let s = self.len * self.width;
        &self.data[b * s..(b + 1) * s]
    }

    pub fn sequence_mut(&mut self, b: usize) -> &mut [f64] {
        let s = self.len * self.width;
        &mut self.data[b * s..(b + 1) * s]
    }

    pub fn sequence_mat(&self, b: usize) -> Mat {
        Mat {
            rows: self.len,
            cols: self.width,
            data: self.sequence(b).to_vec(),
        }
    }

    /// Sub-batch selected by positions into `self.nodes`.
    pub fn select(&self, positions: &[usize]) -> NodeSequences {
        let s = self.len * self.width;
        let mut data = Vec::with_capacity(positions.len() * s);
        for &p in positions {
            data.extend_from_slice(self.sequence(p));
        }
        NodeSequences {
            nodes: positions.iter().map(|&p| self.nodes[p]).collect(),
            len: self.len,
            width: self.width,
            data,
        }
    }
}

/// Run the encoder keeping only the sequences of `nodes`. Memory is
/// `O(|nodes|·N·d)` instead of `O(n·N·d)`.
pub fn propagate_sequences(
    op: &LaplacianOperator,
    x0: &Mat,
    config: WaveConfig,
    nodes: &[usize],
    layout: SequenceLayout,
) -> Result<NodeSequences> {
    check_input(op, x0)?;
    let n = op.dim();
    if let Some(&v) = nodes.iter().find(|&&v| v >= n) {
        return Err(Error::VertexOutOfRange { vertex: v, n });
    }
    warn_if_unstable(op, &config);
    let d = x0.cols;
    let h = config.step_size;
    let len = layout.len(&config);
    let width = layout.width(d);
    let mut seqs = NodeSequences::zeros(nodes.to_vec(), len, width);
    let mut x = x0.data.clone();
    let mut v = vec![0.0; x.len()];
    let mut lx = vec![0.0; x.len()];

    let record = |seqs: &mut NodeSequences, k: usize, x: &[f64], v: &[f64]| {
        for (b, &node) in nodes.iter().enumerate() {
            let dst = &mut seqs.data[(b * len + k) * width..(b * len + k + 1) * width];
            dst[..d].copy_from_slice(&x[node * d..(node + 1) * d]);
            if layout.include_velocity {
                dst[d..].copy_from_slice(&v[node * d..(node + 1) * d]);
            }
        }
    };

    let mut k = 0;
    if layout.include_initial {
        record(&mut seqs, 0, &x, &v);
        k = 1;
    }
    for _ in 0..config.steps {
        step(op, h, d, &mut x, &mut v, &mut lx);
        record(&mut seqs, k, &x, &v);
        k += 1;
    }
    Ok(seqs)
}

/// Transposed recurrence: given `∂ℓ/∂(sequence)` for the vertices in
/// `grads.nodes`, return `∂ℓ/∂x0` (an `n × d` matrix). The encoder is linear,
/// so this is exact.
pub fn propagate_adjoint(
    op: &LaplacianOperator,
    config: WaveConfig,
    grads: &NodeSequences,
    layout: SequenceLayout,
    d: usize,
) -> Result<Mat> {
    let n = op.dim();
    if grads.len != layout.len(&config) || grads.width != layout.width(d) {
        return Err(Error::DimensionMismatch(format!(
            "gradient sequences are {}x{}, expected {}x{}",
            grads.len,
            grads.width,
            layout.len(&config),
            layout.width(d)
        )));
    }
    if let Some(&v) = grads.nodes.iter().find(|&&v| v >= n) {
        return Err(Error::VertexOutOfRange { vertex: v, n });
    }
    let h = config.step_size;
    let len = grads.len;
    let width = grads.width;
    let mut ax = vec![0.0; n * d];
    let mut av = vec![0.0; n * d];
    let mut w = vec![0.0; n * d];
    let mut lw = vec![0.0; n * d];

    let inject = |ax: &mut [f64], av: &mut [f64], k: usize| {
        for (b, &node) in grads.nodes.iter().enumerate() {
            let src = &grads.data[(b * len + k) * width..(b * len + k + 1) * width];
            for (a, g) in ax[node * d..(node + 1) * d].iter_mut().zip(&src[..d]) {
                *a += g;
            }
            if layout.include_velocity {
                for (a, g) in av[node * d..(node + 1) * d].iter_mut().zip(&src[d..]) {
                    *a += g;
                }
            }
        }
    };

    let offset = usize::from(layout.include_initial);
    for i in (1..=config.steps).rev() {
        inject(&mut ax, &mut av, i - 1 + offset);
        // (X^i, V^i) -> (X^{i-1}, V^{i-1})
        for ((wi, a), b) in w.iter_mut().zip(&ax).zip(&av) {
            *wi = b + h * a;
        }
        op.apply_into(&w, d, &mut lw);
        for (a, l) in ax.iter_mut().zip(&lw) {
            *a -= h * l;
        }
        av.copy_from_slice(&w);
    }
    if layout.include_initial {
        inject(&mut ax, &mut av, 0);
    }
    Mat::from_vec(n, d, ax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::operator::{build_operator, Variant};

    fn p2() -> LaplacianOperator {
        let g = Graph::unlabeled(2, &[(0, 1)], Mat::zeros(2, 1)).unwrap();
        build_operator(&g, Variant::Combinatorial)
    }

    fn k3() -> LaplacianOperator {
        let g = Graph::unlabeled(3, &[(0, 1), (1, 2), (0, 2)], Mat::zeros(3, 1)).unwrap();
        build_operator(&g, Variant::Combinatorial)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14)
    }

    #[test]
    fn one_hand_step_on_p2() {
        let sig = propagate(&p2(), &Mat::column(&[1.0, 0.0]), WaveConfig::new(1, 0.1).unwrap()).unwrap();
        assert!(close(&sig.velocities()[1].data, &[-0.1, 0.1]));
        assert!(close(&sig.positions()[1].data, &[0.99, 0.01]));
        assert_eq!(sig.positions()[0].data, vec![1.0, 0.0]);
        assert_eq!(sig.velocities()[0].data, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_input_stays_zero() {
        let sig = propagate(&k3(), &Mat::zeros(3, 2), WaveConfig::new(20, 0.3).unwrap()).unwrap();
        assert!(sig.positions().iter().chain(sig.velocities()).all(|m| m.max_abs() == 0.0));
        let seq = node_sequence(&sig, 1, false).unwrap();
        assert_eq!(seq.max_abs(), 0.0);
    }

    #[test]
    fn constant_input_is_stationary() {
        let x0 = Mat::column(&[2.5, 2.5, 2.5]);
        let sig = propagate(&k3(), &x0, WaveConfig::new(50, 0.1).unwrap()).unwrap();
        for (x, v) in sig.positions().iter().zip(sig.velocities()) {
            assert_eq!(x, &x0);
            assert_eq!(v.max_abs(), 0.0);
        }
    }

    #[test]
    fn recurrence_is_recheckable() {
        let x0 = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.0], vec![0.0, 3.0]]).unwrap();
        let op = k3();
        let sig = propagate(&op, &x0, WaveConfig::new(30, 0.05).unwrap()).unwrap();
        assert!(sig.recurrence_residual(&op).unwrap() < 1e-13);
    }

    #[test]
    fn step_function_cells() {
        let sig = propagate(&p2(), &Mat::column(&[1.0, 0.0]), WaveConfig::new(10, 0.1).unwrap()).unwrap();
        let h = 0.1;
        assert_eq!(sample_step_function(&sig, 0, h / 2.0).unwrap(), sig.positions()[1].row(0));
        assert_eq!(sample_step_function(&sig, 0, h).unwrap(), sig.positions()[1].row(0));
        assert_eq!(sample_step_function(&sig, 0, 1.5 * h).unwrap(), sig.positions()[2].row(0));
        assert_eq!(sample_step_function(&sig, 1, 3.0 * h).unwrap(), sig.positions()[3].row(1));
        assert_eq!(sample_step_function(&sig, 1, 1.0).unwrap(), sig.positions()[10].row(1));
        assert!(matches!(
            sample_step_function(&sig, 0, 0.0),
            Err(Error::TimeOutOfRange { .. })
        ));
        assert!(sample_step_function(&sig, 0, 1.01).is_err());
    }

    #[test]
    fn node_sequence_examples() {
        let sig = propagate(&p2(), &Mat::column(&[1.0, 0.0]), WaveConfig::new(1, 0.1).unwrap()).unwrap();
        let s = node_sequence(&sig, 0, false).unwrap();
        assert_eq!(s.shape(), (1, 1));
        assert!((s.data[0] - 0.99).abs() < 1e-15);
        let s = node_sequence(&sig, 0, true).unwrap();
        assert!(close(&s.data, &[0.99, -0.1]));
        assert!(matches!(
            node_sequence(&sig, 2, false),
            Err(Error::VertexOutOfRange { vertex: 2, n: 2 })
        ));
        let s = node_sequence_with(
            &sig,
            0,
            SequenceLayout {
                include_velocity: false,
                include_initial: true,
            },
        )
        .unwrap();
        assert!(close(&s.data, &[1.0, 0.99]));
    }

    #[test]
    fn streaming_matches_full_signal() {
        let op = k3();
        let x0 = Mat::from_rows(&[vec![1.0, 0.2], vec![-0.5, 0.0], vec![0.1, 0.7]]).unwrap();
        let cfg = WaveConfig::new(12, 0.2).unwrap();
        let sig = propagate(&op, &x0, cfg).unwrap();
        for layout in [
            SequenceLayout::default(),
            SequenceLayout {
                include_velocity: true,
                include_initial: true,
            },
        ] {
            let seqs = propagate_sequences(&op, &x0, cfg, &[2, 0], layout).unwrap();
            assert_eq!(seqs.sequence_mat(0), node_sequence_with(&sig, 2, layout).unwrap());
            assert_eq!(seqs.sequence_mat(1), node_sequence_with(&sig, 0, layout).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        assert!(WaveConfig::new(0, 0.1).is_err());
        assert!(WaveConfig::new(3, 0.0).is_err());
        assert!(WaveConfig::checked(200, 0.02, 4.0).is_ok());
        assert!(WaveConfig::checked(200, 0.02, 4.1).is_err());
        let c = WaveConfig::from_stop_time(4.0, 8).unwrap();
        assert_eq!(c.step_size(), 0.5);
        assert!(c.stability(18.0).is_some());
        assert!(c.stability(3.0).is_none());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            propagate(&p2(), &Mat::zeros(3, 1), WaveConfig::new(1, 0.1).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
