//! Energy traces, node-similarity decay, input sensitivity and step sweeps.

use serde::{Deserialize, Serialize};

use crate::decoder::{embed_features, DecoderParams, EmbeddingPlacement};
use crate::encoder::{propagate, propagate_adjoint, propagate_sequences, NodeSequences};
use crate::encoder::{SequenceLayout, WaveConfig, WaveSignal};
use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::linalg::Mat;
use crate::operator::LaplacianOperator;
use crate::par;
use crate::spectral::{eigendecompose, exact_signal, exact_velocity, SpectralDecomposition};
use crate::train::{train, Pipeline, TrainConfig};

/// `trace(xᵀ L x)`.
pub fn dirichlet_energy(op: &LaplacianOperator, x: &Mat) -> Result<f64> {
    op.quadratic_form(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub energies: Vec<f64>,
    /// `max_i |E^i − E^0| / max(E^0, 1e-12)`
    pub max_relative_drift: f64,
    /// Drift above 1.
    pub unstable: bool,
}

impl EnergyTrace {
    fn from_energies(energies: Vec<f64>) -> Self {
        let e0 = energies.first().copied().unwrap_or(0.0);
        let scale = e0.max(1e-12);
        let max_relative_drift = energies
            .iter()
            .map(|e| (e - e0).abs() / scale)
            .fold(0.0, f64::max);
        EnergyTrace {
            energies,
            max_relative_drift,
            unstable: max_relative_drift > 1.0,
        }
    }
}

fn energy(op: &LaplacianOperator, x: &Mat, v: &Mat) -> Result<f64> {
    Ok(0.5 * v.dot(v) + 0.5 * dirichlet_energy(op, x)?)
}

/// `E^i = ½|V^i|² + ½ trace(X^iᵀ L X^i)` along an encoder trajectory.
pub fn energy_trace(signal: &WaveSignal, op: &LaplacianOperator) -> Result<EnergyTrace> {
    let energies = signal
        .positions()
        .iter()
        .zip(signal.velocities())
        .map(|(x, v)| energy(op, x, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyTrace::from_energies(energies))
}

/// Same energy evaluated on the closed-form solution at `times`.
pub fn exact_energy_trace(
    dec: &SpectralDecomposition,
    op: &LaplacianOperator,
    x0: &Mat,
    times: &[f64],
) -> Result<EnergyTrace> {
    let xs = exact_signal(dec, x0, times)?;
    let vs = exact_velocity(dec, x0, times)?;
    let energies = xs
        .iter()
        .zip(&vs)
        .map(|(x, v)| energy(op, x, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyTrace::from_energies(energies))
}

/// Dirichlet node similarity `μ(Y) = sqrt((1/n) Σ_{(u,v)∈E} |Y_u − Y_v|²)`.
/// Edges are read off the operator's off-diagonal pattern.
pub fn oversmoothing_metric(op: &LaplacianOperator, y: &Mat) -> Result<f64> {
    let n = op.dim();
    if y.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "node vectors have {} rows for {n} vertices",
            y.rows
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for u in 0..n {
        for (v, w) in op.row(u) {
            if v > u && w != 0.0 {
                sum += y
                    .row(u)
                    .iter()
                    .zip(y.row(v))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
    }
    Ok((sum / n as f64).sqrt())
}

/// Default finite-difference step: `1e-4 · max(1, max|x|)`.
pub fn default_delta(features: &Mat) -> f64 {
    1e-4 * features.max_abs().max(1.0)
}

fn check_vertex(v: usize, n: usize) -> Result<()> {
    if v >= n {
        return Err(Error::VertexOutOfRange { vertex: v, n });
    }
    Ok(())
}

fn output_at(
    pipe: &Pipeline<'_>,
    params: &DecoderParams,
    features: &Mat,
    v: usize,
) -> Result<Vec<f64>> {
    let enc = pipe.encode_features(params, features, &[v])?;
    Ok(pipe.predict(params, &enc.seqs)?.data)
}

/// `∂y_v/∂x_u` (`d1 × d0`) by central differences, re-running encoder and
/// decoder for every coordinate of `x_u`.
pub fn sensitivity_jacobian(
    pipe: &Pipeline<'_>,
    params: &DecoderParams,
    v: usize,
    u: usize,
    delta: Option<f64>,
) -> Result<Mat> {
    let graph = pipe.graph();
    let n = graph.num_vertices();
    check_vertex(v, n)?;
    check_vertex(u, n)?;
    let x = graph.features();
    let delta = delta.unwrap_or_else(|| default_delta(x));
    let d0 = x.cols;
    let d1 = pipe.spec().dims.output_dim;
    let mut jac = Mat::zeros(d1, d0);
    let mut xp = x.clone();
    for j in 0..d0 {
        let orig = x.get(u, j);
        xp.set(u, j, orig + delta);
        let plus = output_at(pipe, params, &xp, v)?;
        xp.set(u, j, orig - delta);
        let minus = output_at(pipe, params, &xp, v)?;
        xp.set(u, j, orig);
        for k in 0..d1 {
            jac.set(k, j, (plus[k] - minus[k]) / (2.0 * delta));
        }
    }
    Ok(jac)
}

/// Frobenius norm of [`sensitivity_jacobian`].
pub fn sensitivity(
    pipe: &Pipeline<'_>,
    params: &DecoderParams,
    v: usize,
    u: usize,
    delta: Option<f64>,
) -> Result<f64> {
    Ok(sensitivity_jacobian(pipe, params, v, u, delta)?.frobenius())
}

/// `∂y_v[k]/∂x` (an `n × d0` matrix) for every output `k`, by
/// backpropagation through decoder, encoder adjoint and embedding.
pub fn input_jacobian(pipe: &Pipeline<'_>, params: &DecoderParams, v: usize) -> Result<Vec<Mat>> {
    let graph = pipe.graph();
    check_vertex(v, graph.num_vertices())?;
    let x = graph.features();
    let spec = pipe.spec();
    let layout = pipe.config().layout();
    let enc = pipe.encode(params, &[v])?;
    let (_, tapes) = pipe.decode_for_training(params, &enc.seqs, None)?;
    let d1 = spec.dims.output_dim;
    let mut out = Vec::with_capacity(d1);
    for k in 0..d1 {
        let mut dy = Mat::zeros(1, d1);
        dy.set(0, k, 1.0);
        let (_, d_seq) = pipe.backpropagate_to_sequences(params, &enc, &tapes, &dy)?;
        let grad = match spec.placement {
            EmbeddingPlacement::PostPropagation => {
                propagate_adjoint(pipe.operator(), pipe.wave(), &d_seq, layout, x.cols)?
            }
            EmbeddingPlacement::PrePropagation => {
                let q = spec.dims.hidden_dim;
                let d_emb = propagate_adjoint(pipe.operator(), pipe.wave(), &d_seq, layout, q)?;
                let (_, pre) = embed_features(params, x)?;
                let w = &params.weights.embedding.weight;
                let mut d_pre = d_emb;
                if let Some(act) = spec.embedding_activation {
                    for (g, &p) in d_pre.data.iter_mut().zip(&pre.data) {
                        *g *= act.derivative(p);
                    }
                }
                d_pre.matmul(w)
            }
        };
        out.push(grad);
    }
    Ok(out)
}

/// Analytic counterpart of [`sensitivity_jacobian`].
pub fn sensitivity_jacobian_analytic(
    pipe: &Pipeline<'_>,
    params: &DecoderParams,
    v: usize,
    u: usize,
) -> Result<Mat> {
    check_vertex(u, pipe.graph().num_vertices())?;
    let rows = input_jacobian(pipe, params, v)?;
    let d0 = pipe.graph().feature_dim();
    let mut jac = Mat::zeros(rows.len(), d0);
    for (k, g) in rows.iter().enumerate() {
        jac.row_mut(k).copy_from_slice(g.row(u));
    }
    Ok(jac)
}

/// Jacobian of the encoder sequence at `v` with respect to `x_u`
/// (`len·width × d`), by central differences. The encoder is linear, so the
/// result does not depend on `x0` beyond its shape.
pub fn encoder_jacobian_fd(
    op: &LaplacianOperator,
    x0: &Mat,
    wave: WaveConfig,
    layout: SequenceLayout,
    v: usize,
    u: usize,
    delta: f64,
) -> Result<Mat> {
    let n = op.dim();
    check_vertex(v, n)?;
    check_vertex(u, n)?;
    let d = x0.cols;
    let rows = layout.len(&wave) * layout.width(d);
    let mut jac = Mat::zeros(rows, d);
    let mut xp = x0.clone();
    for j in 0..d {
        let orig = x0.get(u, j);
        xp.set(u, j, orig + delta);
        let plus = propagate_sequences(op, &xp, wave, &[v], layout)?;
        xp.set(u, j, orig - delta);
        let minus = propagate_sequences(op, &xp, wave, &[v], layout)?;
        xp.set(u, j, orig);
        for r in 0..rows {
            jac.set(r, j, (plus.data[r] - minus.data[r]) / (2.0 * delta));
        }
    }
    Ok(jac)
}

/// [`encoder_jacobian_fd`] through the transposed recurrence.
pub fn encoder_jacobian_adjoint(
    op: &LaplacianOperator,
    d: usize,
    wave: WaveConfig,
    layout: SequenceLayout,
    v: usize,
    u: usize,
) -> Result<Mat> {
    let n = op.dim();
    check_vertex(v, n)?;
    check_vertex(u, n)?;
    let (len, width) = (layout.len(&wave), layout.width(d));
    let rows = len * width;
    let mut jac = Mat::zeros(rows, d);
    for r in 0..rows {
        let mut seed = NodeSequences::zeros(vec![v], len, width);
        seed.data[r] = 1.0;
        let g = propagate_adjoint(op, wave, &seed, layout, d)?;
        jac.row_mut(r).copy_from_slice(g.row(u));
    }
    Ok(jac)
}

/// Encoder against closed form on the grid `t_i = i·h`, for `h`, `h/2`, ...
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub stop_time: f64,
    pub step_sizes: Vec<f64>,
    /// Max snapshot deviation per step size.
    pub deviations: Vec<f64>,
    /// Slope of `ln(deviation)` against `ln(h)`; `None` when a deviation is 0.
    pub convergence_order: Option<f64>,
}

pub fn oracle_check(
    op: &LaplacianOperator,
    x0: &Mat,
    step_size: f64,
    stop_time: f64,
    refinements: usize,
) -> Result<OracleCheck> {
    let dec = eigendecompose(op)?;
    oracle_check_with(&dec, op, x0, step_size, stop_time, refinements)
}

pub fn oracle_check_with(
    dec: &SpectralDecomposition,
    op: &LaplacianOperator,
    x0: &Mat,
    step_size: f64,
    stop_time: f64,
    refinements: usize,
) -> Result<OracleCheck> {
    if !(step_size > 0.0 && stop_time > 0.0) {
        return Err(Error::InvalidWaveConfig(
            "step size and stop time must be positive".into(),
        ));
    }
    let mut step_sizes = Vec::new();
    let mut deviations = Vec::new();
    for r in 0..=refinements {
        let h = step_size / f64::from(1u32 << r);
        let steps = (stop_time / h).round().max(1.0) as usize;
        let signal = propagate(op, x0, WaveConfig::new(steps, h)?)?;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
        let exact = exact_signal(dec, x0, &times)?;
        let dev = signal
            .positions()
            .iter()
            .zip(&exact)
            .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)));
        step_sizes.push(h);
        deviations.push(dev);
    }
    let convergence_order = if deviations.len() >= 2 && deviations.iter().all(|&e| e > 0.0) {
        let xs: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = deviations.iter().map(|e| e.ln()).collect();
        Some(least_squares_slope(&xs, &ys))
    } else {
        None
    };
    Ok(OracleCheck {
        stop_time,
        step_sizes,
        deviations,
        convergence_order,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Rate `c₂` of a least-squares fit `μ ≈ c₁·e^{−c₂ N}`. Positive means decay.
pub fn fit_exponential_decay(steps: &[usize], mu: &[f64]) -> Result<f64> {
    if steps.len() != mu.len() || steps.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "need at least two (N, mu) pairs, got {}",
            steps.len().min(mu.len())
        )));
    }
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidConfig(
            "mu must be positive to fit an exponential".into(),
        ));
    }
    let xs: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    Ok(-least_squares_slope(&xs, &ys))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub steps: usize,
    pub step_size: f64,
    pub stop_time: f64,
    pub mean_metric: f64,
    /// Population standard deviation over seeds.
    pub std_metric: f64,
    pub seeds: Vec<u64>,
    pub metrics: Vec<f64>,
    /// Mean over seeds of `μ` of the decoder outputs on all vertices.
    pub mean_mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub fixed_stop_time: bool,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("steps,step_size,stop_time,mean_metric,std_metric,num_seeds,mean_mu\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.steps,
                e.step_size,
                e.stop_time,
                e.mean_metric,
                e.std_metric,
                e.seeds.len(),
                e.mean_mu
            ));
        }
        s
    }

    /// Entry with the highest mean metric (first on ties).
    pub fn best(&self) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .fold(None, |b: Option<&SweepEntry>, e| match b {
                Some(b) if b.mean_metric >= e.mean_metric => Some(b),
                _ => Some(e),
            })
    }

    pub fn mu_decay_rate(&self) -> Result<f64> {
        let steps: Vec<usize> = self.entries.iter().map(|e| e.steps).collect();
        let mu: Vec<f64> = self.entries.iter().map(|e| e.mean_mu).collect();
        fit_exponential_decay(&steps, &mu)
    }
}

fn sweep_run(graph: &Graph, config: &TrainConfig) -> Result<(f64, f64)> {
    let (params, report) = train(graph, config)?;
    let metric = report.test_metric.ok_or(Error::EmptyMask)?;
    let pipe = Pipeline::new(graph, config)?;
    let all: Vec<usize> = (0..graph.num_vertices()).collect();
    let enc = pipe.encode(&params, &all)?;
    let y = pipe.predict(&params, &enc.seqs)?;
    Ok((metric, oversmoothing_metric(pipe.operator(), &y)?))
}

/// Train once per `(N, seed)` at fixed stop time `T` (`h = T/N`) and report
/// the test metric per `N`. Runs are independent and gathered in input order.
pub fn sweep_steps(
    graph: &Graph,
    base: &TrainConfig,
    steps: &[usize],
    seeds: &[u64],
    stop_time: f64,
) -> Result<SweepResult> {
    if steps.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one N and one seed".into()));
    }
    if Masks::indices(&graph.masks().test).is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut runs = Vec::with_capacity(steps.len() * seeds.len());
    for &n in steps {
        for &seed in seeds {
            let cfg = TrainConfig {
                steps: n,
                step_size: stop_time / n as f64,
                stop_time: Some(stop_time),
                seed,
                ..base.clone()
            };
            cfg.validate()?;
            runs.push(cfg);
        }
    }
    let results = par::map(&runs, |cfg| sweep_run(graph, cfg));
    let mut results = results.into_iter();
    let mut entries = Vec::with_capacity(steps.len());
    for &n in steps {
        let mut metrics = Vec::with_capacity(seeds.len());
        let mut mu = 0.0;
        for _ in seeds {
            let (m, u) = results.next().expect("one result per run")?;
            metrics.push(m);
            mu += u;
        }
        let k = seeds.len() as f64;
        let mean = metrics.iter().sum::<f64>() / k;
        let var = metrics.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / k;
        entries.push(SweepEntry {
            steps: n,
            step_size: stop_time / n as f64,
            stop_time,
            mean_metric: mean,
            std_metric: var.sqrt(),
            seeds: seeds.to_vec(),
            metrics,
            mean_mu: mu / k,
        });
    }
    Ok(SweepResult {
        fixed_stop_time: true,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_operator, Variant};

    fn op(n: usize, edges: &[(usize, usize)]) -> LaplacianOperator {
        let g = Graph::unlabeled(n, edges, Mat::zeros(n, 1)).unwrap();
        build_operator(&g, Variant::Combinatorial)
    }

    #[test]
    fn dirichlet_examples() {
        let p2 = op(2, &[(0, 1)]);
        assert_eq!(dirichlet_energy(&p2, &Mat::column(&[1.0, 0.0])).unwrap(), 1.0);
        let p3 = op(3, &[(0, 1), (1, 2)]);
        assert_eq!(dirichlet_energy(&p3, &Mat::column(&[2.0; 3])).unwrap(), 0.0);
        let dec = eigendecompose(&p3).unwrap();
        for i in 0..3 {
            let phi = Mat::column(&dec.vector(i));
            let e = dirichlet_energy(&p3, &phi).unwrap();
            assert!((e - dec.eigenvalues[i]).abs() < 1e-12);
        }
        assert!(dirichlet_energy(&p3, &Mat::column(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn energy_of_zero_signal_is_zero() {
        let p3 = op(3, &[(0, 1), (1, 2)]);
        let s = propagate(&p3, &Mat::zeros(3, 2), WaveConfig::new(20, 0.1).unwrap()).unwrap();
        let t = energy_trace(&s, &p3).unwrap();
        assert_eq!(t.energies.len(), 21);
        assert!(t.energies.iter().all(|&e| e == 0.0));
        assert!(!t.unstable);
    }

    #[test]
    fn p2_energy_is_nearly_conserved() {
        let p2 = op(2, &[(0, 1)]);
        let x = Mat::column(&[1.0, 0.0]);
        let s = propagate(&p2, &x, WaveConfig::new(1000, 0.01).unwrap()).unwrap();
        let t = energy_trace(&s, &p2).unwrap();
        assert_eq!(t.energies[0], 0.5);
        assert!(t.max_relative_drift < 0.05, "{}", t.max_relative_drift);
    }

    #[test]
    fn unstable_step_is_flagged() {
        let p2 = op(2, &[(0, 1)]);
        let h = 2.5 / 2f64.sqrt();
        let x = Mat::column(&[1.0, 0.0]);
        let s = propagate(&p2, &x, WaveConfig::new(50, h).unwrap()).unwrap();
        let t = energy_trace(&s, &p2).unwrap();
        assert!(t.unstable && t.max_relative_drift > 1.0);
    }

    #[test]
    fn exact_energy_is_constant() {
        let p3 = op(3, &[(0, 1), (1, 2)]);
        let dec = eigendecompose(&p3).unwrap();
        let x = Mat::column(&[0.3, -1.0, 2.0]);
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.37).collect();
        let t = exact_energy_trace(&dec, &p3, &x, &times).unwrap();
        assert!(t.max_relative_drift < 1e-12);
    }

    #[test]
    fn mu_examples() {
        let p2 = op(2, &[(0, 1)]);
        let mu = oversmoothing_metric(&p2, &Mat::column(&[1.0, 0.0])).unwrap();
        assert!((mu - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(oversmoothing_metric(&p2, &Mat::column(&[3.0, 3.0])).unwrap(), 0.0);
        let y = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0]]).unwrap();
        let a = oversmoothing_metric(&p2, &y).unwrap();
        let b = oversmoothing_metric(&p2, &y.scale(-3.0)).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn slope_fit_recovers_rate() {
        let steps = [8, 25, 50, 100];
        let mu: Vec<f64> = steps.iter().map(|&n| 2.0 * (-0.03 * n as f64).exp()).collect();
        assert!((fit_exponential_decay(&steps, &mu).unwrap() - 0.03).abs() < 1e-12);
        assert!(fit_exponential_decay(&[1], &[1.0]).is_err());
    }

    #[test]
    fn oracle_check_is_first_order() {
        let p3 = op(3, &[(0, 1), (1, 2)]);
        let x = Mat::column(&[1.0, -0.5, 0.25]);
        let r = oracle_check(&p3, &x, 0.01, 4.0, 2).unwrap();
        let order = r.convergence_order.unwrap();
        assert!((0.8..=1.3).contains(&order), "{order}");
        assert!(r.deviations.windows(2).all(|w| w[1] < w[0]));
    }
}
