//! Render per-vertex wave signals as audio.
//!
//! Graph time runs at `α` units per second of audio, with `α` chosen so the
//! highest graph frequency `√λmax` lands on `peak_hz`. Samples are mean-free
//! and peak-normalised to 0.9 of full scale.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GraphBundle;
use crate::encoder::{propagate_sequences, SequenceLayout, WaveConfig};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::{build_operator, LaplacianOperator, Variant};
use crate::spectral::{eigendecompose_with_limit, DEFAULT_ORACLE_LIMIT};

pub const PEAK_LEVEL: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Vertex(usize),
    /// Average over all vertices.
    Mix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    /// Seconds.
    pub duration: f64,
    /// Audio frequency that `√λmax` is mapped to.
    pub peak_hz: f64,
    pub channel: Channel,
    /// Feature column rendered.
    pub column: usize,
    pub oracle_limit: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 44_100,
            duration: 2.0,
            peak_hz: 2000.0,
            channel: Channel::Vertex(0),
            column: 0,
            oracle_limit: DEFAULT_ORACLE_LIMIT,
        }
    }
}

impl AudioConfig {
    pub fn num_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.duration).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rendering {
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub num_samples: usize,
    /// Graph time per second of audio.
    pub dilation: f64,
    pub max_frequency: f64,
    pub used_oracle: bool,
    pub silent: bool,
    pub notes: Vec<String>,
}

fn dilation(max_frequency: f64, peak_hz: f64) -> f64 {
    if max_frequency > 0.0 {
        2.0 * std::f64::consts::PI * peak_hz / max_frequency
    } else {
        1.0
    }
}

/// Sample the signal of one feature column and normalise it.
pub fn render(op: &LaplacianOperator, x0: &Mat, cfg: &AudioConfig) -> Result<Rendering> {
    let n = op.dim();
    if x0.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "features have {} rows for {n} vertices",
            x0.rows
        )));
    }
    if !(cfg.duration > 0.0 && cfg.duration.is_finite()) || cfg.sample_rate == 0 {
        return Err(Error::InvalidConfig(
            "duration and sample rate must be positive".into(),
        ));
    }
    if cfg.column >= x0.cols {
        return Err(Error::InvalidConfig(format!(
            "feature column {} out of range for width {}",
            cfg.column, x0.cols
        )));
    }
    if let Channel::Vertex(v) = cfg.channel {
        if v >= n {
            return Err(Error::VertexOutOfRange { vertex: v, n });
        }
    }
    let x = Mat::column(&x0.col(cfg.column));
    let count = cfg.num_samples();
    let sr = f64::from(cfg.sample_rate);
    let mut notes = Vec::new();

    let (mut samples, max_frequency, dil, used_oracle) =
        match eigendecompose_with_limit(op, cfg.oracle_limit) {
            Ok(dec) => {
                let wmax = dec.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l)).sqrt();
                let alpha = dilation(wmax, cfg.peak_hz);
                let coeffs = dec.coefficients(&x)?;
                // amplitude of each mode at the chosen channel
                let amps: Vec<(f64, f64)> = (0..dec.dim())
                    .map(|k| {
                        let phi = match cfg.channel {
                            Channel::Vertex(v) => dec.vectors.get(v, k),
                            Channel::Mix => {
                                (0..n).map(|i| dec.vectors.get(i, k)).sum::<f64>() / n as f64
                            }
                        };
                        (dec.eigenvalues[k].max(0.0).sqrt(), phi * coeffs.get(k, 0))
                    })
                    .filter(|&(_, a)| a != 0.0)
                    .collect();
                let s = (0..count)
                    .map(|i| {
                        let t = alpha * i as f64 / sr;
                        amps.iter().map(|&(w, a)| a * (w * t).cos()).sum()
                    })
                    .collect();
                (s, wmax, alpha, true)
            }
            Err(Error::TooLargeForOracle { n, limit }) => {
                notes.push(format!(
                    "{n} vertices exceed the oracle limit {limit}; sampled the encoder"
                ));
                log::info!("{}", notes[0]);
                let wmax = op.max_eigenvalue_bound().sqrt();
                let alpha = dilation(wmax, cfg.peak_hz);
                let h = alpha / sr;
                if h * wmax > 2.0 {
                    notes.push(format!(
                        "encoder step {h} is beyond the stability limit; raise the sample rate"
                    ));
                }
                let nodes: Vec<usize> = match cfg.channel {
                    Channel::Vertex(v) => vec![v],
                    Channel::Mix => (0..n).collect(),
                };
                let layout = SequenceLayout {
                    include_velocity: false,
                    include_initial: true,
                };
                let steps = count.saturating_sub(1).max(1);
                let seqs = propagate_sequences(op, &x, WaveConfig::new(steps, h)?, &nodes, layout)?;
                let mut s = vec![0.0; count];
                for b in 0..seqs.batch() {
                    for (o, v) in s.iter_mut().zip(seqs.sequence(b)) {
                        *o += v / nodes.len() as f64;
                    }
                }
                (s, wmax, alpha, false)
            }
            Err(e) => return Err(e),
        };

    if !samples.is_empty() {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.iter_mut().for_each(|s| *s -= mean);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let silent = peak <= 1e-12;
    if silent {
        samples.iter_mut().for_each(|s| *s = 0.0);
        notes.push("signal is zero; wrote silence".into());
    } else {
        let g = PEAK_LEVEL / peak;
        samples.iter_mut().for_each(|s| *s *= g);
    }
    Ok(Rendering {
        num_samples: samples.len(),
        samples,
        dilation: dil,
        max_frequency,
        used_oracle,
        silent,
        notes,
    })
}

/// Mono 16-bit little-endian PCM with the canonical 44-byte header.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| match e {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::Io(std::io::Error::other(other.to_string())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * f64::from(i16::MAX)).round() as i16;
        w.write_sample(q).map_err(io)?;
    }
    w.finalize().map_err(io)
}

/// Render a bundle's signal and write it to `path`.
pub fn export_wav(
    bundle: &GraphBundle,
    variant: Variant,
    cfg: &AudioConfig,
    path: &Path,
) -> Result<Rendering> {
    let (graph, _) = bundle.to_graph()?;
    let op = build_operator(&graph, variant);
    let r = render(&op, graph.features(), cfg)?;
    write_wav(path, &r.samples, cfg.sample_rate)?;
    Ok(r)
}
