use serde::{Deserialize, Serialize};

use crate::decoder::Weights;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &Weights) -> Self {
        let mut m = like.clone();
        m.scale(0.0);
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One Adam update with decoupled weight decay applied first:
/// `p ← p − lr·wd·p`, then the bias-corrected Adam step.
pub fn adam_step(
    params: &mut Weights,
    grads: &Weights,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let shapes = params.shapes();
    if grads.shapes() != shapes || state.m.shapes() != shapes || state.v.shapes() != shapes {
        return Err(Error::ShapeMismatch(
            "parameters, gradients and optimizer state differ in layout".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let g_blocks = grads.blocks();
    for (((p, (_, _, g)), m), v) in params
        .blocks_mut()
        .into_iter()
        .zip(g_blocks)
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Learning-rate schedule driven by a monitored loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    ReduceOnPlateau {
        factor: f64,
        patience: usize,
        min_lr: f64,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::ReduceOnPlateau {
            factor: 0.5,
            patience: 10,
            min_lr: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    schedule: Schedule,
    best: f64,
    bad_epochs: usize,
}

impl Scheduler {
    pub fn new(schedule: Schedule) -> Self {
        Scheduler {
            schedule,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's monitored loss; returns the learning rate to use next.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        match self.schedule {
            Schedule::Constant => lr,
            Schedule::ReduceOnPlateau {
                factor,
                patience,
                min_lr,
            } => {
                if loss < self.best {
                    self.best = loss;
                    self.bad_epochs = 0;
                    return lr;
                }
                self.bad_epochs += 1;
                if self.bad_epochs > patience {
                    self.bad_epochs = 0;
                    (lr * factor).max(min_lr.min(lr))
                } else {
                    lr
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{init_params, Activation, Architecture, DecoderDims, DecoderSpec};

    fn weights() -> Weights {
        let spec = DecoderSpec::new(
            Architecture::Rnn,
            Activation::Tanh,
            DecoderDims {
                input_dim: 3,
                hidden_dim: 2,
                output_dim: 2,
                layers: 1,
            },
        );
        init_params(spec, 1).unwrap().weights
    }

    fn zeros_like(w: &Weights) -> Weights {
        let mut z = w.clone();
        z.scale(0.0);
        z
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = weights();
        let before = p.clone();
        let g = zeros_like(&p);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = weights();
        let before = p.flatten();
        let mut g = p.clone();
        for (i, blk) in g.blocks_mut().into_iter().enumerate() {
            for (j, x) in blk.iter_mut().enumerate() {
                *x = if (i + j) % 2 == 0 { 0.37 } else { -2.5e-3 };
            }
        }
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        for ((a, b), gi) in p.flatten().iter().zip(&before).zip(g.flatten()) {
            assert!((a - b + cfg.lr * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn decoupled_decay_scales_parameters() {
        let mut p = weights();
        let before = p.flatten();
        let g = zeros_like(&p);
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        for (a, b) in p.flatten().iter().zip(&before) {
            assert!((a - b * (1.0 - 0.001)).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let mut p = weights();
        let spec = DecoderSpec::new(
            Architecture::Lstm,
            Activation::Tanh,
            DecoderDims {
                input_dim: 3,
                hidden_dim: 2,
                output_dim: 2,
                layers: 1,
            },
        );
        let g = init_params(spec, 0).unwrap().weights;
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = Scheduler::new(Schedule::default());
        let mut lr = 0.01;
        lr = s.step(1.0, lr);
        for _ in 0..10 {
            lr = s.step(1.0, lr);
        }
        assert_eq!(lr, 0.01);
        lr = s.step(1.0, lr);
        assert_eq!(lr, 0.005);
        let mut tiny = 2e-5;
        for _ in 0..100 {
            tiny = s.step(1.0, tiny);
        }
        assert_eq!(tiny, 1e-5);
    }
}
