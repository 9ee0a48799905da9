use super::{Activation, CornnScalars, RecurrentLayer};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// One explicit CoRNN update for a single sample:
/// `z' = z + Δt(σ(W y + W̃ z + V u + b) − γ y − ε z)`, `y' = y + Δt z'`.
pub fn cornn_step(
    layer: &RecurrentLayer,
    activation: Activation,
    scalars: CornnScalars,
    y: &[f64],
    z: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let RecurrentLayer::Cornn { w, w_tilde, v_in, b } = layer else {
        return Err(Error::ShapeMismatch("cornn_step needs a CoRNN layer".into()));
    };
    let q = b.len();
    if y.len() != q || z.len() != q || u.len() != v_in.cols {
        return Err(Error::ShapeMismatch(format!(
            "state widths {}/{} and input {} do not match q={q}, input {}",
            y.len(),
            z.len(),
            u.len(),
            v_in.cols
        )));
    }
    let CornnScalars { gamma, epsilon, dt } = scalars;
    let mut y_next = vec![0.0; q];
    let mut z_next = vec![0.0; q];
    for j in 0..q {
        let pre = dot(w.row(j), y) + dot(w_tilde.row(j), z) + dot(v_in.row(j), u) + b[j];
        z_next[j] = z[j] + dt * (activation.apply(pre) - gamma * y[j] - epsilon * z[j]);
        y_next[j] = y[j] + dt * z_next[j];
    }
    Ok((y_next, z_next))
}
