use crate::error::{Error, Result};
use crate::linalg::Mat;

fn masked_rows(mask: &[bool], rows: usize) -> Result<Vec<usize>> {
    if mask.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries for {rows} rows",
            mask.len()
        )));
    }
    let idx: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(idx)
}

/// Mean of `−log softmax(logits_v)[label_v]` over masked rows, and its
/// gradient with respect to all logits (zero off the mask).
pub fn masked_cross_entropy(logits: &Mat, labels: &[usize], mask: &[bool]) -> Result<(f64, Mat)> {
    if labels.len() != logits.rows {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows
        )));
    }
    let rows = masked_rows(mask, logits.rows)?;
    let c = logits.cols;
    let scale = 1.0 / rows.len() as f64;
    let mut grad = Mat::zeros(logits.rows, c);
    let mut total = 0.0;
    for &v in &rows {
        let label = labels[v];
        if label >= c {
            return Err(Error::LabelOutOfRange {
                vertex: v,
                label,
                classes: c,
            });
        }
        let z = logits.row(v);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&x| (x - max).exp()).sum();
        let log_norm = max + sum.ln();
        total += log_norm - z[label];
        let g = grad.row_mut(v);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = scale * (z[k] - log_norm).exp();
        }
        g[label] -= scale;
    }
    Ok((total * scale, grad))
}

/// Mean absolute error over masked rows and all columns. The subgradient at
/// a zero residual is 0.
pub fn l1_loss(pred: &Mat, target: &Mat, mask: &[bool]) -> Result<(f64, Mat)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let rows = masked_rows(mask, pred.rows)?;
    let scale = 1.0 / (rows.len() * pred.cols) as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut total = 0.0;
    for &v in &rows {
        for k in 0..pred.cols {
            let r = pred.get(v, k) - target.get(v, k);
            total += r.abs();
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.set(v, k, s * scale);
        }
    }
    Ok((total * scale, grad))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of masked rows whose argmax equals the label.
pub fn accuracy(logits: &Mat, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let rows = masked_rows(mask, logits.rows)?;
    let hits = rows
        .iter()
        .filter(|&&v| argmax(logits.row(v)) == labels[v])
        .count();
    Ok(hits as f64 / rows.len() as f64)
}

pub fn mean_absolute_error(pred: &Mat, target: &Mat, mask: &[bool]) -> Result<f64> {
    Ok(l1_loss(pred, target, mask)?.0)
}
