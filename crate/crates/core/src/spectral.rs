//! Dense spectral oracles for small graphs: exact wave solutions, moment
//! sequences, receptive fields and projection recovery from a vertex signal.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::{LaplacianOperator, Variant};

pub const DEFAULT_ORACLE_LIMIT: usize = 2000;
pub const DEFAULT_RECEPTIVE_TOL: f64 = 1e-8;

/// Ascending eigenvalues and orthonormal eigenvectors (columns of `vectors`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub vectors: Mat,
    pub source: Option<Variant>,
}

pub fn eigendecompose(op: &LaplacianOperator) -> Result<SpectralDecomposition> {
    eigendecompose_with_limit(op, DEFAULT_ORACLE_LIMIT)
}

pub fn eigendecompose_with_limit(op: &LaplacianOperator, limit: usize) -> Result<SpectralDecomposition> {
    let n = op.dim();
    if n > limit {
        return Err(Error::TooLargeForOracle { n, limit });
    }
    let mut dec = decompose_dense(&op.to_dense())?;
    dec.source = Some(op.variant());
    Ok(dec)
}

/// Decompose any symmetric PSD matrix. Each eigenvector is flipped so that its
/// largest-magnitude entry (lowest index on ties) is positive.
pub fn decompose_dense(m: &Mat) -> Result<SpectralDecomposition> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::DimensionMismatch("matrix is not square".into()));
    }
    if n == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: vec![],
            vectors: Mat::zeros(0, 0),
            source: None,
        });
    }
    let dm = DMatrix::from_row_slice(n, n, &m.data);
    let eig = SymmetricEigen::try_new(dm, 1e-15, 10_000)
        .ok_or_else(|| Error::ConvergenceFailure("symmetric QR did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = Mat::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut lambda = eig.eigenvalues[src];
        if lambda < 0.0 {
            if lambda < -1e-9 {
                return Err(Error::ConvergenceFailure(format!(
                    "eigenvalue {lambda} is negative; operator is not positive semi-definite"
                )));
            }
            lambda = 0.0;
        }
        eigenvalues.push(lambda);
        let col: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, src)]).collect();
        let mut pivot = 0;
        for (i, c) in col.iter().enumerate() {
            if c.abs() > col[pivot].abs() * (1.0 + 1e-12) {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, c) in col.iter().enumerate() {
            vectors.set(i, k, sign * c);
        }
    }

    let dec = SpectralDecomposition {
        eigenvalues,
        vectors,
        source: None,
    };
    let err = dec.reconstruct().max_abs_diff(m);
    if err > 1e-8 * m.max_abs().max(1.0) {
        return Err(Error::ConvergenceFailure(format!(
            "reconstruction error {err:e}"
        )));
    }
    Ok(dec)
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvector `i` as a vector.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.col(i)
    }

    /// `U Λ Uᵀ`.
    pub fn reconstruct(&self) -> Mat {
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        for k in 0..n {
            let l = self.eigenvalues[k];
            for i in 0..n {
                let a = l * self.vectors.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * self.vectors.get(j, k);
                }
            }
        }
        out
    }

    /// Largest deviation of `UᵀU` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let utu = self.vectors.transpose().matmul(&self.vectors);
        utu.max_abs_diff(&Mat::identity(self.dim()))
    }

    /// Decomposition of the squared operator (same eigenvectors, eigenvalues
    /// `λ²`). Its wave signal oscillates at angular frequencies `λ_i`, the
    /// form consumed by [`recover_projections`].
    pub fn squared(&self) -> SpectralDecomposition {
        SpectralDecomposition {
            eigenvalues: self.eigenvalues.iter().map(|l| l * l).collect(),
            vectors: self.vectors.clone(),
            source: self.source,
        }
    }

    /// `Uᵀ x`: spectral coefficients, one row per eigenvector.
    pub fn coefficients(&self, x: &Mat) -> Result<Mat> {
        if x.rows != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} rows, decomposition dimension is {}",
                x.rows,
                self.dim()
            )));
        }
        Ok(self.vectors.transpose().matmul(x))
    }

    fn synthesize(&self, coeffs: &Mat, weight: impl Fn(f64) -> f64) -> Mat {
        let n = self.dim();
        let mut out = Mat::zeros(n, coeffs.cols);
        for k in 0..n {
            let w = weight(self.eigenvalues[k]);
            if w == 0.0 {
                continue;
            }
            let c = coeffs.row(k);
            for i in 0..n {
                let phi = w * self.vectors.get(i, k);
                for (o, ci) in out.row_mut(i).iter_mut().zip(c) {
                    *o += phi * ci;
                }
            }
        }
        out
    }
}

/// `X(t) = Σ_i φ_i cos(√λ_i t) ⟨φ_i, x0⟩` at each requested time.
pub fn exact_signal(dec: &SpectralDecomposition, x0: &Mat, times: &[f64]) -> Result<Vec<Mat>> {
    let coeffs = dec.coefficients(x0)?;
    Ok(times
        .iter()
        .map(|&t| dec.synthesize(&coeffs, |l| (l.sqrt() * t).cos()))
        .collect())
}

/// `Ẋ(t) = -Σ_i φ_i √λ_i sin(√λ_i t) ⟨φ_i, x0⟩`.
pub fn exact_velocity(dec: &SpectralDecomposition, x0: &Mat, times: &[f64]) -> Result<Vec<Mat>> {
    let coeffs = dec.coefficients(x0)?;
    Ok(times
        .iter()
        .map(|&t| {
            dec.synthesize(&coeffs, |l| {
                let w = l.sqrt();
                -w * (w * t).sin()
            })
        })
        .collect())
}

/// `[x0, L x0, …, L^{n_max} x0]`.
pub fn moment_sequence(op: &LaplacianOperator, x0: &Mat, n_max: usize) -> Result<Vec<Mat>> {
    let mut out = Vec::with_capacity(n_max + 1);
    if x0.rows != op.dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} rows, operator dimension is {}",
            x0.rows,
            op.dim()
        )));
    }
    out.push(x0.clone());
    for k in 0..n_max {
        let next = op.apply(&out[k])?;
        out.push(next);
    }
    Ok(out)
}

pub const ENCODING_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingComparison {
    pub moments_agree: bool,
    /// Largest moment difference relative to `max(1, |moment|∞)`.
    pub max_moment_deviation: f64,
    pub first_differing_moment: Option<usize>,
    pub signals_agree: bool,
    pub max_signal_deviation: f64,
    /// Moments and signals disagree in their verdicts. Should never happen.
    pub violation: bool,
}

/// Compare two encodings through their moment sequences and their exact wave
/// signals. Moment `k` is compared relative to its own magnitude, since
/// `|L^k x|` grows like `λmax^k`.
pub fn compare_encodings(
    op_g: &LaplacianOperator,
    x_g: &Mat,
    op_h: &LaplacianOperator,
    x_h: &Mat,
    n_max: usize,
    sample_times: &[f64],
) -> Result<EncodingComparison> {
    if op_g.dim() != op_h.dim() || x_g.shape() != x_h.shape() {
        return Err(Error::DimensionMismatch(
            "encodings must share the vertex set and feature width".into(),
        ));
    }
    let mg = moment_sequence(op_g, x_g, n_max)?;
    let mh = moment_sequence(op_h, x_h, n_max)?;
    let mut max_moment_deviation = 0.0f64;
    let mut first_differing_moment = None;
    for (k, (a, b)) in mg.iter().zip(&mh).enumerate() {
        let scale = a.max_abs().max(b.max_abs()).max(1.0);
        let dev = a.max_abs_diff(b) / scale;
        max_moment_deviation = max_moment_deviation.max(dev);
        if dev > ENCODING_TOL && first_differing_moment.is_none() {
            first_differing_moment = Some(k);
        }
    }

    let dg = eigendecompose(op_g)?;
    let dh = eigendecompose(op_h)?;
    let sg = exact_signal(&dg, x_g, sample_times)?;
    let sh = exact_signal(&dh, x_h, sample_times)?;
    let scale = x_g.max_abs().max(x_h.max_abs()).max(1.0);
    let max_signal_deviation = sg
        .iter()
        .zip(&sh)
        .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)))
        / scale;

    let moments_agree = first_differing_moment.is_none();
    let signals_agree = max_signal_deviation <= ENCODING_TOL;
    let violation = moments_agree != signals_agree;
    if violation {
        log::error!(
            "encoding equivalence violated: moments_agree={moments_agree}, signals_agree={signals_agree}"
        );
    }
    Ok(EncodingComparison {
        moments_agree,
        max_moment_deviation,
        first_differing_moment,
        signals_agree,
        max_signal_deviation,
        violation,
    })
}

/// Eigenvectors not orthogonal to `e_v`. Indices are 0-based positions in the
/// ascending spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceptiveField {
    pub vertex: usize,
    pub members: Vec<usize>,
    pub tol: f64,
    pub unique_spectrum: bool,
}

impl ReceptiveField {
    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }
}

/// Membership test is `|φ_i(v)| > tol · ‖φ_i‖∞`; the spectrum counts as unique
/// when every gap between consecutive eigenvalues exceeds `tol`.
pub fn receptive_field(dec: &SpectralDecomposition, v: usize, tol: f64) -> Result<ReceptiveField> {
    let n = dec.dim();
    if v >= n {
        return Err(Error::VertexOutOfRange { vertex: v, n });
    }
    let members = (0..n)
        .filter(|&i| {
            let col = dec.vector(i);
            let inf = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            col[v].abs() > tol * inf
        })
        .collect();
    let unique_spectrum = dec.eigenvalues.windows(2).all(|w| w[1] - w[0] > tol);
    Ok(ReceptiveField {
        vertex: v,
        members,
        tol,
        unique_spectrum,
    })
}

/// Recover `⟨φ_i, x⟩` for every `φ_i` in the receptive field of `v` from the
/// scalar signal observed at `v`.
///
/// `samples` holds `X_v(s)` on the uniform grid `s_j = j·2πk/M`,
/// `j = 0..=M`, for a signal oscillating at the eigenvalues of `dec` (see
/// [`SpectralDecomposition::squared`]). The inner product
/// `⟨u_i, X_v⟩ = (1/πk) ∫_0^{2πk} cos(λ_i s)/φ_i(v) · X_v(s) ds` is evaluated
/// with the trapezoid rule on `quadrature_steps` panels; `M` must be a
/// multiple of it. The `λ = 0` term integrates to twice its coefficient and
/// is halved.
///
/// Returns `(eigen index, projection)` pairs.
pub fn recover_projections(
    samples: &[f64],
    dec: &SpectralDecomposition,
    v: usize,
    k: u32,
    quadrature_steps: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::NonIntegralSpectrum { value: 0.0, k });
    }
    for &l in &dec.eigenvalues {
        let scaled = l * k as f64;
        if (scaled - scaled.round()).abs() > 1e-9 {
            return Err(Error::NonIntegralSpectrum { value: l, k });
        }
    }
    for w in dec.eigenvalues.windows(2) {
        if (w[1] - w[0]).abs() <= 1e-9 {
            return Err(Error::RepeatedEigenvalues(w[0], w[1]));
        }
    }
    if quadrature_steps == 0 || samples.len() < 2 {
        return Err(Error::InsufficientSamples("need at least one panel".into()));
    }
    let m = samples.len() - 1;
    if m < quadrature_steps || m % quadrature_steps != 0 {
        return Err(Error::InsufficientSamples(format!(
            "{m} sample intervals cannot support {quadrature_steps} quadrature panels"
        )));
    }
    let stride = m / quadrature_steps;
    let field = receptive_field(dec, v, DEFAULT_RECEPTIVE_TOL)?;
    let period = 2.0 * PI * k as f64;
    let ds = period / quadrature_steps as f64;

    Ok(field
        .members
        .iter()
        .map(|&i| {
            let lambda = dec.eigenvalues[i];
            let mut acc = 0.0;
            for j in 0..=quadrature_steps {
                let s = j as f64 * ds;
                let w = if j == 0 || j == quadrature_steps { 0.5 } else { 1.0 };
                acc += w * (lambda * s).cos() * samples[j * stride];
            }
            let mut p = acc * ds / (PI * k as f64) / dec.vectors.get(v, i);
            if lambda == 0.0 {
                p *= 0.5;
            }
            (i, p)
        })
        .collect())
}
