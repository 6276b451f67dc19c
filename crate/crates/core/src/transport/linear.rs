//! Linear conditional (cross-covariance) coarse-to-fine maps.
//!
//! When the fine-scale prior is Gaussian and the coarse-to-fine map is kept
//! linear, the conditional `θ | r_c` is Gaussian with a Kalman-gain-like
//! structure: `θ = μ_θ + Σ_{r_c θ}ᵀ r_c + (Σ_{θθ} - Σ_{r_c θ}ᵀ Σ_{r_c θ})^{1/2} r_f`,
//! with the cross-covariance estimated from joint prior samples and the
//! reference `r_c` standard normal by construction.

use super::TransportError;
use nalgebra::{DMatrix, DVector};

/// Gaussian conditional map `θ = mean + gain·r_c + noise_factor·r_f`.
#[derive(Debug, Clone)]
pub struct LinearConditionalMap {
    pub mean: DVector<f64>,
    /// `Σ_{r_c θ}ᵀ`, sized fine-dim × coarse-dim.
    pub gain: DMatrix<f64>,
    /// Symmetric PSD square root of the conditional covariance.
    pub noise_factor: DMatrix<f64>,
    /// Fraction of the conditional-covariance trace removed by clipping
    /// negative eigenvalues; above ~1e-6 it signals too few samples.
    pub clipped_trace_fraction: f64,
}

impl LinearConditionalMap {
    pub fn coarse_dim(&self) -> usize {
        self.gain.ncols()
    }

    pub fn fine_dim(&self) -> usize {
        self.gain.nrows()
    }

    /// True when eigenvalue clipping exceeded 1e-6 of the trace.
    pub fn clipping_warning(&self) -> bool {
        self.clipped_trace_fraction > 1e-6
    }

    pub fn sample(&self, r_c: &[f64], r_f: &[f64]) -> Result<DVector<f64>, TransportError> {
        if r_c.len() != self.coarse_dim() {
            return Err(TransportError::DimensionMismatch {
                expected: self.coarse_dim(),
                found: r_c.len(),
            });
        }
        if r_f.len() != self.fine_dim() {
            return Err(TransportError::DimensionMismatch {
                expected: self.fine_dim(),
                found: r_f.len(),
            });
        }
        let rc = DVector::from_column_slice(r_c);
        let rf = DVector::from_column_slice(r_f);
        let mut out = self.mean.clone();
        out.gemv(1.0, &self.gain, &rc, 1.0);
        out.gemv(1.0, &self.noise_factor, &rf, 1.0);
        Ok(out)
    }

    /// Conditional covariance implied by the stored factor.
    pub fn conditional_cov(&self) -> DMatrix<f64> {
        &self.noise_factor * self.noise_factor.transpose()
    }
}

/// Estimates the linear conditional map from paired samples of `r_c` and `θ`.
///
/// `prior_cov` is the (analytic) fine-scale prior covariance; the conditional
/// covariance `prior_cov - gain gainᵀ` is square-rooted by symmetric
/// eigendecomposition with negative eigenvalues clipped at zero.
pub fn cross_covariance_map(
    rc_samples: &DMatrix<f64>,
    theta_samples: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<LinearConditionalMap, TransportError> {
    let k = rc_samples.nrows();
    if theta_samples.nrows() != k || k < 2 {
        return Err(TransportError::DimensionMismatch {
            expected: k,
            found: theta_samples.nrows(),
        });
    }
    let d_c = rc_samples.ncols();
    let d_f = theta_samples.ncols();
    if prior_mean.len() != d_f || prior_cov.nrows() != d_f || prior_cov.ncols() != d_f {
        return Err(TransportError::DimensionMismatch { expected: d_f, found: prior_mean.len() });
    }

    let kf = k as f64;
    let mut rc_centered = rc_samples.clone();
    for c in 0..d_c {
        let m = rc_centered.column(c).sum() / kf;
        rc_centered.column_mut(c).add_scalar_mut(-m);
    }
    let mut th_centered = theta_samples.clone();
    for c in 0..d_f {
        let m = th_centered.column(c).sum() / kf;
        th_centered.column_mut(c).add_scalar_mut(-m);
    }
    // Σ_{r_c θ} is d_c × d_f; the gain is its transpose
    let mut cross = DMatrix::<f64>::zeros(d_c, d_f);
    cross.gemm_tr(1.0 / kf, &rc_centered, &th_centered, 0.0);
    let gain = cross.transpose();

    let cond = prior_cov - &gain * &cross;
    let (noise_factor, clipped_trace_fraction) = symmetric_sqrt_clipped(&cond);

    Ok(LinearConditionalMap { mean: prior_mean.clone(), gain, noise_factor, clipped_trace_fraction })
}

/// Symmetric PSD square root with negative eigenvalues clipped at zero;
/// returns the factor and the clipped fraction of the absolute eigenvalue mass.
pub(crate) fn symmetric_sqrt_clipped(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    let mut sym = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut clipped = 0.0f64;
    let mut total = 0.0f64;
    let mut sqrt_vals = eig.eigenvalues.clone();
    for v in sqrt_vals.iter_mut() {
        total += v.abs();
        if *v < 0.0 {
            clipped += -*v;
            *v = 0.0;
        }
        *v = v.sqrt();
    }
    let mut factor = eig.eigenvectors.clone();
    for c in 0..n {
        factor.column_mut(c).scale_mut(sqrt_vals[c]);
    }
    let factor = &factor * eig.eigenvectors.transpose();
    (factor, if total > 0.0 { clipped / total } else { 0.0 })
}
