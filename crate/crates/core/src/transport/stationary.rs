//! Stationary block coarse maps.
//!
//! For a stationary prior, the per-element coarse blocks `γ_v` are
//! identically distributed, so a single low-dimensional marginal map handles
//! the non-Gaussian within-block structure while a block lower-triangular
//! Cholesky factor of `Cov[r_c^m]` captures correlations between elements:
//!
//! ```text
//!   γ_v = S̄^m( (L r_c)_v ),      r_c = L⁻¹ [ T̃^m(γ_1); …; T̃^m(γ_V) ].
//! ```

use super::{build_map, build_inverse_regression, BuildOptions, TransportError, TriangularMap};
use crate::basis::MultiIndexSet;
use nalgebra::{DMatrix, DVector};

/// Shared marginal map plus block Cholesky factor over all coarse elements.
#[derive(Debug, Clone)]
pub struct StationaryCoarseMap {
    /// `T̃^m`: per-element block to iid standard normal (optimization-built).
    pub forward_marginal: TriangularMap,
    /// `S̄^m`: regression inverse of the marginal map.
    pub inverse_marginal: TriangularMap,
    /// Lower Cholesky factor of `Cov[r_c^m]`, size `(block·elements)²`.
    pub cholesky_l: DMatrix<f64>,
    pub block: usize,
    pub elements: usize,
}

impl StationaryCoarseMap {
    pub fn dim(&self) -> usize {
        self.block * self.elements
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), TransportError> {
        if v.len() != self.dim() {
            return Err(TransportError::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        Ok(())
    }

    /// `r_c → γ` through the regression inverse: `γ_v = S̄^m((L r_c)_v)`.
    pub fn sample(&self, r_c: &[f64]) -> Result<Vec<f64>, TransportError> {
        self.check_dim(r_c)?;
        let m = &self.cholesky_l * DVector::from_column_slice(r_c);
        let mut out = vec![0.0; self.dim()];
        for v in 0..self.elements {
            let blk = &m.as_slice()[v * self.block..(v + 1) * self.block];
            let g = self.inverse_marginal.evaluate(blk)?;
            out[v * self.block..(v + 1) * self.block].copy_from_slice(&g);
        }
        Ok(out)
    }

    /// `γ → r_c` through the forward marginal map and `L⁻¹`.
    pub fn to_reference(&self, gamma: &[f64]) -> Result<Vec<f64>, TransportError> {
        self.check_dim(gamma)?;
        let mut t = DVector::<f64>::zeros(self.dim());
        for v in 0..self.elements {
            let blk = &gamma[v * self.block..(v + 1) * self.block];
            let r = self.forward_marginal.evaluate(blk)?;
            t.as_mut_slice()[v * self.block..(v + 1) * self.block].copy_from_slice(&r);
        }
        let solved = self
            .cholesky_l
            .clone()
            .solve_lower_triangular(&t)
            .ok_or(TransportError::CovarianceNotPD)?;
        Ok(solved.as_slice().to_vec())
    }

    /// `r_c → γ` by pointwise inversion of the forward marginal; exact to the
    /// root-solve tolerance, unlike the regression path.
    pub fn from_reference_exact(&self, r_c: &[f64], tol: f64) -> Result<Vec<f64>, TransportError> {
        self.check_dim(r_c)?;
        let m = &self.cholesky_l * DVector::from_column_slice(r_c);
        let mut out = vec![0.0; self.dim()];
        for v in 0..self.elements {
            let blk = &m.as_slice()[v * self.block..(v + 1) * self.block];
            let g = self.forward_marginal.invert_pointwise(blk, tol)?;
            out[v * self.block..(v + 1) * self.block].copy_from_slice(&g);
        }
        Ok(out)
    }

    /// Jacobian of [`Self::sample`]: `blockdiag(J_{S̄^m}((L r_c)_v)) · L`.
    pub fn sample_jacobian(&self, r_c: &[f64]) -> Result<DMatrix<f64>, TransportError> {
        self.check_dim(r_c)?;
        let m = &self.cholesky_l * DVector::from_column_slice(r_c);
        let d = self.dim();
        let mut block_jac = DMatrix::<f64>::zeros(d, d);
        for v in 0..self.elements {
            let blk = &m.as_slice()[v * self.block..(v + 1) * self.block];
            let j = self.inverse_marginal.jacobian(blk)?;
            let off = v * self.block;
            for a in 0..self.block {
                for b in 0..self.block {
                    block_jac[(off + a, off + b)] = j[(a, b)];
                }
            }
        }
        Ok(block_jac * &self.cholesky_l)
    }
}

/// Builds a [`StationaryCoarseMap`] from per-element samples.
///
/// `element_samples` is `K × (block·elements)` with one contiguous block per
/// element, in a fixed element order. Blocks are pooled (stationarity) to
/// build the marginal map; `build_subsample > 0` thins the pooled rows by a
/// deterministic stride for the optimization and regression stages only.
pub fn build_stationary_coarse_map(
    element_samples: &DMatrix<f64>,
    block: usize,
    marginal_sets: &[MultiIndexSet],
    opts: &BuildOptions,
    build_subsample: usize,
) -> Result<StationaryCoarseMap, TransportError> {
    let k = element_samples.nrows();
    let total = element_samples.ncols();
    if block == 0 || total % block != 0 {
        return Err(TransportError::DimensionMismatch { expected: block, found: total });
    }
    let elements = total / block;

    // pool per-element blocks
    let pooled_rows = k * elements;
    let mut pooled = DMatrix::<f64>::zeros(pooled_rows, block);
    for v in 0..elements {
        for r in 0..k {
            for c in 0..block {
                pooled[(v * k + r, c)] = element_samples[(r, v * block + c)];
            }
        }
    }

    let build_rows = if build_subsample > 0 && build_subsample < pooled_rows {
        let stride = pooled_rows.div_ceil(build_subsample);
        let idx: Vec<usize> = (0..pooled_rows).step_by(stride).collect();
        pooled.select_rows(&idx)
    } else {
        pooled.clone()
    };

    let forward_marginal = build_map(&build_rows, marginal_sets, opts)?;

    // reference blocks for every sample and element
    let mut refs_pooled = DMatrix::<f64>::zeros(build_rows.nrows(), block);
    for r in 0..build_rows.nrows() {
        let out = forward_marginal.evaluate(&build_rows.row(r).iter().copied().collect::<Vec<_>>())?;
        for c in 0..block {
            refs_pooled[(r, c)] = out[c];
        }
    }
    let inverse_marginal = build_inverse_regression(&refs_pooled, &build_rows, marginal_sets)?;

    // covariance of the concatenated per-element references on the full set
    let mut rm = DMatrix::<f64>::zeros(k, total);
    let mut buf = vec![0.0; block];
    for r in 0..k {
        for v in 0..elements {
            for c in 0..block {
                buf[c] = element_samples[(r, v * block + c)];
            }
            let out = forward_marginal.evaluate(&buf)?;
            for c in 0..block {
                rm[(r, v * block + c)] = out[c];
            }
        }
    }
    let kf = k as f64;
    let mut means = vec![0.0f64; total];
    for c in 0..total {
        means[c] = rm.column(c).sum() / kf;
    }
    for c in 0..total {
        rm.column_mut(c).add_scalar_mut(-means[c]);
    }
    let mut cov = DMatrix::<f64>::zeros(total, total);
    cov.gemm_tr(1.0 / kf, &rm, &rm, 0.0);
    let chol = nalgebra::Cholesky::new(cov).ok_or(TransportError::CovarianceNotPD)?;

    Ok(StationaryCoarseMap {
        forward_marginal,
        inverse_marginal,
        cholesky_l: chol.l(),
        block,
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Two-coordinate non-Gaussian blocks with a common marginal law.
    fn block_samples(k: usize, elements: usize, coupling: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = 2;
        let mut out = DMatrix::<f64>::zeros(k, block * elements);
        for r in 0..k {
            let shared: f64 = StandardNormal.sample(&mut rng);
            for v in 0..elements {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let a = (1.0 - coupling * coupling).sqrt() * z1 + coupling * shared;
                let b = 0.5 * a + z2;
                out[(r, v * block)] = a + 0.15 * a * a * a;
                out[(r, v * block + 1)] = b;
            }
        }
        out
    }

    fn marginal_sets(block: usize, degree: usize) -> Vec<MultiIndexSet> {
        (0..block).map(|i| MultiIndexSet::total_degree(i + 1, degree)).collect()
    }

    #[test]
    fn cholesky_reproduces_reference_covariance() {
        let samples = block_samples(20_000, 3, 0.6, 1);
        let map = build_stationary_coarse_map(
            &samples,
            2,
            &marginal_sets(2, 3),
            &BuildOptions::default(),
            0,
        )
        .unwrap();
        // recompute Cov[r_c^m] and compare against L Lᵀ
        let k = samples.nrows();
        let total = samples.ncols();
        let mut rm = DMatrix::<f64>::zeros(k, total);
        let mut buf = [0.0f64; 2];
        for r in 0..k {
            for v in 0..3 {
                buf[0] = samples[(r, 2 * v)];
                buf[1] = samples[(r, 2 * v + 1)];
                let out = map.forward_marginal.evaluate(&buf).unwrap();
                rm[(r, 2 * v)] = out[0];
                rm[(r, 2 * v + 1)] = out[1];
            }
        }
        let kf = k as f64;
        for c in 0..total {
            let m = rm.column(c).sum() / kf;
            rm.column_mut(c).add_scalar_mut(-m);
        }
        let mut cov = DMatrix::<f64>::zeros(total, total);
        cov.gemm_tr(1.0 / kf, &rm, &rm, 0.0);
        let ll = &map.cholesky_l * map.cholesky_l.transpose();
        assert!((&ll - &cov).amax() < 1e-8);

        // diagonal blocks lower-triangular with positive diagonal
        for v in 0..3 {
            for a in 0..2 {
                assert!(map.cholesky_l[(2 * v + a, 2 * v + a)] > 0.0);
                for b in (a + 1)..2 {
                    assert_eq!(map.cholesky_l[(2 * v + a, 2 * v + b)], 0.0);
                }
            }
        }
    }

    #[test]
    fn independent_elements_have_zero_off_diagonal_blocks() {
        let samples = block_samples(100_000, 2, 0.0, 2);
        let map = build_stationary_coarse_map(
            &samples,
            2,
            &marginal_sets(2, 3),
            &BuildOptions::default(),
            20_000,
        )
        .unwrap();
        for a in 2..4 {
            for b in 0..2 {
                assert!(
                    map.cholesky_l[(a, b)].abs() <= 0.05,
                    "off-diagonal block entry ({a},{b}) = {}",
                    map.cholesky_l[(a, b)]
                );
            }
        }
    }

    #[test]
    fn single_element_reduces_to_marginal_map() {
        let samples = block_samples(20_000, 1, 0.0, 3);
        let map = build_stationary_coarse_map(
            &samples,
            2,
            &marginal_sets(2, 3),
            &BuildOptions::default(),
            0,
        )
        .unwrap();
        assert_eq!(map.elements, 1);
        assert_eq!(map.cholesky_l.nrows(), 2);
        let r = [0.3, -0.8];
        let m = &map.cholesky_l * nalgebra::DVector::from_column_slice(&r);
        let manual = map.inverse_marginal.evaluate(m.as_slice()).unwrap();
        let via_map = map.sample(&r).unwrap();
        assert_eq!(manual, via_map);
    }

    #[test]
    fn forward_and_exact_inverse_compose_to_identity() {
        let samples = block_samples(20_000, 2, 0.5, 4);
        let map = build_stationary_coarse_map(
            &samples,
            2,
            &marginal_sets(2, 3),
            &BuildOptions::default(),
            0,
        )
        .unwrap();
        for r in (0..samples.nrows()).step_by(997) {
            let gamma: Vec<f64> = samples.row(r).iter().copied().collect();
            let rc = map.to_reference(&gamma).unwrap();
            let back = map.from_reference_exact(&rc, 1e-12).unwrap();
            for (g, b) in gamma.iter().zip(&back) {
                assert!((g - b).abs() < 1e-6, "round trip {g} vs {b}");
            }
        }
    }
}
