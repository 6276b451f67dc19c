//! Inverse-map construction by componentwise linear least squares.
//!
//! Given pairs `(r^(k), x^(k))` with `r^(k) = T(x^(k))`, the inverse map `S`
//! with `S(T(x)) ≈ x` is fit one output at a time: regress `x_i` on the
//! Hermite basis evaluated at `r_{1..i}`. The normal equations are solved by
//! Cholesky; a failed or near-singular factorization reports rank deficiency.

use super::{MapComponent, TransportError, TriangularMap};
use crate::basis::{self, MultiIndexSet};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Fits the reference-to-target map `S` from `(reference, target)` sample
/// pairs, one least-squares problem per output dimension.
pub fn build_inverse_regression(
    references: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    index_sets: &[MultiIndexSet],
) -> Result<TriangularMap, TransportError> {
    if references.nrows() != targets.nrows() {
        return Err(TransportError::DimensionMismatch {
            expected: references.nrows(),
            found: targets.nrows(),
        });
    }
    for (i, set) in index_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(TransportError::EmptyIndexSet { component: i });
        }
        if set.input_dim() > i + 1 {
            return Err(TransportError::TriangularityViolation {
                component: i,
                set_dim: set.input_dim(),
                allowed: i + 1,
            });
        }
    }
    let components: Result<Vec<MapComponent>, TransportError> = index_sets
        .par_iter()
        .enumerate()
        .map(|(i, set)| regress_component(i, references, targets.column(i).into(), set))
        .collect();
    TriangularMap::new(components?)
}

fn regress_component(
    comp_idx: usize,
    references: &DMatrix<f64>,
    target: DVector<f64>,
    set: &MultiIndexSet,
) -> Result<MapComponent, TransportError> {
    let k = references.nrows();
    if k <= set.len() {
        return Err(TransportError::TooFewSamples {
            component: comp_idx,
            samples: k,
            terms: set.len(),
        });
    }
    let a = basis::vandermonde(set, references)?;
    let kf = k as f64;
    let mut q = DMatrix::<f64>::zeros(set.len(), set.len());
    q.gemm_tr(1.0 / kf, &a, &a, 0.0);
    let rhs = a.tr_mul(&target) / kf;
    let chol = nalgebra::Cholesky::new(q)
        .ok_or(TransportError::RankDeficient { component: comp_idx })?;
    // near-singular Gram matrices slip past Cholesky; check the pivot spread
    let l = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..set.len() {
        let d = l[(i, i)].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if !(dmin / dmax).is_finite() || dmin / dmax < 1e-13 {
        return Err(TransportError::RankDeficient { component: comp_idx });
    }
    let coeffs = chol.solve(&rhs);
    Ok(MapComponent { index_set: set.clone(), coefficients: coeffs.as_slice().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{build_map, BuildOptions};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_samples(k: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(k, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn affine_forward_map_inverts_exactly() {
        // T(x) = (x - 3)/2 over pairs r = T(x): S must be x = 2r + 3
        let k = 5000;
        let x = normal_samples(k, 1, 1).map(|v| 2.0 * v + 3.0);
        let r = x.map(|v| (v - 3.0) / 2.0);
        let sets = vec![MultiIndexSet::total_degree(1, 1)];
        let s = build_inverse_regression(&r, &x, &sets).unwrap();
        assert_relative_eq!(s.components[0].coefficients[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(s.components[0].coefficients[1], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn cubic_round_trip_against_pointwise_inversion() {
        // x = z^3 + z: build the forward map, regress the inverse, and compare
        // the round trip against pointwise inversion on fresh samples
        let k = 50_000;
        let z = normal_samples(k, 1, 2);
        let x = z.map(|v| v * v * v + v);
        let sets = vec![MultiIndexSet::total_degree(1, 3)];
        let fwd = build_map(&x, &sets, &BuildOptions::default()).unwrap();

        let mut r = DMatrix::<f64>::zeros(k, 1);
        for i in 0..k {
            r[(i, 0)] = fwd.evaluate(&[x[(i, 0)]]).unwrap()[0];
        }
        let inv = build_inverse_regression(&r, &x, &sets).unwrap();

        let fresh = normal_samples(4000, 1, 3).map(|v| v * v * v + v);
        let mut errs: Vec<f64> = Vec::with_capacity(fresh.nrows());
        for i in 0..fresh.nrows() {
            let xv = fresh[(i, 0)];
            let rv = fwd.evaluate(&[xv]).unwrap();
            let back = inv.evaluate(&rv).unwrap()[0];
            let exact = fwd.invert_pointwise(&rv, 1e-12).unwrap()[0];
            assert!((exact - xv).abs() < 1e-8);
            errs.push((back - xv).abs());
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p95 = errs[(0.95 * errs.len() as f64) as usize];
        assert!(p95 <= 0.05, "95th percentile round-trip error {p95}");
    }

    #[test]
    fn empty_index_set_is_an_error() {
        let r = normal_samples(10, 1, 4);
        let x = r.clone();
        let sets = vec![MultiIndexSet::from_indices(1, vec![])];
        assert!(matches!(
            build_inverse_regression(&r, &x, &sets),
            Err(TransportError::EmptyIndexSet { component: 0 })
        ));
    }

    #[test]
    fn duplicated_column_reports_rank_deficiency() {
        // constant reference coordinate makes He_1(r) columns collinear with He_0
        let k = 100;
        let r = DMatrix::from_element(k, 1, 0.5);
        let x = normal_samples(k, 1, 5);
        let sets = vec![MultiIndexSet::total_degree(1, 2)];
        assert!(matches!(
            build_inverse_regression(&r, &x, &sets),
            Err(TransportError::RankDeficient { component: 0 })
        ));
    }
}
