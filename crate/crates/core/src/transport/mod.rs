//! Lower-triangular (Knothe–Rosenblatt) transport maps.
//!
//! A [`TriangularMap`] pushes a target distribution forward to a standard
//! normal reference; component `i` depends only on the first `i` input
//! coordinates and is monotone increasing in its own coordinate on the
//! training set. Maps are built from samples by constrained optimization
//! ([`build_map`]), inverted globally by regression
//! ([`build_inverse_regression`]) or pointwise by bracketed root solves.
//!
//! Two structured conditional maps complement the generic polynomial form:
//! [`LinearConditionalMap`] (cross-covariance, Kalman-gain-like) and
//! [`StationaryCoarseMap`] (a shared low-dimensional marginal map plus a
//! block Cholesky factor capturing inter-element correlation).

mod build;
mod linear;
mod regression;
mod stationary;

pub use build::{build_component, build_map};
pub use linear::{cross_covariance_map, LinearConditionalMap};
pub use regression::build_inverse_regression;
pub use stationary::{build_stationary_coarse_map, StationaryCoarseMap};

use crate::basis::{self, BasisError, MultiIndexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("point has dimension {found}, map expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("component {component}: diagonal partial {value:.3e} is not positive at the query point")]
    NonMonotonePoint { component: usize, value: f64 },
    #[error("component {component}: no sign change found while expanding the inversion bracket")]
    BracketFailure { component: usize },
    #[error("component {component}: identity initialization infeasible (min diagonal {min_diag:.3e} < {lambda:.3e}) and rescaling failed")]
    InfeasibleStart { component: usize, min_diag: f64, lambda: f64 },
    #[error("component {component}: augmented Lagrangian did not converge in {outer} outer iterations (violation {violation:.3e}, grad {grad:.3e})")]
    MaxIterations { component: usize, outer: usize, violation: f64, grad: f64 },
    #[error("component {component}: regression matrix is numerically rank-deficient")]
    RankDeficient { component: usize },
    #[error("component {component}: index set is empty")]
    EmptyIndexSet { component: usize },
    #[error("component {component}: index set spans {set_dim} inputs, triangularity allows {allowed}")]
    TriangularityViolation { component: usize, set_dim: usize, allowed: usize },
    #[error("need more samples than basis functions: K={samples} <= |J|={terms} (component {component})")]
    TooFewSamples { component: usize, samples: usize, terms: usize },
    #[error("covariance of the per-element reference blocks is not positive definite")]
    CovarianceNotPD,
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Settings for sample-based map construction.
///
/// The solver is an augmented Lagrangian over the monotonicity inequalities
/// and the zero-mean / unit-second-moment equalities, with a full Newton
/// inner solver and Armijo backtracking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Lower bound on the diagonal partials at the training samples.
    pub lambda_min: f64,
    /// Initial quadratic-penalty coefficient.
    pub penalty_init: f64,
    /// Penalty growth factor applied when the constraint violation stalls.
    pub penalty_growth: f64,
    /// Required violation shrink factor between multiplier updates.
    pub violation_shrink: f64,
    /// KKT tolerance (constraint violation and Lagrangian stationarity).
    pub outer_tol: f64,
    /// Outer (multiplier/penalty) iteration cap.
    pub max_outer: usize,
    /// Newton iteration cap per subproblem.
    pub max_newton: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking halvings allowed per line search.
    pub max_backtracks: usize,
    /// Standardize samples per coordinate before optimizing; the affine
    /// factors are folded back into the returned coefficients.
    pub standardize: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            lambda_min: 1e-5,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            violation_shrink: 4.0,
            outer_tol: 1e-8,
            max_outer: 60,
            max_newton: 100,
            armijo_c: 1e-4,
            max_backtracks: 60,
            standardize: true,
        }
    }
}

/// One output dimension of a triangular map: a coefficient vector over a
/// multi-index set whose input dimension equals the component's position + 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapComponent {
    pub index_set: MultiIndexSet,
    pub coefficients: Vec<f64>,
}

impl MapComponent {
    pub fn input_dim(&self) -> usize {
        self.index_set.input_dim()
    }

    /// `Σ_j α_j ψ_j(x)` using the first `input_dim` entries of `x`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.index_set.indices().iter().zip(&self.coefficients) {
            if c != 0.0 {
                acc += c * basis::basis_eval(j, x);
            }
        }
        acc
    }

    /// Partial derivative along the component's own (last) coordinate.
    pub fn diag_partial(&self, x: &[f64]) -> f64 {
        let k = self.input_dim() - 1;
        self.partial(x, k)
    }

    /// Partial derivative along coordinate `k`.
    pub fn partial(&self, x: &[f64], k: usize) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.index_set.indices().iter().zip(&self.coefficients) {
            if c != 0.0 {
                acc += c * basis::basis_partial(j, x, k);
            }
        }
        acc
    }
}

/// Lower-triangular transport map; component `i` reads coordinates `0..=i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriangularMap {
    pub dim: usize,
    pub components: Vec<MapComponent>,
}

impl TriangularMap {
    pub fn new(components: Vec<MapComponent>) -> Result<Self, TransportError> {
        let dim = components.len();
        for (i, comp) in components.iter().enumerate() {
            if comp.index_set.is_empty() {
                return Err(TransportError::EmptyIndexSet { component: i });
            }
            if comp.input_dim() > i + 1 {
                return Err(TransportError::TriangularityViolation {
                    component: i,
                    set_dim: comp.input_dim(),
                    allowed: i + 1,
                });
            }
        }
        Ok(Self { dim, components })
    }

    /// The identity map: `He_1` on each component's own coordinate.
    pub fn identity(dim: usize) -> Self {
        let components = (0..dim)
            .map(|i| {
                let set = MultiIndexSet::from_indices(i + 1, vec![vec![0; i + 1], {
                    let mut v = vec![0; i + 1];
                    v[i] = 1;
                    v
                }]);
                // graded-lex order puts the constant first
                MapComponent { index_set: set, coefficients: vec![0.0, 1.0] }
            })
            .collect();
        Self { dim, components }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), TransportError> {
        if x.len() != self.dim {
            return Err(TransportError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    /// `r_i = T_i(x_1..x_i)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, TransportError> {
        self.check_dim(x)?;
        Ok(self.components.iter().map(|c| c.evaluate(x)).collect())
    }

    /// `Σ_i log ∂T_i/∂x_i(x)`; the map must be monotone at `x`.
    pub fn logdet_jacobian(&self, x: &[f64]) -> Result<f64, TransportError> {
        self.check_dim(x)?;
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            let d = c.diag_partial(x);
            if d <= 0.0 {
                return Err(TransportError::NonMonotonePoint { component: i, value: d });
            }
            acc += d.ln();
        }
        Ok(acc)
    }

    /// Log density of the pullback of the standard normal through the map:
    /// `log p(T(x)) + log det ∇T(x)`.
    pub fn pullback_logdensity(&self, x: &[f64]) -> Result<f64, TransportError> {
        let r = self.evaluate(x)?;
        let ld = self.logdet_jacobian(x)?;
        let sq: f64 = r.iter().map(|v| v * v).sum();
        Ok(-0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq + ld)
    }

    /// Full lower-triangular Jacobian `∂T_i/∂x_j` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<nalgebra::DMatrix<f64>, TransportError> {
        self.check_dim(x)?;
        let mut jac = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for (i, c) in self.components.iter().enumerate() {
            for j in 0..c.input_dim() {
                jac[(i, j)] = c.partial(x, j);
            }
        }
        Ok(jac)
    }

    /// Solves `T(x) = r` coordinate by coordinate with bracketed root solves
    /// (bracket expansion, then a bisection-safeguarded Newton iteration).
    /// Returns `x` with `|T(x) - r|_inf <= tol`.
    pub fn invert_pointwise(&self, r: &[f64], tol: f64) -> Result<Vec<f64>, TransportError> {
        self.check_dim(r)?;
        let mut x = vec![0.0; self.dim];
        for i in 0..self.dim {
            let comp = &self.components[i];
            x[i] = invert_component(comp, &x[..], i, r[i], tol)?;
        }
        Ok(x)
    }
}

/// Solves `comp(x_0..x_{i-1}, t) = target` for `t`, writing nothing into `x`.
fn invert_component(
    comp: &MapComponent,
    x: &[f64],
    i: usize,
    target: f64,
    tol: f64,
) -> Result<f64, TransportError> {
    let mut buf = x[..comp.input_dim().min(x.len())].to_vec();
    buf.resize(comp.input_dim(), 0.0);
    let own = comp.input_dim() - 1;
    let f = |t: f64, buf: &mut Vec<f64>| {
        buf[own] = t;
        comp.evaluate(buf) - target
    };

    // expand a bracket around the reference value (identity-map guess)
    let mut lo = target - 1.0;
    let mut hi = target + 1.0;
    let mut flo = f(lo, &mut buf);
    let mut fhi = f(hi, &mut buf);
    let mut width = 2.0;
    while flo > 0.0 || fhi < 0.0 {
        if width > 1e9 {
            return Err(TransportError::BracketFailure { component: i });
        }
        width *= 2.0;
        if flo > 0.0 {
            lo -= width;
            flo = f(lo, &mut buf);
        }
        if fhi < 0.0 {
            hi += width;
            fhi = f(hi, &mut buf);
        }
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }

    // Newton from the bracket midpoint, bisect whenever Newton leaves it
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let ft = f(t, &mut buf);
        if ft.abs() <= tol {
            return Ok(t);
        }
        if ft > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let dt = comp.diag_partial(&buf);
        let newton = if dt > 0.0 { t - ft / dt } else { f64::NAN };
        t = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let ft = f(t, &mut buf);
    if ft.abs() <= tol {
        Ok(t)
    } else {
        Err(TransportError::BracketFailure { component: i })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndexSet;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic_1d_map() -> TriangularMap {
        // x^3 + x = He_3(x) + 4 He_1(x)
        let set = MultiIndexSet::total_degree(1, 3);
        let comp = MapComponent { index_set: set, coefficients: vec![0.0, 4.0, 0.0, 1.0] };
        TriangularMap::new(vec![comp]).unwrap()
    }

    #[test]
    fn identity_map_evaluates_to_input() {
        let map = TriangularMap::identity(2);
        let out = map.evaluate(&[0.3, -1.2]).unwrap();
        assert_eq!(out, vec![0.3, -1.2]);
        assert_relative_eq!(map.logdet_jacobian(&[0.3, -1.2]).unwrap(), 0.0);
    }

    #[test]
    fn degree_three_1d_evaluations() {
        let set = MultiIndexSet::total_degree(1, 3);
        let lin = MapComponent { index_set: set.clone(), coefficients: vec![0.0, 1.0, 0.0, 0.0] };
        let map = TriangularMap::new(vec![lin]).unwrap();
        assert_relative_eq!(map.evaluate(&[2.0]).unwrap()[0], 2.0);

        let he3 = MapComponent { index_set: set, coefficients: vec![0.0, 0.0, 0.0, 1.0] };
        let map = TriangularMap::new(vec![he3]).unwrap();
        assert_relative_eq!(map.evaluate(&[2.0]).unwrap()[0], 2.0); // He_3(2) = 2
    }

    #[test]
    fn scaling_map_logdet() {
        // r_i = 2 x_i in 3 dims -> logdet = 3 ln 2
        let comps: Vec<MapComponent> = (0..3)
            .map(|i| {
                let set = MultiIndexSet::total_degree(i + 1, 1);
                let mut coeffs = vec![0.0; set.len()];
                for (m, j) in set.indices().iter().enumerate() {
                    if j.total_degree() == 1 && j.degrees()[i] == 1 {
                        coeffs[m] = 2.0;
                    }
                }
                MapComponent { index_set: set, coefficients: coeffs }
            })
            .collect();
        let map = TriangularMap::new(comps).unwrap();
        assert_relative_eq!(
            map.logdet_jacobian(&[0.1, -0.5, 2.0]).unwrap(),
            3.0 * 2.0f64.ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn logdet_matches_finite_differences() {
        let map = cubic_1d_map();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..30 {
            let x = rng.gen_range(-2.0..2.0);
            let d_fd = (map.evaluate(&[x + h]).unwrap()[0] - map.evaluate(&[x - h]).unwrap()[0])
                / (2.0 * h);
            let ld = map.logdet_jacobian(&[x]).unwrap();
            assert_relative_eq!(ld, d_fd.ln(), max_relative = 1e-6);
        }
    }

    #[test]
    fn non_monotone_point_detected() {
        // r = He_2(x) has derivative 2x, negative for x < 0
        let set = MultiIndexSet::total_degree(1, 2);
        let comp = MapComponent { index_set: set, coefficients: vec![0.0, 0.0, 1.0] };
        let map = TriangularMap::new(vec![comp]).unwrap();
        assert!(matches!(
            map.logdet_jacobian(&[-1.0]),
            Err(TransportError::NonMonotonePoint { .. })
        ));
    }

    #[test]
    fn invert_identity_and_cubic() {
        let map = TriangularMap::identity(2);
        let x = map.invert_pointwise(&[0.7, -0.2], 1e-12).unwrap();
        assert_relative_eq!(x[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(x[1], -0.2, epsilon = 1e-10);

        let cubic = cubic_1d_map();
        let x = cubic.invert_pointwise(&[2.0], 1e-12).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn invert_round_trip_random_points() {
        let cubic = cubic_1d_map();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = rng.gen_range(-2.5..2.5);
            let r = cubic.evaluate(&[x]).unwrap();
            let back = cubic.invert_pointwise(&r, 1e-12).unwrap();
            assert_relative_eq!(back[0], x, epsilon = 1e-8);
        }
    }

    #[test]
    fn pullback_of_identity_is_standard_normal() {
        let map = TriangularMap::identity(3);
        let x = [0.4, -1.0, 2.0];
        let expect = -1.5 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(map.pullback_logdensity(&x).unwrap(), expect, max_relative = 1e-13);
    }

    #[test]
    fn pullback_of_affine_matches_gaussian_density() {
        // x = 2 z + 3  =>  T(x) = (x-3)/2, pullback = N(3, 4)
        let set = MultiIndexSet::total_degree(1, 1);
        let comp = MapComponent { index_set: set, coefficients: vec![-1.5, 0.5] };
        let map = TriangularMap::new(vec![comp]).unwrap();
        for &x in &[-1.0, 0.0, 2.5, 3.0, 7.0] {
            let expect = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln()
                - 0.5 * (x - 3.0_f64).powi(2) / 4.0;
            assert_relative_eq!(map.pullback_logdensity(&[x]).unwrap(), expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn triangularity_is_exact() {
        // perturbing x_j for j > i must not change T_i at all
        let map = cubic_1d_map();
        let _ = map;
        let set0 = MultiIndexSet::total_degree(1, 3);
        let set1 = MultiIndexSet::total_degree(2, 3);
        let c0 = MapComponent { index_set: set0, coefficients: vec![0.1, 1.0, 0.2, 0.05] };
        let mut coeffs1 = vec![0.0; set1.len()];
        coeffs1[2] = 1.0;
        let c1 = MapComponent { index_set: set1, coefficients: coeffs1 };
        let map = TriangularMap::new(vec![c0, c1]).unwrap();
        let a = map.evaluate(&[0.3, 0.9]).unwrap();
        let b = map.evaluate(&[0.3, -4.0]).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let map = TriangularMap::identity(2);
        assert!(map.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn map_json_round_trip() {
        let map = cubic_1d_map();
        let js = serde_json::to_string(&map).unwrap();
        assert!(js.contains("\"dim\":1"));
        assert!(js.contains("\"components\""));
        assert!(js.contains("\"index_set\""));
        assert!(js.contains("\"coefficients\""));
        let back: TriangularMap = serde_json::from_str(&js).unwrap();
        let x = [0.37];
        assert_eq!(map.evaluate(&x).unwrap(), back.evaluate(&x).unwrap());
    }
}
