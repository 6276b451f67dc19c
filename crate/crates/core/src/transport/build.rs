//! Sample-based construction of triangular map components.
//!
//! Each component solves, over its coefficient vector `α`,
//!
//! ```text
//!   min  -(1/K) Σ_k log (G α)_k
//!   s.t. (G α)_k >= λ_min          (monotonicity at every training sample)
//!        mean(A α)  = 0            (zero sample mean of the outputs)
//!        mean((A α)^2) = 1         (unit sample second moment)
//! ```
//!
//! with `A`, `G` the Vandermonde and gradient-Vandermonde matrices of the
//! component's multi-index set. The constraints are handled by an augmented
//! Lagrangian (Powell–Hestenes–Rockafellar form for the inequalities) whose
//! subproblems are minimized by full Newton steps with Armijo backtracking.
//! Samples are standardized per coordinate first and the affine change of
//! variables is folded back into the returned Hermite coefficients.

use super::{BuildOptions, MapComponent, TransportError, TriangularMap};
use crate::basis::{self, MultiIndexSet};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::collections::HashMap;

/// Builds every component of a triangular map; the problem is separable, so
/// components are built concurrently over shared read-only samples.
pub fn build_map(
    samples: &DMatrix<f64>,
    index_sets: &[MultiIndexSet],
    opts: &BuildOptions,
) -> Result<TriangularMap, TransportError> {
    for (i, set) in index_sets.iter().enumerate() {
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
        .map(|set| build_component(samples, set, opts))
        .collect();
    TriangularMap::new(components?)
}

/// Builds one map component; the component index is implied by the index
/// set's input dimension (triangularity).
pub fn build_component(
    samples: &DMatrix<f64>,
    set: &MultiIndexSet,
    opts: &BuildOptions,
) -> Result<MapComponent, TransportError> {
    let comp_idx = set.input_dim().saturating_sub(1);
    if set.is_empty() {
        return Err(TransportError::EmptyIndexSet { component: comp_idx });
    }
    let dim = set.input_dim();
    let k = samples.nrows();
    if k <= set.len() {
        return Err(TransportError::TooFewSamples {
            component: comp_idx,
            samples: k,
            terms: set.len(),
        });
    }
    if samples.ncols() < dim {
        return Err(TransportError::DimensionMismatch { expected: dim, found: samples.ncols() });
    }

    // per-coordinate affine standardization
    let mut shift = vec![0.0f64; dim];
    let mut scale = vec![1.0f64; dim];
    if opts.standardize {
        for c in 0..dim {
            let col = samples.column(c);
            let m = col.sum() / k as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k as f64;
            shift[c] = m;
            scale[c] = var.sqrt().max(1e-12);
        }
    }
    let mut std_samples = DMatrix::<f64>::zeros(k, dim);
    for c in 0..dim {
        let col = samples.column(c);
        let mut dst = std_samples.column_mut(c);
        for r in 0..k {
            dst[r] = (col[r] - shift[c]) / scale[c];
        }
    }

    let a = basis::vandermonde(set, &std_samples)?;
    let g = basis::grad_vandermonde(set, &std_samples, dim - 1)?;
    drop(std_samples);

    // bound scaled so the folded map satisfies d/dx_i >= lambda_min
    let lambda = opts.lambda_min * scale[dim - 1];

    // identity initialization: He_1 on the component's own coordinate
    let own_linear = set.indices().iter().position(|j| {
        j.total_degree() == 1 && j.degrees()[dim - 1] == 1
    });
    let Some(own_pos) = own_linear else {
        return Err(TransportError::InfeasibleStart {
            component: comp_idx,
            min_diag: 0.0,
            lambda,
        });
    };
    let mut alpha = DVector::<f64>::zeros(set.len());
    alpha[own_pos] = 1.0;
    let mut gvec = &g * &alpha;
    let min_g = gvec.min();
    if min_g <= lambda {
        // bracket repair: the initialization is a positive multiple of a
        // single basis column, so rescaling restores feasibility when the
        // minimum derivative is positive
        if min_g > 0.0 {
            alpha *= 2.0 * lambda.max(1e-8) / min_g;
            gvec = &g * &alpha;
        }
        if gvec.min() <= lambda {
            return Err(TransportError::InfeasibleStart {
                component: comp_idx,
                min_diag: min_g,
                lambda,
            });
        }
    }

    let alpha = solve_component(comp_idx, &a, &g, alpha, lambda, opts)?;

    // fold the standardization into plain Hermite coefficients
    let coefficients = fold_affine(set, alpha.as_slice(), &shift, &scale);
    Ok(MapComponent { index_set: set.clone(), coefficients })
}

struct AlState {
    mu: DVector<f64>,
    nu1: f64,
    nu2: f64,
    rho: f64,
}

/// Augmented Lagrangian value; `+inf` outside the log domain.
fn al_value(gv: &DVector<f64>, av: &DVector<f64>, lambda: f64, st: &AlState) -> f64 {
    let k = gv.len() as f64;
    let mut f = 0.0;
    for &gk in gv.iter() {
        if gk <= 0.0 {
            return f64::INFINITY;
        }
        f -= gk.ln();
    }
    f /= k;
    let mut pen = 0.0;
    for (i, &gk) in gv.iter().enumerate() {
        let m = st.mu[i] + st.rho * (lambda - gk);
        if m > 0.0 {
            pen += (m * m - st.mu[i] * st.mu[i]) / (2.0 * st.rho);
        } else {
            pen += -st.mu[i] * st.mu[i] / (2.0 * st.rho);
        }
    }
    pen /= k;
    let h1 = av.sum() / k;
    let h2 = av.iter().map(|v| v * v).sum::<f64>() / k - 1.0;
    f + pen + st.nu1 * h1 + 0.5 * st.rho * h1 * h1 + st.nu2 * h2 + 0.5 * st.rho * h2 * h2
}

fn solve_component(
    comp_idx: usize,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    mut alpha: DVector<f64>,
    lambda: f64,
    opts: &BuildOptions,
) -> Result<DVector<f64>, TransportError> {
    let k = a.nrows();
    let n = a.ncols();
    let kf = k as f64;
    let q = {
        let ones = DVector::from_element(k, 1.0);
        weighted_gram(a, &ones, 1.0 / kf) // (1/K) AᵀA
    };
    let col_means = {
        let mut v = DVector::<f64>::zeros(n);
        for j in 0..n {
            v[j] = a.column(j).sum() / kf;
        }
        v
    };

    let mut st = AlState {
        mu: DVector::zeros(k),
        nu1: 0.0,
        nu2: 0.0,
        rho: opts.penalty_init,
    };
    let mut gvec = g * &alpha;
    let mut avec = a * &alpha;
    let mut omega = 1e-3; // inner gradient tolerance, tightened outer-by-outer
    let mut v_prev = f64::INFINITY;
    let ineq_tol = (opts.outer_tol * 1e-3).max(1e-13);

    let mut grad = DVector::<f64>::zeros(n);
    let mut weights = DVector::<f64>::zeros(k);
    let mut last_grad_norm = f64::INFINITY;
    let mut violation = f64::INFINITY;

    for _outer in 0..opts.max_outer {
        // Newton on the current subproblem
        let mut l_cur = al_value(&gvec, &avec, lambda, &st);
        for _it in 0..opts.max_newton {
            // gradient
            let h1 = avec.sum() / kf;
            let h2 = avec.iter().map(|v| v * v).sum::<f64>() / kf - 1.0;
            for i in 0..k {
                let m = st.mu[i] + st.rho * (lambda - gvec[i]);
                weights[i] = 1.0 / gvec[i] + m.max(0.0);
            }
            grad.gemv_tr(-1.0 / kf, g, &weights, 0.0);
            let qa = a.tr_mul(&avec) * (2.0 / kf); // (2/K) Aᵀ A α
            grad.axpy(st.nu1 + st.rho * h1, &col_means, 1.0);
            grad.axpy(st.nu2 + st.rho * h2, &qa, 1.0);
            last_grad_norm = grad.amax();
            if last_grad_norm <= omega {
                break;
            }

            // Hessian
            for i in 0..k {
                let active = st.mu[i] + st.rho * (lambda - gvec[i]) > 0.0;
                weights[i] = 1.0 / (gvec[i] * gvec[i]) + if active { st.rho } else { 0.0 };
            }
            let mut hess = weighted_gram(g, &weights, 1.0 / kf);
            hess.syger(st.rho, &col_means, &col_means, 1.0);
            hess.syger(st.rho, &qa, &qa, 1.0);
            hess += &q * (2.0 * (st.nu2 + st.rho * h2));
            symmetrize(&mut hess);

            // Newton direction with Cholesky, ridged if indefinite
            let diag_scale = hess.diagonal().amax().max(1e-300);
            let mut tau = 0.0f64;
            let dir = loop {
                let mut h = hess.clone();
                if tau > 0.0 {
                    for i in 0..n {
                        h[(i, i)] += tau;
                    }
                }
                match nalgebra::Cholesky::new(h) {
                    Some(ch) => break ch.solve(&(-&grad)),
                    None => {
                        tau = if tau == 0.0 { 1e-10 * diag_scale } else { tau * 100.0 };
                        if tau > 1e10 * diag_scale {
                            break -grad.clone(); // give up on curvature, fall back to steepest descent
                        }
                    }
                }
            };
            let slope = grad.dot(&dir);
            let dir = if slope < 0.0 { dir } else { -grad.clone() };
            let slope = grad.dot(&dir);

            // Armijo backtracking; out-of-domain trials evaluate to +inf
            let g_dir = g * &dir;
            let a_dir = a * &dir;
            let mut t = 1.0f64;
            let mut accepted = false;
            for _bt in 0..opts.max_backtracks {
                let g_try = &gvec + &g_dir * t;
                let a_try = &avec + &a_dir * t;
                let l_try = al_value(&g_try, &a_try, lambda, &st);
                if l_try <= l_cur + opts.armijo_c * t * slope {
                    alpha.axpy(t, &dir, 1.0);
                    gvec = g_try;
                    avec = a_try;
                    l_cur = l_try;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break; // line-search stall: defer to the outer loop
            }
        }

        // constraint violation and multiplier / penalty updates
        let h1 = avec.sum() / kf;
        let h2 = avec.iter().map(|v| v * v).sum::<f64>() / kf - 1.0;
        let v_ineq = gvec.iter().fold(0.0f64, |m, &gk| m.max(lambda - gk));
        let v_eq = h1.abs().max(h2.abs());
        violation = v_eq.max(v_ineq.max(0.0));

        if v_eq <= opts.outer_tol
            && v_ineq <= ineq_tol
            && last_grad_norm <= opts.outer_tol
        {
            return Ok(alpha);
        }

        if violation <= v_prev / opts.violation_shrink || violation <= opts.outer_tol {
            for i in 0..k {
                st.mu[i] = (st.mu[i] + st.rho * (lambda - gvec[i])).max(0.0);
            }
            st.nu1 += st.rho * h1;
            st.nu2 += st.rho * h2;
            v_prev = violation.max(opts.outer_tol * 0.1);
            omega = (omega / 10.0).max(opts.outer_tol * 0.1);
        } else {
            st.rho = (st.rho * opts.penalty_growth).min(1e14);
            omega = (omega / 2.0).max(opts.outer_tol * 0.1);
        }
    }
    Err(TransportError::MaxIterations {
        component: comp_idx,
        outer: opts.max_outer,
        violation,
        grad: last_grad_norm,
    })
}

/// `scale * Mᵀ diag(w) M`, split across threads when large.
fn weighted_gram(m: &DMatrix<f64>, w: &DVector<f64>, scale: f64) -> DMatrix<f64> {
    let k = m.nrows();
    let n = m.ncols();
    let mut wm = DMatrix::<f64>::zeros(k, n);
    for j in 0..n {
        let src = m.column(j);
        let mut dst = wm.column_mut(j);
        for r in 0..k {
            dst[r] = src[r] * w[r].sqrt();
        }
    }
    let flops = k * n * n;
    if flops > 32_000_000 && rayon::current_num_threads() > 1 && k > 1 {
        let mid = k / 2;
        let top = wm.rows_range(0..mid);
        let bot = wm.rows_range(mid..k);
        let (h1, h2) = rayon::join(
            || {
                let mut h = DMatrix::<f64>::zeros(n, n);
                h.gemm_tr(scale, &top, &top, 0.0);
                h
            },
            || {
                let mut h = DMatrix::<f64>::zeros(n, n);
                h.gemm_tr(scale, &bot, &bot, 0.0);
                h
            },
        );
        h1 + h2
    } else {
        let mut h = DMatrix::<f64>::zeros(n, n);
        h.gemm_tr(scale, &wm, &wm, 0.0);
        h
    }
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Re-expresses `Σ_j α_j ψ_j((x - shift)/scale)` as plain Hermite
/// coefficients over the same (downward-closed) index set.
fn fold_affine(set: &MultiIndexSet, alpha: &[f64], shift: &[f64], scale: &[f64]) -> Vec<f64> {
    let dim = set.input_dim();
    if shift.iter().all(|&s| s == 0.0) && scale.iter().all(|&s| s == 1.0) {
        return alpha.to_vec();
    }
    // univariate expansion tables per coordinate and degree
    let mut tables: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dim);
    for c in 0..dim {
        let maxd = set.max_degree_on(c);
        tables.push(
            (0..=maxd).map(|d| basis::hermite_affine_expansion(d, shift[c], scale[c])).collect(),
        );
    }
    let pos: HashMap<&[usize], usize> =
        set.indices().iter().enumerate().map(|(m, j)| (j.degrees(), m)).collect();
    let mut out = vec![0.0f64; set.len()];
    let mut target = vec![0usize; dim];
    for (m, j) in set.indices().iter().enumerate() {
        let c0 = alpha[m];
        if c0 == 0.0 {
            continue;
        }
        let active: Vec<usize> = (0..dim).filter(|&c| j.degrees()[c] > 0).collect();
        target.copy_from_slice(j.degrees());
        distribute(&active, 0, j.degrees(), c0, &tables, &mut target, &pos, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn distribute(
    active: &[usize],
    pos_in_active: usize,
    source: &[usize],
    factor: f64,
    tables: &[Vec<Vec<f64>>],
    target: &mut Vec<usize>,
    positions: &HashMap<&[usize], usize>,
    out: &mut Vec<f64>,
) {
    if pos_in_active == active.len() {
        let m = *positions
            .get(target.as_slice())
            .expect("affine folding stays inside a downward-closed set");
        out[m] += factor;
        return;
    }
    let c = active[pos_in_active];
    let d = source[c];
    let table = &tables[c][d];
    for (kd, &coef) in table.iter().enumerate() {
        if coef == 0.0 {
            continue;
        }
        target[c] = kd;
        distribute(active, pos_in_active + 1, source, factor * coef, tables, target, positions, out);
    }
    target[c] = d;
}
