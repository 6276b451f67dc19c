//! Multivariate Hermite polynomial bases and multi-index sets.
//!
//! Map components are linear expansions over products of probabilists'
//! Hermite polynomials `He_n`; a [`MultiIndexSet`] fixes which products appear
//! and in what order, which in turn fixes the coefficient layout of a map
//! component. Total-degree sets serve generic low-dimensional maps; the
//! localized 1D sets exploit spatial locality so that fine-scale map
//! components stay tractable in high dimension.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("sample dimension {found} is smaller than the index set needs ({needed})")]
    DimensionMismatch { needed: usize, found: usize },
    #[error("localized sets require odd nonlinear degree P, got {0}")]
    EvenLocalDegree(usize),
    #[error("fine index {i} maps to coarse element {rho} but only {d_c} coarse elements exist")]
    IndexOutOfRange { i: usize, rho: usize, d_c: usize },
}

/// Degrees of one basis function, one entry per input coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn degrees(&self) -> &[usize] {
        &self.0
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// An ordered, duplicate-free collection of multi-indices over `input_dim`
/// coordinates. The ordering (graded lexicographic) defines the coefficient
/// layout of any map component built on the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    indices: Vec<MultiIndex>,
}

fn graded_lex(a: &MultiIndex, b: &MultiIndex) -> std::cmp::Ordering {
    a.total_degree()
        .cmp(&b.total_degree())
        .then_with(|| a.0.cmp(&b.0))
}

impl MultiIndexSet {
    /// Builds a set from raw indices: pads/validates lengths, deduplicates,
    /// and sorts graded-lexicographically.
    pub fn from_indices(dim: usize, raw: Vec<Vec<usize>>) -> Self {
        let mut indices: Vec<MultiIndex> = raw
            .into_iter()
            .map(|mut v| {
                v.resize(dim, 0);
                MultiIndex(v)
            })
            .collect();
        indices.sort_by(graded_lex);
        indices.dedup();
        Self { dim, indices }
    }

    /// All multi-indices with total degree at most `degree` over `dim`
    /// coordinates; cardinality is `binomial(dim + degree, degree)`.
    pub fn total_degree(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1, "total_degree set needs dim >= 1");
        let mut out = Vec::new();
        let mut cur = vec![0usize; dim];
        enumerate_bounded(&mut cur, 0, degree, &mut out);
        let mut indices: Vec<MultiIndex> = out.into_iter().map(MultiIndex).collect();
        indices.sort_by(graded_lex);
        Self { dim, indices }
    }

    /// Localized set for output `i` (1-based) of the fine block of a 1D
    /// multiscale map: linear terms in every coordinate up to `d_c + i`, plus
    /// all terms of total degree at most `p` supported only on the matching
    /// coarse coordinate `rho(i)` and the component's own fine coordinate.
    ///
    /// `p` must be odd (monotonicity of odd-degree diagonals). The set is
    /// deduplicated, so its cardinality is `i + d_c + (p+1)(p+2)/2 - 2` for
    /// `p >= 3` and `i + d_c + 1` for `p = 1`.
    pub fn localized_1d(i: usize, d_c: usize, finc: usize, p: usize) -> Result<Self, BasisError> {
        assert!(i >= 1 && d_c >= 1 && finc >= 1);
        if p % 2 == 0 || p == 0 {
            return Err(BasisError::EvenLocalDegree(p));
        }
        // Containing coarse element of fine cell i (both 1-based).
        let rho = (i - 1) / finc + 1;
        if rho > d_c {
            return Err(BasisError::IndexOutOfRange { i, rho, d_c });
        }
        let dim = d_c + i;
        let mut raw: Vec<Vec<usize>> = Vec::new();
        raw.push(vec![0; dim]);
        for c in 0..dim {
            let mut v = vec![0; dim];
            v[c] = 1;
            raw.push(v);
        }
        let (ca, cb) = (rho - 1, dim - 1); // 0-based active coordinates
        for da in 0..=p {
            for db in 0..=(p - da) {
                let mut v = vec![0; dim];
                v[ca] = da;
                v[cb] += db; // ca == cb cannot happen (rho <= d_c < dim)
                raw.push(v);
            }
        }
        Ok(Self::from_indices(dim, raw))
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn max_degree(&self) -> usize {
        self.indices.iter().map(|j| j.total_degree()).max().unwrap_or(0)
    }

    /// Largest degree appearing on coordinate `c`.
    pub fn max_degree_on(&self, c: usize) -> usize {
        self.indices.iter().map(|j| j.0[c]).max().unwrap_or(0)
    }

    /// True when the set is closed under componentwise decrease.
    pub fn is_downward_closed(&self) -> bool {
        use std::collections::HashSet;
        let have: HashSet<&[usize]> = self.indices.iter().map(|j| j.0.as_slice()).collect();
        for j in &self.indices {
            for c in 0..self.dim {
                if j.0[c] > 0 {
                    let mut v = j.0.clone();
                    v[c] -= 1;
                    if !have.contains(v.as_slice()) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn enumerate_bounded(cur: &mut Vec<usize>, pos: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for d in 0..=budget {
        cur[pos] = d;
        enumerate_bounded(cur, pos + 1, budget - d, out);
    }
    cur[pos] = 0;
}

/// Probabilists' Hermite polynomial `He_n(x)`:
/// `He_0 = 1`, `He_1 = x`, `He_{n+1}(x) = x He_n(x) - n He_{n-1}(x)`.
pub fn hermite(order: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if order == 0 {
        return prev;
    }
    let mut cur = x;
    for n in 1..order {
        let next = x * cur - n as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `He_n'(x) = n He_{n-1}(x)`.
pub fn hermite_deriv(order: usize, x: f64) -> f64 {
    if order == 0 {
        0.0
    } else {
        order as f64 * hermite(order - 1, x)
    }
}

/// Fills `table[n] = He_n(x)` for `n = 0..=max_order`.
pub fn hermite_table(max_order: usize, x: f64, table: &mut [f64]) {
    debug_assert!(table.len() > max_order);
    table[0] = 1.0;
    if max_order == 0 {
        return;
    }
    table[1] = x;
    for n in 1..max_order {
        table[n + 1] = x * table[n] - n as f64 * table[n - 1];
    }
}

/// Product of univariate Hermite evaluations, `ψ_j(x) = Π_c He_{j_c}(x_c)`.
pub fn basis_eval(j: &MultiIndex, x: &[f64]) -> f64 {
    debug_assert!(x.len() >= j.len());
    let mut v = 1.0;
    for (c, &d) in j.0.iter().enumerate() {
        if d > 0 {
            v *= hermite(d, x[c]);
        }
    }
    v
}

/// Partial derivative `∂ψ_j/∂x_k` (0-based coordinate `k`).
pub fn basis_partial(j: &MultiIndex, x: &[f64], k: usize) -> f64 {
    debug_assert!(x.len() >= j.len());
    if k >= j.len() || j.0[k] == 0 {
        return 0.0;
    }
    let mut v = 1.0;
    for (c, &d) in j.0.iter().enumerate() {
        if c == k {
            v *= hermite_deriv(d, x[c]);
        } else if d > 0 {
            v *= hermite(d, x[c]);
        }
    }
    v
}

/// Vandermonde matrix: entry `(k, m) = ψ_{j_m}(x^{(k)})` for `samples` stored
/// one point per row. Only the first `input_dim` columns of `samples` are
/// read; fewer columns is an error.
pub fn vandermonde(
    set: &MultiIndexSet,
    samples: &nalgebra::DMatrix<f64>,
) -> Result<nalgebra::DMatrix<f64>, BasisError> {
    eval_matrix(set, samples, None)
}

/// Gradient Vandermonde: entry `(k, m) = ∂ψ_{j_m}/∂x_{diag}(x^{(k)})` with
/// `diag` the 0-based derivative coordinate (the map component's own input).
pub fn grad_vandermonde(
    set: &MultiIndexSet,
    samples: &nalgebra::DMatrix<f64>,
    diag: usize,
) -> Result<nalgebra::DMatrix<f64>, BasisError> {
    eval_matrix(set, samples, Some(diag))
}

fn eval_matrix(
    set: &MultiIndexSet,
    samples: &nalgebra::DMatrix<f64>,
    diff: Option<usize>,
) -> Result<nalgebra::DMatrix<f64>, BasisError> {
    let dim = set.input_dim();
    if samples.ncols() < dim {
        return Err(BasisError::DimensionMismatch { needed: dim, found: samples.ncols() });
    }
    if let Some(d) = diff {
        if d >= dim {
            return Err(BasisError::DimensionMismatch { needed: d + 1, found: dim });
        }
    }
    let k = samples.nrows();
    let maxdeg: usize = (0..dim).map(|c| set.max_degree_on(c)).max().unwrap_or(0);
    let mut out = nalgebra::DMatrix::<f64>::zeros(k, set.len());
    // Per-sample table of He_n(x_c); each basis entry is then a short product.
    let mut he = vec![0.0f64; dim * (maxdeg + 1)];
    for row in 0..k {
        for c in 0..dim {
            hermite_table(maxdeg, samples[(row, c)], &mut he[c * (maxdeg + 1)..(c + 1) * (maxdeg + 1)]);
        }
        for (m, j) in set.indices().iter().enumerate() {
            let v = match diff {
                None => {
                    let mut v = 1.0;
                    for (c, &d) in j.0.iter().enumerate() {
                        if d > 0 {
                            v *= he[c * (maxdeg + 1) + d];
                        }
                    }
                    v
                }
                Some(dc) => {
                    let d = j.0[dc];
                    if d == 0 {
                        0.0
                    } else {
                        let mut v = d as f64 * he[dc * (maxdeg + 1) + d - 1];
                        for (c, &dd) in j.0.iter().enumerate() {
                            if c != dc && dd > 0 {
                                v *= he[c * (maxdeg + 1) + dd];
                            }
                        }
                        v
                    }
                }
            };
            out[(row, m)] = v;
        }
    }
    Ok(out)
}

/// Coefficients `c` with `He_n((x - shift)/scale) = Σ_k c[k] He_k(x)`.
///
/// Used to fold a per-coordinate standardization back into plain Hermite
/// coefficients; exact for the degrees used here (≤ ~10).
pub fn hermite_affine_expansion(n: usize, shift: f64, scale: f64) -> Vec<f64> {
    // He_n in monomial coefficients.
    let mono = hermite_monomial(n);
    // Compose with (x - shift)/scale in the monomial basis.
    let mut comp = vec![0.0f64; n + 1];
    for (j, &a) in mono.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let sj = a / scale.powi(j as i32);
        // (x - shift)^j expanded binomially
        let mut binom = 1.0f64;
        for i in (0..=j).rev() {
            // coefficient of x^i is C(j, i) * (-shift)^(j-i)
            comp[i] += sj * binom * (-shift).powi((j - i) as i32);
            if i > 0 {
                binom = binom * i as f64 / (j - i + 1) as f64;
            }
        }
    }
    monomial_to_hermite(&comp)
}

fn hermite_monomial(n: usize) -> Vec<f64> {
    // coefficient vectors in powers of x, via the three-term recurrence
    let mut prev = vec![1.0f64];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for m in 1..n {
        let mut next = vec![0.0f64; m + 2];
        for (p, &c) in cur.iter().enumerate() {
            next[p + 1] += c;
        }
        for (p, &c) in prev.iter().enumerate() {
            next[p] -= m as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

fn monomial_to_hermite(mono: &[f64]) -> Vec<f64> {
    // Back-substitution against the unitriangular He->monomial change of basis.
    let n = mono.len() - 1;
    let mut rem = mono.to_vec();
    let mut out = vec![0.0f64; n + 1];
    for d in (0..=n).rev() {
        let c = rem[d]; // He_d has leading monomial coefficient 1
        out[d] = c;
        if c != 0.0 {
            for (p, &h) in hermite_monomial(d).iter().enumerate() {
                rem[p] -= c * h;
            }
        }
    }
    out
}
