//! Independent verification machinery.
//!
//! Everything in here is deliberately implemented without touching the
//! corner-sum / multidual code paths it is used to judge: quasi-Monte
//! Carlo integration on a vendored Sobol sequence, tensor-grid
//! Gauss–Legendre quadrature, nested central finite differences, and a
//! brute-force ANOVA decomposition by direct quadrature for small K.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("dimension {dim} too large (max {max})")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("point too close to the box boundary in coordinate {coord}")]
    BoundaryTooClose { coord: usize },
}

// ---------------------------------------------------------------------
// Sobol low-discrepancy sequence
// ---------------------------------------------------------------------

/// Low-discrepancy sequence family used for variance integrals. Only one
/// kind is provided; the field exists so exported metadata names the
/// sequence explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    #[default]
    Sobol,
}

/// Primitive polynomials (Bratley & Fox table) for the first 13
/// dimensions; entry d is the polynomial for dimension d+1.
const SOBOL_POLY: [u32; 13] = [1, 3, 7, 11, 13, 19, 25, 37, 59, 47, 61, 55, 41];

/// Initial direction values m_1..m_s per dimension, same source. The
/// table is vendored so results are platform-identical.
const SOBOL_MINIT: [&[u32]; 13] = [
    &[],
    &[1],
    &[1, 1],
    &[1, 3, 7],
    &[1, 1, 5],
    &[1, 3, 1, 1],
    &[1, 1, 3, 7],
    &[1, 3, 3, 9, 9],
    &[1, 3, 7, 13, 3],
    &[1, 1, 5, 11, 27],
    &[1, 3, 5, 1, 15],
    &[1, 1, 7, 3, 29],
    &[1, 3, 7, 7, 21],
];

const SOBOL_BITS: usize = 32;

/// Maximum Sobol dimension supported by the vendored table.
pub const MAX_SOBOL_DIM: usize = 13;

/// Gray-code Sobol sequence generator. The stream starts at sequence
/// index 1 (the all-zeros point at index 0 is skipped).
pub struct SobolSequence {
    dim: usize,
    v: Vec<[u32; SOBOL_BITS]>, // direction numbers per dimension
    state: Vec<u32>,
    index: u64,
}

impl SobolSequence {
    pub fn new(dim: usize) -> Result<Self, OracleError> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(OracleError::DimensionTooLarge { dim, max: MAX_SOBOL_DIM });
        }
        let mut v = Vec::with_capacity(dim);
        for d in 0..dim {
            v.push(direction_numbers(d));
        }
        Ok(SobolSequence { dim, v, state: vec![0; dim], index: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the next point into `out` (length `dim`).
    pub fn next_point(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        self.index += 1;
        let bit = self.index.trailing_zeros() as usize;
        let scale = 1.0 / (1u64 << SOBOL_BITS) as f64;
        for d in 0..self.dim {
            self.state[d] ^= self.v[d][bit];
            out[d] = self.state[d] as f64 * scale;
        }
    }

    /// First `n` points as rows.
    pub fn points(dim: usize, n: usize) -> Result<Vec<Vec<f64>>, OracleError> {
        let mut seq = SobolSequence::new(dim)?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = vec![0.0; dim];
            seq.next_point(&mut p);
            rows.push(p);
        }
        Ok(rows)
    }
}

fn direction_numbers(d: usize) -> [u32; SOBOL_BITS] {
    let mut m = [0u32; SOBOL_BITS];
    if d == 0 {
        // Van der Corput: m_j = 1 for all j.
        m.iter_mut().for_each(|x| *x = 1);
    } else {
        let poly = SOBOL_POLY[d];
        let s = (31 - poly.leading_zeros()) as usize; // degree
        m[..s].copy_from_slice(&SOBOL_MINIT[d][..s]);
        for j in s..SOBOL_BITS {
            let mut mj = m[j - s] ^ (m[j - s] << s);
            for i in 1..s {
                // coefficient of x^(s-i) in the primitive polynomial
                if (poly >> (s - i)) & 1 == 1 {
                    mj ^= m[j - i] << i;
                }
            }
            m[j] = mj;
        }
    }
    let mut v = [0u32; SOBOL_BITS];
    for j in 0..SOBOL_BITS {
        v[j] = m[j] << (SOBOL_BITS - 1 - j);
    }
    v
}

/// Equal-weight QMC average of `g` over the first `nodes` points of the
/// low-discrepancy sequence on [0,1]^dim. `nodes` should be a power of
/// two for the usual discrepancy guarantees.
pub fn qmc_integrate<F: FnMut(&[f64]) -> f64>(
    mut g: F,
    dim: usize,
    nodes: usize,
    _kind: SequenceKind,
) -> Result<f64, OracleError> {
    assert!(nodes >= 1, "need at least one node");
    let mut seq = SobolSequence::new(dim)?;
    let mut point = vec![0.0; dim];
    let mut acc = 0.0;
    for _ in 0..nodes {
        seq.next_point(&mut point);
        acc += g(&point);
    }
    Ok(acc / nodes as f64)
}

// ---------------------------------------------------------------------
// Gauss–Legendre tensor quadrature
// ---------------------------------------------------------------------

/// Max dimension for tensor-grid quadrature; node counts explode past it.
pub const MAX_GRID_DIM: usize = 4;

/// Gauss–Legendre nodes and weights on [0,1], by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess on [-1,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1,1] -> [0,1]; nodes come out symmetric.
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Tensor-product Gauss–Legendre quadrature of `g` on [0,1]^m.
pub fn grid_integrate<F: FnMut(&[f64]) -> f64>(
    mut g: F,
    nodes_per_axis: usize,
    m: usize,
) -> Result<f64, OracleError> {
    if m == 0 || m > MAX_GRID_DIM {
        return Err(OracleError::DimensionTooLarge { dim: m, max: MAX_GRID_DIM });
    }
    let (nodes, weights) = gauss_legendre(nodes_per_axis);
    let mut idx = vec![0usize; m];
    let mut point = vec![0.0; m];
    let mut acc = 0.0;
    loop {
        let mut w = 1.0;
        for (axis, &i) in idx.iter().enumerate() {
            point[axis] = nodes[i];
            w *= weights[i];
        }
        acc += w * g(&point);
        // odometer increment
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < nodes_per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == m {
                return Ok(acc);
            }
        }
    }
}

// ---------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------

/// Nested central finite differences of `h` over the variables listed in
/// `active` (0-based coordinate indices) at `x`.
pub fn fd_mixed_partial<F: FnMut(&[f64]) -> f64>(
    h: &mut F,
    x: &[f64],
    active: &[usize],
    step: f64,
) -> Result<f64, OracleError> {
    let margin = step * active.len() as f64;
    for &i in active {
        if x[i] - margin < 0.0 || x[i] + margin > 1.0 {
            return Err(OracleError::BoundaryTooClose { coord: i });
        }
    }
    Ok(fd_recurse(h, &mut x.to_vec(), active, step))
}

fn fd_recurse<F: FnMut(&[f64]) -> f64>(
    h: &mut F,
    x: &mut Vec<f64>,
    active: &[usize],
    step: f64,
) -> f64 {
    match active.split_first() {
        None => h(x),
        Some((&i, rest)) => {
            let xi = x[i];
            x[i] = xi + step;
            let plus = fd_recurse(h, x, rest, step);
            x[i] = xi - step;
            let minus = fd_recurse(h, x, rest, step);
            x[i] = xi;
            (plus - minus) / (2.0 * step)
        }
    }
}

// ---------------------------------------------------------------------
// Brute-force ANOVA for small K
// ---------------------------------------------------------------------

/// Ground-truth ANOVA decomposition of an arbitrary function on
/// [0,1]^K (K ≤ 3) by direct quadrature of the component integrals.
///
/// Components are tabulated on a uniform per-axis grid (for pointwise
/// comparisons) and on the Gauss–Legendre grid (for variances and
/// orthogonality checks).
pub struct BruteForceAnova {
    pub k: usize,
    /// Uniform axis nodes in [0,1], endpoints included.
    pub grid: Vec<f64>,
    /// Per subset mask: component values on the tensor grid over the
    /// active variables (ascending variable order, row-major, first
    /// active variable fastest).
    pub components: Vec<Vec<f64>>,
    /// σ_S² per subset mask (mask 0 is zero by construction).
    pub variances: Vec<f64>,
    pub total_variance: f64,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
    gl_components: Vec<Vec<f64>>,
}

/// Max dimension for the brute-force decomposition.
pub const MAX_BRUTE_DIM: usize = 3;

impl BruteForceAnova {
    /// Decomposes `h` on [0,1]^k. `grid_res` is the uniform tabulation
    /// resolution per axis, `quad_nodes` the Gauss–Legendre order used
    /// for every integral.
    pub fn new<F: FnMut(&[f64]) -> f64>(
        mut h: F,
        k: usize,
        grid_res: usize,
        quad_nodes: usize,
    ) -> Result<Self, OracleError> {
        if k == 0 || k > MAX_BRUTE_DIM {
            return Err(OracleError::DimensionTooLarge { dim: k, max: MAX_BRUTE_DIM });
        }
        assert!(grid_res >= 2);
        let (gl_nodes, gl_weights) = gauss_legendre(quad_nodes);
        let grid: Vec<f64> =
            (0..grid_res).map(|i| i as f64 / (grid_res - 1) as f64).collect();
        let n_masks = 1usize << k;

        // h on the full GL tensor grid, first axis fastest.
        let full_len = quad_nodes.pow(k as u32);
        let mut h_gl = vec![0.0; full_len];
        let mut point = vec![0.0; k];
        for (flat, slot) in h_gl.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in 0..k {
                point[axis] = gl_nodes[rem % quad_nodes];
                rem /= quad_nodes;
            }
            *slot = h(&point);
        }

        // Subspace integrals I_S on the GL grid of the active variables:
        // weighted sums of h_gl over the inactive axes.
        let integral_on_gl = |mask: usize| -> Vec<f64> {
            let active: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            let inactive: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 0).collect();
            let out_len = quad_nodes.pow(active.len() as u32);
            let in_len = quad_nodes.pow(inactive.len() as u32);
            let mut out = vec![0.0; out_len];
            for (o, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..in_len {
                    let mut full = vec![0usize; k];
                    let mut rem = o;
                    for &axis in &active {
                        full[axis] = rem % quad_nodes;
                        rem /= quad_nodes;
                    }
                    let mut rem = c;
                    let mut w = 1.0;
                    for &axis in &inactive {
                        let idx = rem % quad_nodes;
                        full[axis] = idx;
                        w *= gl_weights[idx];
                        rem /= quad_nodes;
                    }
                    let flat: usize = (0..k).rev().fold(0, |a, axis| a * quad_nodes + full[axis]);
                    acc += w * h_gl[flat];
                }
                *slot = acc;
            }
            out
        };

        // GL-grid components, built bottom-up: f_S = I_S − Σ_{U⊊S} f_U.
        let mut gl_components: Vec<Vec<f64>> = vec![Vec::new(); n_masks];
        let mut variances = vec![0.0; n_masks];
        let mut masks: Vec<usize> = (0..n_masks).collect();
        masks.sort_by_key(|m| m.count_ones());
        for &mask in &masks {
            let active: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            let mut vals = integral_on_gl(mask);
            for (o, slot) in vals.iter_mut().enumerate() {
                let mut axis_idx = vec![0usize; k];
                let mut rem = o;
                for &axis in &active {
                    axis_idx[axis] = rem % quad_nodes;
                    rem /= quad_nodes;
                }
                for sub in proper_subsets(mask) {
                    *slot -= project(&gl_components[sub], sub, &axis_idx, quad_nodes);
                }
            }
            if mask != 0 {
                let mut var = 0.0;
                for (o, &v) in vals.iter().enumerate() {
                    let mut w = 1.0;
                    let mut rem = o;
                    for _ in 0..active.len() {
                        w *= gl_weights[rem % quad_nodes];
                        rem /= quad_nodes;
                    }
                    var += w * v * v;
                }
                variances[mask] = var;
            }
            gl_components[mask] = vals;
        }
        let total_variance: f64 = variances.iter().sum();

        // Uniform-grid tabulation for pointwise comparisons. The integral
        // term needs fresh evaluations at (uniform active, GL inactive).
        let mut components: Vec<Vec<f64>> = vec![Vec::new(); n_masks];
        for &mask in &masks {
            let active: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            let inactive: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 0).collect();
            let out_len = grid_res.pow(active.len() as u32);
            let in_len = quad_nodes.pow(inactive.len() as u32);
            let mut vals = vec![0.0; out_len];
            let mut full = vec![0.0; k];
            for (o, slot) in vals.iter_mut().enumerate() {
                let mut axis_idx = vec![0usize; k];
                let mut rem = o;
                for &axis in &active {
                    axis_idx[axis] = rem % grid_res;
                    full[axis] = grid[axis_idx[axis]];
                    rem /= grid_res;
                }
                let mut acc = 0.0;
                for c in 0..in_len {
                    let mut rem = c;
                    let mut w = 1.0;
                    for &axis in &inactive {
                        let idx = rem % quad_nodes;
                        full[axis] = gl_nodes[idx];
                        w *= gl_weights[idx];
                        rem /= quad_nodes;
                    }
                    acc += w * h(&full);
                }
                for sub in proper_subsets(mask) {
                    acc -= project(&components[sub], sub, &axis_idx, grid_res);
                }
                *slot = acc;
            }
            components[mask] = vals;
        }

        Ok(BruteForceAnova {
            k,
            grid,
            components,
            variances,
            total_variance,
            gl_nodes,
            gl_weights,
            gl_components,
        })
    }

    /// Component value at uniform-grid multi-index (`axis_idx[i]` for
    /// each active variable i of `mask`).
    pub fn component_at_grid(&self, mask: usize, axis_idx: &[usize]) -> f64 {
        let mut full = vec![0usize; self.k];
        let active: Vec<usize> = (0..self.k).filter(|i| mask >> i & 1 == 1).collect();
        for (slot, &axis) in active.iter().enumerate() {
            full[axis] = axis_idx[slot];
        }
        project(&self.components[mask], mask, &full, self.grid.len())
    }

    /// ∫ f_S·f_U over [0,1]^k by GL quadrature of the tabulated
    /// components, for the oracle's own orthogonality check.
    pub fn component_inner_product(&self, mask_a: usize, mask_b: usize) -> f64 {
        let q = self.gl_nodes.len();
        let mut acc = 0.0;
        let mut axis_idx = vec![0usize; self.k];
        for flat in 0..q.pow(self.k as u32) {
            let mut rem = flat;
            let mut w = 1.0;
            for slot in axis_idx.iter_mut() {
                *slot = rem % q;
                w *= self.gl_weights[*slot];
                rem /= q;
            }
            acc += w
                * project(&self.gl_components[mask_a], mask_a, &axis_idx, q)
                * project(&self.gl_components[mask_b], mask_b, &axis_idx, q);
        }
        acc
    }
}

/// Value of a tabulated component at a full per-axis index vector,
/// selecting the axes in `mask`.
fn project(table: &[f64], mask: usize, axis_idx: &[usize], res: usize) -> f64 {
    let mut flat = 0;
    for axis in (0..axis_idx.len()).rev() {
        if mask >> axis & 1 == 1 {
            flat = flat * res + axis_idx[axis];
        }
    }
    table[flat]
}

/// Proper subsets of `mask`, excluding `mask` itself.
pub fn proper_subsets(mask: usize) -> impl Iterator<Item = usize> {
    let mut sub = mask;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        sub = sub.wrapping_sub(1) & mask;
        if sub == mask {
            // only for mask == 0
            done = true;
            return None;
        }
        if sub == 0 {
            done = true;
        }
        Some(sub)
    })
}
