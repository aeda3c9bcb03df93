//! Functional decomposition of the fitted function into orthogonal
//! subset components, built from closed-form corner sums of the network's
//! partial derivatives — no quadrature over the inactive coordinates.
//!
//! Subsets of {x₁,…,x_K} are bitmasks: bit i−1 set ⇔ xᵢ is active.

use crate::network::{
    forward, forward_multidual_subset, mixed_partial, MlpParams, NetworkError, NetworkSpec,
};
use crate::oracle::{OracleError, SequenceKind, SobolSequence};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnovaError {
    #[error("active coordinate value {0} outside [0, 1]")]
    ActiveValueOutOfRange(f64),
    #[error("subset mask {0:#b} has bits outside the {1} input variables")]
    MaskOutOfRange(usize, usize),
    #[error("total variance {0:.3e} is numerically zero; indices are undefined")]
    DegenerateVariance(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Default node count for variance estimation.
pub const DEFAULT_QMC_NODES: usize = 1 << 14;

/// Members of a subset mask in increasing order.
pub fn mask_members(mask: usize) -> Vec<usize> {
    let mut m = Vec::with_capacity(mask.count_ones() as usize);
    let mut rest = mask;
    while rest != 0 {
        let i = rest.trailing_zeros() as usize;
        m.push(i);
        rest &= rest - 1;
    }
    m
}

fn check_mask(mask: usize, k: usize) -> Result<(), AnovaError> {
    if mask >> k != 0 {
        return Err(AnovaError::MaskOutOfRange(mask, k));
    }
    Ok(())
}

fn check_point(x: &[f64]) -> Result<(), AnovaError> {
    for &v in x {
        if !(0.0..=1.0).contains(&v) {
            return Err(AnovaError::ActiveValueOutOfRange(v));
        }
    }
    Ok(())
}

/// Integral of the fitted function over the coordinates *not* in `mask`,
/// as a signed sum of ∂^|mask| NN over the 2^(K−|mask|) corners of the
/// inactive box: each corner contributes with sign (−1)^(number of
/// inactive coordinates pinned at 0).
///
/// Only the `mask` coordinates of `x` are read; the rest are overwritten
/// by the corner enumeration.
pub fn corner_sum(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    mask: usize,
) -> Result<f64, AnovaError> {
    let k = spec.input_dim;
    check_mask(mask, k)?;
    let active = mask_members(mask);
    for &i in &active {
        if !(0.0..=1.0).contains(&x[i]) {
            return Err(AnovaError::ActiveValueOutOfRange(x[i]));
        }
    }
    let inactive: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 0).collect();
    let mut point = x.to_vec();
    let mut acc = 0.0;
    for corner in 0..1usize << inactive.len() {
        let mut zeros = 0usize;
        for (bit, &i) in inactive.iter().enumerate() {
            if corner >> bit & 1 == 1 {
                point[i] = 1.0;
            } else {
                point[i] = 0.0;
                zeros += 1;
            }
        }
        let deriv = if mask == 0 {
            forward(params, spec, &point)?
        } else {
            forward_multidual_subset(params, spec, &point, &active)?.mixed_partial()
        };
        acc += if zeros % 2 == 0 { deriv } else { -deriv };
    }
    Ok(acc)
}

/// All subspace integrals I_U(x_U) for every U ⊆ {1,…,K}, indexed by mask.
pub fn all_subspace_integrals(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
) -> Result<Vec<f64>, AnovaError> {
    check_point(x)?;
    let k = spec.input_dim;
    let mut out = Vec::with_capacity(1 << k);
    for mask in 0..1usize << k {
        out.push(corner_sum(params, spec, x, mask)?);
    }
    Ok(out)
}

/// In-place signed subset-sum transform turning a table of subspace
/// integrals I_U into component values: NN_S = Σ_{U⊆S} (−1)^|S\U| I_U.
pub fn integrals_to_components(table: &mut [f64]) {
    let n = table.len();
    debug_assert!(n.is_power_of_two());
    let k = n.trailing_zeros() as usize;
    for bit in 0..k {
        let b = 1usize << bit;
        for mask in 0..n {
            if mask & b != 0 {
                table[mask] -= table[mask ^ b];
            }
        }
    }
}

/// Component value NN_S(x_S): the subspace integral minus every proper
/// sub-component, recursively. `memo` caches components per subset and is
/// only valid for a single point `x`.
pub fn component_memo(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    mask: usize,
    memo: &mut HashMap<usize, f64>,
) -> Result<f64, AnovaError> {
    if let Some(&v) = memo.get(&mask) {
        return Ok(v);
    }
    let mut val = corner_sum(params, spec, x, mask)?;
    if mask != 0 {
        let mut sub = (mask - 1) & mask;
        loop {
            val -= component_memo(params, spec, x, sub, memo)?;
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & mask;
        }
    }
    memo.insert(mask, val);
    Ok(val)
}

/// Component value NN_S(x_S); see [`component_memo`].
pub fn component(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    mask: usize,
) -> Result<f64, AnovaError> {
    check_mask(mask, spec.input_dim)?;
    check_point(x)?;
    component_memo(params, spec, x, mask, &mut HashMap::new())
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Prediction keeping only components of order ≤ `degree`:
/// Σ_{|S|≤d} NN_S(x_S), folded into a single weighted sum over subspace
/// integrals with weight w_m = Σ_{j=0}^{d−m} (−1)^j · C(K−m, j) for a
/// subset of size m. `degree = K` reproduces the fitted function exactly;
/// `degree = 0` is the constant component.
pub fn truncated_predict(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    degree: usize,
) -> Result<f64, AnovaError> {
    let k = spec.input_dim;
    check_point(x)?;
    let d = degree.min(k);
    let weights: Vec<f64> = (0..=d)
        .map(|m| {
            (0..=d - m)
                .map(|j| if j % 2 == 0 { binomial(k - m, j) } else { -binomial(k - m, j) })
                .sum()
        })
        .collect();
    let mut acc = 0.0;
    for mask in 0..1usize << k {
        let m = mask.count_ones() as usize;
        if m > d || weights[m] == 0.0 {
            continue;
        }
        acc += weights[m] * corner_sum(params, spec, x, mask)?;
    }
    Ok(acc)
}

/// Full decomposition summary: per-subset variances and normalized
/// sensitivity indices, estimated on one shared low-discrepancy node set
/// so the component variances and the total are consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaDecomposition {
    pub k: usize,
    pub nodes: usize,
    /// Constant component NN_∅.
    pub mean: f64,
    /// Per-subset means over the node set (≈0 for nonempty subsets).
    pub component_means: Vec<f64>,
    /// σ_S² indexed by mask; entry 0 is zero by convention.
    pub variances: Vec<f64>,
    pub total_variance: f64,
    /// σ_S²/σ², same indexing.
    pub sobol_indices: Vec<f64>,
}

impl AnovaDecomposition {
    pub fn decompose(
        params: &MlpParams,
        spec: &NetworkSpec,
        nodes: usize,
        _kind: SequenceKind,
    ) -> Result<Self, AnovaError> {
        spec.validate()?;
        assert!(nodes >= 2, "variance needs at least two nodes");
        let k = spec.input_dim;
        let n_masks = 1usize << k;
        let mut seq = SobolSequence::new(k)?;
        let mut x = vec![0.0; k];
        let mut sum = vec![0.0; n_masks];
        let mut sum_sq = vec![0.0; n_masks];
        let mut f_sum = 0.0;
        let mut f_sum_sq = 0.0;
        for _ in 0..nodes {
            seq.next_point(&mut x);
            let mut table = all_subspace_integrals(params, spec, &x)?;
            integrals_to_components(&mut table);
            for (mask, &c) in table.iter().enumerate() {
                sum[mask] += c;
                sum_sq[mask] += c * c;
            }
            let f = mixed_partial(params, spec, &x)?;
            f_sum += f;
            f_sum_sq += f * f;
        }
        let n = nodes as f64;
        let mean = sum[0] / n;
        let component_means: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut variances: Vec<f64> = (0..n_masks)
            .map(|m| (sum_sq[m] / n - component_means[m] * component_means[m]).max(0.0))
            .collect();
        variances[0] = 0.0;
        let f_mean = f_sum / n;
        let total_variance = (f_sum_sq / n - f_mean * f_mean).max(0.0);
        let scale = f_mean * f_mean + 1.0;
        if total_variance <= 1e-12 * scale {
            return Err(AnovaError::DegenerateVariance(total_variance));
        }
        let sobol_indices = variances.iter().map(|v| v / total_variance).collect();
        Ok(AnovaDecomposition {
            k,
            nodes,
            mean,
            component_means,
            variances,
            total_variance,
            sobol_indices,
        })
    }

    /// Standard deviation σ_S of one component.
    pub fn sigma(&self, mask: usize) -> f64 {
        self.variances[mask].sqrt()
    }
}

/// Variance of a single component by quadrature over its own |S|
/// coordinates only (fresh low-discrepancy sequence in |S| dimensions).
pub fn component_variance_qmc(
    params: &MlpParams,
    spec: &NetworkSpec,
    mask: usize,
    nodes: usize,
) -> Result<f64, AnovaError> {
    check_mask(mask, spec.input_dim)?;
    if mask == 0 {
        return Ok(0.0);
    }
    let active = mask_members(mask);
    let mut seq = SobolSequence::new(active.len())?;
    let mut sub = vec![0.0; active.len()];
    let mut x = vec![0.0; spec.input_dim];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..nodes {
        seq.next_point(&mut sub);
        for (v, &i) in sub.iter().zip(&active) {
            x[i] = *v;
        }
        let c = component(params, spec, &x, mask)?;
        sum += c;
        sum_sq += c * c;
    }
    let n = nodes as f64;
    Ok((sum_sq / n - (sum / n) * (sum / n)).max(0.0))
}

/// Variance of the fitted function itself over the unit box.
pub fn total_variance(
    params: &MlpParams,
    spec: &NetworkSpec,
    nodes: usize,
) -> Result<f64, AnovaError> {
    let k = spec.input_dim;
    let mut seq = SobolSequence::new(k)?;
    let mut x = vec![0.0; k];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..nodes {
        seq.next_point(&mut x);
        let f = mixed_partial(params, spec, &x)?;
        sum += f;
        sum_sq += f * f;
    }
    let n = nodes as f64;
    Ok((sum_sq / n - (sum / n) * (sum / n)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multidual::ActivationKind;
    use crate::network::{init_params, Layer};
    use crate::oracle::{gauss_legendre, qmc_integrate};
    use approx::assert_relative_eq;

    /// Exact antiderivative network: NN = x₁x₂ via squared-hinge units,
    /// (( x₁+x₂)² − x₁² − x₂²)/2 with all preactivations ≥ 0 on the box.
    fn xy_network() -> (NetworkSpec, MlpParams) {
        let mut spec = NetworkSpec::new(2, vec![3], ActivationKind::Rep);
        spec.rep_degree = Some(2);
        let params = MlpParams {
            layers: vec![
                Layer {
                    weights: vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.0; 3],
                },
                Layer { weights: vec![0.5, -0.5, -0.5], bias: vec![0.0] },
            ],
        };
        (spec, params)
    }

    fn random_net(k: usize, seed: u64) -> (NetworkSpec, MlpParams) {
        let spec = NetworkSpec::new(k, vec![8, 8], ActivationKind::Sigmoid);
        let mut params = init_params(&spec, seed);
        // Glorot output weights keep the mixed partial tiny; inflate for
        // variance headroom.
        for w in params.layers.last_mut().unwrap().weights.iter_mut() {
            *w *= 4.0;
        }
        (spec, params)
    }

    #[test]
    fn xy_corner_sums_are_exact() {
        let (spec, p) = xy_network();
        // fitted function ∂²(x₁x₂) ≡ 1
        assert_relative_eq!(corner_sum(&p, &spec, &[0.3, 0.9], 0b11).unwrap(), 1.0, epsilon = 1e-12);
        // ∫∫ 1 = 1
        assert_relative_eq!(corner_sum(&p, &spec, &[0.0, 0.0], 0b00).unwrap(), 1.0, epsilon = 1e-12);
        // ∫ over x₂ leaves the constant 1 regardless of x₁
        for x1 in [0.0, 0.25, 0.8] {
            assert_relative_eq!(corner_sum(&p, &spec, &[x1, 0.0], 0b01).unwrap(), 1.0, epsilon = 1e-12);
        }
        // constant fitted function ⇒ every nonempty component vanishes
        for mask in 1..4usize {
            let c = component(&p, &spec, &[0.4, 0.7], mask).unwrap();
            assert!(c.abs() < 1e-12, "mask {mask}: {c}");
        }
    }

    #[test]
    fn constant_fitted_function_is_degenerate() {
        let (spec, p) = xy_network();
        match AnovaDecomposition::decompose(&p, &spec, 64, SequenceKind::Sobol) {
            Err(AnovaError::DegenerateVariance(_)) => {}
            other => panic!("expected degenerate variance, got {other:?}"),
        }
    }

    #[test]
    fn mask_bounds_are_checked() {
        let (spec, p) = xy_network();
        assert!(matches!(
            corner_sum(&p, &spec, &[0.5, 0.5], 0b100),
            Err(AnovaError::MaskOutOfRange(..))
        ));
        assert!(matches!(
            corner_sum(&p, &spec, &[1.5, 0.5], 0b01),
            Err(AnovaError::ActiveValueOutOfRange(_))
        ));
    }

    #[test]
    fn corner_sum_matches_tensor_quadrature() {
        // Integrate the fitted function over the inactive coordinates
        // with 24-node Gauss–Legendre per axis and compare.
        let (spec, p) = random_net(3, 7);
        let (gl_x, gl_w) = gauss_legendre(24);
        let x = [0.37, 0.61, 0.22];
        for mask in 0..8usize {
            let inactive: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 0).collect();
            let mut quad = 0.0;
            let n_in = inactive.len();
            let mut idx = vec![0usize; n_in];
            loop {
                let mut pt = x;
                let mut w = 1.0;
                for (slot, &axis) in inactive.iter().enumerate() {
                    pt[axis] = gl_x[idx[slot]];
                    w *= gl_w[idx[slot]];
                }
                quad += w * crate::network::mixed_partial(&p, &spec, &pt).unwrap();
                // odometer
                let mut carry = 0;
                while carry < n_in {
                    idx[carry] += 1;
                    if idx[carry] < gl_x.len() {
                        break;
                    }
                    idx[carry] = 0;
                    carry += 1;
                }
                if carry == n_in {
                    break;
                }
            }
            let cs = corner_sum(&p, &spec, &x, mask).unwrap();
            assert_relative_eq!(cs, quad, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn corner_sum_matches_qmc() {
        let (spec, p) = random_net(3, 11);
        let x = [0.5, 0.25, 0.75];
        let mask = 0b001usize;
        let qmc = qmc_integrate(
            |u: &[f64]| {
                let pt = [x[0], u[0], u[1]];
                crate::network::mixed_partial(&p, &spec, &pt).unwrap()
            },
            2,
            1 << 14,
            SequenceKind::Sobol,
        )
        .unwrap();
        let cs = corner_sum(&p, &spec, &x, mask).unwrap();
        let denom = qmc.abs().max(1e-3);
        assert!((cs - qmc).abs() / denom < 1e-3, "{cs} vs {qmc}");
    }

    #[test]
    fn components_telescope_to_fitted_function() {
        let (spec, p) = random_net(3, 3);
        for x in [[0.1, 0.5, 0.9], [0.33, 0.77, 0.05], [0.5, 0.5, 0.5]] {
            let mut table = all_subspace_integrals(&p, &spec, &x).unwrap();
            integrals_to_components(&mut table);
            let total: f64 = table.iter().sum();
            let f = crate::network::mixed_partial(&p, &spec, &x).unwrap();
            assert_relative_eq!(total, f, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn transform_and_recursion_agree() {
        let (spec, p) = random_net(3, 19);
        let x = [0.42, 0.13, 0.86];
        let mut table = all_subspace_integrals(&p, &spec, &x).unwrap();
        integrals_to_components(&mut table);
        let mut memo = HashMap::new();
        for mask in 0..8usize {
            let rec = component_memo(&p, &spec, &x, mask, &mut memo).unwrap();
            assert_relative_eq!(rec, table[mask], epsilon = 1e-11, max_relative = 1e-11);
            // memo must be transparent
            let fresh = component(&p, &spec, &x, mask).unwrap();
            assert_eq!(rec, fresh);
        }
    }

    #[test]
    fn components_have_zero_mean_and_are_orthogonal() {
        let (spec, p) = random_net(2, 5);
        let d = AnovaDecomposition::decompose(&p, &spec, 1 << 13, SequenceKind::Sobol).unwrap();
        let sigma = d.total_variance.sqrt();
        for mask in 1..4usize {
            assert!(
                d.component_means[mask].abs() <= 1e-3 * sigma.max(1.0),
                "mask {mask}: mean {}",
                d.component_means[mask]
            );
        }
        // pairwise inner products by shared-node quadrature
        let mut seq = SobolSequence::new(2).unwrap();
        let mut x = [0.0; 2];
        let n = 1 << 13;
        let mut ip = [0.0; 3]; // (1,2) (1,3) (2,3) pairs over masks 1,2,3
        for _ in 0..n {
            seq.next_point(&mut x);
            let mut table = all_subspace_integrals(&p, &spec, &x).unwrap();
            integrals_to_components(&mut table);
            ip[0] += table[1] * table[2];
            ip[1] += table[1] * table[3];
            ip[2] += table[2] * table[3];
        }
        for v in ip {
            assert!((v / n as f64).abs() <= 1e-3 * d.total_variance.max(1.0), "{v}");
        }
    }

    #[test]
    fn variances_sum_to_total() {
        let (spec, p) = random_net(3, 23);
        let d = AnovaDecomposition::decompose(&p, &spec, 1 << 14, SequenceKind::Sobol).unwrap();
        let sum: f64 = d.variances.iter().sum();
        assert_relative_eq!(sum, d.total_variance, max_relative = 1e-3);
        let s: f64 = d.sobol_indices.iter().sum();
        assert_relative_eq!(s, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn per_component_variance_matches_shared_node_estimate() {
        let (spec, p) = random_net(2, 29);
        let d = AnovaDecomposition::decompose(&p, &spec, 1 << 13, SequenceKind::Sobol).unwrap();
        for mask in [0b01usize, 0b10] {
            let v = component_variance_qmc(&p, &spec, mask, 1 << 13).unwrap();
            assert_relative_eq!(v, d.variances[mask], max_relative = 2e-3, epsilon = 1e-9);
        }
    }

    #[test]
    fn truncation_endpoints() {
        let (spec, p) = random_net(3, 31);
        let d0 = AnovaDecomposition::decompose(&p, &spec, 256, SequenceKind::Sobol).unwrap();
        for x in [[0.3, 0.3, 0.3], [0.9, 0.1, 0.6]] {
            let full = truncated_predict(&p, &spec, &x, 3).unwrap();
            let f = crate::network::mixed_partial(&p, &spec, &x).unwrap();
            assert_relative_eq!(full, f, epsilon = 1e-10, max_relative = 1e-10);
            let constant = truncated_predict(&p, &spec, &x, 0).unwrap();
            assert_relative_eq!(constant, d0.mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn truncation_equals_component_sum() {
        let (spec, p) = random_net(3, 37);
        let x = [0.2, 0.8, 0.55];
        let mut table = all_subspace_integrals(&p, &spec, &x).unwrap();
        integrals_to_components(&mut table);
        for d in 0..=3usize {
            let direct: f64 = (0..8)
                .filter(|m: &usize| m.count_ones() as usize <= d)
                .map(|m| table[m])
                .sum();
            let folded = truncated_predict(&p, &spec, &x, d).unwrap();
            assert_relative_eq!(folded, direct, epsilon = 1e-10, max_relative = 1e-10);
        }
    }
}
