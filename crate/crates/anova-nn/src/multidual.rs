//! Truncated multivariate jet algebra R[ε₁..ε_K]/(ε_i²).
//!
//! A [`MultiDual`] stores one coefficient per subset of the K variables,
//! indexed by bitmask (little-endian: bit i ↔ variable i+1). The
//! coefficient on mask `m` of a lifted function equals the mixed partial
//! derivative ∂^|m| f / ∂x_m at the expansion point, first order in each
//! variable. Because every generator squares to zero, masks are sets and
//! one forward evaluation carries all 2^K mixed partials.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported variable count. 2^12 coefficients is already far
/// beyond the "moderate dimension" regime the method targets.
pub const MAX_VARS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("variable index {index} out of range for k = {k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("dimension mismatch: k = {left} vs k = {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("jet order {order} insufficient for k = {k}")]
    InsufficientOrder { order: usize, k: usize },
    #[error("unsupported derivative order {order} (max {MAX_VARS})")]
    UnsupportedOrder { order: usize },
}

/// Element of the truncated algebra: `coeffs[m]` is the coefficient of
/// ∏_{i∈m} ε_i, with `coeffs[0]` the scalar value.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDual {
    k: usize,
    pub coeffs: Vec<f64>,
}

impl MultiDual {
    /// Embeds the scalar `c`: value `c`, all differentials zero.
    pub fn constant(c: f64, k: usize) -> Self {
        assert!((1..=MAX_VARS).contains(&k), "k out of range: {k}");
        let mut coeffs = vec![0.0; 1 << k];
        coeffs[0] = c;
        MultiDual { k, coeffs }
    }

    /// Seeds input coordinate i (1-based): value `x`, unit coefficient on
    /// the singleton mask {i}.
    pub fn variable(x: f64, i: usize, k: usize) -> Result<Self, AlgebraError> {
        if i == 0 || i > k {
            return Err(AlgebraError::IndexOutOfRange { index: i, k });
        }
        let mut md = MultiDual::constant(x, k);
        md.coeffs[1 << (i - 1)] = 1.0;
        Ok(md)
    }

    pub fn zero(k: usize) -> Self {
        MultiDual::constant(0.0, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Scalar (mask ∅) part.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of the full mask: ∂^k f / ∂x₁…∂x_k.
    pub fn mixed_partial(&self) -> f64 {
        self.coeffs[(1 << self.k) - 1]
    }

    fn check_same_k(&self, other: &MultiDual) -> Result<(), AlgebraError> {
        if self.k == other.k {
            Ok(())
        } else {
            Err(AlgebraError::DimensionMismatch { left: self.k, right: other.k })
        }
    }

    pub fn add(&self, other: &MultiDual) -> Result<MultiDual, AlgebraError> {
        self.check_same_k(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(MultiDual { k: self.k, coeffs })
    }

    pub fn sub(&self, other: &MultiDual) -> Result<MultiDual, AlgebraError> {
        self.check_same_k(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(MultiDual { k: self.k, coeffs })
    }

    pub fn scale(&self, s: f64) -> MultiDual {
        let coeffs = self.coeffs.iter().map(|a| a * s).collect();
        MultiDual { k: self.k, coeffs }
    }

    pub fn add_assign(&mut self, other: &MultiDual) {
        debug_assert_eq!(self.k, other.k);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    /// `self += s * other`, the hot inner step of dense layers.
    pub fn axpy(&mut self, s: f64, other: &MultiDual) {
        debug_assert_eq!(self.k, other.k);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Subset-convolution product: (a·b)[S] = Σ_{U⊆S} a[U]·b[S\U].
    /// Direct submask enumeration, O(3^k).
    pub fn mul(&self, other: &MultiDual) -> Result<MultiDual, AlgebraError> {
        self.check_same_k(other)?;
        let mut coeffs = vec![0.0; 1 << self.k];
        mul_into(&mut coeffs, &self.coeffs, &other.coeffs);
        Ok(MultiDual { k: self.k, coeffs })
    }

    /// Evaluates the function described by `jet` (a Taylor jet of order
    /// ≥ k expanded at `self.value()`) on this algebra element:
    /// Σ_m jet[m]/m! · n^m with n = self − value. Exact since n^{k+1} = 0.
    pub fn lift(&self, jet: &UnivariateJet) -> Result<MultiDual, AlgebraError> {
        if jet.order() < self.k {
            return Err(AlgebraError::InsufficientOrder { order: jet.order(), k: self.k });
        }
        let k = self.k;
        let mut nilpotent = self.clone();
        nilpotent.coeffs[0] = 0.0;
        // Horner over the nilpotent part.
        let mut fact = 1.0;
        let mut scaled = Vec::with_capacity(k + 1);
        for m in 0..=k {
            if m > 0 {
                fact *= m as f64;
            }
            scaled.push(jet.derivs[m] / fact);
        }
        let mut result = MultiDual::constant(scaled[k], k);
        let mut buf = vec![0.0; 1 << k];
        for m in (0..k).rev() {
            buf.iter_mut().for_each(|c| *c = 0.0);
            mul_into(&mut buf, &result.coeffs, &nilpotent.coeffs);
            std::mem::swap(&mut result.coeffs, &mut buf);
            result.coeffs[0] += scaled[m];
        }
        Ok(result)
    }
}

/// `out[s] += Σ_{u⊆s} a[u]·b[s\u]` for all masks s.
pub(crate) fn mul_into(out: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(out.len(), a.len());
    debug_assert_eq!(out.len(), b.len());
    for s in 0..out.len() {
        let mut acc = 0.0;
        let mut u = s;
        loop {
            acc += a[u] * b[s ^ u];
            if u == 0 {
                break;
            }
            u = (u - 1) & s;
        }
        out[s] += acc;
    }
}

/// Taylor data [f(v), f′(v), …, f^(order)(v)] at an expansion point v,
/// used to lift scalar activations through the algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateJet {
    pub derivs: Vec<f64>,
}

impl UnivariateJet {
    pub fn new(derivs: Vec<f64>) -> Self {
        assert!(!derivs.is_empty());
        UnivariateJet { derivs }
    }

    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }
}

/// Hidden-layer activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    Swish,
    /// Rectified polynomial max(0,v)^p; the degree comes from the network
    /// spec (default K+1 so the K-th mixed partial stays continuous).
    Rep,
}

impl ActivationKind {
    pub fn parse(name: &str) -> Option<ActivationKind> {
        match name {
            "sigmoid" => Some(ActivationKind::Sigmoid),
            "relu" => Some(ActivationKind::Relu),
            "swish" => Some(ActivationKind::Swish),
            "rep" => Some(ActivationKind::Rep),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Relu => "relu",
            ActivationKind::Swish => "swish",
            ActivationKind::Rep => "rep",
        }
    }
}

/// Derivatives of the named activation up to `order` at `v`.
///
/// `rep_degree` is only consulted for [`ActivationKind::Rep`]; `None`
/// defaults the degree to `order + 1`.
pub fn activation_jet(
    kind: ActivationKind,
    rep_degree: Option<usize>,
    v: f64,
    order: usize,
) -> Result<UnivariateJet, AlgebraError> {
    if order > MAX_VARS {
        return Err(AlgebraError::UnsupportedOrder { order });
    }
    let jet = match kind {
        ActivationKind::Sigmoid => sigmoid_jet(v, order),
        ActivationKind::Relu => relu_jet(v, order),
        ActivationKind::Swish => swish_jet(v, order),
        ActivationKind::Rep => rep_jet(rep_degree.unwrap_or(order + 1), v, order),
    };
    Ok(jet)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Sigmoid derivatives via the recurrence in powers of σ: if
/// f^(n) = Σ_j c_j σ^j then f^(n+1) = Σ_j c_j · j · (σ^j − σ^{j+1}).
pub fn sigmoid_jet(v: f64, order: usize) -> UnivariateJet {
    let s = sigmoid(v);
    let mut poly = vec![0.0, 1.0]; // σ^1
    let mut derivs = Vec::with_capacity(order + 1);
    derivs.push(eval_poly(&poly, s));
    for _ in 0..order {
        let mut next = vec![0.0; poly.len() + 1];
        for (j, &c) in poly.iter().enumerate() {
            if c != 0.0 {
                next[j] += c * j as f64;
                next[j + 1] -= c * j as f64;
            }
        }
        poly = next;
        derivs.push(eval_poly(&poly, s));
    }
    UnivariateJet::new(derivs)
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// relu jets are 0 everywhere past first order, including at the kink.
pub fn relu_jet(v: f64, order: usize) -> UnivariateJet {
    let mut derivs = vec![0.0; order + 1];
    if v > 0.0 {
        derivs[0] = v;
        if order >= 1 {
            derivs[1] = 1.0;
        }
    }
    UnivariateJet::new(derivs)
}

/// swish = v·σ(v); by the Leibniz rule g^(n) = v·σ^(n) + n·σ^(n−1).
pub fn swish_jet(v: f64, order: usize) -> UnivariateJet {
    let sig = sigmoid_jet(v, order);
    let mut derivs = Vec::with_capacity(order + 1);
    for n in 0..=order {
        let mut d = v * sig.derivs[n];
        if n >= 1 {
            d += n as f64 * sig.derivs[n - 1];
        }
        derivs.push(d);
    }
    UnivariateJet::new(derivs)
}

/// Rectified polynomial max(0,v)^p with exact polynomial derivatives on
/// the positive side, zeros elsewhere.
pub fn rep_jet(degree: usize, v: f64, order: usize) -> UnivariateJet {
    let mut derivs = vec![0.0; order + 1];
    if v > 0.0 {
        let mut coef = 1.0;
        for (m, d) in derivs.iter_mut().enumerate() {
            if m > degree {
                break;
            }
            *d = coef * v.powi((degree - m) as i32);
            coef *= (degree - m) as f64;
        }
    }
    UnivariateJet::new(derivs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use proptest::strategy::ValueTree;

    fn exp_jet(v: f64, order: usize) -> UnivariateJet {
        UnivariateJet::new(vec![v.exp(); order + 1])
    }

    #[test]
    fn constant_has_scalar_only() {
        let c = MultiDual::constant(3.0, 2);
        assert_eq!(c.coeffs, vec![3.0, 0.0, 0.0, 0.0]);
        let z = MultiDual::constant(0.0, 1);
        assert_eq!(z.coeffs, vec![0.0, 0.0]);
        assert_eq!(MultiDual::constant(5.0, 3).mixed_partial(), 0.0);
    }

    #[test]
    fn variable_seeds_singleton() {
        let x = MultiDual::variable(0.5, 1, 2).unwrap();
        assert_eq!(x.coeffs, vec![0.5, 1.0, 0.0, 0.0]);
        let y = MultiDual::variable(0.0, 2, 2).unwrap();
        assert_eq!(y.coeffs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            MultiDual::variable(1.0, 3, 2).unwrap_err(),
            AlgebraError::IndexOutOfRange { index: 3, k: 2 }
        );
    }

    #[test]
    fn variable_product_expands() {
        let (x, y) = (0.7, -1.3);
        let p = MultiDual::variable(x, 1, 2)
            .unwrap()
            .mul(&MultiDual::variable(y, 2, 2).unwrap())
            .unwrap();
        assert_eq!(p.coeffs, vec![x * y, y, x, 1.0]);
    }

    #[test]
    fn linear_ops() {
        let a = MultiDual { k: 1, coeffs: vec![1.0, 2.0] };
        let b = MultiDual { k: 1, coeffs: vec![3.0, 4.0] };
        assert_eq!(a.add(&b).unwrap().coeffs, vec![4.0, 6.0]);
        let c = MultiDual { k: 2, coeffs: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(c.scale(2.0).coeffs, vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(c.sub(&c).unwrap().coeffs, vec![0.0; 4]);
        assert!(matches!(a.add(&c), Err(AlgebraError::DimensionMismatch { .. })));
    }

    #[test]
    fn mul_expands_polynomial() {
        // (1 + 2ε₁)(3 + ε₂) = 3 + 6ε₁ + ε₂ + 2ε₁ε₂
        let a = MultiDual { k: 2, coeffs: vec![1.0, 2.0, 0.0, 0.0] };
        let b = MultiDual { k: 2, coeffs: vec![3.0, 0.0, 1.0, 0.0] };
        assert_eq!(a.mul(&b).unwrap().coeffs, vec![3.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn generators_are_nilpotent() {
        let x = 1.7;
        let v = MultiDual::variable(x, 1, 2).unwrap();
        assert_eq!(v.mul(&v).unwrap().coeffs, vec![x * x, 2.0 * x, 0.0, 0.0]);
    }

    #[test]
    fn triple_product_mixed_partials() {
        // f = x₁x₂x₃ at (2,3,5): ∂³f = 1, ∂²f/∂x₁∂x₂ = x₃ = 5.
        let p = MultiDual::variable(2.0, 1, 3)
            .unwrap()
            .mul(&MultiDual::variable(3.0, 2, 3).unwrap())
            .unwrap()
            .mul(&MultiDual::variable(5.0, 3, 3).unwrap())
            .unwrap();
        assert_eq!(p.mixed_partial(), 1.0);
        assert_eq!(p.coeffs[0b011], 5.0);
    }

    #[test]
    fn lift_exp_at_sum_of_generators() {
        // exp(x + ε₁ + ε₂) = eˣ(1 + ε₁ + ε₂ + ε₁ε₂) since (ε₁+ε₂)² = 2ε₁ε₂.
        let x = 0.4;
        let mut a = MultiDual::constant(x, 2);
        a.coeffs[1] = 1.0;
        a.coeffs[2] = 1.0;
        let e = a.lift(&exp_jet(x, 2)).unwrap();
        let ex = x.exp();
        for c in &e.coeffs {
            assert_relative_eq!(*c, ex, max_relative = 1e-14);
        }
    }

    #[test]
    fn lift_sigmoid_at_zero() {
        // σ″(0) = 0, so the ε₁ε₂ coefficient vanishes.
        let mut a = MultiDual::constant(0.0, 2);
        a.coeffs[1] = 1.0;
        a.coeffs[2] = 1.0;
        let s = a.lift(&sigmoid_jet(0.0, 2)).unwrap();
        assert_relative_eq!(s.coeffs[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(s.coeffs[1], 0.25, max_relative = 1e-14);
        assert_relative_eq!(s.coeffs[2], 0.25, max_relative = 1e-14);
        assert_relative_eq!(s.coeffs[3], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lift_identity_is_identity() {
        let a = MultiDual { k: 2, coeffs: vec![1.5, -0.3, 2.0, 0.7] };
        let jet = UnivariateJet::new(vec![a.value(), 1.0, 0.0]);
        assert_eq!(a.lift(&jet).unwrap(), a);
    }

    #[test]
    fn lift_rejects_short_jet() {
        let a = MultiDual::constant(0.0, 3);
        let jet = UnivariateJet::new(vec![0.0, 1.0]);
        assert_eq!(
            a.lift(&jet).unwrap_err(),
            AlgebraError::InsufficientOrder { order: 1, k: 3 }
        );
    }

    #[test]
    fn sigmoid_jet_values() {
        let j = sigmoid_jet(0.0, 2);
        assert_relative_eq!(j.derivs[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(j.derivs[1], 0.25, max_relative = 1e-15);
        assert_relative_eq!(j.derivs[2], 0.0, epsilon = 1e-16);
    }

    #[test]
    fn relu_jet_vanishes_on_negatives() {
        assert_eq!(relu_jet(-1.0, 3).derivs, vec![0.0; 4]);
        assert_eq!(relu_jet(2.0, 2).derivs, vec![2.0, 1.0, 0.0]);
        // Kink convention: zero at v = 0.
        assert_eq!(relu_jet(0.0, 2).derivs, vec![0.0; 3]);
    }

    #[test]
    fn rep_jet_cubic() {
        let j = rep_jet(3, 2.0, 3);
        assert_eq!(j.derivs, vec![8.0, 12.0, 12.0, 6.0]);
        assert_eq!(rep_jet(3, -0.5, 3).derivs, vec![0.0; 4]);
    }

    #[test]
    fn swish_jet_matches_leibniz_by_hand() {
        // g(v) = vσ(v): g′ = σ + vσ′, g″ = 2σ′ + vσ″.
        let v = 0.8;
        let s = sigmoid_jet(v, 2);
        let g = swish_jet(v, 2);
        assert_relative_eq!(g.derivs[0], v * s.derivs[0], max_relative = 1e-15);
        assert_relative_eq!(g.derivs[1], s.derivs[0] + v * s.derivs[1], max_relative = 1e-15);
        assert_relative_eq!(g.derivs[2], 2.0 * s.derivs[1] + v * s.derivs[2], max_relative = 1e-15);
    }

    #[test]
    fn activation_jet_rejects_large_order() {
        assert_eq!(
            activation_jet(ActivationKind::Sigmoid, None, 0.0, 13).unwrap_err(),
            AlgebraError::UnsupportedOrder { order: 13 }
        );
    }

    #[test]
    fn relu_affine_network_has_no_second_order_terms() {
        // Any expression of relu lifts of affine maps: masks of size ≥ 2
        // are exactly 0 away from kinks ("vanishing differentials").
        let k = 3;
        let xs = [0.3, 0.7, 0.45];
        let weights = [[0.9, -1.2, 0.4], [-0.5, 0.8, 1.1]];
        let mut acc = MultiDual::constant(0.2, k);
        for w in &weights {
            let mut pre = MultiDual::constant(0.1, k);
            for (i, &wi) in w.iter().enumerate() {
                pre.axpy(wi, &MultiDual::variable(xs[i], i + 1, k).unwrap());
            }
            let post = pre.lift(&relu_jet(pre.value(), k)).unwrap();
            acc.add_assign(&post);
        }
        for mask in 0..(1usize << k) {
            if mask.count_ones() >= 2 {
                assert_eq!(acc.coeffs[mask], 0.0, "mask {mask:#b}");
            }
        }
    }

    // ---- symbolic polynomial oracle -----------------------------------

    /// Dense polynomial with per-variable degree ≤ 3 in k ≤ 3 variables,
    /// coefficients indexed by exponent tuple.
    #[derive(Clone, Debug)]
    struct Poly {
        k: usize,
        coeffs: Vec<f64>, // index = Σ e_i · 4^i
    }

    impl Poly {
        fn exponents(&self, idx: usize) -> Vec<usize> {
            (0..self.k).map(|i| (idx >> (2 * i)) & 3).collect()
        }

        fn eval(&self, x: &[f64]) -> f64 {
            self.coeffs
                .iter()
                .enumerate()
                .map(|(idx, &c)| {
                    c * self
                        .exponents(idx)
                        .iter()
                        .enumerate()
                        .map(|(i, &e)| x[i].powi(e as i32))
                        .product::<f64>()
                })
                .sum()
        }

        /// Symbolic ∂^|mask| / ∂x_mask.
        fn mixed_partial(&self, mask: usize) -> Poly {
            let mut out = self.clone();
            for i in 0..self.k {
                if mask & (1 << i) != 0 {
                    let mut next = vec![0.0; out.coeffs.len()];
                    for (idx, &c) in out.coeffs.iter().enumerate() {
                        let e = (idx >> (2 * i)) & 3;
                        if e > 0 {
                            next[idx - (1 << (2 * i))] += c * e as f64;
                        }
                    }
                    out.coeffs = next;
                }
            }
            out
        }

        fn eval_multidual(&self, x: &[f64]) -> MultiDual {
            let k = self.k;
            let vars: Vec<MultiDual> = (0..k)
                .map(|i| MultiDual::variable(x[i], i + 1, k).unwrap())
                .collect();
            let mut acc = MultiDual::zero(k);
            for (idx, &c) in self.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let mut term = MultiDual::constant(c, k);
                for (i, &e) in self.exponents(idx).iter().enumerate() {
                    for _ in 0..e {
                        term = term.mul(&vars[i]).unwrap();
                    }
                }
                acc.add_assign(&term);
            }
            acc
        }
    }

    fn arb_multidual(k: usize) -> impl Strategy<Value = MultiDual> {
        proptest::collection::vec(-2.0..2.0f64, 1 << k)
            .prop_map(move |coeffs| MultiDual { k, coeffs })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ring_laws(k in 1usize..=6) {
            let mut runner = proptest::test_runner::TestRunner::deterministic();
            let a = arb_multidual(k).new_tree(&mut runner).unwrap().current();
            let b = arb_multidual(k).new_tree(&mut runner).unwrap().current();
            let c = arb_multidual(k).new_tree(&mut runner).unwrap().current();
            let ab_c = a.mul(&b).unwrap().mul(&c).unwrap();
            let a_bc = a.mul(&b.mul(&c).unwrap()).unwrap();
            let comm = b.mul(&a).unwrap();
            let dist_l = a.mul(&b.add(&c).unwrap()).unwrap();
            let dist_r = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            let ab = a.mul(&b).unwrap();
            for s in 0..(1usize << k) {
                let scale = ab_c.coeffs[s].abs().max(1.0);
                prop_assert!((ab_c.coeffs[s] - a_bc.coeffs[s]).abs() <= 1e-12 * scale);
                prop_assert!((ab.coeffs[s] - comm.coeffs[s]).abs() <= 1e-12 * scale);
                let dscale = dist_l.coeffs[s].abs().max(1.0);
                prop_assert!((dist_l.coeffs[s] - dist_r.coeffs[s]).abs() <= 1e-12 * dscale);
            }
        }

        #[test]
        fn polynomial_mixed_partials_match_symbolic(
            k in 1usize..=3,
            raw in proptest::collection::vec(-1.5..1.5f64, 64),
            x in proptest::collection::vec(0.05..0.95f64, 3),
        ) {
            let poly = Poly { k, coeffs: raw[..(1 << (2 * k))].to_vec() };
            let lifted = poly.eval_multidual(&x[..k]);
            for mask in 0..(1usize << k) {
                let expect = poly.mixed_partial(mask).eval(&x[..k]);
                let got = lifted.coeffs[mask];
                let scale = expect.abs().max(1.0);
                prop_assert!(
                    (got - expect).abs() <= 1e-10 * scale,
                    "mask {mask:#b}: {got} vs {expect}"
                );
            }
        }

        #[test]
        fn exp_is_a_homomorphism(
            a_raw in proptest::collection::vec(-1.0..1.0f64, 8),
            b_raw in proptest::collection::vec(-1.0..1.0f64, 8),
        ) {
            let k = 3;
            let a = MultiDual { k, coeffs: a_raw };
            let b = MultiDual { k, coeffs: b_raw };
            let sum = a.add(&b).unwrap();
            let lhs = sum.lift(&exp_jet(sum.value(), k)).unwrap();
            let rhs = a
                .lift(&exp_jet(a.value(), k)).unwrap()
                .mul(&b.lift(&exp_jet(b.value(), k)).unwrap()).unwrap();
            for s in 0..(1usize << k) {
                let scale = lhs.coeffs[s].abs().max(1.0);
                prop_assert!((lhs.coeffs[s] - rhs.coeffs[s]).abs() <= 1e-12 * scale);
            }
        }
    }
}
