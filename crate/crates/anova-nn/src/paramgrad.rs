//! Reverse-mode differentiation of scalar losses with respect to network
//! parameters, where the forward pass runs over multidual values.
//!
//! The strategy: the forward pass records one node per neuron
//! (pre-activation affine combination) and one per activation lift, each
//! with a known vector-valued local adjoint. One forward recording plus
//! one reverse sweep yields ∂(any output coefficient)/∂θ for all
//! parameters — no nested graph traversals, no per-weight nodes.

use crate::multidual::{activation_jet, AlgebraError, MultiDual, UnivariateJet};
use crate::network::{MlpParams, NetworkError, NetworkSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("empty tape")]
    EmptyTape,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

enum Node {
    /// Seeded input coordinate; a leaf.
    Input,
    /// bias + Σᵢ weights[i]·inputᵢ over the previous layer's activations,
    /// which occupy the contiguous id range [first_input, first_input+fan_in).
    /// Flat parameter ids: weights at weight_base + i, bias at bias_param.
    Neuron { weight_base: usize, bias_param: usize, first_input: usize, weights: Vec<f64> },
    /// Activation lift of `input`. `ldash` = lift(f′) at the input value,
    /// the algebra chain-rule factor used by the reverse sweep.
    Lift { input: usize, ldash: MultiDual },
}

/// Record of one multidual forward pass through the network. Nodes are
/// stored in topological order; single-use, single-thread.
pub struct Tape {
    k: usize,
    n_params: usize,
    nodes: Vec<Node>,
    values: Vec<MultiDual>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output of the recorded forward pass.
    pub fn output(&self) -> &MultiDual {
        self.values.last().expect("tape is never constructed empty")
    }
}

/// Runs the network forward over the full multidual algebra while
/// recording every primitive. The returned multidual's full-mask
/// coefficient is ∂^K NN/∂x₁…∂x_K at `x`.
pub fn record_forward(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
) -> Result<(Tape, MultiDual), TapeError> {
    spec.validate()?;
    if x.len() != spec.input_dim {
        return Err(TapeError::Network(NetworkError::ShapeMismatch(format!(
            "input length {} vs input_dim {}",
            x.len(),
            spec.input_dim
        ))));
    }
    let k = spec.input_dim;
    let rep_degree = Some(spec.rep_degree_or_default());
    let dims = spec.layer_dims();
    if dims.len() != params.layers.len() {
        return Err(TapeError::Network(NetworkError::ShapeMismatch("layer count".into())));
    }

    let mut tape = Tape { k, n_params: spec.param_count(), nodes: Vec::new(), values: Vec::new() };
    for (i, &xi) in x.iter().enumerate() {
        tape.nodes.push(Node::Input);
        tape.values.push(MultiDual::variable(xi, i + 1, k)?);
    }

    let n_layers = params.layers.len();
    let mut flat_base = 0;
    // Contiguous id range of the previous layer's activations.
    let mut act_start = 0usize;
    for (l, layer) in params.layers.iter().enumerate() {
        let (fan_in, fan_out) = dims[l];
        if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
            return Err(TapeError::Network(NetworkError::ShapeMismatch(format!("layer {l}"))));
        }
        // all neurons of the layer first, then all lifts, so each layer's
        // activations form one contiguous id range
        let neuron_start = tape.nodes.len();
        for j in 0..fan_out {
            let row = &layer.weights[j * fan_in..(j + 1) * fan_in];
            let mut pre = MultiDual::constant(layer.bias[j], k);
            for (i, &w) in row.iter().enumerate() {
                pre.axpy(w, &tape.values[act_start + i]);
            }
            tape.nodes.push(Node::Neuron {
                weight_base: flat_base + j * fan_in,
                bias_param: flat_base + fan_out * fan_in + j,
                first_input: act_start,
                weights: row.to_vec(),
            });
            tape.values.push(pre);
        }
        if l + 1 == n_layers {
            act_start = neuron_start;
        } else {
            for j in 0..fan_out {
                let input = neuron_start + j;
                // Jet one order deeper than k so the derivative jet still
                // has order k for the reverse-sweep lift factor.
                let jet =
                    activation_jet(spec.activation, rep_degree, tape.values[input].value(), k + 1)?;
                let activated =
                    tape.values[input].lift(&UnivariateJet::new(jet.derivs[..=k].to_vec()))?;
                let ldash = tape.values[input].lift(&UnivariateJet::new(jet.derivs[1..].to_vec()))?;
                tape.nodes.push(Node::Lift { input, ldash });
                tape.values.push(activated);
            }
            act_start = neuron_start + fan_out;
        }
        flat_base += fan_out * fan_in + fan_out;
    }
    let out = tape.output().clone();
    Ok((tape, out))
}

/// Gradient of the output coefficient selected by `seed_mask` with
/// respect to all parameters, in canonical flat order.
pub fn backward(tape: &Tape, seed_mask: usize) -> Result<Vec<f64>, TapeError> {
    let mut seed = vec![0.0; 1 << tape.k];
    seed[seed_mask] = 1.0;
    backward_weighted(tape, &seed)
}

/// Gradient of Σ_m seed[m]·output.coeffs[m] with respect to all
/// parameters. A reverse sweep visits each node exactly once.
pub fn backward_weighted(tape: &Tape, seed: &[f64]) -> Result<Vec<f64>, TapeError> {
    if tape.is_empty() {
        return Err(TapeError::EmptyTape);
    }
    let width = 1usize << tape.k;
    assert_eq!(seed.len(), width, "seed selector length");
    let n = tape.nodes.len();
    let mut adjoint: Vec<f64> = vec![0.0; n * width];
    adjoint[(n - 1) * width..].copy_from_slice(seed);
    let mut grad = vec![0.0; tape.n_params];

    for id in (0..n).rev() {
        let (head, tail) = adjoint.split_at_mut(id * width);
        let adj = &tail[..width];
        if adj.iter().all(|&a| a == 0.0) {
            continue;
        }
        match &tape.nodes[id] {
            Node::Input => {}
            Node::Neuron { weight_base, bias_param, first_input, weights } => {
                grad[*bias_param] += adj[0];
                // out = bias + Σ θᵢ·aᵢ ⇒ ∂out/∂θᵢ = aᵢ, ∂out/∂aᵢ = θᵢ·I
                for (i, &theta) in weights.iter().enumerate() {
                    let src = first_input + i;
                    grad[weight_base + i] += dot(adj, &tape.values[src].coeffs);
                    let dst = &mut head[src * width..(src + 1) * width];
                    for (d, &a) in dst.iter_mut().zip(adj) {
                        *d += theta * a;
                    }
                }
            }
            Node::Lift { input, ldash } => {
                // δout = lift(f′, a) · δa ⇒ adjoint is the transposed
                // subset convolution with L = lift(f′, a).
                let dst = &mut head[input * width..(input + 1) * width];
                for (s, &adj_s) in adj.iter().enumerate() {
                    if adj_s == 0.0 {
                        continue;
                    }
                    let mut u = s;
                    loop {
                        dst[u] += adj_s * ldash.coeffs[s ^ u];
                        if u == 0 {
                            break;
                        }
                        u = (u - 1) & s;
                    }
                }
            }
        }
    }
    Ok(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multidual::ActivationKind;
    use crate::network::{init_params, Layer, NetworkSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(k: usize, hidden: &[usize], act: ActivationKind) -> NetworkSpec {
        NetworkSpec::new(k, hidden.to_vec(), act)
    }

    #[test]
    fn forward_matches_plain_multidual() {
        let s = spec(3, &[5, 4], ActivationKind::Sigmoid);
        let p = init_params(&s, 1);
        let x = [0.2, 0.5, 0.8];
        let (_, out) = record_forward(&p, &s, &x).unwrap();
        let direct = crate::network::forward_multidual(&p, &s, &x).unwrap();
        for (a, b) in out.coeffs.iter().zip(&direct.coeffs) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_network_bias_gradient_of_mixed_partial_is_zero() {
        let s = spec(2, &[3], ActivationKind::Sigmoid);
        let mut p = init_params(&s, 0);
        for layer in &mut p.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        p.layers[1].bias[0] = 0.4;
        let (tape, out) = record_forward(&p, &s, &[0.5, 0.5]).unwrap();
        assert_eq!(out.mixed_partial(), 0.0);
        let grad = backward(&tape, 0b11).unwrap();
        // output bias is the last flat parameter
        assert_eq!(*grad.last().unwrap(), 0.0);
    }

    #[test]
    fn linear_regression_special_case() {
        // 1 hidden layer, rep degree 1 (identity on positive
        // preactivations), K = 1, seed = the {1} coefficient:
        // d NN/dx = Σ_j w2_j · w1_j, so its gradients have closed forms.
        let mut s = spec(1, &[2], ActivationKind::Rep);
        s.rep_degree = Some(1);
        let p = MlpParams {
            layers: vec![
                Layer { weights: vec![0.8, 0.6], bias: vec![0.5, 0.9] }, // keeps preacts > 0
                Layer { weights: vec![0.3, -0.2], bias: vec![0.1] },
            ],
        };
        let (tape, out) = record_forward(&p, &s, &[0.7]).unwrap();
        let slope = 0.3 * 0.8 + (-0.2) * 0.6;
        assert!((out.coeffs[1] - slope).abs() < 1e-14);
        let grad = backward(&tape, 1).unwrap();
        // flat layout: [w1_1, w1_2, b1_1, b1_2, w2_1, w2_2, b2]
        assert!((grad[0] - 0.3).abs() < 1e-14); // d slope / d w1_1 = w2_1
        assert!((grad[1] - -0.2).abs() < 1e-14);
        assert_eq!(grad[2], 0.0); // hidden biases don't reach the slope
        assert_eq!(grad[3], 0.0);
        assert!((grad[4] - 0.8).abs() < 1e-14); // d slope / d w2_1 = w1_1
        assert!((grad[5] - 0.6).abs() < 1e-14);
        assert_eq!(grad[6], 0.0);
    }

    /// Central finite differences of the selected output coefficient over
    /// a single flat parameter.
    fn fd_param(
        params: &MlpParams,
        spec: &NetworkSpec,
        x: &[f64],
        mask: usize,
        idx: usize,
        step: f64,
    ) -> f64 {
        let mut flat = params.flatten();
        flat[idx] += step;
        let plus = crate::network::forward_multidual(
            &MlpParams::from_flat(spec, &flat).unwrap(),
            spec,
            x,
        )
        .unwrap()
        .coeffs[mask];
        flat[idx] -= 2.0 * step;
        let minus = crate::network::forward_multidual(
            &MlpParams::from_flat(spec, &flat).unwrap(),
            spec,
            x,
        )
        .unwrap()
        .coeffs[mask];
        (plus - minus) / (2.0 * step)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cases = [
            (ActivationKind::Sigmoid, vec![6]),
            (ActivationKind::Swish, vec![5, 4]),
            (ActivationKind::Rep, vec![4, 4, 3]),
        ];
        for (act, hidden) in cases {
            let s = spec(2, &hidden, act);
            let p = init_params(&s, rng.gen());
            let x = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            let (tape, _) = record_forward(&p, &s, &x).unwrap();
            let grad = backward(&tape, 0b11).unwrap();
            for idx in (0..s.param_count()).step_by(3) {
                let fd = fd_param(&p, &s, &x, 0b11, idx, 1e-5);
                let scale = fd.abs().max(1e-4);
                assert!(
                    (grad[idx] - fd).abs() / scale < 1e-4,
                    "{act:?} idx {idx}: {} vs {fd}",
                    grad[idx]
                );
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed() {
        let s = spec(2, &[4], ActivationKind::Swish);
        let p = init_params(&s, 5);
        let (tape, _) = record_forward(&p, &s, &[0.3, 0.6]).unwrap();
        let (alpha, beta) = (1.7, -0.4);
        let g1 = backward(&tape, 0b01).unwrap();
        let g2 = backward(&tape, 0b11).unwrap();
        let mut seed = vec![0.0; 4];
        seed[0b01] = alpha;
        seed[0b11] = beta;
        let combo = backward_weighted(&tape, &seed).unwrap();
        for i in 0..combo.len() {
            let expect = alpha * g1[i] + beta * g2[i];
            assert!((combo[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_are_deterministic() {
        let s = spec(3, &[7, 7], ActivationKind::Sigmoid);
        let p = init_params(&s, 13);
        let x = [0.11, 0.52, 0.93];
        let run = || {
            let (tape, _) = record_forward(&p, &s, &x).unwrap();
            backward(&tape, 0b111).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_seed_on_missing_tape() {
        let tape = Tape { k: 1, n_params: 0, nodes: Vec::new(), values: Vec::new() };
        assert!(matches!(backward(&tape, 0), Err(TapeError::EmptyTape)));
    }
}
