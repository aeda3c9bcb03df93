//! Dense feed-forward scalar network NN_θ: [0,1]^K → R.
//!
//! The network is evaluated two ways: plain f64 (the antiderivative
//! surface) and over the multidual algebra, which yields every mixed
//! partial that is first order per variable in a single pass. The fitted
//! function is the full mixed partial, not the network value.

use crate::data::AffineMap;
use crate::multidual::{activation_jet, ActivationKind, AlgebraError, MultiDual};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Largest input dimension for multidual evaluation; corner sums and
/// training stay tractable only in this regime.
pub const MAX_INPUT_DIM: usize = 10;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input dimension {0} unsupported (max {MAX_INPUT_DIM})")]
    UnsupportedOrder(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

/// Architecture description. The output layer is always width 1 and
/// linear; `hidden` lists hidden widths only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    /// Degree of the rectified polynomial activation; `None` means
    /// `input_dim + 1`, the smallest degree whose K-th mixed partial is
    /// still continuous.
    pub rep_degree: Option<usize>,
    /// ℓ₂ penalty on weights (biases unpenalized) used by the loss.
    pub l2_weight: f64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: ActivationKind) -> Self {
        NetworkSpec { input_dim, hidden, activation, rep_degree: None, l2_weight: 0.0 }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.input_dim == 0 {
            return Err(NetworkError::ShapeMismatch("input_dim must be ≥ 1".into()));
        }
        if self.input_dim > MAX_INPUT_DIM {
            return Err(NetworkError::UnsupportedOrder(self.input_dim));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(NetworkError::ShapeMismatch("hidden widths must be ≥ 1".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) per layer, output layer included.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, 1));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * i + o).sum()
    }

    pub fn rep_degree_or_default(&self) -> usize {
        self.rep_degree.unwrap_or(self.input_dim + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// out×in, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Network parameters. Flat layout is layer-major: weights row-major,
/// then bias, per layer in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[f64]) -> Result<Self, NetworkError> {
        if flat.len() != spec.param_count() {
            return Err(NetworkError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                flat.len()
            )));
        }
        let mut layers = Vec::new();
        let mut pos = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let weights = flat[pos..pos + fan_out * fan_in].to_vec();
            pos += fan_out * fan_in;
            let bias = flat[pos..pos + fan_out].to_vec();
            pos += fan_out;
            layers.push(Layer { weights, bias });
        }
        Ok(MlpParams { layers })
    }

    /// Applies `f` to every weight-and-bias in flat order; `is_weight`
    /// distinguishes penalized weights from biases.
    pub fn for_each_flat(&self, mut f: impl FnMut(usize, f64, bool)) {
        let mut idx = 0;
        for layer in &self.layers {
            for &w in &layer.weights {
                f(idx, w, true);
                idx += 1;
            }
            for &b in &layer.bias {
                f(idx, b, false);
                idx += 1;
            }
        }
    }

    fn check_spec(&self, spec: &NetworkSpec) -> Result<(), NetworkError> {
        let dims = spec.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "spec has {} layers, params have {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (l, (fan_in, fan_out)) in dims.iter().enumerate() {
            let layer = &self.layers[l];
            if layer.weights.len() != fan_in * fan_out || layer.bias.len() != *fan_out {
                return Err(NetworkError::ShapeMismatch(format!("layer {l} shape")));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, reproducible from the seed.
///
/// Hidden layers get an activation-dependent gain on top of Glorot. Saturating
/// activations (sigmoid, swish) need wider initial weights or the order-K mixed
/// partial of the net is ~1e-6 at init and the fit stalls for hundreds of
/// epochs; a gain of 3 breaks that plateau without destabilizing anything.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> MlpParams {
    let gain = match spec.activation {
        ActivationKind::Sigmoid | ActivationKind::Swish => 3.0,
        _ => 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let g = if l + 1 == n_layers { 1.0 } else { gain };
        let bound = g * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        layers.push(Layer { weights, bias: vec![0.0; fan_out] });
    }
    MlpParams { layers }
}

/// Plain scalar evaluation of the network (the antiderivative surface).
pub fn forward(params: &MlpParams, spec: &NetworkSpec, x: &[f64]) -> Result<f64, NetworkError> {
    if x.len() != spec.input_dim {
        return Err(NetworkError::ShapeMismatch(format!(
            "input length {} vs input_dim {}",
            x.len(),
            spec.input_dim
        )));
    }
    params.check_spec(spec)?;
    let n_layers = params.layers.len();
    let mut act: Vec<f64> = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let fan_in = act.len();
        let fan_out = layer.bias.len();
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let mut pre = layer.bias[j];
            let row = &layer.weights[j * fan_in..(j + 1) * fan_in];
            for (w, a) in row.iter().zip(&act) {
                pre += w * a;
            }
            next.push(if l + 1 == n_layers { pre } else { scalar_activation(spec, pre) });
        }
        act = next;
    }
    Ok(act[0])
}

fn scalar_activation(spec: &NetworkSpec, v: f64) -> f64 {
    match spec.activation {
        ActivationKind::Sigmoid => crate::multidual::sigmoid(v),
        ActivationKind::Relu => v.max(0.0),
        ActivationKind::Swish => v * crate::multidual::sigmoid(v),
        ActivationKind::Rep => {
            if v > 0.0 {
                v.powi(spec.rep_degree_or_default() as i32)
            } else {
                0.0
            }
        }
    }
}

/// Multidual evaluation with all `input_dim` coordinates active: returns
/// all 2^K mixed partials of the network at `x` in one pass.
pub fn forward_multidual(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
) -> Result<MultiDual, NetworkError> {
    let active: Vec<usize> = (0..spec.input_dim).collect();
    forward_multidual_subset(params, spec, x, &active)
}

/// Multidual evaluation with only the coordinates in `active` (0-based,
/// strictly increasing) seeded as algebra variables; the rest enter as
/// scalars. Coefficients are indexed by masks over the *compressed*
/// active variables, so the full-mask coefficient is ∂^|active| NN / ∂x_active.
pub fn forward_multidual_subset(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    active: &[usize],
) -> Result<MultiDual, NetworkError> {
    if x.len() != spec.input_dim {
        return Err(NetworkError::ShapeMismatch(format!(
            "input length {} vs input_dim {}",
            x.len(),
            spec.input_dim
        )));
    }
    if spec.input_dim > MAX_INPUT_DIM {
        return Err(NetworkError::UnsupportedOrder(spec.input_dim));
    }
    params.check_spec(spec)?;
    debug_assert!(active.windows(2).all(|w| w[0] < w[1]));
    let k = active.len().max(1);
    let rep_degree = Some(spec.rep_degree_or_default());

    let mut act: Vec<MultiDual> = Vec::with_capacity(spec.input_dim);
    for (i, &xi) in x.iter().enumerate() {
        match active.iter().position(|&a| a == i) {
            Some(slot) => act.push(MultiDual::variable(xi, slot + 1, k)?),
            None => act.push(MultiDual::constant(xi, k)),
        }
    }

    let n_layers = params.layers.len();
    for (l, layer) in params.layers.iter().enumerate() {
        let fan_in = act.len();
        let fan_out = layer.bias.len();
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let mut pre = MultiDual::constant(layer.bias[j], k);
            let row = &layer.weights[j * fan_in..(j + 1) * fan_in];
            for (w, a) in row.iter().zip(&act) {
                pre.axpy(*w, a);
            }
            if l + 1 == n_layers {
                next.push(pre);
            } else {
                let jet = activation_jet(spec.activation, rep_degree, pre.value(), k)?;
                next.push(pre.lift(&jet)?);
            }
        }
        act = next;
    }
    Ok(act.pop().expect("output layer has width 1"))
}

/// Full mixed partial ∂^K NN / ∂x₁…∂x_K at `x` — the fitted function.
pub fn mixed_partial(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
) -> Result<f64, NetworkError> {
    Ok(forward_multidual(params, spec, x)?.mixed_partial())
}

// ---------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned training artifact: architecture, flat parameters, the
/// normalization maps of the dataset the model was trained on, and the
/// training seed. JSON round-trips f64 values bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub input_maps: Vec<AffineMap>,
    pub output_map: AffineMap,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(
        spec: NetworkSpec,
        params: &MlpParams,
        input_maps: Vec<AffineMap>,
        output_map: AffineMap,
        seed: u64,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: params.flatten(),
            spec,
            input_maps,
            output_map,
            seed,
        }
    }

    pub fn params(&self) -> Result<MlpParams, NetworkError> {
        MlpParams::from_flat(&self.spec, &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NetworkError::Version(ckpt.version));
        }
        ckpt.params()?; // shape check
        Ok(ckpt)
    }
}
