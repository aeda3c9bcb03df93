//! Fitting the full mixed partial of the network to data: per-sample
//! penalty φ on (mixed partial − target), optional ℓ₂ weight penalty,
//! optional additive Gaussian target noise (training split only), adam or
//! L-BFGS optimization, and validation early stopping.

use crate::data::{Dataset, Split};
use crate::multidual::AlgebraError;
use crate::network::{init_params, MlpParams, NetworkError, NetworkSpec};
use crate::paramgrad::{backward_weighted, record_forward, TapeError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss encountered")]
    NonFiniteLoss,
    #[error("line search failed")]
    LineSearchFailed,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Squared,
    Absolute,
}

impl LossKind {
    fn phi(&self, r: f64) -> f64 {
        match self {
            LossKind::Squared => r * r,
            LossKind::Absolute => r.abs(),
        }
    }

    fn dphi(&self, r: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * r,
            LossKind::Absolute => {
                if r >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 stops
    /// after the first epoch.
    pub patience: usize,
    pub l2_weight: f64,
    /// Multiplicative per-epoch learning-rate decay (Adam only); 1.0
    /// keeps the rate constant. Useful to push past the constant-rate
    /// noise floor on long runs.
    pub lr_decay: f64,
    /// Std of Gaussian noise added to *training* targets (ablation knob).
    pub noise_sigma: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 3e-3,
            lr_decay: 1.0,
            batch_size: Some(256),
            max_epochs: 300,
            patience: 30,
            l2_weight: 0.0,
            noise_sigma: 0.0,
            seed: 0,
            loss: LossKind::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(TrainError::InvalidConfig("lr_decay must be in (0, 1]".into()));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::InvalidConfig("patience must be ≤ max_epochs".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-run record. `wall_time_s` is informational and deliberately left
/// out of the serialized form so machine-readable outputs are
/// byte-identical across re-runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_rmse: Vec<f64>,
    pub test_rmse: f64,
    pub diverged: bool,
    pub line_search_fallbacks: usize,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// Mean of φ(mixed_partial(x⁽ⁱ⁾) − y⁽ⁱ⁾) plus spec.l2_weight·Σ w²
/// (biases unpenalized). `x` is row-major n×K.
pub fn loss(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    y: &[f64],
    kind: LossKind,
) -> Result<f64, TrainError> {
    let k = spec.input_dim;
    assert!(!y.is_empty(), "batch must be nonempty");
    assert_eq!(x.len(), y.len() * k);
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let pred = crate::network::mixed_partial(params, spec, &x[i * k..(i + 1) * k])?;
        acc += kind.phi(pred - yi);
    }
    let mut val = acc / y.len() as f64;
    if spec.l2_weight > 0.0 {
        let mut reg = 0.0;
        params.for_each_flat(|_, w, is_weight| {
            if is_weight {
                reg += w * w;
            }
        });
        val += spec.l2_weight * reg;
    }
    if !val.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok(val)
}

/// Loss plus its gradient with respect to the flat parameter vector.
/// Samples are accumulated in a fixed order, so the result is
/// deterministic bit-for-bit.
pub fn loss_and_grad(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    y: &[f64],
    kind: LossKind,
) -> Result<(f64, Vec<f64>), TrainError> {
    let k = spec.input_dim;
    assert!(!y.is_empty(), "batch must be nonempty");
    assert_eq!(x.len(), y.len() * k);
    let n = y.len() as f64;
    let full_mask = (1usize << k) - 1;
    let mut seed = vec![0.0; 1 << k];
    let mut grad = vec![0.0; spec.param_count()];
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let (tape, out) = record_forward(params, spec, &x[i * k..(i + 1) * k])?;
        let r = out.mixed_partial() - yi;
        acc += kind.phi(r);
        seed[full_mask] = kind.dphi(r) / n;
        let g = backward_weighted(&tape, &seed)?;
        for (gi, gs) in grad.iter_mut().zip(&g) {
            *gi += gs;
        }
    }
    let mut val = acc / n;
    if spec.l2_weight > 0.0 {
        let mut reg = 0.0;
        params.for_each_flat(|idx, w, is_weight| {
            if is_weight {
                reg += w * w;
                grad[idx] += 2.0 * spec.l2_weight * w;
            }
        });
        val += spec.l2_weight * reg;
    }
    if !val.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((val, grad))
}

// ---------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }
}

/// Standard bias-corrected adam update.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64], lr: f64) {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..theta.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

// ---------------------------------------------------------------------
// L-BFGS with strong Wolfe line search
// ---------------------------------------------------------------------

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;

pub struct LbfgsState {
    history: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    pub fallbacks: usize,
}

impl LbfgsState {
    pub fn new(history: usize) -> Self {
        LbfgsState { history, s: VecDeque::new(), y: VecDeque::new(), fallbacks: 0 }
    }

    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        // Two-loop recursion with γ·I initial scaling.
        let mut q: Vec<f64> = grad.to_vec();
        let pairs = self.s.len();
        let mut alpha = vec![0.0; pairs];
        let mut rho = vec![0.0; pairs];
        for i in (0..pairs).rev() {
            rho[i] = 1.0 / dot(&self.y[i], &self.s[i]);
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            axpy(&mut q, -alpha[i], &self.y[i]);
        }
        let gamma = if pairs > 0 {
            let i = pairs - 1;
            dot(&self.s[i], &self.y[i]) / dot(&self.y[i], &self.y[i])
        } else {
            1.0
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..pairs {
            let beta = rho[i] * dot(&self.y[i], &q);
            axpy(&mut q, alpha[i] - beta, &self.s[i]);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if dot(&s, &y) > 1e-10 * norm(&s) * norm(&y) {
            self.s.push_back(s);
            self.y.push_back(y);
            if self.s.len() > self.history {
                self.s.pop_front();
                self.y.pop_front();
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(out: &mut [f64], s: f64, v: &[f64]) {
    for (o, &x) in out.iter_mut().zip(v) {
        *o += s * x;
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub struct LbfgsStep {
    pub loss: f64,
    pub grad_norm: f64,
    pub used_fallback: bool,
}

/// One quasi-Newton step. On strong-Wolfe line-search failure falls back
/// to a small gradient step and records it.
pub fn lbfgs_step<F>(
    state: &mut LbfgsState,
    theta: &mut Vec<f64>,
    objective: &mut F,
) -> Result<LbfgsStep, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    let (f0, g0) = objective(theta)?;
    let g0_norm = norm(&g0);
    if g0_norm == 0.0 {
        return Ok(LbfgsStep { loss: f0, grad_norm: 0.0, used_fallback: false });
    }
    let mut dir = state.direction(&g0);
    let mut dphi0 = dot(&g0, &dir);
    if dphi0 >= 0.0 {
        // Not a descent direction (stale curvature); reset to steepest descent.
        dir = g0.iter().map(|&g| -g).collect();
        dphi0 = -g0_norm * g0_norm;
    }
    if state.s.is_empty() {
        // No curvature information yet: a unit step along −g can be wildly
        // out of scale, so start with a step of bounded length.
        let d_norm = norm(&dir);
        if d_norm > 1.0 {
            let scale = 1.0 / d_norm;
            dir.iter_mut().for_each(|v| *v *= scale);
            dphi0 *= scale;
        }
    }

    match wolfe_search(theta, &dir, f0, dphi0, objective)? {
        Some((alpha, f_new, g_new)) => {
            let s: Vec<f64> = dir.iter().map(|&d| alpha * d).collect();
            let y: Vec<f64> = g_new.iter().zip(&g0).map(|(a, b)| a - b).collect();
            axpy(theta, alpha, &dir);
            state.push(s, y);
            Ok(LbfgsStep { loss: f_new, grad_norm: norm(&g_new), used_fallback: false })
        }
        None => {
            // Recoverable: scaled gradient step.
            state.fallbacks += 1;
            let step = 1e-3 / g0_norm.max(1.0);
            axpy(theta, -step, &g0);
            let (f_new, g_new) = objective(theta)?;
            Ok(LbfgsStep { loss: f_new, grad_norm: norm(&g_new), used_fallback: true })
        }
    }
}

/// Strong Wolfe line search (bracket then zoom with bisection).
/// Returns (α, f(θ+αd), ∇f(θ+αd)) or None on failure.
fn wolfe_search<F>(
    theta: &[f64],
    dir: &[f64],
    f0: f64,
    dphi0: f64,
    objective: &mut F,
) -> Result<Option<(f64, f64, Vec<f64>)>, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    let eval = |a: f64, objective: &mut F| -> Result<(f64, f64, Vec<f64>), TrainError> {
        let mut point = theta.to_vec();
        axpy(&mut point, a, dir);
        let (f, g) = objective(&point)?;
        let slope = dot(&g, dir);
        Ok((f, slope, g))
    };

    // Best Armijo-satisfying point seen, kept as a progress guarantee in
    // case the curvature condition is never met within the eval budget.
    let mut armijo_best: Option<(f64, f64, Vec<f64>)> = None;
    let note_armijo =
        |a: f64, f: f64, g: &[f64], best: &mut Option<(f64, f64, Vec<f64>)>| {
            if f <= f0 + WOLFE_C1 * a * dphi0 && best.as_ref().is_none_or(|(_, bf, _)| f < *bf) {
                *best = Some((a, f, g.to_vec()));
            }
        };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut slope_prev = dphi0;
    let mut alpha = 1.0;
    let mut bracket = None;
    for _ in 0..12 {
        let (f, slope, g) = eval(alpha, objective)?;
        note_armijo(alpha, f, &g, &mut armijo_best);
        if f > f0 + WOLFE_C1 * alpha * dphi0 || f >= f_prev && alpha_prev > 0.0 {
            bracket = Some((alpha_prev, f_prev, slope_prev, alpha, f));
            break;
        }
        if slope.abs() <= -WOLFE_C2 * dphi0 {
            return Ok(Some((alpha, f, g)));
        }
        if slope >= 0.0 {
            bracket = Some((alpha, f, slope, alpha_prev, f_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = f;
        slope_prev = slope;
        alpha *= 2.0;
    }
    let (mut lo, mut f_lo, mut slope_lo, mut hi, mut f_hi) = match bracket {
        Some(b) => b,
        None => return Ok(armijo_best),
    };
    for _ in 0..25 {
        // quadratic interpolation from (lo, f_lo, slope_lo) and (hi, f_hi),
        // safeguarded toward bisection
        let mut mid = {
            let denom = 2.0 * (f_hi - f_lo - slope_lo * (hi - lo));
            if denom.abs() > 1e-300 {
                lo - slope_lo * (hi - lo) * (hi - lo) / denom
            } else {
                0.5 * (lo + hi)
            }
        };
        let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (b - a);
        if !(a + margin..=b - margin).contains(&mid) {
            mid = 0.5 * (lo + hi);
        }
        let (f, slope, g) = eval(mid, objective)?;
        note_armijo(mid, f, &g, &mut armijo_best);
        if f > f0 + WOLFE_C1 * mid * dphi0 || f >= f_lo {
            hi = mid;
            f_hi = f;
        } else {
            if slope.abs() <= -WOLFE_C2 * dphi0 {
                return Ok(Some((mid, f, g)));
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = mid;
            f_lo = f;
            slope_lo = slope;
        }
        if (hi - lo).abs() < 1e-12 {
            break;
        }
    }
    Ok(armijo_best)
}

// ---------------------------------------------------------------------
// Fit loop
// ---------------------------------------------------------------------

/// Trains the mixed partial on the dataset's training split, early-stops
/// on validation RMSE (mixed partial vs clean validation targets), and
/// returns the parameters of the best epoch.
///
/// Divergence (non-finite loss) stops the run and is flagged in the
/// report rather than silently dropped.
pub fn fit(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(MlpParams, TrainReport), TrainError> {
    fit_from(dataset, spec, config, None)
}

/// Like [`fit`], but optionally warm-starts from existing parameters
/// instead of a fresh seeded initialization. Useful for two-phase
/// schedules such as mini-batch Adam followed by full-batch L-BFGS.
pub fn fit_from(
    dataset: &Dataset,
    spec: &NetworkSpec,
    config: &TrainConfig,
    warm_start: Option<&MlpParams>,
) -> Result<(MlpParams, TrainReport), TrainError> {
    config.validate()?;
    spec.validate()?;
    if dataset.k != spec.input_dim {
        return Err(TrainError::Network(NetworkError::ShapeMismatch(format!(
            "dataset K = {} vs spec input_dim = {}",
            dataset.k, spec.input_dim
        ))));
    }
    let start = std::time::Instant::now();
    let mut spec = spec.clone();
    spec.l2_weight = config.l2_weight;
    let k = spec.input_dim;

    let gather = |split: Split| -> (Vec<f64>, Vec<f64>) {
        let idx = dataset.indices(split);
        let mut x = Vec::with_capacity(idx.len() * k);
        let mut y = Vec::with_capacity(idx.len());
        for &i in &idx {
            x.extend_from_slice(dataset.row(i));
            y.push(dataset.y[i]);
        }
        (x, y)
    };
    let (train_x, mut train_y) = gather(Split::Train);
    let (val_x, val_y) = gather(Split::Val);
    let (test_x, test_y) = gather(Split::Test);
    if train_y.is_empty() || val_y.is_empty() || test_y.is_empty() {
        return Err(TrainError::InvalidConfig("dataset needs all three splits".into()));
    }

    if config.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973);
        for y in train_y.iter_mut() {
            // Box-Muller from two uniforms.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *y += config.noise_sigma * z;
        }
    }

    let params = match warm_start {
        Some(p) => p.clone(),
        None => init_params(&spec, config.seed),
    };
    let mut theta = params.flatten();
    MlpParams::from_flat(&spec, &theta)?;
    let n_train = train_y.len();
    let batch_size = config.batch_size.unwrap_or(n_train).min(n_train).max(1);

    let mut adam = AdamState::new(theta.len());
    let mut lbfgs = LbfgsState::new(10);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut batch_x = vec![0.0; batch_size * k];
    let mut batch_y = vec![0.0; batch_size];

    let mut report = TrainReport {
        best_epoch: 0,
        train_loss: Vec::new(),
        val_rmse: Vec::new(),
        test_rmse: f64::NAN,
        diverged: false,
        line_search_fallbacks: 0,
        wall_time_s: 0.0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_theta = theta.clone();

    let mut lr = config.learning_rate;
    'epochs: for epoch in 1..=config.max_epochs {
        let epoch_loss = match config.optimizer {
            OptimizerKind::Adam => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64) << 20);
                order.shuffle(&mut rng);
                let mut total = 0.0;
                let mut count = 0usize;
                for chunk in order.chunks(batch_size) {
                    for (slot, &i) in chunk.iter().enumerate() {
                        batch_x[slot * k..(slot + 1) * k]
                            .copy_from_slice(&train_x[i * k..(i + 1) * k]);
                        batch_y[slot] = train_y[i];
                    }
                    let p = MlpParams::from_flat(&spec, &theta)?;
                    let res = loss_and_grad(
                        &p,
                        &spec,
                        &batch_x[..chunk.len() * k],
                        &batch_y[..chunk.len()],
                        config.loss,
                    );
                    let (l, g) = match res {
                        Ok(v) => v,
                        Err(TrainError::NonFiniteLoss) => {
                            report.diverged = true;
                            break 'epochs;
                        }
                        Err(e) => return Err(e),
                    };
                    adam_step(&mut adam, &mut theta, &g, lr);
                    total += l * chunk.len() as f64;
                    count += chunk.len();
                }
                total / count as f64
            }
            OptimizerKind::Lbfgs => {
                let mut objective = |flat: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
                    let p = MlpParams::from_flat(&spec, flat)?;
                    loss_and_grad(&p, &spec, &train_x, &train_y, config.loss)
                };
                match lbfgs_step(&mut lbfgs, &mut theta, &mut objective) {
                    Ok(step) => step.loss,
                    Err(TrainError::NonFiniteLoss) => {
                        report.diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        report.train_loss.push(epoch_loss);

        let p = MlpParams::from_flat(&spec, &theta)?;
        let val = rmse(&p, &spec, &val_x, &val_y)?;
        if !val.is_finite() {
            report.diverged = true;
            report.val_rmse.push(f64::MAX);
            break;
        }
        report.val_rmse.push(val);
        if val < best_val {
            best_val = val;
            best_theta.copy_from_slice(&theta);
            report.best_epoch = epoch;
        }
        let since_best = epoch - report.best_epoch;
        if since_best >= config.patience {
            break;
        }
        lr *= config.lr_decay;
    }
    report.line_search_fallbacks = lbfgs.fallbacks;

    let best = MlpParams::from_flat(&spec, &best_theta)?;
    report.test_rmse = rmse(&best, &spec, &test_x, &test_y)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((best, report))
}

/// RMSE of the mixed partial against targets, rows in `x` (n×K).
pub fn rmse(
    params: &MlpParams,
    spec: &NetworkSpec,
    x: &[f64],
    y: &[f64],
) -> Result<f64, TrainError> {
    let k = spec.input_dim;
    let mut acc = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let pred = crate::network::mixed_partial(params, spec, &x[i * k..(i + 1) * k])?;
        acc += (pred - yi) * (pred - yi);
    }
    Ok((acc / y.len() as f64).sqrt())
}

/// RMSE of the mixed partial on one split of a dataset.
pub fn rmse_on_split(
    params: &MlpParams,
    spec: &NetworkSpec,
    dataset: &Dataset,
    split: Split,
) -> Result<f64, TrainError> {
    let idx = dataset.indices(split);
    let k = dataset.k;
    let mut x = Vec::with_capacity(idx.len() * k);
    let mut y = Vec::with_capacity(idx.len());
    for &i in &idx {
        x.extend_from_slice(dataset.row(i));
        y.push(dataset.y[i]);
    }
    rmse(params, spec, &x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, TestFunctionKind, TestFunctionSpec};
    use crate::multidual::ActivationKind;
    use crate::network::Layer;
    use approx::assert_relative_eq;

    /// Exact product network: NN = c·x₁x₂ on the unit box via rep-2
    /// activation, so the fitted function (mixed partial) is ≡ c.
    fn product_network(c: f64) -> (NetworkSpec, MlpParams) {
        let mut spec = NetworkSpec::new(2, vec![3], ActivationKind::Rep);
        spec.rep_degree = Some(2);
        let params = MlpParams {
            layers: vec![
                Layer {
                    weights: vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
                    bias: vec![0.0; 3],
                },
                Layer { weights: vec![c / 2.0, -c / 2.0, -c / 2.0], bias: vec![0.0] },
            ],
        };
        (spec, params)
    }

    #[test]
    fn zero_network_loss_is_mean_square_target() {
        let spec = NetworkSpec::new(2, vec![3], ActivationKind::Sigmoid);
        let mut p = crate::network::init_params(&spec, 0);
        for layer in &mut p.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = vec![0.2, 0.3, 0.6, 0.7, 0.4, 0.9];
        let y = vec![1.0, 2.0, 3.0];
        let l = loss(&p, &spec, &x, &y, LossKind::Squared).unwrap();
        assert_relative_eq!(l, (1.0 + 4.0 + 9.0) / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let (spec, p) = product_network(1.7);
        let x = vec![0.2, 0.3, 0.6, 0.7];
        let y = vec![1.7, 1.7];
        let l = loss(&p, &spec, &x, &y, LossKind::Squared).unwrap();
        assert!(l.abs() < 1e-24, "{l}");
    }

    #[test]
    fn one_sample_hand_loss() {
        // mixed partial 0.5, target 2, squared φ → 2.25
        let (spec, p) = product_network(0.5);
        let l = loss(&p, &spec, &[0.4, 0.8], &[2.0], LossKind::Squared).unwrap();
        assert_relative_eq!(l, 2.25, max_relative = 1e-12);
        let la = loss(&p, &spec, &[0.4, 0.8], &[2.0], LossKind::Absolute).unwrap();
        assert_relative_eq!(la, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut state = AdamState::new(3);
        let mut theta = vec![1.0, -2.0, 0.5];
        let grad = vec![10.0, -0.01, 3.0];
        let lr = 0.1;
        adam_step(&mut state, &mut theta, &grad, lr);
        let expect = [1.0 - lr, -2.0 + lr, 0.5 - lr];
        for (t, e) in theta.iter().zip(expect) {
            assert_relative_eq!(*t, e, epsilon = 1e-5);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::new(2);
        let mut theta = vec![0.7, -0.3];
        adam_step(&mut state, &mut theta, &[0.0, 0.0], 0.1);
        assert_eq!(theta, vec![0.7, -0.3]);
    }

    #[test]
    fn adam_updates_shrink_under_constant_gradient() {
        let mut state = AdamState::new(1);
        let mut theta = vec![0.0];
        let grad = vec![2.5];
        adam_step(&mut state, &mut theta, &grad, 0.01);
        let upd1 = theta[0].abs();
        let before = theta[0];
        adam_step(&mut state, &mut theta, &grad, 0.01);
        let upd2 = (theta[0] - before).abs();
        assert!(upd2 <= upd1 * (1.0 + 1e-6), "{upd1} vs {upd2}");
    }

    #[test]
    fn lbfgs_on_convex_quadratic() {
        // ½θᵀAθ with SPD diagonal-dominant A.
        let a = [
            [4.0, 1.0, 0.0, 0.5, 0.0],
            [1.0, 3.0, 0.5, 0.0, 0.0],
            [0.0, 0.5, 5.0, 1.0, 0.0],
            [0.5, 0.0, 1.0, 2.0, 0.5],
            [0.0, 0.0, 0.0, 0.5, 1.5],
        ];
        let mut objective = |theta: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
            let mut g = vec![0.0; 5];
            let mut f = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    g[i] += a[i][j] * theta[j];
                    f += 0.5 * theta[i] * a[i][j] * theta[j];
                }
            }
            Ok((f, g))
        };
        let mut theta = vec![1.0, -2.0, 3.0, -1.0, 0.5];
        let mut state = LbfgsState::new(10);
        for _ in 0..30 {
            let step = lbfgs_step(&mut state, &mut theta, &mut objective).unwrap();
            if step.grad_norm <= 1e-8 {
                return;
            }
        }
        panic!("did not converge: {theta:?}");
    }

    #[test]
    fn lbfgs_at_optimum_is_stationary() {
        let mut objective =
            |t: &[f64]| -> Result<(f64, Vec<f64>), TrainError> { Ok((t[0] * t[0], vec![2.0 * t[0]])) };
        let mut theta = vec![0.0];
        let mut state = LbfgsState::new(5);
        let step = lbfgs_step(&mut state, &mut theta, &mut objective).unwrap();
        assert_eq!(step.grad_norm, 0.0);
        assert_eq!(theta, vec![0.0]);
    }

    #[test]
    fn lbfgs_on_rosenbrock() {
        let mut objective = |t: &[f64]| -> Result<(f64, Vec<f64>), TrainError> {
            let (x, y) = (t[0], t[1]);
            let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = vec![
                -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                200.0 * (y - x * x),
            ];
            Ok((f, g))
        };
        let mut theta = vec![-1.2, 1.0];
        let mut state = LbfgsState::new(10);
        let mut best = f64::INFINITY;
        for _ in 0..200 {
            let step = lbfgs_step(&mut state, &mut theta, &mut objective).unwrap();
            best = best.min(step.loss);
            if best <= 1e-6 {
                return;
            }
        }
        panic!("rosenbrock stalled at {best}");
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let mut spec = NetworkSpec::new(2, vec![4], ActivationKind::Swish);
        spec.l2_weight = 0.05;
        let p = crate::network::init_params(&spec, 3);
        let x = vec![0.2, 0.7, 0.8, 0.4, 0.5, 0.5];
        let y = vec![0.3, -0.1, 0.6];
        let (_, grad) = loss_and_grad(&p, &spec, &x, &y, LossKind::Squared).unwrap();
        let flat = p.flatten();
        for idx in 0..flat.len() {
            let mut plus = flat.clone();
            plus[idx] += 1e-5;
            let mut minus = flat.clone();
            minus[idx] -= 1e-5;
            let lp = loss(&MlpParams::from_flat(&spec, &plus).unwrap(), &spec, &x, &y, LossKind::Squared).unwrap();
            let lm = loss(&MlpParams::from_flat(&spec, &minus).unwrap(), &spec, &x, &y, LossKind::Squared).unwrap();
            let fd = (lp - lm) / 2e-5;
            let scale = fd.abs().max(1e-4);
            assert!((grad[idx] - fd).abs() / scale < 1e-4, "idx {idx}: {} vs {fd}", grad[idx]);
        }
    }

    fn small_dataset() -> crate::data::Dataset {
        generate(&TestFunctionSpec::new(TestFunctionKind::Ishigami, 300), 5).unwrap()
    }

    #[test]
    fn patience_zero_runs_exactly_one_epoch() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![4], ActivationKind::Sigmoid);
        let config = TrainConfig { max_epochs: 50, patience: 0, ..Default::default() };
        let (_, report) = fit(&ds, &spec, &config).unwrap();
        assert_eq!(report.val_rmse.len(), 1);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![4], ActivationKind::Sigmoid);
        let config = TrainConfig { max_epochs: 5, patience: 5, seed: 3, ..Default::default() };
        let (p1, r1) = fit(&ds, &spec, &config).unwrap();
        let (p2, r2) = fit(&ds, &spec, &config).unwrap();
        assert_eq!(p1, p2);
        // serialized form excludes wall time, the only nondeterministic field
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn fit_from_matches_fit_on_fresh_init_and_rejects_bad_shapes() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![4], ActivationKind::Sigmoid);
        let config = TrainConfig { max_epochs: 5, patience: 5, seed: 3, ..Default::default() };
        let init = crate::network::init_params(&spec, config.seed);
        let (p1, _) = fit(&ds, &spec, &config).unwrap();
        let (p2, _) = fit_from(&ds, &spec, &config, Some(&init)).unwrap();
        assert_eq!(p1, p2);
        let other = crate::network::init_params(&NetworkSpec::new(3, vec![7], ActivationKind::Sigmoid), 0);
        assert!(fit_from(&ds, &spec, &config, Some(&other)).is_err());
    }

    #[test]
    fn early_stop_returns_min_val_rmse_epoch() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![6], ActivationKind::Sigmoid);
        let config = TrainConfig { max_epochs: 20, patience: 20, seed: 1, ..Default::default() };
        let (params, report) = fit(&ds, &spec, &config).unwrap();
        let min = report.val_rmse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(report.val_rmse[report.best_epoch - 1], min);
        // Returned parameters reproduce the recorded best validation RMSE.
        let mut spec2 = spec.clone();
        spec2.l2_weight = config.l2_weight;
        let val = rmse_on_split(&params, &spec2, &ds, Split::Val).unwrap();
        assert_relative_eq!(val, min, epsilon = 1e-12);
    }

    #[test]
    fn one_adam_epoch_decreases_loss_on_smoke_problem() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![8], ActivationKind::Sigmoid);
        let config = TrainConfig { max_epochs: 8, patience: 8, seed: 2, ..Default::default() };
        let (_, report) = fit(&ds, &spec, &config).unwrap();
        assert!(report.train_loss.last().unwrap() < report.train_loss.first().unwrap());
    }

    #[test]
    fn noise_is_reproducible_and_training_only() {
        let ds = small_dataset();
        let spec = NetworkSpec::new(3, vec![4], ActivationKind::Sigmoid);
        let config = TrainConfig {
            max_epochs: 3,
            patience: 3,
            noise_sigma: 0.05,
            seed: 11,
            ..Default::default()
        };
        let (_, r1) = fit(&ds, &spec, &config).unwrap();
        let (_, r2) = fit(&ds, &spec, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }
}
