//! Shared Q-network: a fully connected ReLU stack with a linear output head,
//! trained with the Double DQN target.
//!
//! Forward and backward passes are written out by hand. Parameters of each
//! layer are stored as a row-major `outputs x inputs` weight matrix followed
//! by a bias vector.

use rand::Rng;

use crate::error::{PatrolError, Result};
use crate::gridmap::{Action, ActionMask};
use crate::learner::Transition;
use crate::scalar::Scalar;
use crate::statereward::{StateVector, STATE_DIM};

pub const ACTION_COUNT: usize = 5;

/// Layer widths of the full-size network.
pub const FULL_DIMS: [usize; 6] = [STATE_DIM, 2048, 1024, 256, 64, ACTION_COUNT];

/// Small network for fast experiments and CI.
pub const DESK_DIMS: [usize; 4] = [STATE_DIM, 128, 64, ACTION_COUNT];

pub const DEFAULT_GAMMA: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    inputs: usize,
    outputs: usize,
    weights: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![S::zero(); inputs * outputs], bias: vec![S::zero(); outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [S] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [S] {
        &mut self.bias
    }

    fn affine(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, &b)| {
            row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi)
        }));
    }
}

/// Network parameters. Hidden layers use ReLU, the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams<S> {
    layers: Vec<Layer<S>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(PatrolError::InvalidParameter {
            name: "net_dims",
            reason: format!("need at least two positive widths, got {dims:?}"),
        });
    }
    Ok(())
}

impl<S: Scalar> QParams<S> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() })
    }

    /// He-uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        for layer in &mut params.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = S::lit(rng.gen_range(-limit..limit));
            }
        }
        Ok(params)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter tensor in storage order: weights then bias, layer by layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[S]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [S]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{:?}", self.dims()),
                found: format!("{:?}", other.dims()),
            });
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// All layer outputs, post-activation. `acts[0]` is the input.
    fn forward_cached(&self, x: &[S]) -> Vec<Vec<S>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (n, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine(acts.last().expect("input pushed"), &mut out);
            if n != last {
                for v in &mut out {
                    *v = v.max(S::zero());
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Network output for an arbitrary input vector.
    pub fn forward_raw(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.layers[0].inputs {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{} inputs", self.layers[0].inputs),
                found: format!("{}", x.len()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PatrolError::NonFinite("network input"));
        }
        Ok(self.forward_cached(x).pop().expect("at least one layer"))
    }

    /// Q-values of a drone state, in canonical action order.
    pub fn forward(&self, s: &StateVector<S>) -> Result<[S; ACTION_COUNT]> {
        let out = self.forward_raw(s.as_slice())?;
        out.try_into().map_err(|v: Vec<S>| PatrolError::ShapeMismatch {
            expected: format!("{ACTION_COUNT} outputs"),
            found: format!("{}", v.len()),
        })
    }

    /// Accumulates `upstream * dQ[out_idx]/dtheta` into `grads`.
    fn backward_into(&self, acts: &[Vec<S>], out_idx: usize, upstream: S, grads: &mut QParams<S>) {
        let last = self.layers.len() - 1;
        let mut delta = vec![S::zero(); self.layers[last].outputs];
        delta[out_idx] = upstream;
        for n in (0..self.layers.len()).rev() {
            let layer = &self.layers[n];
            let input = &acts[n];
            let g = &mut grads.layers[n];
            for (o, &d) in delta.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                g.bias[o] = g.bias[o] + d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw = *gw + d * xi;
                }
            }
            if n == 0 {
                break;
            }
            let mut prev = vec![S::zero(); layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p = *p + d * w;
                }
            }
            // ReLU derivative, taken as zero at the kink
            for (p, &a) in prev.iter_mut().zip(&acts[n]) {
                if a <= S::zero() {
                    *p = S::zero();
                }
            }
            delta = prev;
        }
    }
}

/// Highest-valued action allowed by `mask`; ties go to the earliest action in
/// canonical order.
pub fn masked_argmax<S: Scalar>(q: &[S], mask: ActionMask) -> Option<Action> {
    mask.iter()
        .filter(|a| a.index() < q.len())
        .fold(None, |best: Option<Action>, a| match best {
            Some(b) if q[b.index()] >= q[a.index()] => Some(b),
            _ => Some(a),
        })
}

/// Frozen copy of the live parameters used to evaluate bootstrap targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParams<S>(QParams<S>);

impl<S: Scalar> TargetParams<S> {
    pub fn from_params(params: &QParams<S>) -> Self {
        Self(params.clone())
    }

    pub fn params(&self) -> &QParams<S> {
        &self.0
    }

    /// Overwrites the target with a copy of `params`.
    pub fn hard_update(&mut self, params: &QParams<S>) -> Result<()> {
        self.0.same_shape(params)?;
        self.0.clone_from(params);
        Ok(())
    }
}

/// Bootstrap target `r + gamma * Q(s', argmax_{u' feasible} Q(s', u'; live); target)`.
pub fn double_dqn_target<S: Scalar>(
    params: &QParams<S>,
    target: &TargetParams<S>,
    t: &Transition<S>,
    gamma: S,
) -> Result<S> {
    let q_live = params.forward(&t.s_next)?;
    let best = masked_argmax(&q_live, t.feasible_next).ok_or(PatrolError::NoFeasibleAction)?;
    let q_target = target.0.forward(&t.s_next)?;
    Ok(t.r + gamma * q_target[best.index()])
}

/// Mean squared Bellman residual over `batch` and its gradient with respect
/// to the live parameters. Targets are treated as constants.
pub fn loss_and_grad<S: Scalar>(
    params: &QParams<S>,
    target: &TargetParams<S>,
    batch: &[Transition<S>],
    gamma: S,
) -> Result<(S, QParams<S>)> {
    if batch.is_empty() {
        return Err(PatrolError::EmptyBatch);
    }
    if !(gamma >= S::zero() && gamma < S::one()) {
        return Err(PatrolError::InvalidParameter { name: "gamma", reason: format!("must lie in [0, 1), got {gamma}") });
    }
    params.same_shape(target.params())?;
    let n = S::from_usize_lossy(batch.len());
    let mut grads = QParams::zeros(&params.dims())?;
    let mut loss = S::zero();
    for t in batch {
        if !t.s.is_finite() || !t.s_next.is_finite() {
            return Err(PatrolError::NonFinite("transition state"));
        }
        let y = double_dqn_target(params, target, t, gamma)?;
        let acts = params.forward_cached(t.s.as_slice());
        let q = acts.last().expect("output layer")[t.u.index()];
        let diff = q - y;
        loss = loss + diff * diff;
        params.backward_into(&acts, t.u.index(), S::lit(2.0) * diff / n, &mut grads);
    }
    Ok((loss / n, grads))
}

/// Loss only, for evaluation and finite-difference checks.
pub fn loss<S: Scalar>(params: &QParams<S>, target: &TargetParams<S>, batch: &[Transition<S>], gamma: S) -> Result<S> {
    if batch.is_empty() {
        return Err(PatrolError::EmptyBatch);
    }
    let mut total = S::zero();
    for t in batch {
        let y = double_dqn_target(params, target, t, gamma)?;
        let q = params.forward(&t.s)?[t.u.index()];
        total = total + (q - y) * (q - y);
    }
    Ok(total / S::from_usize_lossy(batch.len()))
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Adam moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    pub step: u64,
    first: QParams<S>,
    second: QParams<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(dims: &[usize], learning_rate: S) -> Result<Self> {
        Self::with_decays(dims, learning_rate, S::lit(0.9), S::lit(0.999), S::lit(1e-8))
    }

    pub fn with_decays(dims: &[usize], learning_rate: S, beta1: S, beta2: S, epsilon: S) -> Result<Self> {
        if !(learning_rate > S::zero()) {
            return Err(PatrolError::InvalidParameter { name: "learning_rate", reason: "must be positive".into() });
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: QParams::zeros(dims)?,
            second: QParams::zeros(dims)?,
        })
    }

    pub fn moments(&self) -> (&QParams<S>, &QParams<S>) {
        (&self.first, &self.second)
    }

    pub(crate) fn from_parts(
        learning_rate: S,
        beta1: S,
        beta2: S,
        epsilon: S,
        step: u64,
        first: QParams<S>,
        second: QParams<S>,
    ) -> Result<Self> {
        first.same_shape(&second)?;
        Ok(Self { learning_rate, beta1, beta2, epsilon, step, first, second })
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn apply(&mut self, params: &mut QParams<S>, grads: &QParams<S>) -> Result<()> {
        params.same_shape(grads)?;
        params.same_shape(&self.first)?;
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = S::one() - self.beta1.powi(t);
        let c2 = S::one() - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let tensors = params.tensors_mut().zip(grads.tensors()).zip(self.first.tensors_mut().zip(self.second.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
