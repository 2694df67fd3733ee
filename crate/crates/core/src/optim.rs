//! Parameter update rules.
//!
//! All rules use the descent convention `w ← w − η·∂L/∂w`. For a single
//! linear unit under squared error `½(t−o)²` the gradient is `−(t−o)·x`, so
//! plain SGD is exactly the perceptron-style increment `w ← w + η(t−o)x`.
//!
//! Every step first checks that all gradients are finite (returning
//! [`Error::Diverged`] and leaving the parameters untouched otherwise), then
//! updates, then zeroes the gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Parameter;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.01,
            momentum: 0.9,
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

impl HyperParams {
    pub fn with_lr(learning_rate: f64) -> Self {
        HyperParams {
            learning_rate,
            ..Default::default()
        }
    }

    /// `η ≥ 0` (zero is allowed as a no-op), `0 ≤ μ < 1`, `0 < ρ < 1`, `ε > 0`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyper(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho {} outside (0, 1)", self.rho));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps {} must be > 0", self.eps));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adadelta,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adadelta => "adadelta",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            other => Err(Error::InvalidHyper(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Per-parameter auxiliary buffers, each shaped like its parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
}

impl OptimizerState {
    pub fn for_params(params: &[Parameter]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape().clone())).collect();
        OptimizerState {
            velocity: zeros(),
            sq_grad: zeros(),
            sq_update: zeros(),
        }
    }

    fn check(&self, params: &[Parameter]) -> Result<()> {
        for buffers in [&self.velocity, &self.sq_grad, &self.sq_update] {
            if buffers.len() != params.len()
                || buffers.iter().zip(params).any(|(b, p)| b.shape() != p.value.shape())
            {
                return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
            }
        }
        Ok(())
    }
}

fn check_grads(params: &[Parameter]) -> Result<()> {
    match params.iter().find(|p| !p.grad.is_finite()) {
        Some(p) => Err(Error::Diverged(p.name.clone())),
        None => Ok(()),
    }
}

pub fn sgd_step(params: &mut [Parameter], hp: &HyperParams) -> Result<()> {
    check_grads(params)?;
    let lr = hp.learning_rate;
    for p in params.iter_mut() {
        for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *w -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}

/// `v ← μ·v − η·g; w ← w + v`.
pub fn momentum_step(params: &mut [Parameter], state: &mut OptimizerState, hp: &HyperParams) -> Result<()> {
    check_grads(params)?;
    state.check(params)?;
    let (lr, mu) = (hp.learning_rate, hp.momentum);
    for (p, v) in params.iter_mut().zip(state.velocity.iter_mut()) {
        for ((w, &g), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
            *v = mu * *v - lr * g;
            *w += *v;
        }
        p.zero_grad();
    }
    Ok(())
}

/// Adadelta with running averages of squared gradients and squared updates:
///
/// ```text
/// E[g²]  ← ρ·E[g²] + (1−ρ)·g²
/// Δw     = −sqrt(E[Δw²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δw²] ← ρ·E[Δw²] + (1−ρ)·Δw²
/// w      ← w + Δw
/// ```
///
/// The learning rate is not used.
pub fn adadelta_step(params: &mut [Parameter], state: &mut OptimizerState, hp: &HyperParams) -> Result<()> {
    check_grads(params)?;
    state.check(params)?;
    let (rho, eps) = (hp.rho, hp.eps);
    for ((p, eg), ed) in params
        .iter_mut()
        .zip(state.sq_grad.iter_mut())
        .zip(state.sq_update.iter_mut())
    {
        let it = p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(eg.data_mut())
            .zip(ed.data_mut());
        for (((w, &g), eg), ed) in it {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let dw = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * dw * dw;
            *w += dw;
        }
        p.zero_grad();
    }
    Ok(())
}

/// An update rule bound to the buffers for one parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Parameter]) -> Self {
        Optimizer {
            kind,
            state: OptimizerState::for_params(params),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(&mut self, params: &mut [Parameter], hp: &HyperParams) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, hp),
            OptimizerKind::Momentum => momentum_step(params, &mut self.state, hp),
            OptimizerKind::Adadelta => adadelta_step(params, &mut self.state, hp),
        }
    }
}
