//! White-box L∞ attacks: FGSM and PGD.
//!
//! All tensors live in normalized input space, so the valid range is [-1, 1]
//! and `epsilon` is measured in those units.

use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy, ModelParams};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const INPUT_MIN: f64 = -1.0;
pub const INPUT_MAX: f64 = 1.0;

/// What an attack needs from a classifier.
pub trait Differentiable {
    fn input_shape(&self) -> [usize; 3];
    fn num_classes(&self) -> usize;
    /// Loss on `label` and its gradient with respect to the input.
    fn loss_and_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)>;
    /// Loss on `label` and the predicted class, without a gradient.
    fn loss_and_prediction(&self, x: &Tensor, label: usize) -> Result<(f64, usize)>;
}

impl Differentiable for ModelParams {
    fn input_shape(&self) -> [usize; 3] {
        ModelParams::input_shape(self)
    }

    fn num_classes(&self) -> usize {
        ModelParams::num_classes(self)
    }

    fn loss_and_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        ModelParams::loss_and_input_grad(self, x, label)
    }

    fn loss_and_prediction(&self, x: &Tensor, label: usize) -> Result<(f64, usize)> {
        let logits = self.logits(x)?;
        Ok((cross_entropy(&logits, label)?, argmax(logits.data())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub epsilon: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub steps: usize,
    /// Start PGD from a uniform sample of the ε-ball instead of the clean input.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            alpha: 0.02,
            steps: 10,
            random_start: true,
            seed: 42,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvExample {
    pub x_adv: Tensor,
    /// `x_adv - x`.
    pub perturbation: Tensor,
    pub original_label: usize,
    pub predicted_label: usize,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Clips every element of `candidate` into `[center - eps, center + eps]`.
pub fn project_linf(candidate: &Tensor, center: &Tensor, epsilon: f64) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    candidate.zip_map(center, |v, c| clip(v, c - epsilon, c + epsilon))
}

#[inline]
fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

fn check_inputs<M: Differentiable + ?Sized>(model: &M, x: &Tensor, label: usize) -> Result<()> {
    if x.shape() != model.input_shape() {
        return Err(Error::shape(&model.input_shape(), x.shape()));
    }
    if label >= model.num_classes() {
        return Err(Error::Label {
            label,
            num_classes: model.num_classes(),
        });
    }
    if let Some(&v) = x.data().iter().find(|v| !(INPUT_MIN..=INPUT_MAX).contains(*v)) {
        return Err(Error::OutOfRange {
            value: v,
            lo: INPUT_MIN,
            hi: INPUT_MAX,
        });
    }
    Ok(())
}

fn finish<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    x_adv: Tensor,
    label: usize,
    loss_before: f64,
) -> Result<AdvExample> {
    let (loss_after, predicted_label) = model.loss_and_prediction(&x_adv, label)?;
    let perturbation = x_adv.sub(x)?;
    Ok(AdvExample {
        x_adv,
        perturbation,
        original_label: label,
        predicted_label,
        loss_before,
        loss_after,
    })
}

/// Fast gradient sign method: `clamp(x + eps * sign(grad_x loss), -1, 1)`.
/// Uses exactly one gradient evaluation.
pub fn fgsm<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    epsilon: f64,
) -> Result<AdvExample> {
    check_inputs(model, x, label)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let (loss_before, grad) = model.loss_and_input_grad(x, label)?;
    let step = grad.sign().scale(epsilon);
    let x_adv = x.zip_map(&step, |v, s| {
        if s == 0.0 {
            v
        } else {
            clip(v + s, INPUT_MIN, INPUT_MAX)
        }
    })?;
    finish(model, x, x_adv, label, loss_before)
}

/// Projected gradient descent on the loss, L∞ ball of radius `cfg.epsilon`
/// around `x`. Uses exactly `cfg.steps` gradient evaluations.
pub fn pgd<M: Differentiable + ?Sized>(
    model: &M,
    x: &Tensor,
    label: usize,
    cfg: &AttackConfig,
) -> Result<AdvExample> {
    check_inputs(model, x, label)?;
    cfg.validate()?;
    let eps = cfg.epsilon;
    let (loss_before, _) = model.loss_and_prediction(x, label)?;

    let mut current = if cfg.random_start && eps > 0.0 {
        let mut rng = RngState::new(cfg.seed);
        let noise = Tensor::uniform(x.shape(), -eps, eps, &mut rng);
        let start = project_linf(&x.add(&noise)?, x, eps)?;
        start.clamp(INPUT_MIN, INPUT_MAX)?
    } else {
        x.clone()
    };

    for _ in 0..cfg.steps {
        let (_, grad) = model.loss_and_input_grad(&current, label)?;
        let next: Vec<f64> = current
            .data()
            .iter()
            .zip(grad.data())
            .zip(x.data())
            .map(|((&v, &g), &c)| {
                if g == 0.0 || eps == 0.0 {
                    return v;
                }
                let moved = if g > 0.0 { v + cfg.alpha } else { v - cfg.alpha };
                clip(clip(moved, c - eps, c + eps), INPUT_MIN, INPUT_MAX)
            })
            .collect();
        current = Tensor::new(x.shape(), next)?;
    }
    finish(model, x, current, label, loss_before)
}
