//! Desk-scale differentiable classifiers: analytic sinusoid fields with known
//! spectra, linear models, and a tiny MLP with exact reverse-mode input
//! gradients.

mod analytic;
mod linear;
mod mlp;
pub mod textures;

pub use analytic::{AnalyticField, Component, PointMassSpectrum};
pub use linear::LinearModel;
pub use mlp::{accuracy, train_tiny, Activation, TinyMlp, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape};

/// Log-class-probabilities of one forward pass. Always a valid log-softmax:
/// `logsumexp(log_probs) == 0` within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub log_probs: Vec<f64>,
}

impl ModelOutput {
    pub fn from_logits(logits: &[f64]) -> ModelOutput {
        ModelOutput { log_probs: log_softmax(logits) }
    }

    pub fn num_classes(&self) -> usize {
        self.log_probs.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    /// Shannon entropy −Σ p ln p, in nats. Lies in [0, ln k].
    pub fn entropy(&self) -> f64 {
        self.log_probs
            .iter()
            .map(|&lp| {
                let p = lp.exp();
                if p > 0.0 {
                    -p * lp
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Which scalar output of the model an explainer differentiates.
///
/// Explanations follow the convention of explaining the most probable class
/// of the unperturbed input; the pre-softmax score surface is what the
/// analytic oracles use, where closed forms stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// log p(class|x) for the most probable class of the base input.
    LogProbTopClass,
    /// log p(class|x) for a fixed class.
    LogProb(usize),
    /// Pre-softmax score (logit) of a fixed class.
    Score(usize),
}

/// A classifier with exact input gradients. Implementations are immutable
/// after construction; `forward`/gradient calls are read-only and safe to run
/// from many workers concurrently.
pub trait DifferentiableModel: Send + Sync {
    fn input_shape(&self) -> GridShape;

    fn num_classes(&self) -> usize;

    /// Raw class scores (logits), before the log-softmax.
    fn logits(&self, x: &Grid) -> Result<Vec<f64>>;

    /// Exact gradient of `logits[class]` with respect to every pixel.
    fn grad_logit(&self, x: &Grid, class: usize) -> Result<Grid>;

    fn forward(&self, x: &Grid) -> Result<ModelOutput> {
        self.check_shape(x)?;
        let logits = self.logits(x)?;
        for (i, l) in logits.iter().enumerate() {
            if !l.is_finite() {
                return Err(Error::NonFinite { location: format!("logit {i}") });
            }
        }
        Ok(ModelOutput::from_logits(&logits))
    }

    /// Exact gradient of log p(class|x) with respect to every pixel.
    ///
    /// Chain rule through the log-softmax: d log p_c / d logit_j = δ_cj − p_j.
    fn grad_log_prob(&self, x: &Grid, class: usize) -> Result<Grid> {
        self.check_shape(x)?;
        self.check_class(class)?;
        let out = self.forward(x)?;
        let probs = out.probs();
        let mut grad = Grid::zeros(self.input_shape());
        for j in 0..self.num_classes() {
            let coeff = if j == class { 1.0 - probs[j] } else { -probs[j] };
            if coeff == 0.0 {
                continue;
            }
            let gj = self.grad_logit(x, j)?;
            for (g, v) in grad.values_mut().iter_mut().zip(gj.values()) {
                *g += coeff * v;
            }
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite { location: format!("grad_log_prob class {class}") });
        }
        Ok(grad)
    }

    fn value(&self, x: &Grid, target: Target) -> Result<f64> {
        match target {
            Target::LogProbTopClass => {
                let out = self.forward(x)?;
                Ok(out.log_probs[most_probable_class(&out)])
            }
            Target::LogProb(c) => {
                self.check_class(c)?;
                Ok(self.forward(x)?.log_probs[c])
            }
            Target::Score(c) => {
                self.check_class(c)?;
                self.check_shape(x)?;
                Ok(self.logits(x)?[c])
            }
        }
    }

    fn grad(&self, x: &Grid, target: Target) -> Result<Grid> {
        match target {
            Target::LogProbTopClass => {
                let out = self.forward(x)?;
                self.grad_log_prob(x, most_probable_class(&out))
            }
            Target::LogProb(c) => self.grad_log_prob(x, c),
            Target::Score(c) => {
                self.check_shape(x)?;
                self.check_class(c)?;
                let g = self.grad_logit(x, c)?;
                if !g.all_finite() {
                    return Err(Error::NonFinite { location: format!("grad_logit class {c}") });
                }
                Ok(g)
            }
        }
    }

    fn check_shape(&self, x: &Grid) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: self.input_shape().to_string(),
                got: x.shape().to_string(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::Config(format!(
                "class index {class} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Entropy of the predictive distribution at `x`, in [0, ln k].
pub fn predictive_entropy(model: &dyn DifferentiableModel, x: &Grid) -> Result<f64> {
    Ok(model.forward(x)?.entropy())
}

/// Argmax class; ties broken by lowest index for determinism.
pub fn most_probable_class(output: &ModelOutput) -> usize {
    let mut best = 0;
    for (i, &lp) in output.log_probs.iter().enumerate() {
        if lp > output.log_probs[best] {
            best = i;
        }
    }
    best
}

/// Compares an exact gradient against central finite differences (step h)
/// at one probe point. Returns the worst relative error over pixels with a
/// resolvable denominator.
pub fn finite_difference_error(
    model: &dyn DifferentiableModel,
    x: &Grid,
    target: Target,
    h: f64,
) -> Result<f64> {
    let analytic = model.grad(x, target)?;
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.values()[i];
        xp.values_mut()[i] = orig + h;
        let fp = model.value(&xp, target)?;
        xp.values_mut()[i] = orig - h;
        let fm = model.value(&xp, target)?;
        xp.values_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let denom = analytic.values()[i].abs().max(fd.abs());
        if denom > 1e-6 {
            worst = worst.max((analytic.values()[i] - fd).abs() / denom);
        } else {
            worst = worst.max((analytic.values()[i] - fd).abs());
        }
    }
    Ok(worst)
}
