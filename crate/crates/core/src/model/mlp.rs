//! A small fully-connected network with exact reverse-mode input gradients.
//!
//! The activation is tanh so gradients are defined everywhere; the output
//! head is a log-softmax. Training is plain seeded SGD with momentum,
//! single-threaded and bit-reproducible.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape, InputGrid};
use crate::model::{log_softmax, most_probable_class, DifferentiableModel};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation tag '{other}'"))),
        }
    }

    fn apply(&self, z: f64) -> f64 {
        z.tanh()
    }

    /// Derivative expressed through the activation value a = act(z).
    fn derivative_from_output(&self, a: f64) -> f64 {
        1.0 - a * a
    }
}

/// Dense layer weights, row-major: `weights[o * n_in + i]`.
#[derive(Debug, Clone)]
struct DenseLayer {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    /// d(loss)/d(input) given d(loss)/d(output of this layer, pre-activation).
    fn backward_input(&self, delta_out: &[f64], delta_in: &mut Vec<f64>) {
        delta_in.clear();
        delta_in.resize(self.n_in, 0.0);
        for o in 0..self.n_out {
            let d = delta_out[o];
            if d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            for (di, w) in delta_in.iter_mut().zip(row) {
                *di += d * w;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TinyMlp {
    input_shape: GridShape,
    widths: Vec<usize>,
    layers: Vec<DenseLayer>,
    activation: Activation,
    seed: u64,
}

impl TinyMlp {
    /// Fresh network with small seeded uniform init. `widths` runs from the
    /// flattened input size to the class count, e.g. `[256, 32, 2]`.
    pub fn new(input_shape: GridShape, widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("TinyMlp needs at least input and output widths".into()));
        }
        if widths[0] != input_shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("first width {} to match input {}", widths[0], input_shape),
                got: format!("{}", widths[0]),
            });
        }
        if *widths.last().unwrap() < 2 {
            return Err(Error::Config("TinyMlp needs at least 2 classes".into()));
        }
        let mut rng = RngStream::new(seed, 0);
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let scale = (1.0 / n_in as f64).sqrt();
            let weights = (0..n_in * n_out)
                .map(|_| (rng.uniform() * 2.0 - 1.0) * scale)
                .collect();
            let biases = vec![0.0; n_out];
            layers.push(DenseLayer { n_in, n_out, weights, biases });
        }
        Ok(Self { input_shape, widths: widths.to_vec(), layers, activation, seed })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Flat parameter view in checkpoint order (per layer: weights then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} parameters"),
                got: format!("{}", params.len()),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let (wlen, blen) = (l.weights.len(), l.biases.len());
            l.weights.copy_from_slice(&params[off..off + wlen]);
            off += wlen;
            l.biases.copy_from_slice(&params[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    /// Activations per layer: `acts[0]` is the flattened input, `acts[l+1]`
    /// the post-activation of hidden layer l (logits for the last layer).
    fn forward_trace(&self, x: &Grid) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.values().to_vec());
        let n_layers = self.layers.len();
        let mut pre = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            layer.forward(acts.last().unwrap(), &mut pre);
            let post = if li + 1 == n_layers {
                pre.clone()
            } else {
                pre.iter().map(|&z| self.activation.apply(z)).collect()
            };
            acts.push(post);
        }
        acts
    }
}

impl DifferentiableModel for TinyMlp {
    fn input_shape(&self) -> GridShape {
        self.input_shape
    }

    fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn logits(&self, x: &Grid) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        Ok(self.forward_trace(x).pop().unwrap())
    }

    fn grad_logit(&self, x: &Grid, class: usize) -> Result<Grid> {
        self.check_shape(x)?;
        self.check_class(class)?;
        let acts = self.forward_trace(x);
        let n_layers = self.layers.len();
        // Seed with d(logit_class)/d(pre-activation of last layer).
        let mut delta: Vec<f64> = vec![0.0; self.num_classes()];
        delta[class] = 1.0;
        let mut delta_in = Vec::new();
        for li in (0..n_layers).rev() {
            self.layers[li].backward_input(&delta, &mut delta_in);
            if li > 0 {
                // Convert to pre-activation gradient of the layer below.
                for (d, &a) in delta_in.iter_mut().zip(&acts[li]) {
                    *d *= self.activation.derivative_from_output(a);
                }
            }
            std::mem::swap(&mut delta, &mut delta_in);
        }
        Grid::from_vec(self.input_shape, delta)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.05, momentum: 0.9, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// In-place seeded SGD on the cross-entropy loss. Deterministic given the
/// config seed; diverging loss (NaN) aborts with the epoch index.
pub fn train_tiny(
    model: &mut TinyMlp,
    dataset: &[(InputGrid, usize)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut shuffle_rng = RngStream::new(cfg.seed, u64::MAX);
    let mut velocity: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len() + l.biases.len()])
        .collect();
    let mut last_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let (x, label) = &dataset[idx];
            let acts = model.forward_trace(x.as_grid());
            let logits = acts.last().unwrap();
            let log_probs = log_softmax(logits);
            epoch_loss -= log_probs[*label];

            // d(nll)/d(logit_j) = p_j − δ_{j,label}
            let mut delta: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
            delta[*label] -= 1.0;

            let n_layers = model.layers.len();
            let mut delta_in = Vec::new();
            for li in (0..n_layers).rev() {
                // Parameter gradients for this layer, folded into the update.
                {
                    let layer = &model.layers[li];
                    let input = &acts[li];
                    let vel = &mut velocity[li];
                    for o in 0..layer.n_out {
                        let d = delta[o];
                        for i in 0..layer.n_in {
                            let vi = &mut vel[o * layer.n_in + i];
                            *vi = cfg.momentum * *vi - cfg.learning_rate * d * input[i];
                        }
                        let vb = &mut vel[layer.weights.len() + o];
                        *vb = cfg.momentum * *vb - cfg.learning_rate * d;
                    }
                }
                model.layers[li].backward_input(&delta, &mut delta_in);
                if li > 0 {
                    for (d, &a) in delta_in.iter_mut().zip(&acts[li]) {
                        *d *= model.activation.derivative_from_output(a);
                    }
                }
                std::mem::swap(&mut delta, &mut delta_in);
                let layer = &mut model.layers[li];
                let vel = &velocity[li];
                let wlen = layer.weights.len();
                for (w, v) in layer.weights.iter_mut().zip(&vel[..wlen]) {
                    *w += v;
                }
                for (b, v) in layer.biases.iter_mut().zip(&vel[wlen..]) {
                    *b += v;
                }
            }
        }
        last_loss = epoch_loss / dataset.len() as f64;
        if !last_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }

    let correct = dataset
        .iter()
        .filter(|(x, label)| {
            let out = model.forward(x.as_grid()).expect("forward");
            most_probable_class(&out) == *label
        })
        .count();
    Ok(TrainReport {
        epochs_run: cfg.epochs,
        final_loss: last_loss,
        train_accuracy: correct as f64 / dataset.len() as f64,
    })
}

/// Train accuracy of a model on a labeled set.
pub fn accuracy(model: &TinyMlp, dataset: &[(InputGrid, usize)]) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let correct = dataset
        .iter()
        .filter(|(x, label)| {
            let out = model.forward(x.as_grid()).expect("forward");
            most_probable_class(&out) == *label
        })
        .count();
    correct as f64 / dataset.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_difference_error, Target};

    fn probe_input(shape: GridShape, seed: u64) -> Grid {
        let mut rng = RngStream::new(seed, 1);
        Grid::from_fn(shape, |_| rng.uniform())
    }

    #[test]
    fn forward_is_valid_log_softmax() {
        let shape = GridShape::new(2, 2, 1);
        let mlp = TinyMlp::new(shape, &[4, 5, 3], Activation::Tanh, 3).unwrap();
        let out = mlp.forward(&probe_input(shape, 9)).unwrap();
        let total: f64 = out.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let shape = GridShape::new(2, 3, 1);
        let mlp = TinyMlp::new(shape, &[6, 7, 4, 3], Activation::Tanh, 17).unwrap();
        for probe in 0..5 {
            let x = probe_input(shape, 100 + probe);
            for target in [Target::LogProb(0), Target::LogProb(2), Target::Score(1)] {
                let err = finite_difference_error(&mlp, &x, target, 1e-4).unwrap();
                assert!(err < 1e-3, "probe {probe} {target:?}: rel err {err}");
            }
        }
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let shape = GridShape::new(1, 2, 1);
        let mut mlp = TinyMlp::new(shape, &[2, 3, 2], Activation::Tanh, 5).unwrap();
        let before = mlp.parameters();
        let data = vec![(InputGrid::from_vec(shape, vec![0.2, 0.8]).unwrap(), 0)];
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        train_tiny(&mut mlp, &data, &cfg).unwrap();
        assert_eq!(before, mlp.parameters());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let shape = GridShape::new(1, 4, 1);
        let data: Vec<(InputGrid, usize)> = (0..16)
            .map(|i| {
                let mut rng = RngStream::new(42, i);
                let v: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
                let label = usize::from(v[0] + v[1] > v[2] + v[3]);
                (InputGrid::from_vec(shape, v).unwrap(), label)
            })
            .collect();
        let cfg = TrainConfig { epochs: 20, ..Default::default() };
        let mut a = TinyMlp::new(shape, &[4, 6, 2], Activation::Tanh, 1).unwrap();
        let mut b = TinyMlp::new(shape, &[4, 6, 2], Activation::Tanh, 1).unwrap();
        train_tiny(&mut a, &data, &cfg).unwrap();
        train_tiny(&mut b, &data, &cfg).unwrap();
        assert_eq!(a.parameters(), b.parameters());
    }

    #[test]
    fn learns_a_linearly_separable_set() {
        let shape = GridShape::new(1, 2, 1);
        let mut data = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 39.0;
            data.push((InputGrid::from_vec(shape, vec![t, 0.9]).unwrap(), 1));
            data.push((InputGrid::from_vec(shape, vec![t, 0.1]).unwrap(), 0));
        }
        let mut mlp = TinyMlp::new(shape, &[2, 8, 2], Activation::Tanh, 7).unwrap();
        let cfg = TrainConfig { epochs: 100, learning_rate: 0.1, momentum: 0.9, seed: 3 };
        let report = train_tiny(&mut mlp, &data, &cfg).unwrap();
        assert!(report.train_accuracy >= 0.99, "accuracy {}", report.train_accuracy);
    }
}
