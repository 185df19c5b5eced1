use crate::error::Result;
use crate::grid::{Grid, GridShape};
use crate::model::DifferentiableModel;

/// Two-class linear scorer: logits are `[0, w·x + b]`. The gradient of the
/// class-1 logit is exactly `w` everywhere, which makes it the analytic
/// oracle for deletion/insertion curves.
#[derive(Debug, Clone)]
pub struct LinearModel {
    weights: Grid,
    bias: f64,
}

impl LinearModel {
    pub fn new(weights: Grid, bias: f64) -> Self {
        Self { weights, bias }
    }

    pub fn weights(&self) -> &Grid {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Pre-softmax class-1 score, `w·x + b`.
    pub fn score(&self, x: &Grid) -> f64 {
        self.weights.dot(x) + self.bias
    }
}

impl DifferentiableModel for LinearModel {
    fn input_shape(&self) -> GridShape {
        self.weights.shape()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn logits(&self, x: &Grid) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        Ok(vec![0.0, self.score(x)])
    }

    fn grad_logit(&self, x: &Grid, class: usize) -> Result<Grid> {
        self.check_shape(x)?;
        self.check_class(class)?;
        Ok(match class {
            0 => Grid::zeros(self.weights.shape()),
            _ => self.weights.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_difference_error, Target};

    #[test]
    fn score_gradient_is_weights() {
        let shape = GridShape::new(2, 2, 1);
        let w = Grid::from_vec(shape, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let model = LinearModel::new(w.clone(), 0.25);
        let x = Grid::from_vec(shape, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let g = model.grad_logit(&x, 1).unwrap();
        assert_eq!(g, w);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = GridShape::new(2, 2, 1);
        let w = Grid::from_vec(shape, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let model = LinearModel::new(w, 0.25);
        let x = Grid::from_vec(shape, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let err = finite_difference_error(&model, &x, Target::LogProb(1), 1e-4).unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }
}
