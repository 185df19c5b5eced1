//! Analytic sinusoid fields: classifiers whose per-pixel behavior along the
//! pixel-value axis is a known sum of tones, so gradients and spectra have
//! closed forms.

use crate::error::Result;
use crate::grid::{Grid, GridShape};
use crate::model::DifferentiableModel;

/// One real cosine component `a · cos(2πωv + φ)` of a pixel's response,
/// with `v` the pixel value and `ω` in cycles per unit pixel value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Component {
    pub fn tone(frequency: f64) -> Self {
        Self { amplitude: 1.0, frequency, phase: 0.0 }
    }

    pub fn value(&self, v: f64) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * v + self.phase).cos()
    }

    pub fn derivative(&self, v: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        -self.amplitude * w * (w * v + self.phase).sin()
    }
}

/// Exact two-sided PSD of a pixel's response: point masses `a²/4` at `±ω`
/// per cosine component, representable on any frequency grid.
#[derive(Debug, Clone, Default)]
pub struct PointMassSpectrum {
    /// (frequency, mass) pairs; symmetric about 0 for real fields.
    pub masses: Vec<(f64, f64)>,
}

impl PointMassSpectrum {
    pub fn total(&self) -> f64 {
        self.masses.iter().map(|(_, m)| m).sum()
    }

    /// Folds onto non-negative frequencies (two-sided-folded convention:
    /// masses at ±ω accumulate at ω ≥ 0).
    pub fn folded(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(w, m) in &self.masses {
            let wa = w.abs();
            match out.iter_mut().find(|(fw, _)| (*fw - wa).abs() < 1e-12) {
                Some(entry) => entry.1 += m,
                None => out.push((wa, m)),
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out
    }
}

/// A classifier whose logit surface is a sum of per-pixel cosine components:
/// `logit_c(x) = gain_c · Σ_i Σ_k a_k cos(2πω_k x_i + φ_k)`.
///
/// Per pixel, the exact gradient is the analytic derivative and the exact
/// PSD is a sum of Dirac masses, which is what the oracle battery verifies
/// Monte Carlo estimates against.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    shape: GridShape,
    components: Vec<Vec<Component>>,
    class_gains: Vec<f64>,
}

impl AnalyticField {
    /// Same component list at every pixel; two classes with gains [0, 1]
    /// (class 1's logit is the raw field sum).
    pub fn uniform(shape: GridShape, components: Vec<Component>) -> Self {
        let n = shape.len();
        Self { shape, components: vec![components; n], class_gains: vec![0.0, 1.0] }
    }

    /// Single unit-amplitude, zero-phase tone at `omega0` on every pixel.
    pub fn single_tone(shape: GridShape, omega0: f64) -> Self {
        Self::uniform(shape, vec![Component::tone(omega0)])
    }

    /// Distinct component lists per pixel (Rashomon-style constructions).
    pub fn per_pixel(shape: GridShape, components: Vec<Vec<Component>>) -> Self {
        assert_eq!(components.len(), shape.len());
        Self { shape, components, class_gains: vec![0.0, 1.0] }
    }

    pub fn with_class_gains(mut self, gains: Vec<f64>) -> Self {
        assert!(gains.len() >= 2);
        self.class_gains = gains;
        self
    }

    pub fn components(&self, pixel: usize) -> &[Component] {
        &self.components[pixel]
    }

    /// Pixel response before class mixing.
    pub fn pixel_value(&self, pixel: usize, v: f64) -> f64 {
        self.components[pixel].iter().map(|c| c.value(v)).sum()
    }

    pub fn pixel_derivative(&self, pixel: usize, v: f64) -> f64 {
        self.components[pixel].iter().map(|c| c.derivative(v)).sum()
    }

    fn field_sum(&self, x: &Grid) -> f64 {
        x.values()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.pixel_value(i, v))
            .sum()
    }

    /// Exact per-pixel PSD: masses `a²/4` at `±ω` for every component.
    pub fn pixel_psd(&self, pixel: usize) -> PointMassSpectrum {
        let mut masses = Vec::new();
        for c in &self.components[pixel] {
            let m = c.amplitude * c.amplitude / 4.0;
            masses.push((c.frequency, m));
            masses.push((-c.frequency, m));
        }
        PointMassSpectrum { masses }
    }

    /// Image-level PSD: sum of per-pixel spectra.
    pub fn aggregate_psd(&self) -> PointMassSpectrum {
        let mut all = PointMassSpectrum::default();
        for p in 0..self.shape.len() {
            all.masses.extend(self.pixel_psd(p).masses);
        }
        all
    }
}

impl DifferentiableModel for AnalyticField {
    fn input_shape(&self) -> GridShape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.class_gains.len()
    }

    fn logits(&self, x: &Grid) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        let v = self.field_sum(x);
        Ok(self.class_gains.iter().map(|g| g * v).collect())
    }

    fn grad_logit(&self, x: &Grid, class: usize) -> Result<Grid> {
        self.check_shape(x)?;
        self.check_class(class)?;
        let gain = self.class_gains[class];
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| gain * self.pixel_derivative(i, v))
            .collect();
        Grid::from_vec(self.shape, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_difference_error, Target};
    use std::f64::consts::PI;

    #[test]
    fn cos_at_zero_is_one() {
        let f = AnalyticField::single_tone(GridShape::new(1, 1, 1), 1.0);
        assert!((f.pixel_value(0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_is_analytic_derivative() {
        // d/dx cos(2πω₀x) = −2πω₀ sin(2πω₀x)
        let omega0 = 2.0;
        let f = AnalyticField::single_tone(GridShape::new(1, 2, 1), omega0);
        let x = Grid::from_vec(GridShape::new(1, 2, 1), vec![0.13, 0.77]).unwrap();
        let g = f.grad_logit(&x, 1).unwrap();
        for (i, &xv) in x.values().iter().enumerate() {
            let expect = -2.0 * PI * omega0 * (2.0 * PI * omega0 * xv).sin();
            assert!((g.values()[i] - expect).abs() < 1e-12);
        }
        let err = finite_difference_error(&f, &x, Target::Score(1), 1e-4).unwrap();
        assert!(err < 1e-3, "rel err {err}");
    }

    #[test]
    fn psd_masses_scale_quadratically() {
        let shape = GridShape::new(1, 1, 1);
        let one = AnalyticField::uniform(
            shape,
            vec![Component { amplitude: 1.0, frequency: 1.0, phase: 0.0 }],
        );
        let two = AnalyticField::uniform(
            shape,
            vec![Component { amplitude: 2.0, frequency: 1.0, phase: 0.0 }],
        );
        let m1 = one.pixel_psd(0);
        let m2 = two.pixel_psd(0);
        // masses at ±1, amplitude 2a → mass ×4
        assert_eq!(m1.masses.len(), 2);
        assert!((m1.masses[0].1 - 0.25).abs() < 1e-15);
        assert!((m2.masses[0].1 - 1.0).abs() < 1e-15);
        let folded = m1.folded();
        assert_eq!(folded.len(), 1);
        assert!((folded[0].0 - 1.0).abs() < 1e-15);
        assert!((folded[0].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_tone_psd_has_two_mass_pairs() {
        let f = AnalyticField::uniform(
            GridShape::new(1, 1, 1),
            vec![Component::tone(1.0), Component::tone(2.0)],
        );
        assert_eq!(f.pixel_psd(0).masses.len(), 4);
    }
}
