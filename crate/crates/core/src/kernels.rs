//! Perturbation kernels `p(x̃|x,σ)`: sampling, combination rules, and the
//! analytic Fourier/PSD forms their spectral analysis rests on.
//!
//! All spectral forms are 1-D and per pixel, with the origin recentered at
//! the sample being explained: `p̂(ω) = E[exp(i2πω(x̃ᵢ−xᵢ))]` is the
//! characteristic function of the pixel's offset, so `|p̂(ω)| ≤ 1` always.
//! `S_√p` is the PSD of the square root of the kernel, normalized to 1 at
//! ω = 0; every consumer of these forms (similarity scores, band-pass
//! shapes) is ratio- or argmax-based, so the dropped constant is irrelevant.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape};
use crate::rng::RngStream;
use num_complex::Complex64;

/// Low-resolution boolean-mask distribution for comb kernels. The mask is
/// `rows × cols` with `rows ≪ height`, `cols ≪ width`; a mask value of 1
/// replaces the covered pixels with the baseline.
#[derive(Debug, Clone)]
pub enum MaskSpec {
    /// Independent Bernoulli cells with per-cell success probabilities.
    Bernoulli { rows: usize, cols: usize, probs: Vec<f64> },
    /// One-hot categorical over cells; the estimator sweeps every cell
    /// exactly once per epoch, in row-major order.
    OneHot { rows: usize, cols: usize },
}

impl MaskSpec {
    pub fn cells(&self) -> usize {
        match self {
            MaskSpec::Bernoulli { rows, cols, .. } | MaskSpec::OneHot { rows, cols } => rows * cols,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            MaskSpec::Bernoulli { rows, cols, .. } | MaskSpec::OneHot { rows, cols } => (*rows, *cols),
        }
    }

    /// Probability that a given cell is active in one draw.
    pub fn cell_prob(&self, cell: usize) -> f64 {
        match self {
            MaskSpec::Bernoulli { probs, .. } => probs[cell],
            MaskSpec::OneHot { rows, cols } => 1.0 / (*rows * *cols) as f64,
        }
    }

    /// Low-res mask for one sample. Bernoulli cells consume the stream;
    /// one-hot picks cell `sample_index mod cells` so an epoch is exhaustive.
    pub fn draw(&self, sample_index: u64, rng: &mut RngStream) -> Vec<f64> {
        match self {
            MaskSpec::Bernoulli { probs, .. } => probs
                .iter()
                .map(|&h| if rng.bernoulli(h) { 1.0 } else { 0.0 })
                .collect(),
            MaskSpec::OneHot { rows, cols } => {
                let n = rows * cols;
                let hot = (sample_index % n as u64) as usize;
                (0..n).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    fn validate(&self, shape: GridShape) -> Result<()> {
        let (rows, cols) = self.dims();
        if rows == 0 || cols == 0 {
            return Err(Error::Config("mask needs at least one cell".into()));
        }
        if rows > shape.height || cols > shape.width {
            return Err(Error::Config(format!(
                "mask {rows}x{cols} exceeds input {}x{}",
                shape.height, shape.width
            )));
        }
        if let MaskSpec::Bernoulli { probs, .. } = self {
            if probs.len() != rows * cols {
                return Err(Error::Config(format!(
                    "expected {} cell probabilities, got {}",
                    rows * cols,
                    probs.len()
                )));
            }
            for &h in probs {
                if !(0.0..=1.0).contains(&h) {
                    return Err(Error::Config(format!("cell probability {h} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

/// Nearest-neighbor upsampling of a low-res cell mask to one value per
/// spatial site. No random shifts: this is the simplified comb the spectral
/// analysis covers.
pub fn upsample_mask(mask: &[f64], rows: usize, cols: usize, shape: GridShape) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.pixels());
    for y in 0..shape.height {
        let my = y * rows / shape.height;
        for x in 0..shape.width {
            let mx = x * cols / shape.width;
            out.push(mask[my * cols + mx]);
        }
    }
    out
}

/// Smooth shifted-and-upsampled mask in the style of the original RISE
/// sampler: bilinear upsampling with a random sub-cell shift. Provided only
/// as an evaluation baseline; it is outside the simplified comb form the
/// spectral analysis covers.
pub fn rise_baseline_mask(
    mask: &[f64],
    rows: usize,
    cols: usize,
    shape: GridShape,
    rng: &mut RngStream,
) -> Vec<f64> {
    let cell_h = shape.height as f64 / rows as f64;
    let cell_w = shape.width as f64 / cols as f64;
    let shift_y = rng.uniform() * cell_h;
    let shift_x = rng.uniform() * cell_w;
    let sample = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            0.0
        } else {
            mask[r as usize * cols + c as usize]
        }
    };
    let mut out = Vec::with_capacity(shape.pixels());
    for y in 0..shape.height {
        for x in 0..shape.width {
            let fy = (y as f64 + shift_y) / cell_h - 0.5;
            let fx = (x as f64 + shift_x) / cell_w - 0.5;
            let (r0, c0) = (fy.floor(), fx.floor());
            let (ty, tx) = (fy - r0, fx - c0);
            let v = sample(r0 as i64, c0 as i64) * (1.0 - ty) * (1.0 - tx)
                + sample(r0 as i64 + 1, c0 as i64) * ty * (1.0 - tx)
                + sample(r0 as i64, c0 as i64 + 1) * (1.0 - ty) * tx
                + sample(r0 as i64 + 1, c0 as i64 + 1) * ty * tx;
            out.push(v);
        }
    }
    out
}

/// A perturbation distribution. σ values are interpreted in the caller's
/// resolved units (configs carry σ relative to the entropy cutoff and
/// translate at load time).
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// Point mass at the sample: no perturbation.
    Dirac,
    /// Independent Gaussian noise with standard deviation σ per pixel.
    Gaussian { sigma: f64 },
    /// Uniform draw along the segment from the sample toward the baseline,
    /// scaled by σ ∈ (0,1]: x̃ᵢ = xᵢ + t·σ(sᵢ−xᵢ), t ~ Unif(0,1).
    Rect { sigma: f64, baseline: Grid },
    /// Low-res boolean mask replaces covered pixels with the baseline.
    DiracComb { mask: MaskSpec, baseline: Grid },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Dirac => "dirac",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Rect { .. } => "rect",
            KernelSpec::DiracComb { .. } => "dirac-comb",
        }
    }

    pub fn validate(&self, shape: GridShape) -> Result<()> {
        match self {
            KernelSpec::Dirac => Ok(()),
            KernelSpec::Gaussian { sigma } => {
                if *sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("gaussian sigma must be positive, got {sigma}")))
                }
            }
            KernelSpec::Rect { sigma, baseline } => {
                if !(*sigma > 0.0 && *sigma <= 1.0) {
                    return Err(Error::Config(format!("rect sigma must be in (0,1], got {sigma}")));
                }
                if baseline.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        expected: shape.to_string(),
                        got: baseline.shape().to_string(),
                    });
                }
                Ok(())
            }
            KernelSpec::DiracComb { mask, baseline } => {
                if baseline.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        expected: shape.to_string(),
                        got: baseline.shape().to_string(),
                    });
                }
                mask.validate(shape)
            }
        }
    }

    /// Scalar kernel of one pixel's offset x̃ᵢ−xᵢ, given the sample values.
    pub fn pixel_kernel(&self, x: &Grid, pixel: usize) -> PixelKernel {
        match self {
            KernelSpec::Dirac => PixelKernel::Dirac,
            KernelSpec::Gaussian { sigma } => PixelKernel::Gaussian { sigma: *sigma },
            KernelSpec::Rect { sigma, baseline } => {
                let span = sigma * (baseline.values()[pixel] - x.values()[pixel]);
                PixelKernel::Rect { span }
            }
            KernelSpec::DiracComb { mask, baseline } => {
                let shape = x.shape();
                let site = pixel / shape.channels;
                let (rows, cols) = mask.dims();
                let my = (site / shape.width) * rows / shape.height;
                let mx = (site % shape.width) * cols / shape.width;
                PixelKernel::TwoPoint {
                    p: mask.cell_prob(my * cols + mx),
                    displacement: baseline.values()[pixel] - x.values()[pixel],
                }
            }
        }
    }
}

/// How a kernel draw combines with the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinationRule {
    /// x̃ = x + σε
    Additive,
    /// x̃ = (1−σ)x + σε
    Convex,
    /// x̃ = (1−σ)x + σs (toward a baseline)
    Damping,
}

impl CombinationRule {
    pub fn name(&self) -> &'static str {
        match self {
            CombinationRule::Additive => "additive",
            CombinationRule::Convex => "convex",
            CombinationRule::Damping => "damping",
        }
    }
}

fn rule_error(kernel: &KernelSpec, rule: CombinationRule) -> Error {
    Error::IncompatibleRule { kernel: kernel.name().into(), rule: rule.name().into() }
}

/// Checks kernel/rule compatibility: Rect damps toward its baseline,
/// DiracComb mixes convexly with its baseline, Gaussian supports additive
/// and convex noise, Dirac accepts anything (the draw is the sample).
pub fn check_rule(kernel: &KernelSpec, rule: CombinationRule) -> Result<()> {
    let ok = match kernel {
        KernelSpec::Dirac => true,
        KernelSpec::Gaussian { sigma } => match rule {
            CombinationRule::Additive => true,
            CombinationRule::Convex => *sigma <= 1.0,
            CombinationRule::Damping => false,
        },
        KernelSpec::Rect { .. } => rule == CombinationRule::Damping,
        KernelSpec::DiracComb { .. } => rule == CombinationRule::Convex,
    };
    if ok {
        Ok(())
    } else {
        Err(rule_error(kernel, rule))
    }
}

/// One draw x̃ ~ p(x̃|x,σ). Deterministic given the stream state and sample
/// index. Draws are NOT clamped to [0,1]; clamping would change the
/// effective kernel and is an explicit opt-in at the estimator level.
pub fn sample_perturbation(
    kernel: &KernelSpec,
    x: &Grid,
    rule: CombinationRule,
    rng: &mut RngStream,
    sample_index: u64,
) -> Result<Grid> {
    check_rule(kernel, rule)?;
    let shape = x.shape();
    match kernel {
        KernelSpec::Dirac => Ok(x.clone()),
        KernelSpec::Gaussian { sigma } => {
            let mut out = x.clone();
            match rule {
                CombinationRule::Additive => {
                    for v in out.values_mut() {
                        *v += sigma * rng.normal();
                    }
                }
                CombinationRule::Convex => {
                    for v in out.values_mut() {
                        *v = (1.0 - sigma) * *v + sigma * rng.normal();
                    }
                }
                CombinationRule::Damping => unreachable!("rejected by check_rule"),
            }
            Ok(out)
        }
        KernelSpec::Rect { sigma, baseline } => {
            let mut out = x.clone();
            for (i, v) in out.values_mut().iter_mut().enumerate() {
                let t = rng.uniform();
                *v += t * sigma * (baseline.values()[i] - *v);
            }
            Ok(out)
        }
        KernelSpec::DiracComb { mask, baseline } => {
            let (rows, cols) = mask.dims();
            let low = mask.draw(sample_index, rng);
            let alpha = upsample_mask(&low, rows, cols, shape);
            let mut out = x.clone();
            for (i, v) in out.values_mut().iter_mut().enumerate() {
                let a = alpha[i / shape.channels];
                *v = (1.0 - a) * *v + a * baseline.values()[i];
            }
            Ok(out)
        }
    }
}

/// Scalar kernel of a single pixel's offset, recentered at the sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelKernel {
    Dirac,
    Gaussian { sigma: f64 },
    /// Uniform offset between 0 and `span` (signed: span = σ(s−x)).
    Rect { span: f64 },
    /// Offset 0 with probability 1−p, `displacement` with probability p.
    TwoPoint { p: f64, displacement: f64 },
}

pub(crate) fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        let pt = std::f64::consts::PI * t;
        pt.sin() / pt
    }
}

impl PixelKernel {
    /// Characteristic function p̂(ω) = E[exp(i2πω·offset)].
    pub fn char_fn(&self, omega: f64) -> Complex64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        match *self {
            PixelKernel::Dirac => Complex64::new(1.0, 0.0),
            PixelKernel::Gaussian { sigma } => {
                Complex64::new((-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * omega * omega).exp(), 0.0)
            }
            PixelKernel::Rect { span } => {
                // Uniform on [0, span]: sinc envelope with half-span phase.
                let phase = std::f64::consts::PI * omega * span;
                sinc(omega * span) * Complex64::from_polar(1.0, phase)
            }
            PixelKernel::TwoPoint { p, displacement } => {
                Complex64::new(1.0 - p, 0.0) + p * Complex64::from_polar(1.0, two_pi * omega * displacement)
            }
        }
    }

    /// PSD of the square root of the kernel, normalized to 1 at ω = 0.
    /// Defined for the singular kernels through their mass form.
    pub fn psd_sqrt(&self, omega: f64) -> f64 {
        match *self {
            PixelKernel::Dirac => 1.0,
            PixelKernel::Gaussian { sigma } => {
                (-8.0 * std::f64::consts::PI.powi(2) * sigma * sigma * omega * omega).exp()
            }
            PixelKernel::Rect { span } => {
                let s = sinc(omega * span);
                s * s
            }
            PixelKernel::TwoPoint { p, displacement } => {
                let cross = 2.0 * (p * (1.0 - p)).sqrt();
                let raw = 1.0 + cross * (2.0 * std::f64::consts::PI * omega * displacement).cos();
                raw / (1.0 + cross)
            }
        }
    }

    /// Band-pass weight ω²·S_√p(ω): the combined spectral effect of the
    /// gradient (high-pass) and the perturbation (low-pass).
    pub fn bandpass(&self, omega: f64) -> f64 {
        omega * omega * self.psd_sqrt(omega)
    }

    /// Offset density where one exists (Gaussian, non-degenerate Rect).
    pub fn density_at(&self, u: f64) -> Option<f64> {
        match *self {
            PixelKernel::Gaussian { sigma } => {
                let z = u / sigma;
                Some((-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
            }
            PixelKernel::Rect { span } => {
                if span == 0.0 {
                    return None;
                }
                let (lo, hi) = if span > 0.0 { (0.0, span) } else { (span, 0.0) };
                Some(if (lo..=hi).contains(&u) { 1.0 / span.abs() } else { 0.0 })
            }
            _ => None,
        }
    }

    /// Interior maximum of the Gaussian band-pass: ω* = 1/(2√2·πσ).
    pub fn bandpass_peak(&self) -> Option<f64> {
        match *self {
            PixelKernel::Gaussian { sigma } => {
                Some(1.0 / (2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI * sigma))
            }
            _ => None,
        }
    }
}

/// Kernel transform sampled on a frequency grid.
#[derive(Debug, Clone)]
pub struct KernelFt {
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    pub psd_sqrt: Vec<f64>,
}

impl KernelFt {
    /// Largest |p̂| over the grid; ≤ 1 for any probability kernel.
    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest |Im p̂| over the grid; ~0 for kernels symmetric about x.
    pub fn max_odd_part(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }
}

/// Analytic kernel transform at one pixel of `x`, on `omega` (centered at
/// the sample being explained).
pub fn kernel_ft(kernel: &KernelSpec, omega: &[f64], x: &Grid, pixel: usize) -> KernelFt {
    let pk = kernel.pixel_kernel(x, pixel);
    KernelFt {
        omega: omega.to_vec(),
        values: omega.iter().map(|&w| pk.char_fn(w)).collect(),
        psd_sqrt: omega.iter().map(|&w| pk.psd_sqrt(w)).collect(),
    }
}

/// S_√p on a frequency grid (normalized-at-zero convention).
pub fn psd_sqrt(kernel: &KernelSpec, omega: &[f64], x: &Grid, pixel: usize) -> Vec<f64> {
    let pk = kernel.pixel_kernel(x, pixel);
    omega.iter().map(|&w| pk.psd_sqrt(w)).collect()
}

/// Band-pass filter values ω²·S_√p(ω) on a frequency grid.
pub fn bandpass(kernel: &KernelSpec, omega: &[f64], x: &Grid, pixel: usize) -> Vec<f64> {
    let pk = kernel.pixel_kernel(x, pixel);
    omega.iter().map(|&w| pk.bandpass(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use std::f64::consts::PI;

    fn unit_grid(shape: GridShape, v: f64) -> Grid {
        Grid::constant(shape, v)
    }

    #[test]
    fn dirac_draw_returns_sample_exactly() {
        let shape = GridShape::new(2, 2, 1);
        let x = Grid::from_vec(shape, vec![0.1, 0.4, 0.6, 0.9]).unwrap();
        let mut rng = RngStream::new(0, 0);
        let out = sample_perturbation(&KernelSpec::Dirac, &x, CombinationRule::Additive, &mut rng, 0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn gaussian_additive_mean_within_clt_bound() {
        let shape = GridShape::new(1, 4, 1);
        let x = Grid::from_vec(shape, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let sigma = 0.3;
        let kernel = KernelSpec::Gaussian { sigma };
        let n = 100_000u64;
        let mut sums = vec![0.0; 4];
        for i in 0..n {
            let mut rng = RngStream::new(9, i);
            let draw = sample_perturbation(&kernel, &x, CombinationRule::Additive, &mut rng, i).unwrap();
            for (s, v) in sums.iter_mut().zip(draw.values()) {
                *s += v;
            }
        }
        let bound = 4.0 * sigma / (n as f64).sqrt();
        for (s, xv) in sums.iter().zip(x.values()) {
            let mean = s / n as f64;
            assert!((mean - xv).abs() < bound, "mean {mean} vs {xv}, bound {bound}");
        }
    }

    #[test]
    fn rect_full_scale_spans_baseline_to_sample() {
        // σ=1, s=0: draws sweep the segment [0, x] per pixel.
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.8);
        let kernel = KernelSpec::Rect { sigma: 1.0, baseline: Grid::zeros(shape) };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..20_000u64 {
            let mut rng = RngStream::new(3, i);
            let v = sample_perturbation(&kernel, &x, CombinationRule::Damping, &mut rng, i).unwrap().values()[0];
            lo = lo.min(v);
            hi = hi.max(v);
            assert!((0.0..=0.8).contains(&v));
        }
        assert!(lo < 0.001, "min {lo}");
        assert!(hi > 0.799, "max {hi}");
    }

    #[test]
    fn incompatible_pairs_are_rejected() {
        let shape = GridShape::new(1, 1, 1);
        let rect = KernelSpec::Rect { sigma: 0.5, baseline: Grid::zeros(shape) };
        assert!(check_rule(&rect, CombinationRule::Additive).is_err());
        let comb = KernelSpec::DiracComb {
            mask: MaskSpec::OneHot { rows: 1, cols: 1 },
            baseline: Grid::zeros(shape),
        };
        assert!(check_rule(&comb, CombinationRule::Damping).is_err());
        assert!(check_rule(&KernelSpec::Gaussian { sigma: 0.2 }, CombinationRule::Damping).is_err());
        assert!(check_rule(&KernelSpec::Gaussian { sigma: 0.2 }, CombinationRule::Convex).is_ok());
    }

    #[test]
    fn dirac_ft_is_one_everywhere() {
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.5);
        let omega: Vec<f64> = (0..50).map(|i| i as f64 * 0.2 - 5.0).collect();
        let ft = kernel_ft(&KernelSpec::Dirac, &omega, &x, 0);
        for v in &ft.values {
            assert_eq!(*v, Complex64::new(1.0, 0.0));
        }
        for s in &ft.psd_sqrt {
            assert_eq!(*s, 1.0);
        }
    }

    #[test]
    fn gaussian_ft_matches_closed_form_and_is_even() {
        let sigma = 0.25;
        let pk = PixelKernel::Gaussian { sigma };
        for &w in &[0.0, 0.5, 1.0, 2.0, -1.5] {
            let expect = (-2.0 * PI * PI * sigma * sigma * w * w).exp();
            let got = pk.char_fn(w);
            assert!((got.re - expect).abs() < 1e-15);
            assert_eq!(got.im, 0.0);
        }
    }

    #[test]
    fn gaussian_psd_sqrt_hits_e_minus_one() {
        // At 8π²σ²ω² = 1 the value is exactly e^{-1}.
        let sigma = 0.1;
        let w = 1.0 / (8.0f64.sqrt() * PI * sigma);
        let pk = PixelKernel::Gaussian { sigma };
        assert!((pk.psd_sqrt(w) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rect_ft_magnitude_is_sinc_envelope() {
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.2);
        let baseline = unit_grid(shape, 1.0);
        let sigma = 0.5;
        let kernel = KernelSpec::Rect { sigma, baseline };
        let span = sigma * (1.0 - 0.2);
        let omega: Vec<f64> = (1..40).map(|i| i as f64 * 0.25).collect();
        let ft = kernel_ft(&kernel, &omega, &x, 0);
        for (&w, v) in omega.iter().zip(&ft.values) {
            assert!((v.norm() - sinc(w * span).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn characteristic_magnitude_bounded_by_one() {
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.3);
        let kernels = [
            KernelSpec::Dirac,
            KernelSpec::Gaussian { sigma: 0.7 },
            KernelSpec::Rect { sigma: 0.9, baseline: unit_grid(shape, 1.0) },
            KernelSpec::DiracComb {
                mask: MaskSpec::Bernoulli { rows: 1, cols: 1, probs: vec![0.4] },
                baseline: Grid::zeros(shape),
            },
        ];
        let omega: Vec<f64> = (0..400).map(|i| (i as f64 - 200.0) * 0.1).collect();
        for k in &kernels {
            let ft = kernel_ft(k, &omega, &x, 0);
            assert!(ft.max_magnitude() <= 1.0 + 1e-12, "{} violates |p̂|<=1", k.name());
            for s in &ft.psd_sqrt {
                assert!(*s >= -1e-15);
            }
        }
    }

    #[test]
    fn symmetric_kernel_has_zero_odd_part() {
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.3);
        let omega: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) * 0.2).collect();
        for k in [KernelSpec::Dirac, KernelSpec::Gaussian { sigma: 0.4 }] {
            let ft = kernel_ft(&k, &omega, &x, 0);
            assert!(ft.max_odd_part() < 1e-14);
        }
    }

    #[test]
    fn bandpass_zero_at_origin_with_interior_gaussian_peak() {
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.5);
        let omega: Vec<f64> = (0..4000).map(|i| i as f64 * 0.005).collect();
        for k in [
            KernelSpec::Dirac,
            KernelSpec::Gaussian { sigma: 0.2 },
            KernelSpec::Rect { sigma: 0.5, baseline: Grid::zeros(shape) },
        ] {
            let bp = bandpass(&k, &omega, &x, 0);
            assert_eq!(bp[0], 0.0, "{}", k.name());
        }
        // Gaussian: argmax at ω* = 1/(2√2 πσ), found by grid scan.
        let sigma = 0.2;
        let bp = bandpass(&KernelSpec::Gaussian { sigma }, &omega, &x, 0);
        let argmax = bp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let expect = 1.0 / (2.0 * std::f64::consts::SQRT_2 * PI * sigma);
        assert!((omega[argmax] - expect).abs() <= 0.005 + 1e-12, "{} vs {expect}", omega[argmax]);
    }

    #[test]
    fn sigma_zero_limit_recovers_pure_high_pass() {
        // As σ→0 the Gaussian band-pass tends to ω² (the unperturbed
        // squared-gradient case).
        let pk = PixelKernel::Gaussian { sigma: 1e-9 };
        for &w in &[0.5, 1.0, 3.0] {
            assert!((pk.bandpass(w) - w * w).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_epoch_is_exhaustive() {
        let mask = MaskSpec::OneHot { rows: 2, cols: 2 };
        let mut seen = vec![false; 4];
        for i in 0..4u64 {
            let mut rng = RngStream::new(0, i);
            let m = mask.draw(i, &mut rng);
            assert_eq!(m.iter().sum::<f64>(), 1.0);
            seen[m.iter().position(|&v| v == 1.0).unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn rect_empirical_moments_match_uniform() {
        // Offset ~ Unif(0, span): mean span/2, var span²/12.
        let shape = GridShape::new(1, 1, 1);
        let x = unit_grid(shape, 0.2);
        let kernel = KernelSpec::Rect { sigma: 0.5, baseline: unit_grid(shape, 1.0) };
        let span = 0.5 * 0.8;
        let n = 100_000u64;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for i in 0..n {
            let mut rng = RngStream::new(21, i);
            let v = sample_perturbation(&kernel, &x, CombinationRule::Damping, &mut rng, i).unwrap().values()[0] - 0.2;
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let mean_bound = 4.0 * (span / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean - span / 2.0).abs() < mean_bound);
        assert!((var - span * span / 12.0).abs() < 5e-4);
    }
}
