//! Spectral-side machinery: cosine-similarity perturbation-scale selection,
//! lens aggregation across frequency bands, the per-pixel argmax lens, the
//! inconsistency metric, and the predictive-entropy cutoff scan.
//!
//! Scale selection rests on the Gaussian band-pass norm ‖ω²S_√p‖ ∝ σ^{−5/2}:
//! the classifier-side norm is constant in σ under convex interpolation, so
//! the cosine similarity reduces to σ^{5/2}·⟨S_f, ω²S_√p⟩ and the inner
//! product is read off squared-gradient maps (L1 of the flattened map) or,
//! for analytic fields, evaluated exactly on their point-mass spectra.
//! Dropped proportionality constants mean absolute similarity values are
//! convention-dependent; every consumer works with ratios, argmaxes and
//! shapes only.

use crate::error::{Error, Result};
use crate::estimator::{estimate, AttributionMap, EstimatorConfig, MethodPreset};
use crate::grid::{Grid, GridShape, InputGrid};
use crate::kernels::CombinationRule;
use crate::model::{AnalyticField, DifferentiableModel};
use crate::rng::{derive_seed, RngStream};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Discretized density over a non-negative frequency grid, two-sided-folded
/// (masses at ±ω accumulate at ω ≥ 0).
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
}

impl SpectralProfile {
    /// Deposits point masses onto the nearest grid bin.
    pub fn from_point_masses(omega: Vec<f64>, masses: &[(f64, f64)]) -> Result<Self> {
        if omega.is_empty() || omega.windows(2).any(|w| w[1] <= w[0]) || omega[0] < 0.0 {
            return Err(Error::Config("frequency grid must be non-negative and increasing".into()));
        }
        let mut values = vec![0.0; omega.len()];
        for &(w, m) in masses {
            let wa = w.abs();
            let idx = omega
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 - wa).abs().partial_cmp(&(b.1 - wa).abs()).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            values[idx] += m;
        }
        Ok(Self { omega, values })
    }
}

/// Ordered perturbation scales in relative units (fractions of the entropy
/// cutoff σ_max); `absolute` values are what kernels consume.
#[derive(Debug, Clone)]
pub struct SigmaGrid {
    pub relative: Vec<f64>,
    pub cutoff: f64,
}

impl SigmaGrid {
    pub fn new(relative: Vec<f64>, cutoff: f64) -> Result<Self> {
        if cutoff <= 0.0 {
            return Err(Error::Config("sigma cutoff must be positive".into()));
        }
        if relative.is_empty() {
            return Err(Error::Config("sigma grid is empty".into()));
        }
        if relative.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sigma grid must be strictly increasing".into()));
        }
        if relative[0] <= 0.0 || *relative.last().unwrap() > 1.0 + 1e-12 {
            return Err(Error::Config("relative sigma values must lie in (0, 1]".into()));
        }
        Ok(Self { relative, cutoff })
    }

    /// 16 log-spaced points in (0.01, 1.0], unit cutoff.
    pub fn default_grid() -> Self {
        Self::log_spaced(16, 0.01, 1.0, 1.0)
    }

    /// `n` log-spaced points in (lo, hi] (exclusive start, inclusive end).
    pub fn log_spaced(n: usize, lo: f64, hi: f64, cutoff: f64) -> Self {
        let ratio = (hi / lo).powf(1.0 / n as f64);
        let relative = (1..=n).map(|k| lo * ratio.powi(k as i32)).collect();
        Self { relative, cutoff }
    }

    pub fn len(&self) -> usize {
        self.relative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relative.is_empty()
    }

    pub fn absolute(&self, i: usize) -> f64 {
        self.relative[i] * self.cutoff
    }
}

/// Per-σ squared-gradient maps sharing shape and class, ready for lens
/// aggregation.
#[derive(Debug, Clone)]
pub struct LensStack {
    pub sigmas: SigmaGrid,
    pub maps: Vec<AttributionMap>,
}

impl LensStack {
    pub fn new(sigmas: SigmaGrid, maps: Vec<AttributionMap>) -> Result<Self> {
        if maps.len() != sigmas.len() {
            return Err(Error::Config(format!(
                "stack has {} maps for {} sigma values",
                maps.len(),
                sigmas.len()
            )));
        }
        let shape = maps[0].values.shape();
        let class = maps[0].meta.class_index;
        for m in &maps {
            if m.values.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_string(),
                    got: m.values.shape().to_string(),
                });
            }
            if m.meta.class_index != class {
                return Err(Error::Config("stack maps disagree on class index".into()));
            }
        }
        Ok(Self { sigmas, maps })
    }

    pub fn shape(&self) -> GridShape {
        self.maps[0].values.shape()
    }
}

/// Builds the SG² stack over the σ grid. Per-σ runs are independent
/// estimator calls with seeds derived from (seed, index), so they can run
/// concurrently and still reproduce bit-for-bit.
pub fn build_lens_stack(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    sigmas: SigmaGrid,
    rule: CombinationRule,
    cfg: &EstimatorConfig,
) -> Result<LensStack> {
    let maps: Vec<Result<AttributionMap>> = (0..sigmas.len())
        .into_par_iter()
        .map(|i| {
            let sigma = sigmas.absolute(i);
            let preset = match rule {
                CombinationRule::Convex => MethodPreset::sg2_convex(sigma),
                _ => MethodPreset::sg2(sigma),
            };
            let cfg_i = EstimatorConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
            estimate(model, x, &preset, &cfg_i)
        })
        .collect();
    let maps: Result<Vec<_>> = maps.into_iter().collect();
    LensStack::new(sigmas, maps?)
}

/// Explanation prior p(σ) over the stack's grid.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    /// All mass on one grid entry.
    Dirac(usize),
    /// Unif over the grid's σ range (trapezoid quadrature weights).
    Uniform,
    /// User-supplied non-negative weights per grid point.
    Weights(Vec<f64>),
}

impl PriorSpec {
    /// Normalized quadrature weights over the grid.
    pub fn weights(&self, sigmas: &SigmaGrid) -> Result<Vec<f64>> {
        let n = sigmas.len();
        let raw: Vec<f64> = match self {
            PriorSpec::Dirac(i) => {
                if *i >= n {
                    return Err(Error::Config(format!("Dirac prior index {i} outside grid of {n}")));
                }
                let mut w = vec![0.0; n];
                w[*i] = 1.0;
                return Ok(w);
            }
            PriorSpec::Uniform => {
                if n == 1 {
                    vec![1.0]
                } else {
                    let s = &sigmas.relative;
                    (0..n)
                        .map(|i| {
                            if i == 0 {
                                (s[1] - s[0]) / 2.0
                            } else if i == n - 1 {
                                (s[n - 1] - s[n - 2]) / 2.0
                            } else {
                                (s[i + 1] - s[i - 1]) / 2.0
                            }
                        })
                        .collect()
                }
            }
            PriorSpec::Weights(w) => {
                if w.len() != n {
                    return Err(Error::Config(format!(
                        "prior has {} weights for a grid of {n}",
                        w.len()
                    )));
                }
                if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(Error::Config("prior weights must be non-negative".into()));
                }
                w.clone()
            }
        };
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("prior weights are not normalizable".into()));
        }
        Ok(raw.iter().map(|w| w / total).collect())
    }
}

/// Lens outputs: the prior-weighted aggregate map, the per-pixel argmax σ,
/// and its frequency view ω = 1/(1+AL).
#[derive(Debug, Clone)]
pub struct LensResult {
    pub sl: Grid,
    pub al: Grid,
    pub omega_view: Grid,
}

/// Aggregates the stack under the prior: SL² = Σ w(σ)·SG²(σ). A Dirac prior
/// reproduces that stack entry bit-for-bit (its weight is exactly 1).
pub fn spectral_lens(stack: &LensStack, prior: &PriorSpec) -> Result<LensResult> {
    let weights = prior.weights(&stack.sigmas)?;
    let shape = stack.shape();
    let sl = if let PriorSpec::Dirac(i) = prior {
        stack.maps[*i].values.clone()
    } else {
        let mut acc = Grid::zeros(shape);
        for (w, map) in weights.iter().zip(&stack.maps) {
            if *w == 0.0 {
                continue;
            }
            for (a, v) in acc.values_mut().iter_mut().zip(map.values.values()) {
                *a += w * v;
            }
        }
        acc
    };
    let al = arg_lens(stack)?;
    let omega_view = al.map(|s| 1.0 / (1.0 + s));
    Ok(LensResult { sl, al, omega_view })
}

/// Per pixel, the relative σ at which the stack's SG² is maximized; ties
/// break toward smaller σ.
pub fn arg_lens(stack: &LensStack) -> Result<Grid> {
    let shape = stack.shape();
    let mut best_val = stack.maps[0].values.clone();
    let mut best_sigma = Grid::constant(shape, stack.sigmas.relative[0]);
    for (i, map) in stack.maps.iter().enumerate().skip(1) {
        let sigma = stack.sigmas.relative[i];
        for (j, &v) in map.values.values().iter().enumerate() {
            if v > best_val.values()[j] {
                best_val.values_mut()[j] = v;
                best_sigma.values_mut()[j] = sigma;
            }
        }
    }
    Ok(best_sigma)
}

#[derive(Debug, Clone)]
pub struct InconsistencyReport {
    /// 1 − mean cosine similarity against the smallest-σ map.
    pub value: f64,
    /// σ entries skipped for zero norm.
    pub skipped: usize,
}

fn average_pool(map: &Grid, max_side: usize) -> Vec<f64> {
    let shape = map.shape();
    let flat = map.channel_summed();
    let (h, w) = (shape.height, shape.width);
    let fy = h.div_ceil(max_side).max(1);
    let fx = w.div_ceil(max_side).max(1);
    let (oh, ow) = (h.div_ceil(fy), w.div_ceil(fx));
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            let mut count = 0.0;
            for y in oy * fy..((oy + 1) * fy).min(h) {
                for x in ox * fx..((ox + 1) * fx).min(w) {
                    acc += flat.get(y, x, 0);
                    count += 1.0;
                }
            }
            out[oy * ow + ox] = acc / count;
        }
    }
    out
}

/// Max-normalize, average-pool to at most 32×32, flatten.
fn prepare_for_cosine(map: &Grid) -> Option<Vec<f64>> {
    let m = map.max_abs();
    if m == 0.0 {
        return None;
    }
    let pooled = average_pool(map, 32);
    Some(pooled.iter().map(|v| v / m).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Per-image inconsistency: 1 − mean over σ > σ_min of the cosine
/// similarity between the smallest-σ explanation and the explanation at σ.
/// Maps are max-normalized, average-pooled and flattened first. Pass an
/// exact unperturbed squared-gradient map as `reference` to use the σ = 0
/// limit instead of the smallest grid σ (then all grid entries are scored).
pub fn inconsistency(stack: &LensStack, reference: Option<&Grid>) -> Result<InconsistencyReport> {
    let (e0, rest_from) = match reference {
        Some(r) => (prepare_for_cosine(r), 0),
        None => (prepare_for_cosine(&stack.maps[0].values), 1),
    };
    let e0 = e0.ok_or_else(|| Error::Config("reference explanation has zero norm".into()))?;
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped = 0usize;
    for map in &stack.maps[rest_from..] {
        match prepare_for_cosine(&map.values) {
            Some(e) => {
                total += cosine(&e0, &e);
                counted += 1;
            }
            None => skipped += 1,
        }
    }
    if counted == 0 {
        return Err(Error::InsufficientData("no non-degenerate σ entries to compare".into()));
    }
    Ok(InconsistencyReport { value: 1.0 - total / counted as f64, skipped })
}

/// Scan granularity for the similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Dataset,
    Image,
    Pixel,
}

#[derive(Debug, Clone)]
pub struct SimilarityScan {
    pub sigmas: SigmaGrid,
    /// σ^{5/2}·⟨S_f, ω²S_√p⟩ per grid point (image or dataset granularity).
    pub scores: Vec<f64>,
    pub argmax_index: usize,
    /// σ entries whose squared-gradient map vanished.
    pub zero_flags: Vec<bool>,
}

impl SimilarityScan {
    pub fn argmax_sigma_relative(&self) -> f64 {
        self.sigmas.relative[self.argmax_index]
    }

    /// Strict unimodality on the grid: scores rise to the argmax and fall
    /// after it.
    pub fn is_unimodal(&self) -> bool {
        let k = self.argmax_index;
        self.scores[..k].windows(2).all(|w| w[0] <= w[1])
            && self.scores[k..].windows(2).all(|w| w[0] >= w[1])
    }
}

fn argmax_smallest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Exact similarity curve for an analytic field: the field's point-mass
/// spectrum makes ⟨S_f, ω²S_√p⟩ a finite sum Σ m·ω²·e^{−8π²σ²ω²}.
pub fn similarity_scan_analytic(field: &AnalyticField, sigmas: SigmaGrid) -> SimilarityScan {
    let masses = field.aggregate_psd();
    let scores: Vec<f64> = (0..sigmas.len())
        .map(|i| {
            let sg = sigmas.absolute(i);
            let inner: f64 = masses
                .masses
                .iter()
                .map(|&(w, m)| m * w * w * (-8.0 * PI * PI * sg * sg * w * w).exp())
                .sum();
            sg.powf(2.5) * inner
        })
        .collect();
    let argmax_index = argmax_smallest(&scores);
    let zero_flags = scores.iter().map(|&s| s == 0.0).collect();
    SimilarityScan { sigmas, scores, argmax_index, zero_flags }
}

/// Analytic maximizer of the single-tone similarity curve
/// σ^{5/2}·ω₀²e^{−8π²σ²ω₀²}: the stationary point σ* = √(5/32)/(πω₀).
pub fn single_tone_similarity_argmax(omega0: f64) -> f64 {
    (5.0f64 / 32.0).sqrt() / (PI * omega0)
}

/// Empirical similarity scan: per σ, an SG² map with convex interpolation;
/// the inner product is the L1 norm of the flattened map. An all-zero map
/// scores 0 and is flagged.
pub fn similarity_scan_empirical(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    sigmas: SigmaGrid,
    cfg: &EstimatorConfig,
) -> Result<SimilarityScan> {
    let stack = build_lens_stack(model, x, sigmas, CombinationRule::Convex, cfg)?;
    Ok(scan_from_stack(&stack))
}

/// Similarity scores read off an existing SG² stack.
pub fn scan_from_stack(stack: &LensStack) -> SimilarityScan {
    let n_pixels = stack.shape().len() as f64;
    let scores: Vec<f64> = (0..stack.sigmas.len())
        .map(|i| {
            let l1 = stack.maps[i].values.abs_sum() / n_pixels;
            stack.sigmas.absolute(i).powf(2.5) * l1
        })
        .collect();
    let argmax_index = argmax_smallest(&scores);
    let zero_flags = stack.maps.iter().map(|m| m.values.abs_sum() == 0.0).collect();
    SimilarityScan { sigmas: stack.sigmas.clone(), scores, argmax_index, zero_flags }
}

/// Dataset-level scan: per-σ scores summed across images (fields), argmax
/// over the summed curve.
pub fn dataset_similarity_scan(fields: &[&AnalyticField], sigmas: SigmaGrid) -> SimilarityScan {
    let per_image: Vec<SimilarityScan> = fields
        .iter()
        .map(|f| similarity_scan_analytic(f, sigmas.clone()))
        .collect();
    let n = sigmas.len();
    let scores: Vec<f64> = (0..n)
        .map(|i| per_image.iter().map(|s| s.scores[i]).sum())
        .collect();
    let argmax_index = argmax_smallest(&scores);
    let zero_flags = (0..n).map(|i| scores[i] == 0.0).collect();
    SimilarityScan { sigmas, scores, argmax_index, zero_flags }
}

/// Per-pixel argmax of σ^{5/2}·SG²_pixel(σ) over the stack: the pixel-level
/// granularity of the similarity scan.
pub fn pixel_similarity_argmax(stack: &LensStack) -> Grid {
    let shape = stack.shape();
    let mut best_score = vec![f64::NEG_INFINITY; shape.len()];
    let mut best_sigma = Grid::constant(shape, stack.sigmas.relative[0]);
    for i in 0..stack.sigmas.len() {
        let weight = stack.sigmas.absolute(i).powf(2.5);
        for (j, &v) in stack.maps[i].values.values().iter().enumerate() {
            let score = weight * v.abs();
            if score > best_score[j] {
                best_score[j] = score;
                best_sigma.values_mut()[j] = stack.sigmas.relative[i];
            }
        }
    }
    best_sigma
}

/// Noise model for the predictive-entropy cutoff scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanNoise {
    GaussianAdditive,
    GaussianConvex,
    /// x̃ = (1−σ)x + σu with u ~ Unif(0,1) per pixel.
    UniformConvex,
}

#[derive(Debug, Clone)]
pub struct EntropyScan {
    /// Absolute σ values scanned.
    pub sigmas: Vec<f64>,
    pub entropies: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub sigma_max: f64,
    /// False when the curve kept increasing over the whole grid (no anomaly
    /// detected; σ_max defaults to the grid end).
    pub anomaly_found: bool,
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Mean predictive entropy per σ over images and noise draws; σ_max is the
/// last grid point before the smoothed curve (window 3) first stops
/// increasing. A curve that rises over the whole grid yields the grid end,
/// flagged as no anomaly detected.
pub fn entropy_cutoff_scan(
    model: &dyn DifferentiableModel,
    images: &[InputGrid],
    sigmas: &[f64],
    noise: ScanNoise,
    draws_per_image: u64,
    seed: u64,
) -> Result<EntropyScan> {
    if sigmas.is_empty() || images.is_empty() {
        return Err(Error::Config("entropy scan needs images and a sigma grid".into()));
    }
    let entropies: Vec<f64> = sigmas
        .par_iter()
        .enumerate()
        .map(|(si, &sigma)| -> Result<f64> {
            let mut total = 0.0;
            let mut count = 0u64;
            for (ii, x) in images.iter().enumerate() {
                for d in 0..draws_per_image {
                    let stream = derive_seed(seed, (si * images.len() + ii) as u64);
                    let mut rng = RngStream::new(stream, d);
                    let mut draw = x.as_grid().clone();
                    match noise {
                        ScanNoise::GaussianAdditive => {
                            for v in draw.values_mut() {
                                *v += sigma * rng.normal();
                            }
                        }
                        ScanNoise::GaussianConvex => {
                            for v in draw.values_mut() {
                                *v = (1.0 - sigma) * *v + sigma * rng.normal();
                            }
                        }
                        ScanNoise::UniformConvex => {
                            for v in draw.values_mut() {
                                *v = (1.0 - sigma) * *v + sigma * rng.uniform();
                            }
                        }
                    }
                    total += model.forward(&draw)?.entropy();
                    count += 1;
                }
            }
            Ok(total / count as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let (sigma_max, anomaly_found, smoothed) = detect_entropy_cutoff(sigmas, &entropies);
    Ok(EntropyScan { sigmas: sigmas.to_vec(), entropies, smoothed, sigma_max, anomaly_found })
}

/// Cutoff rule applied to a measured curve: smoothed slope ≤ 0 marks the
/// anomaly; σ_max is the grid point right before it starts.
pub fn detect_entropy_cutoff(sigmas: &[f64], entropies: &[f64]) -> (f64, bool, Vec<f64>) {
    let smoothed = moving_average(entropies, 3);
    for i in 0..smoothed.len() - 1 {
        if smoothed[i + 1] <= smoothed[i] {
            return (sigmas[i], true, smoothed);
        }
    }
    (*sigmas.last().unwrap(), false, smoothed)
}

/// Frequency-crossover construction: two pixels contributing at ω_i and
/// ω_j have band-limited attributions A_σ(ω) = ω²e^{−8π²σ²ω²} whose ranking
/// flips at σ̄ = √(ln(ω_j²/ω_i²)/(8π²(ω_j²−ω_i²))).
#[derive(Debug, Clone)]
pub struct RashomonDemo {
    pub sigmas: Vec<f64>,
    pub curve_low: Vec<f64>,
    pub curve_high: Vec<f64>,
    pub sigma_bar: Option<f64>,
    /// Index i where sign(A_high − A_low) changes between grid points i−1, i.
    pub flip_index: Option<usize>,
}

pub fn band_attribution(omega: f64, sigma: f64) -> f64 {
    omega * omega * (-8.0 * PI * PI * sigma * sigma * omega * omega).exp()
}

pub fn rashomon_crossover(omega_i: f64, omega_j: f64) -> Option<f64> {
    let (wi, wj) = (omega_i.abs(), omega_j.abs());
    if (wi - wj).abs() < 1e-12 {
        return None;
    }
    let num = (wj * wj / (wi * wi)).ln();
    let den = 8.0 * PI * PI * (wj * wj - wi * wi);
    Some((num / den).sqrt())
}

pub fn rashomon_demo(omega_i: f64, omega_j: f64, sigmas: &[f64]) -> RashomonDemo {
    let (lo, hi) = if omega_i.abs() <= omega_j.abs() { (omega_i, omega_j) } else { (omega_j, omega_i) };
    let curve_low: Vec<f64> = sigmas.iter().map(|&s| band_attribution(lo, s)).collect();
    let curve_high: Vec<f64> = sigmas.iter().map(|&s| band_attribution(hi, s)).collect();
    let mut flip_index = None;
    for i in 1..sigmas.len() {
        let before = curve_high[i - 1] - curve_low[i - 1];
        let after = curve_high[i] - curve_low[i];
        if before.signum() != after.signum() && before != 0.0 {
            flip_index = Some(i);
            break;
        }
    }
    RashomonDemo {
        sigmas: sigmas.to_vec(),
        curve_low,
        curve_high,
        sigma_bar: rashomon_crossover(lo, hi),
        flip_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::MapMeta;
    use crate::model::Target;

    fn stack_from_values(sigmas: Vec<f64>, values: Vec<Vec<f64>>, shape: GridShape) -> LensStack {
        let maps = values
            .into_iter()
            .map(|v| AttributionMap {
                values: Grid::from_vec(shape, v).unwrap(),
                variance: None,
                meta: MapMeta {
                    method: "sg2".into(),
                    sigma: None,
                    class_index: 1,
                    target: "score".into(),
                    sample_count: 1,
                    seed: 0,
                    converged: true,
                    signed: false,
                    unattributed_cells: 0,
                },
            })
            .collect();
        LensStack::new(SigmaGrid::new(sigmas, 1.0).unwrap(), maps).unwrap()
    }

    #[test]
    fn default_sigma_grid_is_log_spaced_in_unit_interval() {
        let g = SigmaGrid::default_grid();
        assert_eq!(g.len(), 16);
        assert!(g.relative[0] > 0.01);
        assert!((g.relative[15] - 1.0).abs() < 1e-12);
        assert!(g.relative.windows(2).all(|w| w[1] > w[0]));
        // Log spacing: constant ratio.
        let r0 = g.relative[1] / g.relative[0];
        for w in g.relative.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-9);
        }
    }

    #[test]
    fn analytic_scan_argmax_matches_stationary_point() {
        for omega0 in [0.5, 1.0, 2.0] {
            let field = AnalyticField::single_tone(GridShape::new(2, 2, 1), omega0);
            // Dense grid bracketing the analytic maximizer.
            let n = 400;
            let sigmas: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
            let scan = similarity_scan_analytic(&field, SigmaGrid::new(sigmas, 1.0).unwrap());
            let expect = single_tone_similarity_argmax(omega0);
            let step = 1.0 / n as f64;
            assert!(
                (scan.argmax_sigma_relative() - expect).abs() <= step + 1e-12,
                "w0={omega0}: {} vs {expect}",
                scan.argmax_sigma_relative()
            );
            assert!(scan.is_unimodal());
        }
    }

    #[test]
    fn dataset_argmax_lies_between_image_argmaxes() {
        let shape = GridShape::new(2, 2, 1);
        let low = AnalyticField::single_tone(shape, 1.0);
        let high = AnalyticField::single_tone(shape, 2.0);
        let n = 800;
        let sigmas: Vec<f64> = (1..=n).map(|i| i as f64 * 0.4 / n as f64).collect();
        let grid = SigmaGrid::new(sigmas, 1.0).unwrap();
        let s_low = similarity_scan_analytic(&low, grid.clone());
        let s_high = similarity_scan_analytic(&high, grid.clone());
        let s_both = dataset_similarity_scan(&[&low, &high], grid);
        let (a, b, c) = (
            s_high.argmax_sigma_relative(),
            s_both.argmax_sigma_relative(),
            s_low.argmax_sigma_relative(),
        );
        assert!(a < b && b < c, "expected {a} < {b} < {c}");
    }

    #[test]
    fn scan_scores_scale_invariant_argmax() {
        let shape = GridShape::new(1, 2, 1);
        let sigmas = vec![0.1, 0.2, 0.4, 0.8];
        let values = vec![
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![2.0, 2.0],
            vec![0.5, 0.5],
        ];
        let stack = stack_from_values(sigmas.clone(), values.clone(), shape);
        let base = scan_from_stack(&stack);
        let scaled_stack = stack_from_values(
            sigmas,
            values.iter().map(|v| v.iter().map(|x| 7.3 * x).collect()).collect(),
            shape,
        );
        let scaled = scan_from_stack(&scaled_stack);
        assert_eq!(base.argmax_index, scaled.argmax_index);
    }

    #[test]
    fn zero_map_flags() {
        let shape = GridShape::new(1, 1, 1);
        let stack = stack_from_values(
            vec![0.5, 1.0],
            vec![vec![0.0], vec![1.0]],
            shape,
        );
        let scan = scan_from_stack(&stack);
        assert!(scan.zero_flags[0]);
        assert!(!scan.zero_flags[1]);
        assert_eq!(scan.scores[0], 0.0);
    }

    #[test]
    fn dirac_prior_is_bit_exact() {
        let shape = GridShape::new(2, 2, 1);
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![
                vec![0.1, 0.2, 0.3, 0.4],
                vec![0.4, 0.3, 0.2, 0.1],
                vec![1.0, 1.0, 1.0, 1.0],
            ],
            shape,
        );
        let lens = spectral_lens(&stack, &PriorSpec::Dirac(1)).unwrap();
        assert_eq!(lens.sl.values(), stack.maps[1].values.values());
    }

    #[test]
    fn uniform_prior_matches_trapezoid_quadrature() {
        let shape = GridShape::new(1, 1, 1);
        let sigmas = vec![0.2, 0.4, 0.6, 0.8, 1.0];
        let curve = |s: f64| s * s + 0.5;
        let stack = stack_from_values(
            sigmas.clone(),
            sigmas.iter().map(|&s| vec![curve(s)]).collect(),
            shape,
        );
        let lens = spectral_lens(&stack, &PriorSpec::Uniform).unwrap();
        // Independent trapezoid of curve over the grid, normalized by range.
        let mut quad = 0.0;
        for w in sigmas.windows(2) {
            quad += (curve(w[0]) + curve(w[1])) / 2.0 * (w[1] - w[0]);
        }
        quad /= sigmas.last().unwrap() - sigmas[0];
        assert!((lens.sl.values()[0] - quad).abs() < 1e-12);
    }

    #[test]
    fn bad_priors_are_rejected() {
        let shape = GridShape::new(1, 1, 1);
        let stack = stack_from_values(vec![0.5, 1.0], vec![vec![1.0], vec![2.0]], shape);
        assert!(spectral_lens(&stack, &PriorSpec::Dirac(5)).is_err());
        assert!(spectral_lens(&stack, &PriorSpec::Weights(vec![0.0, 0.0])).is_err());
        assert!(spectral_lens(&stack, &PriorSpec::Weights(vec![-1.0, 2.0])).is_err());
        assert!(spectral_lens(&stack, &PriorSpec::Weights(vec![1.0])).is_err());
    }

    #[test]
    fn arg_lens_monotone_curves() {
        let shape = GridShape::new(1, 2, 1);
        // Pixel 0: decreasing in σ → smallest σ wins; pixel 1: increasing →
        // largest σ wins.
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![vec![3.0, 1.0], vec![2.0, 2.0], vec![1.0, 3.0]],
            shape,
        );
        let al = arg_lens(&stack).unwrap();
        assert_eq!(al.values(), &[0.25, 1.0]);
    }

    #[test]
    fn arg_lens_band_construction_prefers_smallest_sigma() {
        // A_σ(ω) = ω²e^{−8π²σ²ω²} is strictly decreasing in σ, so both
        // pixels argmax at the smallest grid σ.
        let shape = GridShape::new(1, 2, 1);
        let sigmas = vec![0.05, 0.1, 0.3];
        let values: Vec<Vec<f64>> = sigmas
            .iter()
            .map(|&s| vec![band_attribution(1.0, s), band_attribution(2.0, s)])
            .collect();
        let stack = stack_from_values(sigmas, values, shape);
        let al = arg_lens(&stack).unwrap();
        assert_eq!(al.values(), &[0.05, 0.05]);
    }

    #[test]
    fn arg_lens_ties_break_small() {
        let shape = GridShape::new(1, 1, 1);
        let stack =
            stack_from_values(vec![0.5, 1.0], vec![vec![2.0], vec![2.0]], shape);
        let al = arg_lens(&stack).unwrap();
        assert_eq!(al.values(), &[0.5]);
    }

    #[test]
    fn arg_lens_invariant_under_monotone_transform() {
        let shape = GridShape::new(1, 3, 1);
        let sigmas = vec![0.2, 0.5, 1.0];
        let values = vec![
            vec![0.5, 3.0, 1.0],
            vec![2.0, 2.0, 0.5],
            vec![1.0, 1.0, 2.0],
        ];
        let stack = stack_from_values(sigmas.clone(), values.clone(), shape);
        let al = arg_lens(&stack).unwrap();
        let transformed = stack_from_values(
            sigmas,
            values.iter().map(|v| v.iter().map(|x| (3.0 * x).exp()).collect()).collect(),
            shape,
        );
        let al_t = arg_lens(&transformed).unwrap();
        assert_eq!(al.values(), al_t.values());
    }

    #[test]
    fn omega_view_is_reciprocal_shift() {
        let shape = GridShape::new(1, 1, 1);
        let stack = stack_from_values(vec![0.5, 1.0], vec![vec![1.0], vec![3.0]], shape);
        let lens = spectral_lens(&stack, &PriorSpec::Uniform).unwrap();
        assert_eq!(lens.al.values(), &[1.0]);
        assert!((lens.omega_view.values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inconsistency_identical_maps_is_zero() {
        let shape = GridShape::new(2, 2, 1);
        let v = vec![0.5, 1.0, 0.2, 0.8];
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![v.clone(), v.clone(), v],
            shape,
        );
        let r = inconsistency(&stack, None).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn inconsistency_orthogonal_support_is_one() {
        let shape = GridShape::new(1, 2, 1);
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]],
            shape,
        );
        let r = inconsistency(&stack, None).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistency_bounded_and_scale_free() {
        let shape = GridShape::new(1, 2, 1);
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![vec![1.0, 0.3], vec![0.6, 0.9], vec![0.1, 0.2]],
            shape,
        );
        let r = inconsistency(&stack, None).unwrap();
        assert!((0.0..=1.0).contains(&r.value));
        // Positive multiples of e₀ at every σ: exactly zero.
        let stack2 = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![vec![1.0, 0.3], vec![2.0, 0.6], vec![0.5, 0.15]],
            shape,
        );
        assert!(inconsistency(&stack2, None).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn inconsistency_skips_zero_norm_entries() {
        let shape = GridShape::new(1, 2, 1);
        let stack = stack_from_values(
            vec![0.25, 0.5, 1.0],
            vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]],
            shape,
        );
        let r = inconsistency(&stack, None).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.value.abs() < 1e-12);
    }

    #[test]
    fn inconsistency_with_explicit_reference() {
        let shape = GridShape::new(1, 2, 1);
        let stack = stack_from_values(
            vec![0.5, 1.0],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            shape,
        );
        let reference = Grid::from_vec(shape, vec![1.0, 0.0]).unwrap();
        let r = inconsistency(&stack, Some(&reference)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_cutoff_rule_on_synthetic_curves() {
        let sigmas = [0.1, 0.2, 0.3, 0.4, 0.5];
        // Rising then falling: cutoff at the peak (of the smoothed curve).
        let (s, found, _) = detect_entropy_cutoff(&sigmas, &[0.1, 0.3, 0.6, 0.5, 0.2]);
        assert!(found);
        assert_eq!(s, 0.3);
        // Strictly rising: flagged, grid end.
        let (s, found, _) = detect_entropy_cutoff(&sigmas, &[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(!found);
        assert_eq!(s, 0.5);
    }

    #[test]
    fn entropy_scan_detects_overconfidence_anomaly() {
        // A confident linear model under convex Gaussian noise: entropy
        // rises as the signal fades, then falls once large noisy logits
        // make predictions overconfident again.
        use crate::model::LinearModel;
        let shape = GridShape::new(2, 2, 1);
        let w = Grid::from_vec(shape, vec![12.0, -12.0, 12.0, -12.0]).unwrap();
        let model = LinearModel::new(w, 6.5);
        let images = vec![
            InputGrid::from_vec(shape, vec![0.9, 0.1, 0.8, 0.2]).unwrap(),
            InputGrid::from_vec(shape, vec![0.8, 0.2, 0.9, 0.1]).unwrap(),
        ];
        let sigmas: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let scan = entropy_cutoff_scan(
            &model,
            &images,
            &sigmas,
            ScanNoise::GaussianConvex,
            400,
            7,
        )
        .unwrap();
        assert!(scan.anomaly_found, "entropies {:?}", scan.entropies);
        assert!(scan.sigma_max < 1.0);
        for e in &scan.entropies {
            assert!((0.0..=(2.0f64).ln() + 1e-9).contains(e));
        }
    }

    #[test]
    fn rashomon_crossover_value_and_flip() {
        // (ω_i, ω_j) = (1, 2): σ̄ = √(ln4 / (24π²)) ≈ 0.0765.
        let expect = (4.0f64.ln() / (24.0 * PI * PI)).sqrt();
        let got = rashomon_crossover(1.0, 2.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.0765).abs() < 5e-4);

        let n = 2000;
        let sigmas: Vec<f64> = (1..=n).map(|i| i as f64 * 0.2 / n as f64).collect();
        let demo = rashomon_demo(1.0, 2.0, &sigmas);
        let flip = demo.flip_index.expect("flip expected");
        let step = 0.2 / n as f64;
        let flip_sigma = 0.5 * (sigmas[flip - 1] + sigmas[flip]);
        assert!((flip_sigma - expect).abs() <= step + 1e-12);
        // Below σ̄ the high-frequency pixel dominates; above, the low one.
        assert!(demo.curve_high[0] > demo.curve_low[0]);
        assert!(*demo.curve_high.last().unwrap() < *demo.curve_low.last().unwrap());
    }

    #[test]
    fn rashomon_equal_frequencies_have_no_crossover() {
        assert!(rashomon_crossover(1.5, 1.5).is_none());
        let sigmas: Vec<f64> = (1..=50).map(|i| i as f64 * 0.01).collect();
        let demo = rashomon_demo(1.5, 1.5, &sigmas);
        assert!(demo.flip_index.is_none());
        assert_eq!(demo.curve_low, demo.curve_high);
    }

    #[test]
    fn rashomon_flip_across_frequency_ratios() {
        for ratio in [1.5, 2.0, 4.0] {
            let (wi, wj) = (1.0, ratio);
            let expect = rashomon_crossover(wi, wj).unwrap();
            let n = 4000;
            let hi = 2.0 * expect;
            let sigmas: Vec<f64> = (1..=n).map(|i| i as f64 * hi / n as f64).collect();
            let demo = rashomon_demo(wi, wj, &sigmas);
            let flip = demo.flip_index.expect("flip expected");
            let flip_sigma = 0.5 * (sigmas[flip - 1] + sigmas[flip]);
            assert!(
                (flip_sigma - expect).abs() <= hi / n as f64 + 1e-12,
                "ratio {ratio}: {flip_sigma} vs {expect}"
            );
        }
    }

    #[test]
    fn empirical_scan_runs_and_flags_nothing_on_live_field() {
        let shape = GridShape::new(2, 2, 1);
        let field = AnalyticField::single_tone(shape, 1.0);
        let x = InputGrid::from_vec(shape, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 256,
            max_samples: 256,
            seed: 3,
            ..Default::default()
        };
        let grid = SigmaGrid::log_spaced(6, 0.05, 1.0, 1.0);
        let scan = similarity_scan_empirical(&field, &x, grid, &cfg).unwrap();
        assert_eq!(scan.scores.len(), 6);
        assert!(scan.zero_flags.iter().all(|z| !z));
    }
}
