//! Monte Carlo attribution engine: draws perturbations, pushes them through
//! an explainer, and keeps a Welford running mean/variance per pixel with
//! adaptive stopping.
//!
//! Determinism contract: every sample owns the RNG stream `(seed, index)`,
//! samples are reduced in fixed index-ordered chunks, and convergence checks
//! happen on a fixed sample schedule — so the result is bit-identical for
//! any worker count.

use crate::error::{Error, Result};
use crate::grid::{Grid, InputGrid};
use crate::kernels::{check_rule, upsample_mask, CombinationRule, KernelSpec, MaskSpec};
use crate::model::{most_probable_class, DifferentiableModel, Target};
use crate::rng::RngStream;
use rayon::prelude::*;

/// The per-sample quantity whose expectation forms the explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplainerKind {
    Gradient,
    SquaredGradient,
    InputTimesGradient,
    InputTimesGradientSquared,
    /// (x−s)·∇f with s the kernel's baseline.
    BaselineScaledGradient,
    /// Per-pixel finite difference (f(x̃)−f(x))/(x̃ᵢ−xᵢ); zero where the
    /// pixel is unperturbed.
    FiniteDifference,
    /// α·f(x̃) on mask kernels.
    PredictionExplainer,
}

impl ExplainerKind {
    /// Squared variants produce non-negative maps and need no ranking
    /// negation; everything else is sign-carrying.
    pub fn signed(&self) -> bool {
        !matches!(
            self,
            ExplainerKind::SquaredGradient | ExplainerKind::InputTimesGradientSquared
        )
    }
}

/// Post-expectation scaling. Input multiplication is applied after the
/// expectation, matching the original definition (x−s)·E[∇f]; for a
/// constant baseline delta the two orderings agree exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostScale {
    None,
    BaselineDelta,
    BaselineDeltaSquared,
}

/// A bound (kernel, explainer, combination rule) triple.
#[derive(Debug, Clone)]
pub struct MethodPreset {
    pub name: String,
    pub kernel: KernelSpec,
    pub explainer: ExplainerKind,
    pub rule: CombinationRule,
    pub post_scale: PostScale,
}

impl MethodPreset {
    pub fn signed(&self) -> bool {
        self.explainer.signed()
    }

    pub fn sigma(&self) -> Option<f64> {
        match &self.kernel {
            KernelSpec::Gaussian { sigma } | KernelSpec::Rect { sigma, .. } => Some(*sigma),
            _ => None,
        }
    }

    pub fn vg() -> Self {
        Self {
            name: "vg".into(),
            kernel: KernelSpec::Dirac,
            explainer: ExplainerKind::Gradient,
            rule: CombinationRule::Additive,
            post_scale: PostScale::None,
        }
    }

    pub fn vg2() -> Self {
        Self { name: "vg2".into(), explainer: ExplainerKind::SquaredGradient, ..Self::vg() }
    }

    pub fn sg(sigma: f64) -> Self {
        Self {
            name: format!("sg({sigma})"),
            kernel: KernelSpec::Gaussian { sigma },
            explainer: ExplainerKind::Gradient,
            rule: CombinationRule::Additive,
            post_scale: PostScale::None,
        }
    }

    pub fn sg2(sigma: f64) -> Self {
        Self { name: format!("sg2({sigma})"), explainer: ExplainerKind::SquaredGradient, ..Self::sg(sigma) }
    }

    /// SG² with convex signal/noise interpolation, the variant used for
    /// similarity scans and lens stacks where the input scale must stay put.
    pub fn sg2_convex(sigma: f64) -> Self {
        Self { rule: CombinationRule::Convex, ..Self::sg2(sigma) }
    }

    pub fn ig(sigma: f64, baseline: Grid) -> Self {
        Self {
            name: format!("ig({sigma})"),
            kernel: KernelSpec::Rect { sigma, baseline },
            explainer: ExplainerKind::Gradient,
            rule: CombinationRule::Damping,
            post_scale: PostScale::None,
        }
    }

    pub fn ig2(sigma: f64, baseline: Grid) -> Self {
        Self {
            name: format!("ig2({sigma})"),
            explainer: ExplainerKind::SquaredGradient,
            ..Self::ig(sigma, baseline)
        }
    }

    pub fn xig(sigma: f64, baseline: Grid) -> Self {
        Self {
            name: format!("xig({sigma})"),
            post_scale: PostScale::BaselineDelta,
            ..Self::ig(sigma, baseline)
        }
    }

    pub fn xig2(sigma: f64, baseline: Grid) -> Self {
        Self {
            name: format!("xig2({sigma})"),
            explainer: ExplainerKind::SquaredGradient,
            post_scale: PostScale::BaselineDeltaSquared,
            ..Self::ig(sigma, baseline)
        }
    }

    /// Occlusion sensitivity: one-hot patch sweep over a low-res grid.
    pub fn occlusion(rows: usize, cols: usize, baseline: Grid) -> Self {
        Self {
            name: format!("os({rows}x{cols})"),
            kernel: KernelSpec::DiracComb { mask: MaskSpec::OneHot { rows, cols }, baseline },
            explainer: ExplainerKind::PredictionExplainer,
            rule: CombinationRule::Convex,
            post_scale: PostScale::None,
        }
    }

    /// RISE-style Bernoulli masking with uniform cell probability.
    pub fn rise(rows: usize, cols: usize, p: f64, baseline: Grid) -> Self {
        Self {
            name: format!("rise({rows}x{cols},{p})"),
            kernel: KernelSpec::DiracComb {
                mask: MaskSpec::Bernoulli { rows, cols, probs: vec![p; rows * cols] },
                baseline,
            },
            explainer: ExplainerKind::PredictionExplainer,
            rule: CombinationRule::Convex,
            post_scale: PostScale::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    /// Adaptive stopping tolerance on the convergence statistic.
    pub tolerance: f64,
    /// Samples between convergence checks.
    pub check_interval: u64,
    pub min_samples: u64,
    pub max_samples: u64,
    /// Deterministic reduction chunk; results do not depend on whether it
    /// is processed by 1 or many workers.
    pub batch: usize,
    pub seed: u64,
    /// 0 uses the ambient rayon pool.
    pub workers: usize,
    pub target: Target,
    /// Opt-in clamping of draws to [0,1]. Off by default: clamping changes
    /// the effective kernel.
    pub clamp: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            tolerance: 5e-3,
            check_interval: 32,
            min_samples: 64,
            max_samples: 8192,
            batch: 32,
            seed: 0,
            workers: 0,
            target: Target::LogProbTopClass,
            clamp: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.min_samples > self.max_samples {
            return Err(Error::Config(format!(
                "min_samples {} exceeds max_samples {}",
                self.min_samples, self.max_samples
            )));
        }
        if self.check_interval == 0 || self.batch == 0 {
            return Err(Error::Config("check_interval and batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, min: u64, max: u64) -> Self {
        self.min_samples = min;
        self.max_samples = max;
        self
    }
}

#[derive(Debug, Clone)]
pub struct MapMeta {
    pub method: String,
    pub sigma: Option<f64>,
    pub class_index: usize,
    pub target: String,
    pub sample_count: u64,
    pub seed: u64,
    pub converged: bool,
    pub signed: bool,
    /// Mask cells that can never activate (h = 0): their pixels stay
    /// unattributed.
    pub unattributed_cells: usize,
}

/// Per-pixel attribution estimate with its sampling metadata. `values`
/// keeps the input's channel layout; use [`AttributionMap::ranking_view`]
/// for the channel-summed map.
#[derive(Debug, Clone)]
pub struct AttributionMap {
    pub values: Grid,
    /// Sample variance of the explainer per pixel (Welford).
    pub variance: Option<Grid>,
    pub meta: MapMeta,
}

impl AttributionMap {
    pub fn ranking_view(&self) -> Grid {
        self.values.channel_summed()
    }

    pub fn sidecar_entries(&self) -> std::collections::BTreeMap<String, String> {
        let mut m = std::collections::BTreeMap::new();
        m.insert("method".into(), self.meta.method.clone());
        if let Some(s) = self.meta.sigma {
            m.insert("sigma".into(), format!("{s}"));
        }
        m.insert("class_index".into(), format!("{}", self.meta.class_index));
        m.insert("target".into(), self.meta.target.clone());
        m.insert("sample_count".into(), format!("{}", self.meta.sample_count));
        m.insert("seed".into(), format!("{}", self.meta.seed));
        m.insert("converged".into(), format!("{}", self.meta.converged));
        m.insert("signed".into(), format!("{}", self.meta.signed));
        m.insert("unattributed_cells".into(), format!("{}", self.meta.unattributed_cells));
        m
    }
}

/// Streaming mean/variance over grids (Welford), mergeable in fixed order.
#[derive(Debug, Clone)]
pub(crate) struct WelfordGrid {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl WelfordGrid {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..sample.len() {
            let delta = sample[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (sample[i] - self.mean[i]);
        }
    }

    /// Chan parallel combine.
    pub fn merge(&mut self, other: &WelfordGrid) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn sample_variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.m2.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }
}

/// Relative L∞ distance between consecutive running means, computed on
/// max-abs-normalized maps. Scale-free and pixelwise-strict.
fn convergence_stat(prev: &[f64], curr: &[f64]) -> f64 {
    let norm = |v: &[f64]| {
        let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let (np, nc) = (norm(prev), norm(curr));
    prev.iter()
        .zip(curr)
        .map(|(p, c)| (p / np - c / nc).abs())
        .fold(0.0, f64::max)
}

fn run_on_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(f)
    }
}

/// Evaluates samples [start, end) in index-ordered chunks of `batch` and
/// merges them deterministically.
fn accumulate_range<F>(
    acc: &mut WelfordGrid,
    start: u64,
    end: u64,
    batch: usize,
    eval: &F,
) -> Result<()>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks: Vec<(u64, u64)> = {
        let mut v = Vec::new();
        let mut a = start;
        while a < end {
            let b = (a + batch as u64).min(end);
            v.push((a, b));
            a = b;
        }
        v
    };
    let partials: Vec<Result<WelfordGrid>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut w = WelfordGrid::new(acc.mean.len());
            for idx in a..b {
                let sample = eval(idx)?;
                w.push(&sample);
            }
            Ok(w)
        })
        .collect();
    for p in partials {
        acc.merge(&p?);
    }
    Ok(())
}

struct AdaptiveOutcome {
    stats: WelfordGrid,
    converged: bool,
}

/// Core adaptive loop: runs to each check boundary, stops when the
/// convergence statistic drops below tolerance (after min_samples).
fn adaptive_mean<F>(len: usize, cfg: &EstimatorConfig, eval: F) -> Result<AdaptiveOutcome>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
{
    run_on_pool(cfg.workers, move || -> Result<AdaptiveOutcome> {
        let mut acc = WelfordGrid::new(len);
        let mut prev: Option<Vec<f64>> = None;
        let mut converged = false;
        let mut done = 0u64;
        while done < cfg.max_samples {
            let next = (done + cfg.check_interval).min(cfg.max_samples);
            accumulate_range(&mut acc, done, next, cfg.batch, &eval)?;
            done = next;
            if let Some(p) = &prev {
                let stat = convergence_stat(p, &acc.mean);
                if stat < cfg.tolerance && done >= cfg.min_samples {
                    converged = true;
                    break;
                }
            }
            prev = Some(acc.mean.clone());
        }
        Ok(AdaptiveOutcome { stats: acc, converged })
    })
}

/// Resolves the explanation target to a concrete class, fixing it to the
/// most probable class of the unperturbed input when unspecified.
fn resolve_target(
    model: &dyn DifferentiableModel,
    x: &Grid,
    target: Target,
) -> Result<(Target, usize, &'static str)> {
    match target {
        Target::LogProbTopClass => {
            let class = most_probable_class(&model.forward(x)?);
            Ok((Target::LogProb(class), class, "log_prob"))
        }
        Target::LogProb(c) => Ok((Target::LogProb(c), c, "log_prob")),
        Target::Score(c) => Ok((Target::Score(c), c, "score")),
    }
}

/// Number of mask cells that can never fire.
fn dead_cells(kernel: &KernelSpec) -> usize {
    match kernel {
        KernelSpec::DiracComb { mask: MaskSpec::Bernoulli { probs, .. }, .. } => {
            probs.iter().filter(|&&h| h == 0.0).count()
        }
        _ => 0,
    }
}

/// Runs the Monte Carlo estimate of a method preset at `x`.
pub fn estimate(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    preset: &MethodPreset,
    cfg: &EstimatorConfig,
) -> Result<AttributionMap> {
    cfg.validate()?;
    preset.kernel.validate(x.shape())?;
    check_rule(&preset.kernel, preset.rule)?;
    let (target, class_index, target_tag) = resolve_target(model, x.as_grid(), cfg.target)?;
    let shape = x.shape();
    let len = shape.len();

    let baseline = match &preset.kernel {
        KernelSpec::Rect { baseline, .. } | KernelSpec::DiracComb { baseline, .. } => Some(baseline),
        _ => None,
    };
    if matches!(preset.post_scale, PostScale::BaselineDelta | PostScale::BaselineDeltaSquared)
        && baseline.is_none()
    {
        return Err(Error::Config(format!(
            "preset {} wants baseline post-scaling but its kernel has no baseline",
            preset.name
        )));
    }
    if preset.explainer == ExplainerKind::BaselineScaledGradient && baseline.is_none() {
        return Err(Error::Config("baseline-scaled gradient needs a kernel with a baseline".into()));
    }
    let base_value = model.value(x.as_grid(), target)?;

    let eval = |idx: u64| -> Result<Vec<f64>> {
        let mut rng = RngStream::new(cfg.seed, idx);
        let (mut draw, alpha) =
            draw_with_mask(&preset.kernel, x.as_grid(), preset.rule, &mut rng, idx)?;
        if cfg.clamp {
            draw.clamp(0.0, 1.0);
        }
        let out = explainer_value(
            model,
            x.as_grid(),
            &draw,
            alpha.as_deref(),
            baseline.map(|b| b.values()),
            preset.explainer,
            target,
            base_value,
        )?;
        for v in &out {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { sample_index: idx });
            }
        }
        Ok(out)
    };

    // A Dirac kernel has a deterministic integrand: one sample suffices.
    let outcome = if matches!(preset.kernel, KernelSpec::Dirac) {
        let mut acc = WelfordGrid::new(len);
        acc.push(&eval(0)?);
        AdaptiveOutcome { stats: acc, converged: true }
    } else {
        adaptive_mean(len, cfg, eval)?
    };
    let samples = outcome.stats.count;

    let mut values = Grid::from_vec(shape, outcome.stats.mean.clone())?;
    let variance = Grid::from_vec(shape, outcome.stats.sample_variance())?;
    apply_post_scale(&mut values, preset.post_scale, x.as_grid(), baseline);

    Ok(AttributionMap {
        values,
        variance: Some(variance),
        meta: MapMeta {
            method: preset.name.clone(),
            sigma: preset.sigma(),
            class_index,
            target: target_tag.into(),
            sample_count: samples,
            seed: cfg.seed,
            converged: outcome.converged,
            signed: preset.signed(),
            unattributed_cells: dead_cells(&preset.kernel),
        },
    })
}

fn apply_post_scale(values: &mut Grid, scale: PostScale, x: &Grid, baseline: Option<&Grid>) {
    match scale {
        PostScale::None => {}
        PostScale::BaselineDelta => {
            let b = baseline.expect("checked in estimate");
            for (i, v) in values.values_mut().iter_mut().enumerate() {
                *v *= x.values()[i] - b.values()[i];
            }
        }
        PostScale::BaselineDeltaSquared => {
            let b = baseline.expect("checked in estimate");
            for (i, v) in values.values_mut().iter_mut().enumerate() {
                let d = x.values()[i] - b.values()[i];
                *v *= d * d;
            }
        }
    }
}

/// Draws one perturbation, returning the per-site mask for comb kernels so
/// mask-based explainers can reuse the exact same draw.
pub fn draw_with_mask(
    kernel: &KernelSpec,
    x: &Grid,
    rule: CombinationRule,
    rng: &mut RngStream,
    sample_index: u64,
) -> Result<(Grid, Option<Vec<f64>>)> {
    if let KernelSpec::DiracComb { mask, baseline } = kernel {
        check_rule(kernel, rule)?;
        let (rows, cols) = mask.dims();
        let low = mask.draw(sample_index, rng);
        let alpha = upsample_mask(&low, rows, cols, x.shape());
        let mut out = x.clone();
        let ch = x.shape().channels;
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let a = alpha[i / ch];
            *v = (1.0 - a) * *v + a * baseline.values()[i];
        }
        Ok((out, Some(alpha)))
    } else {
        crate::kernels::sample_perturbation(kernel, x, rule, rng, sample_index).map(|g| (g, None))
    }
}

#[allow(clippy::too_many_arguments)]
fn explainer_value(
    model: &dyn DifferentiableModel,
    x: &Grid,
    draw: &Grid,
    alpha_sites: Option<&[f64]>,
    baseline: Option<&[f64]>,
    kind: ExplainerKind,
    target: Target,
    base_value: f64,
) -> Result<Vec<f64>> {
    let ch = x.shape().channels;
    match kind {
        ExplainerKind::Gradient => Ok(model.grad(draw, target)?.values().to_vec()),
        ExplainerKind::SquaredGradient => {
            Ok(model.grad(draw, target)?.values().iter().map(|g| g * g).collect())
        }
        ExplainerKind::InputTimesGradient => {
            let g = model.grad(draw, target)?;
            Ok(g.values().iter().zip(x.values()).map(|(g, x)| g * x).collect())
        }
        ExplainerKind::InputTimesGradientSquared => {
            let g = model.grad(draw, target)?;
            Ok(g.values()
                .iter()
                .zip(x.values())
                .map(|(g, x)| {
                    let v = g * x;
                    v * v
                })
                .collect())
        }
        ExplainerKind::BaselineScaledGradient => {
            let b = baseline.ok_or_else(|| Error::Config("missing baseline".into()))?;
            let g = model.grad(draw, target)?;
            Ok(g.values()
                .iter()
                .enumerate()
                .map(|(i, g)| (x.values()[i] - b[i]) * g)
                .collect())
        }
        ExplainerKind::FiniteDifference => {
            let v = model.value(draw, target)?;
            Ok(x.values()
                .iter()
                .zip(draw.values())
                .map(|(xi, di)| {
                    let delta = di - xi;
                    if delta == 0.0 {
                        0.0
                    } else {
                        (v - base_value) / delta
                    }
                })
                .collect())
        }
        ExplainerKind::PredictionExplainer => {
            let alpha = alpha_sites
                .ok_or_else(|| Error::Config("prediction explainer needs a mask kernel".into()))?;
            let v = model.value(draw, target)?;
            Ok((0..x.len()).map(|i| alpha[i / ch] * v).collect())
        }
    }
}

/// Shared-sample evaluation of both sides of the masked prediction
/// identity: E[αf(x̃)] = E[α(x̃−x)Δf(x̃)] + E[α]·f(x), per pixel.
///
/// The finite-difference term is defined as 0 where x̃ᵢ = xᵢ; pixels whose
/// baseline equals the input are therefore outside the identity's reach and
/// should not be masked in exactness checks.
#[derive(Debug, Clone)]
pub struct MaskedIdentityRun {
    pub lhs: Grid,
    pub rhs: Grid,
    pub mean_mask: Grid,
    pub base_value: f64,
    pub samples: u64,
}

impl MaskedIdentityRun {
    pub fn max_abs_gap(&self) -> f64 {
        self.lhs
            .values()
            .iter()
            .zip(self.rhs.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn masked_identity_run(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    mask: MaskSpec,
    baseline: Grid,
    samples: u64,
    cfg: &EstimatorConfig,
) -> Result<MaskedIdentityRun> {
    let kernel = KernelSpec::DiracComb { mask, baseline };
    kernel.validate(x.shape())?;
    let (target, _, _) = resolve_target(model, x.as_grid(), cfg.target)?;
    let base_value = model.value(x.as_grid(), target)?;
    let len = x.len();
    let ch = x.shape().channels;

    let mut lhs = vec![0.0; len];
    let mut rhs = vec![0.0; len];
    let mut mean_mask = vec![0.0; len];
    for idx in 0..samples {
        let mut rng = RngStream::new(cfg.seed, idx);
        let (draw, alpha) =
            draw_with_mask(&kernel, x.as_grid(), CombinationRule::Convex, &mut rng, idx)?;
        let alpha = alpha.expect("comb kernel yields mask");
        let v = model.value(&draw, target)?;
        for i in 0..len {
            let a = alpha[i / ch];
            lhs[i] += a * v;
            mean_mask[i] += a;
            let delta = draw.values()[i] - x.values()[i];
            if delta != 0.0 {
                rhs[i] += a * delta * ((v - base_value) / delta);
            }
        }
    }
    let n = samples as f64;
    for i in 0..len {
        lhs[i] /= n;
        mean_mask[i] /= n;
        rhs[i] = rhs[i] / n + mean_mask[i] * base_value;
    }
    Ok(MaskedIdentityRun {
        lhs: Grid::from_vec(x.shape(), lhs)?,
        rhs: Grid::from_vec(x.shape(), rhs)?,
        mean_mask: Grid::from_vec(x.shape(), mean_mask)?,
        base_value,
        samples,
    })
}

/// RISE-style map E[α f(x̃)] for a mask spec against a baseline.
pub fn prediction_explain(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    mask: MaskSpec,
    baseline: Grid,
    cfg: &EstimatorConfig,
) -> Result<AttributionMap> {
    let preset = MethodPreset {
        name: "prediction".into(),
        kernel: KernelSpec::DiracComb { mask, baseline },
        explainer: ExplainerKind::PredictionExplainer,
        rule: CombinationRule::Convex,
        post_scale: PostScale::None,
    };
    estimate(model, x, &preset, cfg)
}

/// How attribution values translate into a removal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingConvention {
    /// Sign-carrying methods are negated before ranking (their spectral
    /// form carries a leading minus); squared maps rank as-is.
    NegateForGradientMethods,
    Raw,
    Absolute,
}

/// Total order over spatial sites, most important first; ties broken by
/// row-major index.
pub fn ranking(map: &AttributionMap, convention: RankingConvention) -> Vec<usize> {
    let view = map.ranking_view();
    let key: Vec<f64> = view
        .values()
        .iter()
        .map(|&v| match convention {
            RankingConvention::NegateForGradientMethods => {
                if map.meta.signed {
                    -v
                } else {
                    v
                }
            }
            RankingConvention::Raw => v,
            RankingConvention::Absolute => v.abs(),
        })
        .collect();
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| key[b].partial_cmp(&key[a]).unwrap().then(a.cmp(&b)));
    order
}

/// SmoothGrad σ heuristic: (max(x)−min(x))·0.1. Returns the value and a
/// degenerate flag for constant images (σ = 0 is unusable for a Gaussian
/// kernel).
pub fn sg_sigma_heuristic(x: &InputGrid) -> (f64, bool) {
    let range = x.max() - x.min();
    let sigma = range * 0.1;
    (sigma, sigma == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::model::{AnalyticField, LinearModel};
    use std::f64::consts::PI;

    fn linear_fixture() -> (LinearModel, InputGrid) {
        let shape = GridShape::new(2, 2, 1);
        let w = Grid::from_vec(shape, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let x = InputGrid::from_vec(shape, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        (LinearModel::new(w, 0.0), x)
    }

    #[test]
    fn vg_on_linear_score_is_weights_in_one_sample() {
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig { target: Target::Score(1), ..Default::default() };
        let map = estimate(&model, &x, &MethodPreset::vg(), &cfg).unwrap();
        assert_eq!(&map.values, model.weights());
        assert_eq!(map.meta.sample_count, 1);
        assert!(map.meta.converged);
    }

    #[test]
    fn sg_on_linear_score_is_weights_for_any_sigma() {
        // Constant integrand: zero-variance Monte Carlo.
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig { target: Target::Score(1), ..Default::default() };
        for sigma in [0.05, 0.3, 1.0] {
            let map = estimate(&model, &x, &MethodPreset::sg(sigma), &cfg).unwrap();
            for (v, w) in map.values.values().iter().zip(model.weights().values()) {
                assert!((v - w).abs() < 1e-12);
            }
            assert!(map.meta.converged);
            assert_eq!(map.meta.sample_count, cfg.min_samples);
        }
    }

    #[test]
    fn sg2_single_tone_matches_gaussian_trig_expectation() {
        // E[(∇f)²] = 2π²ω₀²(1 − cos(4πω₀x)·e^{−8π²σ²ω₀²}) per pixel.
        let omega0 = 1.0;
        let sigma = 0.1;
        let shape = GridShape::new(1, 2, 1);
        let field = AnalyticField::single_tone(shape, omega0);
        let x = InputGrid::from_vec(shape, vec![0.3, 0.65]).unwrap();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 40_000,
            max_samples: 40_000,
            check_interval: 4096,
            tolerance: 1e-12,
            seed: 5,
            ..Default::default()
        };
        let map = estimate(&field, &x, &MethodPreset::sg2(sigma), &cfg).unwrap();
        for (i, &xv) in x.values().iter().enumerate() {
            let damp = (-8.0 * PI * PI * sigma * sigma * omega0 * omega0).exp();
            let expect =
                2.0 * PI * PI * omega0 * omega0 * (1.0 - (4.0 * PI * omega0 * xv).cos() * damp);
            let got = map.values.values()[i];
            assert!((got - expect).abs() / expect < 0.02, "pixel {i}: {got} vs {expect}");
        }
    }

    #[test]
    fn estimates_are_bit_identical_across_worker_counts() {
        let shape = GridShape::new(2, 2, 1);
        let field = AnalyticField::single_tone(shape, 2.0);
        let x = InputGrid::from_vec(shape, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let base = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 256,
            max_samples: 256,
            seed: 11,
            ..Default::default()
        };
        let reference = estimate(&field, &x, &MethodPreset::sg2(0.2), &base).unwrap();
        for workers in [1, 2, 8] {
            let cfg = EstimatorConfig { workers, ..base.clone() };
            let map = estimate(&field, &x, &MethodPreset::sg2(0.2), &cfg).unwrap();
            assert_eq!(map.values.values(), reference.values.values(), "workers={workers}");
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        // Two pixels at different phases: the normalized map keeps moving
        // at any feasible sample count, so a 1e-9 tolerance cannot be met.
        let shape = GridShape::new(1, 2, 1);
        let field = AnalyticField::single_tone(shape, 4.0);
        let x = InputGrid::from_vec(shape, vec![0.37, 0.11]).unwrap();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            tolerance: 1e-9,
            min_samples: 32,
            max_samples: 128,
            seed: 1,
            ..Default::default()
        };
        let map = estimate(&field, &x, &MethodPreset::sg2(0.3), &cfg).unwrap();
        assert!(!map.meta.converged);
        assert_eq!(map.meta.sample_count, 128);
    }

    #[test]
    fn all_replace_mask_with_identity_baseline_gives_base_value() {
        // α ≡ 1 with baseline = x leaves the input unperturbed: the map is
        // f(x) everywhere.
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 8,
            max_samples: 8,
            ..Default::default()
        };
        let mask = MaskSpec::Bernoulli { rows: 1, cols: 1, probs: vec![1.0] };
        let map = prediction_explain(&model, &x, mask, x.as_grid().clone(), &cfg).unwrap();
        let f_x = model.score(x.as_grid());
        for v in map.values.values() {
            assert!((v - f_x).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_identity_holds_on_shared_samples() {
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig { target: Target::Score(1), seed: 3, ..Default::default() };
        let mask = MaskSpec::Bernoulli { rows: 2, cols: 2, probs: vec![0.5, 0.25, 0.75, 0.5] };
        let run =
            masked_identity_run(&model, &x, mask, Grid::zeros(x.shape()), 500, &cfg).unwrap();
        assert!(run.max_abs_gap() < 1e-10, "gap {}", run.max_abs_gap());
    }

    #[test]
    fn zero_probability_cells_are_reported_unattributed() {
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 64,
            max_samples: 64,
            ..Default::default()
        };
        let mask = MaskSpec::Bernoulli { rows: 2, cols: 2, probs: vec![0.5, 0.0, 0.5, 0.0] };
        let map = prediction_explain(&model, &x, mask, Grid::zeros(x.shape()), &cfg).unwrap();
        assert_eq!(map.meta.unattributed_cells, 2);
        // Dead cells produce exactly zero attribution.
        assert_eq!(map.values.get(0, 1, 0), 0.0);
        assert_eq!(map.values.get(1, 1, 0), 0.0);
    }

    #[test]
    fn occlusion_sweeps_each_patch_once_per_epoch() {
        let (model, x) = linear_fixture();
        let cfg = EstimatorConfig {
            target: Target::Score(1),
            min_samples: 4,
            max_samples: 4,
            check_interval: 4,
            ..Default::default()
        };
        let preset = MethodPreset::occlusion(2, 2, Grid::zeros(x.shape()));
        let map = estimate(&model, &x, &preset, &cfg).unwrap();
        // With 4 samples, every site was replaced exactly once; each pixel's
        // attribution is f(x with that site zeroed)/4.
        for y in 0..2 {
            for xx in 0..2 {
                let mut xp = x.as_grid().clone();
                xp.set(y, xx, 0, 0.0);
                let expect = model.score(&xp) / 4.0;
                assert!((map.values.get(y, xx, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ranking_conventions() {
        let shape = GridShape::new(1, 3, 1);
        let mk = |signed: bool, values: Vec<f64>| AttributionMap {
            values: Grid::from_vec(shape, values).unwrap(),
            variance: None,
            meta: MapMeta {
                method: "t".into(),
                sigma: None,
                class_index: 0,
                target: "score".into(),
                sample_count: 1,
                seed: 0,
                converged: true,
                signed,
                unattributed_cells: 0,
            },
        };
        // Squared map: descending by value.
        assert_eq!(
            ranking(&mk(false, vec![0.1, 0.5, 0.3]), RankingConvention::NegateForGradientMethods),
            vec![1, 2, 0]
        );
        // Gradient map under the default convention: descending by −value.
        assert_eq!(
            ranking(&mk(true, vec![0.1, 0.5, 0.3]), RankingConvention::NegateForGradientMethods),
            vec![0, 2, 1]
        );
        // All-equal map: identity permutation by the tie rule.
        assert_eq!(ranking(&mk(false, vec![0.2, 0.2, 0.2]), RankingConvention::Raw), vec![0, 1, 2]);
        assert_eq!(
            ranking(&mk(true, vec![-0.9, 0.5, 0.1]), RankingConvention::Absolute),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn sg_heuristic_values() {
        let shape = GridShape::new(1, 2, 1);
        let full = InputGrid::from_vec(shape, vec![0.0, 1.0]).unwrap();
        assert_eq!(sg_sigma_heuristic(&full), (0.1, false));
        let constant = InputGrid::from_vec(shape, vec![0.4, 0.4]).unwrap();
        assert_eq!(sg_sigma_heuristic(&constant), (0.0, true));
        let partial = InputGrid::from_vec(shape, vec![0.2, 0.7]).unwrap();
        let (s, d) = sg_sigma_heuristic(&partial);
        assert!((s - 0.05).abs() < 1e-12 && !d);
    }

    #[test]
    fn welford_merge_matches_sequential() {
        let data: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let mut seq = WelfordGrid::new(2);
        for d in &data {
            seq.push(d);
        }
        let mut a = WelfordGrid::new(2);
        let mut b = WelfordGrid::new(2);
        for d in &data[..37] {
            a.push(d);
        }
        for d in &data[37..] {
            b.push(d);
        }
        a.merge(&b);
        assert_eq!(a.count, seq.count);
        for i in 0..2 {
            assert!((a.mean[i] - seq.mean[i]).abs() < 1e-12);
            assert!((a.sample_variance()[i] - seq.sample_variance()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = EstimatorConfig { min_samples: 100, max_samples: 10, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EstimatorConfig { tolerance: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
