//! Most-important-first (MoRF) insertion/deletion evaluation with
//! patch-removal accounting, AUC, and Welch t-tests between method score
//! populations.
//!
//! Patch removal grows the raw top-k mask by a k×k square structuring
//! element (dilation of the removal mask, equivalently erosion of the
//! retained region — the operation is conventionally named after the
//! latter). The grown mask usually covers more area than the dedicated
//! budget, so curves are re-parameterized on the actual removed/inserted
//! area before any AUC is computed.

use crate::error::{Error, Result};
use crate::estimator::{estimate, ranking, EstimatorConfig, MethodPreset, RankingConvention};
use crate::grid::{Grid, GridShape, InputGrid};
use crate::model::{most_probable_class, DifferentiableModel};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Square structuring element of odd side k ∈ {1, 3, 5, 7}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErosionSpec {
    pub kernel_size: usize,
}

impl ErosionSpec {
    pub fn new(kernel_size: usize) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::Config(format!("erosion kernel size must be odd, got {kernel_size}")));
        }
        Ok(Self { kernel_size })
    }

    pub fn identity() -> Self {
        Self { kernel_size: 1 }
    }
}

/// Binary dilation of a site mask by the k×k square element.
pub fn dilate_mask(mask: &[bool], height: usize, width: usize, erosion: ErosionSpec) -> Vec<bool> {
    let k = erosion.kernel_size;
    if k == 1 {
        return mask.to_vec();
    }
    let r = (k / 2) as isize;
    let mut out = vec![false; mask.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if !mask[(y * width as isize + x) as usize] {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && nx >= 0 && ny < height as isize && nx < width as isize {
                        out[(ny * width as isize + nx) as usize] = true;
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveDirection {
    Deletion,
    Insertion,
}

/// Pixel fill used for removed (deletion) or not-yet-inserted (insertion)
/// sites.
#[derive(Debug, Clone)]
pub enum FillSpec {
    Constant(f64),
    /// Per-channel mean of the evaluated image.
    ChannelMean,
    Baseline(Grid),
}

impl FillSpec {
    fn resolve(&self, x: &InputGrid) -> Grid {
        match self {
            FillSpec::Constant(c) => Grid::constant(x.shape(), *c),
            FillSpec::ChannelMean => {
                let shape = x.shape();
                let ch = shape.channels;
                let mut sums = vec![0.0; ch];
                for (i, v) in x.values().iter().enumerate() {
                    sums[i % ch] += v;
                }
                let n = (shape.len() / ch) as f64;
                Grid::from_fn(shape, |i| sums[i % ch] / n)
            }
            FillSpec::Baseline(b) => b.clone(),
        }
    }
}

/// (actual area fraction, class-probability score) series. Scores are the
/// softmax probability of the originally predicted class; the first
/// deletion point is the unmodified-image score at area 0.
#[derive(Debug, Clone)]
pub struct MorfCurve {
    pub points: Vec<(f64, f64)>,
    pub direction: CurveDirection,
    pub class_index: usize,
}

impl MorfCurve {
    /// Trapezoid integral over the actual-area axis, normalized by the
    /// covered span. A single-point curve scores its own value.
    pub fn auc(&self) -> f64 {
        auc_of_points(&self.points)
    }
}

fn auc_of_points(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if points.len() == 1 {
        return points[0].1;
    }
    let span = points.last().unwrap().0 - points[0].0;
    if span <= 0.0 {
        return points[0].1;
    }
    let mut acc = 0.0;
    for w in points.windows(2) {
        acc += (w[0].1 + w[1].1) / 2.0 * (w[1].0 - w[0].0);
    }
    acc / span
}

/// Standalone AUC entry point for externally assembled curves.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    auc_of_points(points)
}

fn validate_budgets(budgets: &[f64]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::Config("budget grid is empty".into()));
    }
    if budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("budget grid must be strictly increasing".into()));
    }
    if budgets[0] <= 0.0 || *budgets.last().unwrap() > 1.0 + 1e-12 {
        return Err(Error::Config("budgets must lie in (0, 1]".into()));
    }
    Ok(())
}

/// 100 evenly spaced budgets in (0, 1].
pub fn default_budgets() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Merges consecutive points with equal actual area, keeping the last
/// (max-budget) score.
fn dedup_by_area(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for p in points {
        match out.last_mut() {
            Some(last) if (last.0 - p.0).abs() < 1e-12 => *last = p,
            _ => out.push(p),
        }
    }
    out
}

fn class_probability(model: &dyn DifferentiableModel, x: &Grid, class: usize) -> Result<f64> {
    Ok(model.forward(x)?.log_probs[class].exp())
}

fn morf_curve(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    pixel_ranking: &[usize],
    fill: &FillSpec,
    budgets: &[f64],
    erosion: ErosionSpec,
    direction: CurveDirection,
) -> Result<MorfCurve> {
    validate_budgets(budgets)?;
    let shape = x.shape();
    let sites = shape.pixels();
    if pixel_ranking.len() != sites {
        return Err(Error::Config(format!(
            "ranking covers {} sites, input has {sites}",
            pixel_ranking.len()
        )));
    }
    let fill_grid = fill.resolve(x);
    let class = most_probable_class(&model.forward(x.as_grid())?);

    let base = match direction {
        CurveDirection::Deletion => class_probability(model, x.as_grid(), class)?,
        CurveDirection::Insertion => class_probability(model, &fill_grid, class)?,
    };
    let mut points = vec![(0.0, base)];

    let mut mask = vec![false; sites];
    let mut cursor = 0usize;
    for &b in budgets {
        let count = ((b * sites as f64).round() as usize).min(sites);
        while cursor < count {
            mask[pixel_ranking[cursor]] = true;
            cursor += 1;
        }
        let grown = dilate_mask(&mask, shape.height, shape.width, erosion);
        let actual = grown.iter().filter(|&&m| m).count() as f64 / sites as f64;
        let mut probe = match direction {
            CurveDirection::Deletion => x.as_grid().clone(),
            CurveDirection::Insertion => fill_grid.clone(),
        };
        let ch = shape.channels;
        for (site, &g) in grown.iter().enumerate() {
            if !g {
                continue;
            }
            for c in 0..ch {
                let idx = site * ch + c;
                probe.values_mut()[idx] = match direction {
                    CurveDirection::Deletion => fill_grid.values()[idx],
                    CurveDirection::Insertion => x.values()[idx],
                };
            }
        }
        points.push((actual, class_probability(model, &probe, class)?));
    }
    Ok(MorfCurve { points: dedup_by_area(points), direction, class_index: class })
}

/// Removes the most important pixels first, recording the class probability
/// against the actual (grown-mask) removed area.
pub fn morf_deletion(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    pixel_ranking: &[usize],
    fill: &FillSpec,
    budgets: &[f64],
    erosion: ErosionSpec,
) -> Result<MorfCurve> {
    morf_curve(model, x, pixel_ranking, fill, budgets, erosion, CurveDirection::Deletion)
}

/// Starts from the fill image and inserts the most important pixels first.
pub fn morf_insertion(
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    pixel_ranking: &[usize],
    fill: &FillSpec,
    budgets: &[f64],
    erosion: ErosionSpec,
) -> Result<MorfCurve> {
    morf_curve(model, x, pixel_ranking, fill, budgets, erosion, CurveDirection::Insertion)
}

/// (budget, actual area) profile of the grown masks; the actual area always
/// dominates the budget, with equality at k = 1.
pub fn mask_growth_profile(
    pixel_ranking: &[usize],
    budgets: &[f64],
    erosion: ErosionSpec,
    shape: GridShape,
) -> Result<Vec<(f64, f64)>> {
    validate_budgets(budgets)?;
    let sites = shape.pixels();
    let mut mask = vec![false; sites];
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let count = ((b * sites as f64).round() as usize).min(sites);
        while cursor < count {
            mask[pixel_ranking[cursor]] = true;
            cursor += 1;
        }
        let grown = dilate_mask(&mask, shape.height, shape.width, erosion);
        let actual = grown.iter().filter(|&&m| m).count() as f64 / sites as f64;
        out.push((count as f64 / sites as f64, actual));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TTestResult {
    pub t: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
}

/// Two-sided Welch t-test between two score populations.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(
            "Welch t-test needs at least two samples per population".into(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa2 = va / na;
    let sb2 = vb / nb;
    let se = (sa2 + sb2).sqrt();

    let (t, df, p) = if se == 0.0 {
        // Degenerate zero-variance populations: equal means are a perfect
        // null, unequal means an unambiguous rejection.
        if ma == mb {
            (0.0, (na + nb - 2.0).max(1.0), 1.0)
        } else {
            (f64::INFINITY * (ma - mb).signum(), (na + nb - 2.0).max(1.0), 0.0)
        }
    } else {
        let t = (ma - mb) / se;
        let df = (sa2 + sb2).powi(2)
            / (sa2 * sa2 / (na - 1.0) + sb2 * sb2 / (nb - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Config(format!("t distribution: {e}")))?;
        let p = 2.0 * dist.cdf(-t.abs());
        (t, df, p)
    };
    Ok(TTestResult {
        t,
        degrees_of_freedom: df,
        p_value: p.clamp(0.0, 1.0),
        mean_a: ma,
        mean_b: mb,
        stderr_a: sa2.sqrt(),
        stderr_b: sb2.sqrt(),
    })
}

/// One row of the evaluation table: per-method insertion/deletion AUC
/// statistics at one erosion size, plus the t-test against the method's
/// squared/unsquared counterpart when one exists.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub method: String,
    pub erosion_k: usize,
    pub n: usize,
    pub insertion_mean: f64,
    pub insertion_stderr: f64,
    pub deletion_mean: f64,
    pub deletion_stderr: f64,
    pub ttest_vs: Option<String>,
    pub ttest_t: Option<f64>,
    pub ttest_p: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    /// insertion AUCs per method name, for downstream statistics.
    pub insertion_aucs: std::collections::BTreeMap<String, Vec<f64>>,
    pub deletion_aucs: std::collections::BTreeMap<String, Vec<f64>>,
}

impl StudyTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "erosion_k",
            "n",
            "insertion_mean",
            "insertion_stderr",
            "deletion_mean",
            "deletion_stderr",
            "ttest_vs",
            "ttest_t",
            "ttest_p",
        ])
        .expect("csv");
        for r in &self.rows {
            w.write_record([
                r.method.as_str(),
                &r.erosion_k.to_string(),
                &r.n.to_string(),
                &format!("{:.6}", r.insertion_mean),
                &format!("{:.6}", r.insertion_stderr),
                &format!("{:.6}", r.deletion_mean),
                &format!("{:.6}", r.deletion_stderr),
                r.ttest_vs.as_deref().unwrap_or(""),
                &r.ttest_t.map(|t| format!("{t:.4}")).unwrap_or_default(),
                &r.ttest_p.map(|p| format!("{p:.3e}")).unwrap_or_default(),
            ])
            .expect("csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Pairs whose first member is compared against the second by t-test in the
/// table (gradient methods vs their squared counterparts, and the
/// consistency-ensuring variants vs plain SG²).
fn ttest_partner(method: &str, available: &[String]) -> Option<String> {
    let base = method.split('(').next().unwrap_or(method);
    let partner_base = match base {
        "sg2" => "sg",
        "ig2" => "ig",
        "xig2" => "xig",
        "sg2-opt" | "sl2" => "sg2",
        _ => return None,
    };
    available
        .iter()
        .find(|m| m.split('(').next().unwrap_or(m) == partner_base)
        .cloned()
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// A method entry for the study: either a fixed preset or one of the
/// adaptive per-image constructions.
pub enum StudyMethod {
    Preset(MethodPreset),
    /// SG² at the per-image similarity-scan argmax σ.
    Sg2Optimal { sigmas: crate::spectral::SigmaGrid },
    /// Uniform-prior lens over the σ grid.
    SpectralLens { sigmas: crate::spectral::SigmaGrid },
}

impl StudyMethod {
    pub fn name(&self) -> String {
        match self {
            StudyMethod::Preset(p) => p.name.clone(),
            StudyMethod::Sg2Optimal { .. } => "sg2-opt".into(),
            StudyMethod::SpectralLens { .. } => "sl2".into(),
        }
    }
}

/// Computes the per-image attribution for a study method and returns its
/// site ranking under the negate-for-gradient-methods convention.
fn study_ranking(
    method: &StudyMethod,
    model: &dyn DifferentiableModel,
    x: &InputGrid,
    cfg: &EstimatorConfig,
) -> Result<Vec<usize>> {
    match method {
        StudyMethod::Preset(p) => {
            let map = estimate(model, x, p, cfg)?;
            Ok(ranking(&map, RankingConvention::NegateForGradientMethods))
        }
        StudyMethod::Sg2Optimal { sigmas } => {
            let stack = crate::spectral::build_lens_stack(
                model,
                x,
                sigmas.clone(),
                crate::kernels::CombinationRule::Convex,
                cfg,
            )?;
            let scan = crate::spectral::scan_from_stack(&stack);
            let map = &stack.maps[scan.argmax_index];
            Ok(ranking(map, RankingConvention::NegateForGradientMethods))
        }
        StudyMethod::SpectralLens { sigmas } => {
            let stack = crate::spectral::build_lens_stack(
                model,
                x,
                sigmas.clone(),
                crate::kernels::CombinationRule::Convex,
                cfg,
            )?;
            let lens = crate::spectral::spectral_lens(&stack, &crate::spectral::PriorSpec::Uniform)?;
            let map = crate::estimator::AttributionMap {
                values: lens.sl,
                variance: None,
                meta: stack.maps[0].meta.clone(),
            };
            Ok(ranking(&map, RankingConvention::NegateForGradientMethods))
        }
    }
}

pub struct StudySpec<'a> {
    pub model: &'a dyn DifferentiableModel,
    pub images: &'a [InputGrid],
    pub methods: Vec<StudyMethod>,
    pub fill: FillSpec,
    pub budgets: Vec<f64>,
    pub erosion: ErosionSpec,
    pub estimator: EstimatorConfig,
}

/// Runs every method over every image, producing insertion/deletion AUC
/// statistics and the t-test columns.
pub fn evaluation_study(spec: &StudySpec) -> Result<StudyTable> {
    if spec.images.is_empty() {
        return Err(Error::Config("evaluation needs at least one image".into()));
    }
    let mut insertion_aucs = std::collections::BTreeMap::new();
    let mut deletion_aucs = std::collections::BTreeMap::new();

    for method in &spec.methods {
        let name = method.name();
        let per_image: Vec<Result<(f64, f64)>> = spec
            .images
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let cfg = EstimatorConfig {
                    seed: crate::rng::derive_seed(spec.estimator.seed, i as u64),
                    ..spec.estimator.clone()
                };
                let order = study_ranking(method, spec.model, x, &cfg)?;
                let del = morf_deletion(spec.model, x, &order, &spec.fill, &spec.budgets, spec.erosion)?;
                let ins = morf_insertion(spec.model, x, &order, &spec.fill, &spec.budgets, spec.erosion)?;
                Ok((ins.auc(), del.auc()))
            })
            .collect();
        let mut ins = Vec::with_capacity(spec.images.len());
        let mut del = Vec::with_capacity(spec.images.len());
        for r in per_image {
            let (i, d) = r?;
            ins.push(i);
            del.push(d);
        }
        insertion_aucs.insert(name.clone(), ins);
        deletion_aucs.insert(name, del);
    }

    let method_names: Vec<String> = spec.methods.iter().map(|m| m.name()).collect();
    let mut rows = Vec::new();
    for name in &method_names {
        let ins = &insertion_aucs[name];
        let del = &deletion_aucs[name];
        let (im, ise) = mean_stderr(ins);
        let (dm, dse) = mean_stderr(del);
        let partner = ttest_partner(name, &method_names);
        let (tv, tt, tp) = match &partner {
            Some(p) => {
                let t = welch_ttest(ins, &insertion_aucs[p])?;
                (Some(p.clone()), Some(t.t), Some(t.p_value))
            }
            None => (None, None, None),
        };
        rows.push(StudyRow {
            method: name.clone(),
            erosion_k: spec.erosion.kernel_size,
            n: ins.len(),
            insertion_mean: im,
            insertion_stderr: ise,
            deletion_mean: dm,
            deletion_stderr: dse,
            ttest_vs: tv,
            ttest_t: tt,
            ttest_p: tp,
        });
    }
    Ok(StudyTable { rows, insertion_aucs, deletion_aucs })
}
