//! Evaluation harness: solver-effort vectors, hardness ratio, MMD between
//! instance sets, feature-based effort prediction and the augmentation
//! benchmark.
//!
//! Solver effort is measured in conflicts, which is machine independent.
//! Wall-clock seconds are recorded alongside but never enter a metric.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::cnf::Cnf;
use crate::sat::{self, Branching, PhasePolicy, SolverConfig, Status};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("mean effort of the reference set is zero")]
    ZeroReference,
    #[error("ridge regression needs lambda > 0 and at least two rows")]
    BadRidge,
    #[error("signed-rank test needs two samples of equal length >= 5 (got {0} and {1})")]
    BadSample(usize, usize),
    #[error("unknown portfolio preset '{0}'")]
    UnknownPreset(String),
    #[error("pool of {pool} instances is too small for {size} training instances")]
    PoolTooSmall { pool: usize, size: usize },
    #[error("augmenter failed: {0}")]
    Augmenter(String),
}

/// A named solver configuration in the portfolio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub config: SolverConfig,
}

pub const PRESET_NAMES: [&str; 4] = ["vsids-neg", "vsids-pos", "lowest", "random"];

pub fn preset(name: &str) -> Result<Preset, EvalError> {
    let base = SolverConfig::default();
    let config = match name {
        "vsids-neg" => SolverConfig { branching: Branching::Vsids, phase: PhasePolicy::AlwaysFalse, ..base },
        "vsids-pos" => SolverConfig { branching: Branching::Vsids, phase: PhasePolicy::AlwaysTrue, ..base },
        "lowest" => SolverConfig { branching: Branching::LowestIndex, phase: PhasePolicy::Saved, ..base },
        "random" => SolverConfig { branching: Branching::Random, phase: PhasePolicy::Saved, rng_seed: 1, ..base },
        "default" => base,
        _ => return Err(EvalError::UnknownPreset(name.to_string())),
    };
    Ok(Preset { name: name.to_string(), config })
}

pub fn default_portfolio() -> Vec<Preset> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}

/// Comma-separated preset names.
pub fn parse_portfolio(list: &str) -> Result<Vec<Preset>, EvalError> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(preset).collect()
}

/// Solver effort under each portfolio preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardnessVector {
    pub conflicts: Vec<u64>,
    pub seconds: Vec<f64>,
    /// Presets that hit the conflict limit.
    pub unknown: Vec<bool>,
}

impl HardnessVector {
    pub fn len(&self) -> usize {
        self.conflicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conflicts.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        !self.unknown.iter().any(|&u| u)
    }

    pub fn values(&self) -> Vec<f64> {
        self.conflicts.iter().map(|&c| c as f64).collect()
    }
}

pub fn hardness_vector(cnf: &Cnf, portfolio: &[Preset], conflict_limit: Option<u64>) -> HardnessVector {
    let mut v = HardnessVector { conflicts: vec![], seconds: vec![], unknown: vec![] };
    for p in portfolio {
        let res = sat::solve(cnf, &[], &p.config.with_conflict_limit(conflict_limit));
        v.conflicts.push(res.stats.conflicts);
        v.seconds.push(res.stats.wall_seconds);
        v.unknown.push(matches!(res.status, Status::Unknown));
    }
    v
}

/// Hardness vectors of many instances, computed in parallel, in input order.
pub fn hardness_vectors(cnfs: &[Cnf], portfolio: &[Preset], conflict_limit: Option<u64>) -> Vec<HardnessVector> {
    cnfs.par_iter().map(|c| hardness_vector(c, portfolio, conflict_limit)).collect()
}

fn complete(vs: &[HardnessVector]) -> Vec<&HardnessVector> {
    let kept: Vec<&HardnessVector> = vs.iter().filter(|v| v.is_complete()).collect();
    if kept.len() < vs.len() {
        warn!("{} instance(s) hit the conflict limit and are left out", vs.len() - kept.len());
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardnessBand {
    /// At least 80% of the reference effort.
    Hard,
    Moderate,
    /// Below 5% of the reference effort.
    Collapse,
}

impl HardnessBand {
    pub fn of(percent: f64) -> HardnessBand {
        if percent >= 80.0 {
            HardnessBand::Hard
        } else if percent < 5.0 {
            HardnessBand::Collapse
        } else {
            HardnessBand::Moderate
        }
    }
}

fn mean_effort(vs: &[&HardnessVector], preset: Option<usize>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in vs {
        match preset {
            Some(i) => {
                sum += v.conflicts[i] as f64;
                count += 1;
            }
            None => {
                sum += v.conflicts.iter().map(|&c| c as f64).sum::<f64>();
                count += v.len();
            }
        }
    }
    sum / count as f64
}

fn ratio_impl(generated: &[HardnessVector], original: &[HardnessVector], preset: Option<usize>) -> Result<f64, EvalError> {
    let g = complete(generated);
    let o = complete(original);
    if g.is_empty() || o.is_empty() {
        return Err(EvalError::Empty);
    }
    let d = o[0].len();
    if let Some(v) = g.iter().chain(&o).find(|v| v.len() != d) {
        return Err(EvalError::Dimension(d, v.len()));
    }
    let reference = mean_effort(&o, preset);
    if reference == 0.0 {
        return Err(EvalError::ZeroReference);
    }
    Ok(100.0 * mean_effort(&g, preset) / reference)
}

/// Mean effort of `generated` as a percentage of the mean effort of
/// `original`, over all entries of all complete vectors.
pub fn hardness_ratio(generated: &[HardnessVector], original: &[HardnessVector]) -> Result<f64, EvalError> {
    ratio_impl(generated, original, None)
}

/// Hardness ratio restricted to portfolio entry `preset`.
pub fn preset_hardness_ratio(
    generated: &[HardnessVector],
    original: &[HardnessVector],
    preset: usize,
) -> Result<f64, EvalError> {
    ratio_impl(generated, original, Some(preset))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mmd {
    /// Squared MMD estimate.
    pub value: f64,
    pub bandwidth: f64,
    /// All pooled points coincide; the value is defined as 0.
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Squared maximum mean discrepancy between two samples with a Gaussian
/// kernel.
///
/// Entries are mapped through `log1p` and standardized per dimension over
/// the pooled sample; the bandwidth is the median pooled pairwise distance.
/// Equal sample sizes use the paired U-statistic (exactly zero for identical
/// samples), unequal sizes the standard unbiased estimate, and a singleton
/// on either side the biased estimate.
pub fn mmd(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Mmd, EvalError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(EvalError::Empty);
    }
    let d = xs[0].len();
    if let Some(v) = xs.iter().chain(ys).find(|v| v.len() != d) {
        return Err(EvalError::Dimension(d, v.len()));
    }
    let mut pooled: Vec<Vec<f64>> = xs.iter().chain(ys).map(|v| v.iter().map(|x| x.ln_1p()).collect()).collect();
    let total = pooled.len() as f64;
    for k in 0..d {
        let mean = pooled.iter().map(|v| v[k]).sum::<f64>() / total;
        let var = pooled.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / total;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in &mut pooled {
            v[k] = (v[k] - mean) / sd;
        }
    }
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(&pooled[i], &pooled[j]).sqrt());
        }
    }
    let bandwidth = if dists.is_empty() { 0.0 } else { median(&mut dists) };
    if bandwidth == 0.0 {
        return Ok(Mmd { value: 0.0, bandwidth, degenerate: true });
    }
    let (x, y) = pooled.split_at(xs.len());
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp();
    let (m, n) = (x.len(), y.len());
    let value = if m == n && m >= 2 {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    s += k(&x[i], &x[j]) + k(&y[i], &y[j]) - k(&x[i], &y[j]) - k(&x[j], &y[i]);
                }
            }
        }
        s / (m * (m - 1)) as f64
    } else {
        let within = |s: &[Vec<f64>], unbiased: bool| {
            let len = s.len();
            let mut acc = 0.0;
            for i in 0..len {
                for j in 0..len {
                    if i != j || !unbiased {
                        acc += k(&s[i], &s[j]);
                    }
                }
            }
            if unbiased {
                acc / (len * (len - 1)) as f64
            } else {
                acc / (len * len) as f64
            }
        };
        let unbiased = m >= 2 && n >= 2;
        let cross: f64 = x.iter().flat_map(|a| y.iter().map(move |b| (a, b))).map(|(a, b)| k(a, b)).sum();
        within(x, unbiased) + within(y, unbiased) - 2.0 * cross / (m * n) as f64
    };
    Ok(Mmd { value, bandwidth, degenerate: false })
}

pub const FEATURE_NAMES: [&str; 15] = [
    "num_vars",
    "num_clauses",
    "clause_var_ratio",
    "clause_len_mean",
    "clause_len_var",
    "positive_fraction",
    "horn_fraction",
    "binary_fraction",
    "long_fraction",
    "var_degree_mean",
    "var_degree_max",
    "var_degree_var",
    "lit_degree_mean",
    "lit_degree_max",
    "lit_degree_var",
];

fn mean_var_max(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let max = values.fold(f64::NEG_INFINITY, f64::max);
    (mean, var, max)
}

/// Fixed-length instance statistics, ordered as [`FEATURE_NAMES`].
pub fn extract_features(cnf: &Cnf) -> Vec<f64> {
    let nv = cnf.num_vars() as usize;
    let nc = cnf.num_clauses();
    let mut var_deg = vec![0u32; nv];
    let mut lit_deg = vec![0u32; 2 * nv];
    let (mut positive, mut horn, mut binary, mut long) = (0usize, 0usize, 0usize, 0usize);
    for c in cnf.clauses() {
        let pos = c.literals().iter().filter(|l| l.is_positive()).count();
        positive += pos;
        horn += usize::from(pos <= 1);
        binary += usize::from(c.len() == 2);
        long += usize::from(c.len() > 3);
        for l in c.literals() {
            var_deg[l.var_index()] += 1;
            lit_deg[l.code() as usize] += 1;
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (len_mean, len_var, _) = mean_var_max(cnf.clauses().iter().map(|c| c.len() as f64));
    let (vd_mean, vd_var, vd_max) = mean_var_max(var_deg.iter().map(|&d| d as f64));
    let (ld_mean, ld_var, ld_max) = mean_var_max(lit_deg.iter().map(|&d| d as f64));
    vec![
        nv as f64,
        nc as f64,
        frac(nc, nv),
        len_mean,
        len_var,
        frac(positive, cnf.num_literals()),
        frac(horn, nc),
        frac(binary, nc),
        frac(long, nc),
        vd_mean,
        vd_max,
        vd_var,
        ld_mean,
        ld_max,
        ld_var,
    ]
}

/// Ridge regression on standardized features.
///
/// Minimizes `mean((y - Xw - b)^2) + lambda * |w|^2` over standardized
/// columns, so repeating every training row leaves the fit unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub lambda: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Ridge, EvalError> {
        if !(lambda > 0.0) || x.len() < 2 || x.len() != y.len() {
            return Err(EvalError::BadRidge);
        }
        let n = x.len();
        let d = x[0].len();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(EvalError::Dimension(d, r.len()));
        }
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for k in 0..d {
            mean[k] = x.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let var = x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n as f64;
            scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let z = DMatrix::from_fn(n, d, |i, k| (x[i][k] - mean[k]) / scale[k]);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut a = z.transpose() * &z / n as f64;
        for k in 0..d {
            a[(k, k)] += lambda;
        }
        let rhs = z.transpose() * yc / n as f64;
        let w = a.cholesky().ok_or(EvalError::BadRidge)?.solve(&rhs);
        Ok(Ridge { lambda, mean, scale, weights: w.iter().copied().collect(), intercept: y_mean })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter().enumerate().map(|(k, v)| (v - self.mean[k]) / self.scale[k] * self.weights[k]).sum::<f64>()
    }

    /// Weights on the original (unstandardized) feature scale.
    pub fn raw_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect()
    }
}

pub fn mae(predicted: &[f64], actual: &[f64]) -> f64 {
    assert_eq!(predicted.len(), actual.len());
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / predicted.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Two-sided p-value.
    pub p_value: f64,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub all_zero: bool,
}

/// Differences smaller than this fraction of the operands count as zero.
const ZERO_TOLERANCE: f64 = 1e-9;

/// Two-sided Wilcoxon signed-rank test of `a` against `b`.
///
/// Zero differences are dropped and tied magnitudes get mid-ranks. The null
/// distribution is enumerated exactly for up to 20 non-zero differences;
/// above that a normal approximation with tie and continuity corrections is
/// used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon, EvalError> {
    if a.len() != b.len() || a.len() < 5 {
        return Err(EvalError::BadSample(a.len(), b.len()));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| (*x - *y).abs() > ZERO_TOLERANCE * x.abs().max(y.abs()))
        .map(|(x, y)| x - y)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(Wilcoxon { p_value: 1.0, w_plus: 0.0, n: 0, exact: true, all_zero: true });
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    // Doubled mid-ranks are integers.
    let mut ranks2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        for r in &mut ranks2[i..=j] {
            *r = r2;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w2: u64 = diffs.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_plus = w2 as f64 / 2.0;
    if n <= 20 {
        let total2: u64 = ranks2.iter().sum();
        let mut counts = vec![0f64; total2 as usize + 1];
        counts[0] = 1.0;
        for &r in &ranks2 {
            for s in (r as usize..=total2 as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(Wilcoxon { p_value: p, w_plus, n, exact: true, all_zero: false });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(Wilcoxon { p_value: p, w_plus, n, exact: false, all_zero: false })
}

/// `counts[p][r]` is the number of instances on which preset `p` has rank
/// `r + 1`, where rank 1 is the least effort and tied presets share the
/// best rank among them.
pub fn rank_histogram(vectors: &[HardnessVector]) -> Result<Vec<Vec<usize>>, EvalError> {
    let first = vectors.first().ok_or(EvalError::Empty)?;
    let d = first.len();
    let mut counts = vec![vec![0usize; d]; d];
    for v in vectors {
        if v.len() != d {
            return Err(EvalError::Dimension(d, v.len()));
        }
        for p in 0..d {
            let rank = v.conflicts.iter().filter(|&&c| c < v.conflicts[p]).count();
            counts[p][rank] += 1;
        }
    }
    Ok(counts)
}

/// Formats with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-5..=14).contains(&magnitude) {
        let decimals = (5 - magnitude).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// Produces synthetic instances from an original.
pub trait Augmenter: Sync {
    fn name(&self) -> &str;
    /// `count` synthetic instances derived from `original`; `index` is the
    /// original's position in the pool and seeds any randomness.
    fn augment(&self, original: &Cnf, index: usize, count: usize) -> Result<Vec<Cnf>, String>;
}

/// Returns unchanged copies; a control that adds no information.
pub struct IdentityAugmenter;

impl Augmenter for IdentityAugmenter {
    fn name(&self) -> &str {
        "identity"
    }

    fn augment(&self, original: &Cnf, _: usize, count: usize) -> Result<Vec<Cnf>, String> {
        Ok(vec![original.clone(); count])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub trials: usize,
    pub sizes: Vec<usize>,
    pub per_original: usize,
    /// Regularization grid searched on the validation split.
    pub lambdas: Vec<f64>,
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            trials: 15,
            sizes: vec![30],
            per_original: 3,
            lambdas: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            validation_fraction: 0.2,
            rng_seed: 0,
        }
    }
}

/// Instance with everything the benchmark needs.
#[derive(Clone, Debug)]
pub struct Measured {
    pub features: Vec<f64>,
    pub hardness: HardnessVector,
}

impl Measured {
    pub fn of(cnf: &Cnf, portfolio: &[Preset], conflict_limit: Option<u64>) -> Measured {
        Measured { features: extract_features(cnf), hardness: hardness_vector(cnf, portfolio, conflict_limit) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub size: usize,
    pub trial: usize,
    pub mae_original: f64,
    pub mae_augmented: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub mean_original: f64,
    pub mean_augmented: f64,
    pub median_original: f64,
    pub median_augmented: f64,
    pub wilcoxon: Option<Wilcoxon>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    pub augmenter: String,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SizeSummary>,
}

fn target(c: u64) -> f64 {
    (c as f64).ln_1p()
}

/// Fits one ridge model per preset on `train`, choosing lambda on `val`.
fn fit_presets(train: &[&Measured], val: &[&Measured], lambdas: &[f64]) -> Result<Vec<Ridge>, EvalError> {
    let d = train[0].hardness.len();
    let x: Vec<Vec<f64>> = train.iter().map(|m| m.features.clone()).collect();
    (0..d)
        .map(|p| {
            let y: Vec<f64> = train.iter().map(|m| target(m.hardness.conflicts[p])).collect();
            let mut best: Option<(f64, Ridge)> = None;
            for &l in lambdas {
                let model = Ridge::fit(&x, &y, l)?;
                let score = preset_mae(&model, val, p);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, model));
                }
            }
            Ok(best.expect("non-empty lambda grid").1)
        })
        .collect()
}

fn preset_mae(model: &Ridge, rows: &[&Measured], p: usize) -> f64 {
    let pred: Vec<f64> = rows.iter().map(|m| model.predict(&m.features).exp_m1()).collect();
    let actual: Vec<f64> = rows.iter().map(|m| m.hardness.conflicts[p] as f64).collect();
    mae(&pred, &actual)
}

fn portfolio_mae(models: &[Ridge], rows: &[&Measured]) -> f64 {
    models.iter().enumerate().map(|(p, m)| preset_mae(m, rows, p)).sum::<f64>() / models.len() as f64
}

/// Compares effort predictors trained on originals alone against ones
/// trained on originals plus their synthetic variants.
///
/// For each size and trial the pool is shuffled; the first `size`
/// instances are training originals (split again into fit and validation
/// parts for choosing lambda) and the rest are the test set. Synthetic
/// instances are only ever derived from training originals and only added
/// to the fit part. The reported MAE is in conflicts, averaged over presets.
pub fn augmentation_experiment(
    pool: &[Cnf],
    augmenter: &dyn Augmenter,
    portfolio: &[Preset],
    conflict_limit: Option<u64>,
    config: &AugmentConfig,
) -> Result<AugmentReport, EvalError> {
    let max_size = config.sizes.iter().copied().max().ok_or(EvalError::Empty)?;
    if pool.len() < max_size + 2 || max_size < 5 {
        return Err(EvalError::PoolTooSmall { pool: pool.len(), size: max_size });
    }
    let measured: Vec<Measured> = pool.par_iter().map(|c| Measured::of(c, portfolio, conflict_limit)).collect();
    let synthetic: Vec<Vec<Measured>> = pool
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let cnfs = augmenter.augment(c, i, config.per_original)?;
            Ok(cnfs.iter().map(|s| Measured::of(s, portfolio, conflict_limit)).collect())
        })
        .collect::<Result<_, String>>()
        .map_err(EvalError::Augmenter)?;
    let usable = |m: &Measured| m.hardness.is_complete();
    let mut trials = Vec::new();
    let mut summary = Vec::new();
    for &size in &config.sizes {
        let mut a = Vec::with_capacity(config.trials);
        let mut b = Vec::with_capacity(config.trials);
        for trial in 0..config.trials {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ ((size as u64) << 32) ^ trial as u64);
            let mut order: Vec<usize> = (0..pool.len()).filter(|&i| usable(&measured[i])).collect();
            order.shuffle(&mut rng);
            if order.len() < size + 2 {
                return Err(EvalError::PoolTooSmall { pool: order.len(), size });
            }
            let (train_idx, test_idx) = order.split_at(size);
            let n_val = ((size as f64 * config.validation_fraction).round() as usize).clamp(1, size - 2);
            let (fit_idx, val_idx) = train_idx.split_at(size - n_val);
            let fit: Vec<&Measured> = fit_idx.iter().map(|&i| &measured[i]).collect();
            let val: Vec<&Measured> = val_idx.iter().map(|&i| &measured[i]).collect();
            let test: Vec<&Measured> = test_idx.iter().map(|&i| &measured[i]).collect();
            let mut fit_aug = fit.clone();
            for &i in fit_idx {
                fit_aug.extend(synthetic[i].iter().filter(|m| usable(m)));
            }
            let plain = fit_presets(&fit, &val, &config.lambdas)?;
            let augmented = fit_presets(&fit_aug, &val, &config.lambdas)?;
            let result = TrialResult {
                size,
                trial,
                mae_original: portfolio_mae(&plain, &test),
                mae_augmented: portfolio_mae(&augmented, &test),
            };
            a.push(result.mae_original);
            b.push(result.mae_augmented);
            trials.push(result);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        summary.push(SizeSummary {
            size,
            mean_original: mean(&a),
            mean_augmented: mean(&b),
            median_original: median(&mut a.clone()),
            median_augmented: median(&mut b.clone()),
            wilcoxon: wilcoxon_signed_rank(&a, &b).ok(),
        });
    }
    Ok(AugmentReport { augmenter: augmenter.name().to_string(), trials, summary })
}

impl AugmentReport {
    /// One row per size and trial.
    pub fn trials_csv(&self) -> String {
        let mut out = String::from("size,trial,mae_original,mae_augmented\n");
        for t in &self.trials {
            let _ = writeln!(out, "{},{},{},{}", t.size, t.trial, fmt_sig(t.mae_original), fmt_sig(t.mae_augmented));
        }
        out
    }

    /// One row per size with means, medians and the signed-rank p-value.
    pub fn table_csv(&self) -> String {
        let mut out =
            String::from("size,mean_mae_original,mean_mae_augmented,median_mae_original,median_mae_augmented,wilcoxon_p\n");
        for s in &self.summary {
            let p = s.wilcoxon.map(|w| fmt_sig(w.p_value)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.size,
                fmt_sig(s.mean_original),
                fmt_sig(s.mean_augmented),
                fmt_sig(s.median_original),
                fmt_sig(s.median_augmented),
                p
            );
        }
        out
    }
}

/// Per-instance conflict counts as CSV; `names` label the rows.
pub fn hardness_csv(names: &[String], vectors: &[HardnessVector], portfolio: &[Preset]) -> String {
    let mut out = String::from("instance");
    for p in portfolio {
        let _ = write!(out, ",{}", p.name);
    }
    out.push_str(",complete\n");
    for (name, v) in names.iter().zip(vectors) {
        out.push_str(name);
        for c in &v.conflicts {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(out, ",{}", v.is_complete());
    }
    out
}
