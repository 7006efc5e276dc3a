//! Expected maxima of Gaussian vectors: the objective every solver and
//! verifier evaluates.
//!
//! Three evaluation routes are available for independent coordinates:
//!
//! * closed forms for one or two non-degenerate coordinates,
//! * adaptive quadrature of the tail-integral identity
//!   `E max = a + ∫_a^∞ (1 - G(t)) dt - ∫_{-∞}^a G(t) dt`, where `G` is the
//!   product of the coordinate CDFs (unit steps for zero-variance coordinates),
//! * Monte Carlo on the shared chunked normal stream, with a 95% interval.
//!
//! Correlated vectors are always sampled through a pivoted Cholesky factor,
//! which tolerates the rank-deficient matrices the correlated grid produces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{AllocationVector, Instance};
use crate::normal;
use crate::quadrature;
use crate::rng::{self, Moments, NormalBank};

/// Rank cutoff for the pivoted factorization.
pub const FACTOR_RANK_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-9;
const CAUCHY_SCHWARZ_SLACK: f64 = 1e-12;
const MAX_PANELS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Auto,
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Method::Auto),
            "closed_form" | "closed-form" => Ok(Method::ClosedForm),
            "quadrature" => Ok(Method::Quadrature),
            "monte_carlo" | "monte-carlo" => Ok(Method::MonteCarlo),
            other => Err(Error::invalid(
                "method",
                format!("unknown method {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodUsed {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl MethodUsed {
    /// The least exact of two methods, used when summing per-set estimates.
    fn coarser(self, other: MethodUsed) -> MethodUsed {
        use MethodUsed::*;
        match (self, other) {
            (MonteCarlo, _) | (_, MonteCarlo) => MonteCarlo,
            (Quadrature, _) | (_, Quadrature) => Quadrature,
            _ => ClosedForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub quadrature_tolerance: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::Auto,
            quadrature_tolerance: 1e-9,
            mc_samples: 2_000_000,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn monte_carlo(mc_samples: usize, seed: u64) -> Self {
        EstimatorConfig {
            method: Method::MonteCarlo,
            mc_samples,
            seed,
            ..Default::default()
        }
    }

    pub fn quadrature() -> Self {
        EstimatorConfig {
            method: Method::Quadrature,
            ..Default::default()
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, mc_samples: usize) -> Self {
        self.mc_samples = mc_samples;
        self
    }

    /// Same config with the seed replaced by a labeled derivative of it.
    pub fn derived(&self, label: &str, index: u64) -> Self {
        self.with_seed(rng::derive_seed(self.seed, label, index))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quadrature_tolerance > 0.0 && self.quadrature_tolerance.is_finite()) {
            return Err(Error::invalid(
                "quadrature_tolerance",
                format!("must be positive, got {}", self.quadrature_tolerance),
            ));
        }
        if self.mc_samples < 1000 {
            return Err(Error::invalid(
                "mc_samples",
                format!("must be at least 1000, got {}", self.mc_samples),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// 95% confidence half-width; zero for deterministic methods.
    pub half_width: f64,
    pub method_used: MethodUsed,
}

impl Estimate {
    pub fn exact(value: f64, method_used: MethodUsed) -> Self {
        Estimate {
            value,
            half_width: 0.0,
            method_used,
        }
    }

    fn from_moments(m: Moments) -> Self {
        Estimate {
            value: m.mean,
            half_width: m.half_width(),
            method_used: MethodUsed::MonteCarlo,
        }
    }
}

/// Independent coordinates `X_i ~ N(means[i], stddevs[i]^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVector {
    means: Vec<f64>,
    stddevs: Vec<f64>,
}

impl GaussianVector {
    pub fn new(means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::invalid("means", "need at least one coordinate"));
        }
        if means.len() != stddevs.len() {
            return Err(Error::invalid(
                "stddevs",
                format!(
                    "length {} differs from means length {}",
                    stddevs.len(),
                    means.len()
                ),
            ));
        }
        for (i, &m) in means.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::invalid(format!("means[{i}]"), "must be finite"));
            }
        }
        for (i, &s) in stddevs.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(
                    format!("stddevs[{i}]"),
                    format!("must be finite and non-negative, got {s}"),
                ));
            }
        }
        Ok(GaussianVector { means, stddevs })
    }

    pub fn iid(n: usize, mean: f64, stddev: f64) -> Result<Self> {
        Self::new(vec![mean; n], vec![stddev; n])
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stddevs(&self) -> &[f64] {
        &self.stddevs
    }

    /// Appends a coordinate; used to add point masses such as a floor at 0.
    pub fn push(&mut self, mean: f64, stddev: f64) -> Result<()> {
        if !mean.is_finite() || !(stddev.is_finite() && stddev >= 0.0) {
            return Err(Error::invalid(
                "coordinate",
                "non-finite or negative stddev",
            ));
        }
        self.means.push(mean);
        self.stddevs.push(stddev);
        Ok(())
    }
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {x}")))
    }
}

/// `E[max(X, floor)]` for `X ~ N(mu, sigma^2)`.
///
/// Equal to `t Φ((t-μ)/σ) + μ Φ((μ-t)/σ) + σ φ((t-μ)/σ)`, evaluated as
/// `max(μ, t) + σ·stop_loss(|t-μ|/σ)` so large offsets do not cancel.
pub fn expected_max_with_floor(mu: f64, sigma: f64, floor: f64) -> Result<f64> {
    check_finite("mu", mu)?;
    check_finite("sigma", sigma)?;
    check_finite("floor", floor)?;
    if sigma < 0.0 {
        return Err(Error::invalid(
            "sigma",
            format!("must be non-negative, got {sigma}"),
        ));
    }
    Ok(floor_unchecked(mu, sigma, floor))
}

#[inline]
fn floor_unchecked(mu: f64, sigma: f64, floor: f64) -> f64 {
    if sigma == 0.0 {
        return mu.max(floor);
    }
    mu.max(floor) + sigma * normal::stop_loss((floor - mu).abs() / sigma)
}

/// `E[max(X1, X2)]` for independent `X1 ~ N(mu1, sigma1^2)`, `X2 ~ N(mu2, sigma2^2)`.
///
/// With `δ = μ1 - μ2` and `θ = sqrt(σ1² + σ2²)` this is
/// `μ1 Φ(δ/θ) + μ2 Φ(-δ/θ) + θ φ(δ/θ)`; a fully degenerate pair gives
/// `max(μ1, μ2)`.
pub fn expected_max_pair(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    check_finite("mu1", mu1)?;
    check_finite("mu2", mu2)?;
    check_finite("sigma1", sigma1)?;
    check_finite("sigma2", sigma2)?;
    if sigma1 < 0.0 || sigma2 < 0.0 {
        return Err(Error::invalid("sigma", "must be non-negative"));
    }
    Ok(pair_unchecked(mu1, sigma1, mu2, sigma2))
}

#[inline]
fn pair_unchecked(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    let theta = sigma1.hypot(sigma2);
    floor_unchecked(mu1 - mu2, theta, 0.0) + mu2
}

/// Closed form when at most one coordinate is non-degenerate or `n <= 2`.
fn closed_form(means: &[f64], stddevs: &[f64]) -> Option<f64> {
    if means.len() == 2 {
        return Some(pair_unchecked(means[0], stddevs[0], means[1], stddevs[1]));
    }
    let mut floor = f64::NEG_INFINITY;
    let mut live = None;
    for (i, (&m, &s)) in means.iter().zip(stddevs).enumerate() {
        if s == 0.0 {
            floor = floor.max(m);
        } else if live.replace(i).is_some() {
            return None;
        }
    }
    Some(match live {
        None => floor,
        Some(i) if floor == f64::NEG_INFINITY => means[i],
        Some(i) => floor_unchecked(means[i], stddevs[i], floor),
    })
}

/// Tail-integral quadrature. Returns the value and its error bound
/// (quadrature estimate plus analytic truncation bound).
fn quadrature_value(means: &[f64], stddevs: &[f64], tol: f64) -> Result<(f64, f64)> {
    let mut floor = f64::NEG_INFINITY;
    let mut live: Vec<(f64, f64)> = Vec::with_capacity(means.len());
    for (&m, &s) in means.iter().zip(stddevs) {
        if s == 0.0 {
            floor = floor.max(m);
        } else {
            live.push((m, s));
        }
    }
    if live.is_empty() {
        return Ok((floor, 0.0));
    }
    let sigma_sum: f64 = live.iter().map(|&(_, s)| s).sum();
    let sigma_max = live.iter().map(|&(_, s)| s).fold(0.0, f64::max);

    // Outside [lo, hi] the CDF product is within Φ(-width) of 0 or 1; each
    // truncated tail is bounded by σ·stop_loss(width) per coordinate.
    let mut width = 10.0;
    let mut truncation = (sigma_sum + sigma_max) * normal::stop_loss_bound(width);
    while truncation > 0.01 * tol && width < 40.0 {
        width += 2.0;
        truncation = (sigma_sum + sigma_max) * normal::stop_loss_bound(width);
    }
    let lo = live
        .iter()
        .map(|&(m, s)| m - width * s)
        .fold(floor, f64::max);
    let hi = live
        .iter()
        .map(|&(m, s)| m + width * s)
        .fold(floor, f64::max);
    if hi <= lo {
        return Ok((lo, truncation));
    }

    let mut points = Vec::with_capacity(live.len() + 2);
    points.push(lo);
    // Breakpoints on each coordinate's own scale, so narrow components are
    // sampled regardless of how wide the whole domain is.
    for &(m, s) in &live {
        for k in [-width, -5.0, -2.0, 0.0, 2.0, 5.0, width] {
            let t = m + k * s;
            if t > lo && t < hi {
                points.push(t);
            }
        }
    }
    points.push(hi);
    points.sort_by(f64::total_cmp);
    points.dedup();

    // On [lo, hi] every degenerate step is already 1.
    let complement = |t: f64| -> f64 {
        let log_g: f64 = live.iter().map(|&(m, s)| normal::ln_cdf((t - m) / s)).sum();
        -log_g.exp_m1()
    };
    let budget = (tol - truncation).max(0.5 * tol);
    let integral = quadrature::integrate(
        complement,
        &points,
        budget,
        MAX_PANELS.max(4 * points.len()),
    )
    .map_err(|e| match e {
        Error::QuadratureNonConvergence {
            estimate,
            error_bound,
            intervals,
        } => Error::QuadratureNonConvergence {
            estimate: lo + estimate,
            error_bound: error_bound + truncation,
            intervals,
        },
        e => e,
    })?;
    Ok((lo + integral.value, integral.error + truncation))
}

fn monte_carlo_independent(means: &[f64], stddevs: &[f64], cfg: &EstimatorConfig) -> Estimate {
    let m = rng::stream_moments(cfg.seed, cfg.mc_samples, means.len(), |z| {
        means
            .iter()
            .zip(stddevs)
            .zip(z)
            .map(|((&mu, &s), &zi)| mu + s * zi)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Estimate::from_moments(m)
}

/// Unchecked core of [`expected_max_independent`]; inputs must already satisfy
/// the [`GaussianVector`] invariants.
pub(crate) fn expected_max_parts(
    means: &[f64],
    stddevs: &[f64],
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    match cfg.method {
        Method::Auto => match closed_form(means, stddevs) {
            Some(v) => Ok(Estimate::exact(v, MethodUsed::ClosedForm)),
            None => quadrature_value(means, stddevs, cfg.quadrature_tolerance)
                .map(|(v, _)| Estimate::exact(v, MethodUsed::Quadrature)),
        },
        Method::ClosedForm => closed_form(means, stddevs)
            .map(|v| Estimate::exact(v, MethodUsed::ClosedForm))
            .ok_or_else(|| {
                Error::invalid(
                    "method",
                    "closed form needs n <= 2 or at most one non-degenerate coordinate",
                )
            }),
        Method::Quadrature => quadrature_value(means, stddevs, cfg.quadrature_tolerance)
            .map(|(v, _)| Estimate::exact(v, MethodUsed::Quadrature)),
        Method::MonteCarlo => Ok(monte_carlo_independent(means, stddevs, cfg)),
    }
}

/// `E[max_i X_i]` for independent coordinates.
pub fn expected_max_independent(v: &GaussianVector, cfg: &EstimatorConfig) -> Result<Estimate> {
    cfg.validate()?;
    expected_max_parts(&v.means, &v.stddevs, cfg)
}

/// Quadrature value together with its error bound.
pub fn expected_max_quadrature(v: &GaussianVector, tolerance: f64) -> Result<(f64, f64)> {
    quadrature_value(&v.means, &v.stddevs, tolerance)
}

/// Symmetric positive-semidefinite covariance with a mean vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovarianceRepr", into = "CovarianceRepr")]
pub struct CovarianceSpec {
    means: Vec<f64>,
    // Row-major n×n.
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CovarianceRepr {
    means: Vec<f64>,
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<CovarianceRepr> for CovarianceSpec {
    type Error = Error;
    fn try_from(r: CovarianceRepr) -> Result<Self> {
        CovarianceSpec::new(r.means, r.matrix)
    }
}

impl From<CovarianceSpec> for CovarianceRepr {
    fn from(c: CovarianceSpec) -> Self {
        CovarianceRepr {
            matrix: c.rows(),
            means: c.means,
        }
    }
}

impl CovarianceSpec {
    /// Validates and symmetrizes `rows`.
    pub fn new(means: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = means.len();
        if n == 0 {
            return Err(Error::invalid("means", "need at least one coordinate"));
        }
        if rows.len() != n {
            return Err(Error::invalid(
                "matrix",
                format!("has {} rows, expected {n}", rows.len()),
            ));
        }
        for (i, &m) in means.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::invalid(format!("means[{i}]"), "must be finite"));
            }
        }
        let mut matrix = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(
                    format!("matrix[{i}]"),
                    format!("has {} entries, expected {n}", row.len()),
                ));
            }
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::invalid(
                        format!("matrix[{i}][{j}]"),
                        "must be finite",
                    ));
                }
                matrix[i * n + j] = x;
            }
        }
        Self::from_flat(means, matrix)
    }

    pub fn diagonal(means: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let n = variances.len();
        let mut matrix = vec![0.0; n * n];
        for (i, &v) in variances.iter().enumerate() {
            matrix[i * n + i] = v;
        }
        if means.len() != n {
            return Err(Error::invalid("means", "length differs from variances"));
        }
        Self::from_flat(means, matrix)
    }

    /// Diagonal covariance reproducing an independent allocation.
    pub fn from_allocation(means: Vec<f64>, alloc: &AllocationVector) -> Result<Self> {
        let variances: Vec<f64> = alloc.stddevs().iter().map(|s| s * s).collect();
        Self::diagonal(means, &variances)
    }

    pub(crate) fn from_flat(means: Vec<f64>, mut matrix: Vec<f64>) -> Result<Self> {
        let n = means.len();
        debug_assert_eq!(matrix.len(), n * n);
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (matrix[i * n + j] + matrix[j * n + i]);
                matrix[i * n + j] = avg;
                matrix[j * n + i] = avg;
            }
        }
        for i in 0..n {
            let d = matrix[i * n + i];
            if d < 0.0 {
                return Err(Error::invalid(
                    format!("matrix[{i}][{i}]"),
                    format!("variance must be non-negative, got {d}"),
                ));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let bound = (matrix[i * n + i] * matrix[j * n + j]).sqrt() + CAUCHY_SCHWARZ_SLACK;
                if matrix[i * n + j].abs() > bound {
                    return Err(Error::invalid(
                        format!("matrix[{i}][{j}]"),
                        format!(
                            "|{}| exceeds sqrt of diagonal product {}",
                            matrix[i * n + j],
                            bound
                        ),
                    ));
                }
            }
        }
        let spec = CovarianceSpec { means, matrix };
        let min_eig = spec.min_eigenvalue();
        if min_eig < PSD_TOL {
            return Err(Error::invalid(
                "matrix",
                format!("not positive semidefinite (smallest eigenvalue {min_eig:e})"),
            ));
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim() + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .chunks(self.dim())
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i)).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix, self.dim())
    }

    /// Independent vector with the same means and marginal variances.
    pub fn marginals(&self) -> GaussianVector {
        GaussianVector {
            means: self.means.clone(),
            stddevs: self.variances().iter().map(|v| v.sqrt()).collect(),
        }
    }

    pub fn factor(&self) -> Result<Factor> {
        Factor::pivoted_cholesky(&self.matrix, self.dim(), FACTOR_RANK_TOL)
    }
}

pub(crate) fn min_eigenvalue(matrix: &[f64], n: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(n, n, matrix);
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `Σ ≈ L Lᵀ` with `L` of shape `n × rank`, in the original coordinate order.
#[derive(Debug, Clone)]
pub struct Factor {
    n: usize,
    rank: usize,
    // Row-major n × rank.
    l: Vec<f64>,
}

impl Factor {
    /// Diagonal-pivoted Cholesky. Stops once every remaining pivot is at most
    /// `tol`; the discarded Schur complement must not be materially negative.
    pub fn pivoted_cholesky(a: &[f64], n: usize, tol: f64) -> Result<Self> {
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut remaining: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        let mut used = vec![false; n];
        for _ in 0..n {
            let (p, &d) = match remaining
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .max_by(|x, y| x.1.total_cmp(y.1).then_with(|| y.0.cmp(&x.0)))
            {
                Some(best) => best,
                None => break,
            };
            if d <= tol {
                break;
            }
            let pivot = d.sqrt();
            let mut col = vec![0.0; n];
            col[p] = pivot;
            for i in 0..n {
                if used[i] || i == p {
                    continue;
                }
                let dot: f64 = cols.iter().map(|c| c[i] * c[p]).sum();
                col[i] = (a[i * n + p] - dot) / pivot;
                remaining[i] -= col[i] * col[i];
            }
            used[p] = true;
            remaining[p] = 0.0;
            cols.push(col);
        }
        if let Some((i, &r)) = remaining
            .iter()
            .enumerate()
            .find(|(i, &r)| !used[*i] && r < -1e-9)
        {
            return Err(Error::Factorization(format!(
                "negative Schur complement {r:e} at coordinate {i}"
            )));
        }
        let rank = cols.len();
        let mut l = vec![0.0; n * rank];
        for (k, col) in cols.iter().enumerate() {
            for i in 0..n {
                l[i * rank + k] = col[i];
            }
        }
        Ok(Factor { n, rank, l })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Writes `means + L z` into `out`; `z` needs at least `rank` entries.
    #[inline]
    pub fn apply(&self, means: &[f64], z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.l[i * self.rank..(i + 1) * self.rank];
            out[i] = means[i] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn correlated_cfg_check(cfg: &EstimatorConfig) -> Result<()> {
    cfg.validate()?;
    match cfg.method {
        Method::Auto | Method::MonteCarlo => Ok(()),
        m => Err(Error::invalid(
            "method",
            format!("correlated vectors are estimated by Monte Carlo only, got {m:?}"),
        )),
    }
}

/// Monte Carlo `E[max_i X_i]` for `X ~ N(μ, Σ)`.
pub fn expected_max_correlated(c: &CovarianceSpec, cfg: &EstimatorConfig) -> Result<Estimate> {
    correlated_cfg_check(cfg)?;
    let factor = c.factor()?;
    let n = c.dim();
    let m = rng::stream_moments_with(
        cfg.seed,
        cfg.mc_samples,
        n,
        || vec![0.0; n],
        |z, x| {
            factor.apply(&c.means, z, x);
            x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        },
    );
    Ok(Estimate::from_moments(m))
}

fn check_dims(inst: &Instance, n: usize, what: &str) -> Result<()> {
    if inst.n() != n {
        return Err(Error::invalid(
            what,
            format!("has {n} coordinates but the instance has {}", inst.n()),
        ));
    }
    Ok(())
}

/// `Σ_j E[max_{i∈S_j} X_i]` for independent coordinates.
///
/// Under Monte Carlo each set draws from its own derived stream, so the
/// per-set half-widths combine in quadrature.
pub fn graph_objective(
    inst: &Instance,
    alloc: &AllocationVector,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    check_dims(inst, alloc.len(), "allocation")?;
    graph_objective_parts(inst, alloc.stddevs(), cfg)
}

pub(crate) fn set_objective(
    inst: &Instance,
    j: usize,
    stddevs: &[f64],
    cfg: &EstimatorConfig,
    means_buf: &mut Vec<f64>,
    sd_buf: &mut Vec<f64>,
) -> Result<Estimate> {
    means_buf.clear();
    sd_buf.clear();
    for &i in &inst.sets()[j] {
        means_buf.push(inst.means()[i]);
        sd_buf.push(stddevs[i]);
    }
    let set_cfg = if cfg.method == Method::MonteCarlo {
        cfg.derived("set", j as u64)
    } else {
        *cfg
    };
    expected_max_parts(means_buf, sd_buf, &set_cfg).map_err(|e| e.context(format!("set {j}")))
}

pub(crate) fn graph_objective_parts(
    inst: &Instance,
    stddevs: &[f64],
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    let mut means_buf = Vec::new();
    let mut sd_buf = Vec::new();
    let mut value = 0.0;
    let mut var = 0.0;
    let mut method = MethodUsed::ClosedForm;
    for j in 0..inst.m() {
        let e = set_objective(inst, j, stddevs, cfg, &mut means_buf, &mut sd_buf)?;
        value += e.value;
        var += e.half_width * e.half_width;
        method = method.coarser(e.method_used);
    }
    Ok(Estimate {
        value,
        half_width: var.sqrt(),
        method_used: method,
    })
}

fn graph_total(inst: &Instance, x: &[f64]) -> f64 {
    inst.sets()
        .iter()
        .map(|s| s.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// `Σ_j E[max_{i∈S_j} X_i]` for `X ~ N(μ, Σ)`, every set evaluated on the
/// same joint draws.
pub fn graph_objective_correlated(
    inst: &Instance,
    c: &CovarianceSpec,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    correlated_cfg_check(cfg)?;
    check_dims(inst, c.dim(), "covariance")?;
    let factor = c.factor()?;
    let n = c.dim();
    let means = inst.means();
    let m = rng::stream_moments_with(
        cfg.seed,
        cfg.mc_samples,
        n,
        || vec![0.0; n],
        |z, x| {
            factor.apply(means, z, x);
            graph_total(inst, x)
        },
    );
    Ok(Estimate::from_moments(m))
}

/// Graph objective of `factor` evaluated on a fixed sample matrix, for
/// common-random-number comparisons between candidate covariances.
pub fn graph_objective_on_bank(inst: &Instance, factor: &Factor, bank: &NormalBank) -> Estimate {
    let n = inst.n();
    let means = inst.means();
    let m = bank.moments_with(
        || vec![0.0; n],
        |z, x| {
            factor.apply(means, z, x);
            graph_total(inst, x)
        },
    );
    Estimate::from_moments(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    // Brute-force Monte Carlo independent of the chunked estimator.
    fn naive_mc(f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64, n: usize) -> (f64, f64) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
        let mut m = Moments::default();
        for _ in 0..n {
            m.push(f(&mut rng));
        }
        (m.mean, m.half_width())
    }

    fn normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        use rand::Rng;
        rng.sample(rand_distr::StandardNormal)
    }

    #[test]
    fn floor_examples() {
        assert_abs_diff_eq!(
            expected_max_with_floor(0.0, 1.0, 0.0).unwrap(),
            0.398_942_280_401_432_7,
            epsilon = 1e-15
        );
        assert_eq!(expected_max_with_floor(5.0, 0.0, 0.0).unwrap(), 5.0);
        let phi1 = 0.241_970_724_519_143_37;
        let cdf1 = 0.841_344_746_068_542_9;
        assert_abs_diff_eq!(
            expected_max_with_floor(1.0, 1.0, 0.0).unwrap(),
            cdf1 + phi1,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(cdf1 + phi1, 1.083_315_470_587_686_3, epsilon = 1e-14);
    }

    #[test]
    fn floor_matches_textbook_form() {
        for &(mu, s, t) in &[
            (0.3, 0.7, -1.2),
            (-2.0, 0.1, 3.0),
            (4.0, 2.0, 4.5),
            (1e3, 1.0, 999.0),
        ] {
            let z = (t - mu) / s;
            let textbook = t * normal::cdf(z) + mu * normal::cdf(-z) + s * normal::pdf(z);
            assert_abs_diff_eq!(
                expected_max_with_floor(mu, s, t).unwrap(),
                textbook,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn floor_cross_checked_by_sampling() {
        let (mean, hw) = naive_mc(|r| normal(r).max(0.0), 1_000_000);
        assert!((mean - 0.398_942_28).abs() < 3.0 * hw);
        let (mean, hw) = naive_mc(|r| (1.0 + normal(r)).max(0.0), 1_000_000);
        assert!((mean - 1.083_315_47).abs() < 3.0 * hw);
    }

    #[test]
    fn floor_rejects_bad_input() {
        assert!(expected_max_with_floor(f64::NAN, 1.0, 0.0).is_err());
        assert!(expected_max_with_floor(0.0, -1.0, 0.0).is_err());
        assert!(expected_max_with_floor(0.0, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn pair_examples() {
        assert_abs_diff_eq!(
            expected_max_pair(0.0, 1.0, 0.0, 1.0).unwrap(),
            1.0 / PI.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(
            expected_max_pair(0.0, 1.0, 0.0, 0.0).unwrap(),
            expected_max_with_floor(0.0, 1.0, 0.0).unwrap()
        );
        assert_eq!(expected_max_pair(3.0, 0.0, 1.0, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn independent_examples() {
        let cfg = EstimatorConfig::default();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = GaussianVector::new(vec![0.0, 0.0], vec![h, h]).unwrap();
        assert_abs_diff_eq!(
            expected_max_independent(&v, &cfg).unwrap().value,
            0.398_942_280_4,
            epsilon = 1e-10
        );
        let v = GaussianVector::new(vec![7.0], vec![2.0]).unwrap();
        assert_eq!(expected_max_independent(&v, &cfg).unwrap().value, 7.0);
        let v = GaussianVector::iid(3, 0.0, 1.0).unwrap();
        let e = expected_max_independent(&v, &cfg).unwrap();
        assert_eq!(e.method_used, MethodUsed::Quadrature);
        assert_abs_diff_eq!(e.value, 1.5 / PI.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        let q = EstimatorConfig::quadrature();
        for &(m1, s1, m2, s2) in &[
            (0.0, 1.0, 0.0, 1.0),
            (0.5, 0.2, -0.3, 1.7),
            (2.0, 0.0, 1.0, 0.5),
            (0.0, 1e-4, 0.0, 1.0),
        ] {
            let v = GaussianVector::new(vec![m1, m2], vec![s1, s2]).unwrap();
            let quad = expected_max_independent(&v, &q).unwrap().value;
            assert_abs_diff_eq!(
                quad,
                expected_max_pair(m1, s1, m2, s2).unwrap(),
                epsilon = 1e-9
            );
        }
        // Floor via a degenerate coordinate.
        let v = GaussianVector::new(vec![0.4, 1.0], vec![0.9, 0.0]).unwrap();
        let quad = expected_max_independent(&v, &q).unwrap().value;
        assert_abs_diff_eq!(
            quad,
            expected_max_with_floor(0.4, 0.9, 1.0).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn closed_form_rejected_when_inapplicable() {
        let v = GaussianVector::iid(3, 0.0, 1.0).unwrap();
        let cfg = EstimatorConfig::default().with_method(Method::ClosedForm);
        assert!(expected_max_independent(&v, &cfg).is_err());
        let v = GaussianVector::new(vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 0.0]).unwrap();
        let e = expected_max_independent(&v, &cfg).unwrap();
        assert_abs_diff_eq!(
            e.value,
            expected_max_with_floor(0.0, 1.0, 2.0).unwrap(),
            epsilon = 0.0
        );
    }

    #[test]
    fn far_degenerate_coordinate_is_harmless() {
        let q = EstimatorConfig::quadrature();
        let mut v = GaussianVector::new(vec![0.1, 0.3, 0.0], vec![0.4, 0.2, 0.9]).unwrap();
        let base = expected_max_independent(&v, &q).unwrap().value;
        v.push(-1e6, 0.0).unwrap();
        let with = expected_max_independent(&v, &q).unwrap().value;
        assert!((base - with).abs() < 1e-9, "{base} vs {with}");
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let v = GaussianVector::iid(4, 0.0, 0.5).unwrap();
        let cfg = EstimatorConfig::monte_carlo(50_000, 3);
        let a = expected_max_independent(&v, &cfg).unwrap();
        let b = expected_max_independent(&v, &cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.half_width.to_bits(), b.half_width.to_bits());
        assert!(a.half_width > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::default()
            .with_samples(999)
            .validate()
            .is_err());
        let c = EstimatorConfig {
            quadrature_tolerance: 0.0,
            ..EstimatorConfig::default()
        };
        assert!(c.validate().is_err());
    }

    fn cov(rows: &[[f64; 2]; 2]) -> CovarianceSpec {
        CovarianceSpec::new(vec![0.0, 0.0], rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn correlated_examples() {
        let cfg = EstimatorConfig::monte_carlo(400_000, 1);
        let diag = cov(&[[0.5, 0.0], [0.0, 0.5]]);
        let e = expected_max_correlated(&diag, &cfg).unwrap();
        assert!((e.value - 0.398_942_28).abs() < 3.0 * e.half_width, "{e:?}");
        let same = cov(&[[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(same.factor().unwrap().rank(), 1);
        let e = expected_max_correlated(&same, &cfg).unwrap();
        assert!(e.value.abs() < 3.0 * e.half_width, "{e:?}");
        let anti = cov(&[[0.5, -0.5], [-0.5, 0.5]]);
        let e = expected_max_correlated(&anti, &cfg).unwrap();
        assert!(
            (e.value - 1.0 / PI.sqrt()).abs() < 3.0 * e.half_width,
            "{e:?}"
        );
    }

    #[test]
    fn covariance_validation() {
        let bad = CovarianceSpec::new(vec![0.0, 0.0], vec![vec![0.5, 0.9], vec![0.9, 0.5]]);
        assert!(matches!(bad, Err(Error::Invalid { .. })));
        let neg = CovarianceSpec::new(vec![0.0], vec![vec![-0.1]]);
        assert!(neg.is_err());
        // Pairwise-valid yet indefinite.
        let indefinite = CovarianceSpec::new(
            vec![0.0; 3],
            vec![
                vec![1.0, 0.9, -0.9],
                vec![0.9, 1.0, 0.9],
                vec![-0.9, 0.9, 1.0],
            ],
        );
        assert!(indefinite.is_err());
        // Asymmetric input is averaged.
        let c = CovarianceSpec::new(vec![0.0, 0.0], vec![vec![1.0, 0.2], vec![0.4, 1.0]]).unwrap();
        assert_eq!(c.get(0, 1), c.get(1, 0));
        assert_abs_diff_eq!(c.get(0, 1), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = [4.0, 2.0, 0.6, 2.0, 2.0, 0.3, 0.6, 0.3, 1.0];
        let f = Factor::pivoted_cholesky(&a, 3, FACTOR_RANK_TOL).unwrap();
        assert_eq!(f.rank(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let r = f.rank;
                let dot: f64 = (0..r).map(|k| f.l[i * r + k] * f.l[j * r + k]).sum();
                assert_abs_diff_eq!(dot, a[i * 3 + j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let c = CovarianceSpec::diagonal(vec![0.2, 0.7], &[0.0, 0.0]).unwrap();
        let f = c.factor().unwrap();
        assert_eq!(f.rank(), 0);
        let e = expected_max_correlated(&c, &EstimatorConfig::monte_carlo(1000, 0)).unwrap();
        assert_eq!(e.value, 0.7);
        assert_eq!(e.half_width, 0.0);
    }
}
