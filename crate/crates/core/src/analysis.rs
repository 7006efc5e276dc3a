//! Empirical checks of structural inequalities about expected maxima, and
//! sweep tables behind the concavity and concentration trends.

use std::io::{Read, Write};
use std::path::Path;

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_oracle::{
    expected_max_correlated, expected_max_quadrature, CovarianceSpec, EstimatorConfig,
    GaussianVector, Method,
};
use crate::instances::{binomial, erdos_renyi_instance, AllocationVector};
use crate::rng::{self, NormalBank, Z95};
use crate::solvers::{log_approx_graph, Allocation};

/// Quadrature tolerance used by the checks.
pub const CHECK_QUADRATURE_TOL: f64 = 1e-10;
/// Slack on inequalities evaluated by quadrature.
pub const CHECK_TOL: f64 = 1e-8;
pub const LIPSCHITZ_CONSTANT: f64 = 2.0;
/// `2e/(e-1)`.
pub const CORRELATION_GAP: f64 = 3.163_953_413_738_653;
pub const CHAINING_RATIO_LIMIT: f64 = 2.0;
pub const CONCAVITY_TOL: f64 = 1e-6;
/// Above this many `k`-subsets the concavity curve samples subsets.
const EXACT_SUBSETS: u64 = 5000;
const SUBSET_GUARD: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    EpsContribution,
    Lipschitz,
    MaxFloorBound,
    Var2Approx,
    CorrelationGap,
    SubmodularG,
    MaxInequalities,
}

impl Claim {
    pub const ALL: [Claim; 7] = [
        Claim::EpsContribution,
        Claim::Lipschitz,
        Claim::MaxFloorBound,
        Claim::Var2Approx,
        Claim::CorrelationGap,
        Claim::SubmodularG,
        Claim::MaxInequalities,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Claim::EpsContribution => "eps-contribution",
            Claim::Lipschitz => "lipschitz",
            Claim::MaxFloorBound => "max-floor-bound",
            Claim::Var2Approx => "var2approx",
            Claim::CorrelationGap => "correlation-gap",
            Claim::SubmodularG => "submodular-g",
            Claim::MaxInequalities => "max-inequalities",
        }
    }

    /// Runs the check with its default size.
    pub fn run_default(self, seed: u64) -> Result<VerificationReport> {
        match self {
            Claim::EpsContribution => {
                verify_eps_contribution(&[0.5, 0.25, 0.125, 0.0625], 16, 20, seed)
            }
            Claim::Lipschitz => verify_lipschitz(2000, 4, seed),
            Claim::MaxFloorBound => verify_max_floor_bound(2000, (2, 6), seed),
            Claim::Var2Approx => verify_var2approx(2000, 4, seed),
            Claim::CorrelationGap => verify_correlation_gap(1000, 4, 20_000, seed),
            Claim::SubmodularG => verify_submodular_g(12),
            Claim::MaxInequalities => verify_max_inequalities(10_000, seed),
        }
    }
}

impl std::str::FromStr for Claim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Claim::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "claim",
                    format!(
                        "unknown claim {s:?}; expected one of {}",
                        Claim::ALL.iter().map(|c| c.name()).join(", ")
                    ),
                )
            })
    }
}

/// One tested instance of an inequality `lhs <= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub parameter: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim: Claim,
    pub trials: u64,
    pub violations: u64,
    pub worst_margin: f64,
    /// Claim-specific summary: the empirical constant for the Lipschitz
    /// check, the max/min ratio of fitted constants for the chaining check.
    pub statistic: Option<f64>,
    pub seed: u64,
    pub details: Vec<TrialRecord>,
}

impl VerificationReport {
    fn from_records(claim: Claim, seed: u64, details: Vec<TrialRecord>, tol: f64) -> Self {
        // A NaN margin counts as a violation.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let violations = details.iter().filter(|r| !(r.margin >= -tol)).count() as u64;
        let worst_margin = details
            .iter()
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min);
        VerificationReport {
            claim,
            trials: details.len() as u64,
            violations,
            worst_margin,
            statistic: None,
            seed,
            details,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn record(trial: u64, parameter: f64, lhs: f64, rhs: f64) -> TrialRecord {
    TrialRecord {
        trial,
        parameter,
        lhs,
        rhs,
        margin: rhs - lhs,
    }
}

fn quad(means: Vec<f64>, stddevs: Vec<f64>) -> Result<f64> {
    let v = GaussianVector::new(means, stddevs)?;
    Ok(expected_max_quadrature(&v, CHECK_QUADRATURE_TOL)?.0)
}

/// `E max(0, max_i Y_i)` for independent zero-mean `Y_i` with the given
/// variances.
pub fn chaining_measure(variances: &[f64]) -> Result<f64> {
    let mut stddevs: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    stddevs.push(0.0);
    quad(vec![0.0; stddevs.len()], stddevs)
}

/// Fits `C(ε) = measured / (ε √ln(1/ε))` for each `ε`, where `measured` is
/// the largest `E max(0, Y)` over variance profiles with every variance at
/// most `ε²` and total at most one: the profile of `⌊1/ε²⌋` variances equal
/// to `ε²`, plus `trials` random profiles of `n_per_trial` variables. The
/// check fails when the fitted constants spread by more than a factor 2.
pub fn verify_eps_contribution(
    eps_grid: &[f64],
    n_per_trial: usize,
    trials: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid", "must not be empty"));
    }
    for &e in eps_grid {
        if !(e > 0.0 && e <= 0.5) {
            return Err(Error::invalid(
                "eps_grid",
                format!("values must lie in (0, 1/2], got {e}"),
            ));
        }
    }
    let fitted: Vec<f64> = eps_grid
        .par_iter()
        .enumerate()
        .map(|(ei, &eps)| -> Result<f64> {
            let cap = eps * eps;
            let m = (1.0 / cap + 1e-9).floor() as usize;
            let mut best = chaining_measure(&vec![cap; m])?;
            let mut rng = rng::rng_for(seed, "eps-contribution", ei as u64);
            for _ in 0..trials {
                let mut v: Vec<f64> = (0..n_per_trial)
                    .map(|_| cap * (1.0 - rng.random::<f64>()))
                    .collect();
                let total: f64 = v.iter().sum();
                if total > 1.0 {
                    v.iter_mut().for_each(|x| *x /= total);
                }
                best = best.max(chaining_measure(&v)?);
            }
            Ok(best / (eps * (1.0 / eps).ln().sqrt()))
        })
        .collect::<Result<_>>()?;
    let lo = fitted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let details = eps_grid
        .iter()
        .zip(&fitted)
        .enumerate()
        .map(|(i, (&eps, &c))| record(i as u64, eps, c, CHAINING_RATIO_LIMIT * lo))
        .collect();
    let mut report = VerificationReport::from_records(Claim::EpsContribution, seed, details, 0.0);
    report.statistic = Some(hi / lo);
    Ok(report)
}

/// `|E max X − E max X'| <= 2 Σ|σ_i − σ'_i|` on random means in `[0, 1]`
/// and standard deviations in `[0, 1]`; half the trials perturb `σ` locally.
pub fn verify_lipschitz(trials: usize, n: usize, seed: u64) -> Result<VerificationReport> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    let rows: Vec<(TrialRecord, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(TrialRecord, f64)> {
            let mut rng = rng::rng_for(seed, "lipschitz", t as u64);
            let mu: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let s2: Vec<f64> = if t == 0 {
                s.clone()
            } else if t % 2 == 0 {
                (0..n).map(|_| rng.random()).collect()
            } else {
                s.iter()
                    .map(|&x| (x * (1.0 + rng.random_range(-0.1..0.1))).max(0.0))
                    .collect()
            };
            let dist: f64 = s.iter().zip(&s2).map(|(a, b)| (a - b).abs()).sum();
            let diff = (quad(mu.clone(), s)? - quad(mu, s2)?).abs();
            let ratio = if dist > 1e-6 { diff / dist } else { 0.0 };
            Ok((
                record(t as u64, dist, diff, LIPSCHITZ_CONSTANT * dist),
                ratio,
            ))
        })
        .collect::<Result<_>>()?;
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let details = rows.into_iter().map(|r| r.0).collect();
    let mut report = VerificationReport::from_records(Claim::Lipschitz, seed, details, CHECK_TOL);
    report.statistic = Some(worst);
    Ok(report)
}

/// `E max(X) >= (1 − 2^{1−n}) E max(0, X)` for independent `X_i` with
/// non-negative means; `n` drawn uniformly from `n_range` (inclusive).
pub fn verify_max_floor_bound(
    trials: usize,
    n_range: (usize, usize),
    seed: u64,
) -> Result<VerificationReport> {
    let (lo, hi) = n_range;
    if lo < 2 || hi < lo {
        return Err(Error::invalid(
            "n_range",
            format!("need 2 <= lo <= hi, got {lo}..={hi}"),
        ));
    }
    let details = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<TrialRecord> {
            let mut rng = rng::rng_for(seed, "max-floor-bound", t as u64);
            let n = rng.random_range(lo..=hi);
            let mut mu: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
            let mut s: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.random::<f64>() < 0.1 {
                        0.0
                    } else {
                        1.5 * rng.random::<f64>()
                    }
                })
                .collect();
            if t == 0 {
                s.iter_mut().for_each(|x| *x = 0.0);
            }
            let plain = quad(mu.clone(), s.clone())?;
            mu.push(0.0);
            s.push(0.0);
            let floored = quad(mu, s)?;
            let factor = 1.0 - 2f64.powi(1 - n as i32);
            Ok(record(t as u64, n as f64, factor * floored, plain))
        })
        .collect::<Result<_>>()?;
    Ok(VerificationReport::from_records(
        Claim::MaxFloorBound,
        seed,
        details,
        CHECK_TOL,
    ))
}

/// `E max X <= E max X' <= 2 E max X` for zero-mean `X` and
/// `σ'_i = c_i σ_i` with `c_i ∈ [1, 2]`. Each trial contributes one record
/// per side.
pub fn verify_var2approx(trials: usize, n: usize, seed: u64) -> Result<VerificationReport> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need n >= 2, got {n}")));
    }
    let pairs: Vec<[TrialRecord; 2]> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<[TrialRecord; 2]> {
            let mut rng = rng::rng_for(seed, "var2approx", t as u64);
            let s: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
            let c: Vec<f64> = match t {
                0 => vec![1.0; n],
                1 => vec![2.0; n],
                _ => (0..n).map(|_| 1.0 + rng.random::<f64>()).collect(),
            };
            let s2: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a * b).collect();
            let base = quad(vec![0.0; n], s)?;
            let scaled = quad(vec![0.0; n], s2)?;
            Ok([
                record(t as u64, 0.0, base, scaled),
                record(t as u64, 1.0, scaled, 2.0 * base),
            ])
        })
        .collect::<Result<_>>()?;
    let details = pairs.into_iter().flatten().collect();
    let mut report = VerificationReport::from_records(Claim::Var2Approx, seed, details, CHECK_TOL);
    report.trials = trials as u64;
    Ok(report)
}

/// Random PSD covariance `A Aᵀ / tr(A Aᵀ)` with a random rank.
fn random_covariance(rng: &mut impl Rng, n: usize, means: Vec<f64>) -> Result<CovarianceSpec> {
    let rank = rng.random_range(1..=n);
    let a: Vec<f64> = (0..n * rank)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..rank).map(|r| a[i * rank + r] * a[j * rank + r]).sum();
        }
    }
    let tr: f64 = (0..n).map(|i| m[i * n + i]).sum();
    m.iter_mut().for_each(|x| *x /= tr);
    CovarianceSpec::from_flat(means, m)
}

/// `E max N(μ, Σ) <= 2e/(e−1) · E max` of independent coordinates with the
/// same marginals, up to the Monte Carlo half-width.
pub fn verify_correlation_gap(
    trials: usize,
    n: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need n >= 2, got {n}")));
    }
    let base = EstimatorConfig::monte_carlo(mc_samples, seed);
    base.validate()?;
    let details = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<TrialRecord> {
            let mut rng = rng::rng_for(seed, "correlation-gap", t as u64);
            let means: Vec<f64> = if t % 2 == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random()).collect()
            };
            let spec = random_covariance(&mut rng, n, means)?;
            let corr = expected_max_correlated(&spec, &base.derived("correlation-gap", t as u64))?;
            let indep = expected_max_quadrature(&spec.marginals(), CHECK_QUADRATURE_TOL)?.0;
            Ok(record(
                t as u64,
                n as f64,
                corr.value - corr.half_width,
                CORRELATION_GAP * indep,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(VerificationReport::from_records(
        Claim::CorrelationGap,
        seed,
        details,
        CHECK_TOL,
    ))
}

/// `g(k) = E max(0, Z_1, …, Z_k)` for iid standard normals, `g(0) = 0`.
pub fn g_values(k_max: usize) -> Result<Vec<f64>> {
    let mut g = vec![0.0];
    for k in 1..=k_max {
        let mut s = vec![1.0; k];
        s.push(0.0);
        g.push(quad(vec![0.0; k + 1], s)?);
    }
    Ok(g)
}

/// Increments of `g` are positive and shrinking: one record per `k` in
/// `1..k_max` comparing `g(k+1) − g(k)` with `g(k) − g(k−1)`.
pub fn verify_submodular_g(k_max: usize) -> Result<VerificationReport> {
    if k_max < 2 {
        return Err(Error::invalid(
            "k_max",
            format!("need k_max >= 2, got {k_max}"),
        ));
    }
    let g = g_values(k_max)?;
    let details: Vec<TrialRecord> = (1..k_max)
        .map(|k| {
            let next = g[k + 1] - g[k];
            let prev = g[k] - g[k - 1];
            // A non-positive increment is reported as a violation too.
            let rhs = if next > 0.0 { prev } else { f64::NEG_INFINITY };
            record(k as u64, k as f64, next, rhs)
        })
        .collect();
    Ok(VerificationReport::from_records(
        Claim::SubmodularG,
        0,
        details,
        1e-9,
    ))
}

/// Dyadic tuple sharing one exponent, so every sum below is exact. Half the
/// draws come from a small pool to force ties.
fn dyadic_tuple<const N: usize>(rng: &mut impl Rng) -> [f64; N] {
    let e = rng.random_range(-1000..=1000);
    let scale = 2f64.powi(e);
    let tied = rng.random::<bool>();
    std::array::from_fn(|_| {
        let m: i64 = if tied {
            rng.random_range(-3..=3)
        } else {
            rng.random_range(-(1 << 20)..=(1 << 20))
        };
        m as f64 * scale
    })
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `max(a,b) + max(a,c) >= max(a,b,c) + a` and
/// `3max(a,b,c,d) + max(a,d) + max(b,d) + max(c,d) <=
///  2max(a,b,d) + 2max(a,c,d) + 2max(b,c,d)`, checked exactly.
pub fn verify_max_inequalities(trials: usize, seed: u64) -> Result<VerificationReport> {
    let pairs: Vec<[TrialRecord; 2]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::rng_for(seed, "max-inequalities", t as u64);
            let [a, b, c] = dyadic_tuple::<3>(&mut rng);
            let three = record(
                t as u64,
                3.0,
                max_of(&[a, b, c]) + a,
                max_of(&[a, b]) + max_of(&[a, c]),
            );
            let [a, b, c, d] = dyadic_tuple::<4>(&mut rng);
            let lhs =
                3.0 * max_of(&[a, b, c, d]) + max_of(&[a, d]) + max_of(&[b, d]) + max_of(&[c, d]);
            let rhs =
                2.0 * max_of(&[a, b, d]) + 2.0 * max_of(&[a, c, d]) + 2.0 * max_of(&[b, c, d]);
            [three, record(t as u64, 4.0, lhs, rhs)]
        })
        .collect();
    let details = pairs.into_iter().flatten().collect();
    let mut report = VerificationReport::from_records(Claim::MaxInequalities, seed, details, 0.0);
    report.trials = trials as u64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub statistic: String,
    pub value: f64,
    pub ci_half_width: f64,
}

/// Rows of `(parameter, statistic, value, ci_half_width)`; within each
/// statistic the parameter is strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        parameter: f64,
        statistic: impl Into<String>,
        value: f64,
        ci_half_width: f64,
    ) -> Result<()> {
        let statistic = statistic.into();
        if let Some(last) = self.rows.iter().rev().find(|r| r.statistic == statistic) {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(parameter > last.parameter) {
                return Err(Error::invalid(
                    "parameter",
                    format!(
                        "statistic {statistic:?}: {parameter} does not follow {}",
                        last.parameter
                    ),
                ));
            }
        }
        self.rows.push(SweepRow {
            parameter,
            statistic,
            value,
            ci_half_width,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Statistic names in first-appearance order.
    pub fn statistics(&self) -> Vec<&str> {
        self.rows
            .iter()
            .map(|r| r.statistic.as_str())
            .unique()
            .collect()
    }

    /// `(parameter, value, ci_half_width)` for one statistic.
    pub fn series(&self, statistic: &str) -> Vec<(f64, f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.statistic == statistic)
            .map(|r| (r.parameter, r.value, r.ci_half_width))
            .collect()
    }

    fn extend(&mut self, other: SweepTable) -> Result<()> {
        for r in other.rows {
            self.push(r.parameter, r.statistic, r.value, r.ci_half_width)?;
        }
        Ok(())
    }
}

/// Average over `k`-subsets of `E max` over the subset, with a half-width
/// that is nonzero only when subsets are sampled.
fn subset_average(
    n: usize,
    k: usize,
    means: &[f64],
    stddevs: &[f64],
    cfg: &EstimatorConfig,
) -> Result<(f64, f64)> {
    let count = binomial(n, k);
    if count > SUBSET_GUARD {
        return Err(Error::BudgetExceeded {
            what: "k-subset enumeration",
            required: count,
            budget: SUBSET_GUARD,
        });
    }
    let eval = |subset: &[usize]| -> Result<f64> {
        let m = subset.iter().map(|&i| means[i]).collect();
        let s = subset.iter().map(|&i| stddevs[i]).collect();
        let v = GaussianVector::new(m, s)?;
        Ok(expected_max_quadrature(&v, cfg.quadrature_tolerance)?.0)
    };
    if count <= EXACT_SUBSETS {
        let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
        let values: Vec<f64> = subsets.par_iter().map(|s| eval(s)).collect::<Result<_>>()?;
        return Ok((values.iter().sum::<f64>() / count as f64, 0.0));
    }
    let mut rng = rng::rng_for(cfg.seed, "subset-sample", (n * 1000 + k) as u64);
    let subsets: Vec<Vec<usize>> = (0..EXACT_SUBSETS)
        .map(|_| {
            let mut s = rand::seq::index::sample(&mut rng, n, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let mut m = rng::Moments::default();
    for v in subsets
        .par_iter()
        .map(|s| eval(s))
        .collect::<Result<Vec<f64>>>()?
    {
        m.push(v);
    }
    Ok((m.mean, m.half_width()))
}

/// `f_σ(k) = OBJ_{I_k}(σ) / C(n, k)` for `k = 1..=n` on the zero-mean
/// complete `k`-subset instances, under statistic `"f"`.
pub fn concavity_curve(
    n: usize,
    allocation: &AllocationVector,
    cfg: &EstimatorConfig,
) -> Result<SweepTable> {
    concavity_curve_named(n, allocation, cfg, "f")
}

fn concavity_curve_named(
    n: usize,
    allocation: &AllocationVector,
    cfg: &EstimatorConfig,
    name: &str,
) -> Result<SweepTable> {
    if allocation.len() != n {
        return Err(Error::invalid(
            "allocation",
            format!("has {} entries, expected {n}", allocation.len()),
        ));
    }
    let means = vec![0.0; n];
    let mut table = SweepTable::new();
    for k in 1..=n {
        let (v, hw) = subset_average(n, k, &means, allocation.stddevs(), cfg)?;
        table.push(k as f64, name, v, hw)?;
    }
    Ok(table)
}

/// Second differences `f(k) + f(k−2) − 2f(k−1)` for `k = 3..=len`; values
/// are indexed from `k = 1`.
pub fn concavity_margins(values: &[f64]) -> Vec<f64> {
    values
        .windows(3)
        .map(|w| w[2] + w[0] - 2.0 * w[1])
        .collect()
}

/// Named standard-deviation profiles used for the concavity sweep.
pub fn sigma_candidates(n: usize, seed: u64) -> Vec<(String, AllocationVector)> {
    let mut out = Vec::new();
    for r in 1..=n {
        let mut s = vec![0.0; n];
        s[..r].iter_mut().for_each(|x| *x = 1.0 / (r as f64).sqrt());
        out.push((format!("top{r}"), s));
    }
    let geo: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
    out.push(("geometric".to_string(), geo));
    let mut rng = rng::rng_for(seed, "sigma-candidates", 0);
    for t in 0..4 {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        out.push((format!("random{t}"), v));
    }
    out.into_iter()
        .map(|(name, s)| {
            let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            let s = s.into_iter().map(|x| x / norm).collect();
            (
                name,
                AllocationVector::new(s).expect("normalized to unit budget"),
            )
        })
        .collect()
}

/// Block-diagonal covariance with 2×2 blocks `Σ_{2i,2i+1} = sign·√(Σ_{2i,2i}Σ_{2i+1,2i+1})`.
pub fn paired_covariance(variances: &[f64], sign: f64) -> Result<CovarianceSpec> {
    let n = variances.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = variances[i];
    }
    for b in 0..n / 2 {
        let (i, j) = (2 * b, 2 * b + 1);
        let c = sign * (variances[i] * variances[j]).sqrt();
        m[i * n + j] = c;
        m[j * n + i] = c;
    }
    CovarianceSpec::from_flat(vec![0.0; n], m)
}

/// `f(k)` for `X ~ N(0, Σ)`: the average over all `k`-subsets of the subset
/// maximum, computed per draw from order statistics (the `r`-th smallest
/// coordinate is the subset maximum in `C(r−1, k−1)` subsets).
pub fn concavity_curve_correlated(
    spec: &CovarianceSpec,
    cfg: &EstimatorConfig,
    name: &str,
) -> Result<SweepTable> {
    let n = spec.dim();
    let factor = spec.factor()?;
    let bank = NormalBank::generate(
        rng::derive_seed(cfg.seed, "concavity-correlated", 0),
        cfg.mc_samples,
        n,
    );
    let mut table = SweepTable::new();
    for k in 1..=n {
        let total = binomial(n, k) as f64;
        let weights: Vec<f64> = (0..n)
            .map(|r| {
                if r + 1 >= k {
                    binomial(r, k - 1) as f64 / total
                } else {
                    0.0
                }
            })
            .collect();
        let m = bank.moments_with(
            || vec![0.0; n],
            |z, x| {
                factor.apply(spec.means(), z, x);
                x.sort_by(f64::total_cmp);
                x.iter().zip(&weights).map(|(a, w)| a * w).sum()
            },
        );
        table.push(k as f64, name, m.mean, m.half_width())?;
    }
    Ok(table)
}

/// Concavity sweep: one curve per candidate profile (`"f:<name>"`), their
/// per-`k` maximum (`"f:max"`), and the two correlated block curves
/// (`"f:corr+"`, `"f:corr-"`) for uniform variances.
pub fn concavity_sweep(n: usize, cfg: &EstimatorConfig) -> Result<SweepTable> {
    let mut table = SweepTable::new();
    let mut best = vec![f64::NEG_INFINITY; n];
    for (name, alloc) in sigma_candidates(n, cfg.seed) {
        let curve = concavity_curve_named(n, &alloc, cfg, &format!("f:{name}"))?;
        for (b, r) in best.iter_mut().zip(curve.rows()) {
            *b = b.max(r.value);
        }
        table.extend(curve)?;
    }
    for (k, &v) in best.iter().enumerate() {
        table.push((k + 1) as f64, "f:max", v, 0.0)?;
    }
    let uniform = vec![1.0 / n as f64; n];
    let mc = if cfg.method == Method::MonteCarlo {
        *cfg
    } else {
        cfg.with_method(Method::MonteCarlo).with_samples(200_000)
    };
    for (sign, name) in [(1.0, "f:corr+"), (-1.0, "f:corr-")] {
        let spec = paired_covariance(&uniform, sign)?;
        table.extend(concavity_curve_correlated(&spec, &mc, name)?)?;
    }
    Ok(table)
}

/// Variables counted as "large" when `σ_i² >= LARGE_FRACTION · p`.
pub const LARGE_FRACTION: f64 = 0.25;

/// For each `p`, runs the logarithmic greedy on Erdős–Rényi instances (one
/// per seed) and reports the mean count of variables with
/// `σ² >= p/4` (`"count"`), the mean support size (`"support"`) and the mean
/// sorted variance profile (`"variance_rank_r"`, largest first).
pub fn concentration_profile(
    n: usize,
    m: usize,
    p_grid: &[f64],
    seeds: &[u64],
    cfg: &EstimatorConfig,
) -> Result<SweepTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "must not be empty"));
    }
    for &p in p_grid {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(
                "p_grid",
                format!("values must lie in (0, 1], got {p}"),
            ));
        }
    }
    let mut table = SweepTable::new();
    for &p in p_grid {
        let runs: Vec<Vec<f64>> = seeds
            .iter()
            .map(|&seed| -> Result<Vec<f64>> {
                let inst = erdos_renyi_instance(n, m, p, seed)?;
                let report = log_approx_graph(&inst, &cfg.derived("concentration", seed))
                    .map_err(|e| e.context(format!("p = {p}, seed = {seed}")))?;
                let Allocation::Independent(a) = report.allocation else {
                    unreachable!("independent solver")
                };
                let mut v = a.variances();
                v.sort_by(|x, y| y.total_cmp(x));
                Ok(v)
            })
            .collect::<Result<_>>()?;
        let summarize = |f: &dyn Fn(&[f64]) -> f64| {
            let mut mo = rng::Moments::default();
            runs.iter().for_each(|v| mo.push(f(v)));
            let hw = if runs.len() > 1 {
                Z95 * (mo.variance() / runs.len() as f64).sqrt()
            } else {
                0.0
            };
            (mo.mean, hw)
        };
        let threshold = LARGE_FRACTION * p;
        let (c, hw) = summarize(&|v| v.iter().filter(|&&x| x >= threshold).count() as f64);
        table.push(p, "count", c, hw)?;
        let (s, hw) = summarize(&|v| v.iter().filter(|&&x| x > 0.0).count() as f64);
        table.push(p, "support", s, hw)?;
        for r in 0..n {
            let (v, hw) = summarize(&|v| v[r]);
            table.push(p, format!("variance_rank_{}", r + 1), v, hw)?;
        }
    }
    Ok(table)
}

/// Writes the table as CSV (header `parameter,statistic,value,ci_half_width`,
/// LF line endings, shortest round-trip floats).
pub fn write_sweep_csv<W: Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["parameter", "statistic", "value", "ci_half_width"])?;
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sweep_csv(table, std::io::BufWriter::new(file))
}

pub fn parse_sweep_csv<R: Read>(input: R) -> Result<SweepTable> {
    let mut r = csv::Reader::from_reader(input);
    let mut table = SweepTable::new();
    for row in r.deserialize() {
        let row: SweepRow = row?;
        table.push(row.parameter, row.statistic, row.value, row.ci_half_width)?;
    }
    Ok(table)
}
