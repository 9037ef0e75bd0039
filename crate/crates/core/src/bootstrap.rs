//! Bootstrap variance of the imputed total: the without-replacement
//! pseudopopulation bootstrap for SRSWOR and the mirror-match bootstrap for
//! stratified samples. Each replicate re-imputes its resample from scratch.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ConfigIssue, Error, Result};
use crate::imputation::{ImputedDataset, SampleData};
use crate::rng::{StreamRng, StreamSeed};
use crate::sampling::{draw_without_replacement, randomized_round, snap_integer};

/// Consecutive zero-respondent resamples tolerated before giving up.
pub const MAX_REDRAWS: usize = 100;

/// Imputation applied to each resample.
pub type Imputer<'a> = dyn Fn(&SampleData) -> Result<ImputedDataset> + Sync + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapVariance {
    /// `(1/B) Σ_b (Ŷ^(b) − Ŷ^(·))²`.
    pub variance: f64,
    pub replicate_totals: Vec<f64>,
    pub mean_total: f64,
    /// Replicates whose imputation fell back from the requested method.
    pub fallback_count: usize,
    /// Resamples discarded for having no respondents.
    pub redraws: usize,
}

impl BootstrapVariance {
    pub fn from_totals(replicate_totals: Vec<f64>, fallback_count: usize, redraws: usize) -> Self {
        let b = replicate_totals.len() as f64;
        let mean_total = replicate_totals.iter().sum::<f64>() / b;
        let variance = replicate_totals.iter().map(|t| (t - mean_total).powi(2)).sum::<f64>() / b;
        BootstrapVariance {
            variance,
            replicate_totals,
            mean_total,
            fallback_count,
            redraws,
        }
    }

    pub fn replicates(&self) -> usize {
        self.replicate_totals.len()
    }
}

struct Replicate {
    total: f64,
    fallback: bool,
    redraws: usize,
}

/// Draws rows with `draw` until the resample has a respondent, imputes it
/// and returns `total(ỹ, draw)`.
fn run_replicate<D>(
    data: &SampleData,
    replicate: usize,
    rng: &mut StreamRng,
    draw: impl Fn(&mut StreamRng) -> (Vec<usize>, D),
    total: impl Fn(&[f64], &D) -> f64,
    imputer: &Imputer<'_>,
) -> Result<Replicate> {
    for attempt in 0..MAX_REDRAWS {
        let (rows, extra) = draw(rng);
        if !rows.iter().any(|&r| data.respondent()[r]) {
            continue;
        }
        let weights = rows.iter().map(|&r| data.weights()[r]).collect();
        let resample = data.resample(&rows, weights)?;
        let imputed = imputer(&resample)?;
        return Ok(Replicate {
            total: total(&imputed.tilde_y, &extra),
            fallback: imputed.fallback_used(),
            redraws: attempt,
        });
    }
    Err(Error::BootstrapExhausted {
        replicate,
        attempts: MAX_REDRAWS,
    })
}

fn collect(replicates: Vec<Replicate>) -> BootstrapVariance {
    let fallbacks = replicates.iter().filter(|r| r.fallback).count();
    let redraws = replicates.iter().map(|r| r.redraws).sum();
    BootstrapVariance::from_totals(replicates.into_iter().map(|r| r.total).collect(), fallbacks, redraws)
}

fn check_replicates(b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::Domain(format!("bootstrap needs B >= 2, got {b}")));
    }
    Ok(())
}

/// Number of sample copies in the pseudopopulation: `N/n` rounded to the
/// nearest integer, ties to even.
pub fn bwo_copies(population_size: usize, n: usize) -> Result<usize> {
    if n == 0 || n > population_size {
        return Err(Error::Domain(format!(
            "pseudopopulation needs 1 <= n <= N, got n={n}, N={population_size}"
        )));
    }
    Ok(((population_size as f64 / n as f64).round_ties_even() as usize).max(1))
}

/// The `k` stacked copies of the sample (row `c·n + i` is a copy of row `i`).
pub fn bwo_pseudopopulation(data: &SampleData, population_size: usize) -> Result<SampleData> {
    let n = data.len();
    let k = bwo_copies(population_size, n)?;
    let rows: Vec<usize> = (0..k * n).map(|r| r % n).collect();
    let weights = rows.iter().map(|&r| data.weights()[r]).collect();
    data.resample(&rows, weights)
}

/// Without-replacement bootstrap for an SRSWOR sample of a population of
/// size `population_size`.
pub fn bwo_variance(
    data: &SampleData,
    population_size: usize,
    imputer: &Imputer<'_>,
    b: usize,
    seed: StreamSeed,
) -> Result<BootstrapVariance> {
    check_replicates(b)?;
    let n = data.len();
    let k = bwo_copies(population_size, n)?;
    let scale = population_size as f64 / n as f64;
    let replicates = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed.child(rep as u64).rng();
            run_replicate(
                data,
                rep,
                &mut rng,
                |rng| {
                    let rows = draw_without_replacement(rng, k * n, n).into_iter().map(|u| u % n).collect();
                    (rows, ())
                },
                |tilde_y, _| scale * tilde_y.iter().sum::<f64>(),
                imputer,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(replicates))
}

/// How the mirror-match subsample size `n_h'` is chosen per stratum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NPrimeRule {
    /// `n_h' = f_h · n_h` with `f_h = n_h / N_h`; gives `n_h* = n_h`.
    SamplingFraction,
    /// `n_h' = c · n_h`.
    Scaled(f64),
    /// The same `n_h'` in every stratum.
    Fixed(f64),
}

impl NPrimeRule {
    pub fn value(self, n_h: usize, big_n_h: usize) -> f64 {
        let v = match self {
            NPrimeRule::SamplingFraction => n_h as f64 * n_h as f64 / big_n_h as f64,
            NPrimeRule::Scaled(c) => c * n_h as f64,
            NPrimeRule::Fixed(v) => v,
        };
        snap_integer(v)
    }
}

impl Default for NPrimeRule {
    fn default() -> Self {
        NPrimeRule::SamplingFraction
    }
}

impl fmt::Display for NPrimeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NPrimeRule::SamplingFraction => f.write_str("f*n_h"),
            NPrimeRule::Scaled(c) => write!(f, "{c}*n_h"),
            NPrimeRule::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for NPrimeRule {
    type Err = Error;

    /// Accepts `f*n_h`, `<c>*n_h` or a plain number.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Domain(format!("unrecognised n' rule '{s}' (expected f*n_h, c*n_h or a number)"));
        if let Some(factor) = t.strip_suffix("*n_h") {
            if factor == "f" || factor == "f_h" {
                return Ok(NPrimeRule::SamplingFraction);
            }
            let c: f64 = factor.parse().map_err(|_| bad())?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad());
            }
            return Ok(NPrimeRule::Scaled(c));
        }
        let v: f64 = t.parse().map_err(|_| bad())?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(bad());
        }
        Ok(NPrimeRule::Fixed(v))
    }
}

/// Replicate total used by the mirror-match bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MirrorMatchTotal {
    /// `Σ_h (N_h / n_h*) Σ_{S_h*} ỹ`: the stratified expansion estimator
    /// applied to the resample.
    #[default]
    Expanded,
    /// `(N / n*) Σ_h (n_h / n_h') Σ_{S_h*} ỹ`, which carries an extra factor
    /// of `n_h / n_h'` relative to the original estimator.
    Literal,
}

impl FromStr for MirrorMatchTotal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "expanded" => Ok(MirrorMatchTotal::Expanded),
            "literal" => Ok(MirrorMatchTotal::Literal),
            other => Err(Error::Domain(format!(
                "unknown mirror-match total '{other}' (expected expanded or literal)"
            ))),
        }
    }
}

impl fmt::Display for MirrorMatchTotal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MirrorMatchTotal::Expanded => "expanded",
            MirrorMatchTotal::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StratumPlan {
    population_size: usize,
    rows: Vec<usize>,
    n_prime: f64,
}

/// Per-stratum plan of the mirror-match bootstrap for one stratified sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorMatchDesign {
    strata: Vec<StratumPlan>,
    population_size: usize,
}

/// Realised sizes for one stratum in one resample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumDraw {
    pub n_h: usize,
    pub n_prime: usize,
    pub k: usize,
    /// `n_h* = n_h' · k_h`.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorMatchDraw {
    /// Sample rows, grouped by stratum in design order.
    pub rows: Vec<usize>,
    pub strata: Vec<StratumDraw>,
}

impl MirrorMatchDesign {
    /// `labels[i]` is the 1-based stratum of sample row `i`;
    /// `stratum_sizes[h-1]` is `N_h`.
    pub fn new(labels: &[usize], stratum_sizes: &[usize], rule: NPrimeRule) -> Result<Self> {
        let mut rows = vec![Vec::new(); stratum_sizes.len()];
        for (i, &h) in labels.iter().enumerate() {
            if h == 0 || h > stratum_sizes.len() {
                return Err(Error::Domain(format!("sample row {i} has stratum label {h} outside 1..={}", stratum_sizes.len())));
            }
            rows[h - 1].push(i);
        }
        let mut issues = Vec::new();
        let mut strata = Vec::new();
        for (hi, (rows, &big_n)) in rows.into_iter().zip(stratum_sizes).enumerate() {
            let h = hi + 1;
            let n_h = rows.len();
            if n_h == 0 {
                continue;
            }
            if n_h >= big_n {
                issues.push(ConfigIssue::new(
                    "bootstrap.n_prime_rule",
                    format!("stratum {h} is a census (n_h = N_h = {big_n}); the mirror-match bootstrap needs n_h < N_h"),
                ));
                continue;
            }
            let n_prime = rule.value(n_h, big_n);
            if !(n_prime >= 1.0 && n_prime < n_h as f64) {
                issues.push(ConfigIssue::new(
                    "bootstrap.n_prime_rule",
                    format!("rule {rule} gives n_h' = {n_prime} in stratum {h}; need 1 <= n_h' < n_h = {n_h}"),
                ));
                continue;
            }
            strata.push(StratumPlan {
                population_size: big_n,
                rows,
                n_prime,
            });
        }
        if !issues.is_empty() {
            return Err(Error::Config(issues));
        }
        if strata.is_empty() {
            return Err(Error::Empty("stratified sample".into()));
        }
        Ok(MirrorMatchDesign {
            strata,
            population_size: stratum_sizes.iter().sum(),
        })
    }

    pub fn stratum_count(&self) -> usize {
        self.strata.len()
    }

    /// One mirror-match resample: per stratum, round `n_h'`, derive and
    /// round `k_h`, then concatenate `k_h` independent SRSWOR draws of size
    /// `n_h'` from the stratum's sample.
    pub fn draw(&self, rng: &mut StreamRng) -> MirrorMatchDraw {
        let mut rows = Vec::new();
        let mut strata = Vec::with_capacity(self.strata.len());
        for plan in &self.strata {
            let n_h = plan.rows.len();
            let n_prime = randomized_round(plan.n_prime, rng).clamp(1, n_h);
            let f = n_h as f64 / plan.population_size as f64;
            let f_star = n_prime as f64 / n_h as f64;
            let k_real = snap_integer(n_h as f64 * (1.0 - f_star) / (n_prime as f64 * (1.0 - f)));
            let k = randomized_round(k_real, rng).max(1);
            for _ in 0..k {
                rows.extend(draw_without_replacement(rng, n_h, n_prime).into_iter().map(|i| plan.rows[i]));
            }
            strata.push(StratumDraw {
                n_h,
                n_prime,
                k,
                size: n_prime * k,
            });
        }
        MirrorMatchDraw { rows, strata }
    }

    fn total(&self, tilde_y: &[f64], draw: &MirrorMatchDraw, kind: MirrorMatchTotal) -> f64 {
        let n_star: usize = draw.strata.iter().map(|s| s.size).sum();
        let mut offset = 0;
        let mut total = 0.0;
        for (plan, s) in self.strata.iter().zip(&draw.strata) {
            let sum: f64 = tilde_y[offset..offset + s.size].iter().sum();
            offset += s.size;
            total += match kind {
                MirrorMatchTotal::Expanded => plan.population_size as f64 / s.size as f64 * sum,
                MirrorMatchTotal::Literal => s.n_h as f64 / s.n_prime as f64 * sum,
            };
        }
        match kind {
            MirrorMatchTotal::Expanded => total,
            MirrorMatchTotal::Literal => self.population_size as f64 / n_star as f64 * total,
        }
    }
}

/// Mirror-match bootstrap for a stratified sample.
pub fn mmb_variance(
    data: &SampleData,
    design: &MirrorMatchDesign,
    kind: MirrorMatchTotal,
    imputer: &Imputer<'_>,
    b: usize,
    seed: StreamSeed,
) -> Result<BootstrapVariance> {
    check_replicates(b)?;
    let replicates = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed.child(rep as u64).rng();
            run_replicate(
                data,
                rep,
                &mut rng,
                |rng| {
                    let d = design.draw(rng);
                    (d.rows.clone(), d)
                },
                |tilde_y, d| design.total(tilde_y, d, kind),
                imputer,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(replicates))
}

/// Normal-theory interval `total ± z·sqrt(variance)` at the given level.
pub fn confidence_interval(total: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) {
        return Err(Error::Domain(format!("variance must be nonnegative, got {variance}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0,1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * variance.sqrt();
    Ok((total - half, total + half))
}
