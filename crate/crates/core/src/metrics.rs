//! Monte Carlo comparison measures (MRPE, RB, RRVAR, RRMSE, bootstrap
//! variance and coverage) and average ranks of methods across populations.

use crate::error::{Error, Result};
use crate::imputation::Method;
use crate::scalar::Real;

/// Normal critical value of the nominal 95% intervals.
pub const Z95: f64 = 1.96;

/// Mean absolute relative prediction error over one replicate's
/// nonrespondents. Units with `y = 0` are skipped and counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionError<T> {
    /// `None` when no nonrespondent had a nonzero `y`.
    pub mean_relative: Option<T>,
    pub excluded: usize,
}

impl<T: Real> PredictionError<T> {
    pub fn compute(imputed: &[T], truth: &[T]) -> Result<Self> {
        if imputed.len() != truth.len() {
            return Err(Error::Domain("imputed and true values differ in length".into()));
        }
        let mut sum = T::zero();
        let mut count = 0usize;
        let mut excluded = 0usize;
        for (&ys, &y) in imputed.iter().zip(truth) {
            if y == T::zero() {
                excluded += 1;
            } else {
                sum += ((ys - y) / y).abs();
                count += 1;
            }
        }
        Ok(PredictionError {
            mean_relative: (count > 0).then(|| sum / T::from_usize_lossy(count)),
            excluded,
        })
    }
}

/// Outcome of one method on one Monte Carlo replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome<T> {
    pub total: T,
    pub prediction: PredictionError<T>,
    pub boot_variance: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult<T> {
    pub method: Method,
    pub replicates: Vec<ReplicateOutcome<T>>,
}

/// Per-method, per-replicate outcomes together with the true total.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult<T> {
    pub true_total: T,
    pub methods: Vec<MethodResult<T>>,
}

impl<T: Real> SimulationResult<T> {
    pub fn new(true_total: T) -> Self {
        SimulationResult {
            true_total,
            methods: Vec::new(),
        }
    }

    pub fn push(&mut self, method: Method, outcome: ReplicateOutcome<T>) {
        match self.methods.iter_mut().find(|m| m.method == method) {
            Some(m) => m.replicates.push(outcome),
            None => self.methods.push(MethodResult {
                method,
                replicates: vec![outcome],
            }),
        }
    }

    pub fn method(&self, method: Method) -> Result<&MethodResult<T>> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .ok_or_else(|| Error::Domain(format!("no results recorded for method {method}")))
    }

    pub fn totals(&self, method: Method) -> Result<Vec<T>> {
        Ok(self.method(method)?.replicates.iter().map(|r| r.total).collect())
    }

    fn nonzero_total(&self) -> Result<T> {
        if self.true_total == T::zero() {
            return Err(Error::Domain("true total is zero; relative measures are undefined".into()));
        }
        Ok(self.true_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mrpe<T> {
    pub value: T,
    /// Nonrespondents skipped because their true `y` is zero.
    pub excluded: usize,
}

/// `(1/L) Σ_ℓ (1/n_m) Σ_{S_m} |(y* − y)/y|`, over replicates that have at
/// least one nonrespondent with nonzero `y`.
pub fn mrpe<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<Mrpe<T>> {
    let reps = &results.method(method)?.replicates;
    let terms: Vec<T> = reps.iter().filter_map(|r| r.prediction.mean_relative).collect();
    let excluded = reps.iter().map(|r| r.prediction.excluded).sum();
    let value = if terms.is_empty() {
        T::zero()
    } else {
        terms.iter().copied().sum::<T>() / T::from_usize_lossy(terms.len())
    };
    Ok(Mrpe { value, excluded })
}

fn mean<T: Real>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

/// Monte Carlo variance of the totals with divisor `L − 1`.
fn mc_variance<T: Real>(totals: &[T]) -> Result<T> {
    if totals.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 replicates, got {}", totals.len())));
    }
    let m = mean(totals);
    Ok(totals.iter().map(|&t| (t - m) * (t - m)).sum::<T>() / T::from_usize_lossy(totals.len() - 1))
}

/// Relative bias `(Ŷ^(·) − Y)/Y`; defined from a single replicate on.
pub fn rb<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<T> {
    let y = results.nonzero_total()?;
    let totals = results.totals(method)?;
    Ok((mean(&totals) - y) / y)
}

/// Relative root variance `sqrt(VAR)/Y`.
pub fn rrvar<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<T> {
    let y = results.nonzero_total()?;
    Ok(mc_variance(&results.totals(method)?)?.sqrt() / y)
}

/// Relative root mean squared error `sqrt((Ŷ^(·) − Y)² + VAR)/Y`.
pub fn rrmse<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<T> {
    let y = results.nonzero_total()?;
    let totals = results.totals(method)?;
    let var = mc_variance(&totals)?;
    let bias = mean(&totals) - y;
    Ok((bias * bias + var).sqrt() / y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary<T> {
    /// Monte Carlo variance of the totals.
    pub var: T,
    /// Mean bootstrap variance over replicates.
    pub var_boot: T,
    /// Share of replicates whose interval `Ŷ ± 1.96 sqrt(V_boot)` covers `Y`.
    pub coverage: T,
}

pub fn bootstrap_summary<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<BootstrapSummary<T>> {
    let reps = &results.method(method)?.replicates;
    let boots: Vec<T> = reps
        .iter()
        .map(|r| r.boot_variance)
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Domain(format!("bootstrap variance missing for some {method} replicates")))?;
    let totals: Vec<T> = reps.iter().map(|r| r.total).collect();
    let z = T::lit(Z95);
    let y = results.true_total;
    let covered = totals
        .iter()
        .zip(&boots)
        .filter(|(&t, &v)| {
            let half = z * v.sqrt();
            t - half <= y && y <= t + half
        })
        .count();
    Ok(BootstrapSummary {
        var: mc_variance(&totals)?,
        var_boot: mean(&boots),
        coverage: T::from_usize_lossy(covered) / T::from_usize_lossy(totals.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    Mrpe,
    Rb,
    Rrvar,
    Rrmse,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Mrpe, Measure::Rb, Measure::Rrvar, Measure::Rrmse];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Mrpe => "MRPE",
            Measure::Rb => "RB",
            Measure::Rrvar => "RRVAR",
            Measure::Rrmse => "RRMSE",
        }
    }
}

/// The four accuracy measures of one method on one population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodMeasures<T> {
    pub method: Method,
    pub mrpe: T,
    pub rb: T,
    pub rrvar: T,
    pub rrmse: T,
}

impl<T: Real> MethodMeasures<T> {
    pub fn get(&self, measure: Measure) -> T {
        match measure {
            Measure::Mrpe => self.mrpe,
            Measure::Rb => self.rb,
            Measure::Rrvar => self.rrvar,
            Measure::Rrmse => self.rrmse,
        }
    }

    /// Value used for ranking: RB is ranked on its absolute value.
    fn rank_key(&self, measure: Measure) -> T {
        match measure {
            Measure::Rb => self.rb.abs(),
            m => self.get(m),
        }
    }
}

pub fn measures<T: Real>(results: &SimulationResult<T>, method: Method) -> Result<MethodMeasures<T>> {
    Ok(MethodMeasures {
        method,
        mrpe: mrpe(results, method)?.value,
        rb: rb(results, method)?,
        rrvar: rrvar(results, method)?,
        rrmse: rrmse(results, method)?,
    })
}

/// Ranks with 1 for the smallest value; tied values share their average rank.
pub fn tie_averaged_ranks<T: Real>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("NaN in ranked values"));
    let mut ranks = vec![T::zero(); values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank ((i+1) + j)/2
        let r = T::from_usize_lossy(i + 1 + j) / T::lit(2.0);
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Average rank of every method for every measure.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable<T> {
    pub methods: Vec<Method>,
    /// `average[m][k]` is method `m`'s mean rank on `Measure::ALL[k]`.
    pub average: Vec<[T; 4]>,
    /// Per population, per method, per measure.
    pub per_population: Vec<Vec<[T; 4]>>,
}

impl<T: Real> RankTable<T> {
    pub fn average_rank(&self, method: Method, measure: Measure) -> Option<T> {
        let m = self.methods.iter().position(|&x| x == method)?;
        let k = Measure::ALL.iter().position(|&x| x == measure)?;
        Some(self.average[m][k])
    }
}

/// Ranks methods within each population (1 = best, RB on absolute value) and
/// averages the ranks across populations. Every population must report the
/// same methods.
pub fn rank_methods<T: Real>(per_population: &[Vec<MethodMeasures<T>>]) -> Result<RankTable<T>> {
    let first = per_population
        .first()
        .ok_or_else(|| Error::Empty("rank table needs at least one population".into()))?;
    let methods: Vec<Method> = first.iter().map(|m| m.method).collect();
    if methods.len() < 2 {
        return Err(Error::Domain("ranking needs at least two methods".into()));
    }
    let mut per_pop_ranks = Vec::with_capacity(per_population.len());
    for (p, rows) in per_population.iter().enumerate() {
        let ordered: Vec<&MethodMeasures<T>> = methods
            .iter()
            .map(|m| {
                rows.iter()
                    .find(|r| r.method == *m)
                    .ok_or_else(|| Error::Domain(format!("population {} lacks method {m}", p + 1)))
            })
            .collect::<Result<_>>()?;
        if rows.len() != methods.len() {
            return Err(Error::Domain(format!("population {} reports a different method set", p + 1)));
        }
        let mut ranks = vec![[T::zero(); 4]; methods.len()];
        for (k, &measure) in Measure::ALL.iter().enumerate() {
            let keys: Vec<T> = ordered.iter().map(|r| r.rank_key(measure)).collect();
            if keys.iter().any(|v| v.is_nan()) {
                return Err(Error::Numerical(format!("NaN {} in population {}", measure.name(), p + 1)));
            }
            for (m, r) in tie_averaged_ranks(&keys).into_iter().enumerate() {
                ranks[m][k] = r;
            }
        }
        per_pop_ranks.push(ranks);
    }
    let count = T::from_usize_lossy(per_population.len());
    let average = (0..methods.len())
        .map(|m| {
            let mut avg = [T::zero(); 4];
            for (k, slot) in avg.iter_mut().enumerate() {
                *slot = per_pop_ranks.iter().map(|r| r[m][k]).sum::<T>() / count;
            }
            avg
        })
        .collect();
    Ok(RankTable {
        methods,
        average,
        per_population: per_pop_ranks,
    })
}
