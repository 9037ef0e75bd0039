//! Without-replacement sampling designs: SRSWOR, stratified SRSWOR, the
//! recursive median-split stratification, and the Horvitz–Thompson estimator.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::population::Population;

/// A without-replacement sample: population unit indices with their
/// first-order inclusion probabilities and design weights `d = 1/π`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    unit_ids: Vec<usize>,
    inclusion: Vec<f64>,
    weights: Vec<f64>,
    strata: Option<Vec<usize>>,
}

impl Sample {
    pub fn new(unit_ids: Vec<usize>, inclusion: Vec<f64>, strata: Option<Vec<usize>>) -> Result<Self> {
        if unit_ids.len() != inclusion.len() {
            return Err(Error::Domain("unit_ids and inclusion probabilities differ in length".into()));
        }
        if let Some(s) = &strata {
            if s.len() != unit_ids.len() {
                return Err(Error::Domain("stratum labels differ in length from unit_ids".into()));
            }
        }
        if let Some(p) = inclusion.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::Domain(format!("inclusion probability {p} outside (0,1]")));
        }
        let mut sorted = unit_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("duplicate unit in without-replacement sample".into()));
        }
        let weights = inclusion.iter().map(|p| 1.0 / p).collect();
        Ok(Sample {
            unit_ids,
            inclusion,
            weights,
            strata,
        })
    }

    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    pub fn unit_ids(&self) -> &[usize] {
        &self.unit_ids
    }

    pub fn inclusion_probs(&self) -> &[f64] {
        &self.inclusion
    }

    pub fn design_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    /// Debug export: `unit_id,pi,stratum`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "pi", "stratum"])?;
        for i in 0..self.len() {
            let stratum = self.strata.as_ref().map(|s| s[i].to_string()).unwrap_or_default();
            w.write_record([self.unit_ids[i].to_string(), self.inclusion[i].to_string(), stratum])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Draws `n` distinct indices uniformly from `0..population` (sorted ascending).
pub(crate) fn draw_without_replacement<R: Rng + ?Sized>(rng: &mut R, population: usize, n: usize) -> Vec<usize> {
    let mut ids = rand::seq::index::sample(rng, population, n).into_vec();
    ids.sort_unstable();
    ids
}

/// Simple random sampling without replacement of `n` out of `N` units.
pub fn srswor<R: Rng + ?Sized>(population_size: usize, n: usize, rng: &mut R) -> Result<Sample> {
    if n == 0 || n > population_size {
        return Err(Error::Domain(format!(
            "SRSWOR needs 1 <= n <= N, got n={n}, N={population_size}"
        )));
    }
    let ids = draw_without_replacement(rng, population_size, n);
    let pi = n as f64 / population_size as f64;
    Sample::new(ids, vec![pi; n], None)
}

/// Stratum label (1-based) per population unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrataAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl StrataAssignment {
    /// `labels[i]` must lie in `1..=H`, with every stratum nonempty.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let h = labels.iter().copied().max().unwrap_or(0);
        if labels.is_empty() || labels.contains(&0) {
            return Err(Error::Domain("stratum labels must be nonempty and 1-based".into()));
        }
        let mut sizes = vec![0usize; h];
        for &l in &labels {
            sizes[l - 1] += 1;
        }
        if let Some(h) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Domain(format!("stratum {} is empty", h + 1)));
        }
        Ok(StrataAssignment { labels, sizes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `N_h` for `h = 1..=H` (index `h-1`).
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn stratum_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn population_size(&self) -> usize {
        self.labels.len()
    }

    /// Unit indices of stratum `h` (1-based), ascending.
    pub fn members(&self, h: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == h)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Recursive median splits over `vars` (covariate column indices).
///
/// Each group is split at its own median of the current variable. Units equal
/// to the median join the lower half; the lower half then hands its
/// largest-valued units (ties by unit index) to the upper half until the two
/// sizes differ by at most one. `d` variables yield up to `2^d` strata.
pub fn stratify_by_medians(pop: &Population, vars: &[usize]) -> Result<StrataAssignment> {
    if vars.is_empty() {
        return Err(Error::Domain("stratification needs at least one variable".into()));
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= pop.covariate_count()) {
        return Err(Error::Domain(format!(
            "stratification variable index {v} out of range (q = {})",
            pop.covariate_count()
        )));
    }
    let mut groups: Vec<Vec<usize>> = vec![(0..pop.size()).collect()];
    for &var in vars {
        let col = pop.covariate(var);
        let mut next = Vec::with_capacity(groups.len() * 2);
        for mut g in groups {
            g.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let m = g.len();
            let median = if m % 2 == 1 {
                col[g[m / 2]]
            } else {
                0.5 * (col[g[m / 2 - 1]] + col[g[m / 2]])
            };
            let mut lower = g.partition_point(|&i| col[i] <= median);
            while lower > m - lower + 1 {
                lower -= 1;
            }
            let upper = g.split_off(lower);
            next.push(g);
            next.push(upper);
        }
        groups = next;
    }
    let mut labels = vec![0usize; pop.size()];
    for (h, g) in groups.iter().filter(|g| !g.is_empty()).enumerate() {
        for &i in g {
            labels[i] = h + 1;
        }
    }
    StrataAssignment::new(labels)
}

/// Snaps values within 1e-9 of an integer onto it (`0.2 * 625` drifts).
pub(crate) fn snap_integer(value: f64) -> f64 {
    if (value - value.round()).abs() < 1e-9 {
        value.round()
    } else {
        value
    }
}

/// Rounds `value` down or up, up with probability equal to its fractional part.
pub fn randomized_round<R: Rng + ?Sized>(value: f64, rng: &mut R) -> usize {
    let floor = value.floor();
    let frac = value - floor;
    let up = frac > 0.0 && rng.random::<f64>() < frac;
    floor as usize + usize::from(up)
}

/// Independent SRSWOR in every stratum at sampling rate `rate`; non-integer
/// stratum sample sizes are randomly rounded.
pub fn stratified_sample<R: Rng + ?Sized>(strata: &StrataAssignment, rate: f64, rng: &mut R) -> Result<Sample> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Domain(format!("sampling rate must lie in (0,1], got {rate}")));
    }
    let mut ids = Vec::new();
    let mut pis = Vec::new();
    let mut labels = Vec::new();
    for (hi, &big_n) in strata.sizes().iter().enumerate() {
        let h = hi + 1;
        let target = snap_integer(rate * big_n as f64);
        let n_h = randomized_round(target, rng).min(big_n);
        if n_h == 0 {
            return Err(Error::Domain(format!(
                "stratum {h} (N_h = {big_n}) gets sample size 0 at rate {rate}"
            )));
        }
        let members = strata.members(h);
        let pi = n_h as f64 / big_n as f64;
        for k in draw_without_replacement(rng, big_n, n_h) {
            ids.push(members[k]);
            pis.push(pi);
            labels.push(h);
        }
    }
    Sample::new(ids, pis, Some(labels))
}

/// Horvitz–Thompson estimate Σ y_i/π_i.
pub fn horvitz_thompson(sample: &Sample, y: &[f64]) -> Result<f64> {
    if y.len() != sample.len() {
        return Err(Error::Domain(format!(
            "got {} y values for a sample of {}",
            y.len(),
            sample.len()
        )));
    }
    Ok(y.iter().zip(sample.inclusion_probs()).map(|(y, p)| y / p).sum())
}
