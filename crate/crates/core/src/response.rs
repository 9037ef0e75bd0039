//! Logistic item-nonresponse mechanism driven by one covariate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::population::Population;
use crate::sampling::Sample;

/// Response indicators, one per sampled unit (aligned with `Sample::unit_ids`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSet {
    indicators: Vec<bool>,
}

impl ResponseSet {
    pub fn new(indicators: Vec<bool>) -> Self {
        ResponseSet { indicators }
    }

    pub fn indicators(&self) -> &[bool] {
        &self.indicators
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    /// Positions (within the sample) of respondents.
    pub fn respondents(&self) -> Vec<usize> {
        self.positions(true)
    }

    pub fn nonrespondents(&self) -> Vec<usize> {
        self.positions(false)
    }

    pub fn respondent_count(&self) -> usize {
        self.indicators.iter().filter(|&&r| r).count()
    }

    fn positions(&self, want: bool) -> Vec<usize> {
        self.indicators
            .iter()
            .enumerate()
            .filter(|(_, &r)| r == want)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `p = logistic(b0 + b1·x_c)` where `x_c` is covariate `covariate_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticResponseModel {
    pub b0: f64,
    pub b1: f64,
    pub covariate_index: usize,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticResponseModel {
    pub fn probability(&self, x: f64) -> f64 {
        logistic(self.b0 + self.b1 * x)
    }

    /// Mean response probability over every unit of `pop`.
    pub fn mean_probability(&self, pop: &Population) -> f64 {
        let col = pop.covariate(self.covariate_index);
        col.iter().map(|&x| self.probability(x)).sum::<f64>() / col.len() as f64
    }
}

/// Solves for the intercept `b0` (slope `b1` fixed) such that the population
/// mean response probability equals `target_rate`, by bisection.
pub fn calibrate_intercept(
    pop: &Population,
    covariate_index: usize,
    b1: f64,
    target_rate: f64,
) -> Result<LogisticResponseModel> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Domain(format!("target response rate must lie in (0,1), got {target_rate}")));
    }
    if covariate_index >= pop.covariate_count() {
        return Err(Error::Domain(format!(
            "response covariate index {covariate_index} out of range (q = {})",
            pop.covariate_count()
        )));
    }
    if !b1.is_finite() {
        return Err(Error::Domain("b1 must be finite".into()));
    }
    let mean_p = |b0: f64| {
        LogisticResponseModel {
            b0,
            b1,
            covariate_index,
        }
        .mean_probability(pop)
    };
    let centre = (target_rate / (1.0 - target_rate)).ln();
    let reach = b1.abs() + 1.0; // covariates lie in [0,1]
    let (mut lo, mut hi) = (centre - reach, centre + reach);
    if !(mean_p(lo) <= target_rate && mean_p(hi) >= target_rate) {
        return Err(Error::Numerical("bisection bracket does not contain the target rate".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let b0 = 0.5 * (lo + hi);
    let achieved = mean_p(b0);
    if (achieved - target_rate).abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "calibration reached mean rate {achieved}, target {target_rate}"
        )));
    }
    Ok(LogisticResponseModel {
        b0,
        b1,
        covariate_index,
    })
}

/// Independent Bernoulli(p_i) response indicator for each sampled unit.
pub fn draw_response<R: Rng + ?Sized>(
    sample: &Sample,
    model: &LogisticResponseModel,
    pop: &Population,
    rng: &mut R,
) -> ResponseSet {
    let col = pop.covariate(model.covariate_index);
    let indicators = sample
        .unit_ids()
        .iter()
        .map(|&u| rng.random::<f64>() < model.probability(col[u]))
        .collect();
    ResponseSet::new(indicators)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_synthetic, SyntheticId};
    use crate::rng::StreamSeed;
    use crate::sampling::srswor;

    fn pop() -> Population {
        generate_synthetic(SyntheticId::new(1).unwrap(), 10_000, 0.1, StreamSeed::new(3)).unwrap()
    }

    #[test]
    fn flat_slope_is_logit() {
        let m = calibrate_intercept(&pop(), 0, 0.0, 0.75).unwrap();
        assert!((m.b0 - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn calibrated_rate_hits_target() {
        let p = pop();
        let m = calibrate_intercept(&p, 0, 1.0, 0.75).unwrap();
        assert!((m.mean_probability(&p) - 0.75).abs() < 1e-6);
        let m70 = calibrate_intercept(&p, 0, 1.0, 0.70).unwrap();
        assert!((m70.mean_probability(&p) - 0.70).abs() < 1e-6);
        assert!(m70.b0 < m.b0);
    }

    #[test]
    fn bad_target_rejected() {
        assert!(calibrate_intercept(&pop(), 0, 1.0, 1.0).is_err());
        assert!(calibrate_intercept(&pop(), 9, 1.0, 0.5).is_err());
    }

    #[test]
    fn saturated_models() {
        let p = pop();
        let mut rng = StreamSeed::new(4).rng();
        let s = srswor(p.size(), 500, &mut rng).unwrap();
        let all = LogisticResponseModel { b0: 50.0, b1: 1.0, covariate_index: 0 };
        assert_eq!(draw_response(&s, &all, &p, &mut rng).respondent_count(), 500);
        let none = LogisticResponseModel { b0: -50.0, b1: 1.0, covariate_index: 0 };
        let r = draw_response(&s, &none, &p, &mut rng);
        assert_eq!(r.respondent_count(), 0);
        assert_eq!(r.nonrespondents().len(), 500);
    }

    #[test]
    fn mean_response_fraction() {
        let p = pop();
        let m = calibrate_intercept(&p, 0, 1.0, 0.75).unwrap();
        let mut rng = StreamSeed::new(5).rng();
        let draws = 1000;
        let mut frac = 0.0;
        for _ in 0..draws {
            let s = srswor(p.size(), 2000, &mut rng).unwrap();
            frac += draw_response(&s, &m, &p, &mut rng).respondent_count() as f64 / 2000.0;
        }
        frac /= draws as f64;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    #[test]
    fn indicators_uncorrelated() {
        let p = pop();
        let m = calibrate_intercept(&p, 0, 0.0, 0.5).unwrap();
        let mut rng = StreamSeed::new(6).rng();
        let s = srswor(p.size(), 2, &mut rng).unwrap();
        let draws = 20_000;
        let (mut a, mut b, mut ab) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let r = draw_response(&s, &m, &p, &mut rng);
            let (ra, rb) = (r.indicators()[0] as u8 as f64, r.indicators()[1] as u8 as f64);
            a += ra;
            b += rb;
            ab += ra * rb;
        }
        let n = draws as f64;
        let cov = ab / n - (a / n) * (b / n);
        let corr = cov / ((a / n) * (1.0 - a / n) * (b / n) * (1.0 - b / n)).sqrt();
        assert!(corr.abs() < 0.03, "{corr}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn calibration_monotone(t1 in 0.05f64..0.95, t2 in 0.05f64..0.95, b1 in -3.0f64..3.0) {
            let x = ndarray::Array2::from_shape_fn((200, 1), |(i, _)| i as f64 / 199.0);
            let p = Population::new(vec![0.0; 200], x).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            proptest::prop_assume!(hi - lo > 1e-6);
            let a = calibrate_intercept(&p, 0, b1, lo).unwrap();
            let b = calibrate_intercept(&p, 0, b1, hi).unwrap();
            proptest::prop_assert!(a.b0 < b.b0);
        }
    }
}
