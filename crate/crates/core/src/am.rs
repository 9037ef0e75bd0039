//! Additive models `y = a₀ + Σ_j a_j(x_j) + ε` fitted by backfitting, with one
//! penalized cubic spline per covariate.
//!
//! Each cycle refits every smooth to its partial residuals and centers it to
//! weighted mean zero, so the intercept is the weighted mean of `y`. During the
//! first `reselect_cycles` cycles each term's `λ` is re-chosen by GCV; after
//! that the `λ`s are frozen and the remaining iterations are plain linear
//! backfitting, which converges.

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::scalar::Real;
use crate::spline::{default_lambda_grid, Factored, SplineBasis, SplineFit, Smoother};

#[derive(Debug, Clone, PartialEq)]
pub struct AmConfig<T> {
    /// Target basis dimension per smooth.
    pub basis_size: usize,
    pub lambda_grid: Vec<T>,
    /// Stop when ‖F_new − F_old‖ / ‖F_old‖ falls below this (in-sample fitted values).
    pub tol: T,
    pub max_iter: usize,
    /// Cycles during which `λ` is re-selected by GCV before being frozen.
    pub reselect_cycles: usize,
    /// Skip GCV and use these per-term `λ`s (one per covariate).
    pub fixed_lambdas: Option<Vec<T>>,
}

impl<T: Real> Default for AmConfig<T> {
    fn default() -> Self {
        AmConfig {
            basis_size: 10,
            lambda_grid: default_lambda_grid(),
            tol: T::lit(1e-6),
            max_iter: 50,
            reselect_cycles: 5,
            fixed_lambdas: None,
        }
    }
}

/// Minimum number of observations for an additive fit.
pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AmFit<T> {
    pub intercept: T,
    /// One entry per covariate; `None` when the covariate had fewer than four
    /// distinct values and its term was dropped.
    pub smooths: Vec<Option<SplineFit<T>>>,
    /// Total constant removed from each smooth to center it.
    pub centers: Vec<T>,
    /// Weighted mean squared in-sample residual.
    pub residual_variance: T,
    pub fitted: Vec<T>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Penalized objective `Σ w̃ e² + Σ_j λ_j c_jᵀ Ω_j c_j` after each cycle.
    pub objective_trace: Vec<T>,
}

impl<T: Real> AmFit<T> {
    pub fn covariate_count(&self) -> usize {
        self.smooths.len()
    }

    pub fn dropped_terms(&self) -> Vec<usize> {
        self.smooths
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(j, _)| j)
            .collect()
    }

    pub fn lambdas(&self) -> Vec<Option<T>> {
        self.smooths.iter().map(|s| s.as_ref().map(|f| f.lambda)).collect()
    }

    pub fn predict(&self, x_new: ArrayView2<'_, T>) -> Result<Vec<T>> {
        predict_am(self, x_new)
    }
}

struct Term<'a, T> {
    smoother: Smoother<'a, T>,
    fitted: Vec<T>,
    coefficients: Array1<T>,
    factored: Option<Factored<T>>,
    center: T,
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Backfitting fit of the additive model on `x` (`n × q`, covariates in `[0,1]`).
pub fn fit_am<T: Real>(
    x: ArrayView2<'_, T>,
    y: &[T],
    weights: Option<&[T]>,
    config: &AmConfig<T>,
) -> Result<AmFit<T>> {
    let (n, q) = x.dim();
    if y.len() != n {
        return Err(Error::Domain(format!("x has {n} rows but y has {} values", y.len())));
    }
    if q == 0 {
        return Err(Error::Domain("additive model needs at least one covariate".into()));
    }
    if n < MIN_OBSERVATIONS.max(4) {
        return Err(Error::DegenerateFit(format!(
            "{n} observations, need at least {MIN_OBSERVATIONS}"
        )));
    }
    if let Some(fixed) = &config.fixed_lambdas {
        if fixed.len() != q {
            return Err(Error::Domain(format!("{} fixed lambdas for {q} covariates", fixed.len())));
        }
    } else if config.lambda_grid.is_empty() {
        return Err(Error::Domain("lambda grid is empty".into()));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Domain(format!("{} weights for {n} observations", w.len())));
        }
    }

    let columns: Vec<Vec<T>> = (0..q).map(|j| x.column(j).to_vec()).collect();
    let mut bases: Vec<Option<SplineBasis<T>>> = Vec::with_capacity(q);
    for col in &columns {
        match SplineBasis::from_data(col, config.basis_size) {
            Ok(b) => bases.push(Some(b)),
            Err(Error::DegenerateBasis { .. }) => bases.push(None),
            Err(e) => return Err(e),
        }
    }

    let mut terms: Vec<Option<Term<'_, T>>> = Vec::with_capacity(q);
    for (basis, col) in bases.iter().zip(columns) {
        terms.push(match basis {
            None => None,
            Some(b) => {
                let smoother = Smoother::new(b, &col, weights)?;
                let factored = match &config.fixed_lambdas {
                    Some(fixed) => Some(smoother.factor(fixed[terms.len()])?),
                    None => None,
                };
                Some(Term {
                    smoother,
                    fitted: vec![T::zero(); n],
                    coefficients: Array1::zeros(b.dim()),
                    factored,
                    center: T::zero(),
                })
            }
        });
    }

    let w: Vec<T> = match weights {
        Some(w) => {
            if w.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
                return Err(Error::Domain("weights must be positive and finite".into()));
            }
            let total: T = w.iter().copied().sum();
            w.iter().map(|&v| v / total).collect()
        }
        None => vec![T::one() / T::from_usize_lossy(n); n],
    };
    let intercept: T = w.iter().zip(y).map(|(&wi, &yi)| wi * yi).sum();
    let mut smooth_sum = vec![T::zero(); n];
    let mut partial = vec![T::zero(); n];
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut cycles = 0;

    for cycle in 1..=config.max_iter.max(1) {
        cycles = cycle;
        let previous: Vec<T> = smooth_sum.iter().map(|&s| intercept + s).collect();
        let reselect = config.fixed_lambdas.is_none() && cycle <= config.reselect_cycles.max(1);
        for term in terms.iter_mut().flatten() {
            for i in 0..n {
                partial[i] = y[i] - intercept - smooth_sum[i] + term.fitted[i];
            }
            let mut coef = if reselect || term.factored.is_none() {
                let sel = term.smoother.select(&partial, &config.lambda_grid)?;
                term.factored = Some(sel.factored);
                sel.coefficients
            } else {
                let f = term.factored.as_ref().expect("frozen factor");
                term.smoother.coefficients(f, &term.smoother.rhs(&partial)).1
            };
            let mut fitted = term.smoother.fitted(&coef);
            let mean: T = w.iter().zip(&fitted).map(|(&wi, &f)| wi * f).sum();
            coef.mapv_inplace(|c| c - mean);
            term.center += mean;
            for i in 0..n {
                fitted[i] -= mean;
                smooth_sum[i] += fitted[i] - term.fitted[i];
            }
            term.fitted = fitted;
            term.coefficients = coef;
        }

        let rss: T = (0..n)
            .map(|i| {
                let e = y[i] - intercept - smooth_sum[i];
                w[i] * e * e
            })
            .sum();
        let penalty: T = terms
            .iter()
            .flatten()
            .map(|t| {
                let lambda = t.factored.as_ref().map_or(T::zero(), |f| f.lambda);
                lambda * quad_form(t.smoother.basis.penalty(), t.coefficients.view())
            })
            .sum();
        objective_trace.push(rss + penalty);

        let current: Vec<T> = smooth_sum.iter().map(|&s| intercept + s).collect();
        let delta: Vec<T> = current.iter().zip(&previous).map(|(a, b)| *a - *b).collect();
        let scale = norm(&previous).max(T::min_positive_value());
        if norm(&delta) / scale < config.tol {
            converged = true;
            break;
        }
        if terms.iter().all(Option::is_none) {
            converged = true;
            break;
        }
    }

    let fitted: Vec<T> = smooth_sum.iter().map(|&s| intercept + s).collect();
    let residual_variance: T = (0..n)
        .map(|i| {
            let e = y[i] - fitted[i];
            w[i] * e * e
        })
        .sum();
    let mut smooths = Vec::with_capacity(q);
    let mut centers = Vec::with_capacity(q);
    for term in terms {
        match term {
            None => {
                smooths.push(None);
                centers.push(T::zero());
            }
            Some(t) => {
                let f = t.factored.as_ref().expect("every active term fitted at least once");
                let target: Vec<T> = (0..n).map(|i| y[i] - fitted[i] + t.fitted[i]).collect();
                smooths.push(Some(t.smoother.into_fit(t.coefficients, f.lambda, f.edf, &target)));
                centers.push(t.center);
            }
        }
    }
    Ok(AmFit {
        intercept,
        smooths,
        centers,
        residual_variance,
        fitted,
        iterations_used: cycles,
        converged,
        objective_trace,
    })
}

/// `â₀ + Σ_j â_j(x_new,j)` for each row; covariates are clamped to `[0,1]`.
pub fn predict_am<T: Real>(fit: &AmFit<T>, x_new: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if x_new.ncols() != fit.covariate_count() {
        return Err(Error::Domain(format!(
            "model has {} covariates, got {} columns",
            fit.covariate_count(),
            x_new.ncols()
        )));
    }
    Ok(x_new
        .rows()
        .into_iter()
        .map(|row| {
            fit.intercept
                + fit
                    .smooths
                    .iter()
                    .zip(row.iter())
                    .filter_map(|(s, &v)| s.as_ref().map(|s| s.predict_one(v)))
                    .sum::<T>()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use crate::spline::{build_basis, gcv_select, predict_spline};
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn design(n: usize, q: usize, seed: u64) -> Array2<f64> {
        let mut rng = StreamSeed::new(seed).rng();
        Array2::from_shape_fn((n, q), |_| rng.random::<f64>())
    }

    fn noise(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = StreamSeed::new(seed).child(1).rng();
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn single_term_matches_gcv_select() {
        let x = design(300, 1, 1);
        let e = noise(300, 0.1, 1);
        let col = x.column(0).to_vec();
        let y: Vec<f64> = col.iter().zip(&e).map(|(v, e)| (3.0 * v).sin() + e).collect();
        let fit = fit_am(x.view(), &y, None, &AmConfig::default()).unwrap();
        let basis = build_basis(&col, 10).unwrap();
        let direct = gcv_select(&basis, &col, &y, None, &default_lambda_grid()).unwrap();
        for (a, b) in fit.fitted.iter().zip(direct.predict(&col)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn population_one_residual_variance() {
        let n = 1500;
        let x = design(n, 4, 2);
        let e = noise(n, 0.1, 2);
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .zip(&e)
            .map(|(r, e)| 1.0 + 5.0 * r[0] + r[1] + r[2] + r[3] + e)
            .collect();
        let fit = fit_am(x.view(), &y, None, &AmConfig::default()).unwrap();
        assert!(fit.converged);
        let mse = fit.fitted.iter().zip(&y).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / n as f64;
        assert!((0.008..=0.013).contains(&mse), "{mse}");
        assert!((fit.residual_variance - mse).abs() < 1e-12);
    }

    #[test]
    fn smooths_are_centered() {
        let n = 400;
        let x = design(n, 3, 3);
        let e = noise(n, 0.2, 3);
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64).collect();
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .zip(&e)
            .map(|(r, e)| (6.0 * r[0]).cos() + r[1] * r[1] + 0.5 * r[2] + e)
            .collect();
        let fit = fit_am(x.view(), &y, Some(&w), &AmConfig::default()).unwrap();
        let wsum: f64 = w.iter().sum();
        let ybar: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / wsum;
        assert!((fit.intercept - ybar).abs() < 1e-12);
        for (j, s) in fit.smooths.iter().enumerate() {
            let s = s.as_ref().unwrap();
            let col = x.column(j).to_vec();
            let mean: f64 = s.predict(&col).iter().zip(&w).map(|(f, w)| f * w).sum::<f64>() / wsum;
            assert!(mean.abs() < 1e-8, "term {j}: {mean}");
        }
    }

    #[test]
    fn linear_truth_reproduced() {
        let x = design(200, 3, 4);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 0.5 + 2.0 * r[0] - r[1] + 3.0 * r[2]).collect();
        let fit = fit_am(x.view(), &y, None, &AmConfig::default()).unwrap();
        let pred = predict_am(&fit, x.view()).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_response() {
        let x = design(50, 2, 5);
        let fit = fit_am(x.view(), &vec![4.0; 50], None, &AmConfig::default()).unwrap();
        let grid = design(10, 2, 6);
        for p in predict_am(&fit, grid.view()).unwrap() {
            assert!((p - fit.intercept).abs() < 1e-10);
        }
    }

    #[test]
    fn prediction_is_sum_of_terms() {
        let x = design(300, 4, 7);
        let e = noise(300, 0.1, 7);
        let y: Vec<f64> = x.rows().into_iter().zip(&e).map(|(r, e)| r[0] * r[1] + r[2].exp() + e).collect();
        let fit = fit_am(x.view(), &y, None, &AmConfig::default()).unwrap();
        let new = design(25, 4, 8);
        let pred = predict_am(&fit, new.view()).unwrap();
        for (i, p) in pred.iter().enumerate() {
            let mut manual = fit.intercept;
            for j in 0..4 {
                manual += predict_spline(fit.smooths[j].as_ref().unwrap(), &[new[[i, j]]])[0];
            }
            assert!((p - manual).abs() < 1e-12);
        }
        assert!(predict_am(&fit, design(3, 2, 9).view()).is_err());
    }

    #[test]
    fn degenerate_covariate_dropped() {
        let mut x = design(60, 2, 10);
        for i in 0..60 {
            x[[i, 1]] = if i % 2 == 0 { 0.0 } else { 1.0 };
        }
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] + r[1]).collect();
        let fit = fit_am(x.view(), &y, None, &AmConfig::default()).unwrap();
        assert_eq!(fit.dropped_terms(), vec![1]);
        assert!(matches!(
            fit_am(design(5, 2, 11).view(), &[1.0; 5], None, &AmConfig::default()),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn frozen_lambda_objective_nonincreasing() {
        let x = design(300, 4, 12);
        let e = noise(300, 0.3, 12);
        // correlated covariates slow backfitting down enough to see many cycles
        let mut xc = x.clone();
        for i in 0..300 {
            xc[[i, 1]] = 0.7 * x[[i, 0]] + 0.3 * x[[i, 1]];
        }
        let y: Vec<f64> = xc.rows().into_iter().zip(&e).map(|(r, e)| (4.0 * r[0]).sin() + r[1] + e).collect();
        let config = AmConfig {
            fixed_lambdas: Some(vec![1e-4, 1e-3, 1e-2, 1e-1]),
            tol: 1e-12,
            max_iter: 200,
            ..AmConfig::default()
        };
        let fit = fit_am(xc.view(), &y, None, &config).unwrap();
        assert!(fit.objective_trace.len() > 3);
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn covariate_order_insensitive() {
        let x = design(500, 3, 13);
        let e = noise(500, 0.1, 13);
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .zip(&e)
            .map(|(r, e)| (3.0 * r[0]).sin() + r[1] * r[1] + r[2] + e)
            .collect();
        let config = AmConfig { tol: 1e-10, ..AmConfig::default() };
        let a = fit_am(x.view(), &y, None, &config).unwrap();
        let perm = ndarray::stack![ndarray::Axis(1), x.column(2), x.column(0), x.column(1)];
        let b = fit_am(perm.view(), &y, None, &config).unwrap();
        let num: f64 = a.fitted.iter().zip(&b.fitted).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.fitted.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "{}", num / den);
    }
}
