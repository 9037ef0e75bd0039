//! Imputation methods for a missing `y` and the imputed total estimator.
//!
//! All methods leave respondents' observed values untouched and fill every
//! nonrespondent. Weighted variants use the design weights `d_i = 1/π_i`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};

use crate::am::{fit_am, AmConfig, MIN_OBSERVATIONS};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::population::Population;
use crate::response::ResponseSet;
use crate::sampling::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Regression,
    Mean,
    NearestNeighbor,
    Am,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Regression, Method::Mean, Method::NearestNeighbor, Method::Am];

    pub fn name(self) -> &'static str {
        match self {
            Method::Regression => "regression",
            Method::Mean => "mean",
            Method::NearestNeighbor => "nn",
            Method::Am => "am",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reg" | "regression" => Ok(Method::Regression),
            "mean" => Ok(Method::Mean),
            "nn" | "nearest-neighbor" | "nearest_neighbor" => Ok(Method::NearestNeighbor),
            "am" | "additive" => Ok(Method::Am),
            other => Err(Error::Domain(format!(
                "unknown imputation method '{other}' (expected mean, reg, nn or am)"
            ))),
        }
    }
}

/// One row per sampled unit: covariates, `y` (NaN where missing), response
/// flag and design weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    unit_ids: Vec<usize>,
    x: Array2<f64>,
    y: Vec<f64>,
    respondent: Vec<bool>,
    weights: Vec<f64>,
}

impl SampleData {
    pub fn new(
        unit_ids: Vec<usize>,
        x: Array2<f64>,
        y: Vec<f64>,
        respondent: Vec<bool>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if x.nrows() != n || y.len() != n || respondent.len() != n || weights.len() != n {
            return Err(Error::Domain("sample data columns differ in length".into()));
        }
        if let Some(i) = (0..n).find(|&i| respondent[i] && !y[i].is_finite()) {
            return Err(Error::Domain(format!("respondent at row {i} has no finite y")));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain("design weights must be positive and finite".into()));
        }
        let y = y
            .into_iter()
            .zip(&respondent)
            .map(|(v, &r)| if r { v } else { f64::NAN })
            .collect();
        Ok(SampleData {
            unit_ids,
            x,
            y,
            respondent,
            weights,
        })
    }

    /// Observed data for a drawn sample: `y` is kept only for respondents.
    pub fn from_population(pop: &Population, sample: &Sample, response: &ResponseSet) -> Result<Self> {
        if response.len() != sample.len() {
            return Err(Error::Domain("response set and sample differ in length".into()));
        }
        let ids = sample.unit_ids().to_vec();
        let x = pop.x().select(Axis(0), &ids);
        let y = ids.iter().map(|&u| pop.y()[u]).collect();
        Self::new(ids, x, y, response.indicators().to_vec(), sample.design_weights().to_vec())
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

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn respondent(&self) -> &[bool] {
        &self.respondent
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn respondent_count(&self) -> usize {
        self.respondent.iter().filter(|&&r| r).count()
    }

    /// Rows `rows` (repeats allowed) with new design weights.
    pub fn resample(&self, rows: &[usize], weights: Vec<f64>) -> Result<Self> {
        Self::new(
            rows.iter().map(|&r| self.unit_ids[r]).collect(),
            self.x.select(Axis(0), rows),
            rows.iter().map(|&r| self.y[r]).collect(),
            rows.iter().map(|&r| self.respondent[r]).collect(),
            weights,
        )
    }

    fn respondent_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.respondent[i]).collect()
    }

    fn nonrespondent_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.respondent[i]).collect()
    }
}

/// A step down the AM → regression → mean chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Fallback {
    pub from: Method,
    pub to: Method,
    pub reason: String,
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}: {}", self.from, self.to, self.reason)
    }
}

/// Completed `ỹ`: observed values for respondents, imputed values otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    pub tilde_y: Vec<f64>,
    pub method: Method,
    pub fallbacks: Vec<Fallback>,
    /// Per-covariate smoothing parameters of the AM fit (`None` for dropped terms).
    pub lambdas: Vec<Option<f64>>,
}

impl ImputedDataset {
    fn complete(data: &SampleData, method: Method, imputed: &[(usize, f64)]) -> Self {
        let mut tilde_y = data.y.clone();
        for &(i, v) in imputed {
            tilde_y[i] = v;
        }
        ImputedDataset {
            tilde_y,
            method,
            fallbacks: Vec::new(),
            lambdas: Vec::new(),
        }
    }

    pub fn fallback_used(&self) -> bool {
        !self.fallbacks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationConfig {
    /// Use design weights in the fits (mean, regression, AM).
    pub weighted: bool,
    pub am: AmConfig<f64>,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            weighted: true,
            am: AmConfig::default(),
        }
    }
}

fn fit_weights(data: &SampleData, rows: &[usize], weighted: bool) -> Vec<f64> {
    rows.iter().map(|&i| if weighted { data.weights[i] } else { 1.0 }).collect()
}

/// Every nonrespondent gets `Σ_r d_k y_k / Σ_r d_k`.
pub fn impute_mean(data: &SampleData, weighted: bool) -> Result<ImputedDataset> {
    let resp = data.respondent_rows();
    if resp.is_empty() {
        return Err(Error::NoRespondents);
    }
    let w = fit_weights(data, &resp, weighted);
    let mean = resp.iter().zip(&w).map(|(&i, w)| w * data.y[i]).sum::<f64>() / w.iter().sum::<f64>();
    let imputed: Vec<(usize, f64)> = data.nonrespondent_rows().into_iter().map(|i| (i, mean)).collect();
    Ok(ImputedDataset::complete(data, Method::Mean, &imputed))
}

/// Weighted least-squares coefficients `(β₀, β₁..β_q)` on respondents.
pub fn regression_coefficients(data: &SampleData, weighted: bool) -> Result<Array1<f64>> {
    let resp = data.respondent_rows();
    if resp.is_empty() {
        return Err(Error::NoRespondents);
    }
    let w = fit_weights(data, &resp, weighted);
    let p = data.x.ncols() + 1;
    let mut xtx = Array2::<f64>::zeros((p, p));
    let mut xty = Array1::<f64>::zeros(p);
    let mut z = vec![0.0; p];
    for (&i, &wi) in resp.iter().zip(&w) {
        z[0] = 1.0;
        for j in 1..p {
            z[j] = data.x[[i, j - 1]];
        }
        for a in 0..p {
            xty[a] += wi * z[a] * data.y[i];
            for b in 0..p {
                xtx[[a, b]] += wi * z[a] * z[b];
            }
        }
    }
    let (chol, _) = Cholesky::factor_with_ridge(&xtx)?;
    let beta = chol.solve(xty.view());
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("regression coefficients are not finite".into()));
    }
    Ok(beta)
}

fn linear_prediction(beta: &Array1<f64>, data: &SampleData, i: usize) -> f64 {
    beta[0] + (1..beta.len()).map(|j| beta[j] * data.x[[i, j - 1]]).sum::<f64>()
}

/// `y* = β̂₀ + Σ β̂_j x_j` from a (design-)weighted fit on respondents; falls
/// back to mean imputation when the normal equations stay singular.
pub fn impute_regression(data: &SampleData, weighted: bool) -> Result<ImputedDataset> {
    match regression_coefficients(data, weighted) {
        Ok(beta) => {
            let imputed: Vec<(usize, f64)> = data
                .nonrespondent_rows()
                .into_iter()
                .map(|i| (i, linear_prediction(&beta, data, i)))
                .collect();
            Ok(ImputedDataset::complete(data, Method::Regression, &imputed))
        }
        Err(Error::NoRespondents) => Err(Error::NoRespondents),
        Err(e) => {
            let mut out = impute_mean(data, weighted)?;
            out.fallbacks.push(Fallback {
                from: Method::Regression,
                to: Method::Mean,
                reason: e.to_string(),
            });
            Ok(out)
        }
    }
}

/// Donor is the respondent closest in Euclidean distance; ties go to the
/// smallest unit id.
pub fn impute_nearest_neighbor(data: &SampleData) -> Result<ImputedDataset> {
    let resp = data.respondent_rows();
    if resp.is_empty() {
        return Err(Error::NoRespondents);
    }
    let q = data.x.ncols();
    let imputed: Vec<(usize, f64)> = data
        .nonrespondent_rows()
        .into_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX, f64::NAN);
            for &j in &resp {
                let mut d2 = 0.0;
                for c in 0..q {
                    let diff = data.x[[i, c]] - data.x[[j, c]];
                    d2 += diff * diff;
                }
                let id = data.unit_ids[j];
                if d2 < best.0 || (d2 == best.0 && id < best.1) {
                    best = (d2, id, data.y[j]);
                }
            }
            (i, best.2)
        })
        .collect();
    Ok(ImputedDataset::complete(data, Method::NearestNeighbor, &imputed))
}

/// Additive-model imputation: fit on respondents, predict nonrespondents.
/// Degenerate fits fall back to regression (and from there to the mean).
pub fn impute_am(data: &SampleData, config: &ImputationConfig) -> Result<ImputedDataset> {
    let resp = data.respondent_rows();
    if resp.is_empty() {
        return Err(Error::NoRespondents);
    }
    let fallback = |reason: String| -> Result<ImputedDataset> {
        let mut out = impute_regression(data, config.weighted)?;
        out.fallbacks.insert(
            0,
            Fallback {
                from: Method::Am,
                to: Method::Regression,
                reason,
            },
        );
        Ok(out)
    };
    if resp.len() < MIN_OBSERVATIONS {
        return fallback(format!("{} respondents, need {MIN_OBSERVATIONS}", resp.len()));
    }
    let x_r = data.x.select(Axis(0), &resp);
    let y_r: Vec<f64> = resp.iter().map(|&i| data.y[i]).collect();
    let w_r = config.weighted.then(|| fit_weights(data, &resp, true));
    let fit = match fit_am(x_r.view(), &y_r, w_r.as_deref(), &config.am) {
        Ok(f) => f,
        Err(e @ (Error::DegenerateFit(_) | Error::Numerical(_) | Error::DegenerateBasis { .. })) => {
            return fallback(e.to_string())
        }
        Err(e) => return Err(e),
    };
    let missing = data.nonrespondent_rows();
    let x_m = data.x.select(Axis(0), &missing);
    let pred = fit.predict(x_m.view())?;
    let imputed: Vec<(usize, f64)> = missing.into_iter().zip(pred).collect();
    let mut out = ImputedDataset::complete(data, Method::Am, &imputed);
    out.lambdas = fit.lambdas();
    Ok(out)
}

pub fn impute(method: Method, data: &SampleData, config: &ImputationConfig) -> Result<ImputedDataset> {
    match method {
        Method::Mean => impute_mean(data, config.weighted),
        Method::Regression => impute_regression(data, config.weighted),
        Method::NearestNeighbor => impute_nearest_neighbor(data),
        Method::Am => impute_am(data, config),
    }
}

/// Imputed estimator `Σ_S ỹ_i / π_i`.
pub fn imputed_total(sample: &Sample, imputed: &ImputedDataset) -> Result<f64> {
    if imputed.tilde_y.len() != sample.len() {
        return Err(Error::Domain("imputed data and sample differ in length".into()));
    }
    if imputed.tilde_y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("imputed data has missing or non-finite values".into()));
    }
    crate::sampling::horvitz_thompson(sample, &imputed.tilde_y)
}
