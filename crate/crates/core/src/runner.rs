//! Monte Carlo experiments: configuration, validation, deterministic parallel
//! execution and the result files.
//!
//! Every replicate draws from its own RNG stream keyed by (population, design,
//! replicate index), so results do not depend on the thread count or on
//! which other replicates run.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::am::AmConfig;
use crate::bootstrap::{bwo_variance, mmb_variance, BootstrapVariance, MirrorMatchDesign, MirrorMatchTotal, NPrimeRule};
use crate::error::{ConfigIssue, Error, Result};
use crate::imputation::{impute, imputed_total, ImputationConfig, Method, SampleData};
use crate::metrics::{
    bootstrap_summary, mrpe, rank_methods, rb, rrmse, rrvar, Measure, MethodMeasures, PredictionError, RankTable,
    ReplicateOutcome, SimulationResult,
};
use crate::population::{generate_synthetic, load_csv, Population, SyntheticId};
use crate::response::{calibrate_intercept, draw_response, LogisticResponseModel, ResponseSet};
use crate::rng::StreamSeed;
use crate::sampling::{srswor, stratified_sample, stratify_by_medians, Sample, StrataAssignment};
use crate::spline::log_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    /// Monte Carlo replicates `L`.
    pub replicates: usize,
    /// Bootstrap replicates `B` for the additive-model estimator; 0 disables.
    pub bootstrap: usize,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub methods: Vec<String>,
    pub weighted: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 1,
            replicates: 200,
            bootstrap: 0,
            threads: 0,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            weighted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    /// Synthetic population ids (1..=5); ignored when `csv` is set.
    pub synthetic: Vec<u8>,
    pub size: usize,
    pub noise_sd: f64,
    pub csv: Option<PathBuf>,
    pub y_column: String,
    pub x_columns: Vec<String>,
    /// Min–max rescale CSV covariates into [0,1].
    pub rescale: bool,
}

impl Default for PopulationSection {
    fn default() -> Self {
        PopulationSection {
            synthetic: vec![1, 2, 3, 4, 5],
            size: 10_000,
            noise_sd: 0.1,
            csv: None,
            y_column: "y".into(),
            x_columns: Vec::new(),
            rescale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// Any of `srswor`, `ss`.
    pub kinds: Vec<String>,
    /// Sampling rate (overall for SRSWOR, per stratum for SS).
    pub rate: f64,
    /// Covariates used, in order, for the median-split stratification.
    pub strata_vars: Vec<String>,
    pub n_prime_rule: String,
    /// Mirror-match replicate total: `expanded` or `literal`.
    pub mmb_total: String,
}

impl Default for DesignSection {
    fn default() -> Self {
        DesignSection {
            kinds: vec!["srswor".into()],
            rate: 0.2,
            strata_vars: ["x1", "x2", "x3", "x4"].iter().map(|s| s.to_string()).collect(),
            n_prime_rule: "f*n_h".into(),
            mmb_total: "expanded".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseSection {
    pub covariate: String,
    pub b1: f64,
    pub target_rate: f64,
    /// Fixed intercept; skips calibration to `target_rate` when set.
    pub b0: Option<f64>,
}

impl Default for ResponseSection {
    fn default() -> Self {
        ResponseSection {
            covariate: "x1".into(),
            b1: 1.0,
            target_rate: 0.75,
            b0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineSection {
    pub basis_size: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reselect_cycles: usize,
}

impl Default for SplineSection {
    fn default() -> Self {
        let am = AmConfig::<f64>::default();
        SplineSection {
            basis_size: am.basis_size,
            lambda_min: 1e-8,
            lambda_max: 1e4,
            lambda_count: 40,
            tol: am.tol,
            max_iter: am.max_iter,
            reselect_cycles: am.reselect_cycles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "results".into() }
    }
}

/// Full experiment description, read from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub population: PopulationSection,
    pub design: DesignSection,
    pub response: ResponseSection,
    pub spline: SplineSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![ConfigIssue::new("<file>", e.to_string())]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DesignKind {
    Srswor,
    Stratified,
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Srswor => "srswor",
            DesignKind::Stratified => "ss",
        }
    }

    fn key(self) -> u64 {
        match self {
            DesignKind::Srswor => 0,
            DesignKind::Stratified => 1,
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "srswor" => Ok(DesignKind::Srswor),
            "ss" | "stratified" => Ok(DesignKind::Stratified),
            other => Err(Error::Domain(format!("unknown design '{other}' (expected srswor or ss)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PopulationSource {
    Synthetic(SyntheticId),
    Csv(PathBuf),
}

/// Typed view of a validated configuration.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    methods: Vec<Method>,
    designs: Vec<DesignKind>,
    sources: Vec<PopulationSource>,
    covariates: Vec<String>,
    n_prime: NPrimeRule,
    mmb_total: MirrorMatchTotal,
    imputation: ImputationConfig,
}

fn csv_header(path: &Path) -> std::result::Result<Vec<String>, String> {
    let file = fs::File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers().map_err(|e| format!("cannot read header of {}: {e}", path.display()))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

fn check_unique<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().all(|(i, a)| !items[..i].contains(a))
}

fn plan(config: &ExperimentConfig) -> std::result::Result<Plan, Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    let mut issue = |key: &str, msg: String| issues.push(ConfigIssue::new(key, msg));
    let ex = &config.experiment;

    if ex.replicates < 1 {
        issue("experiment.replicates", "must be at least 1".into());
    }
    if ex.bootstrap == 1 {
        issue("experiment.bootstrap", "must be 0 (disabled) or at least 2".into());
    }
    if ex.seed > i64::MAX as u64 {
        issue("experiment.seed", format!("must be at most {}", i64::MAX));
    }
    let mut methods = Vec::new();
    for m in &ex.methods {
        match m.parse::<Method>() {
            Ok(m) => methods.push(m),
            Err(e) => issue("experiment.methods", e.to_string()),
        }
    }
    if ex.methods.is_empty() {
        issue("experiment.methods", "at least one method is required".into());
    } else if !check_unique(&methods) {
        issue("experiment.methods", "methods are listed more than once".into());
    }
    if ex.bootstrap > 0 && !methods.is_empty() && !methods.contains(&Method::Am) {
        issue("experiment.bootstrap", "bootstrap variance is computed for am, which is not in experiment.methods".into());
    }

    let pop = &config.population;
    let mut sources = Vec::new();
    let covariates: Vec<String>;
    if let Some(path) = &pop.csv {
        covariates = pop.x_columns.clone();
        if pop.x_columns.is_empty() {
            issue("population.x_columns", "a CSV population needs at least one covariate column".into());
        }
        match csv_header(path) {
            Ok(header) => {
                for c in std::iter::once(&pop.y_column).chain(&pop.x_columns) {
                    if !header.contains(c) {
                        issue("population.csv", format!("column '{c}' not found in {}", path.display()));
                    }
                }
            }
            Err(e) => issue("population.csv", e),
        }
        sources.push(PopulationSource::Csv(path.clone()));
    } else {
        covariates = (1..=4).map(|j| format!("x{j}")).collect();
        if pop.synthetic.is_empty() {
            issue("population.synthetic", "list at least one population id or set population.csv".into());
        }
        for &id in &pop.synthetic {
            match SyntheticId::new(id) {
                Ok(id) => sources.push(PopulationSource::Synthetic(id)),
                Err(e) => issue("population.synthetic", e.to_string()),
            }
        }
        if !check_unique(&pop.synthetic) {
            issue("population.synthetic", "population ids are listed more than once".into());
        }
        if pop.size < 1 {
            issue("population.size", "must be at least 1".into());
        }
        if !(pop.noise_sd >= 0.0 && pop.noise_sd.is_finite()) {
            issue("population.noise_sd", format!("must be finite and nonnegative, got {}", pop.noise_sd));
        }
    }

    let design = &config.design;
    let mut designs = Vec::new();
    for k in &design.kinds {
        match k.parse::<DesignKind>() {
            Ok(d) => designs.push(d),
            Err(e) => issue("design.kinds", e.to_string()),
        }
    }
    if design.kinds.is_empty() {
        issue("design.kinds", "at least one design is required".into());
    } else if !check_unique(&designs) {
        issue("design.kinds", "designs are listed more than once".into());
    }
    if !(design.rate > 0.0 && design.rate <= 1.0) {
        issue("design.rate", format!("must lie in (0,1], got {}", design.rate));
    }
    let n_prime = design.n_prime_rule.parse::<NPrimeRule>().unwrap_or_else(|e| {
        issue("design.n_prime_rule", e.to_string());
        NPrimeRule::default()
    });
    let mmb_total = design.mmb_total.parse::<MirrorMatchTotal>().unwrap_or_else(|e| {
        issue("design.mmb_total", e.to_string());
        MirrorMatchTotal::default()
    });
    if designs.contains(&DesignKind::Stratified) {
        if design.strata_vars.is_empty() {
            issue("design.strata_vars", "stratified sampling needs at least one variable".into());
        }
        for v in &design.strata_vars {
            if !covariates.contains(v) {
                issue("design.strata_vars", format!("'{v}' is not a covariate (have {})", covariates.join(", ")));
            }
        }
    }

    let resp = &config.response;
    if !covariates.contains(&resp.covariate) {
        issue("response.covariate", format!("'{}' is not a covariate (have {})", resp.covariate, covariates.join(", ")));
    }
    if !resp.b1.is_finite() {
        issue("response.b1", "must be finite".into());
    }
    match resp.b0 {
        Some(b0) if !b0.is_finite() => issue("response.b0", "must be finite".into()),
        Some(_) => {}
        None => {
            if !(resp.target_rate > 0.0 && resp.target_rate < 1.0) {
                issue("response.target_rate", format!("must lie in (0,1), got {}", resp.target_rate));
            }
        }
    }

    let sp = &config.spline;
    if sp.basis_size < 4 {
        issue("spline.basis_size", format!("must be at least 4, got {}", sp.basis_size));
    }
    if !(sp.lambda_min > 0.0 && sp.lambda_max >= sp.lambda_min && sp.lambda_max.is_finite()) {
        issue("spline.lambda_min", "need 0 < lambda_min <= lambda_max < inf".into());
    }
    if sp.lambda_count < 1 {
        issue("spline.lambda_count", "must be at least 1".into());
    }
    if !(sp.tol > 0.0) {
        issue("spline.tol", "must be positive".into());
    }
    if sp.max_iter < 1 {
        issue("spline.max_iter", "must be at least 1".into());
    }

    if !issues.is_empty() {
        return Err(issues);
    }
    let imputation = ImputationConfig {
        weighted: ex.weighted,
        am: AmConfig {
            basis_size: sp.basis_size,
            lambda_grid: log_grid(sp.lambda_min, sp.lambda_max, sp.lambda_count),
            tol: sp.tol,
            max_iter: sp.max_iter,
            reselect_cycles: sp.reselect_cycles,
            fixed_lambdas: None,
        },
    };
    Ok(Plan {
        methods,
        designs,
        sources,
        covariates,
        n_prime,
        mmb_total,
        imputation,
    })
}

/// Every violated constraint of `config` (empty when it is valid).
pub fn validate_config(config: &ExperimentConfig) -> Vec<ConfigIssue> {
    plan(config).err().unwrap_or_default()
}

struct PreparedPopulation {
    label: String,
    key: u64,
    pop: Population,
    model: LogisticResponseModel,
    strata: Option<StrataAssignment>,
}

/// Outcome of one method on one replicate, with bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub method: Method,
    pub outcome: ReplicateOutcome<f64>,
    /// The point estimate fell back from the requested method.
    pub fallback: bool,
    pub bootstrap: Option<BootstrapStats>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapStats {
    pub fallbacks: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub index: usize,
    pub sample_size: usize,
    pub respondents: usize,
    pub methods: Vec<MethodRecord>,
    /// Wall-clock time; informational, never written to result files.
    pub elapsed: Duration,
}

/// All replicates of one (population, design) pair.
#[derive(Debug, Clone)]
pub struct Cell {
    pub population: String,
    pub design: DesignKind,
    pub result: SimulationResult<f64>,
    pub records: Vec<ReplicateRecord>,
    /// Failed replicate indices with their error message.
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureRow {
    pub population: String,
    pub design: DesignKind,
    pub method: Method,
    pub mrpe: Option<f64>,
    pub rb: Option<f64>,
    pub rrvar: Option<f64>,
    pub rrmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub population: String,
    pub design: DesignKind,
    pub var: f64,
    pub var_boot: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub measures: Vec<MeasureRow>,
    pub variance: Vec<VarianceRow>,
    pub ranks: Vec<(DesignKind, RankTable<f64>)>,
    pub warnings: Vec<String>,
}

/// A validated experiment with its populations built and response models
/// calibrated.
pub struct Experiment {
    config: ExperimentConfig,
    plan: Plan,
    populations: Vec<PreparedPopulation>,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let plan = plan(config).map_err(Error::Config)?;
        let master = StreamSeed::new(config.experiment.seed);
        let covariate_index = |name: &str| plan.covariates.iter().position(|c| c == name).expect("validated");
        let mut populations = Vec::new();
        for source in &plan.sources {
            let (label, key, pop) = match source {
                PopulationSource::Synthetic(id) => {
                    let seed = master.named("population").child(u64::from(id.get()));
                    let pop = generate_synthetic(*id, config.population.size, config.population.noise_sd, seed)?;
                    (id.get().to_string(), u64::from(id.get()), pop)
                }
                PopulationSource::Csv(path) => {
                    let x: Vec<&str> = config.population.x_columns.iter().map(String::as_str).collect();
                    let pop = load_csv(path, &config.population.y_column, &x, config.population.rescale)?;
                    let label = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
                    (label, 0, pop)
                }
            };
            let resp = &config.response;
            let c = covariate_index(&resp.covariate);
            let model = match resp.b0 {
                Some(b0) => LogisticResponseModel {
                    b0,
                    b1: resp.b1,
                    covariate_index: c,
                },
                None => calibrate_intercept(&pop, c, resp.b1, resp.target_rate)?,
            };
            let strata = if plan.designs.contains(&DesignKind::Stratified) {
                let vars: Vec<usize> = config.design.strata_vars.iter().map(|v| covariate_index(v)).collect();
                Some(stratify_by_medians(&pop, &vars)?)
            } else {
                None
            };
            populations.push(PreparedPopulation {
                label,
                key,
                pop,
                model,
                strata,
            });
        }
        Ok(Experiment {
            config: config.clone(),
            plan,
            populations,
        })
    }

    pub fn population_count(&self) -> usize {
        self.populations.len()
    }

    pub fn population(&self, p: usize) -> &Population {
        &self.populations[p].pop
    }

    pub fn response_model(&self, p: usize) -> &LogisticResponseModel {
        &self.populations[p].model
    }

    pub fn designs(&self) -> &[DesignKind] {
        &self.plan.designs
    }

    fn replicate_seed(&self, p: usize, design: DesignKind, index: usize) -> StreamSeed {
        StreamSeed::new(self.config.experiment.seed)
            .named("replicate")
            .child(self.populations[p].key)
            .child(design.key())
            .child(index as u64)
    }

    /// The sample and response pattern of replicate `index`.
    pub fn draw(&self, p: usize, design: DesignKind, index: usize) -> Result<(Sample, ResponseSet)> {
        let prepared = &self.populations[p];
        let seed = self.replicate_seed(p, design, index);
        let rate = self.config.design.rate;
        let mut rng = seed.named("sample").rng();
        let sample = match design {
            DesignKind::Srswor => {
                let big_n = prepared.pop.size();
                let n = ((rate * big_n as f64).round() as usize).clamp(1, big_n);
                srswor(big_n, n, &mut rng)?
            }
            DesignKind::Stratified => {
                let strata = prepared.strata.as_ref().expect("strata built for stratified designs");
                stratified_sample(strata, rate, &mut rng)?
            }
        };
        let response = draw_response(&sample, &prepared.model, &prepared.pop, &mut seed.named("response").rng());
        Ok((sample, response))
    }

    /// Runs replicate `index` of (population `p`, `design`): draw, impute
    /// with every method, and bootstrap the additive-model estimator.
    pub fn run_replicate(&self, p: usize, design: DesignKind, index: usize) -> Result<ReplicateRecord> {
        let start = Instant::now();
        let prepared = &self.populations[p];
        let (sample, response) = self.draw(p, design, index)?;
        let data = SampleData::from_population(&prepared.pop, &sample, &response)?;
        let truth: Vec<f64> = sample.unit_ids().iter().map(|&u| prepared.pop.y()[u]).collect();
        let missing = response.nonrespondents();
        let config = &self.plan.imputation;
        let b = self.config.experiment.bootstrap;
        let mut methods = Vec::with_capacity(self.plan.methods.len());
        for &method in &self.plan.methods {
            let imputed = impute(method, &data, config)?;
            let total = imputed_total(&sample, &imputed)?;
            let imp: Vec<f64> = missing.iter().map(|&i| imputed.tilde_y[i]).collect();
            let tru: Vec<f64> = missing.iter().map(|&i| truth[i]).collect();
            let prediction = PredictionError::compute(&imp, &tru)?;
            let boot = if b > 0 && method == Method::Am {
                Some(self.bootstrap(p, design, index, &sample, &data)?)
            } else {
                None
            };
            methods.push(MethodRecord {
                method,
                outcome: ReplicateOutcome {
                    total,
                    prediction,
                    boot_variance: boot.as_ref().map(|v| v.variance),
                },
                fallback: imputed.fallback_used(),
                bootstrap: boot.map(|v| BootstrapStats {
                    fallbacks: v.fallback_count,
                    redraws: v.redraws,
                }),
            });
        }
        Ok(ReplicateRecord {
            index,
            sample_size: sample.len(),
            respondents: response.respondent_count(),
            methods,
            elapsed: start.elapsed(),
        })
    }

    fn bootstrap(
        &self,
        p: usize,
        design: DesignKind,
        index: usize,
        sample: &Sample,
        data: &SampleData,
    ) -> Result<BootstrapVariance> {
        let config = &self.plan.imputation;
        let imputer = |d: &SampleData| impute(Method::Am, d, config);
        let seed = self.replicate_seed(p, design, index).named("bootstrap");
        let b = self.config.experiment.bootstrap;
        match design {
            DesignKind::Srswor => bwo_variance(data, self.populations[p].pop.size(), &imputer, b, seed),
            DesignKind::Stratified => {
                let strata = self.populations[p].strata.as_ref().expect("strata built for stratified designs");
                let labels = sample.strata().expect("stratified samples carry labels");
                let mmb = MirrorMatchDesign::new(labels, strata.sizes(), self.plan.n_prime)?;
                mmb_variance(data, &mmb, self.plan.mmb_total, &imputer, b, seed)
            }
        }
    }

    fn run_cell(&self, p: usize, design: DesignKind) -> Result<Cell> {
        let l = self.config.experiment.replicates;
        let outcomes: Vec<Result<ReplicateRecord>> =
            (0..l).into_par_iter().map(|i| self.run_replicate(p, design, i)).collect();
        let mut records = Vec::with_capacity(l);
        let mut failures = Vec::new();
        for (i, r) in outcomes.into_iter().enumerate() {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => failures.push((i, e.to_string())),
            }
        }
        if failures.len() * 100 > l {
            return Err(Error::ReplicateFailures {
                failed: failures.len(),
                total: l,
                first: format!("replicate {}: {}", failures[0].0, failures[0].1),
            });
        }
        let mut result = SimulationResult::new(self.populations[p].pop.total());
        for rec in &records {
            for m in &rec.methods {
                result.push(m.method, m.outcome.clone());
            }
        }
        Ok(Cell {
            population: self.populations[p].label.clone(),
            design,
            result,
            records,
            failures,
        })
    }

    /// Runs every (population, design) cell on a pool of the configured size.
    pub fn run(&self) -> Result<ExperimentOutput> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.experiment.threads)
            .build()
            .map_err(|e| Error::Domain(format!("cannot start thread pool: {e}")))?;
        let mut cells = Vec::new();
        for p in 0..self.populations.len() {
            for &design in &self.plan.designs {
                cells.push(pool.install(|| self.run_cell(p, design))?);
            }
        }
        Ok(self.summarise(cells))
    }

    fn summarise(&self, cells: Vec<Cell>) -> ExperimentOutput {
        let mut measures = Vec::new();
        let mut variance = Vec::new();
        let mut warnings = Vec::new();
        for cell in &cells {
            let res = &cell.result;
            let tag = format!("population {}, {}", cell.population, cell.design);
            if !cell.failures.is_empty() {
                warnings.push(format!("{tag}: {} replicate(s) failed and were skipped", cell.failures.len()));
            }
            for &method in &self.plan.methods {
                let m = mrpe(res, method).ok();
                if let Some(m) = m.filter(|m| m.excluded > 0) {
                    warnings.push(format!("{tag}, {method}: {} units with y = 0 left out of MRPE", m.excluded));
                }
                let fallbacks = cell
                    .records
                    .iter()
                    .flat_map(|r| &r.methods)
                    .filter(|r| r.method == method && r.fallback)
                    .count();
                if fallbacks > 0 {
                    warnings.push(format!("{tag}, {method}: {fallbacks} replicate(s) used a fallback imputation"));
                }
                measures.push(MeasureRow {
                    population: cell.population.clone(),
                    design: cell.design,
                    method,
                    mrpe: m.map(|m| m.value),
                    rb: rb(res, method).ok(),
                    rrvar: rrvar(res, method).ok(),
                    rrmse: rrmse(res, method).ok(),
                });
            }
            if self.config.experiment.bootstrap > 0 {
                if let Ok(s) = bootstrap_summary(res, Method::Am) {
                    variance.push(VarianceRow {
                        population: cell.population.clone(),
                        design: cell.design,
                        var: s.var,
                        var_boot: s.var_boot,
                        coverage: s.coverage,
                    });
                }
            }
        }
        let mut ranks = Vec::new();
        if self.plan.methods.len() >= 2 {
            for &design in &self.plan.designs {
                let per_pop: Option<Vec<Vec<MethodMeasures<f64>>>> = cells
                    .iter()
                    .filter(|c| c.design == design)
                    .map(|c| {
                        measures
                            .iter()
                            .filter(|r| r.population == c.population && r.design == design)
                            .map(|r| {
                                Some(MethodMeasures {
                                    method: r.method,
                                    mrpe: r.mrpe?,
                                    rb: r.rb?,
                                    rrvar: r.rrvar?,
                                    rrmse: r.rrmse?,
                                })
                            })
                            .collect()
                    })
                    .collect();
                if let Some(table) = per_pop.and_then(|pp| rank_methods(&pp).ok()) {
                    ranks.push((design, table));
                }
            }
        }
        ExperimentOutput {
            config: self.config.clone(),
            cells,
            measures,
            variance,
            ranks,
            warnings,
        }
    }
}

/// Validates, prepares and runs an experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    Experiment::prepare(config)?.run()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(file))
}

impl ExperimentOutput {
    pub fn measure(&self, population: &str, design: DesignKind, method: Method) -> Option<&MeasureRow> {
        self.measures
            .iter()
            .find(|r| r.population == population && r.design == design && r.method == method)
    }

    pub fn variance_row(&self, population: &str, design: DesignKind) -> Option<&VarianceRow> {
        self.variance.iter().find(|r| r.population == population && r.design == design)
    }

    /// Writes `measures.csv`, `variance.csv`, `ranks.csv`, `replicates.csv`
    /// and the effective `config.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = create(dir, "measures.csv")?;
        w.write_record(["population", "design", "method", "MRPE", "RB", "RRVAR", "RRMSE"])?;
        for r in &self.measures {
            w.write_record([
                r.population.clone(),
                r.design.to_string(),
                r.method.to_string(),
                opt(r.mrpe),
                opt(r.rb),
                opt(r.rrvar),
                opt(r.rrmse),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("measures.csv"), e))?;

        let mut w = create(dir, "variance.csv")?;
        w.write_record(["population", "design", "VAR", "VAR_boot", "CR"])?;
        for r in &self.variance {
            w.write_record([
                r.population.clone(),
                r.design.to_string(),
                num(r.var),
                num(r.var_boot),
                num(r.coverage),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("variance.csv"), e))?;

        let mut w = create(dir, "ranks.csv")?;
        w.write_record(["design", "method", "MRPE", "RB", "RRVAR", "RRMSE"])?;
        for (design, table) in &self.ranks {
            for &method in &table.methods {
                let mut rec = vec![design.to_string(), method.to_string()];
                rec.extend(Measure::ALL.iter().map(|&m| opt(table.average_rank(method, m))));
                w.write_record(rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("ranks.csv"), e))?;

        let mut w = create(dir, "replicates.csv")?;
        w.write_record([
            "population",
            "design",
            "replicate",
            "method",
            "total",
            "mean_relative_error",
            "V_boot",
            "fallback",
            "boot_fallbacks",
        ])?;
        for cell in &self.cells {
            for rec in &cell.records {
                for m in &rec.methods {
                    w.write_record([
                        cell.population.clone(),
                        cell.design.to_string(),
                        rec.index.to_string(),
                        m.method.to_string(),
                        num(m.outcome.total),
                        opt(m.outcome.prediction.mean_relative),
                        opt(m.outcome.boot_variance),
                        u8::from(m.fallback).to_string(),
                        m.bootstrap.map(|b| b.fallbacks.to_string()).unwrap_or_default(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("replicates.csv"), e))?;

        let path = dir.join("config.toml");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.config.to_toml().as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::horvitz_thompson;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.experiment.replicates = 4;
        c.experiment.methods = vec!["mean".into(), "reg".into()];
        c.population.synthetic = vec![1, 5];
        c.population.size = 500;
        c
    }

    #[test]
    fn default_config_is_valid() {
        assert!(validate_config(&ExperimentConfig::default()).is_empty());
    }

    #[test]
    fn every_issue_is_reported() {
        let mut c = ExperimentConfig::default();
        c.design.rate = 0.0;
        c.experiment.methods.clear();
        c.population.synthetic = vec![7];
        c.spline.basis_size = 2;
        let issues = validate_config(&c);
        let keys: Vec<&str> = issues.iter().map(|i| i.key.as_str()).collect();
        for k in ["design.rate", "experiment.methods", "population.synthetic", "spline.basis_size"] {
            assert!(keys.contains(&k), "missing {k} in {keys:?}");
        }
        assert!(matches!(run_experiment(&c), Err(Error::Config(v)) if v.len() == issues.len()));
    }

    #[test]
    fn unknown_names_are_rejected() {
        let mut c = ExperimentConfig::default();
        c.experiment.methods = vec!["forest".into()];
        c.design.kinds = vec!["cluster".into()];
        c.response.covariate = "x9".into();
        let keys: Vec<String> = validate_config(&c).into_iter().map(|i| i.key).collect();
        assert!(keys.contains(&"experiment.methods".into()));
        assert!(keys.contains(&"design.kinds".into()));
        assert!(keys.contains(&"response.covariate".into()));
        assert!(ExperimentConfig::from_toml("[experiment]\nsurprise = 1\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = small();
        c.response.b0 = Some(2.0);
        let text = c.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        let partial = ExperimentConfig::from_toml("[experiment]\nreplicates = 7\n").unwrap();
        assert_eq!(partial.experiment.replicates, 7);
        assert_eq!(partial.design, DesignSection::default());
    }

    #[test]
    fn full_response_total_is_horvitz_thompson() {
        let mut c = small();
        c.experiment.replicates = 1;
        c.experiment.methods = vec!["mean".into()];
        c.population.synthetic = vec![2];
        c.response.b0 = Some(50.0);
        c.design.kinds = vec!["srswor".into(), "ss".into()];
        c.population.size = 1600;
        let ex = Experiment::prepare(&c).unwrap();
        for &d in ex.designs() {
            let (sample, response) = ex.draw(0, d, 0).unwrap();
            assert_eq!(response.respondent_count(), sample.len());
            let y: Vec<f64> = sample.unit_ids().iter().map(|&u| ex.population(0).y()[u]).collect();
            let ht = horvitz_thompson(&sample, &y).unwrap();
            let rec = ex.run_replicate(0, d, 0).unwrap();
            assert_eq!(rec.methods[0].outcome.total, ht);
        }
        let out = ex.run().unwrap();
        assert!(out.measures[0].rrvar.is_none());
        assert!(out.measures[0].rb.is_some());
    }

    #[test]
    fn replicates_are_independent_of_each_other() {
        let mut c = small();
        c.design.kinds = vec!["srswor".into(), "ss".into()];
        c.population.size = 800;
        c.experiment.bootstrap = 3;
        c.experiment.methods = vec!["am".into(), "nn".into()];
        let ex = Experiment::prepare(&c).unwrap();
        let out = ex.run().unwrap();
        let cell = &out.cells[1];
        let mut again = ex.run_replicate(0, cell.design, 2).unwrap();
        again.elapsed = cell.records[2].elapsed;
        assert_eq!(again, cell.records[2]);
        assert_eq!(out.variance.len(), 4);
    }

    #[test]
    fn writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&small()).unwrap();
        out.write(dir.path()).unwrap();
        for f in ["measures.csv", "variance.csv", "ranks.csv", "replicates.csv", "config.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let measures = fs::read_to_string(dir.path().join("measures.csv")).unwrap();
        assert!(measures.starts_with("population,design,method,MRPE,RB,RRVAR,RRMSE\n"));
        assert_eq!(measures.lines().count(), 1 + 2 * 2);
        let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
        assert_eq!(ranks.lines().count(), 1 + 2);
        let echoed = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echoed, small());
    }
}
