use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use amimpute::bootstrap::{
    bwo_variance, confidence_interval, mmb_variance, BootstrapVariance, MirrorMatchDesign, MirrorMatchTotal, NPrimeRule,
};
use amimpute::imputation::{impute, ImputationConfig, ImputedDataset, Method, SampleData};
use amimpute::population::{generate_synthetic, read_columns, rescale_column, SyntheticId};
use amimpute::response::{calibrate_intercept, draw_response};
use amimpute::rng::StreamSeed;
use amimpute::runner::{validate_config, Experiment, ExperimentConfig};
use amimpute::sampling::{srswor, stratified_sample, stratify_by_medians, horvitz_thompson};
use amimpute::{Error, Result};

#[derive(Parser)]
#[command(name = "amimpute", version, about = "Additive-model imputation for survey nonresponse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a TOML config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (0 = all cores); overrides the config.
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one of the synthetic populations to CSV.
    Generate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        pop: u8,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise_sd: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill empty cells of the y column and write the completed CSV.
    Impute {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "y")]
        y_column: String,
        /// Covariate columns (comma separated); default is every other column.
        #[arg(long, value_delimiter = ',')]
        x_columns: Option<Vec<String>>,
        /// Column holding design weights; default is equal weights.
        #[arg(long)]
        weight_column: Option<String>,
        /// Min–max rescale covariates into [0,1] before fitting.
        #[arg(long)]
        rescale: bool,
        /// Where to write the run summary (default: <out>.summary.txt).
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        basis_size: usize,
    },
    /// Bootstrap variance of the imputed total for one sample.
    ///
    /// With --in, the CSV holds the sample (empty y = nonrespondent);
    /// otherwise a synthetic population is generated and sampled.
    BootstrapVariance {
        #[arg(long, value_enum)]
        design: DesignArg,
        #[arg(long = "B", short = 'B', default_value_t = 100)]
        b: usize,
        #[arg(long, default_value = "f*n_h")]
        n_prime_rule: String,
        #[arg(long, default_value = "expanded")]
        mmb_total: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "am")]
        method: MethodArg,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        y_column: String,
        #[arg(long, value_delimiter = ',')]
        x_columns: Option<Vec<String>>,
        /// Population size N (SRSWOR with --in).
        #[arg(long)]
        population_size: Option<usize>,
        /// Stratum label column, 1-based labels (SS with --in).
        #[arg(long, default_value = "stratum")]
        stratum_column: String,
        /// Stratum population sizes N_1,..,N_H (SS with --in).
        #[arg(long, value_delimiter = ',')]
        stratum_sizes: Option<Vec<usize>>,
        /// Synthetic population id when no --in is given.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
        pop: u8,
        #[arg(long, default_value_t = 10_000)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        rate: f64,
        #[arg(long, default_value_t = 0.75)]
        target_rate: f64,
        /// Write the replicate totals to this CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mean,
    Reg,
    Nn,
    Am,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mean => Method::Mean,
            MethodArg::Reg => Method::Regression,
            MethodArg::Nn => Method::NearestNeighbor,
            MethodArg::Am => Method::Am,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DesignArg {
    Srswor,
    Ss,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            config,
            threads,
            seed,
            out,
        } => simulate(&config, threads, seed, out),
        Command::Generate {
            pop,
            n,
            seed,
            noise_sd,
            out,
        } => generate(pop, n, seed, noise_sd, &out),
        Command::Impute {
            input,
            method,
            out,
            y_column,
            x_columns,
            weight_column,
            rescale,
            summary,
            basis_size,
        } => {
            let opts = ImputeOptions {
                method: method.into(),
                y_column,
                x_columns,
                weight_column,
                rescale,
                basis_size,
            };
            impute_file(&input, &out, summary.as_deref(), &opts)
        }
        Command::BootstrapVariance {
            design,
            b,
            n_prime_rule,
            mmb_total,
            seed,
            method,
            input,
            y_column,
            x_columns,
            population_size,
            stratum_column,
            stratum_sizes,
            pop,
            size,
            rate,
            target_rate,
            out,
        } => (|| {
            let spec = BootSpec {
                design,
                b,
                n_prime: n_prime_rule.parse()?,
                mmb_total: mmb_total.parse()?,
                seed: StreamSeed::new(seed),
                method: method.into(),
            };
            let prepared = match input {
                Some(path) => sample_from_file(
                    &path,
                    design,
                    &y_column,
                    x_columns.as_deref(),
                    population_size,
                    &stratum_column,
                    stratum_sizes.as_deref(),
                )?,
                None => synthetic_sample(design, pop, size, rate, target_rate, spec.seed)?,
            };
            bootstrap(&spec, &prepared, out.as_deref())
        })(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn simulate(path: &Path, threads: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(t) = threads {
        config.experiment.threads = t;
    }
    if let Some(s) = seed {
        config.experiment.seed = s;
    }
    if let Some(o) = out {
        config.output.dir = o;
    }
    // relative CSV paths are taken relative to the config file
    if let (Some(csv), Some(base)) = (&config.population.csv, path.parent()) {
        if csv.is_relative() {
            config.population.csv = Some(base.join(csv));
        }
    }
    let issues = validate_config(&config);
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    let output = Experiment::prepare(&config)?.run()?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    output.write(&config.output.dir)?;
    eprintln!("wrote results to {}", config.output.dir.display());
    Ok(())
}

fn generate(pop: u8, n: usize, seed: u64, noise_sd: f64, out: &Path) -> Result<()> {
    let id = SyntheticId::new(pop)?;
    // same stream as the population `simulate` builds from this seed
    let stream = StreamSeed::new(seed).named("population").child(u64::from(pop));
    generate_synthetic(id, n, noise_sd, stream)?.save_csv(out)
}

struct ImputeOptions {
    method: Method,
    y_column: String,
    x_columns: Option<Vec<String>>,
    weight_column: Option<String>,
    rescale: bool,
    basis_size: usize,
}

/// Numeric view of a CSV: `y` (None = missing) and covariates.
struct Table {
    header: Vec<String>,
    y: Vec<Option<f64>>,
    x: Array2<f64>,
    extra: Vec<Vec<Option<f64>>>,
}

fn read_table(text: &str, y_column: &str, x_columns: Option<&[String]>, extra: &[&str], rescale: bool) -> Result<Table> {
    let header: Vec<String> = csv::Reader::from_reader(text.as_bytes())
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let x_names: Vec<String> = match x_columns {
        Some(cols) => cols.to_vec(),
        None => header
            .iter()
            .filter(|h| h.as_str() != y_column && !extra.contains(&h.as_str()))
            .cloned()
            .collect(),
    };
    let mut names: Vec<&str> = vec![y_column];
    names.extend(x_names.iter().map(String::as_str));
    names.extend_from_slice(extra);
    let (_, mut cols) = read_columns(text.as_bytes(), &names)?;
    let extra_cols = cols.split_off(1 + x_names.len());
    let n = cols[0].len();
    let q = x_names.len();
    let mut x = Array2::zeros((n, q));
    for (j, col) in cols[1..].iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            x[[i, j]] = v.ok_or_else(|| Error::Parse {
                row: i + 2,
                column: x_names[j].clone(),
                message: "covariates may not be missing".into(),
            })?;
        }
    }
    if rescale {
        for j in 0..q {
            rescale_column(&mut x, j);
        }
    } else if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Parse {
            row: i + 2,
            column: x_names[j].clone(),
            message: format!("{v} lies outside [0,1]; pass --rescale to map covariates into [0,1]"),
        });
    }
    Ok(Table {
        header,
        y: cols.swap_remove(0),
        x,
        extra: extra_cols,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn impute_file(input: &Path, out: &Path, summary: Option<&Path>, opts: &ImputeOptions) -> Result<()> {
    let text = read_text(input)?;
    let extra: Vec<&str> = opts.weight_column.iter().map(String::as_str).collect();
    let table = read_table(&text, &opts.y_column, opts.x_columns.as_deref(), &extra, opts.rescale)?;
    let n = table.y.len();
    let weights = match table.extra.first() {
        Some(w) => w
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.filter(|v| *v > 0.0).ok_or_else(|| Error::Parse {
                    row: i + 2,
                    column: extra[0].to_string(),
                    message: "weights must be present and positive".into(),
                })
            })
            .collect::<Result<Vec<f64>>>()?,
        None => vec![1.0; n],
    };
    let respondent: Vec<bool> = table.y.iter().map(Option::is_some).collect();
    let y: Vec<f64> = table.y.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let data = SampleData::new((0..n).collect(), table.x, y, respondent, weights)?;
    let mut config = ImputationConfig::default();
    config.am.basis_size = opts.basis_size;
    let imputed = impute(opts.method, &data, &config)?;

    let y_idx = table.header.iter().position(|h| *h == opts.y_column).expect("column checked on read");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(rdr.headers()?)?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Vec<String> = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == y_idx && !data.respondent()[i] {
                    format!("{}", imputed.tilde_y[i])
                } else {
                    cell.to_string()
                }
            })
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let report = impute_summary(&imputed, &table.header, &opts.y_column, &data);
    print!("{report}");
    let summary_path = summary.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".summary.txt");
        PathBuf::from(s)
    });
    fs::write(&summary_path, report).map_err(|e| Error::io(&summary_path, e))
}

fn impute_summary(imputed: &ImputedDataset, header: &[String], y_column: &str, data: &SampleData) -> String {
    let mut s = String::new();
    let missing = data.len() - data.respondent_count();
    s.push_str(&format!("method: {}\n", imputed.method));
    s.push_str(&format!("rows: {}, imputed: {missing}\n", data.len()));
    if imputed.fallbacks.is_empty() {
        s.push_str("fallbacks: none\n");
    }
    for f in &imputed.fallbacks {
        s.push_str(&format!("fallback: {f}\n"));
    }
    if !imputed.lambdas.is_empty() {
        let names: Vec<&String> = header.iter().filter(|h| h.as_str() != y_column).collect();
        for (j, l) in imputed.lambdas.iter().enumerate() {
            let name = names.get(j).map_or(format!("x{}", j + 1), |n| n.to_string());
            match l {
                Some(l) => s.push_str(&format!("lambda[{name}]: {l}\n")),
                None => s.push_str(&format!("lambda[{name}]: dropped (too few distinct values)\n")),
            }
        }
    }
    s
}

struct BootSpec {
    design: DesignArg,
    b: usize,
    n_prime: NPrimeRule,
    mmb_total: MirrorMatchTotal,
    seed: StreamSeed,
    method: Method,
}

struct PreparedSample {
    data: SampleData,
    /// Per-row π.
    inclusion: Vec<f64>,
    /// N for SRSWOR; per-row 1-based labels and N_h for SS.
    population_size: usize,
    strata: Option<(Vec<usize>, Vec<usize>)>,
    true_total: Option<f64>,
}

fn sample_from_file(
    path: &Path,
    design: DesignArg,
    y_column: &str,
    x_columns: Option<&[String]>,
    population_size: Option<usize>,
    stratum_column: &str,
    stratum_sizes: Option<&[usize]>,
) -> Result<PreparedSample> {
    let text = read_text(path)?;
    let extra: Vec<&str> = if design == DesignArg::Ss { vec![stratum_column] } else { vec![] };
    let table = read_table(&text, y_column, x_columns, &extra, false)?;
    let n = table.y.len();
    let (inclusion, big_n, strata) = match design {
        DesignArg::Srswor => {
            let big_n = population_size
                .ok_or_else(|| Error::Domain("--population-size is required for --design srswor with --in".into()))?;
            if big_n < n {
                return Err(Error::Domain(format!("population size {big_n} is smaller than the sample ({n})")));
            }
            (vec![n as f64 / big_n as f64; n], big_n, None)
        }
        DesignArg::Ss => {
            let sizes = stratum_sizes
                .ok_or_else(|| Error::Domain("--stratum-sizes is required for --design ss with --in".into()))?
                .to_vec();
            let labels: Vec<usize> = table.extra[0]
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Some(v) if v.fract() == 0.0 && *v >= 1.0 && (*v as usize) <= sizes.len() => Ok(*v as usize),
                    _ => Err(Error::Parse {
                        row: i + 2,
                        column: stratum_column.to_string(),
                        message: format!("stratum labels must be integers in 1..={}", sizes.len()),
                    }),
                })
                .collect::<Result<_>>()?;
            let mut counts = vec![0usize; sizes.len()];
            for &h in &labels {
                counts[h - 1] += 1;
            }
            let pi = labels.iter().map(|&h| counts[h - 1] as f64 / sizes[h - 1] as f64).collect();
            (pi, sizes.iter().sum(), Some((labels, sizes)))
        }
    };
    let respondent: Vec<bool> = table.y.iter().map(Option::is_some).collect();
    let y = table.y.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let weights = inclusion.iter().map(|p: &f64| 1.0 / p).collect();
    Ok(PreparedSample {
        data: SampleData::new((0..n).collect(), table.x, y, respondent, weights)?,
        inclusion,
        population_size: big_n,
        strata,
        true_total: None,
    })
}

fn synthetic_sample(
    design: DesignArg,
    pop: u8,
    size: usize,
    rate: f64,
    target_rate: f64,
    seed: StreamSeed,
) -> Result<PreparedSample> {
    let id = SyntheticId::new(pop)?;
    let population = generate_synthetic(id, size, 0.1, seed.named("population").child(u64::from(pop)))?;
    let model = calibrate_intercept(&population, 0, 1.0, target_rate)?;
    let mut rng = seed.named("sample").rng();
    let (sample, strata) = match design {
        DesignArg::Srswor => {
            let n = ((rate * size as f64).round() as usize).clamp(1, size);
            (srswor(size, n, &mut rng)?, None)
        }
        DesignArg::Ss => {
            let strata = stratify_by_medians(&population, &[0, 1, 2, 3])?;
            let sample = stratified_sample(&strata, rate, &mut rng)?;
            let labels = sample.strata().expect("stratified sample").to_vec();
            (sample, Some((labels, strata.sizes().to_vec())))
        }
    };
    let response = draw_response(&sample, &model, &population, &mut seed.named("response").rng());
    Ok(PreparedSample {
        data: SampleData::from_population(&population, &sample, &response)?,
        inclusion: sample.inclusion_probs().to_vec(),
        population_size: size,
        strata,
        true_total: Some(population.total()),
    })
}

fn bootstrap(spec: &BootSpec, prepared: &PreparedSample, out: Option<&Path>) -> Result<()> {
    let config = ImputationConfig::default();
    let imputer = |d: &SampleData| impute(spec.method, d, &config);
    let imputed = imputer(&prepared.data)?;
    let sample = amimpute::sampling::Sample::new(
        prepared.data.unit_ids().to_vec(),
        prepared.inclusion.clone(),
        prepared.strata.as_ref().map(|(l, _)| l.clone()),
    )?;
    let estimate = horvitz_thompson(&sample, &imputed.tilde_y)?;
    let seed = spec.seed.named("bootstrap");
    let v: BootstrapVariance = match (spec.design, &prepared.strata) {
        (DesignArg::Srswor, _) => bwo_variance(&prepared.data, prepared.population_size, &imputer, spec.b, seed)?,
        (DesignArg::Ss, Some((labels, sizes))) => {
            let design = MirrorMatchDesign::new(labels, sizes, spec.n_prime)?;
            mmb_variance(&prepared.data, &design, spec.mmb_total, &imputer, spec.b, seed)?
        }
        (DesignArg::Ss, None) => unreachable!("stratified samples carry strata"),
    };
    let (lo, hi) = confidence_interval(estimate, v.variance, 0.95)?;
    println!("design: {}", if spec.design == DesignArg::Srswor { "srswor" } else { "ss" });
    println!("method: {}", spec.method);
    println!("n: {}, respondents: {}", prepared.data.len(), prepared.data.respondent_count());
    if let Some(t) = prepared.true_total {
        println!("true total: {t}");
    }
    println!("imputed total: {estimate}");
    println!("B: {}", v.replicates());
    println!("V_boot: {}", v.variance);
    println!("standard error: {}", v.variance.sqrt());
    println!("95% interval: [{lo}, {hi}]");
    println!("replicate fallbacks: {}, redraws: {}", v.fallback_count, v.redraws);
    if let Some(path) = out {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "replicate,total").map_err(io)?;
        for (b, t) in v.replicate_totals.iter().enumerate() {
            writeln!(w, "{b},{t}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    Ok(())
}
