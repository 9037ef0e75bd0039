//! Finite populations: the five synthetic generators used in the simulation
//! study, CSV ingestion for external data, and true totals.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::error::{Error, Result};
use crate::rng::StreamSeed;

/// A finite universe of `(y, x₁..x_q)` records. Every covariate lies in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    y: Vec<f64>,
    x: Array2<f64>,
}

impl Population {
    pub fn new(y: Vec<f64>, x: Array2<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty("population has no units".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::Domain(format!(
                "covariate matrix has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Domain("population needs at least one covariate".into()));
        }
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "covariate x{} of unit {i} is {v}, outside [0,1]",
                j + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("y of unit {i} is not finite")));
        }
        Ok(Population { y, x })
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn covariate_count(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn covariate(&self, j: usize) -> ArrayView1<'_, f64> {
        self.x.column(j)
    }

    /// Σ y over the whole population.
    pub fn total(&self) -> f64 {
        self.y.iter().sum()
    }

    /// Writes `y,x1,..,xq` with a header; floats use shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.covariate_count()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (i, row) in self.x.rows().into_iter().enumerate() {
            let mut rec = vec![self.y[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Σ y over the population.
pub fn population_total(pop: &Population) -> f64 {
    pop.total()
}

/// Identifier of one of the five synthetic populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SyntheticId(u8);

impl SyntheticId {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(SyntheticId(id))
        } else {
            Err(Error::Domain(format!("synthetic population id must be in 1..=5, got {id}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Noise-free regression function of this population at `x = (x1, x2, x3, x4)`.
    pub fn signal(self, x: [f64; 4]) -> f64 {
        let [x1, x2, x3, x4] = x;
        match self.0 {
            1 => 1.0 + 5.0 * x1 + x2 + x3 + x4,
            2 => {
                2.0 + (PI * x1 + PI).cos()
                    + (4.0 * PI * x2).sin()
                    + (-(x3 - 0.5).powi(2)).exp()
                    + (x4 - 0.5).powi(2)
            }
            3 => 1.0 + (2.0 * PI * x1).cos() + x1 * x2 + x3 * x3 * x4,
            4 => 2.0 + (PI * (x1 + x2)).cos() * (PI * (x3 + x4)).sin(),
            5 => 1.0,
            _ => unreachable!("validated in SyntheticId::new"),
        }
    }
}

/// Draws one of the five synthetic populations.
///
/// `x1..x3` are Uniform[0,1]; `x4` is Gamma(shape 3, scale 1/6), drawn as a sum
/// of three unit exponentials, then min–max rescaled over the drawn population
/// so its minimum is exactly 0 and its maximum exactly 1.
pub fn generate_synthetic(id: SyntheticId, size: usize, noise_sd: f64, seed: StreamSeed) -> Result<Population> {
    if size == 0 {
        return Err(Error::Domain("population size must be at least 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::Domain(format!("noise_sd must be a nonnegative real, got {noise_sd}")));
    }
    let mut rng = seed.rng();
    let mut x = Array2::<f64>::zeros((size, 4));
    for mut row in x.rows_mut() {
        row[0] = rng.random::<f64>();
        row[1] = rng.random::<f64>();
        row[2] = rng.random::<f64>();
        let g: f64 = (0..3).map(|_| -> f64 { Exp1.sample(&mut rng) }).sum::<f64>() / 6.0;
        row[3] = g;
    }
    rescale_column(&mut x, 3);

    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let y = x
        .rows()
        .into_iter()
        .map(|row| {
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            id.signal([row[0], row[1], row[2], row[3]]) + eps
        })
        .collect();
    Population::new(y, x)
}

/// Min–max maps column `j` onto `[0,1]`. A constant column maps to 0.
pub fn rescale_column(x: &mut Array2<f64>, j: usize) {
    let (lo, hi) = x
        .column(j)
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    for v in x.column_mut(j) {
        *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Reads named numeric columns from a headed CSV. Cells that are empty (after
/// trimming) come back as `None`.
pub fn read_columns<R: Read>(input: R, columns: &[&str]) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Vec::new(); columns.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        for (k, &ci) in idx.iter().enumerate() {
            let cell = rec.get(ci).unwrap_or("").trim();
            if cell.is_empty() {
                out[k].push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: columns[k].to_string(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: columns[k].to_string(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            out[k].push(Some(v));
        }
    }
    if out.first().map_or(true, |c| c.is_empty()) {
        return Err(Error::Empty("CSV has a header but no data rows".into()));
    }
    Ok((header, out))
}

/// Loads a population from a CSV file (comma separated, header row, `.` decimals).
pub fn load_csv(path: &Path, y_column: &str, x_columns: &[&str], rescale: bool) -> Result<Population> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_population(file, y_column, x_columns, rescale)
}

pub fn read_population<R: Read>(input: R, y_column: &str, x_columns: &[&str], rescale: bool) -> Result<Population> {
    if x_columns.is_empty() {
        return Err(Error::Domain("at least one x column is required".into()));
    }
    let mut names = vec![y_column];
    names.extend_from_slice(x_columns);
    let (_, cols) = read_columns(input, &names)?;
    let n = cols[0].len();
    let mut cols = cols.into_iter();
    let y = cols
        .next()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Parse {
                row: i + 2,
                column: y_column.to_string(),
                message: "y must be fully observed".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut x = Array2::<f64>::zeros((n, x_columns.len()));
    for (j, col) in cols.enumerate() {
        for (i, v) in col.into_iter().enumerate() {
            x[[i, j]] = v.ok_or_else(|| Error::Parse {
                row: i + 2,
                column: x_columns[j].to_string(),
                message: "missing covariate value".into(),
            })?;
        }
        if rescale {
            rescale_column(&mut x, j);
        }
    }
    Population::new(y, x)
}
