//! Datasets: synthetic Gaussian blobs and CSV ingestion.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};

const STD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

/// One split of a dataset, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [usize],
}

impl Dataset {
    pub fn train(&self) -> Split<'_> {
        Split {
            x: &self.train_x,
            y: &self.train_y,
        }
    }

    pub fn test(&self) -> Split<'_> {
        Split {
            x: &self.test_x,
            y: &self.test_y,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }

    /// The first `n` training samples as a borrowed batch.
    pub fn train_batch(&self, n: usize) -> Vec<(&[f64], usize)> {
        self.train_x
            .iter()
            .zip(&self.train_y)
            .take(n)
            .map(|(x, &y)| (x.as_slice(), y))
            .collect()
    }

    /// Writes `f0,…,f{dim-1},label`, training rows first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = (0..self.feature_dim)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        writeln!(f, "{}", header.join(","))?;
        for (x, y) in self
            .train_x
            .iter()
            .zip(&self.train_y)
            .chain(self.test_x.iter().zip(&self.test_y))
        {
            let cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{},{}", cells.join(","), y)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Number of rows that go to the training split under the 80/20 rule.
pub fn train_count(n: usize) -> usize {
    (n * 4).div_ceil(5)
}

/// Isotropic Gaussian blobs around class means drawn from `[-1, 1]^dim`,
/// shuffled and split 80/20.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate blob sizes: dim {dim}, per_class {per_class}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid spread {spread}")));
    }
    let mut rng = rng_for(seed, Stream::Data);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let x = if spread == 0.0 {
                mean.clone()
            } else {
                let noise = Normal::new(0.0, spread).expect("finite spread");
                mean.iter().map(|&m| m + noise.sample(&mut rng)).collect()
            };
            rows.push((x, label));
        }
    }
    rows.shuffle(&mut rng);
    let n_train = train_count(rows.len());
    let test = rows.split_off(n_train);
    let (train_x, train_y) = rows.into_iter().unzip();
    let (test_x, test_y) = test.into_iter().unzip();
    Ok(Dataset {
        train_x,
        train_y,
        test_x,
        test_y,
        feature_dim: dim,
        classes,
    })
}

/// Per-feature mean and population standard deviation, computed with a
/// straightforward accumulate-then-divide pass per statistic.
pub fn feature_stats(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dim = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in xs {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

/// Parses `features…,label` rows (optional header), keeps file order, splits
/// 80/20 and standardizes every feature with statistics from the training
/// rows only. Features whose training std is below 1e-12 become all zeros.
pub fn load_csv(path: &Path, classes: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, classes, &path.display().to_string())
}

pub fn parse_csv(text: &str, classes: usize, origin: &str) -> Result<Dataset> {
    let perr = |row: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        row,
        msg,
    };
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if i == 0 && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        if cells.len() < 2 {
            return Err(perr(row, "need at least one feature and a label".into()));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(perr(
                    row,
                    format!("expected {w} cells, found {}", cells.len()),
                ))
            }
            _ => {}
        }
        let (label_cell, feature_cells) = cells.split_last().expect("non-empty");
        let features = feature_cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(row, format!("column {}: non-numeric cell {c:?}", j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = label_cell
            .parse()
            .map_err(|_| perr(row, format!("label {label_cell:?} is not a class index")))?;
        if label >= classes {
            return Err(perr(row, format!("label {label} >= classes {classes}")));
        }
        rows.push((features, label));
    }
    if rows.len() < 2 {
        return Err(perr(
            0,
            format!("need at least 2 data rows, found {}", rows.len()),
        ));
    }
    let n_train = train_count(rows.len());
    let test = rows.split_off(n_train);
    let (mut train_x, train_y): (Vec<Vec<f64>>, Vec<usize>) = rows.into_iter().unzip();
    let (mut test_x, test_y): (Vec<Vec<f64>>, Vec<usize>) = test.into_iter().unzip();
    let (mean, std) = feature_stats(&train_x);
    for x in train_x.iter_mut().chain(test_x.iter_mut()) {
        for ((v, m), s) in x.iter_mut().zip(&mean).zip(&std) {
            *v = if *s < STD_GUARD { 0.0 } else { (*v - m) / s };
        }
    }
    Ok(Dataset {
        feature_dim: mean.len(),
        train_x,
        train_y,
        test_x,
        test_y,
        classes,
    })
}
