//! Expression matrices, time-indexed frame sets, splits and their file formats.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::BfRng;

pub const LABEL_COLUMN: &str = "label";

/// Samples × genes values with an explicit observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDataset {
    pub genes: Vec<String>,
    pub values: Matrix,
    /// 1 where the value was observed; unobserved entries never enter a loss.
    pub mask: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl ExpressionDataset {
    pub fn new(genes: Vec<String>, values: Matrix, mask: Option<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        if values.cols() != genes.len() {
            return Err(Error::Shape(format!(
                "{} gene names for {} value columns",
                genes.len(),
                values.cols()
            )));
        }
        let mask = mask.unwrap_or_else(|| Matrix::filled(values.rows(), values.cols(), 1.0));
        if mask.shape() != values.shape() || !mask.is_binary() {
            return Err(Error::invalid("mask must be binary with the shape of the values"));
        }
        if let Some(l) = &labels {
            if l.len() != values.rows() {
                return Err(Error::Shape(format!("{} labels for {} samples", l.len(), values.rows())));
            }
        }
        Ok(Self {
            genes,
            values,
            mask,
            labels,
        })
    }

    pub fn samples(&self) -> usize {
        self.values.rows()
    }

    pub fn class_count(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map(|m| m + 1)
            .unwrap_or(0)
    }

    /// Columns reordered (and subset) to `genes`.
    pub fn align_to(&self, genes: &[String]) -> Result<Self> {
        let idx: Vec<usize> = genes
            .iter()
            .map(|g| {
                self.genes
                    .iter()
                    .position(|x| x == g)
                    .ok_or_else(|| Error::invalid(format!("dataset has no column for gene {g}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            genes: genes.to_vec(),
            values: self.values.select_cols(&idx),
            mask: self.mask.select_cols(&idx),
            labels: self.labels.clone(),
        })
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            genes: self.genes.clone(),
            values: self.values.select_rows(rows),
            mask: self.mask.select_rows(rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|r| l[*r]).collect()),
        }
    }

    /// Reads the value file and, if given, the mask file. A trailing column
    /// named `label` holds integer class ids.
    pub fn read(values: &Path, mask: Option<&Path>) -> Result<Self> {
        let (header, rows) = read_csv(values)?;
        let label_col = header.iter().position(|h| h == LABEL_COLUMN);
        let genes: Vec<String> = header.iter().filter(|h| *h != LABEL_COLUMN).cloned().collect();
        let mut data = Vec::with_capacity(rows.len() * genes.len());
        let mut labels = label_col.map(|_| Vec::with_capacity(rows.len()));
        for (line, row) in rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if Some(c) == label_col {
                    let v: usize = cell.trim().parse().map_err(|_| Error::Parse {
                        file: values.to_path_buf(),
                        line: line + 2,
                        message: format!("label `{cell}` is not a class id"),
                    })?;
                    labels.as_mut().expect("label column").push(v);
                } else {
                    data.push(parse_cell(values, line + 2, cell)?);
                }
            }
        }
        let matrix = Matrix::new(rows.len(), genes.len(), data)?;
        let mask = match mask {
            Some(p) => {
                let (mh, mrows) = read_csv(p)?;
                if mh != genes {
                    return Err(Error::invalid(format!("mask header in {} differs from values", p.display())));
                }
                let mut md = Vec::with_capacity(mrows.len() * genes.len());
                for (line, row) in mrows.iter().enumerate() {
                    for cell in row {
                        md.push(parse_cell(p, line + 2, cell)?);
                    }
                }
                Some(Matrix::new(mrows.len(), genes.len(), md)?)
            }
            None => None,
        };
        Self::new(genes, matrix, mask, labels)
    }

    pub fn write(&self, values: &Path, mask: Option<&Path>) -> Result<()> {
        let mut header = self.genes.clone();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN.to_string());
        }
        let rows: Vec<Vec<String>> = (0..self.samples())
            .map(|r| {
                let mut row: Vec<String> = self.values.row(r).iter().map(|v| format_cell(*v)).collect();
                if let Some(l) = &self.labels {
                    row.push(l[r].to_string());
                }
                row
            })
            .collect();
        write_csv(values, &header, &rows)?;
        if let Some(p) = mask {
            write_matrix_csv(p, &self.genes, &self.mask)?;
        }
        Ok(())
    }
}

/// Masked copy of `x` with `hidden` entries set to zero.
pub fn mask_expression(x: &[f64], hidden: &[usize]) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    for &i in hidden {
        if i >= out.len() {
            return Err(Error::invalid(format!("hidden index {i} out of range for {} genes", out.len())));
        }
        out[i] = 0.0;
    }
    Ok(out)
}

/// Indices of observed entries hidden independently with probability `p`.
pub fn draw_hidden(observed: &[f64], p: f64, rng: &mut BfRng) -> Vec<usize> {
    observed
        .iter()
        .enumerate()
        .filter(|(_, m)| **m != 0.0)
        .filter_map(|(i, _)| rng.bernoulli(p).then_some(i))
        .collect()
}

/// Frames of samples indexed by increasing time.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub genes: Vec<String>,
    pub times: Vec<f64>,
    /// One samples × genes matrix per time.
    pub frames: Vec<Matrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameManifest {
    frame: Vec<FrameEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    time: f64,
    file: PathBuf,
}

impl FrameSet {
    pub fn new(genes: Vec<String>, times: Vec<f64>, frames: Vec<Matrix>) -> Result<Self> {
        if times.len() != frames.len() {
            return Err(Error::Shape(format!("{} times for {} frames", times.len(), frames.len())));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("frame times must be finite and strictly increasing"));
        }
        if let Some(f) = frames.iter().find(|f| f.cols() != genes.len()) {
            return Err(Error::Shape(format!("frame with {} columns for {} genes", f.cols(), genes.len())));
        }
        Ok(Self { genes, times, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of aligned series, if every frame has the same row count.
    pub fn series_count(&self) -> Option<usize> {
        let n = self.frames.first()?.rows();
        self.frames.iter().all(|f| f.rows() == n).then_some(n)
    }

    /// Series `s` as a T × genes matrix.
    pub fn series(&self, s: usize) -> Matrix {
        let rows: Vec<&[f64]> = self.frames.iter().map(|f| f.row(s)).collect();
        let data = rows.concat();
        Matrix::new(self.frames.len(), self.genes.len(), data).expect("finite frames")
    }

    pub fn select_series(&self, idx: &[usize]) -> Self {
        Self {
            genes: self.genes.clone(),
            times: self.times.clone(),
            frames: self.frames.iter().map(|f| f.select_rows(idx)).collect(),
        }
    }

    pub fn read(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: FrameManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut genes: Option<Vec<String>> = None;
        let mut times = Vec::new();
        let mut frames = Vec::new();
        for entry in &m.frame {
            let path = base.join(&entry.file);
            let (header, rows) = read_csv(&path)?;
            match &genes {
                Some(g) if *g != header => {
                    return Err(Error::invalid(format!("{} has a different gene header", path.display())))
                }
                None => genes = Some(header.clone()),
                _ => {}
            }
            let mut data = Vec::new();
            for (line, row) in rows.iter().enumerate() {
                for cell in row {
                    data.push(parse_cell(&path, line + 2, cell)?);
                }
            }
            frames.push(Matrix::new(rows.len(), header.len(), data)?);
            times.push(entry.time);
        }
        Self::new(genes.unwrap_or_default(), times, frames)
    }

    /// Writes `frame_###.csv` files and a manifest; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (i, (t, f)) in self.times.iter().zip(&self.frames).enumerate() {
            let file = PathBuf::from(format!("frame_{i:03}.csv"));
            write_matrix_csv(&dir.join(&file), &self.genes, f)?;
            entries.push(FrameEntry { time: *t, file });
        }
        let path = dir.join("frames.toml");
        let text = toml::to_string(&FrameManifest { frame: entries }).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Disjoint train / validation / test index lists covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Split {
    /// Shuffled 60/20/20 split.
    pub fn random(n: usize, seed: u64) -> Self {
        Self::with_fractions(n, seed, 0.6, 0.2)
    }

    pub fn with_fractions(n: usize, seed: u64, train: f64, validation: f64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        BfRng::new(seed).shuffle(&mut idx);
        let n_train = ((n as f64) * train).round() as usize;
        let n_val = (((n as f64) * validation).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        Self {
            train: idx,
            validation,
            test,
            seed,
        }
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            file: path.to_path_buf(),
            line,
            message: format!("`{cell}` is not a finite number"),
        }),
    }
}

/// Shortest text that parses back to the same `f64`.
fn format_cell(v: f64) -> String {
    format!("{v:?}")
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..m.rows())
        .map(|r| m.row(r).iter().map(|v| format_cell(*v)).collect())
        .collect();
    write_csv(path, header, &rows)
}
