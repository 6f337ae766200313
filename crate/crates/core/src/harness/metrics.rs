//! The accuracy matrix and the two summary metrics derived from it.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `A[t][i]`: test accuracy (percent) on task `i` after training task `t`,
/// both 0-based here. Entries above the diagonal stay unset.
#[derive(Debug, Clone)]
pub struct AccuracyMatrix {
    tasks: usize,
    values: Vec<Option<f64>>,
}

impl PartialEq for AccuracyMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.tasks == other.tasks
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.map(f64::to_bits) == b.map(f64::to_bits))
    }
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            values: vec![None; tasks * tasks],
        }
    }

    /// Builds a matrix from rows; row `t` holds the values for tasks `0..=t`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (t, row) in rows.iter().enumerate() {
            if row.len() > t + 1 {
                return Err(Error::Shape(format!(
                    "row {} has {} entries, at most {} allowed",
                    t + 1,
                    row.len(),
                    t + 1
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                m.set(t, i, v)?;
            }
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        if t >= self.tasks || i >= self.tasks {
            return None;
        }
        self.values[t * self.tasks + i]
    }

    pub fn set(&mut self, t: usize, i: usize, value: f64) -> Result<()> {
        if t >= self.tasks || i > t {
            return Err(Error::Shape(format!(
                "entry ({}, {}) outside the lower triangle of a {} task matrix",
                t + 1,
                i + 1,
                self.tasks
            )));
        }
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::Shape(format!("accuracy {value} outside [0, 100]")));
        }
        self.values[t * self.tasks + i] = Some(value);
        Ok(())
    }

    pub fn row_complete(&self, t: usize) -> bool {
        t < self.tasks && (0..=t).all(|i| self.get(t, i).is_some())
    }

    fn last_row(&self) -> Result<Vec<f64>> {
        if self.tasks == 0 || !self.row_complete(self.tasks - 1) {
            return Err(Error::State("last row of the accuracy matrix is incomplete".into()));
        }
        Ok((0..self.tasks).map(|i| self.get(self.tasks - 1, i).unwrap()).collect())
    }

    /// `A[t][i] − A[i][i]` below and on the diagonal.
    pub fn deltas(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.tasks)
            .map(|t| {
                (0..self.tasks)
                    .map(|i| {
                        if i > t {
                            return None;
                        }
                        Some(self.get(t, i)? - self.get(i, i)?)
                    })
                    .collect()
            })
            .collect()
    }

    /// One line per row; unset entries are empty fields.
    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<Option<f64>>> = (0..self.tasks)
            .map(|t| (0..self.tasks).map(|i| self.get(t, i)).collect())
            .collect();
        grid_csv(&rows)
    }

    pub fn heatmap_csv(&self) -> String {
        grid_csv(&self.deltas())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let t = lines.len();
        let mut m = Self::new(t);
        for (r, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != t {
                return Err(Error::RowLength {
                    line: r + 1,
                    expected: t,
                    found: fields.len(),
                });
            }
            for (i, f) in fields.iter().enumerate() {
                if f.is_empty() {
                    continue;
                }
                let v: f64 = f.parse().map_err(|_| Error::Format {
                    line: r + 1,
                    message: format!("'{f}' is not a number"),
                })?;
                m.set(r, i, v).map_err(|e| Error::Format {
                    line: r + 1,
                    message: e.to_string(),
                })?;
            }
        }
        Ok(m)
    }
}

/// Seventeen significant digits, so values survive a round trip.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn grid_csv(rows: &[Vec<Option<f64>>]) -> String {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| v.map(format_real).unwrap_or_default()).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    out
}

/// Mean of the last row.
pub fn compute_acc(a: &AccuracyMatrix) -> Result<f64> {
    let last = a.last_row()?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// `1/(T−1) · Σ_{i<T} (A[T][i] − A[i][i])`.
pub fn compute_bwt(a: &AccuracyMatrix) -> Result<f64> {
    let t = a.tasks();
    if t < 2 {
        return Err(Error::UndefinedMetric(
            "backward transfer needs at least two tasks".into(),
        ));
    }
    let last = a.last_row()?;
    let mut sum = 0.0;
    for (i, &after) in last.iter().take(t - 1).enumerate() {
        let diag = a
            .get(i, i)
            .ok_or_else(|| Error::State(format!("diagonal entry {} is unset", i + 1)))?;
        sum += after - diag;
    }
    Ok(sum / (t - 1) as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
