//! `ness-suite v1` text format:
//!
//! ```text
//! ness-suite v1 T=<tasks> d=<dim>
//! task <id> classes=<k> n=<rows>
//! <label>,<v1>,...,<vd>
//! ...
//! ```
//!
//! Task ids run from 1 to T in order. Reals are written in Rust's shortest
//! round-trip decimal form, so a written suite reloads bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use super::TaskDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &str = "ness-suite v1";

pub fn write_suite(tasks: &[TaskDataset]) -> Result<String> {
    let d = tasks.first().map_or(0, TaskDataset::dim);
    if tasks.iter().any(|t| t.dim() != d) {
        return Err(Error::Shape("tasks of a suite must share their dimension".into()));
    }
    let mut out = String::new();
    writeln!(out, "{MAGIC} T={} d={d}", tasks.len()).unwrap();
    for (i, t) in tasks.iter().enumerate() {
        writeln!(out, "task {} classes={} n={}", i + 1, t.n_classes, t.len()).unwrap();
        for (r, &label) in t.y.iter().enumerate() {
            write!(out, "{label}").unwrap();
            for v in t.x.row(r) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_suite_file(path: &Path, tasks: &[TaskDataset]) -> Result<()> {
    let text = write_suite(tasks)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_file_suite(path: &Path) -> Result<Vec<TaskDataset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_suite(&text)
}

fn key_value(token: Option<&str>, key: &str, line: usize) -> Result<usize> {
    let malformed = || Error::Format {
        line,
        message: format!("expected {key}=<integer>"),
    };
    let token = token.ok_or_else(malformed)?;
    let value = token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(malformed)?;
    value.parse().map_err(|_| malformed())
}

pub fn parse_suite(text: &str) -> Result<Vec<TaskDataset>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (lineno, header) = lines.next().ok_or(Error::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let rest = header.strip_prefix(MAGIC).ok_or_else(|| Error::Format {
        line: lineno,
        message: format!("header must start with '{MAGIC}'"),
    })?;
    let mut fields = rest.split_whitespace();
    let task_count = key_value(fields.next(), "T", lineno)?;
    let dim = key_value(fields.next(), "d", lineno)?;
    if fields.next().is_some() || dim == 0 {
        return Err(Error::Format {
            line: lineno,
            message: "malformed header".into(),
        });
    }

    let mut tasks = Vec::with_capacity(task_count);
    for expected_id in 1..=task_count {
        let (lineno, line) = lines.next().ok_or(Error::Format {
            line: lineno + 1,
            message: format!("missing task {expected_id}"),
        })?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some("task") {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected 'task {expected_id} classes=<k> n=<rows>'"),
            });
        }
        let id: usize = fields.next().and_then(|s| s.parse().ok()).ok_or(Error::Format {
            line: lineno,
            message: "task id must be an integer".into(),
        })?;
        if id != expected_id {
            return Err(Error::Format {
                line: lineno,
                message: format!("expected task {expected_id}, found task {id}"),
            });
        }
        let classes = key_value(fields.next(), "classes", lineno)?;
        let n = key_value(fields.next(), "n", lineno)?;
        if classes == 0 || fields.next().is_some() {
            return Err(Error::Format {
                line: lineno,
                message: "malformed task line".into(),
            });
        }

        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (lineno, row) = lines.next().ok_or(Error::Format {
                line: lineno + labels.len() + 1,
                message: format!("task {id} ends after {} of {n} rows", labels.len()),
            })?;
            let values: Vec<&str> = row.split(',').collect();
            if values.len() != dim + 1 {
                return Err(Error::RowLength {
                    line: lineno,
                    expected: dim + 1,
                    found: values.len(),
                });
            }
            let label: usize = values[0].trim().parse().map_err(|_| Error::Format {
                line: lineno,
                message: format!("label '{}' is not a non-negative integer", values[0]),
            })?;
            if label >= classes {
                return Err(Error::LabelRange { label, classes });
            }
            for v in &values[1..] {
                let parsed: f64 = v.trim().parse().map_err(|_| Error::Format {
                    line: lineno,
                    message: format!("'{v}' is not a number"),
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Format {
                        line: lineno,
                        message: format!("non-finite value '{v}'"),
                    });
                }
                data.push(parsed);
            }
            labels.push(label);
        }
        let x = Matrix::new(n, dim, data)?;
        tasks.push(TaskDataset::new(id, classes, x, labels)?);
    }
    if let Some((lineno, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Format {
            line: lineno,
            message: format!("unexpected content after last task: '{extra}'"),
        });
    }
    Ok(tasks)
}
