//! Headerless CSV readers/writers for matrices.
//!
//! Values are written with 17 significant digits so every `f64` round-trips
//! exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::numerics::Matrix;

/// Formats an `f64` with 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_matrix_csv(path: &Path, m: &Matrix) -> std::io::Result<()> {
    let mut buf = String::with_capacity(m.rows() * m.cols() * 26);
    for i in 0..m.rows() {
        let row = m.row(i);
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                buf.push(',');
            }
            buf.push_str(&fmt_f64(*v));
        }
        buf.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(buf.as_bytes())
}

pub(crate) fn read_matrix_csv(path: &Path) -> Result<Matrix, CsvError> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut width = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| CsvError::BadField {
                path: path.display().to_string(),
                line: lineno + 1,
                field: field.to_string(),
            })?;
            data.push(v);
            width += 1;
        }
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(CsvError::RaggedRow {
                    path: path.display().to_string(),
                    line: lineno + 1,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Matrix::from_vec(rows, cols, data).map_err(|e| CsvError::BadMatrix {
        path: path.display().to_string(),
        source: e,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: cannot parse '{field}' as a number")]
    BadField {
        path: String,
        line: usize,
        field: String,
    },
    #[error("{path}:{line}: inconsistent column count")]
    RaggedRow { path: String, line: usize },
    #[error("{path}: {source}")]
    BadMatrix {
        path: String,
        #[source]
        source: crate::numerics::NumericsError,
    },
}
