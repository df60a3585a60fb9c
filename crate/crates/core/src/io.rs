//! Plain-text matrix container.
//!
//! ```text
//! schur-ode-matrix real 2 3
//! 1.0000000000000000e0 0.0000000000000000e0 -2.5000000000000000e-1
//! ...
//! ```
//!
//! The header gives the kind (`real` or `complex`) and the dimensions. Then
//! one line per row follows, with entries in `{:.16e}` form. A complex entry
//! is written as two numbers, real then imaginary. Seventeen significant
//! digits make the round trip bit-exact. Lines starting with `#` are
//! ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RealMatrix, C64};

const MAGIC: &str = "schur-ode-matrix";

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    Real(RealMatrix),
    Complex(Matrix),
}

impl MatrixData {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixData::Real(m) => (m.rows(), m.cols()),
            MatrixData::Complex(m) => (m.rows(), m.cols()),
        }
    }

    /// Complex view; real data is widened.
    pub fn into_complex(self) -> Matrix {
        match self {
            MatrixData::Real(m) => m.to_complex(),
            MatrixData::Complex(m) => m,
        }
    }

    pub fn into_real(self) -> Result<RealMatrix> {
        match self {
            MatrixData::Real(m) => Ok(m),
            MatrixData::Complex(m) => {
                if !m.is_real() {
                    return Err(Error::InvalidArgument("matrix has nonzero imaginary parts".into()));
                }
                let data = m.as_slice().iter().map(|z| z.re).collect();
                Ok(RealMatrix::from_vec(m.rows(), m.cols(), data)?)
            }
        }
    }
}

pub fn format_real(m: &RealMatrix) -> String {
    let mut out = format!("{MAGIC} real {} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn format_complex(m: &Matrix) -> String {
    let mut out = format!("{MAGIC} complex {} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|z| format!("{:.16e} {:.16e}", z.re, z.im)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Column vector as an `n × 1` real matrix.
pub fn format_vector(v: &[f64]) -> String {
    format_real(&RealMatrix::from_vec(v.len(), 1, v.to_vec()).expect("shape"))
}

pub fn parse_matrix(text: &str) -> Result<MatrixData> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let fail = |line: usize, msg: &str| Error::Format { line, msg: msg.to_string() };
    let (hline, header) = lines.next().ok_or_else(|| fail(1, "empty file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != MAGIC {
        return Err(fail(hline, "expected `schur-ode-matrix KIND ROWS COLS`"));
    }
    let complex = match parts[1] {
        "real" => false,
        "complex" => true,
        _ => return Err(fail(hline, "kind must be `real` or `complex`")),
    };
    let rows: usize = parts[2].parse().map_err(|_| fail(hline, "bad row count"))?;
    let cols: usize = parts[3].parse().map_err(|_| fail(hline, "bad column count"))?;
    let per_row = if complex { 2 * cols } else { cols };
    let mut values: Vec<f64> = Vec::with_capacity(rows * per_row);
    let mut seen = 0;
    for (lno, line) in lines {
        if seen == rows {
            return Err(fail(lno, "more rows than declared"));
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(tok.parse().map_err(|_| fail(lno, &format!("bad number `{tok}`")))?);
        }
        if values.len() - before != per_row {
            return Err(fail(lno, &format!("expected {per_row} numbers, found {}", values.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(fail(text.lines().count(), "fewer rows than declared"));
    }
    if complex {
        let data = values.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        Ok(MatrixData::Complex(Matrix::from_vec(rows, cols, data)?))
    } else {
        Ok(MatrixData::Real(RealMatrix::from_vec(rows, cols, values)?))
    }
}

pub fn read_matrix(path: &Path) -> Result<MatrixData> {
    parse_matrix(&std::fs::read_to_string(path)?)
}
