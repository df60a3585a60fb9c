//! Sampled trajectories with reference values and error columns.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `samples` evenly spaced points from `x0` to `x1`, both ends exact.
pub fn sample_points(x0: f64, x1: f64, samples: usize) -> Result<Vec<f64>> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    if !(x1 > x0) || !x0.is_finite() || !x1.is_finite() {
        return Err(Error::InvalidArgument(format!("need x0 < x1, got [{x0}, {x1}]")));
    }
    let last = samples - 1;
    Ok((0..samples)
        .map(|k| if k == last { x1 } else { x0 + (x1 - x0) * k as f64 / last as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<f64>,
    pub solver: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    /// `|solver − reference|` componentwise.
    pub errors: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(xs: Vec<f64>, solver: Vec<Vec<f64>>, reference: Vec<Vec<f64>>) -> Result<Self> {
        if solver.len() != xs.len() || reference.len() != xs.len() {
            return Err(Error::dim("trajectory columns have different lengths"));
        }
        let n = solver.first().map_or(0, Vec::len);
        if solver.iter().chain(&reference).any(|r| r.len() != n) {
            return Err(Error::dim("trajectory states have different dimensions"));
        }
        let errors = solver
            .iter()
            .zip(&reference)
            .map(|(s, r)| s.iter().zip(r).map(|(a, b)| (a - b).abs()).collect())
            .collect();
        Ok(Trajectory {
            xs,
            solver,
            reference,
            errors,
        })
    }

    pub fn dim(&self) -> usize {
        self.solver.first().map_or(0, Vec::len)
    }

    /// Largest error of each variable over the samples.
    pub fn max_errors(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.dim()];
        for row in &self.errors {
            for (o, e) in out.iter_mut().zip(row) {
                *o = o.max(*e);
            }
        }
        out
    }

    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["x".to_string()];
        for prefix in ["y", "ref", "err"] {
            cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        }
        cols.join(",")
    }

    /// CSV with 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = Trajectory::csv_header(self.dim());
        out.push('\n');
        for k in 0..self.xs.len() {
            let _ = write!(out, "{:.16e}", self.xs[k]);
            for v in self.solver[k].iter().chain(&self.reference[k]).chain(&self.errors[k]) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}
