//! Linear programs with bounded variables, and a dense two-phase simplex
//! solver for them.

mod simplex;
mod text;

pub use simplex::solve;
pub use text::ParseError;

use serde::Serialize;
use thiserror::Error;

/// Feasibility tolerance on rows and bounds.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost tolerance for optimality.
pub const OPT_TOL: f64 = 1e-9;
/// Hard cap on total pivots.
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

/// One constraint row `Σ coeff·v  rel  rhs` with sparse coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rel: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * values[j]).sum()
    }

    /// Amount by which `values` violate this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let act = self.activity(values);
        match self.rel {
            Relation::Le => (act - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - act).max(0.0),
            Relation::Eq => (act - self.rhs).abs(),
        }
    }
}

/// `minimize cᵀv` subject to rows and finite per-variable bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// `n_vars` variables, each bounded to `[lo, hi]`, zero objective.
    pub fn new(n_vars: usize, lo: f64, hi: f64) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            rows: Vec::new(),
            bounds: vec![(lo, hi); n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, rel: Relation, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, rel, rhs });
        self.rows.len() - 1
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, v)| c * v).sum()
    }

    /// Largest row or bound violation of `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| r.violation(values));
        let bounds = self
            .bounds
            .iter()
            .zip(values)
            .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub(crate) fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.bounds.len() != n {
            return Err(LpError::Malformed(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(LpError::Malformed(format!(
                    "bad bounds [{lo}, {hi}] on x{j}"
                )));
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() {
                return Err(LpError::Malformed(format!("non-finite rhs on row {i}")));
            }
            if let Some(&(j, a)) = r.coeffs.iter().find(|&&(j, a)| j >= n || !a.is_finite()) {
                return Err(LpError::Malformed(format!(
                    "row {i}: bad coefficient {a} on x{j}"
                )));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Malformed("non-finite objective".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Row duals `y` with `c - Aᵀy - z` the reduced costs (optimal only).
    pub duals: Vec<f64>,
    /// Duals `z` of the upper-bound rows, one per variable (optimal only).
    pub bound_duals: Vec<f64>,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum LpError {
    #[error("simplex stalled after {iterations} iterations")]
    Stalled { iterations: usize },
    #[error("malformed linear program: {0}")]
    Malformed(String),
}
