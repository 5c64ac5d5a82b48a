//! JSON archive of a synthesized controller.

use std::path::Path;

use ddvel::synthesis::{SynthesisSolution, VerificationCheck};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    /// `velocity`, `direct-lpv` or `lti`.
    pub controller: String,
    pub seed: u64,
    pub basis: String,
    pub states: Vec<usize>,
    /// State dimension including integrator states.
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub alpha: Option<f64>,
    pub c_r: Vec<Vec<f64>>,
    pub p_lower: Vec<f64>,
    pub p_upper: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub objective: String,
    /// Margin the certificate was verified with.
    pub epsilon: f64,
    pub normalize: bool,
    pub pe_rank: usize,
    pub pe_required: usize,
    pub k0: Vec<Vec<f64>>,
    pub kbar: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
    pub verification: Vec<Check>,
    /// Solver point in the layout of the assembled program.
    pub solver_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub backend: String,
    pub status: String,
    pub iterations: u32,
    pub objective: f64,
    pub max_violation: f64,
    pub equality_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Inverse of [`rows`]; `ncols` is needed for matrices without rows.
pub fn matrix(rows: &[Vec<f64>], ncols: usize) -> CliResult<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("ragged matrix in archive (expected {ncols} columns)")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl Archive {
    pub fn fill_solution(&mut self, sol: &SynthesisSolution) {
        self.k0 = rows(&sol.gains.k0);
        self.kbar = rows(&sol.gains.kbar);
        let d = &sol.diagnostics;
        self.diagnostics = Diagnostics {
            backend: d.backend.clone(),
            status: d.status.clone(),
            iterations: d.iterations,
            objective: d.objective,
            max_violation: d.max_violation,
            equality_residual: d.equality_residual,
        };
        self.verification = sol.verification.checks.iter().map(Check::from).collect();
        self.solver_point = sol.x.iter().copied().collect();
        self.epsilon = sol.epsilon;
    }

    pub fn k0(&self) -> CliResult<DMatrix<f64>> {
        matrix(&self.k0, self.n_x)
    }

    pub fn kbar(&self) -> CliResult<DMatrix<f64>> {
        matrix(&self.kbar, self.n_x * self.n_p)
    }

    pub fn solver_point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.solver_point)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("archive serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

impl From<&VerificationCheck> for Check {
    fn from(c: &VerificationCheck) -> Self {
        Self {
            name: c.name.clone(),
            value: c.value,
            threshold: c.threshold,
            passed: c.passed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matrix(&rows(&m), 3).unwrap(), m);
        assert_eq!(matrix(&[], 4).unwrap().shape(), (0, 4));
        assert!(matrix(&[vec![1.0], vec![1.0, 2.0]], 2).is_err());
    }
}
