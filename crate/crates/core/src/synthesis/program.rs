//! Matrices affine in a vector of decision variables, and semidefinite
//! programs built from them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockShape {
    Symmetric(usize),
    Full(usize, usize),
}

impl BlockShape {
    /// Number of scalar variables.
    pub fn len(&self) -> usize {
        match *self {
            BlockShape::Symmetric(n) => n * (n + 1) / 2,
            BlockShape::Full(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            BlockShape::Symmetric(n) => (n, n),
            BlockShape::Full(r, c) => (r, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub shape: BlockShape,
    pub offset: usize,
}

/// Handle to a variable block of a [`VarLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockId(usize);

/// Allocation of named matrix-valued decision variables in one flat vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarLayout {
    blocks: Vec<VarBlock>,
    n_vars: usize,
}

impl VarLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: BlockShape) -> BlockId {
        self.blocks.push(VarBlock {
            name: name.to_string(),
            shape,
            offset: self.n_vars,
        });
        self.n_vars += shape.len();
        BlockId(self.blocks.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &VarBlock {
        &self.blocks[id.0]
    }

    /// The block as a matrix expression. Symmetric blocks store their upper
    /// triangle column by column; full blocks are row-major.
    pub fn matrix(&self, id: BlockId) -> AffineMatrix {
        let b = self.block(id);
        let (r, c) = b.shape.dims();
        let mut terms = BTreeMap::new();
        match b.shape {
            BlockShape::Symmetric(n) => {
                let mut k = b.offset;
                for j in 0..n {
                    for i in 0..=j {
                        let mut e = DMatrix::zeros(n, n);
                        e[(i, j)] = 1.0;
                        e[(j, i)] = 1.0;
                        terms.insert(k, e);
                        k += 1;
                    }
                }
            }
            BlockShape::Full(rows, cols) => {
                for i in 0..rows {
                    for j in 0..cols {
                        let mut e = DMatrix::zeros(rows, cols);
                        e[(i, j)] = 1.0;
                        terms.insert(b.offset + i * cols + j, e);
                    }
                }
            }
        }
        AffineMatrix {
            constant: DMatrix::zeros(r, c),
            terms,
        }
    }

    /// Numeric value of a block at `x`.
    pub fn extract(&self, id: BlockId, x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix(id).eval(x)
    }
}

/// `C + Σ_k x_k M_k` with sparse dependence on the variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        Self::constant(DMatrix::zeros(r, c))
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, m)| (*k, m))
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * x[*k];
        }
        out
    }

    /// Apply a linear map to the constant and every coefficient.
    pub fn map_linear(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        self.map_linear(|m| m.transpose())
    }

    pub fn lmul(&self, a: &DMatrix<f64>) -> Self {
        self.map_linear(|m| a * m)
    }

    pub fn rmul(&self, a: &DMatrix<f64>) -> Self {
        self.map_linear(|m| m * a)
    }

    /// `aᵀ · self · a`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Self {
        let at = a.transpose();
        self.map_linear(|m| &at * m * a)
    }

    /// `I_n ⊗ self`.
    pub fn kron_identity(&self, n: usize) -> Self {
        let i = linalg::identity(n);
        self.map_linear(|m| linalg::kron(&i, m))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_linear(|m| m * s)
    }

    pub fn view(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        self.map_linear(|m| m.view((r0, c0), (nr, nc)).into_owned())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dim("affine matrix sum", format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            match out.terms.get_mut(k) {
                Some(t) => *t += m,
                None => {
                    out.terms.insert(*k, m.clone());
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// Block matrix from rows of blocks; every block row must share a row
    /// count and every block column a column count.
    pub fn block(rows: &[Vec<AffineMatrix>]) -> Result<Self> {
        let consts: Vec<Vec<DMatrix<f64>>> = rows
            .iter()
            .map(|r| r.iter().map(|b| b.constant.clone()).collect())
            .collect();
        let constant = linalg::block(&consts)?;
        let mut keys: Vec<usize> = rows
            .iter()
            .flat_map(|r| r.iter().flat_map(|b| b.terms.keys().copied()))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let mut terms = BTreeMap::new();
        for k in keys {
            let parts: Vec<Vec<DMatrix<f64>>> = rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|b| b.terms.get(&k).cloned().unwrap_or_else(|| DMatrix::zeros(b.nrows(), b.ncols())))
                        .collect()
                })
                .collect();
            terms.insert(k, linalg::block(&parts)?);
        }
        Ok(Self { constant, terms })
    }

    pub fn block_diag(parts: &[AffineMatrix]) -> Result<Self> {
        let rows: Vec<Vec<AffineMatrix>> = parts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                parts
                    .iter()
                    .enumerate()
                    .map(|(j, q)| if i == j { p.clone() } else { AffineMatrix::zeros(p.nrows(), q.ncols()) })
                    .collect()
            })
            .collect();
        Self::block(&rows)
    }

    /// Coefficient vector of `trace(self)`.
    pub fn trace_coefficients(&self, n_vars: usize) -> DVector<f64> {
        let mut c = DVector::zeros(n_vars);
        for (k, m) in &self.terms {
            c[*k] = m.trace();
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    /// `expr ⪰ margin · I` (expr symmetric).
    Psd { margin: f64 },
    /// `expr = 0` entrywise.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub family: String,
    pub label: String,
    pub kind: ConstraintKind,
    pub expr: AffineMatrix,
    /// Auxiliary constraints only shape the objective and are checked
    /// loosely during verification.
    pub auxiliary: bool,
}

impl Constraint {
    pub fn name(&self) -> String {
        if self.label.is_empty() {
            self.family.clone()
        } else {
            format!("{} [{}]", self.family, self.label)
        }
    }

    /// `margin − λ_min` for a PSD constraint, `max |expr|` for an equality;
    /// non-positive means satisfied.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let m = self.expr.eval(x);
        match self.kind {
            ConstraintKind::Psd { margin } => margin - linalg::min_sym_eig(&m),
            ConstraintKind::Zero => linalg::max_abs(&m),
        }
    }
}

/// Minimize `objectiveᵀ x` subject to affine matrix constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProgram {
    pub layout: VarLayout,
    pub constraints: Vec<Constraint>,
    pub objective: DVector<f64>,
}

impl SdpProgram {
    pub fn new(layout: VarLayout) -> Self {
        let n = layout.n_vars();
        Self {
            layout,
            constraints: Vec::new(),
            objective: DVector::zeros(n),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn add_psd(&mut self, family: &str, label: &str, expr: AffineMatrix, margin: f64) -> Result<()> {
        if expr.nrows() != expr.ncols() {
            return Err(Error::Assembly {
                block: format!("{family} {label}"),
                detail: format!("PSD constraint must be square, got {:?}", expr.shape()),
            });
        }
        self.constraints.push(Constraint {
            family: family.into(),
            label: label.into(),
            kind: ConstraintKind::Psd { margin },
            expr,
            auxiliary: false,
        });
        Ok(())
    }

    pub fn add_zero(&mut self, family: &str, label: &str, expr: AffineMatrix) {
        self.constraints.push(Constraint {
            family: family.into(),
            label: label.into(),
            kind: ConstraintKind::Zero,
            expr,
            auxiliary: false,
        });
    }

    /// Largest violation over the non-auxiliary constraints.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .filter(|c| !c.auxiliary)
            .map(|c| c.violation(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
