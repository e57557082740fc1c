//! Affine matrix expressions in symmetric and scalar decision variables.
//!
//! An expression is `C + sum_k L_k V_k R_k + sum_k v_k G_k`, where `V_k` are
//! symmetric matrix variables and `v_k` scalar variables. Congruence with a
//! constant outer factor `F` maps every term to another term of the same form,
//! so `F^T E F` stays affine.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::linalg::{zeros, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarShape {
    Symmetric(usize),
    Scalar,
}

impl VarShape {
    pub fn dim(self) -> usize {
        match self {
            VarShape::Symmetric(n) => n,
            VarShape::Scalar => 1,
        }
    }
    /// Number of free scalar parameters.
    pub fn n_free(self) -> usize {
        match self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Scalar => 1,
        }
    }
}

/// How a variable transforms under program rescaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    /// `v = v_hat / s`
    Homogeneous,
    /// `v = v_hat - ln s` (log-domain auxiliaries of the volume objective)
    Logarithmic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixVariable {
    pub id: VarId,
    pub name: String,
    pub shape: VarShape,
    pub scaling: Scaling,
}

/// Values for a set of variables; scalars are stored as 1x1 matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    values: BTreeMap<VarId, Mat>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn set(&mut self, var: VarId, value: Mat) {
        self.values.insert(var, value);
    }
    pub fn set_scalar(&mut self, var: VarId, value: f64) {
        self.values.insert(var, Mat::from_element(1, 1, value));
    }
    pub fn get(&self, var: VarId) -> Option<&Mat> {
        self.values.get(&var)
    }
    pub fn scalar(&self, var: VarId) -> Option<f64> {
        self.values.get(&var).map(|m| m[(0, 0)])
    }
    pub fn iter(&self) -> impl Iterator<Item = (&VarId, &Mat)> {
        self.values.iter()
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Term {
    Scalar { var: VarId, coef: Mat },
    Matrix { var: VarId, left: Mat, right: Mat },
}

impl Term {
    fn var(&self) -> VarId {
        match self {
            Term::Scalar { var, .. } | Term::Matrix { var, .. } => *var,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AffineExpr {
    pub(crate) constant: Mat,
    pub(crate) terms: Vec<Term>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { constant: zeros(rows, cols), terms: Vec::new() }
    }

    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    /// The variable itself (symmetric `n x n` or scalar `1 x 1`).
    pub fn var(v: &MatrixVariable) -> Self {
        match v.shape {
            VarShape::Scalar => Self::scalar_times(v, Mat::from_element(1, 1, 1.0)),
            VarShape::Symmetric(n) => Self {
                constant: zeros(n, n),
                terms: vec![Term::Matrix { var: v.id, left: Mat::identity(n, n), right: Mat::identity(n, n) }],
            },
        }
    }

    /// `v * coef` for a scalar variable `v`.
    pub fn scalar_times(v: &MatrixVariable, coef: Mat) -> Self {
        assert_eq!(v.shape, VarShape::Scalar, "scalar_times on a matrix variable");
        Self {
            constant: zeros(coef.nrows(), coef.ncols()),
            terms: vec![Term::Scalar { var: v.id, coef }],
        }
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
    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn variables(&self) -> impl Iterator<Item = VarId> + '_ {
        self.terms.iter().map(Term::var)
    }

    /// `C * self`
    pub fn left_mul(&self, c: &Mat) -> Self {
        assert_eq!(c.ncols(), self.nrows(), "left_mul shape");
        Self {
            constant: c * &self.constant,
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Scalar { var, coef } => Term::Scalar { var: *var, coef: c * coef },
                    Term::Matrix { var, left, right } => {
                        Term::Matrix { var: *var, left: c * left, right: right.clone() }
                    }
                })
                .collect(),
        }
    }

    /// `self * C`
    pub fn right_mul(&self, c: &Mat) -> Self {
        assert_eq!(self.ncols(), c.nrows(), "right_mul shape");
        Self {
            constant: &self.constant * c,
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Scalar { var, coef } => Term::Scalar { var: *var, coef: coef * c },
                    Term::Matrix { var, left, right } => {
                        Term::Matrix { var: *var, left: left.clone(), right: right * c }
                    }
                })
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Scalar { var, coef } => Term::Scalar { var: *var, coef: coef.transpose() },
                    Term::Matrix { var, left, right } => {
                        Term::Matrix { var: *var, left: right.transpose(), right: left.transpose() }
                    }
                })
                .collect(),
        }
    }

    /// `outer^T * self * outer`.
    pub fn congruence(&self, outer: &Mat) -> Result<Self> {
        if self.nrows() != self.ncols() || outer.nrows() != self.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "congruence of {}x{} inner with {}x{} outer",
                self.nrows(),
                self.ncols(),
                outer.nrows(),
                outer.ncols()
            )));
        }
        Ok(self.left_mul(&outer.transpose()).right_mul(outer))
    }

    /// Place `self` at offset `(r0, c0)` in a zero `rows x cols` expression.
    pub fn embed(&self, rows: usize, cols: usize, r0: usize, c0: usize) -> Self {
        let (r, c) = self.shape();
        assert!(r0 + r <= rows && c0 + c <= cols, "embed out of range");
        let pad = |m: &Mat, rr: usize, cc: usize, i0: usize, j0: usize| {
            let mut out = zeros(rr, cc);
            out.view_mut((i0, j0), m.shape()).copy_from(m);
            out
        };
        Self {
            constant: pad(&self.constant, rows, cols, r0, c0),
            terms: self
                .terms
                .iter()
                .map(|t| match t {
                    Term::Scalar { var, coef } => {
                        Term::Scalar { var: *var, coef: pad(coef, rows, cols, r0, c0) }
                    }
                    Term::Matrix { var, left, right } => Term::Matrix {
                        var: *var,
                        left: pad(left, rows, left.ncols(), r0, 0),
                        right: pad(right, right.nrows(), cols, 0, c0),
                    },
                })
                .collect(),
        }
    }

    /// Block matrix from a grid; `None` entries are zero blocks whose size is
    /// inferred from the rest of their row and column.
    pub fn blocks(grid: &[Vec<Option<AffineExpr>>]) -> Result<Self> {
        let nr = grid.len();
        let nc = grid.first().map_or(0, |r| r.len());
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            if row.len() != nc {
                return Err(Error::ShapeMismatch("ragged block grid".into()));
            }
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, val, what) in
                        [(&mut heights[i], b.nrows(), "row"), (&mut widths[j], b.ncols(), "column")]
                    {
                        match slot {
                            Some(v) if *v != val => {
                                return Err(Error::ShapeMismatch(format!("inconsistent block {what} size")))
                            }
                            _ => *slot = Some(val),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.unwrap_or(0)).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.unwrap_or(0)).collect();
        let (rows, cols) = (heights.iter().sum(), widths.iter().sum());
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out = out + b.embed(rows, cols, r0, c0);
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(out)
    }

    pub fn block_diag(parts: &[AffineExpr]) -> Self {
        let rows = parts.iter().map(|p| p.nrows()).sum();
        let cols = parts.iter().map(|p| p.ncols()).sum();
        let mut out = Self::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for p in parts {
            out = out + p.embed(rows, cols, r0, c0);
            r0 += p.nrows();
            c0 += p.ncols();
        }
        out
    }

    /// Numeric value under `assignment`; panics on a missing variable.
    pub fn eval(&self, assignment: &Assignment) -> Mat {
        self.try_eval(assignment).expect("variable missing from assignment")
    }

    pub fn try_eval(&self, assignment: &Assignment) -> Result<Mat> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let value = assignment
                .get(t.var())
                .ok_or_else(|| Error::UnknownVariable(format!("#{}", t.var().0)))?;
            match t {
                Term::Scalar { coef, .. } => out += coef * value[(0, 0)],
                Term::Matrix { left, right, .. } => out += left * value * right,
            }
        }
        Ok(out)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "adding expressions of different shape");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1.0
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(mut self, s: f64) -> AffineExpr {
        self.constant *= s;
        for t in &mut self.terms {
            match t {
                Term::Scalar { coef, .. } => *coef *= s,
                Term::Matrix { left, .. } => *left *= s,
            }
        }
        self
    }
}
