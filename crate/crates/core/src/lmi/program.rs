use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sym_eig_range, Mat};

use super::expr::{AffineExpr, Assignment, MatrixVariable, Scaling, VarId, VarShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    /// `expr ⪯ 0`
    NegSemidef,
    /// `expr ⪰ 0`
    PosSemidef,
    /// `expr = 0`
    Zero,
}

#[derive(Clone, Debug)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineExpr,
    pub sense: Sense,
}

impl LmiConstraint {
    pub fn order(&self) -> usize {
        self.expr.nrows()
    }

    /// Signed slack at `assignment`: nonnegative iff the constraint holds.
    /// For semidefinite senses this is the extreme eigenvalue with the
    /// correct sign; for equalities the negated max absolute entry.
    pub fn slack(&self, assignment: &Assignment) -> Result<f64> {
        let v = self.expr.try_eval(assignment)?;
        Ok(match self.sense {
            Sense::PosSemidef => sym_eig_range(&v).0,
            Sense::NegSemidef => -sym_eig_range(&v).1,
            Sense::Zero => -max_abs(&v),
        })
    }

    /// Largest absolute entry at `assignment`, used to scale tolerances.
    pub fn magnitude(&self, assignment: &Assignment) -> Result<f64> {
        Ok(max_abs(&self.expr.try_eval(assignment)?))
    }
}

/// `exp(t) <= z` with scalar affine `t` and `z`.
#[derive(Clone, Debug)]
pub struct ExpConeConstraint {
    pub name: String,
    pub t: AffineExpr,
    pub z: AffineExpr,
}

/// Linear-objective conic program over symmetric and scalar variables.
#[derive(Clone, Debug)]
pub struct SdpProgram {
    variables: Vec<MatrixVariable>,
    by_name: HashMap<String, VarId>,
    constraints: Vec<LmiConstraint>,
    exp_cones: Vec<ExpConeConstraint>,
    objective: AffineExpr,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    scale: f64,
}

impl Default for SdpProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProgram {
    pub fn new() -> Self {
        Self {
            variables: Vec::new(),
            by_name: HashMap::new(),
            constraints: Vec::new(),
            exp_cones: Vec::new(),
            objective: AffineExpr::zeros(1, 1),
            rho: None,
            lambda: None,
            scale: 1.0,
        }
    }

    fn declare(&mut self, name: &str, shape: VarShape, scaling: Scaling) -> Result<MatrixVariable> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateVariable(name.to_string()));
        }
        let v = MatrixVariable { id: VarId(self.variables.len()), name: name.to_string(), shape, scaling };
        self.by_name.insert(name.to_string(), v.id);
        self.variables.push(v.clone());
        Ok(v)
    }

    pub fn declare_symmetric(&mut self, name: &str, n: usize) -> Result<MatrixVariable> {
        self.declare(name, VarShape::Symmetric(n), Scaling::Homogeneous)
    }

    pub fn declare_scalar(&mut self, name: &str) -> Result<MatrixVariable> {
        self.declare(name, VarShape::Scalar, Scaling::Homogeneous)
    }

    /// Scalar that shifts (instead of scales) under [`SdpProgram::rescaled`].
    pub fn declare_log_scalar(&mut self, name: &str) -> Result<MatrixVariable> {
        self.declare(name, VarShape::Scalar, Scaling::Logarithmic)
    }

    fn check_refs(&self, expr: &AffineExpr) -> Result<()> {
        for v in expr.variables() {
            if v.0 >= self.variables.len() {
                return Err(Error::UnknownVariable(format!("#{}", v.0)));
            }
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, name: &str, expr: AffineExpr, sense: Sense) -> Result<()> {
        if expr.nrows() != expr.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "constraint `{name}` is {}x{}, expected square",
                expr.nrows(),
                expr.ncols()
            )));
        }
        self.check_refs(&expr)?;
        self.constraints.push(LmiConstraint { name: name.to_string(), expr, sense });
        Ok(())
    }

    pub fn add_exp_cone(&mut self, name: &str, t: AffineExpr, z: AffineExpr) -> Result<()> {
        if t.shape() != (1, 1) || z.shape() != (1, 1) {
            return Err(Error::ShapeMismatch("exponential cone arguments must be scalars".into()));
        }
        self.check_refs(&t)?;
        self.check_refs(&z)?;
        self.exp_cones.push(ExpConeConstraint { name: name.to_string(), t, z });
        Ok(())
    }

    pub fn minimize(&mut self, objective: AffineExpr) -> Result<()> {
        if objective.shape() != (1, 1) {
            return Err(Error::ShapeMismatch("objective must be scalar".into()));
        }
        self.check_refs(&objective)?;
        self.objective = objective;
        Ok(())
    }

    pub fn variables(&self) -> &[MatrixVariable] {
        &self.variables
    }
    pub fn variable(&self, name: &str) -> Option<&MatrixVariable> {
        self.by_name.get(name).map(|id| &self.variables[id.0])
    }
    pub fn variable_by_id(&self, id: VarId) -> &MatrixVariable {
        &self.variables[id.0]
    }
    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }
    pub fn exp_cones(&self) -> &[ExpConeConstraint] {
        &self.exp_cones
    }
    pub fn objective(&self) -> &AffineExpr {
        &self.objective
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Substitutes every homogeneous variable `v = v_hat / scale` and
    /// multiplies each constraint through by `scale`, i.e. all constant
    /// terms are multiplied by `scale`. The feasible set in the original
    /// variables is unchanged; decoded solutions are mapped back.
    pub fn rescaled(&self, scale: f64) -> Result<SdpProgram> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let mut out = self.clone();
        out.scale = self.scale * scale;
        Ok(out)
    }

    /// Assignment keyed by variable name, e.g. from a stored certificate.
    pub fn assignment_from_named(&self, values: &std::collections::BTreeMap<String, Mat>) -> Result<Assignment> {
        let mut a = Assignment::new();
        for v in &self.variables {
            let m = values.get(&v.name).ok_or_else(|| Error::UnknownVariable(v.name.clone()))?;
            let n = v.shape.dim();
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch { block: v.name.clone(), expected: (n, n), found: m.shape() });
            }
            a.set(v.id, m.clone());
        }
        Ok(a)
    }

    pub fn named_values(&self, a: &Assignment) -> std::collections::BTreeMap<String, Mat> {
        self.variables
            .iter()
            .filter_map(|v| a.get(v.id).map(|m| (v.name.clone(), m.clone())))
            .collect()
    }

    /// Minimum slack over every constraint, together with the offending
    /// constraint name. Slack is normalised by `1 + magnitude`.
    pub fn worst_slack(&self, a: &Assignment) -> Result<Option<(String, f64)>> {
        let mut worst: Option<(String, f64)> = None;
        for c in &self.constraints {
            let s = c.slack(a)? / (1.0 + c.magnitude(a)?);
            if worst.as_ref().map_or(true, |(_, w)| s < *w) {
                worst = Some((c.name.clone(), s));
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eye;

    #[test]
    fn duplicate_declaration_is_error() {
        let mut p = SdpProgram::new();
        p.declare_symmetric("P", 2).unwrap();
        assert_eq!(p.declare_scalar("P").unwrap_err(), Error::DuplicateVariable("P".into()));
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut other = SdpProgram::new();
        other.declare_scalar("a").unwrap();
        let b = other.declare_scalar("b").unwrap();
        let mut p = SdpProgram::new();
        p.declare_scalar("x").unwrap();
        let e = AffineExpr::var(&b);
        assert!(matches!(p.add_constraint("c", e, Sense::PosSemidef), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn slack_signs() {
        let mut p = SdpProgram::new();
        let v = p.declare_symmetric("P", 2).unwrap();
        p.add_constraint("psd", AffineExpr::var(&v) - AffineExpr::constant(eye(2)), Sense::PosSemidef).unwrap();
        let mut a = Assignment::new();
        a.set(v.id, eye(2) * 3.0);
        assert!((p.constraints()[0].slack(&a).unwrap() - 2.0).abs() < 1e-12);
        a.set(v.id, eye(2) * 0.5);
        assert!(p.constraints()[0].slack(&a).unwrap() < 0.0);
    }

    #[test]
    fn non_square_constraint_rejected() {
        let mut p = SdpProgram::new();
        p.declare_scalar("x").unwrap();
        assert!(p.add_constraint("bad", AffineExpr::zeros(2, 3), Sense::Zero).is_err());
    }
}
