//! Symbolic LMI layer: decision variables, affine matrix expressions,
//! constraints, programs, and the assembly of the analysis inequalities.

mod assemble;
pub mod dense;
mod expr;
mod program;

pub use assemble::{
    build_pointwise_output_schur, build_dissipation, build_output_schur, build_reach_program, pointwise_output_schur_expr, dissipation_expr,
    output_schur_expr, scalar_expr_times, ReachProgram, ShapeMode, GAMMA_FLOOR, STRICT_MARGIN,
};
pub use expr::{AffineExpr, Assignment, MatrixVariable, Scaling, VarId, VarShape};
pub use program::{ExpConeConstraint, LmiConstraint, SdpProgram, Sense};

pub(crate) use expr::Term;
