//! Direct numeric evaluation of the dissipation inequalities in their
//! original (non-Schur) form. Used to cross-check the affine builders and to
//! re-substitute stored certificates.

use crate::linalg::{block_diag, eye, vstack, zeros, Mat};
use crate::system::AugmentedPlant;

use super::assemble::outer_rows;

/// `(·)^T diag(-rho P, P, M, -mu I) F7`.
pub fn dissipation(aug: &AugmentedPlant, p: &Mat, m: &Mat, mu: f64, rho: f64) -> Mat {
    let f = outer_rows(aug);
    let outer = vstack(&[&f.current, &f.next, &f.filter_out, &f.dist]);
    let inner = block_diag(&[&(p * -rho), p, m, &(eye(aug.nw()) * -mu)]);
    outer.transpose() * inner * outer
}

/// The output inequality with its `rho / (gamma (1 - rho))` weight, as
/// written before linearisation.
pub fn output(aug: &AugmentedPlant, p: &Mat, x: &Mat, m: &Mat, gamma: f64, mu: f64, rho: f64) -> Mat {
    let f = outer_rows(aug);
    let outer = vstack(&[&f.current, &f.next, &f.filter_out, &f.perf, &f.dist]);
    let npsi = aug.npsi();
    let mut xt = zeros(aug.nchi(), aug.nchi());
    xt.view_mut((0, 0), (npsi, npsi)).copy_from(x);
    let inner = block_diag(&[
        &(p * -rho),
        &xt,
        m,
        &(eye(aug.nz()) * (rho / (gamma * (1.0 - rho)))),
        &(eye(aug.nw()) * (-rho * (gamma - mu) / (1.0 - rho))),
    ]);
    outer.transpose() * inner * outer
}

/// Output inequality for pointwise multipliers (independent `M2`, no
/// terminal cost, no state-update row).
pub fn pointwise_output(aug: &AugmentedPlant, p: &Mat, m2: &Mat, gamma: f64, mu: f64, rho: f64) -> Mat {
    let f = outer_rows(aug);
    let outer = vstack(&[&f.current, &f.filter_out, &f.perf, &f.dist]);
    let inner = block_diag(&[
        &(p * -rho),
        m2,
        &(eye(aug.nz()) * (rho / (gamma * (1.0 - rho)))),
        &(eye(aug.nw()) * (-rho * (gamma - mu) / (1.0 - rho))),
    ]);
    outer.transpose() * inner * outer
}
