#![allow(dead_code)]

use std::path::PathBuf;

use iqc_peak::analysis::{build_class, ClassChoice, GainCertificate, SearchGrid, Variant};
use iqc_peak::io::{Problem, ProblemFile};
use iqc_peak::iqc::MultiplierClass;
use iqc_peak::linalg::{eye, hstack, zeros, Mat, Vector};
use iqc_peak::lmi::{output_schur_expr, pointwise_output_schur_expr, AffineExpr, Assignment};
use iqc_peak::system::{augment, AugmentedPlant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn problem_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("problems").join(format!("{name}.json"))
}

pub fn load(name: &str) -> Problem {
    let (file, _) = ProblemFile::load(&problem_path(name), true).unwrap();
    file.build().unwrap()
}

/// Problem with both grids collapsed to single points.
pub fn pinned(name: &str, rho: f64, lambda: Option<f64>) -> Problem {
    let mut p = load(name);
    p.options.rho_grid = Some(rho.to_string());
    if let Some(l) = lambda {
        p.options.lambda_grid = Some(l.to_string());
    }
    p
}

pub fn fixed(v: f64) -> SearchGrid {
    SearchGrid::fixed(v)
}

/// Multiplier class and augmented plant a gain certificate was solved on.
pub fn rebuild(problem: &Problem, class: ClassChoice, lambda: Option<f64>, nu: Option<usize>) -> (MultiplierClass, AugmentedPlant) {
    let mc = build_class(&problem.spec, class, lambda, nu.unwrap_or(2)).unwrap();
    let aug = augment(&problem.plant, mc.filter()).unwrap();
    (mc, aug)
}

pub fn gain_rebuild(problem: &Problem, cert: &GainCertificate) -> (MultiplierClass, AugmentedPlant) {
    rebuild(problem, cert.class, cert.lambda, cert.nu)
}

pub fn max_eig(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().max()
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale);
    (&a + a.transpose()) * 0.5
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Convex weights with a uniform distribution on the simplex.
pub fn simplex_weights(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| -rng.gen_range(1e-12f64..1.0).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Row factors over `(chi, p, w)` written out from the augmented matrices.
pub struct Rows {
    pub cur: Mat,
    pub next: Mat,
    pub next_psi: Mat,
    pub s: Mat,
    pub z: Mat,
    pub w: Mat,
}

pub fn rows(aug: &AugmentedPlant) -> Rows {
    let (n, np, nw) = (aug.nchi(), aug.np(), aug.nw());
    let next = hstack(&[&aug.a, &aug.bp, &aug.bw]);
    Rows {
        cur: hstack(&[&eye(n), &zeros(n, np + nw)]),
        next_psi: next.rows(0, aug.npsi()).into_owned(),
        next,
        s: hstack(&[&aug.cs, &aug.dsp, &aug.dsw]),
        z: hstack(&[&aug.cz, &aug.dzp, &aug.dzw]),
        w: hstack(&[&zeros(nw, n + np), &eye(nw)]),
    }
}

/// Output inequality with the `1/gamma` term kept as is.
pub fn nonlinear_output(aug: &AugmentedPlant, p: &Mat, x: Option<&Mat>, m: &Mat, gamma: f64, mu: f64, rho: f64) -> Mat {
    let r = rows(aug);
    let mut out = -(r.cur.transpose() * p * &r.cur) * rho + r.s.transpose() * m * &r.s
        + r.z.transpose() * &r.z * (rho / (gamma * (1.0 - rho)))
        - r.w.transpose() * &r.w * (rho * (gamma - mu) / (1.0 - rho));
    if let Some(x) = x {
        out += r.next_psi.transpose() * x * &r.next_psi;
    }
    out
}

pub fn nonlinear_dissipation(aug: &AugmentedPlant, p: &Mat, m: &Mat, mu: f64, rho: f64) -> Mat {
    let r = rows(aug);
    -(r.cur.transpose() * p * &r.cur) * rho + r.next.transpose() * p * &r.next + r.s.transpose() * m * &r.s
        - r.w.transpose() * &r.w * mu
}

pub fn c(m: &Mat) -> AffineExpr {
    AffineExpr::constant(m.clone())
}

pub fn s(v: f64) -> AffineExpr {
    AffineExpr::constant(Mat::from_element(1, 1, v))
}

pub fn schur(aug: &AugmentedPlant, p: &Mat, x: Option<&Mat>, m: &Mat, gamma: f64, mu: f64, rho: f64) -> Mat {
    let e = match x {
        Some(x) => output_schur_expr(aug, &c(p), &c(x), &c(m), &s(gamma), &s(mu), rho),
        None => pointwise_output_schur_expr(aug, &c(p), &c(m), &s(gamma), &s(mu), rho),
    };
    e.unwrap().eval(&Assignment::new())
}


#[derive(Debug, Default)]
pub struct Agreement {
    pub feasible: usize,
    pub infeasible: usize,
    pub disagreements: usize,
}

/// Compares the sign of the written-out output inequality with the emitted
/// Schur form at `points` random perturbations of a gain certificate.
pub fn schur_agreement(problem: &Problem, cert: &GainCertificate, points: usize, seed: u64) -> Agreement {
    let (mc, aug) = gain_rebuild(problem, cert);
    let (m, x) = mc.multiplier_values(cert.rho, &cert.values, "").unwrap();
    let p = cert.value("P").unwrap();
    let (m_out, x_out) = match cert.variant {
        Variant::TerminalCost => (m.clone(), Some(x.clone())),
        Variant::SplitMultiplier if cert.tie_multipliers => (m.clone(), None),
        Variant::SplitMultiplier => (mc.multiplier_values(cert.rho, &cert.values, "2").unwrap().0, None),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Agreement::default();
    for i in 0..points {
        let eps = 10f64.powf(rng.gen_range(-6.0..-1.0));
        // odd points only raise gamma, which moves towards the interior
        let k = if i % 2 == 0 { eps } else { 0.0 };
        let pp = p + random_sym(&mut rng, p.nrows(), k * p.amax());
        let mp = &m_out + random_sym(&mut rng, m_out.nrows(), k * m_out.amax().max(1.0));
        let xp = x_out.as_ref().map(|x| x + random_sym(&mut rng, x.nrows(), k * x.amax().max(1.0)));
        let gamma = if i % 2 == 0 { cert.gamma * (1.0 + eps * rng.gen_range(-1.0..1.0)) } else { cert.gamma * (1.0 + eps) };
        let mu = cert.mu * (1.0 + k * rng.gen_range(-1.0..1.0));
        let a = max_eig(&nonlinear_output(&aug, &pp, xp.as_ref(), &mp, gamma, mu, cert.rho));
        let b = max_eig(&schur(&aug, &pp, xp.as_ref(), &mp, gamma, mu, cert.rho));
        if (a <= 0.0) != (b <= 0.0) {
            out.disagreements += 1;
        }
        if a <= 0.0 {
            out.feasible += 1;
        } else {
            out.infeasible += 1;
        }
    }
    out
}
