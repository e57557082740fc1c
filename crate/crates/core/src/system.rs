//! State-space containers: the uncertain plant, IQC filters, the scalar basis
//! block used to build dynamic filters, and the plant/filter series
//! interconnection with stacked state `chi = (psi, x)`.

use crate::error::{Error, Result};
use crate::linalg::{block, eye, hstack, kron, spectral_radius, vstack, zeros, Mat, Vector};

/// Filters must satisfy `spectral_radius(A) < 1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantDims {
    pub nx: usize,
    pub np: usize,
    pub nq: usize,
    pub nw: usize,
    pub nz: usize,
}

/// Raw plant blocks prior to validation.
#[derive(Clone, Debug)]
pub struct PlantBlocks {
    pub a: Mat,
    pub bp: Mat,
    pub bw: Mat,
    pub cq: Mat,
    pub dqp: Mat,
    pub dqw: Mat,
    pub cz: Mat,
    pub dzp: Mat,
    pub dzw: Mat,
}

impl PlantBlocks {
    pub fn zeros(d: PlantDims) -> Self {
        Self {
            a: zeros(d.nx, d.nx),
            bp: zeros(d.nx, d.np),
            bw: zeros(d.nx, d.nw),
            cq: zeros(d.nq, d.nx),
            dqp: zeros(d.nq, d.np),
            dqw: zeros(d.nq, d.nw),
            cz: zeros(d.nz, d.nx),
            dzp: zeros(d.nz, d.np),
            dzw: zeros(d.nz, d.nw),
        }
    }
}

/// Plant with uncertainty channel `p -> q` and performance channel `w -> z`,
/// always started from the zero state.
#[derive(Clone, Debug)]
pub struct Plant {
    blocks: PlantBlocks,
    dims: PlantDims,
}

fn check_shape(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch {
            block: name.to_string(),
            expected: (rows, cols),
            found: m.shape(),
        });
    }
    Ok(())
}

pub fn make_plant(blocks: PlantBlocks, dims: PlantDims) -> Result<Plant> {
    let PlantDims { nx, np, nq, nw, nz } = dims;
    check_shape("A", &blocks.a, nx, nx)?;
    check_shape("Bp", &blocks.bp, nx, np)?;
    check_shape("Bw", &blocks.bw, nx, nw)?;
    check_shape("Cq", &blocks.cq, nq, nx)?;
    check_shape("Dqp", &blocks.dqp, nq, np)?;
    check_shape("Dqw", &blocks.dqw, nq, nw)?;
    check_shape("Cz", &blocks.cz, nz, nx)?;
    check_shape("Dzp", &blocks.dzp, nz, np)?;
    check_shape("Dzw", &blocks.dzw, nz, nw)?;
    if blocks.a.iter().chain(blocks.bw.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("plant contains non-finite entries".into()));
    }
    Ok(Plant { blocks, dims })
}

impl Plant {
    pub fn dims(&self) -> PlantDims {
        self.dims
    }
    pub fn blocks(&self) -> &PlantBlocks {
        &self.blocks
    }
    pub fn a(&self) -> &Mat {
        &self.blocks.a
    }
    pub fn bp(&self) -> &Mat {
        &self.blocks.bp
    }
    pub fn bw(&self) -> &Mat {
        &self.blocks.bw
    }
    pub fn cq(&self) -> &Mat {
        &self.blocks.cq
    }
    pub fn dqp(&self) -> &Mat {
        &self.blocks.dqp
    }
    pub fn dqw(&self) -> &Mat {
        &self.blocks.dqw
    }
    pub fn cz(&self) -> &Mat {
        &self.blocks.cz
    }
    pub fn dzp(&self) -> &Mat {
        &self.blocks.dzp
    }
    pub fn dzw(&self) -> &Mat {
        &self.blocks.dzw
    }

    /// Same plant with the performance channel removed (`nz = 0`).
    pub fn without_performance(&self) -> Plant {
        let mut d = self.dims;
        d.nz = 0;
        let mut b = self.blocks.clone();
        b.cz = zeros(0, d.nx);
        b.dzp = zeros(0, d.np);
        b.dzw = zeros(0, d.nw);
        Plant { blocks: b, dims: d }
    }

    /// Same plant with performance output replaced by `z = C x`.
    pub fn with_state_output(&self, c: &Mat) -> Result<Plant> {
        let mut d = self.dims;
        check_shape("Cz", c, c.nrows(), d.nx)?;
        d.nz = c.nrows();
        let mut b = self.blocks.clone();
        b.cz = c.clone();
        b.dzp = zeros(d.nz, d.np);
        b.dzw = zeros(d.nz, d.nw);
        Ok(Plant { blocks: b, dims: d })
    }
}

/// Stable LTI filter driven by `(q, p)` with zero initial state.
#[derive(Clone, Debug)]
pub struct Filter {
    a: Mat,
    bq: Mat,
    bp: Mat,
    c: Mat,
    dq: Mat,
    dp: Mat,
}

impl Filter {
    pub fn new(a: Mat, bq: Mat, bp: Mat, c: Mat, dq: Mat, dp: Mat) -> Result<Self> {
        let n = a.nrows();
        check_shape("Apsi", &a, n, n)?;
        let nq = bq.ncols();
        let np = bp.ncols();
        let ns = c.nrows();
        check_shape("Bpsi_q", &bq, n, nq)?;
        check_shape("Bpsi_p", &bp, n, np)?;
        check_shape("Cpsi_s", &c, ns, n)?;
        check_shape("Dpsi_sq", &dq, ns, nq)?;
        check_shape("Dpsi_sp", &dp, ns, np)?;
        let radius = spectral_radius(&a);
        if radius >= 1.0 - STABILITY_MARGIN {
            return Err(Error::UnstableFilter { radius });
        }
        Ok(Self { a, bq, bp, c, dq, dp })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn bq(&self) -> &Mat {
        &self.bq
    }
    pub fn bp(&self) -> &Mat {
        &self.bp
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn dq(&self) -> &Mat {
        &self.dq
    }
    pub fn dp(&self) -> &Mat {
        &self.dp
    }
    pub fn nstate(&self) -> usize {
        self.a.nrows()
    }
    pub fn nout(&self) -> usize {
        self.c.nrows()
    }
    pub fn nq(&self) -> usize {
        self.bq.ncols()
    }
    pub fn np(&self) -> usize {
        self.bp.ncols()
    }

    /// One step: returns `(psi_next, s)`.
    pub fn step(&self, psi: &Vector, q: &Vector, p: &Vector) -> (Vector, Vector) {
        let next = &self.a * psi + &self.bq * q + &self.bp * p;
        let s = &self.c * psi + &self.dq * q + &self.dp * p;
        (next, s)
    }

    /// Runs the filter from zero. Returns states `psi_0..psi_T` (length T+1)
    /// and outputs `s_0..s_{T-1}`.
    pub fn simulate(&self, q: &[Vector], p: &[Vector]) -> (Vec<Vector>, Vec<Vector>) {
        assert_eq!(q.len(), p.len());
        let mut psi = Vector::zeros(self.nstate());
        let mut states = Vec::with_capacity(q.len() + 1);
        let mut outs = Vec::with_capacity(q.len());
        states.push(psi.clone());
        for (qk, pk) in q.iter().zip(p) {
            let (next, s) = self.step(&psi, qk, pk);
            outs.push(s);
            psi = next;
            states.push(psi.clone());
        }
        (states, outs)
    }
}

/// Scalar-input basis system with a repeated pole `lambda` and order `nu`:
/// `A = lambda I + shift`, `B = e1`, `C = [0; I]`, `D = e1`.
#[derive(Clone, Debug)]
pub struct BasisBlock {
    lambda: f64,
    nu: usize,
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl BasisBlock {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }
    /// State dimension.
    pub fn nphi(&self) -> usize {
        self.nu
    }
    /// Output dimension.
    pub fn nsigma(&self) -> usize {
        self.nu + 1
    }
}

pub fn basis_filter(lambda: f64, nu: usize) -> Result<BasisBlock> {
    if !(lambda.abs() < 1.0) {
        return Err(Error::InvalidPole(lambda));
    }
    if nu < 1 {
        return Err(Error::InvalidOrder(nu));
    }
    let mut a = eye(nu) * lambda;
    for i in 1..nu {
        a[(i, i - 1)] = 1.0;
    }
    let mut b = zeros(nu, 1);
    b[(0, 0)] = 1.0;
    let c = vstack(&[&zeros(1, nu), &eye(nu)]);
    let mut d = zeros(nu + 1, 1);
    d[(0, 0)] = 1.0;
    Ok(BasisBlock { lambda, nu, a, b, c, d })
}

/// `I_{2 nq} (x) Phi`, acting on `q` and `p` through separate copies.
pub fn kron_identity_filter(phi: &BasisBlock, nq: usize) -> Result<Filter> {
    if nq == 0 {
        return Err(Error::InvalidArgument("nq must be at least 1".into()));
    }
    let i = eye(nq);
    let a1 = kron(&i, phi.a());
    let b1 = kron(&i, phi.b());
    let c1 = kron(&i, phi.c());
    let d1 = kron(&i, phi.d());
    let (n1, ns1) = (a1.nrows(), c1.nrows());
    let a = block(&[&[&a1, &zeros(n1, n1)], &[&zeros(n1, n1), &a1]]);
    let bq = vstack(&[&b1, &zeros(n1, nq)]);
    let bp = vstack(&[&zeros(n1, nq), &b1]);
    let c = block(&[&[&c1, &zeros(ns1, n1)], &[&zeros(ns1, n1), &c1]]);
    let dq = vstack(&[&d1, &zeros(ns1, nq)]);
    let dp = vstack(&[&zeros(ns1, nq), &d1]);
    Filter::new(a, bq, bp, c, dq, dp)
}

/// Memoryless pass-through `s = [q; p]`.
pub fn static_identity_filter(nq: usize, np: usize) -> Filter {
    let n = nq + np;
    let dq = vstack(&[&eye(nq), &zeros(np, nq)]);
    let dp = vstack(&[&zeros(nq, np), &eye(np)]);
    Filter::new(zeros(0, 0), zeros(0, nq), zeros(0, np), zeros(n, 0), dq, dp)
        .expect("static filter is always valid")
}

/// Series interconnection of plant and filter with state `chi = (psi, x)`.
#[derive(Clone, Debug)]
pub struct AugmentedPlant {
    pub a: Mat,
    pub bp: Mat,
    pub bw: Mat,
    pub cs: Mat,
    pub dsp: Mat,
    pub dsw: Mat,
    pub cz: Mat,
    pub dzp: Mat,
    pub dzw: Mat,
    npsi: usize,
    nx: usize,
}

impl AugmentedPlant {
    pub fn nchi(&self) -> usize {
        self.npsi + self.nx
    }
    pub fn npsi(&self) -> usize {
        self.npsi
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn np(&self) -> usize {
        self.bp.ncols()
    }
    pub fn nw(&self) -> usize {
        self.bw.ncols()
    }
    pub fn ns(&self) -> usize {
        self.cs.nrows()
    }
    pub fn nz(&self) -> usize {
        self.cz.nrows()
    }
    /// Index range of the filter state inside `chi`.
    pub fn psi_range(&self) -> std::ops::Range<usize> {
        0..self.npsi
    }
    pub fn x_range(&self) -> std::ops::Range<usize> {
        self.npsi..self.npsi + self.nx
    }

    /// Runs the augmented system from zero on given `(p, w)`; returns
    /// `(chi_0..chi_T, s, z)`.
    pub fn simulate(&self, p: &[Vector], w: &[Vector]) -> (Vec<Vector>, Vec<Vector>, Vec<Vector>) {
        let mut chi = Vector::zeros(self.nchi());
        let mut states = vec![chi.clone()];
        let mut s = Vec::with_capacity(p.len());
        let mut z = Vec::with_capacity(p.len());
        for (pk, wk) in p.iter().zip(w) {
            s.push(&self.cs * &chi + &self.dsp * pk + &self.dsw * wk);
            z.push(&self.cz * &chi + &self.dzp * pk + &self.dzw * wk);
            chi = &self.a * &chi + &self.bp * pk + &self.bw * wk;
            states.push(chi.clone());
        }
        (states, s, z)
    }
}

pub fn augment(plant: &Plant, filter: &Filter) -> Result<AugmentedPlant> {
    let d = plant.dims();
    if filter.nq() != d.nq {
        return Err(Error::DimensionMismatch {
            block: "Bpsi_q".into(),
            expected: (filter.nstate(), d.nq),
            found: filter.bq().shape(),
        });
    }
    if filter.np() != d.np {
        return Err(Error::DimensionMismatch {
            block: "Bpsi_p".into(),
            expected: (filter.nstate(), d.np),
            found: filter.bp().shape(),
        });
    }
    let npsi = filter.nstate();
    let a = block(&[
        &[filter.a(), &(filter.bq() * plant.cq())],
        &[&zeros(d.nx, npsi), plant.a()],
    ]);
    let bp = vstack(&[&(filter.bp() + filter.bq() * plant.dqp()), plant.bp()]);
    let bw = vstack(&[&(filter.bq() * plant.dqw()), plant.bw()]);
    let cs = hstack(&[filter.c(), &(filter.dq() * plant.cq())]);
    let dsp = filter.dp() + filter.dq() * plant.dqp();
    let dsw = filter.dq() * plant.dqw();
    let cz = hstack(&[&zeros(d.nz, npsi), plant.cz()]);
    Ok(AugmentedPlant {
        a,
        bp,
        bw,
        cs,
        dsp,
        dsw,
        cz,
        dzp: plant.dzp().clone(),
        dzw: plant.dzw().clone(),
        npsi,
        nx: d.nx,
    })
}
