//! Time-domain verification of certificates: interconnection simulation,
//! worst-case disturbance search, IQC residuals, dissipation along
//! trajectories and Monte-Carlo soundness suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqc::{combine_vertices, dirichlet_weights, UncertaintyKind, UncertaintySpec};
use crate::linalg::{condition_number, eye, quad, spectral_radius, Mat, Vector};
use crate::system::{AugmentedPlant, Filter, Plant};

/// Largest condition number of `I - Delta Dqp` accepted by [`simulate`].
pub const ILL_POSED_CONDITION: f64 = 1e8;

/// A concrete uncertainty along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRealization {
    /// `p = 0`.
    Zero,
    /// `p_k = diag(delta) q_k`.
    Constant(Vec<f64>),
    /// `p_k = diag(delta_k) q_k`, repeated periodically past its length.
    Schedule(Vec<Vec<f64>>),
    /// `p_k = Delta_k q_k`, repeated periodically past its length.
    Gains(#[serde(serialize_with = "gain_list::serialize", deserialize_with = "gain_list::deserialize")] Vec<Mat>),
}

mod gain_list {
    use crate::linalg::{serde_mat, Mat};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(serde_mat::to_rows).collect::<Vec<_>>().serialize(s)
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let raw = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        raw.iter().map(|m| serde_mat::from_rows(m).map_err(D::Error::custom)).collect()
    }
}

impl DeltaRealization {
    /// `Delta_k` as an `np x nq` matrix.
    pub fn at(&self, k: usize, np: usize, nq: usize) -> Mat {
        match self {
            DeltaRealization::Zero => Mat::zeros(np, nq),
            DeltaRealization::Constant(d) => diag_rect(d, np, nq),
            DeltaRealization::Schedule(s) if s.is_empty() => Mat::zeros(np, nq),
            DeltaRealization::Schedule(s) => diag_rect(&s[k % s.len()], np, nq),
            DeltaRealization::Gains(g) if g.is_empty() => Mat::zeros(np, nq),
            DeltaRealization::Gains(g) => g[k % g.len()].clone(),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            DeltaRealization::Zero | DeltaRealization::Constant(_) => true,
            DeltaRealization::Schedule(s) => s.len() <= 1,
            DeltaRealization::Gains(g) => g.len() <= 1,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DeltaRealization::Zero => "zero".into(),
            DeltaRealization::Constant(d) => format!("constant {d:?}"),
            DeltaRealization::Schedule(s) => format!("schedule of {} steps", s.len()),
            DeltaRealization::Gains(g) => format!("gain sequence of {} steps", g.len()),
        }
    }

    /// Distance outside the admissible set (0 when admissible).
    pub fn excess(&self, spec: &UncertaintySpec) -> f64 {
        match self {
            DeltaRealization::Zero => 0.0,
            DeltaRealization::Constant(d) => hull_excess(spec, d),
            DeltaRealization::Schedule(s) => s.iter().map(|d| hull_excess(spec, d)).fold(0.0, f64::max),
            DeltaRealization::Gains(g) => g
                .iter()
                .map(|m| (m.clone().svd(false, false).singular_values.max() - 1.0).max(0.0))
                .fold(0.0, f64::max),
        }
    }
}

fn diag_rect(d: &[f64], np: usize, nq: usize) -> Mat {
    let mut m = Mat::zeros(np, nq);
    for (i, v) in d.iter().enumerate().take(np.min(nq)) {
        m[(i, i)] = *v;
    }
    m
}

/// Box excess for polytopes given as boxes, otherwise a coarse
/// bounding-box check.
fn hull_excess(spec: &UncertaintySpec, d: &[f64]) -> f64 {
    let vs = spec.vertices();
    if vs.is_empty() {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for (i, v) in d.iter().enumerate() {
        let lo = vs.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min);
        let hi = vs.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(lo - v).max(v - hi);
    }
    worst
}

/// Signals of one closed-loop run. `x` and `psi` have `T + 1` entries, the
/// others `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<Vector>,
    pub psi: Vec<Vector>,
    pub q: Vec<Vector>,
    pub p: Vec<Vector>,
    pub w: Vec<Vector>,
    pub z: Vec<Vector>,
    pub s: Vec<Vector>,
    pub delta: String,
    pub seed: Option<u64>,
}

pub fn peak(v: &[Vector]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

impl Trajectory {
    /// `||z||_peak / ||w||_peak` (0 for a zero disturbance).
    pub fn ratio(&self) -> f64 {
        let wp = peak(&self.w);
        if wp == 0.0 {
            0.0
        } else {
            peak(&self.z) / wp
        }
    }
}

/// Solves `p = Delta (Cq x + Dqp p + Dqw w)` for `p`.
fn loop_gain(plant: &Plant, delta: &Mat, step: usize) -> Result<Mat> {
    let np = plant.dims().np;
    if np == 0 {
        return Ok(Mat::zeros(0, plant.dims().nq));
    }
    let m = eye(np) - delta * plant.dqp();
    let cond = condition_number(&m);
    if !(cond <= ILL_POSED_CONDITION) {
        return Err(Error::IllPosed { step, condition: cond });
    }
    let inv = m.try_inverse().ok_or(Error::IllPosed { step, condition: f64::INFINITY })?;
    Ok(inv * delta)
}

/// Closed-loop recursion from `x_0 = 0` (and `psi_0 = 0`) over `w.len()`
/// steps.
pub fn simulate(plant: &Plant, filter: Option<&Filter>, delta: &DeltaRealization, w: &[Vector]) -> Result<Trajectory> {
    let d = plant.dims();
    let t_len = w.len();
    let mut x = Vec::with_capacity(t_len + 1);
    x.push(Vector::zeros(d.nx));
    let (mut q, mut p, mut z) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    let mut cached: Option<Mat> = None;
    for (k, wk) in w.iter().enumerate() {
        if wk.len() != d.nw {
            return Err(Error::DimensionMismatch { block: "w".into(), expected: (d.nw, 1), found: (wk.len(), 1) });
        }
        let gain = match &cached {
            Some(g) => g.clone(),
            None => {
                let g = loop_gain(plant, &delta.at(k, d.np, d.nq), k)?;
                if delta.is_constant() {
                    cached = Some(g.clone());
                }
                g
            }
        };
        let xk = &x[k];
        let pk = &gain * (plant.cq() * xk + plant.dqw() * wk);
        let qk = plant.cq() * xk + plant.dqp() * &pk + plant.dqw() * wk;
        z.push(plant.cz() * xk + plant.dzp() * &pk + plant.dzw() * wk);
        x.push(plant.a() * xk + plant.bp() * &pk + plant.bw() * wk);
        q.push(qk);
        p.push(pk);
    }
    let (psi, s) = match filter {
        Some(f) => f.simulate(&q, &p),
        None => (Vec::new(), Vec::new()),
    };
    Ok(Trajectory { x, psi, q, p, w: w.to_vec(), z, s, delta: delta.describe(), seed: None })
}

/// Largest spectral radius of the loop closed with each vertex of the
/// uncertainty set (with `Delta = 0` when there are no vertices). A value
/// `>= 1` means some admissible constant `Delta` destabilises the plant.
pub fn vertex_spectral_radius(plant: &Plant, spec: &UncertaintySpec) -> Result<f64> {
    let d = plant.dims();
    let deltas: Vec<Mat> = if spec.vertices().is_empty() {
        vec![Mat::zeros(d.np, d.nq)]
    } else {
        spec.vertices().iter().map(|v| DeltaRealization::Constant(v.iter().copied().collect()).at(0, d.np, d.nq)).collect()
    };
    let mut worst: f64 = 0.0;
    for delta in &deltas {
        worst = worst.max(spectral_radius(&close_loop(plant, delta)?.a));
    }
    Ok(worst)
}

/// State-space matrices of the loop closed with a fixed `Delta`.
#[derive(Clone, Debug)]
struct ClosedLoop {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

fn close_loop(plant: &Plant, delta: &Mat) -> Result<ClosedLoop> {
    let k = loop_gain(plant, delta, 0)?;
    let kq = &k * plant.cq();
    let kw = &k * plant.dqw();
    Ok(ClosedLoop {
        a: plant.a() + plant.bp() * &kq,
        b: plant.bw() + plant.bp() * &kw,
        c: plant.cz() + plant.dzp() * &kq,
        d: plant.dzw() + plant.dzp() * &kw,
    })
}

/// Options of the worst-case disturbance search.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalOptions {
    /// Impulse-response length for fixed `Delta`.
    pub horizon: usize,
    /// Horizon of the time-varying schedule search.
    pub schedule_horizon: usize,
    /// Starting output directions.
    pub directions: usize,
    pub beam_width: usize,
    /// Refinement sweeps over the schedule.
    pub sweeps: usize,
    /// Extra starting point for the parameter search.
    pub initial_guess: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        Self {
            horizon: 200,
            schedule_horizon: 40,
            directions: 16,
            beam_width: 8,
            sweeps: 6,
            initial_guess: None,
            seed: 0,
        }
    }
}

/// Lower bound on the worst-case peak-to-peak gain and the input that
/// attains it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalGain {
    pub lower_bound: f64,
    pub delta: DeltaRealization,
    #[serde(skip)]
    pub w: Vec<Vector>,
}

/// `max_u sum_j ||H_j^T u||` over unit `u`, by fixed-point iteration from
/// several starts. `adjoint[j] = H_j^T` is `nw x nz`.
fn best_direction(adjoint: &[Mat], nz: usize, starts: usize, rng: &mut ChaCha8Rng) -> (f64, Vector) {
    if nz == 0 {
        return (0.0, Vector::zeros(0));
    }
    let value = |u: &Vector| adjoint.iter().map(|h| (h * u).norm()).sum::<f64>();
    let mut cands: Vec<Vector> = Vec::new();
    for i in 0..starts.max(1) {
        let u = if nz == 2 {
            let th = std::f64::consts::PI * i as f64 / starts.max(1) as f64;
            Vector::from_vec(vec![th.cos(), th.sin()])
        } else if i < nz {
            let mut e = Vector::zeros(nz);
            e[i] = 1.0;
            e
        } else {
            Vector::from_fn(nz, |_, _| StandardNormal.sample(rng))
        };
        cands.push(u.normalize());
    }
    let mut best = (f64::NEG_INFINITY, cands[0].clone());
    for mut u in cands {
        let mut v = value(&u);
        for _ in 0..200 {
            let mut next = Vector::zeros(nz);
            for h in adjoint {
                let g = h * &u;
                let n = g.norm();
                if n > 0.0 {
                    next += h.transpose() * (g / n);
                }
            }
            let n = next.norm();
            if n == 0.0 {
                break;
            }
            let cand = next / n;
            let cv = value(&cand);
            let done = cv <= v * (1.0 + 1e-13);
            if cv >= v {
                u = cand;
                v = cv;
            }
            if done {
                break;
            }
        }
        if v > best.0 {
            best = (v, u);
        }
    }
    best
}

/// Disturbance aligned with `adjoint[j] u` so that `z` at the last step
/// reaches the summed bound. Returns `w_0 .. w_{len-1}`.
fn aligned_disturbance(adjoint: &[Mat], u: &Vector, nw: usize) -> Vec<Vector> {
    let len = adjoint.len();
    (0..len)
        .map(|k| {
            // w_k feeds z_{len-1} through H_{len-1-k}
            let g = &adjoint[len - 1 - k] * u;
            let n = g.norm();
            if n > 0.0 {
                g / n
            } else {
                Vector::zeros(nw)
            }
        })
        .collect()
}

fn impulse_adjoint(cl: &ClosedLoop, len: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(len);
    out.push(cl.d.transpose());
    let mut ab = cl.b.clone();
    for _ in 1..len {
        out.push((&cl.c * &ab).transpose());
        ab = &cl.a * ab;
    }
    out
}

/// Truncated peak-to-peak gain of the loop closed with `delta`.
fn fixed_delta_gain(plant: &Plant, delta: &Mat, opts: &EmpiricalOptions, rng: &mut ChaCha8Rng) -> Option<(f64, Vec<Vector>)> {
    let cl = close_loop(plant, delta).ok()?;
    let adj = impulse_adjoint(&cl, opts.horizon);
    let (v, u) = best_direction(&adj, plant.dims().nz, opts.directions, rng);
    if !v.is_finite() {
        return None;
    }
    Some((v, aligned_disturbance(&adj, &u, plant.dims().nw)))
}

/// Local search over barycentric weights of the vertices (and of the
/// initial guess, which is a point of the hull and so may act as an extra
/// generator).
fn search_constant_delta(plant: &Plant, spec: &UncertaintySpec, opts: &EmpiricalOptions, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let d = plant.dims();
    let mut gens: Vec<Vector> = spec.vertices().to_vec();
    if let Some(g) = &opts.initial_guess {
        gens.push(Vector::from_column_slice(g));
    }
    let m = gens.len();
    let to_delta = |w: &[f64]| -> Vec<f64> {
        gens.iter().zip(w).fold(Vector::zeros(d.nq), |acc, (v, c)| acc + v * *c).iter().copied().collect()
    };
    let short = EmpiricalOptions { horizon: opts.horizon.min(120), directions: 8, ..opts.clone() };
    let eval = |w: &[f64], rng: &mut ChaCha8Rng| {
        fixed_delta_gain(plant, &diag_rect(&to_delta(w), d.np, d.nq), &short, rng).map_or(f64::NEG_INFINITY, |r| r.0)
    };

    let mut starts: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut w = vec![0.0; m];
            w[j] = 1.0;
            w
        })
        .collect();
    starts.push(vec![1.0 / m as f64; m]);
    let mut seeds: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|w| (eval(&w, rng), w)).collect();
    seeds.sort_by(|a, b| b.0.total_cmp(&a.0));
    if let Some(g) = opts.initial_guess.as_ref().map(|_| m - 1) {
        // always refine from the configured guess
        if let Some(pos) = seeds.iter().position(|(_, w)| w[g] == 1.0) {
            let s = seeds.remove(pos);
            seeds.insert(0, s);
        }
    }
    let mut best = (f64::NEG_INFINITY, to_delta(&seeds[0].1));
    for (mut v, mut w) in seeds.into_iter().take(3) {
        let mut step: f64 = 0.25;
        while step > 1e-4 {
            let mut improved = false;
            for i in 0..m {
                for j in 0..m {
                    if i == j || w[j] <= 0.0 {
                        continue;
                    }
                    let mv = step.min(w[j]);
                    let mut c = w.clone();
                    c[i] += mv;
                    c[j] -= mv;
                    let cv = eval(&c, rng);
                    if cv > v {
                        v = cv;
                        w = c;
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        if v > best.0 {
            best = (v, to_delta(&w));
        }
    }
    best
}

/// Candidate parameter values per step for schedule searches.
fn schedule_candidates(spec: &UncertaintySpec, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let vs = spec.vertices();
    let m = vs.len();
    let mut out: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().copied().collect()).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            for t in [0.25, 0.5, 0.75] {
                out.push((&vs[i] * (1.0 - t) + &vs[j] * t).iter().copied().collect());
            }
        }
    }
    out.extend(extra.iter().cloned());
    out
}

/// `sum_k ||B_k^T a_{k+1}||` for the terminal direction `u` along a
/// schedule (entry 0 is the first step).
fn schedule_value(loops: &[&ClosedLoop], u: &Vector) -> f64 {
    let last = loops.len() - 1;
    let mut acc = (loops[last].d.transpose() * u).norm();
    let mut a = loops[last].c.transpose() * u;
    for k in (0..last).rev() {
        acc += (loops[k].b.transpose() * &a).norm();
        a = loops[k].a.transpose() * a;
    }
    acc
}

/// Per-step adjoint gains `H_{T,k}^T` for a schedule, indexed by `k`.
fn schedule_adjoint(loops: &[&ClosedLoop]) -> Vec<Mat> {
    let last = loops.len() - 1;
    let mut out = vec![Mat::zeros(0, 0); loops.len()];
    out[last] = loops[last].d.transpose();
    let mut a = loops[last].c.transpose();
    for k in (0..last).rev() {
        out[k] = loops[k].b.transpose() * &a;
        a = loops[k].a.transpose() * a;
    }
    out
}

fn search_schedule(
    plant: &Plant,
    spec: &UncertaintySpec,
    ti_best: &[f64],
    opts: &EmpiricalOptions,
    rng: &mut ChaCha8Rng,
) -> Option<(f64, Vec<Vec<f64>>, Vec<Vector>)> {
    let d = plant.dims();
    let cands = schedule_candidates(spec, &[ti_best.to_vec()]);
    let loops: Vec<ClosedLoop> = cands
        .iter()
        .map(|c| close_loop(plant, &diag_rect(c, d.np, d.nq)))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    let t_len = opts.schedule_horizon.max(2);
    let ti_idx = cands.len() - 1;
    let build = |idx: &[usize]| idx.iter().map(|&i| &loops[i]).collect::<Vec<_>>();

    let mut starts: Vec<Vec<usize>> = vec![vec![ti_idx; t_len]];

    // beam search backwards from the output time for each direction
    let dirs: Vec<Vector> = {
        let adj = impulse_adjoint(&loops[ti_idx], t_len);
        let (_, u0) = best_direction(&adj, d.nz, opts.directions, rng);
        let mut v = vec![u0];
        if d.nz == 2 {
            for i in 0..4 {
                let th = std::f64::consts::PI * i as f64 / 4.0;
                v.push(Vector::from_vec(vec![th.cos(), th.sin()]));
            }
        }
        v
    };
    for u in &dirs {
        // state: (accumulated, adjoint vector, schedule reversed)
        let mut beam: Vec<(f64, Vector, Vec<usize>)> = (0..cands.len())
            .map(|i| ((loops[i].d.transpose() * u).norm(), loops[i].c.transpose() * u, vec![i]))
            .collect();
        for _ in 1..t_len {
            let mut next: Vec<(f64, Vector, Vec<usize>)> = Vec::with_capacity(beam.len() * cands.len());
            for (acc, a, sched) in &beam {
                for (i, l) in loops.iter().enumerate() {
                    let mut s = sched.clone();
                    s.push(i);
                    next.push((acc + (l.b.transpose() * a).norm(), l.a.transpose() * a, s));
                }
            }
            // rank by accumulated value plus the remaining adjoint size
            next.sort_by(|x, y| (y.0 + y.1.norm()).total_cmp(&(x.0 + x.1.norm())));
            next.truncate(opts.beam_width.max(1));
            beam = next;
        }
        for (_, _, mut s) in beam.into_iter().take(2) {
            s.reverse();
            starts.push(s);
        }
    }

    let mut best: Option<(f64, Vec<usize>, Vector)> = None;
    for mut idx in starts {
        let mut u = {
            let adj = schedule_adjoint(&build(&idx));
            best_direction(&adj, d.nz, opts.directions, rng).1
        };
        let mut v = schedule_value(&build(&idx), &u);
        for _ in 0..opts.sweeps {
            let before = v;
            for k in (0..t_len).rev() {
                for c in 0..cands.len() {
                    if c == idx[k] {
                        continue;
                    }
                    let old = idx[k];
                    idx[k] = c;
                    let cv = schedule_value(&build(&idx), &u);
                    if cv > v {
                        v = cv;
                    } else {
                        idx[k] = old;
                    }
                }
            }
            let adj = schedule_adjoint(&build(&idx));
            let (nv, nu) = best_direction(&adj, d.nz, 4, rng);
            if nv > v {
                v = nv;
                u = nu;
            }
            if v <= before * (1.0 + 1e-12) {
                break;
            }
        }
        if best.as_ref().map_or(true, |b| v > b.0) {
            best = Some((v, idx, u));
        }
    }
    let (v, idx, u) = best?;
    let adj = schedule_adjoint(&build(&idx));
    let w = aligned_disturbance_forward(&adj, &u, d.nw);
    Some((v, idx.iter().map(|&i| cands[i].clone()).collect(), w))
}

/// Like [`aligned_disturbance`] for adjoints indexed by input time.
fn aligned_disturbance_forward(adjoint: &[Mat], u: &Vector, nw: usize) -> Vec<Vector> {
    adjoint
        .iter()
        .map(|h| {
            let g = h * u;
            let n = g.norm();
            if n > 0.0 {
                g / n
            } else {
                Vector::zeros(nw)
            }
        })
        .collect()
}

fn random_contraction(rng: &mut ChaCha8Rng, np: usize, nq: usize) -> Mat {
    let m = Mat::from_fn(np, nq, |_, _| StandardNormal.sample(rng));
    let s = m.clone().svd(false, false).singular_values.max();
    if s > 0.0 {
        m / s
    } else {
        m
    }
}

/// Worst-case search. For fixed parameters the disturbance is aligned with
/// the adjoint impulse response; parameters are improved by local search,
/// and for time-varying sets by a schedule search started from the best
/// constant parameter. The returned bound is the simulated ratio of the
/// witness, so it is always a valid lower bound.
pub fn empirical_gain(plant: &Plant, spec: &UncertaintySpec, opts: &EmpiricalOptions) -> Result<EmpiricalGain> {
    let d = plant.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if d.nz == 0 || d.nw == 0 {
        return Ok(EmpiricalGain { lower_bound: 0.0, delta: DeltaRealization::Zero, w: Vec::new() });
    }
    let mut candidates: Vec<(DeltaRealization, Vec<Vector>)> = Vec::new();
    match spec.kind() {
        UncertaintyKind::PolytopicTimeInvariant | UncertaintyKind::PolytopicTimeVarying => {
            let (_, delta) = search_constant_delta(plant, spec, opts, &mut rng);
            if let Some((_, w)) = fixed_delta_gain(plant, &diag_rect(&delta, d.np, d.nq), opts, &mut rng) {
                candidates.push((DeltaRealization::Constant(delta.clone()), w));
            }
            if spec.kind() == UncertaintyKind::PolytopicTimeVarying {
                if let Some((_, sched, w)) = search_schedule(plant, spec, &delta, opts, &mut rng) {
                    candidates.push((DeltaRealization::Schedule(sched), w));
                }
            }
        }
        UncertaintyKind::NormBounded => {
            let mut tries: Vec<Mat> = vec![Mat::zeros(d.np, d.nq)];
            if d.np * d.nq > 0 {
                tries.push(diag_rect(&vec![1.0; d.np.min(d.nq)], d.np, d.nq));
                tries.push(diag_rect(&vec![-1.0; d.np.min(d.nq)], d.np, d.nq));
                for _ in 0..32 {
                    tries.push(random_contraction(&mut rng, d.np, d.nq));
                }
            }
            for delta in tries {
                if let Some((_, w)) = fixed_delta_gain(plant, &delta, opts, &mut rng) {
                    candidates.push((DeltaRealization::Gains(vec![delta]), w));
                }
            }
        }
    }
    if candidates.is_empty() {
        candidates.push((DeltaRealization::Zero, vec![Vector::from_element(d.nw, 1.0)]));
    }
    let mut best: Option<EmpiricalGain> = None;
    for (delta, w) in candidates {
        let traj = match simulate(plant, None, &delta, &w) {
            Ok(t) => t,
            Err(Error::IllPosed { .. }) => continue,
            Err(e) => return Err(e),
        };
        let r = traj.ratio();
        if best.as_ref().map_or(true, |b| r > b.lower_bound) {
            best = Some(EmpiricalGain { lower_bound: r, delta, w });
        }
    }
    Ok(best.unwrap_or(EmpiricalGain { lower_bound: 0.0, delta: DeltaRealization::Zero, w: Vec::new() }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Smallest residual over the horizon (should be `>= 0`).
    pub min: f64,
    /// Largest absolute weighted term, for relative tolerances.
    pub magnitude: f64,
}

/// Minimum over `t` of the filtered quadratic sum
/// `sum_{k<=t} rho^(t-k) s_k^T M s_k + psi_{t+1}^T X psi_{t+1}`, with `p = Delta q`.
/// Without `x` the pointwise minimum `min_k s_k^T M s_k` is returned.
pub fn iqc_residual_check(
    filter: &Filter,
    m: &Mat,
    x: Option<&Mat>,
    rho: f64,
    delta: &DeltaRealization,
    q: &[Vector],
) -> ResidualReport {
    let (np, nq) = (filter.np(), filter.nq());
    let p: Vec<Vector> = q.iter().enumerate().map(|(k, qk)| delta.at(k, np, nq) * qk).collect();
    let (psi, s) = filter.simulate(q, &p);
    let mut min = f64::INFINITY;
    let mut magnitude: f64 = 0.0;
    match x {
        None => {
            for sk in &s {
                let v = quad(m, sk);
                min = min.min(v);
                magnitude = magnitude.max(v.abs());
            }
        }
        Some(x) => {
            let (mut acc, mut abs_acc) = (0.0, 0.0);
            for (k, sk) in s.iter().enumerate() {
                let v = quad(m, sk);
                acc = rho * acc + v;
                abs_acc = rho * abs_acc + v.abs();
                let term = if x.nrows() == 0 { 0.0 } else { quad(x, &psi[k + 1]) };
                min = min.min(acc + term);
                magnitude = magnitude.max(abs_acc + term.abs());
            }
        }
    }
    ResidualReport { min, magnitude }
}

/// Multipliers and scalars of a gain certificate, in numeric form.
#[derive(Clone, Debug)]
pub struct DissipationData<'a> {
    pub p: &'a Mat,
    pub m: &'a Mat,
    /// Terminal cost; `None` selects the pointwise output inequality.
    pub x: Option<&'a Mat>,
    /// Output-inequality multiplier when it differs from `m`.
    pub m2: Option<&'a Mat>,
    pub mu: f64,
    /// `None` checks the storage inequality only (reach certificates).
    pub gamma: Option<f64>,
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    /// Largest value of either per-step inequality (should be `<= 0`).
    pub max_violation: f64,
    /// Largest absolute term, for relative tolerances.
    pub magnitude: f64,
}

/// Evaluates both per-step dissipation inequalities along `traj`, whose
/// plant signals drive the augmented plant `aug`.
pub fn dissipation_check(aug: &AugmentedPlant, data: &DissipationData<'_>, traj: &Trajectory) -> DissipationReport {
    let (chi, s, z) = aug.simulate(&traj.p, &traj.w);
    let psi_r = aug.psi_range();
    let m2 = data.m2.unwrap_or(data.m);
    let c = data.rho / (1.0 - data.rho);
    let mut worst = f64::NEG_INFINITY;
    let mut mag: f64 = 0.0;
    for k in 0..traj.w.len() {
        let vk = quad(data.p, &chi[k]);
        let vn = quad(data.p, &chi[k + 1]);
        let sm = if s[k].len() == 0 { 0.0 } else { quad(data.m, &s[k]) };
        let ww = traj.w[k].norm_squared();
        let d1 = vn - data.rho * vk + sm - data.mu * ww;
        let (term, sm2) = match data.x {
            Some(x) if x.nrows() > 0 => (quad(x, &chi[k + 1].rows(psi_r.start, psi_r.len()).into_owned()), sm),
            Some(_) => (0.0, sm),
            None => (0.0, if s[k].len() == 0 { 0.0 } else { quad(m2, &s[k]) }),
        };
        worst = worst.max(d1);
        mag = mag.max(vk.abs()).max(vn.abs()).max(sm.abs()).max(data.mu * ww);
        if let Some(gamma) = data.gamma {
            let zz = z[k].norm_squared();
            let d2 = -data.rho * vk + term + sm2 + c * zz / gamma - c * (gamma - data.mu) * ww;
            worst = worst.max(d2);
            mag = mag.max(sm2.abs()).max(term.abs()).max(c * zz / gamma).max(c * gamma * ww);
        }
    }
    DissipationReport { max_violation: worst, magnitude: mag }
}

/// Random admissible uncertainty over `len` steps.
pub fn random_delta(spec: &UncertaintySpec, rng: &mut ChaCha8Rng, len: usize) -> DeltaRealization {
    let m = spec.vertices().len();
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        if m > 0 && rng.gen_bool(0.3) {
            spec.vertices()[rng.gen_range(0..m)].iter().copied().collect()
        } else {
            combine_vertices(spec, &dirichlet_weights(rng, m)).iter().copied().collect()
        }
    };
    match spec.kind() {
        UncertaintyKind::PolytopicTimeInvariant => DeltaRealization::Constant(point(rng)),
        UncertaintyKind::PolytopicTimeVarying => {
            // piecewise-constant schedule with random dwell times
            let mut sched = Vec::with_capacity(len);
            while sched.len() < len {
                let v = point(rng);
                let dwell = rng.gen_range(1..=8);
                for _ in 0..dwell {
                    sched.push(v.clone());
                }
            }
            sched.truncate(len);
            DeltaRealization::Schedule(sched)
        }
        UncertaintyKind::NormBounded => {
            let (np, nq) = (spec.np(), spec.nq());
            let gains = (0..len)
                .map(|_| {
                    let r: f64 = if rng.gen_bool(0.5) { 1.0 } else { rng.gen() };
                    random_contraction(rng, np, nq) * r
                })
                .collect();
            DeltaRealization::Gains(gains)
        }
    }
}

/// Random disturbance with `||w_k|| <= w_peak`, alternating between
/// random-direction, bang-bang sign and held patterns.
pub fn random_disturbance(rng: &mut ChaCha8Rng, nw: usize, len: usize, w_peak: f64, mode: usize) -> Vec<Vector> {
    let unit = |rng: &mut ChaCha8Rng| {
        let v = Vector::from_fn(nw, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            v
        }
    };
    let signs = |rng: &mut ChaCha8Rng| {
        Vector::from_fn(nw, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }) / (nw as f64).sqrt()
    };
    let mut out = Vec::with_capacity(len);
    match mode % 3 {
        0 => {
            for _ in 0..len {
                let r: f64 = rng.gen::<f64>().sqrt();
                out.push(unit(rng) * (w_peak * r));
            }
        }
        1 => {
            while out.len() < len {
                let v = signs(rng) * w_peak;
                for _ in 0..rng.gen_range(1..=10) {
                    out.push(v.clone());
                }
            }
        }
        _ => {
            while out.len() < len {
                let v = unit(rng) * w_peak;
                for _ in 0..rng.gen_range(1..=20) {
                    out.push(v.clone());
                }
            }
        }
    }
    out.truncate(len);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub horizon: usize,
    /// Largest observed statistic (gain ratio or ellipsoid value).
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
    pub ill_posed: usize,
    pub seed: u64,
}

/// Simulated `||z||_peak / ||w||_peak` against `gamma (1 + 1e-4)`.
pub fn gain_soundness_check(
    plant: &Plant,
    spec: &UncertaintySpec,
    gamma: f64,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let results: Vec<Result<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let delta = random_delta(spec, &mut rng, horizon);
            let w = random_disturbance(&mut rng, plant.dims().nw, horizon, 1.0, i);
            match simulate(plant, None, &delta, &w) {
                Ok(t) => Ok(Some(t.ratio())),
                Err(Error::IllPosed { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    summarize(results, trials, horizon, gamma * (1.0 + 1e-4), seed)
}

fn summarize(results: Vec<Result<Option<f64>>>, trials: usize, horizon: usize, threshold: f64, seed: u64) -> Result<MonteCarloSummary> {
    let mut worst: f64 = 0.0;
    let mut ill = 0;
    for r in results {
        match r? {
            Some(v) => worst = worst.max(v),
            None => ill += 1,
        }
    }
    Ok(MonteCarloSummary { trials, horizon, worst, threshold, passed: worst <= threshold && ill == 0, ill_posed: ill, seed })
}

/// Largest `x_k^T Qtilde x_k` over random admissible runs with
/// `||w_k|| <= w_peak`; passes when it stays below `1 + 1e-4`.
pub fn reach_containment_check(
    plant: &Plant,
    spec: &UncertaintySpec,
    q_tilde: &Mat,
    w_peak: f64,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    let results: Vec<Result<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64));
            let delta = random_delta(spec, &mut rng, horizon);
            let w = random_disturbance(&mut rng, plant.dims().nw, horizon, w_peak, i);
            match simulate(plant, None, &delta, &w) {
                Ok(t) => Ok(Some(t.x.iter().map(|x| quad(q_tilde, x)).fold(0.0, f64::max))),
                Err(Error::IllPosed { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    summarize(results, trials, horizon, 1.0 + 1e-4, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqc::{class_norm_bounded, class_polytopic_tv};
    use crate::linalg::{from_rows, zeros};
    use crate::system::{make_plant, static_identity_filter, PlantBlocks, PlantDims};

    fn small_plant() -> Plant {
        let d = PlantDims { nx: 2, np: 1, nq: 1, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[0.5, 0.1], &[0.0, 0.3]]);
        b.bp = from_rows(&[&[0.2], &[0.1]]);
        b.bw = from_rows(&[&[1.0], &[0.5]]);
        b.cq = from_rows(&[&[1.0, 0.0]]);
        b.dqp = from_rows(&[&[0.3]]);
        b.cz = from_rows(&[&[0.0, 1.0]]);
        b.dzw = from_rows(&[&[0.2]]);
        make_plant(b, d).unwrap()
    }

    #[test]
    fn vertex_radius_uses_every_vertex() {
        let d = PlantDims { nx: 1, np: 1, nq: 1, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[0.5]]);
        b.bp = from_rows(&[&[1.0]]);
        b.cq = from_rows(&[&[1.0]]);
        let plant = make_plant(b, d).unwrap();
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-0.2], vec![0.3]]).unwrap();
        assert!((vertex_spectral_radius(&plant, &spec).unwrap() - 0.8).abs() < 1e-9);
        let none = UncertaintySpec::norm_bounded(1, 1);
        assert!((vertex_spectral_radius(&plant, &none).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_delta_is_open_loop() {
        let plant = small_plant();
        let w: Vec<Vector> = (0..10).map(|k| Vector::from_element(1, (k as f64).sin())).collect();
        let t = simulate(&plant, None, &DeltaRealization::Zero, &w).unwrap();
        assert!(t.p.iter().all(|p| p[0] == 0.0));
        let mut x = Vector::zeros(2);
        for k in 0..10 {
            let z = plant.cz() * &x + plant.dzw() * &w[k];
            assert!((z - &t.z[k]).norm() < 1e-14);
            x = plant.a() * &x + plant.bw() * &w[k];
        }
    }

    #[test]
    fn loop_equations_hold() {
        let plant = small_plant();
        let w: Vec<Vector> = (0..20).map(|k| Vector::from_element(1, ((k * 7) % 5) as f64 - 2.0)).collect();
        let t = simulate(&plant, None, &DeltaRealization::Schedule(vec![vec![0.8], vec![-0.6]]), &w).unwrap();
        for k in 0..20 {
            let d = if k % 2 == 0 { 0.8 } else { -0.6 };
            assert!((t.p[k][0] - d * t.q[k][0]).abs() < 1e-12);
            let q = plant.cq() * &t.x[k] + plant.dqp() * &t.p[k] + plant.dqw() * &w[k];
            assert!((q - &t.q[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn ill_posed_loop_detected() {
        let plant = small_plant();
        // 1 - delta * 0.3 = 0 at delta = 10/3
        let w = vec![Vector::from_element(1, 1.0); 3];
        let err = simulate(&plant, None, &DeltaRealization::Constant(vec![10.0 / 3.0]), &w).unwrap_err();
        assert!(matches!(err, Error::IllPosed { step: 0, .. }));
    }

    #[test]
    fn ratio_is_scale_invariant() {
        let plant = small_plant();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_disturbance(&mut rng, 1, 50, 1.0, 0);
        let w2: Vec<Vector> = w.iter().map(|v| v * 37.5).collect();
        let d = DeltaRealization::Constant(vec![0.4]);
        let r1 = simulate(&plant, None, &d, &w).unwrap().ratio();
        let r2 = simulate(&plant, None, &d, &w2).unwrap().ratio();
        assert!((r1 - r2).abs() < 1e-10 * r1.max(1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-0.5], vec![0.5]]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(random_delta(&spec, &mut a, 30), random_delta(&spec, &mut b, 30));
        assert_eq!(random_disturbance(&mut a, 2, 30, 1.0, 1), random_disturbance(&mut b, 2, 30, 1.0, 1));
    }

    #[test]
    fn empirical_gain_of_scalar_plant() {
        // x+ = 0.5 x + w, z = x has peak gain sum 0.5^k = 2
        let d = PlantDims { nx: 1, np: 0, nq: 0, nw: 1, nz: 1 };
        let mut b = PlantBlocks::zeros(d);
        b.a = from_rows(&[&[0.5]]);
        b.bw = from_rows(&[&[1.0]]);
        b.cz = from_rows(&[&[1.0]]);
        let plant = make_plant(b, d).unwrap();
        let g = empirical_gain(&plant, &UncertaintySpec::none(), &EmpiricalOptions::default()).unwrap();
        assert!((g.lower_bound - 2.0).abs() < 1e-9, "{}", g.lower_bound);
    }

    #[test]
    fn zero_plant_empirical_gain() {
        let d = PlantDims { nx: 2, np: 1, nq: 1, nw: 1, nz: 1 };
        let plant = make_plant(PlantBlocks::zeros(d), d).unwrap();
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-1.0], vec![1.0]]).unwrap();
        let g = empirical_gain(&plant, &spec, &EmpiricalOptions { schedule_horizon: 8, ..Default::default() }).unwrap();
        assert_eq!(g.lower_bound, 0.0);
    }

    #[test]
    fn norm_bounded_residual_is_nonnegative() {
        let spec = UncertaintySpec::norm_bounded(2, 2);
        let class = class_norm_bounded(&spec).unwrap();
        let m = from_rows(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, -1.0, 0.0], &[0.0, 0.0, 0.0, -1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let delta = random_delta(&spec, &mut rng, 40);
            let q: Vec<Vector> = (0..40).map(|_| Vector::from_fn(2, |_, _| StandardNormal.sample(&mut rng))).collect();
            assert!(iqc_residual_check(class.filter(), &m, None, 0.5, &delta, &q).min >= -1e-10);
        }
    }

    #[test]
    fn invalid_multiplier_detected() {
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-1.0], vec![1.0]]).unwrap();
        let class = class_polytopic_tv(&spec).unwrap();
        let q = vec![Vector::from_element(1, 1.0); 5];
        let r = iqc_residual_check(class.filter(), &-eye(2), Some(&zeros(0, 0)), 0.5, &DeltaRealization::Constant(vec![0.3]), &q);
        assert!(r.min < 0.0);
    }

    #[test]
    fn pointwise_residual_implies_hard_residual() {
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-1.0], vec![1.0]]).unwrap();
        let filter = static_identity_filter(1, 1);
        let m = from_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let delta = random_delta(&spec, &mut rng, 30);
            let q: Vec<Vector> = (0..30).map(|_| Vector::from_fn(1, |_, _| StandardNormal.sample(&mut rng))).collect();
            let pw = iqc_residual_check(&filter, &m, None, 0.5, &delta, &q).min;
            assert!(pw >= 0.0);
            for rho in [0.1, 0.5, 0.9] {
                assert!(iqc_residual_check(&filter, &m, Some(&zeros(0, 0)), rho, &delta, &q).min >= 0.0);
            }
        }
        let _ = spec;
    }

    #[test]
    fn trivial_dissipation_data() {
        // P = 0, M = 0, mu = 1: the first inequality reduces to -|w_k|^2
        let plant = small_plant();
        let filter = static_identity_filter(1, 1);
        let aug = crate::system::augment(&plant, &filter).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_disturbance(&mut rng, 1, 30, 1.0, 0);
        let t = simulate(&plant, Some(&filter), &DeltaRealization::Constant(vec![0.2]), &w).unwrap();
        let (p, m) = (zeros(2, 2), zeros(2, 2));
        let data = DissipationData { p: &p, m: &m, x: Some(&zeros(0, 0)), m2: None, mu: 1.0, gamma: Some(1e6), rho: 0.5 };
        let r = dissipation_check(&aug, &data, &t);
        assert!(r.max_violation <= 0.0);
    }

    #[test]
    fn delta_membership() {
        let spec = UncertaintySpec::polytopic_time_varying(vec![vec![-0.1, -0.3], vec![0.5, 0.6]]).unwrap();
        assert_eq!(DeltaRealization::Constant(vec![0.2, 0.0]).excess(&spec), 0.0);
        assert!((DeltaRealization::Constant(vec![0.7, 0.0]).excess(&spec) - 0.2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert!(random_delta(&spec, &mut rng, 20).excess(&spec) <= 1e-12);
        }
        let nb = UncertaintySpec::norm_bounded(2, 2);
        assert!(random_delta(&nb, &mut rng, 20).excess(&nb) <= 1e-12);
    }
}
