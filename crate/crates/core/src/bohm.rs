//! The guiding equation: velocity fields, trajectories, equilibrium
//! ensembles, equivariance checks and conditional wave functions.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::stats::{tv_distance, Bins, TV_BINS};
use crate::wavefield::{
    apply_derivative, FftNd, GridSpec, GridWaveFunction, HamiltonianSpec, Propagator, SUPPORT_FLOOR,
};

/// Velocity is undefined where `ρ < NODE_FLOOR · peak ρ`.
pub const NODE_FLOOR: f64 = 1e-12;
/// Near-node step shrink factor and the number of shrinks before aborting.
pub const NODE_SHRINK: f64 = 4.0;
pub const NODE_MAX_SHRINKS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    AbortedNearNode { time: f64 },
    LeftDomain { time: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Configuration>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn start(&self) -> &Configuration {
        &self.points[0]
    }

    pub fn end(&self) -> &Configuration {
        self.points.last().unwrap()
    }

    pub fn completed(&self) -> bool {
        self.status == TrajectoryStatus::Completed
    }

    /// CSV `(t, q0[, q1])`.
    pub fn to_csv(&self) -> String {
        let nd = self.points[0].0.len();
        let mut out = String::from("t");
        for a in 0..nd {
            out.push_str(&format!(",q{a}"));
        }
        out.push('\n');
        for (t, p) in self.times.iter().zip(&self.points) {
            out.push_str(&format!("{t:.16e}"));
            for x in &p.0 {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `|Ψ|²`-distributed configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub seed: u64,
    pub members: Vec<Configuration>,
    pub grid: GridSpec,
    pub source_time: f64,
}

/// Density and current of a wave function at one instant, evaluable at any
/// configuration.
pub trait Snapshot: Sync {
    fn time(&self) -> f64;
    /// Largest density on the grid; sets the node floor.
    fn peak(&self) -> f64;
    /// `(ρ, J)` at `q`, or `None` outside the grid.
    fn eval(&self, q: &[f64]) -> Option<(f64, [f64; 2])>;
}

/// Cubic Hermite basis on a cell of width `h`: (value weight, derivative
/// weight) for the left and right node.
fn hermite(t: f64, h: f64) -> [(f64, f64); 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (2.0 * t3 - 3.0 * t2 + 1.0, (t3 - 2.0 * t2 + t) * h),
        (-2.0 * t3 + 3.0 * t2, (t3 - t2) * h),
    ]
}

/// Cell of `x` on a periodic axis: left node, right node, local coordinate.
fn locate(ax: &crate::wavefield::Axis, x: f64) -> (usize, usize, f64, f64) {
    let dx = (ax.max - ax.min) / ax.points as f64;
    let s = (x - ax.min) / dx;
    let i = (s.floor() as usize).min(ax.points - 1);
    (i, (i + 1) % ax.points, s - i as f64, dx)
}

/// `Ψ` and its spectral derivatives at every node, enough for cubic (1D) or
/// bicubic (2D) Hermite interpolation of `Ψ` and `∇Ψ`.
#[derive(Clone, Debug)]
pub struct FieldSnapshot {
    grid: GridSpec,
    time: f64,
    spin_dim: usize,
    /// Per point and component: 1D `[Ψ, Ψx, Ψxx]`; 2D
    /// `[Ψ, Ψx, Ψy, Ψxy, Ψxx, Ψyy, Ψxxy, Ψxyy]`.
    data: Vec<C64>,
    width: usize,
    coef: [f64; 2],
    peak: f64,
}

impl FieldSnapshot {
    pub fn new(psi: &GridWaveFunction, h: &HamiltonianSpec, fft: &FftNd) -> Result<Self> {
        h.validate(psi.grid(), psi.spin_dim())?;
        let grid = psi.grid().clone();
        let n = grid.len();
        let sd = psi.spin_dim();
        let mut coef = [0.0; 2];
        for (c, m) in coef.iter_mut().zip(&h.masses) {
            *c = h.hbar / m;
        }
        let orders: Vec<Vec<usize>> = match grid.ndim() {
            1 => vec![vec![1], vec![2]],
            _ => vec![
                vec![1, 0],
                vec![0, 1],
                vec![1, 1],
                vec![2, 0],
                vec![0, 2],
                vec![2, 1],
                vec![1, 2],
            ],
        };
        let width = orders.len() + 1;
        let mut data = vec![C64::new(0.0, 0.0); n * sd * width];
        for comp in 0..sd {
            let base = psi.component(comp);
            let mut spec = base.to_vec();
            fft.forward(&mut spec);
            let derivs: Vec<Vec<C64>> = orders
                .iter()
                .map(|o| {
                    let mut b = spec.clone();
                    apply_derivative(&grid, &mut b, o);
                    fft.inverse(&mut b);
                    b
                })
                .collect();
            data.par_chunks_mut(sd * width).enumerate().for_each(|(i, d)| {
                let d = &mut d[comp * width..(comp + 1) * width];
                d[0] = base[i];
                for (k, dv) in derivs.iter().enumerate() {
                    d[k + 1] = dv[i];
                }
            });
        }
        let peak = psi.density().iter().copied().fold(0.0, f64::max);
        Ok(Self { grid, time: psi.time(), spin_dim: sd, data, width, coef, peak })
    }

    /// `v = J/ρ` at `q`.
    pub fn velocity(&self, q: &[f64]) -> Result<Vec<f64>> {
        velocity_between(self, self, self.time, q)
    }
}

impl Snapshot for FieldSnapshot {
    fn time(&self) -> f64 {
        self.time
    }

    fn peak(&self) -> f64 {
        self.peak
    }

    /// `(ρ, J)` at `q` from the interpolated `Ψ` and `∇Ψ`, or `None` outside
    /// the grid extent.
    fn eval(&self, q: &[f64]) -> Option<(f64, [f64; 2])> {
        if !self.grid.contains(q) {
            return None;
        }
        let (sd, w) = (self.spin_dim, self.width);
        let zero = C64::new(0.0, 0.0);
        let at = |node: usize, c: usize| &self.data[(node * sd + c) * w..(node * sd + c + 1) * w];
        let mut rho = 0.0;
        let mut j = [0.0; 2];
        if self.grid.ndim() == 1 {
            let (i0, i1, t, dx) = locate(&self.grid.axes[0], q[0]);
            let hb = hermite(t, dx);
            for c in 0..sd {
                let (mut p, mut px) = (zero, zero);
                for (&node, (hv, hd)) in [i0, i1].iter().zip(hb) {
                    let d = at(node, c);
                    p += d[0] * hv + d[1] * hd;
                    px += d[1] * hv + d[2] * hd;
                }
                rho += p.norm_sqr();
                j[0] += self.coef[0] * (p.conj() * px).im;
            }
            return Some((rho, j));
        }
        let (i0, i1, tx, dx) = locate(&self.grid.axes[0], q[0]);
        let (j0, j1, ty, dy) = locate(&self.grid.axes[1], q[1]);
        let hx = hermite(tx, dx);
        let hy = hermite(ty, dy);
        let n1 = self.grid.axes[1].points;
        for c in 0..sd {
            let (mut p, mut px, mut py) = (zero, zero, zero);
            for (ci, &i) in [i0, i1].iter().enumerate() {
                for (cj, &jj) in [j0, j1].iter().enumerate() {
                    // d = [Ψ, Ψx, Ψy, Ψxy, Ψxx, Ψyy, Ψxxy, Ψxyy]
                    let d = at(i * n1 + jj, c);
                    let (vx, gx) = hx[ci];
                    let (vy, gy) = hy[cj];
                    let (w0, w1, w2, w3) = (vx * vy, gx * vy, vx * gy, gx * gy);
                    p += d[0] * w0 + d[1] * w1 + d[2] * w2 + d[3] * w3;
                    px += d[1] * w0 + d[4] * w1 + d[3] * w2 + d[6] * w3;
                    py += d[2] * w0 + d[3] * w1 + d[5] * w2 + d[7] * w3;
                }
            }
            rho += p.norm_sqr();
            j[0] += self.coef[0] * (p.conj() * px).im;
            j[1] += self.coef[1] * (p.conj() * py).im;
        }
        Some((rho, j))
    }
}

/// One-axis function tabulated with its first two spectral derivatives.
#[derive(Clone, Debug)]
pub struct AxisTable {
    pub axis: crate::wavefield::Axis,
    /// `[f, f', f'']` at every node.
    pub values: [Vec<C64>; 3],
}

impl AxisTable {
    /// Tabulates a one-axis function (`spin_dim` 1) and its derivatives.
    pub fn new(f: &[C64], grid: &GridSpec, fft: &FftNd) -> Result<Self> {
        if grid.ndim() != 1 || f.len() != grid.len() {
            return Err(Error::Dimension("axis tables need a one-axis grid".into()));
        }
        let mut spec = f.to_vec();
        fft.forward(&mut spec);
        let d = |order: usize| {
            let mut b = spec.clone();
            apply_derivative(grid, &mut b, &[order]);
            fft.inverse(&mut b);
            b
        };
        Ok(Self { axis: grid.axes[0].clone(), values: [f.to_vec(), d(1), d(2)] })
    }

    /// Interpolated `(f, f')` at `x`.
    fn interp(&self, x: f64) -> (C64, C64) {
        let (i0, i1, t, dx) = locate(&self.axis, x);
        let hb = hermite(t, dx);
        let [f, d1, d2] = &self.values;
        let (mut v, mut g) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for (&i, (hv, hd)) in [i0, i1].iter().zip(hb) {
            v += f[i] * hv + d1[i] * hd;
            g += d1[i] * hv + d2[i] * hd;
        }
        (v, g)
    }
}

/// `Ψ_c(x, y) = Σ_k coef_k f_k(x) g_k(y)` over terms with `component_k = c`.
#[derive(Clone, Debug)]
pub struct ProductTerm {
    pub component: usize,
    pub coef: C64,
    pub f: usize,
    pub g: usize,
}

/// Two-axis field given as a finite sum of products of one-axis functions.
/// Interpolation is the tensor product of the one-axis cubic Hermite
/// interpolants, which coincides with bicubic Hermite interpolation of the
/// assembled field.
#[derive(Clone, Debug)]
pub struct ProductSumSnapshot {
    pub time: f64,
    pub spin_dim: usize,
    pub x: Vec<AxisTable>,
    pub y: Vec<AxisTable>,
    pub terms: Vec<ProductTerm>,
    /// `ħ/m` per axis.
    pub coef: [f64; 2],
    peak: f64,
}

impl ProductSumSnapshot {
    pub fn new(
        time: f64,
        spin_dim: usize,
        x: Vec<AxisTable>,
        y: Vec<AxisTable>,
        terms: Vec<ProductTerm>,
        coef: [f64; 2],
    ) -> Result<Self> {
        if terms.iter().any(|t| t.component >= spin_dim || t.f >= x.len() || t.g >= y.len()) {
            return Err(Error::Validation("product term index out of range".into()));
        }
        let mut s = Self { time, spin_dim, x, y, terms, coef, peak: 0.0 };
        s.peak = s.assemble().into_iter().fold(0.0, f64::max);
        Ok(s)
    }

    /// Density on the grid nodes.
    fn assemble(&self) -> Vec<f64> {
        let (nx, ny) = (self.x[0].axis.points, self.y[0].axis.points);
        (0..nx * ny)
            .into_par_iter()
            .map(|p| {
                let (i, j) = (p / ny, p % ny);
                let mut psi = vec![C64::new(0.0, 0.0); self.spin_dim];
                for t in &self.terms {
                    psi[t.component] += t.coef * self.x[t.f].values[0][i] * self.y[t.g].values[0][j];
                }
                psi.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .collect()
    }
}

impl Snapshot for ProductSumSnapshot {
    fn time(&self) -> f64 {
        self.time
    }

    fn peak(&self) -> f64 {
        self.peak
    }

    fn eval(&self, q: &[f64]) -> Option<(f64, [f64; 2])> {
        let inside = |ax: &crate::wavefield::Axis, v: f64| v >= ax.min && v < ax.max;
        if q.len() != 2 || !inside(&self.x[0].axis, q[0]) || !inside(&self.y[0].axis, q[1]) {
            return None;
        }
        let fx: Vec<(C64, C64)> = self.x.iter().map(|t| t.interp(q[0])).collect();
        let gy: Vec<(C64, C64)> = self.y.iter().map(|t| t.interp(q[1])).collect();
        let zero = C64::new(0.0, 0.0);
        let mut comp = vec![(zero, zero, zero); self.spin_dim];
        for t in &self.terms {
            let ((f, df), (g, dg)) = (fx[t.f], gy[t.g]);
            let e = &mut comp[t.component];
            e.0 += t.coef * f * g;
            e.1 += t.coef * df * g;
            e.2 += t.coef * f * dg;
        }
        let mut rho = 0.0;
        let mut j = [0.0; 2];
        for (p, px, py) in comp {
            rho += p.norm_sqr();
            j[0] += self.coef[0] * (p.conj() * px).im;
            j[1] += self.coef[1] * (p.conj() * py).im;
        }
        Some((rho, j))
    }
}

/// Outcome of a velocity evaluation failure during integration.
enum Halt {
    Node(f64),
    Outside,
}

fn velocity_at<S: Snapshot>(s0: &S, s1: &S, t: f64, q: &[f64]) -> std::result::Result<[f64; 2], Halt> {
    let span = s1.time() - s0.time();
    let w = if span == 0.0 { 0.0 } else { ((t - s0.time()) / span).clamp(0.0, 1.0) };
    let (r0, j0) = s0.eval(q).ok_or(Halt::Outside)?;
    let (r1, j1) = if w == 0.0 { (r0, j0) } else { s1.eval(q).ok_or(Halt::Outside)? };
    let rho = (1.0 - w) * r0 + w * r1;
    let peak = (1.0 - w) * s0.peak() + w * s1.peak();
    if !(rho >= NODE_FLOOR * peak) {
        return Err(Halt::Node(rho));
    }
    Ok([
        ((1.0 - w) * j0[0] + w * j1[0]) / rho,
        ((1.0 - w) * j0[1] + w * j1[1]) / rho,
    ])
}

pub(crate) fn velocity_between<S: Snapshot>(s0: &S, s1: &S, t: f64, q: &[f64]) -> Result<Vec<f64>> {
    match velocity_at(s0, s1, t, q) {
        Ok(v) => Ok(v[..q.len()].to_vec()),
        Err(Halt::Node(density)) => Err(Error::NearNode { density }),
        Err(Halt::Outside) => Err(Error::Validation(format!("configuration {q:?} outside the grid"))),
    }
}

/// `v_k = (ħ/m_k) Im[(Ψ, ∂_kΨ)/(Ψ, Ψ)]` at `q`.
pub fn velocity(psi: &GridWaveFunction, q: &Configuration, h: &HamiltonianSpec) -> Result<Vec<f64>> {
    if q.0.len() != psi.grid().ndim() {
        return Err(Error::Dimension("configuration does not match the grid".into()));
    }
    FieldSnapshot::new(psi, h, &FftNd::new(psi.grid()))?.velocity(&q.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateOptions {
    /// Solver (and snapshot) time step.
    pub dt: f64,
    /// Local error tolerance per accepted step (max norm).
    pub tol: f64,
    /// Store a point every this many solver steps; `None` keeps only the
    /// endpoints.
    pub record_every: Option<usize>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { dt: 0.01, tol: 1e-8, record_every: None }
    }
}

struct Walker {
    q: [f64; 2],
    h: f64,
    status: TrajectoryStatus,
    times: Vec<f64>,
    points: Vec<Configuration>,
}

const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const C: [f64; 6] = [0.0, 0.25, 3.0 / 8.0, 12.0 / 13.0, 1.0, 0.5];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
const B5: [f64; 6] = [16.0 / 135.0, 0.0, 6656.0 / 12825.0, 28561.0 / 56430.0, -9.0 / 50.0, 2.0 / 55.0];

impl Walker {
    fn new(q: &Configuration, t: f64, h: f64) -> Self {
        let mut a = [0.0; 2];
        a[..q.0.len()].copy_from_slice(&q.0);
        Self {
            q: a,
            h,
            status: TrajectoryStatus::Completed,
            times: vec![t],
            points: vec![q.clone()],
        }
    }

    /// One RKF45 attempt: fourth-order proposal and error estimate.
    fn attempt<S: Snapshot>(&self, s0: &S, s1: &S, t: f64, h: f64, nd: usize) -> std::result::Result<([f64; 2], f64), Halt> {
        let mut k = [[0.0; 2]; 6];
        for s in 0..6 {
            let mut q = self.q;
            for (j, kj) in k.iter().enumerate().take(s) {
                for a in 0..nd {
                    q[a] += h * A[s][j] * kj[a];
                }
            }
            k[s] = velocity_at(s0, s1, t + C[s] * h, &q[..nd])?;
        }
        let mut q4 = self.q;
        let mut err: f64 = 0.0;
        for a in 0..nd {
            let mut d4 = 0.0;
            let mut d5 = 0.0;
            for s in 0..6 {
                d4 += B4[s] * k[s][a];
                d5 += B5[s] * k[s][a];
            }
            q4[a] += h * d4;
            err = err.max((h * (d5 - d4)).abs());
        }
        Ok((q4, err))
    }

    /// Integrates across one snapshot interval.
    fn advance<S: Snapshot>(&mut self, s0: &S, s1: &S, tol: f64, nd: usize) {
        if self.status != TrajectoryStatus::Completed {
            return;
        }
        let (t0, t1) = (s0.time(), s1.time());
        let dir = (t1 - t0).signum();
        let span = (t1 - t0).abs();
        let mut t = t0;
        let mut shrinks = 0;
        while (t1 - t) * dir > 1e-12 * span {
            let h = self.h.min((t1 - t).abs()) * dir;
            match self.attempt(s0, s1, t, h, nd) {
                Err(Halt::Outside) => {
                    self.status = TrajectoryStatus::LeftDomain { time: t };
                    return;
                }
                Err(Halt::Node(_)) => {
                    shrinks += 1;
                    if shrinks > NODE_MAX_SHRINKS {
                        self.status = TrajectoryStatus::AbortedNearNode { time: t };
                        return;
                    }
                    self.h = h.abs() / NODE_SHRINK;
                }
                Ok((q, err)) => {
                    shrinks = 0;
                    if err <= tol {
                        self.q = q;
                        t += h;
                        let grow = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).min(5.0) };
                        self.h = (h.abs() * grow).min(span.max(self.h));
                    } else {
                        self.h = h.abs() * (0.9 * (tol / err).powf(0.25)).max(0.1);
                        if self.h < 1e-14 * span {
                            self.status = TrajectoryStatus::AbortedNearNode { time: t };
                            return;
                        }
                    }
                }
            }
        }
    }

    fn record(&mut self, t: f64, nd: usize) {
        self.times.push(t);
        self.points.push(Configuration(self.q[..nd].to_vec()));
    }

    fn finish(self) -> Trajectory {
        Trajectory { times: self.times, points: self.points, status: self.status }
    }
}

/// Trajectories of an ensemble together with the evolved wave function.
#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub trajectories: Vec<Trajectory>,
    pub final_state: GridWaveFunction,
}

impl EnsembleRun {
    pub fn aborted(&self) -> usize {
        self.trajectories.iter().filter(|t| !t.completed()).count()
    }

    pub fn endpoints(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().map(|t| t.end().0.clone()).collect()
    }
}

/// Integrates every start configuration across a sequence of snapshots.
/// `next(k)` yields snapshot `k + 1`; all members advance in lockstep one
/// interval at a time, so only two snapshots are held.
pub fn transport<S: Snapshot>(
    starts: &[Configuration],
    first: S,
    steps: usize,
    mut next: impl FnMut(usize) -> Result<S>,
    opts: &IntegrateOptions,
) -> Result<Vec<Trajectory>> {
    let nd = starts.first().map_or(1, |q| q.0.len());
    let mut s0 = first;
    let t0 = s0.time();
    let mut walkers: Vec<Walker> = starts.iter().map(|q| Walker::new(q, t0, opts.dt)).collect();
    for step in 0..steps {
        let s1 = next(step)?;
        let last = step + 1 == steps;
        let rec = last || opts.record_every.is_some_and(|k| k > 0 && (step + 1) % k == 0);
        walkers.par_iter_mut().for_each(|w| {
            w.advance(&s0, &s1, opts.tol, nd);
            if rec {
                w.record(s1.time(), nd);
            }
        });
        s0 = s1;
    }
    Ok(walkers.into_iter().map(Walker::finish).collect())
}

/// Evolves `psi0` for `duration` (negative: backwards) and integrates every
/// start configuration against the evolving velocity field.
pub fn integrate_ensemble(
    psi0: &GridWaveFunction,
    h: &HamiltonianSpec,
    starts: &[Configuration],
    duration: f64,
    opts: &IntegrateOptions,
) -> Result<EnsembleRun> {
    let nd = psi0.grid().ndim();
    if starts.iter().any(|q| q.0.len() != nd) {
        return Err(Error::Dimension("configuration does not match the grid".into()));
    }
    if !(opts.dt > 0.0 && opts.tol > 0.0) {
        return Err(Error::Validation("dt and tol must be positive".into()));
    }
    if duration == 0.0 {
        let trajectories = starts.iter().map(|q| Walker::new(q, psi0.time(), opts.dt).finish()).collect();
        return Ok(EnsembleRun { trajectories, final_state: psi0.clone() });
    }
    let steps = ((duration.abs() / opts.dt).round() as usize).max(1);
    let dt = duration / steps as f64;
    let prop = Propagator::new(h, psi0.grid(), psi0.spin_dim(), dt)?;
    let mut psi = psi0.clone();
    let first = FieldSnapshot::new(&psi, h, prop.fft())?;
    let opts = IntegrateOptions { dt: dt.abs(), ..opts.clone() };
    let trajectories = transport(
        starts,
        first,
        steps,
        |step| {
            prop.step(&mut psi, step)?;
            FieldSnapshot::new(&psi, h, prop.fft())
        },
        &opts,
    )?;
    psi.check_boundary()?;
    Ok(EnsembleRun { trajectories, final_state: psi })
}

/// Single trajectory from `q0` over `duration`.
pub fn integrate(
    psi0: &GridWaveFunction,
    h: &HamiltonianSpec,
    q0: &Configuration,
    duration: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    Ok(integrate_ensemble(psi0, h, std::slice::from_ref(q0), duration, opts)?
        .trajectories
        .remove(0))
}

/// Draws `n` configurations from `|Ψ|²`: inverse CDF over cells, then a
/// uniform position within the chosen cell. Member `k` uses stream `k` of
/// `seed`.
pub fn sample_equilibrium(psi: &GridWaveFunction, n: usize, seed: u64) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::Validation("ensemble needs at least one member".into()));
    }
    psi.require_normalized(1e-6)?;
    let grid = psi.grid();
    let dv = grid.cell_volume();
    let mut cdf = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    for r in psi.density() {
        acc += r * dv;
        cdf.push(acc);
    }
    let total = acc;
    let members = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = Stream::new(seed, k as u64);
            let u = rng.uniform() * total;
            let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let centre = grid.coords(cell);
            Configuration(
                centre
                    .iter()
                    .enumerate()
                    .map(|(a, &c)| {
                        let ax = &grid.axes[a];
                        let mut x = c + (rng.uniform() - 0.5) * grid.dx(a);
                        if x < ax.min {
                            x += ax.max - ax.min;
                        }
                        x
                    })
                    .collect(),
            )
        })
        .collect();
    Ok(Ensemble { seed, members, grid: grid.clone(), source_time: psi.time() })
}

/// Per-axis total-variation distance between the empirical marginals of
/// `points` and the marginals of `|Ψ|²`, on 64 bins spanning the support.
pub fn axis_tv(psi: &GridWaveFunction, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let grid = psi.grid();
    (0..grid.ndim())
        .map(|a| {
            let marg = psi.marginal(a);
            let dx = grid.dx(a);
            let xs = grid.axis_coords(a);
            let bins = Bins::covering_support(&xs, dx, &marg, SUPPORT_FLOOR, TV_BINS)?;
            let masses: Vec<f64> = marg.iter().map(|m| m * dx).collect();
            let total: f64 = masses.iter().sum();
            let mut exact = bins.masses_from_cells(&xs, dx, &masses);
            exact.iter_mut().for_each(|m| *m /= total);
            let emp = bins.histogram(points.iter().map(|p| p[a]));
            Ok(tv_distance(&exact, &emp))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub seed: u64,
    pub n: usize,
    pub time: f64,
    /// Largest per-axis marginal distance.
    pub tv_distance: f64,
    pub axis_tv: Vec<f64>,
    pub aborted: usize,
    /// Set when more than 0.1% of trajectories aborted.
    pub flagged: bool,
}

/// Samples `|Ψ₀|²`, transports the ensemble to time `t` and compares with
/// `|Ψ_t|²`.
pub fn equivariance_check(
    psi0: &GridWaveFunction,
    h: &HamiltonianSpec,
    t: f64,
    n: usize,
    seed: u64,
    opts: &IntegrateOptions,
) -> Result<EquivarianceReport> {
    let ens = sample_equilibrium(psi0, n, seed)?;
    let run = integrate_ensemble(psi0, h, &ens.members, t, opts)?;
    let aborted = run.aborted();
    let ends: Vec<Vec<f64>> = run
        .trajectories
        .iter()
        .filter(|t| t.completed())
        .map(|t| t.end().0.clone())
        .collect();
    let axis = axis_tv(&run.final_state, &ends)?;
    Ok(EquivarianceReport {
        seed,
        n,
        time: t,
        tv_distance: axis.iter().copied().fold(0.0, f64::max),
        axis_tv: axis,
        aborted,
        flagged: aborted as f64 > 1e-3 * n as f64,
    })
}

/// Conditional wave function `ψ(x) = Ψ(x, Y)`.
#[derive(Clone, Debug)]
pub struct ConditionalWaveFunction {
    pub psi: GridWaveFunction,
    /// `Y` lies in a y-support component on which `Ψ` factorises as
    /// `ψ(x)Φ(y)` up to density below `1e-8` of the peak.
    pub effective: bool,
}

/// Trigonometric interpolation of every row of axis 1 at `y`.
fn section(psi: &GridWaveFunction, y: f64) -> Vec<C64> {
    let grid = psi.grid();
    let (n0, n1) = (grid.axes[0].points, grid.axes[1].points);
    let fft = FftPlanner::new().plan_fft_forward(n1);
    let ks = grid.wavenumbers(1);
    let shift = y - grid.axes[1].min;
    let phase: Vec<C64> = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            if j == n1 / 2 {
                C64::new((k * shift).cos(), 0.0)
            } else {
                C64::new(0.0, k * shift).exp()
            }
        })
        .collect();
    let mut out = Vec::with_capacity(psi.spin_dim() * n0);
    for c in 0..psi.spin_dim() {
        let comp = psi.component(c);
        for i in 0..n0 {
            let mut row = comp[i * n1..(i + 1) * n1].to_vec();
            fft.process(&mut row);
            out.push(row.iter().zip(&phase).map(|(a, p)| a * p).sum::<C64>() / n1 as f64);
        }
    }
    out
}

pub fn conditional_wavefunction(psi: &GridWaveFunction, y: f64) -> Result<ConditionalWaveFunction> {
    let grid = psi.grid();
    if grid.ndim() != 2 {
        return Err(Error::Dimension("conditional wave function needs a 2-axis grid".into()));
    }
    let ax1 = &grid.axes[1];
    if !(y >= ax1.min && y < ax1.max) {
        return Err(Error::Validation(format!("Y = {y} outside the grid")));
    }
    let xgrid = GridSpec::new(vec![grid.axes[0].clone()])?;
    let samples = section(psi, y);
    let raw = GridWaveFunction::new(xgrid, psi.spin_dim(), samples, psi.time())?;
    let norm = raw.norm_sqr();
    if norm < 1e-12 {
        return Err(Error::Validation(format!("degenerate section: squared norm {norm:e}")));
    }
    let cond = raw.normalized()?;

    // y-support component containing Y
    let marg = psi.marginal(1);
    let peak = marg.iter().copied().fold(0.0, f64::max);
    let n1 = ax1.points;
    let dy = grid.dx(1);
    let jy = (((y - ax1.min) / dy).round() as usize) % n1;
    let inside = |j: usize| marg[j] >= SUPPORT_FLOOR * peak;
    let mut effective = false;
    if inside(jy) {
        let mut rows = vec![jy];
        let mut j = jy;
        while rows.len() < n1 {
            j = (j + n1 - 1) % n1;
            if !inside(j) {
                break;
            }
            rows.push(j);
        }
        j = jy;
        while rows.len() < n1 {
            j = (j + 1) % n1;
            if !inside(j) || rows.contains(&j) {
                break;
            }
            rows.push(j);
        }
        let n0 = grid.axes[0].points;
        let n = grid.len();
        let dx = grid.dx(0);
        let rho_peak = psi.density().iter().copied().fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for &r in &rows {
            // φ(y) = ⟨ψ, Ψ(·, y)⟩
            let mut phi = C64::new(0.0, 0.0);
            for c in 0..psi.spin_dim() {
                for i in 0..n0 {
                    phi += cond.samples()[c * n0 + i].conj() * psi.samples()[c * n + i * n1 + r] * dx;
                }
            }
            for i in 0..n0 {
                let mut d = 0.0;
                for c in 0..psi.spin_dim() {
                    d += (psi.samples()[c * n + i * n1 + r] - cond.samples()[c * n0 + i] * phi).norm_sqr();
                }
                worst = worst.max(d);
            }
        }
        effective = worst < SUPPORT_FLOOR * rho_peak;
    }
    Ok(ConditionalWaveFunction { psi: cond, effective })
}

/// Velocity field `J^W/ρ^W` of a mixture `W = Σ p_k |ψ_k⟩⟨ψ_k|`, on the grid
/// (`NaN` where `ρ^W` is below the node floor).
#[derive(Clone, Debug)]
pub struct MixtureField {
    pub density: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    /// `J_k/ρ_k` of each member state.
    pub member_velocities: Vec<Vec<Vec<f64>>>,
}

pub fn mixture_velocity(states: &[(f64, GridWaveFunction)], h: &HamiltonianSpec) -> Result<MixtureField> {
    let first = states
        .first()
        .ok_or_else(|| Error::Validation("empty mixture".into()))?;
    let grid = first.1.grid();
    let n = grid.len();
    let nd = grid.ndim();
    let mut rho = vec![0.0; n];
    let mut j = vec![vec![0.0; n]; nd];
    let mut members = Vec::new();
    for (p, psi) in states {
        if psi.grid() != grid {
            return Err(Error::Dimension("mixture members on different grids".into()));
        }
        let r = psi.density();
        let ji = crate::wavefield::probability_current(psi, h)?;
        let peak = r.iter().copied().fold(0.0, f64::max);
        members.push(
            ji.iter()
                .map(|ja| {
                    ja.iter()
                        .zip(&r)
                        .map(|(x, rr)| if *rr >= NODE_FLOOR * peak { x / rr } else { f64::NAN })
                        .collect()
                })
                .collect(),
        );
        for i in 0..n {
            rho[i] += p * r[i];
            for a in 0..nd {
                j[a][i] += p * ji[a][i];
            }
        }
    }
    let peak = rho.iter().copied().fold(0.0, f64::max);
    let velocity = j
        .iter()
        .map(|ja| {
            ja.iter()
                .zip(&rho)
                .map(|(x, r)| if *r >= NODE_FLOOR * peak { x / r } else { f64::NAN })
                .collect()
        })
        .collect();
    Ok(MixtureField { density: rho, velocity, member_velocities: members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{two_particle_potential, AnalyticState};

    fn free_gaussian(k: f64) -> (GridSpec, GridWaveFunction) {
        let g = GridSpec::line(-20.0, 20.0, 256).unwrap();
        let st = AnalyticState::Gaussian {
            center: vec![0.0],
            width: vec![1.0],
            momentum: vec![k],
            mass: 1.0,
            hbar: 1.0,
        };
        let psi = st.evaluate(&g, 0.0).unwrap();
        (g, psi)
    }

    #[test]
    fn real_state_has_zero_velocity_and_boost_gives_k() {
        let (_, psi) = free_gaussian(0.0);
        let h = HamiltonianSpec::free(vec![1.0]);
        assert!(velocity(&psi, &Configuration(vec![0.37]), &h).unwrap()[0].abs() < 1e-14);
        // at nodes the spectral values are exact; between them the error is
        // fourth order in k·dx
        let (g, psi) = free_gaussian(1.25);
        let node = g.axis_coords(0)[130];
        let v = velocity(&psi, &Configuration(vec![node]), &h).unwrap()[0];
        assert!((v - 1.25).abs() < 1e-10, "{v}");
        let v = velocity(&psi, &Configuration(vec![0.37]), &h).unwrap()[0];
        assert!((v - 1.25).abs() < 2e-5, "{v}");
    }

    #[test]
    fn oscillator_angular_velocity() {
        let g = GridSpec::square(-8.0, 8.0, 256).unwrap();
        let psi = AnalyticState::Oscillator2d11 { mass: 1.0, omega: 1.0, hbar: 1.0 }
            .evaluate(&g, 0.0)
            .unwrap();
        let h = HamiltonianSpec::free(vec![1.0, 1.0]);
        let snap = FieldSnapshot::new(&psi, &h, &FftNd::new(&g)).unwrap();
        for (x, y) in [(0.53, 0.21), (-1.1, 0.77), (1.9, -1.3), (0.3, -0.4)] {
            let v = snap.velocity(&[x, y]).unwrap();
            let r2: f64 = x * x + y * y;
            let omega = (x * v[1] - y * v[0]) / r2;
            assert!((omega - 1.0 / r2).abs() < 1e-6, "{omega} vs {}", 1.0 / r2);
            assert!((x * v[0] + y * v[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn two_particle_trajectories() {
        let g = GridSpec::square(-18.0, 18.0, 256).unwrap();
        let psi = AnalyticState::TwoParticle.evaluate(&g, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0, 1.0]).with_potential(&g, two_particle_potential);
        let starts = vec![Configuration(vec![0.7, -0.4]), Configuration(vec![-1.2, 0.3])];
        let opts = IntegrateOptions { dt: 0.01, tol: 1e-9, record_every: Some(50) };
        let run = integrate_ensemble(&psi, &h, &starts, 2.0, &opts).unwrap();
        for tr in &run.trajectories {
            assert!(tr.completed());
            let (x, y) = (tr.points[0].0[0], tr.points[0].0[1]);
            for (t, p) in tr.times.iter().zip(&tr.points) {
                let s = (1.0 + t * t).sqrt();
                let (a, b) = (0.5 * (s + 1.0), 0.5 * (s - 1.0));
                assert!((p.0[0] - (a * x + b * y)).abs() < 1e-4);
                assert!((p.0[1] - (b * x + a * y)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn ground_state_trajectory_is_constant() {
        let g = GridSpec::line(-12.0, 12.0, 128).unwrap();
        let st = AnalyticState::HarmonicSuperposition {
            coefficients: vec![[1.0, 0.0]],
            mass: 1.0,
            omega: 1.0,
            hbar: 1.0,
        };
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(&g, |q| 0.5 * q[0] * q[0]);
        let tr = integrate(&st.evaluate(&g, 0.0).unwrap(), &h, &Configuration(vec![0.8]), 3.0, &IntegrateOptions::default()).unwrap();
        // residual motion is the O(dt²) splitting error of the stationary state
        assert!((tr.end().0[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn forward_backward_round_trip() {
        let (_, psi) = free_gaussian(0.8);
        let h = HamiltonianSpec::free(vec![1.0]);
        let opts = IntegrateOptions { dt: 0.05, tol: 1e-9, record_every: None };
        let q0 = Configuration(vec![0.4]);
        let fwd = integrate_ensemble(&psi, &h, &[q0.clone()], 2.0, &opts).unwrap();
        let back = integrate_ensemble(&fwd.final_state, &h, &[fwd.trajectories[0].end().clone()], -2.0, &opts).unwrap();
        assert!((back.trajectories[0].end().0[0] - 0.4).abs() < 10.0 * opts.tol);
    }

    #[test]
    fn equilibrium_sampling_moments_and_determinism() {
        let (_, psi) = free_gaussian(0.0);
        let a = sample_equilibrium(&psi, 10_000, 3).unwrap();
        let b = sample_equilibrium(&psi, 10_000, 3).unwrap();
        assert_eq!(a, b);
        let xs: Vec<f64> = a.members.iter().map(|c| c.0[0]).collect();
        let m = crate::stats::mean(&xs);
        let v = crate::stats::variance(&xs);
        // |ψ|² has variance d² = 1
        assert!(m.abs() < 4.0 * (1.0f64 / 1e4).sqrt());
        assert!((v - 1.0).abs() < 4.0 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn uniform_box_counts() {
        let g = GridSpec::line(0.0, 1.0, 32).unwrap();
        let psi = GridWaveFunction::from_fn(&g, |_| C64::new(1.0, 0.0)).unwrap();
        let n = 32_000;
        let ens = sample_equilibrium(&psi, n, 9).unwrap();
        let mut counts = vec![0usize; 32];
        for c in &ens.members {
            let x = c.0[0] + 0.5 / 32.0;
            counts[((x * 32.0) as usize) % 32] += 1;
        }
        let expect = n as f64 / 32.0;
        let sd = (expect * (1.0 - 1.0 / 32.0)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - expect).abs() < 4.0 * sd));
    }

    #[test]
    fn two_bump_branch_frequencies() {
        let g = GridSpec::line(-20.0, 20.0, 256).unwrap();
        let bump = |x: f64, c: f64| (2.0 * std::f64::consts::PI).powf(-0.25) * (-(x - c).powi(2) / 4.0).exp();
        let psi = GridWaveFunction::from_fn(&g, |q| C64::new(0.6 * bump(q[0], -8.0) + 0.8 * bump(q[0], 8.0), 0.0)).unwrap();
        let n = 10_000;
        let ens = sample_equilibrium(&psi, n, 1).unwrap();
        let f = ens.members.iter().filter(|c| c.0[0] < 0.0).count() as f64 / n as f64;
        assert!((f - 0.36).abs() < 3.0 * crate::stats::binomial_sigma(0.36, n));
    }

    #[test]
    fn conditional_of_product_and_branching() {
        let g = GridSpec::square(-16.0, 16.0, 128).unwrap();
        let gauss = |x: f64, c: f64, d: f64| (2.0 * std::f64::consts::PI * d * d).powf(-0.25) * (-(x - c).powi(2) / (4.0 * d * d)).exp();
        let prod = GridWaveFunction::from_fn(&g, |q| C64::new(gauss(q[0], 1.0, 1.0), 0.0) * gauss(q[1], 0.0, 2.0)).unwrap();
        let xg = GridSpec::line(-16.0, 16.0, 128).unwrap();
        let expect = GridWaveFunction::from_fn(&xg, |q| C64::new(gauss(q[0], 1.0, 1.0), 0.0)).unwrap();
        for y in [-1.3, 0.0, 2.71] {
            let c = conditional_wavefunction(&prod, y).unwrap();
            assert!(c.psi.max_abs_diff(&expect) < 1e-10);
            assert!(c.effective);
        }
        // ψ₁⊗Φ₁ + ψ₂⊗Φ₂ with disjoint Φ supports
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let branch = GridWaveFunction::from_fn(&g, |q| {
            C64::new(s * gauss(q[0], -3.0, 0.8) * gauss(q[1], -8.0, 0.5) + s * gauss(q[0], 4.0, 1.2) * gauss(q[1], 8.0, 0.5), 0.0)
        })
        .unwrap();
        let c = conditional_wavefunction(&branch, -7.6).unwrap();
        let psi1 = GridWaveFunction::from_fn(&xg, |q| C64::new(gauss(q[0], -3.0, 0.8), 0.0)).unwrap();
        assert!(c.psi.max_abs_diff(&psi1) < 1e-8);
        assert!(c.effective);
        // overlapping branches: not effective
        let overlap = GridWaveFunction::from_fn(&g, |q| {
            C64::new(s * gauss(q[0], -3.0, 0.8) * gauss(q[1], -1.0, 1.0) + s * gauss(q[0], 4.0, 1.2) * gauss(q[1], 1.0, 1.0), 0.0)
        })
        .unwrap()
        .normalized()
        .unwrap();
        assert!(!conditional_wavefunction(&overlap, 0.0).unwrap().effective);
        assert!(conditional_wavefunction(&branch, 0.0).is_err());
    }

    #[test]
    fn mixture_current_is_not_a_member_velocity() {
        let g = GridSpec::line(-20.0, 20.0, 256).unwrap();
        let mk = |k: f64| {
            AnalyticState::Gaussian { center: vec![0.0], width: vec![1.0], momentum: vec![k], mass: 1.0, hbar: 1.0 }
                .evaluate(&g, 0.0)
                .unwrap()
        };
        let h = HamiltonianSpec::free(vec![1.0]);
        let mix = mixture_velocity(&[(0.5, mk(1.0)), (0.5, mk(-1.0))], &h).unwrap();
        for mv in &mix.member_velocities {
            let worst = mix.velocity[0]
                .iter()
                .zip(&mv[0])
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst > 0.1);
        }
    }

    #[test]
    fn product_sum_matches_bicubic() {
        let line = GridSpec::line(-8.0, 8.0, 64).unwrap();
        let fft = FftNd::new(&line);
        let gauss = |c: f64, k: f64| line.sample(|q| (C64::new(-(q[0] - c).powi(2) / 2.0, k * q[0])).exp());
        let (f0, f1) = (gauss(-1.0, 0.5), gauss(1.5, -0.3));
        let (g0, g1) = (gauss(0.5, 0.0), gauss(-0.7, 1.1));
        let tab = |v: &Vec<C64>| AxisTable::new(v, &line, &fft).unwrap();
        let c0 = C64::new(0.6, 0.0);
        let c1 = C64::new(0.0, -0.8);
        let terms = vec![
            ProductTerm { component: 0, coef: c0, f: 0, g: 0 },
            ProductTerm { component: 1, coef: c1, f: 1, g: 1 },
            ProductTerm { component: 1, coef: c0, f: 0, g: 1 },
        ];
        let ps = ProductSumSnapshot::new(0.0, 2, vec![tab(&f0), tab(&f1)], vec![tab(&g0), tab(&g1)], terms, [1.0, 0.5])
            .unwrap();
        let sq = GridSpec::square(-8.0, 8.0, 64).unwrap();
        let comp0 = sq.sample(|q| {
            let (i, j) = (((q[0] + 8.0) / 0.25).round() as usize, ((q[1] + 8.0) / 0.25).round() as usize);
            c0 * f0[i] * g0[j]
        });
        let comp1 = sq.sample(|q| {
            let (i, j) = (((q[0] + 8.0) / 0.25).round() as usize, ((q[1] + 8.0) / 0.25).round() as usize);
            c1 * f1[i] * g1[j] + c0 * f0[i] * g1[j]
        });
        let mut samples = comp0;
        samples.extend(comp1);
        let psi = GridWaveFunction::new(sq.clone(), 2, samples, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0, 2.0]);
        let full = FieldSnapshot::new(&psi, &h, &FftNd::new(&sq)).unwrap();
        for q in [[0.13, -0.4], [-1.27, 0.91], [2.05, -1.66]] {
            let (ra, ja) = full.eval(&q).unwrap();
            let (rb, jb) = ps.eval(&q).unwrap();
            assert!((ra - rb).abs() < 1e-12 * ra.max(1.0));
            assert!((ja[0] - jb[0]).abs() < 1e-12 && (ja[1] - jb[1]).abs() < 1e-12);
        }
        assert!((full.peak() - ps.peak()).abs() < 1e-12);
    }
}
