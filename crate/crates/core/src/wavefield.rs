//! Spinor wave functions on periodic grids, split-step evolution and
//! closed-form reference states.
//!
//! Samples are stored component-major: component `c` occupies
//! `samples[c * len .. (c + 1) * len]`, and within a component the flat
//! index is row-major with the last axis fastest. Spin components index the
//! tensor product of qubits with qubit 0 as the most significant bit.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative density defining the support of a wave function, and the
/// boundary-to-peak ratio that trips the wrap-around guard.
pub const SUPPORT_FLOOR: f64 = 1e-8;
/// Maximum `dt · max|V| / ħ` accepted by the propagator.
pub const MAX_PHASE_STEP: f64 = 0.1;
const GUARD_INTERVAL: usize = 16;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

/// Uniform periodic grid. Sample `j` on an axis sits at `min + j·dx` and is
/// the centre of a cell of width `dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Validation(format!("grids have 1 or 2 axes, got {}", axes.len())));
        }
        for (i, a) in axes.iter().enumerate() {
            if !(a.min.is_finite() && a.max.is_finite() && a.max > a.min) {
                return Err(Error::Validation(format!("axis {i}: extent must be positive")));
            }
            if a.points < 32 || !a.points.is_power_of_two() {
                return Err(Error::Validation(format!(
                    "axis {i}: points must be a power of two >= 32, got {}",
                    a.points
                )));
            }
        }
        Ok(Self { axes })
    }

    pub fn line(min: f64, max: f64, points: usize) -> Result<Self> {
        Self::new(vec![Axis { min, max, points }])
    }

    pub fn square(min: f64, max: f64, points: usize) -> Result<Self> {
        Self::new(vec![Axis { min, max, points }, Axis { min, max, points }])
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self, axis: usize) -> f64 {
        let a = &self.axes[axis];
        (a.max - a.min) / a.points as f64
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.axes[axis].max - self.axes[axis].min
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.ndim()).map(|a| self.dx(a)).product()
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let a = &self.axes[axis];
        let dx = self.dx(axis);
        (0..a.points).map(|j| a.min + j as f64 * dx).collect()
    }

    /// Stride of `axis` in the flat index.
    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.points).product()
    }

    /// Multi-index of a flat index.
    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        (0..self.ndim())
            .map(|a| (flat / self.stride(a)) % self.axes[a].points)
            .collect()
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(a, &j)| self.axes[a].min + j as f64 * self.dx(a))
            .collect()
    }

    /// Angular wave numbers of the FFT ordering.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let n = self.axes[axis].points;
        let dk = 2.0 * PI / self.length(axis);
        (0..n)
            .map(|j| {
                let m = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
                m as f64 * dk
            })
            .collect()
    }

    /// True if `q` lies in `[min, max)` on every axis.
    pub fn contains(&self, q: &[f64]) -> bool {
        q.len() == self.ndim()
            && self
                .axes
                .iter()
                .zip(q)
                .all(|(a, &x)| x >= a.min && x < a.max)
    }

    /// Evaluates `f` at every grid point.
    pub fn sample<T: Send>(&self, f: impl Fn(&[f64]) -> T + Sync) -> Vec<T> {
        (0..self.len())
            .into_par_iter()
            .map(|i| f(&self.coords(i)))
            .collect()
    }
}

/// Forward/inverse FFT over all axes of a grid-shaped buffer.
#[derive(Clone)]
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(grid: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let shape = grid.shape();
        Self {
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
            shape,
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, buf: &mut [C64]) {
        self.run(buf, &self.forward);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.run(buf, &self.inverse);
        let s = 1.0 / buf.len() as f64;
        buf.par_iter_mut().for_each(|z| *z *= s);
    }

    fn run(&self, buf: &mut [C64], plans: &[Arc<dyn Fft<f64>>]) {
        match self.shape.len() {
            1 => plans[0].process(buf),
            _ => {
                let (n0, n1) = (self.shape[0], self.shape[1]);
                buf.par_chunks_mut(n1 * 16).for_each(|c| plans[1].process(c));
                let mut t = transpose(buf, n0, n1);
                t.par_chunks_mut(n0 * 16).for_each(|c| plans[0].process(c));
                buf.copy_from_slice(&transpose(&t, n1, n0));
            }
        }
    }
}

fn transpose(a: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len()];
    out.par_chunks_mut(rows).enumerate().for_each(|(j, col)| {
        for (i, z) in col.iter_mut().enumerate() {
            *z = a[i * cols + j];
        }
    });
    out
}

/// Multiplies a transformed buffer by `Π_a (i k_a)^{orders[a]}`; the Nyquist
/// mode is dropped for odd orders.
pub fn apply_derivative(grid: &GridSpec, spectrum: &mut [C64], orders: &[usize]) {
    let ks: Vec<Vec<C64>> = (0..grid.ndim())
        .map(|a| {
            let n = grid.axes[a].points;
            grid.wavenumbers(a)
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    if orders[a] % 2 == 1 && j == n / 2 {
                        C64::new(0.0, 0.0)
                    } else {
                        (I * k).powu(orders[a] as u32)
                    }
                })
                .collect()
        })
        .collect();
    spectrum.par_iter_mut().enumerate().for_each(|(flat, z)| {
        let mut f = C64::new(1.0, 0.0);
        for (a, k) in ks.iter().enumerate() {
            f *= k[(flat / grid.stride(a)) % grid.axes[a].points];
        }
        *z *= f;
    });
}

/// Spinor wave function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridWaveFunction {
    grid: GridSpec,
    spin_dim: usize,
    samples: Vec<C64>,
    time: f64,
}

impl GridWaveFunction {
    pub fn new(grid: GridSpec, spin_dim: usize, samples: Vec<C64>, time: f64) -> Result<Self> {
        if ![1, 2, 4].contains(&spin_dim) {
            return Err(Error::Validation(format!("spin_dim must be 1, 2 or 4, got {spin_dim}")));
        }
        if samples.len() != spin_dim * grid.len() {
            return Err(Error::Dimension(format!(
                "{} samples for {} components on {} points",
                samples.len(),
                spin_dim,
                grid.len()
            )));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("non-finite sample".into()));
        }
        Ok(Self { grid, spin_dim, samples, time })
    }

    /// Scalar wave function from a closure.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> C64 + Sync) -> Result<Self> {
        let s = grid.sample(f);
        Self::new(grid.clone(), 1, s, 0.0)
    }

    /// Spinor `Σ_c χ_c ⊗ φ(q)`.
    pub fn spinor_product(spinor: &[C64], scalar: &GridWaveFunction) -> Result<Self> {
        if scalar.spin_dim != 1 {
            return Err(Error::Validation("spatial factor must be scalar".into()));
        }
        let mut samples = Vec::with_capacity(spinor.len() * scalar.samples.len());
        for c in spinor {
            samples.extend(scalar.samples.iter().map(|z| c * z));
        }
        Self::new(scalar.grid.clone(), spinor.len(), samples, scalar.time)
    }

    /// Spinor wave function with one spatial function per component.
    pub fn from_components(components: &[GridWaveFunction]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Validation("no components".into()))?;
        let mut samples = Vec::new();
        for c in components {
            if c.grid != first.grid || c.spin_dim != 1 {
                return Err(Error::Dimension("components must be scalar on one grid".into()));
            }
            samples.extend_from_slice(&c.samples);
        }
        Self::new(first.grid.clone(), components.len(), samples, first.time)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spin_dim(&self) -> usize {
        self.spin_dim
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let n = self.grid.len();
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    /// `Σ_c |Ψ_c|²` at each point.
    pub fn density(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .into_par_iter()
            .map(|i| (0..self.spin_dim).map(|c| self.samples[c * n + i].norm_sqr()).sum())
            .collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sqr();
        if !(n > 0.0) {
            return Err(Error::Validation("cannot normalize a zero wave function".into()));
        }
        let s = 1.0 / n.sqrt();
        self.samples.iter_mut().for_each(|z| *z *= s);
        Ok(self)
    }

    pub fn require_normalized(&self, tol: f64) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > tol {
            return Err(Error::Validation(format!("wave function has squared norm {n}")));
        }
        Ok(())
    }

    /// `⟨self, other⟩ = Σ conj(self)·other·dV`.
    pub fn inner(&self, other: &GridWaveFunction) -> Result<C64> {
        if self.grid != other.grid || self.spin_dim != other.spin_dim {
            return Err(Error::Dimension("inner product of incompatible wave functions".into()));
        }
        Ok(self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.grid.cell_volume())
    }

    /// Largest density on the outermost cells relative to the peak.
    pub fn boundary_ratio(&self) -> f64 {
        let rho = self.density();
        let peak = rho.iter().copied().fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge: f64 = 0.0;
        for (i, &r) in rho.iter().enumerate() {
            let idx = self.grid.unflatten(i);
            if idx
                .iter()
                .zip(&self.grid.axes)
                .any(|(&j, a)| j == 0 || j == a.points - 1)
            {
                edge = edge.max(r);
            }
        }
        edge / peak
    }

    pub fn check_boundary(&self) -> Result<()> {
        let ratio = self.boundary_ratio();
        if ratio > SUPPORT_FLOOR {
            return Err(Error::WrapAround { ratio, time: self.time });
        }
        Ok(())
    }

    /// Flat indices where the density is at least `SUPPORT_FLOOR · peak`.
    pub fn support(&self) -> Vec<usize> {
        let rho = self.density();
        let peak = rho.iter().copied().fold(0.0, f64::max);
        rho.iter()
            .enumerate()
            .filter(|(_, &r)| r >= SUPPORT_FLOOR * peak)
            .map(|(i, _)| i)
            .collect()
    }

    /// Marginal density along `axis` (integrated over the other axis).
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let rho = self.density();
        let n = self.grid.axes[axis].points;
        let mut out = vec![0.0; n];
        let other: f64 = (0..self.grid.ndim())
            .filter(|&a| a != axis)
            .map(|a| self.grid.dx(a))
            .product();
        for (i, r) in rho.iter().enumerate() {
            out[(i / self.grid.stride(axis)) % n] += r * other;
        }
        out
    }

    /// Spectral derivative `∂^orders` of every component.
    pub fn derivative(&self, fft: &FftNd, orders: &[usize]) -> GridWaveFunction {
        let n = self.grid.len();
        let mut out = self.samples.clone();
        for c in 0..self.spin_dim {
            let buf = &mut out[c * n..(c + 1) * n];
            fft.forward(buf);
            apply_derivative(&self.grid, buf, orders);
            fft.inverse(buf);
        }
        GridWaveFunction { samples: out, ..self.clone() }
    }

    /// Band-limited translation by `shift` along `axis`.
    pub fn translated(&self, axis: usize, shift: f64) -> GridWaveFunction {
        let fft = FftNd::new(&self.grid);
        let ks = self.grid.wavenumbers(axis);
        let stride = self.grid.stride(axis);
        let np = self.grid.axes[axis].points;
        let n = self.grid.len();
        let mut out = self.samples.clone();
        for c in 0..self.spin_dim {
            let buf = &mut out[c * n..(c + 1) * n];
            fft.forward(buf);
            for (i, z) in buf.iter_mut().enumerate() {
                let j = (i / stride) % np;
                let k = if j == np / 2 { 0.0 } else { ks[j] };
                *z *= (-I * k * shift).exp();
            }
            fft.inverse(buf);
        }
        GridWaveFunction { samples: out, ..self.clone() }
    }

    /// Root-mean-square difference of the samples.
    pub fn rms_diff(&self, other: &GridWaveFunction) -> Result<f64> {
        if self.samples.len() != other.samples.len() {
            return Err(Error::Dimension("rms_diff of incompatible wave functions".into()));
        }
        let s: f64 = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok((s / self.samples.len() as f64).sqrt())
    }

    /// [`rms_diff`](Self::rms_diff) after rotating `self` by the global
    /// phase that best aligns it with `other`.
    pub fn rms_diff_modulo_phase(&self, other: &GridWaveFunction) -> Result<f64> {
        let overlap = self.inner(other)?;
        let aligned = if overlap.norm() > 0.0 {
            let mut a = self.clone();
            let u = overlap / overlap.norm();
            a.samples.iter_mut().for_each(|x| *x *= u);
            a
        } else {
            self.clone()
        };
        aligned.rms_diff(other)
    }

    pub fn max_abs_diff(&self, other: &GridWaveFunction) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `−(b + a·q_axis) σ·n` acting on one qubit of the spinor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinCoupling {
    pub qubit: usize,
    pub axis: usize,
    pub direction: [f64; 3],
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub hbar: f64,
    /// Mass attached to each grid axis.
    pub masses: Vec<f64>,
    /// Scalar potential sampled on the grid.
    pub potential: Option<Vec<f64>>,
    pub couplings: Vec<SpinCoupling>,
}

impl HamiltonianSpec {
    pub fn free(masses: Vec<f64>) -> Self {
        Self { hbar: 1.0, masses, potential: None, couplings: Vec::new() }
    }

    pub fn with_potential(mut self, grid: &GridSpec, v: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        self.potential = Some(grid.sample(v));
        self
    }

    pub fn with_coupling(mut self, c: SpinCoupling) -> Self {
        self.couplings.push(c);
        self
    }

    pub fn with_hbar(mut self, hbar: f64) -> Self {
        self.hbar = hbar;
        self
    }

    pub fn validate(&self, grid: &GridSpec, spin_dim: usize) -> Result<()> {
        if !(self.hbar > 0.0) {
            return Err(Error::Validation("hbar must be positive".into()));
        }
        if self.masses.len() != grid.ndim() || self.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Validation("one positive mass per axis required".into()));
        }
        if let Some(v) = &self.potential {
            if v.len() != grid.len() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation("potential must be finite, one value per point".into()));
            }
        }
        let qubits = spin_dim.trailing_zeros() as usize;
        for c in &self.couplings {
            if c.qubit >= qubits {
                return Err(Error::Validation(format!(
                    "coupling on qubit {} but spin_dim is {spin_dim}",
                    c.qubit
                )));
            }
            if c.axis >= grid.ndim() {
                return Err(Error::Validation("coupling axis out of range".into()));
            }
            let n = c.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Validation("coupling direction must be a unit vector".into()));
            }
        }
        Ok(())
    }

    /// Field vector `h_k(q)` of the `σ·h_k` term on each qubit.
    fn field(&self, q: &[f64], qubits: usize) -> Vec<[f64; 3]> {
        let mut h = vec![[0.0; 3]; qubits];
        for c in &self.couplings {
            let s = -(c.b + c.a * q[c.axis]);
            for (hk, nk) in h[c.qubit].iter_mut().zip(c.direction) {
                *hk += s * nk;
            }
        }
        h
    }

    /// Bound on `‖V(q)‖` (scalar part plus spin-coupling operator norm) over
    /// the support of `psi`.
    pub fn max_potential_on_support(&self, psi: &GridWaveFunction) -> f64 {
        let qubits = psi.spin_dim.trailing_zeros() as usize;
        psi.support()
            .into_iter()
            .map(|i| {
                let q = psi.grid.coords(i);
                let v = self.potential.as_ref().map_or(0.0, |v| v[i].abs());
                let h: f64 = self
                    .field(&q, qubits)
                    .iter()
                    .map(|h| (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt())
                    .sum();
                v + h
            })
            .fold(0.0, f64::max)
    }

    /// `(HΨ)` by spectral differentiation.
    pub fn apply(&self, psi: &GridWaveFunction) -> Result<GridWaveFunction> {
        self.validate(&psi.grid, psi.spin_dim)?;
        let grid = &psi.grid;
        let fft = FftNd::new(grid);
        let n = grid.len();
        let mut out = vec![C64::new(0.0, 0.0); psi.samples.len()];
        for (axis, m) in self.masses.iter().enumerate() {
            let mut orders = vec![0; grid.ndim()];
            orders[axis] = 2;
            let d2 = psi.derivative(&fft, &orders);
            let f = -self.hbar * self.hbar / (2.0 * m);
            out.iter_mut().zip(&d2.samples).for_each(|(o, d)| *o += d * f);
        }
        let qubits = psi.spin_dim.trailing_zeros() as usize;
        for i in 0..n {
            let v = self.potential.as_ref().map_or(0.0, |v| v[i]);
            for c in 0..psi.spin_dim {
                out[c * n + i] += psi.samples[c * n + i] * v;
            }
            if qubits > 0 {
                let h = self.field(&grid.coords(i), qubits);
                for (k, hk) in h.iter().enumerate() {
                    let bit = 1 << (qubits - 1 - k);
                    for c in 0..psi.spin_dim {
                        if c & bit != 0 {
                            continue;
                        }
                        let (u, d) = (psi.samples[c * n + i], psi.samples[(c | bit) * n + i]);
                        let s = sigma_dot(hk);
                        out[c * n + i] += s[0] * u + s[1] * d;
                        out[(c | bit) * n + i] += s[2] * u + s[3] * d;
                    }
                }
            }
        }
        GridWaveFunction::new(grid.clone(), psi.spin_dim, out, psi.time)
    }
}

/// `σ·h` as `[m00, m01, m10, m11]`.
fn sigma_dot(h: &[f64; 3]) -> [C64; 4] {
    [
        C64::new(h[2], 0.0),
        C64::new(h[0], -h[1]),
        C64::new(h[0], h[1]),
        C64::new(-h[2], 0.0),
    ]
}

/// `exp(−iτ σ·h)`.
fn spin_exp(h: &[f64; 3], tau: f64) -> [C64; 4] {
    let r = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    if r == 0.0 {
        return [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
    }
    let (s, c) = (tau * r).sin_cos();
    let n = [h[0] / r, h[1] / r, h[2] / r];
    let m = sigma_dot(&n);
    [
        c - I * s * m[0],
        -I * s * m[1],
        -I * s * m[2],
        c - I * s * m[3],
    ]
}

struct PotentialStep {
    scalar: Option<Vec<C64>>,
    /// Per qubit, per point.
    spin: Vec<Vec<[C64; 4]>>,
}

impl PotentialStep {
    fn new(h: &HamiltonianSpec, grid: &GridSpec, qubits: usize, tau: f64) -> Self {
        let scalar = h
            .potential
            .as_ref()
            .map(|v| v.par_iter().map(|x| (-I * tau * x).exp()).collect());
        let mut spin = vec![Vec::new(); qubits];
        if !h.couplings.is_empty() {
            let per_point: Vec<Vec<[C64; 4]>> = grid.sample(|q| {
                h.field(q, qubits).iter().map(|hk| spin_exp(hk, tau)).collect()
            });
            for (k, s) in spin.iter_mut().enumerate() {
                *s = per_point.iter().map(|p| p[k]).collect();
            }
        }
        Self { scalar, spin }
    }

    fn apply(&self, samples: &mut [C64], n: usize, spin_dim: usize) {
        if let Some(ph) = &self.scalar {
            samples.par_chunks_mut(n).for_each(|comp| {
                comp.iter_mut().zip(ph).for_each(|(z, p)| *z *= p);
            });
        }
        let qubits = self.spin.len();
        for (k, mats) in self.spin.iter().enumerate() {
            if mats.is_empty() {
                continue;
            }
            let bit = 1 << (qubits - 1 - k);
            for c in 0..spin_dim {
                if c & bit != 0 {
                    continue;
                }
                let (lo, hi) = samples.split_at_mut((c | bit) * n);
                let up = &mut lo[c * n..(c + 1) * n];
                let dn = &mut hi[..n];
                up.par_iter_mut()
                    .zip(dn.par_iter_mut())
                    .zip(mats.par_iter())
                    .for_each(|((u, d), m)| {
                        let (a, b) = (*u, *d);
                        *u = m[0] * a + m[1] * b;
                        *d = m[2] * a + m[3] * b;
                    });
            }
        }
    }
}

/// Strang split-step propagator for a fixed Hamiltonian, grid and `dt`.
pub struct Propagator {
    grid: GridSpec,
    spin_dim: usize,
    dt: f64,
    fft: FftNd,
    kinetic: Vec<C64>,
    half: PotentialStep,
    full: PotentialStep,
    hamiltonian: HamiltonianSpec,
}

impl Propagator {
    pub fn new(h: &HamiltonianSpec, grid: &GridSpec, spin_dim: usize, dt: f64) -> Result<Self> {
        h.validate(grid, spin_dim)?;
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Validation("dt must be finite and nonzero".into()));
        }
        let ks: Vec<Vec<f64>> = (0..grid.ndim()).map(|a| grid.wavenumbers(a)).collect();
        let kinetic = (0..grid.len())
            .map(|i| {
                let e: f64 = grid
                    .unflatten(i)
                    .iter()
                    .enumerate()
                    .map(|(a, &j)| h.hbar * ks[a][j] * ks[a][j] / (2.0 * h.masses[a]))
                    .sum();
                (-I * dt * e).exp()
            })
            .collect();
        let qubits = spin_dim.trailing_zeros() as usize;
        let tau = dt / h.hbar;
        Ok(Self {
            grid: grid.clone(),
            spin_dim,
            dt,
            fft: FftNd::new(grid),
            kinetic,
            half: PotentialStep::new(h, grid, qubits, 0.5 * tau),
            full: PotentialStep::new(h, grid, qubits, tau),
            hamiltonian: h.clone(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    fn check_compatible(&self, psi: &GridWaveFunction) -> Result<()> {
        if psi.grid != self.grid || psi.spin_dim != self.spin_dim {
            return Err(Error::Dimension("wave function does not match the propagator".into()));
        }
        Ok(())
    }

    /// Enforces `dt·max|V|/ħ ≤ 0.1` over the support of `psi`.
    pub fn check_step(&self, psi: &GridWaveFunction) -> Result<()> {
        let r = self.dt.abs() * self.hamiltonian.max_potential_on_support(psi) / self.hamiltonian.hbar;
        if r > MAX_PHASE_STEP {
            return Err(Error::StepTooLarge(r));
        }
        Ok(())
    }

    fn kinetic_step(&self, psi: &mut GridWaveFunction) {
        let n = self.grid.len();
        for c in 0..self.spin_dim {
            let buf = &mut psi.samples[c * n..(c + 1) * n];
            self.fft.forward(buf);
            buf.par_iter_mut().zip(&self.kinetic).for_each(|(z, k)| *z *= k);
            self.fft.inverse(buf);
        }
    }

    /// One Strang step without guard checks.
    pub fn step_unchecked(&self, psi: &mut GridWaveFunction) {
        let n = self.grid.len();
        self.half.apply(&mut psi.samples, n, self.spin_dim);
        self.kinetic_step(psi);
        self.half.apply(&mut psi.samples, n, self.spin_dim);
        psi.time += self.dt;
    }

    /// One Strang step; the guards run every few steps (by elapsed step
    /// count on `psi.time`) so that lockstep callers pay for them rarely.
    pub fn step(&self, psi: &mut GridWaveFunction, index: usize) -> Result<()> {
        self.check_compatible(psi)?;
        if index % GUARD_INTERVAL == 0 {
            self.check_step(psi)?;
            psi.check_boundary()?;
        }
        self.step_unchecked(psi);
        Ok(())
    }

    /// `steps` Strang steps with adjacent half potential steps merged.
    pub fn evolve(&self, psi: &GridWaveFunction, steps: usize) -> Result<GridWaveFunction> {
        self.check_compatible(psi)?;
        let mut out = psi.clone();
        if steps == 0 {
            return Ok(out);
        }
        let n = self.grid.len();
        self.check_step(&out)?;
        out.check_boundary()?;
        self.half.apply(&mut out.samples, n, self.spin_dim);
        for s in 0..steps {
            self.kinetic_step(&mut out);
            out.time += self.dt;
            if s + 1 < steps {
                self.full.apply(&mut out.samples, n, self.spin_dim);
                if (s + 1) % GUARD_INTERVAL == 0 {
                    self.check_step(&out)?;
                    out.check_boundary()?;
                }
            }
        }
        self.half.apply(&mut out.samples, n, self.spin_dim);
        out.check_boundary()?;
        Ok(out)
    }
}

/// Evolves `psi` by `steps` Strang steps of size `dt`.
pub fn evolve(psi: &GridWaveFunction, h: &HamiltonianSpec, dt: f64, steps: usize) -> Result<GridWaveFunction> {
    Propagator::new(h, &psi.grid, psi.spin_dim, dt)?.evolve(psi, steps)
}

/// Momentum-space density on the shifted conjugate grid.
#[derive(Clone, Debug)]
pub struct MomentumDensity {
    /// Momentum values `ħk` per axis, ascending.
    pub momenta: Vec<Vec<f64>>,
    /// Density per momentum-space point (same flat layout as the grid);
    /// `Σ density · Π dp = 1`.
    pub density: Vec<f64>,
    pub cell: f64,
}

pub fn momentum_density(psi: &GridWaveFunction, hbar: f64) -> MomentumDensity {
    let grid = &psi.grid;
    let fft = FftNd::new(grid);
    let n = grid.len();
    let mut dens = vec![0.0; n];
    for c in 0..psi.spin_dim {
        let mut buf = psi.component(c).to_vec();
        fft.forward(&mut buf);
        dens.iter_mut().zip(&buf).for_each(|(d, z)| *d += z.norm_sqr());
    }
    // fftshift every axis
    let shape = grid.shape();
    let mut shifted = vec![0.0; n];
    for (i, d) in dens.iter().enumerate() {
        let idx = grid.unflatten(i);
        let j: usize = idx
            .iter()
            .enumerate()
            .map(|(a, &k)| ((k + shape[a] / 2) % shape[a]) * grid.stride(a))
            .sum();
        shifted[j] = *d;
    }
    let momenta: Vec<Vec<f64>> = (0..grid.ndim())
        .map(|a| {
            let mut k = grid.wavenumbers(a);
            k.rotate_left(shape[a] / 2);
            k.iter().map(|x| hbar * x).collect()
        })
        .collect();
    let cell: f64 = (0..grid.ndim()).map(|a| hbar * 2.0 * PI / grid.length(a)).product();
    let total: f64 = shifted.iter().sum::<f64>() * cell;
    shifted.iter_mut().for_each(|d| *d /= total);
    MomentumDensity { momenta, density: shifted, cell }
}

/// `J_k = (ħ/m_k) Σ_c Im(Ψ_c* ∂_k Ψ_c)` per axis.
pub fn probability_current(psi: &GridWaveFunction, h: &HamiltonianSpec) -> Result<Vec<Vec<f64>>> {
    h.validate(&psi.grid, psi.spin_dim)?;
    let fft = FftNd::new(&psi.grid);
    let n = psi.grid.len();
    (0..psi.grid.ndim())
        .map(|axis| {
            let mut orders = vec![0; psi.grid.ndim()];
            orders[axis] = 1;
            let d = psi.derivative(&fft, &orders);
            let f = h.hbar / h.masses[axis];
            Ok((0..n)
                .map(|i| {
                    (0..psi.spin_dim)
                        .map(|c| (psi.samples[c * n + i].conj() * d.samples[c * n + i]).im)
                        .sum::<f64>()
                        * f
                })
                .collect())
        })
        .collect()
}

/// RMS of `∂_t ρ + ∇·J`, with `∂_t ρ = (2/ħ) Im(Ψ†HΨ)`.
pub fn continuity_residual(psi: &GridWaveFunction, h: &HamiltonianSpec) -> Result<f64> {
    let hpsi = h.apply(psi)?;
    let j = probability_current(psi, h)?;
    let grid = &psi.grid;
    let fft = FftNd::new(grid);
    let n = grid.len();
    let mut div = vec![0.0; n];
    for (axis, ja) in j.iter().enumerate() {
        let mut buf: Vec<C64> = ja.iter().map(|&x| C64::new(x, 0.0)).collect();
        fft.forward(&mut buf);
        let mut orders = vec![0; grid.ndim()];
        orders[axis] = 1;
        apply_derivative(grid, &mut buf, &orders);
        fft.inverse(&mut buf);
        div.iter_mut().zip(&buf).for_each(|(d, z)| *d += z.re);
    }
    let mut s = 0.0;
    for i in 0..n {
        let drho: f64 = (0..psi.spin_dim)
            .map(|c| (psi.samples[c * n + i].conj() * hpsi.samples[c * n + i]).im)
            .sum::<f64>()
            * 2.0
            / h.hbar;
        s += (drho + div[i]).powi(2);
    }
    Ok((s / n as f64).sqrt())
}

/// Stern-Gerlach magnet and packet parameters (`H = p²/2m − (b + a z)σ_z`,
/// `Φ₀ = (2πd²)^{-1/4} e^{−z²/4d²}`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub mass: f64,
    pub hbar: f64,
}

impl Default for SgParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0, d: 1.0, mass: 1.0, hbar: 1.0 }
    }
}

impl SgParams {
    /// `±aT²/2m`.
    pub fn mean(&self, t: f64, sign: f64) -> f64 {
        sign * self.a * t * t / (2.0 * self.mass)
    }

    /// Packet spread `d√(1 + ħ²t²/(c·m²d⁴))` with the given constant `c`.
    pub fn spread(&self, t: f64, c: f64) -> f64 {
        let d = self.d;
        d * (1.0 + (self.hbar * t).powi(2) / (c * self.mass.powi(2) * d.powi(4))).sqrt()
    }

    pub fn initial(&self, z: f64) -> f64 {
        (2.0 * PI * self.d * self.d).powf(-0.25) * (-z * z / (4.0 * self.d * self.d)).exp()
    }

    /// `Φ_t^{(±)}(z)` by trapezoidal quadrature of the Green's function
    /// against `Φ₀`.
    pub fn green_evolved(&self, z: &[f64], t: f64, sign: f64) -> Vec<C64> {
        if t == 0.0 {
            return z.iter().map(|&x| C64::new(self.initial(x), 0.0)).collect();
        }
        let (m, hb) = (self.mass, self.hbar);
        let f = sign * self.a;
        let half = 14.0 * self.d;
        let nq = 16001;
        let h = 2.0 * half / (nq - 1) as f64;
        let src: Vec<(f64, f64)> = (0..nq)
            .map(|j| {
                let zp = -half + j as f64 * h;
                let w = if j == 0 || j == nq - 1 { 0.5 } else { 1.0 };
                (zp, w * h * self.initial(zp))
            })
            .collect();
        let pref = (m / (2.0 * PI * hb * t.abs())).sqrt() * C64::from_polar(1.0, -t.signum() * PI / 4.0);
        let bphase = (I * sign * self.b * t / hb).exp();
        z.par_iter()
            .map(|&x| {
                let mut acc = C64::new(0.0, 0.0);
                for &(zp, w) in &src {
                    let s = m * (x - zp).powi(2) / (2.0 * t) + f * t * (x + zp) / 2.0
                        - f * f * t.powi(3) / (24.0 * m);
                    acc += C64::from_polar(w, s / hb);
                }
                acc * pref * bphase
            })
            .collect()
    }

    /// `∫_0^∞ |Φ_t^{(sign)}|² dz` in closed form.
    pub fn upper_weight(&self, t: f64, sign: f64) -> f64 {
        let s = self.spread(t, 4.0);
        let mu = self.mean(t, sign);
        0.5 * statrs::function::erf::erfc(-mu / (s * std::f64::consts::SQRT_2))
    }
}

/// Closed-form reference states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticState {
    /// Product of freely evolving Gaussians, one per axis:
    /// `ψ₀ ∝ e^{−(x−c)²/4d² + ik(x−c)}`.
    Gaussian {
        center: Vec<f64>,
        width: Vec<f64>,
        momentum: Vec<f64>,
        mass: f64,
        hbar: f64,
    },
    /// `(x + iy) e^{−αr²/2}` in a 2D isotropic trap, `α = mω/ħ`.
    Oscillator2d11 { mass: f64, omega: f64, hbar: f64 },
    /// `Σ_n c_n φ_n(x) e^{−i(n+½)ωt}` in a 1D trap.
    HarmonicSuperposition {
        coefficients: Vec<[f64; 2]>,
        mass: f64,
        omega: f64,
        hbar: f64,
    },
    /// Spinor `αΦ^{(+)}_t ψ⁺ + βΦ^{(−)}_t ψ⁻` for the Stern-Gerlach magnet.
    SternGerlach { params: SgParams, alpha: [f64; 2], beta: [f64; 2] },
    /// The two-particle example with `V = ¼(x−y)²`, `ħ = m = 1`.
    TwoParticle,
}

/// Normalised Hermite functions `φ_0..φ_{n_max}` at `ξ = √α x`.
pub fn hermite_functions(xi: f64, alpha: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let p0 = (alpha / PI).powf(0.25) * (-xi * xi / 2.0).exp();
    out.push(p0);
    if n_max >= 1 {
        out.push(std::f64::consts::SQRT_2 * xi * p0);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * xi * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Two-particle example at time `t`.
pub fn two_particle(x: f64, y: f64, t: f64) -> C64 {
    let s = C64::new(1.0, t);
    let u = x - y;
    let w = x + y;
    let e = -0.25 * (u * u + w * w / s);
    s.powf(-0.5) * (-I * t / 2.0).exp() * e.exp() / PI.sqrt()
}

/// `V = ¼(x − y)²`.
pub fn two_particle_potential(q: &[f64]) -> f64 {
    0.25 * (q[0] - q[1]).powi(2)
}

impl AnalyticState {
    pub fn spin_dim(&self) -> usize {
        match self {
            AnalyticState::SternGerlach { .. } => 2,
            _ => 1,
        }
    }

    pub fn evaluate(&self, grid: &GridSpec, t: f64) -> Result<GridWaveFunction> {
        match self {
            AnalyticState::Gaussian { center, width, momentum, mass, hbar } => {
                if center.len() != grid.ndim() || width.len() != grid.ndim() || momentum.len() != grid.ndim() {
                    return Err(Error::Dimension("Gaussian parameters need one entry per axis".into()));
                }
                let (m, hb) = (*mass, *hbar);
                let v = GridWaveFunction::from_fn(grid, |q| {
                    let mut z = C64::new(1.0, 0.0);
                    for a in 0..q.len() {
                        let (c, d, k) = (center[a], width[a], momentum[a]);
                        let s = C64::new(1.0, hb * t / (2.0 * m * d * d));
                        let vel = hb * k / m;
                        let u = q[a] - c - vel * t;
                        let phase = k * (q[a] - c) - hb * k * k * t / (2.0 * m);
                        z *= (2.0 * PI * d * d).powf(-0.25) * s.powf(-0.5)
                            * (-(u * u) / (4.0 * d * d * s) + I * phase).exp();
                    }
                    z
                })?;
                Ok(v.with_time(t))
            }
            AnalyticState::Oscillator2d11 { mass, omega, hbar } => {
                if grid.ndim() != 2 {
                    return Err(Error::Dimension("oscillator2d_11 needs a 2-axis grid".into()));
                }
                let alpha = mass * omega / hbar;
                let phase = (-I * 2.0 * omega * t).exp();
                let v = GridWaveFunction::from_fn(grid, |q| {
                    let r2 = q[0] * q[0] + q[1] * q[1];
                    C64::new(q[0], q[1]) * (alpha / PI.sqrt()) * (-alpha * r2 / 2.0).exp() * phase
                })?;
                Ok(v.with_time(t))
            }
            AnalyticState::HarmonicSuperposition { coefficients, mass, omega, hbar } => {
                if grid.ndim() != 1 {
                    return Err(Error::Dimension("harmonic superposition needs a 1-axis grid".into()));
                }
                let alpha = mass * omega / hbar;
                let cs: Vec<C64> = coefficients
                    .iter()
                    .enumerate()
                    .map(|(n, c)| C64::new(c[0], c[1]) * (-I * (n as f64 + 0.5) * omega * t).exp())
                    .collect();
                let nmax = cs.len().saturating_sub(1);
                let v = GridWaveFunction::from_fn(grid, |q| {
                    let phi = hermite_functions(alpha.sqrt() * q[0], alpha, nmax);
                    cs.iter().zip(&phi).map(|(c, p)| c * p).sum()
                })?;
                Ok(v.with_time(t))
            }
            AnalyticState::SternGerlach { params, alpha, beta } => {
                if grid.ndim() != 1 {
                    return Err(Error::Dimension("Stern-Gerlach state needs a 1-axis grid".into()));
                }
                let z = grid.axis_coords(0);
                let up = params.green_evolved(&z, t, 1.0);
                let dn = params.green_evolved(&z, t, -1.0);
                let (ca, cb) = (C64::new(alpha[0], alpha[1]), C64::new(beta[0], beta[1]));
                let mut s: Vec<C64> = up.iter().map(|u| ca * u).collect();
                s.extend(dn.iter().map(|d| cb * d));
                GridWaveFunction::new(grid.clone(), 2, s, t)
            }
            AnalyticState::TwoParticle => {
                if grid.ndim() != 2 {
                    return Err(Error::Dimension("two-particle state needs a 2-axis grid".into()));
                }
                Ok(GridWaveFunction::from_fn(grid, |q| two_particle(q[0], q[1], t))?.with_time(t))
            }
        }
    }
}

/// Closed-form evaluation of `state` on `grid` at time `t`.
pub fn analytic(state: &AnalyticState, grid: &GridSpec, t: f64) -> Result<GridWaveFunction> {
    state.evaluate(grid, t)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WaveMeta {
    grid: GridSpec,
    spin_dim: usize,
    time: f64,
}

impl GridWaveFunction {
    /// Metadata JSON `{grid, spin_dim, time}`.
    pub fn metadata_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WaveMeta {
            grid: self.grid.clone(),
            spin_dim: self.spin_dim,
            time: self.time,
        })?)
    }

    /// CSV rows `(i0[, i1], component, re, im)`.
    pub fn samples_csv(&self) -> String {
        let n = self.grid.len();
        let mut out = String::new();
        let idx_names: Vec<String> = (0..self.grid.ndim()).map(|a| format!("i{a}")).collect();
        writeln!(out, "{},component,re,im", idx_names.join(",")).unwrap();
        for c in 0..self.spin_dim {
            for i in 0..n {
                let z = self.samples[c * n + i];
                let idx: Vec<String> = self.grid.unflatten(i).iter().map(|j| j.to_string()).collect();
                writeln!(out, "{},{c},{:.16e},{:.16e}", idx.join(","), z.re, z.im).unwrap();
            }
        }
        out
    }

    pub fn from_json_csv(meta: &str, csv: &str) -> Result<Self> {
        let meta: WaveMeta = serde_json::from_str(meta)?;
        let grid = GridSpec::new(meta.grid.axes)?;
        let n = grid.len();
        let nd = grid.ndim();
        let mut samples = vec![C64::new(0.0, 0.0); n * meta.spin_dim];
        let mut seen = vec![false; samples.len()];
        for (line_no, line) in csv.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != nd + 3 {
                return Err(Error::Parse(format!("line {}: expected {} fields", line_no + 1, nd + 3)));
            }
            let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)));
            let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", line_no + 1)));
            let mut flat = 0;
            for a in 0..nd {
                let j = parse_u(fields[a])?;
                if j >= grid.axes[a].points {
                    return Err(Error::Parse(format!("line {}: index out of range", line_no + 1)));
                }
                flat += j * grid.stride(a);
            }
            let c = parse_u(fields[nd])?;
            if c >= meta.spin_dim {
                return Err(Error::Parse(format!("line {}: component out of range", line_no + 1)));
            }
            let k = c * n + flat;
            samples[k] = C64::new(parse_f(fields[nd + 1])?, parse_f(fields[nd + 2])?);
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse("CSV does not cover every sample".into()));
        }
        let psi = GridWaveFunction::new(grid, meta.spin_dim, samples, meta.time)?;
        psi.require_normalized(1e-6)?;
        psi.check_boundary()?;
        Ok(psi)
    }

    /// Writes `<stem>.json` and `<stem>.csv`.
    pub fn write_files(&self, stem: &Path) -> Result<()> {
        let io = |p: &Path, e| Error::Io { path: p.display().to_string(), source: e };
        let j = stem.with_extension("json");
        let c = stem.with_extension("csv");
        std::fs::write(&j, self.metadata_json()?).map_err(|e| io(&j, e))?;
        std::fs::write(&c, self.samples_csv()).map_err(|e| io(&c, e))?;
        Ok(())
    }

    pub fn read_files(stem: &Path) -> Result<Self> {
        let io = |p: &Path, e| Error::Io { path: p.display().to_string(), source: e };
        let j = stem.with_extension("json");
        let c = stem.with_extension("csv");
        let meta = std::fs::read_to_string(&j).map_err(|e| io(&j, e))?;
        let csv = std::fs::read_to_string(&c).map_err(|e| io(&c, e))?;
        Self::from_json_csv(&meta, &csv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(center: f64, d: f64, k: f64) -> AnalyticState {
        AnalyticState::Gaussian {
            center: vec![center],
            width: vec![d],
            momentum: vec![k],
            mass: 1.0,
            hbar: 1.0,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::line(0.0, 1.0, 48).is_err());
        assert!(GridSpec::line(0.0, 1.0, 16).is_err());
        assert!(GridSpec::line(1.0, 0.0, 64).is_err());
        let g = GridSpec::square(-1.0, 1.0, 32).unwrap();
        assert_eq!(g.len(), 1024);
        assert_eq!(g.coords(33), vec![-1.0 + 1.0 / 16.0, -1.0 + 1.0 / 16.0]);
    }

    #[test]
    fn fft_round_trip_2d() {
        let g = GridSpec::new(vec![
            Axis { min: 0.0, max: 1.0, points: 32 },
            Axis { min: 0.0, max: 2.0, points: 64 },
        ])
        .unwrap();
        let fft = FftNd::new(&g);
        let orig: Vec<C64> = (0..g.len()).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut buf = orig.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        let err = buf.iter().zip(&orig).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let g = GridSpec::line(0.0, 2.0 * PI, 64).unwrap();
        let psi = GridWaveFunction::from_fn(&g, |q| C64::new((3.0 * q[0]).sin(), 0.0)).unwrap();
        let d = psi.derivative(&FftNd::new(&g), &[1]);
        for (i, z) in d.samples().iter().enumerate() {
            let x = g.coords(i)[0];
            assert!((z.re - 3.0 * (3.0 * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn free_gaussian_matches_closed_form() {
        let g = GridSpec::line(-40.0, 40.0, 512).unwrap();
        let st = gaussian(-5.0, 1.0, 2.0);
        let psi0 = st.evaluate(&g, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        let out = evolve(&psi0, &h, 0.01, 300).unwrap();
        let exact = st.evaluate(&g, 3.0).unwrap();
        assert!(out.max_abs_diff(&exact) < 1e-10);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_returns_after_period() {
        let g = GridSpec::line(-16.0, 16.0, 256).unwrap();
        let psi0 = GridWaveFunction::from_fn(&g, |q| {
            C64::new(PI.powf(-0.25) * (-(q[0] - 2.0).powi(2) / 2.0).exp(), 0.0)
        })
        .unwrap();
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(&g, |q| 0.5 * q[0] * q[0]);
        let steps = 2000;
        let out = evolve(&psi0, &h, 2.0 * PI / steps as f64, steps).unwrap();
        let d0 = psi0.density();
        let err = out.density().iter().zip(&d0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn trap_superposition_matches_eigen_evolution() {
        let g = GridSpec::line(-12.0, 12.0, 256).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let st = AnalyticState::HarmonicSuperposition {
            coefficients: vec![[s, 0.0], [s, 0.0]],
            mass: 1.0,
            omega: 1.0,
            hbar: 1.0,
        };
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(&g, |q| 0.5 * q[0] * q[0]);
        let out = evolve(&st.evaluate(&g, 0.0).unwrap(), &h, 0.001, 1000).unwrap();
        assert!(out.max_abs_diff(&st.evaluate(&g, 1.0).unwrap()) < 1e-6);
    }

    #[test]
    fn sg_mean_and_green_oracle() {
        let g = GridSpec::line(-40.0, 40.0, 1024).unwrap();
        let p = SgParams::default();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let st = AnalyticState::SternGerlach { params: p, alpha: [s, 0.0], beta: [s, 0.0] };
        let h = HamiltonianSpec::free(vec![1.0]).with_coupling(SpinCoupling {
            qubit: 0,
            axis: 0,
            direction: [0.0, 0.0, 1.0],
            a: p.a,
            b: p.b,
        });
        let t = 2.0;
        let out = evolve(&st.evaluate(&g, 0.0).unwrap(), &h, 5e-4, 4000).unwrap();
        let exact = st.evaluate(&g, t).unwrap();
        let rms = out.rms_diff(&exact).unwrap();
        assert!(rms < 1e-8, "{rms}");
        let z = g.axis_coords(0);
        let up = &out.component(0);
        let w: f64 = up.iter().map(|u| u.norm_sqr()).sum();
        let mean: f64 = up.iter().zip(&z).map(|(u, z)| u.norm_sqr() * z).sum::<f64>() / w;
        assert!((mean - p.mean(t, 1.0)).abs() < 1e-6 * p.mean(t, 1.0));
    }

    #[test]
    fn momentum_density_of_boosted_gaussian() {
        let g = GridSpec::line(-32.0, 32.0, 512).unwrap();
        let md = momentum_density(&gaussian(0.0, 1.0, 1.5).evaluate(&g, 0.0).unwrap(), 1.0);
        let dp = md.cell;
        let total: f64 = md.density.iter().sum::<f64>() * dp;
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = md.density.iter().zip(&md.momenta[0]).map(|(d, p)| d * p).sum::<f64>() * dp;
        let var: f64 = md.density.iter().zip(&md.momenta[0]).map(|(d, p)| d * (p - mean).powi(2)).sum::<f64>() * dp;
        assert!((mean - 1.5).abs() < 1e-10);
        // Fourier pair of e^{-x²/4d²}: momentum variance ħ²/4d²
        assert!((var - 0.25).abs() < 1e-10);
    }

    #[test]
    fn currents() {
        let g = GridSpec::square(-8.0, 8.0, 128).unwrap();
        let st = AnalyticState::Oscillator2d11 { mass: 1.0, omega: 1.0, hbar: 1.0 };
        let psi = st.evaluate(&g, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0, 1.0]).with_potential(&g, |q| 0.5 * (q[0] * q[0] + q[1] * q[1]));
        let j = probability_current(&psi, &h).unwrap();
        let rho = psi.density();
        for i in (0..g.len()).step_by(97) {
            let q = g.coords(i);
            let r2 = q[0] * q[0] + q[1] * q[1];
            if rho[i] < 1e-6 || r2 < 1e-6 {
                continue;
            }
            // azimuthal ħ/(m r) ρ: J = ρ(−y, x)/r²
            assert!((j[0][i] + rho[i] * q[1] / r2).abs() < 1e-9);
            assert!((j[1][i] - rho[i] * q[0] / r2).abs() < 1e-9);
        }
        assert!(continuity_residual(&psi, &h).unwrap() < 1e-6);
        let real = GridWaveFunction::from_fn(&g, |q| C64::new((-(q[0] * q[0] + q[1] * q[1])).exp(), 0.0)).unwrap();
        assert!(probability_current(&real, &h).unwrap().iter().flatten().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn two_particle_solves_schrodinger() {
        let g = GridSpec::square(-12.0, 12.0, 128).unwrap();
        let h = HamiltonianSpec::free(vec![1.0, 1.0]).with_potential(&g, two_particle_potential);
        let t = 1.3;
        let eps = 1e-4;
        let psi = AnalyticState::TwoParticle.evaluate(&g, t).unwrap();
        let plus = AnalyticState::TwoParticle.evaluate(&g, t + eps).unwrap();
        let minus = AnalyticState::TwoParticle.evaluate(&g, t - eps).unwrap();
        let hpsi = h.apply(&psi).unwrap();
        let n = g.len();
        let mut s = 0.0;
        for i in 0..n {
            let dt = (plus.samples()[i] - minus.samples()[i]) / (2.0 * eps);
            s += (I * dt - hpsi.samples()[i]).norm_sqr();
        }
        assert!((s / n as f64).sqrt() < 1e-5);
        let z0 = AnalyticState::TwoParticle.evaluate(&g, 0.0).unwrap();
        let i = g.len() / 2 + 70;
        let q = g.coords(i);
        assert!((z0.samples()[i].re - (-(q[0] * q[0] + q[1] * q[1]) / 2.0).exp() / PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wrap_guard_trips() {
        let g = GridSpec::line(-8.0, 8.0, 64).unwrap();
        let psi = gaussian(0.0, 1.0, 0.0).evaluate(&g, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        assert!(matches!(evolve(&psi, &h, 0.1, 200), Err(Error::WrapAround { .. })));
    }

    #[test]
    fn step_guard_trips() {
        let g = GridSpec::line(-20.0, 20.0, 256).unwrap();
        let psi = gaussian(0.0, 1.0, 0.0).evaluate(&g, 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]).with_potential(&g, |q| 10.0 * q[0] * q[0]);
        assert!(matches!(evolve(&psi, &h, 0.01, 10), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn json_csv_round_trip() {
        let g = GridSpec::line(-10.0, 10.0, 64).unwrap();
        let psi = gaussian(0.5, 1.0, 0.7).evaluate(&g, 0.0).unwrap();
        let back = GridWaveFunction::from_json_csv(&psi.metadata_json().unwrap(), &psi.samples_csv()).unwrap();
        assert_eq!(back, psi);
    }
}
