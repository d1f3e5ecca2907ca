//! Canonical measurement scenarios. Each is an [`ExperimentSpec`]: a ready
//! state for the apparatus, an evolution and a calibration `F` from final
//! configurations to labels. Experiments can be run as Bohmian Monte Carlo
//! ([`run`]) or reduced to the POVM they define ([`povm_of_experiment`]).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::{
    axis_tv, integrate_ensemble, sample_equilibrium, transport, AxisTable, Configuration,
    EquivarianceReport, FieldSnapshot, IntegrateOptions, ProductSumSnapshot, ProductTerm,
    Trajectory, TrajectoryStatus,
};
use crate::error::{Error, Result};
use crate::formalism::{Label, Povm};
use crate::hilbert::{HermitianOperator, Operator, StateVector};
use crate::stats::{self, tv_distance, Bins, TV_BINS};
use crate::wavefield::{
    momentum_density, AnalyticState, FftNd, GridSpec, GridWaveFunction, HamiltonianSpec,
    Propagator, SgParams, SpinCoupling, SUPPORT_FLOOR,
};

/// Closure tolerance for POVMs extracted by grid quadrature.
pub const QUADRATURE_CLOSURE_TOL: f64 = 1e-4;
/// A run is flagged when more than this fraction of trajectories aborted.
pub const ABORT_FLAG_FRACTION: f64 = 0.005;

/// State of the measured system before it meets the apparatus.
#[derive(Clone, Debug)]
pub enum SystemState {
    /// Spin state; spatial degrees of freedom come from the ready state.
    Spinor(StateVector),
    /// Wave function on the system's own axes.
    Field(GridWaveFunction),
}

/// Apparatus ready state `Φ₀`.
#[derive(Clone, Debug)]
pub enum ReadyState {
    /// The system wave function is the whole composite.
    None,
    /// Scalar pointer wave function on the composite grid; the system is a
    /// spinor multiplying it.
    Pointer(GridWaveFunction),
    /// One-axis pointer appended after the system's single axis.
    Axis(GridWaveFunction),
    /// One one-axis pointer per wing for [`Evolution::Wings`].
    Wings([GridWaveFunction; 2]),
}

#[derive(Clone, Debug)]
pub enum Evolution {
    /// Split-step evolution of the composite on its grid.
    Grid { hamiltonian: HamiltonianSpec, duration: f64, dt: f64 },
    /// Two spin-1/2 particles on separate axes, each evolving under its own
    /// one-axis Hamiltonian acting on its qubit. The composite is a sum of
    /// products of wing solutions.
    Wings { hamiltonians: [HamiltonianSpec; 2], duration: f64, dt: f64 },
}

impl Evolution {
    pub fn duration(&self) -> f64 {
        match self {
            Evolution::Grid { duration, .. } | Evolution::Wings { duration, .. } => *duration,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Evolution::Grid { dt, .. } | Evolution::Wings { dt, .. } => *dt,
        }
    }
}

/// Calibration `F`: final configuration to label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Calibration {
    /// Label component `k` is the sign of `orientation_k · q[axes_k]`; a
    /// zero product reads `+1`.
    Sign { axes: Vec<usize>, orientation: Vec<f64> },
    /// `scale · q[axis]`. `bins` are label-space edges used to discretise
    /// the result for POVM extraction; the outer bins are open-ended.
    Linear { axis: usize, scale: f64, bins: Option<Vec<f64>> },
}

impl Calibration {
    pub fn label(&self, q: &[f64]) -> Label {
        match self {
            Calibration::Sign { axes, orientation } => Label(
                axes.iter()
                    .zip(orientation)
                    .map(|(&a, &s)| if s * q[a] < 0.0 { -1.0 } else { 1.0 })
                    .collect(),
            ),
            Calibration::Linear { axis, scale, .. } => Label(vec![scale * q[*axis]]),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Calibration::Sign { .. })
    }

    /// Per label component: the configuration axis, interval boundaries in
    /// configuration space, and the label value of each interval.
    fn partition(&self) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>> {
        match self {
            Calibration::Sign { axes, orientation } => Ok(axes
                .iter()
                .zip(orientation)
                .map(|(&a, &s)| {
                    let below = if s > 0.0 { -1.0 } else { 1.0 };
                    (a, vec![0.0], vec![below, -below])
                })
                .collect()),
            Calibration::Linear { axis, scale, bins } => {
                let edges = bins.as_ref().ok_or_else(|| {
                    Error::Validation("POVM extraction needs label bins for a linear calibration".into())
                })?;
                if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || *scale == 0.0 {
                    return Err(Error::Validation("label bins must increase".into()));
                }
                let mut cuts: Vec<f64> = edges[1..edges.len() - 1].iter().map(|e| e / scale).collect();
                let mut labels: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                if *scale < 0.0 {
                    cuts.reverse();
                    labels.reverse();
                }
                Ok(vec![(*axis, cuts, labels)])
            }
        }
    }
}

/// Ready state, evolution and calibration.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub name: String,
    pub ready: ReadyState,
    pub evolution: Evolution,
    pub calibration: Calibration,
    /// Trajectory local error tolerance.
    pub tol: f64,
    pub warnings: Vec<String>,
}

/// Product `ψ(x)φ(y)` of a one-axis (possibly spinor) and a one-axis scalar
/// wave function on the two-axis grid.
pub fn product_state(psi: &GridWaveFunction, phi: &GridWaveFunction) -> Result<GridWaveFunction> {
    if psi.grid().ndim() != 1 || phi.grid().ndim() != 1 || phi.spin_dim() != 1 {
        return Err(Error::Dimension("product_state takes one-axis factors, the second scalar".into()));
    }
    let grid = GridSpec::new(vec![psi.grid().axes[0].clone(), phi.grid().axes[0].clone()])?;
    let (n0, n1) = (psi.grid().len(), phi.grid().len());
    let mut samples = Vec::with_capacity(psi.spin_dim() * n0 * n1);
    for c in 0..psi.spin_dim() {
        let f = psi.component(c);
        for fi in f {
            samples.extend(phi.samples().iter().map(|g| fi * g));
        }
    }
    GridWaveFunction::new(grid, psi.spin_dim(), samples, psi.time())
}

/// Evolved one-wing spinors: `columns[w][s]` is wing `w` started in spin
/// basis state `s` times its pointer.
struct WingColumns {
    columns: [[GridWaveFunction; 2]; 2],
}

impl WingColumns {
    /// Composite `Σ_s c_s U(e_s ⊗ Φ₀)` on the product grid.
    fn assemble(&self, coeffs: &[C64]) -> Result<GridWaveFunction> {
        let (g0, g1) = (self.columns[0][0].grid(), self.columns[1][0].grid());
        let grid = GridSpec::new(vec![g0.axes[0].clone(), g1.axes[0].clone()])?;
        let (n0, n1) = (g0.len(), g1.len());
        let mut samples = vec![C64::new(0.0, 0.0); 4 * n0 * n1];
        samples.par_chunks_mut(n1).enumerate().for_each(|(row, out)| {
            let (comp, i) = (row / n0, row % n0);
            let (o1, o2) = (comp / 2, comp % 2);
            for (s, &c) in coeffs.iter().enumerate() {
                if c == C64::new(0.0, 0.0) {
                    continue;
                }
                let f = c * self.columns[0][s / 2].component(o1)[i];
                let g = self.columns[1][s % 2].component(o2);
                for (z, gj) in out.iter_mut().zip(g) {
                    *z += f * gj;
                }
            }
        });
        GridWaveFunction::new(grid, 4, samples, self.columns[0][0].time())
    }
}

fn wing_terms(coeffs: &[C64]) -> Vec<ProductTerm> {
    let mut terms = Vec::new();
    for (s, &c) in coeffs.iter().enumerate() {
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        for comp in 0..4 {
            let (o1, o2) = (comp / 2, comp % 2);
            terms.push(ProductTerm { component: comp, coef: c, f: (s / 2) * 2 + o1, g: (s % 2) * 2 + o2 });
        }
    }
    terms
}

fn wing_snapshot(
    cols: &[[GridWaveFunction; 2]; 2],
    ffts: &[FftNd; 2],
    terms: &[ProductTerm],
    coef: [f64; 2],
) -> Result<ProductSumSnapshot> {
    let tables = |w: usize| -> Result<Vec<AxisTable>> {
        let mut out = Vec::with_capacity(4);
        for col in &cols[w] {
            for o in 0..2 {
                out.push(AxisTable::new(col.component(o), col.grid(), &ffts[w])?);
            }
        }
        Ok(out)
    };
    ProductSumSnapshot::new(cols[0][0].time(), 4, tables(0)?, tables(1)?, terms.to_vec(), coef)
}

impl ExperimentSpec {
    /// Composite initial wave function `ψ ⊗ Φ₀`.
    pub fn compose(&self, system: &SystemState) -> Result<GridWaveFunction> {
        match (&self.ready, system) {
            (ReadyState::None, SystemState::Field(psi)) => Ok(psi.clone()),
            (ReadyState::Pointer(phi), SystemState::Spinor(v)) => {
                GridWaveFunction::spinor_product(v.amplitudes(), phi)
            }
            (ReadyState::Axis(phi), SystemState::Field(psi)) => product_state(psi, phi),
            (ReadyState::Wings(phis), SystemState::Spinor(v)) => {
                if v.dim() != 4 {
                    return Err(Error::Dimension("two-wing experiments take a two-qubit state".into()));
                }
                GridWaveFunction::spinor_product(v.amplitudes(), &product_state(&phis[0], &phis[1])?)
            }
            _ => Err(Error::Validation(format!(
                "{}: system state does not fit the ready state",
                self.name
            ))),
        }
    }

    fn wing_setup(&self) -> Result<(&[HamiltonianSpec; 2], &[GridWaveFunction; 2], f64, f64)> {
        match (&self.evolution, &self.ready) {
            (Evolution::Wings { hamiltonians, duration, dt }, ReadyState::Wings(phis)) => {
                Ok((hamiltonians, phis, *duration, *dt))
            }
            _ => Err(Error::Validation("wing evolution needs wing ready states".into())),
        }
    }

    fn steps(&self) -> Result<(usize, f64)> {
        let (t, dt) = (self.evolution.duration(), self.evolution.dt());
        if !(t >= 0.0 && dt > 0.0) {
            return Err(Error::Validation("duration must be non-negative and dt positive".into()));
        }
        let steps = (t / dt).round() as usize;
        Ok((steps, if steps == 0 { 0.0 } else { t / steps as f64 }))
    }

    /// Runs the wing evolution, calling `visit` with every intermediate set
    /// of columns (including the initial one).
    fn evolve_wings(&self, mut visit: impl FnMut(usize, &[[GridWaveFunction; 2]; 2]) -> Result<()>) -> Result<WingColumns> {
        let (hs, phis, _, _) = self.wing_setup()?;
        let (steps, dt) = self.steps()?;
        let mut cols: [[GridWaveFunction; 2]; 2] = [
            [
                GridWaveFunction::spinor_product(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], &phis[0])?,
                GridWaveFunction::spinor_product(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], &phis[0])?,
            ],
            [
                GridWaveFunction::spinor_product(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], &phis[1])?,
                GridWaveFunction::spinor_product(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], &phis[1])?,
            ],
        ];
        visit(0, &cols)?;
        if steps > 0 {
            let props = [
                Propagator::new(&hs[0], phis[0].grid(), 2, dt)?,
                Propagator::new(&hs[1], phis[1].grid(), 2, dt)?,
            ];
            for step in 0..steps {
                for (w, p) in props.iter().enumerate() {
                    for col in cols[w].iter_mut() {
                        p.step(col, step)?;
                    }
                }
                visit(step + 1, &cols)?;
            }
        }
        for col in cols.iter().flatten() {
            col.check_boundary()?;
        }
        Ok(WingColumns { columns: cols })
    }

    /// `U(ψ ⊗ Φ₀)` at the end of the evolution.
    pub fn evolve(&self, system: &SystemState) -> Result<GridWaveFunction> {
        match &self.evolution {
            Evolution::Grid { hamiltonian, .. } => {
                let psi0 = self.compose(system)?;
                let (steps, dt) = self.steps()?;
                if steps == 0 {
                    return Ok(psi0);
                }
                let out = Propagator::new(hamiltonian, psi0.grid(), psi0.spin_dim(), dt)?.evolve(&psi0, steps)?;
                out.check_boundary()?;
                Ok(out)
            }
            Evolution::Wings { .. } => {
                let SystemState::Spinor(v) = system else {
                    return Err(Error::Validation("two-wing experiments take a spin state".into()));
                };
                self.evolve_wings(|_, _| Ok(()))?.assemble(v.amplitudes())
            }
        }
    }

    /// Integrates `starts` through the evolution; returns trajectories and
    /// the final composite wave function.
    pub fn transport(
        &self,
        system: &SystemState,
        starts: &[Configuration],
    ) -> Result<(Vec<Trajectory>, GridWaveFunction)> {
        let (steps, dt) = self.steps()?;
        let opts = IntegrateOptions { dt: dt.max(f64::MIN_POSITIVE), tol: self.tol, record_every: None };
        match &self.evolution {
            Evolution::Grid { hamiltonian, .. } => {
                let psi0 = self.compose(system)?;
                let run = integrate_ensemble(&psi0, hamiltonian, starts, steps as f64 * dt, &opts)?;
                Ok((run.trajectories, run.final_state))
            }
            Evolution::Wings { .. } => {
                let SystemState::Spinor(v) = system else {
                    return Err(Error::Validation("two-wing experiments take a spin state".into()));
                };
                let (hs, phis, _, _) = self.wing_setup()?;
                let ffts = [FftNd::new(phis[0].grid()), FftNd::new(phis[1].grid())];
                let coef = [hs[0].hbar / hs[0].masses[0], hs[1].hbar / hs[1].masses[0]];
                let terms = wing_terms(v.amplitudes());
                let mut snaps: Vec<ProductSumSnapshot> = Vec::new();
                // snapshots are produced by the wing evolution and consumed
                // pairwise by the integrator
                let mut trajectories = None;
                let mut first = None;
                let mut pending: Vec<ProductSumSnapshot> = Vec::new();
                let cols = self.evolve_wings(|k, cols| {
                    let s = wing_snapshot(cols, &ffts, &terms, coef)?;
                    if k == 0 {
                        first = Some(s);
                    } else {
                        pending.push(s);
                    }
                    Ok(())
                });
                let cols = cols?;
                snaps.append(&mut pending);
                let first = first.ok_or_else(|| Error::Validation("no initial snapshot".into()))?;
                let mut it = snaps.into_iter();
                trajectories.get_or_insert(transport(
                    starts,
                    first,
                    steps,
                    |_| it.next().ok_or_else(|| Error::Validation("snapshot sequence ended early".into())),
                    &opts,
                )?);
                Ok((trajectories.unwrap(), cols.assemble(v.amplitudes())?))
            }
        }
    }
}

/// One Monte Carlo trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub end: Vec<f64>,
    /// `None` when the trajectory aborted.
    pub label: Option<Vec<f64>>,
    pub status: TrajectoryStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFrequency {
    pub label: Vec<f64>,
    pub count: usize,
    pub frequency: f64,
}

/// Result of [`run`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub seed: u64,
    pub n: usize,
    pub trials: Vec<Trial>,
    /// Over completed trials; empty for continuous calibrations.
    pub frequencies: Vec<LabelFrequency>,
    pub label_mean: Vec<f64>,
    pub label_variance: Vec<f64>,
    pub aborted: usize,
    /// More than 0.5% of trajectories aborted.
    pub flagged: bool,
    pub warnings: Vec<String>,
}

impl RunRecord {
    /// Relative frequency of `label` among completed trials.
    pub fn frequency(&self, label: &[f64]) -> f64 {
        let l = Label(label.to_vec());
        self.frequencies
            .iter()
            .find(|f| Label(f.label.clone()).same_as(&l))
            .map_or(0.0, |f| f.frequency)
    }

    /// Labels of the completed trials in trial order.
    pub fn labels(&self) -> Vec<Vec<f64>> {
        self.trials.iter().filter_map(|t| t.label.clone()).collect()
    }

    /// CSV with one row per trial: `trial,status,q0_init[,q1_init],q0_final[,q1_final],label0[,label1]`.
    pub fn trials_csv(&self) -> String {
        let nd = self.trials.first().map_or(0, |t| t.initial.len());
        let nl = self.trials.iter().find_map(|t| t.label.as_ref().map(|l| l.len())).unwrap_or(0);
        let mut out = String::from("trial,status");
        for a in 0..nd {
            out.push_str(&format!(",q{a}_init"));
        }
        for a in 0..nd {
            out.push_str(&format!(",q{a}_final"));
        }
        for k in 0..nl {
            out.push_str(&format!(",label{k}"));
        }
        out.push('\n');
        for (i, t) in self.trials.iter().enumerate() {
            let status = match t.status {
                TrajectoryStatus::Completed => "completed",
                TrajectoryStatus::AbortedNearNode { .. } => "aborted_near_node",
                TrajectoryStatus::LeftDomain { .. } => "left_domain",
            };
            out.push_str(&format!("{i},{status}"));
            for x in t.initial.iter().chain(&t.end) {
                out.push_str(&format!(",{x:.12e}"));
            }
            match &t.label {
                Some(l) => l.iter().for_each(|x| out.push_str(&format!(",{x:.12e}"))),
                None => (0..nl).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        out
    }
}

/// Samples `n` composite configurations from `|ψ ⊗ Φ₀|²`, evolves the field
/// once, integrates every trajectory and applies the calibration.
pub fn run(spec: &ExperimentSpec, system: &SystemState, n: usize, seed: u64) -> Result<RunRecord> {
    Ok(run_with_state(spec, system, n, seed)?.0)
}

/// [`run`] that also returns the final composite wave function.
pub fn run_with_state(
    spec: &ExperimentSpec,
    system: &SystemState,
    n: usize,
    seed: u64,
) -> Result<(RunRecord, GridWaveFunction)> {
    let psi0 = spec.compose(system)?;
    let ens = sample_equilibrium(&psi0, n, seed)?;
    let (trajectories, final_state) = spec.transport(system, &ens.members)?;
    Ok((record(spec, seed, trajectories), final_state))
}

fn record(spec: &ExperimentSpec, seed: u64, trajectories: Vec<Trajectory>) -> RunRecord {
    let n = trajectories.len();
    let trials: Vec<Trial> = trajectories
        .into_iter()
        .map(|t| {
            let label = t.completed().then(|| spec.calibration.label(&t.end().0).0);
            Trial { initial: t.start().0.clone(), end: t.end().0.clone(), label, status: t.status }
        })
        .collect();
    let labels: Vec<&Vec<f64>> = trials.iter().filter_map(|t| t.label.as_ref()).collect();
    let aborted = n - labels.len();
    let width = labels.first().map_or(0, |l| l.len());
    let column = |k: usize| labels.iter().map(|l| l[k]).collect::<Vec<f64>>();
    let label_mean = (0..width).map(|k| stats::mean(&column(k))).collect();
    let label_variance = (0..width)
        .map(|k| if labels.len() > 1 { stats::variance(&column(k)) } else { 0.0 })
        .collect();
    let mut frequencies = Vec::new();
    if spec.calibration.is_discrete() && !labels.is_empty() {
        let mut counts: BTreeMap<Vec<String>, (Vec<f64>, usize)> = BTreeMap::new();
        for l in &labels {
            counts.entry(Label((*l).clone()).key()).or_insert(((*l).clone(), 0)).1 += 1;
        }
        frequencies = counts
            .into_values()
            .map(|(label, count)| LabelFrequency { label, count, frequency: count as f64 / labels.len() as f64 })
            .collect();
    }
    RunRecord {
        experiment: spec.name.clone(),
        seed,
        n,
        trials,
        frequencies,
        label_mean,
        label_variance,
        aborted,
        flagged: aborted as f64 > ABORT_FLAG_FRACTION * n as f64,
        warnings: spec.warnings.clone(),
    }
}

/// Fraction of each grid cell (width `dx`, centred at `c`) falling in each
/// interval delimited by `cuts`.
fn cell_fractions(c: f64, dx: f64, cuts: &[f64]) -> Vec<(usize, f64)> {
    let (a, b) = (c - 0.5 * dx, c + 0.5 * dx);
    let mut out = Vec::with_capacity(2);
    let mut lo = f64::NEG_INFINITY;
    for k in 0..=cuts.len() {
        let hi = cuts.get(k).copied().unwrap_or(f64::INFINITY);
        let overlap = b.min(hi) - a.max(lo);
        if overlap > 0.0 {
            out.push((k, overlap / dx));
        }
        lo = hi;
    }
    out
}

/// POVM of the experiment on the span of `basis`:
/// `O[Δ]_{ij} = ∫_{F⁻¹(Δ)} (U(ψ_i⊗Φ₀))† U(ψ_j⊗Φ₀) dq`, by one evolution per
/// basis element and quadrature over grid cells (cells straddling a
/// calibration boundary are split).
pub fn povm_of_experiment(spec: &ExperimentSpec, basis: &[SystemState]) -> Result<Povm> {
    if basis.is_empty() {
        return Err(Error::Validation("empty basis".into()));
    }
    let finals: Vec<GridWaveFunction> = match &spec.evolution {
        Evolution::Wings { .. } => {
            let cols = spec.evolve_wings(|_, _| Ok(()))?;
            basis
                .iter()
                .map(|b| match b {
                    SystemState::Spinor(v) => cols.assemble(v.amplitudes()),
                    SystemState::Field(_) => Err(Error::Validation("two-wing experiments take spin states".into())),
                })
                .collect::<Result<_>>()?
        }
        Evolution::Grid { .. } => basis.iter().map(|b| spec.evolve(b)).collect::<Result<_>>()?,
    };
    povm_from_states(&spec.calibration, &finals)
}

/// Quadrature of the calibration cells against evolved basis states.
pub fn povm_from_states(calibration: &Calibration, finals: &[GridWaveFunction]) -> Result<Povm> {
    let grid = finals[0].grid().clone();
    let sd = finals[0].spin_dim();
    if finals.iter().any(|f| f.grid() != &grid || f.spin_dim() != sd) {
        return Err(Error::Dimension("evolved basis states differ in shape".into()));
    }
    let parts = calibration.partition()?;
    if parts.iter().any(|(a, _, _)| *a >= grid.ndim()) {
        return Err(Error::Validation("calibration axis outside the grid".into()));
    }
    let shape: Vec<usize> = parts.iter().map(|p| p.2.len()).collect();
    let n_labels: usize = shape.iter().product();
    let d = finals.len();
    let n = grid.len();
    let dv = grid.cell_volume();
    // fixed-size chunks summed in order keep the result independent of the
    // thread count
    const CHUNK: usize = 4096;
    let partial: Vec<Vec<C64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = vec![C64::new(0.0, 0.0); n_labels * d * d];
            for p in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let q = grid.coords(p);
                // combined label index and weight for every interval tuple
                let mut combos = vec![(0usize, 1.0f64)];
                for (a, cuts, _) in &parts {
                    let fr = cell_fractions(q[*a], grid.dx(*a), cuts);
                    let mut next = Vec::with_capacity(combos.len() * fr.len());
                    for &(idx, w) in &combos {
                        for &(k, f) in &fr {
                            next.push((idx * (cuts.len() + 1) + k, w * f));
                        }
                    }
                    combos = next;
                }
                let vals: Vec<Vec<C64>> = finals
                    .iter()
                    .map(|f| (0..sd).map(|c| f.samples()[c * n + p]).collect())
                    .collect();
                for i in 0..d {
                    for j in 0..d {
                        let g: C64 = (0..sd).map(|c| vals[i][c].conj() * vals[j][c]).sum::<C64>() * dv;
                        for &(l, w) in &combos {
                            acc[(l * d + i) * d + j] += g * w;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![C64::new(0.0, 0.0); n_labels * d * d];
    for part in partial {
        acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
    }
    let mut outcomes = Vec::with_capacity(n_labels);
    for l in 0..n_labels {
        let mut label = vec![0.0; parts.len()];
        let mut rest = l;
        for (k, p) in parts.iter().enumerate().rev() {
            let m = p.2.len();
            label[k] = p.2[rest % m];
            rest /= m;
        }
        let rows: Vec<Vec<C64>> = (0..d).map(|i| acc[(l * d + i) * d..(l * d + i + 1) * d].to_vec()).collect();
        let op = Operator::from_rows(&rows)?;
        outcomes.push((Label(label), HermitianOperator::symmetrized(&op)));
    }
    let sum = outcomes
        .iter()
        .fold(Operator::zeros(d), |s, (_, o)| &s + o.op());
    let defect = sum.max_abs_diff(&Operator::identity(d));
    if defect > QUADRATURE_CLOSURE_TOL {
        return Err(Error::Quadrature(format!("closure residual {defect:e} exceeds 1e-4")));
    }
    Povm::with_closure_tol(outcomes, QUADRATURE_CLOSURE_TOL)
}

// ---------------------------------------------------------------------------
// Stern-Gerlach

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgCalibration {
    /// `sign(a·z)`: `+1` means spin up along the field gradient.
    Sign,
    /// `2mz/(aT²)`, whose mean is `⟨σ_z⟩`.
    Spin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SternGerlachConfig {
    pub params: SgParams,
    pub duration: f64,
    pub dt: f64,
    /// Grid is `[-extent, extent)` with `points` samples.
    pub extent: f64,
    pub points: usize,
    pub calibration: SgCalibration,
    pub tol: f64,
}

impl Default for SternGerlachConfig {
    fn default() -> Self {
        Self {
            params: SgParams::default(),
            duration: 4.0,
            dt: 0.004,
            extent: 32.0,
            points: 1024,
            calibration: SgCalibration::Sign,
            tol: 1e-7,
        }
    }
}

/// Spin-`z` Stern-Gerlach magnet on a one-axis spinor grid.
pub fn stern_gerlach(cfg: &SternGerlachConfig) -> Result<ExperimentSpec> {
    let p = &cfg.params;
    if p.a == 0.0 || !(p.d > 0.0 && p.mass > 0.0 && p.hbar > 0.0 && cfg.duration >= 0.0) {
        return Err(Error::Validation("Stern-Gerlach needs a ≠ 0 and positive d, m, ħ, T".into()));
    }
    let grid = GridSpec::line(-cfg.extent, cfg.extent, cfg.points)?;
    let ready = GridWaveFunction::from_fn(&grid, |q| C64::new(p.initial(q[0]), 0.0))?;
    let h = HamiltonianSpec::free(vec![p.mass])
        .with_hbar(p.hbar)
        .with_coupling(SpinCoupling { qubit: 0, axis: 0, direction: [0.0, 0.0, 1.0], a: p.a, b: p.b });
    let t = cfg.duration;
    let calibration = match cfg.calibration {
        SgCalibration::Sign => Calibration::Sign { axes: vec![0], orientation: vec![p.a.signum()] },
        SgCalibration::Spin => Calibration::Linear {
            axis: 0,
            scale: 2.0 * p.mass / (p.a * t * t),
            bins: Some(vec![-1e3, 0.0, 1e3]),
        },
    };
    let mut warnings = Vec::new();
    let (mean, spread) = (p.mean(t, 1.0).abs(), p.spread(t, 4.0));
    if mean < 3.0 * spread {
        warnings.push(format!(
            "insufficient separation: packet mean {mean:.3} < 3 x spread {spread:.3} at T = {t}"
        ));
    }
    Ok(ExperimentSpec {
        name: "stern-gerlach".into(),
        ready: ReadyState::Pointer(ready),
        evolution: Evolution::Grid { hamiltonian: h, duration: t, dt: cfg.dt },
        calibration,
        tol: cfg.tol,
        warnings,
    })
}

/// Spin state `αψ⁺ + βψ⁻` with real non-negative `α = √w`, `β = √(1−w)`.
pub fn spin_state(weight_up: f64) -> Result<StateVector> {
    if !(0.0..=1.0).contains(&weight_up) {
        return Err(Error::Validation("|α|² must lie in [0, 1]".into()));
    }
    StateVector::from_real(&[weight_up.sqrt(), (1.0 - weight_up).sqrt()])
}

/// Packet moments of the solver against the closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgMoments {
    pub time: f64,
    /// Solver mean of the `ψ⁺` packet and `aT²/2m`.
    pub mean: f64,
    pub mean_expected: f64,
    pub mean_rel_error: f64,
    /// Solver standard deviation and the two candidate closed forms
    /// `d√(1 + ħ²t²/(c m²d⁴))` with `c = 2` and `c = 4`.
    pub spread: f64,
    pub spread_c2: f64,
    pub spread_c4: f64,
    /// The constant whose closed form matches the solver.
    pub resolved_constant: f64,
    /// RMS difference between solver and Green's-function spinors, up to a
    /// global phase.
    pub green_rms: f64,
    /// That phase; the splitting error for a linear potential is a pure phase.
    pub green_phase: f64,
}

/// Evolves `ψ⁺ ⊗ Φ₀` and compares moments and the full spinor with the
/// Green's-function oracle.
pub fn sg_moments(cfg: &SternGerlachConfig) -> Result<SgMoments> {
    let spec = stern_gerlach(cfg)?;
    let up = SystemState::Spinor(StateVector::basis(2, 0)?);
    let fin = spec.evolve(&up)?;
    let grid = fin.grid().clone();
    let z = grid.axis_coords(0);
    let rho = fin.density();
    let dz = grid.dx(0);
    let mean: f64 = z.iter().zip(&rho).map(|(z, r)| z * r * dz).sum();
    let var: f64 = z.iter().zip(&rho).map(|(z, r)| (z - mean).powi(2) * r * dz).sum();
    let p = &cfg.params;
    let t = cfg.duration;
    let oracle = AnalyticState::SternGerlach { params: *p, alpha: [1.0, 0.0], beta: [0.0, 0.0] }.evaluate(&grid, t)?;
    let spread = var.sqrt();
    let (c2, c4) = (p.spread(t, 2.0), p.spread(t, 4.0));
    let expected = p.mean(t, 1.0);
    Ok(SgMoments {
        time: t,
        mean,
        mean_expected: expected,
        mean_rel_error: if expected == 0.0 { mean.abs() } else { ((mean - expected) / expected).abs() },
        spread,
        spread_c2: c2,
        spread_c4: c4,
        resolved_constant: if (spread - c4).abs() <= (spread - c2).abs() { 4.0 } else { 2.0 },
        green_rms: fin.rms_diff_modulo_phase(&oracle)?,
        green_phase: fin.inner(&oracle)?.arg(),
    })
}

/// One entry of the `T`-doubling sequence of [`sg_povm_limit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgPovmPoint {
    pub time: f64,
    /// `O_T(+1) = diag(p⁺, p⁻)` entries and the closed-form values.
    pub p_up: f64,
    pub p_down: f64,
    pub p_up_exact: f64,
    pub p_down_exact: f64,
    /// `max|O_T(+1)_{01}|`.
    pub off_diagonal: f64,
    pub closure_defect: f64,
    /// `‖O_T − P^{σ_z}‖_max` over both outcomes.
    pub distance_to_pvm: f64,
}

/// Extracted `O_T` for `T = t0, 2t0, 4t0, …` until successive `O_T(+1)`
/// differ by less than `tol` (at most `max_doublings` doublings). Grid and
/// step are chosen per `T` to keep the packets resolved.
pub fn sg_povm_limit(params: SgParams, t0: f64, tol: f64, max_doublings: usize) -> Result<Vec<SgPovmPoint>> {
    let mut out: Vec<SgPovmPoint> = Vec::new();
    let mut t = t0;
    for _ in 0..=max_doublings {
        let cfg = sg_config_for(params, t);
        let spec = stern_gerlach(&cfg)?;
        let basis = [
            SystemState::Spinor(StateVector::basis(2, 0)?),
            SystemState::Spinor(StateVector::basis(2, 1)?),
        ];
        let povm = povm_of_experiment(&spec, &basis)?;
        let plus = povm.effect(&Label(vec![1.0])).ok_or_else(|| Error::Validation("no +1 outcome".into()))?;
        let (pu, pd) = (plus.op().get(0, 0).re, plus.op().get(1, 1).re);
        let pvm_plus = Operator::diagonal(&[1.0, 0.0]);
        let pvm_minus = Operator::diagonal(&[0.0, 1.0]);
        let minus = povm.effect(&Label(vec![-1.0])).map(|m| m.op().clone()).unwrap_or(Operator::zeros(2));
        let point = SgPovmPoint {
            time: t,
            p_up: pu,
            p_down: pd,
            p_up_exact: params.upper_weight(t, 1.0),
            p_down_exact: params.upper_weight(t, -1.0),
            off_diagonal: plus.op().get(0, 1).norm(),
            closure_defect: povm.closure_defect(),
            distance_to_pvm: plus.op().max_abs_diff(&pvm_plus).max(minus.max_abs_diff(&pvm_minus)),
        };
        let done = out
            .last()
            .is_some_and(|prev| (prev.p_up - pu).abs().max((prev.p_down - pd).abs()) < tol);
        out.push(point);
        if done {
            break;
        }
        t *= 2.0;
    }
    Ok(out)
}

/// Grid and step for a Stern-Gerlach run of duration `t`: the box holds
/// both packets to beyond the support floor, the step respects the phase
/// bound on the support, and the grid resolves the momentum kick.
pub fn sg_config_for(params: SgParams, t: f64) -> SternGerlachConfig {
    let reach = params.mean(t, 1.0).abs() + 8.0 * params.spread(t, 4.0);
    let extent = (1.25 * reach).max(16.0);
    let kick = (params.a * t / params.hbar).abs() + 8.0 / params.d;
    let dx_max = PI / (2.0 * kick);
    let mut points = 256;
    while 2.0 * extent / points as f64 > dx_max.min(0.125) {
        points *= 2;
    }
    let vmax = params.b.abs() + params.a.abs() * reach;
    let dt = (0.08 * params.hbar / vmax).min(0.005);
    SternGerlachConfig { params, duration: t, dt, extent, points, calibration: SgCalibration::Sign, tol: 1e-7 }
}

// ---------------------------------------------------------------------------
// Time of flight

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeOfFlightConfig {
    /// Initial Gaussian width, centre and wave number.
    pub d: f64,
    pub center: f64,
    pub momentum: f64,
    pub mass: f64,
    pub hbar: f64,
    pub duration: f64,
    pub dt: f64,
    pub extent: f64,
    pub points: usize,
    pub tol: f64,
}

impl Default for TimeOfFlightConfig {
    fn default() -> Self {
        Self {
            d: 1.0,
            center: 0.0,
            momentum: 0.0,
            mass: 1.0,
            hbar: 1.0,
            duration: 50.0,
            dt: 0.05,
            extent: 256.0,
            points: 2048,
            tol: 1e-7,
        }
    }
}

impl TimeOfFlightConfig {
    pub fn initial_state(&self) -> AnalyticState {
        AnalyticState::Gaussian {
            center: vec![self.center],
            width: vec![self.d],
            momentum: vec![self.momentum],
            mass: self.mass,
            hbar: self.hbar,
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::line(-self.extent, self.extent, self.points)
    }
}

/// Free evolution for `T`, read out as `F_T(x) = m x / T`.
pub fn time_of_flight(cfg: &TimeOfFlightConfig) -> Result<ExperimentSpec> {
    if !(cfg.duration > 0.0) {
        return Err(Error::Validation("time of flight needs T > 0".into()));
    }
    Ok(ExperimentSpec {
        name: "time-of-flight".into(),
        ready: ReadyState::None,
        evolution: Evolution::Grid {
            hamiltonian: HamiltonianSpec::free(vec![cfg.mass]).with_hbar(cfg.hbar),
            duration: cfg.duration,
            dt: cfg.dt,
        },
        calibration: Calibration::Linear { axis: 0, scale: cfg.mass / cfg.duration, bins: None },
        tol: cfg.tol,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeOfFlightReport {
    pub duration: f64,
    /// Empirical `mX_T/T` against `|ψ̃(p)|²`.
    pub tv_empirical: f64,
    /// `|ψ_T|²` pushed through `F_T` against `|ψ̃(p)|²`.
    pub tv_exact: f64,
    pub label_mean: f64,
    pub label_variance: f64,
    pub aborted: usize,
}

/// Momentum bins covering the support of `|ψ̃|²` and the exact bin masses.
fn momentum_reference(psi0: &GridWaveFunction, hbar: f64) -> Result<(Bins, Vec<f64>)> {
    let md = momentum_density(psi0, hbar);
    let bins = Bins::covering_support(&md.momenta[0], md.cell, &md.density, SUPPORT_FLOOR, TV_BINS)?;
    let masses: Vec<f64> = md.density.iter().map(|r| r * md.cell).collect();
    let total: f64 = masses.iter().sum();
    let mut exact = bins.masses_from_cells(&md.momenta[0], md.cell, &masses);
    exact.iter_mut().for_each(|m| *m /= total);
    Ok((bins, exact))
}

/// Bin masses of `|ψ_T|²` under `p = m x / T`.
fn pushed_masses(fin: &GridWaveFunction, scale: f64, bins: &Bins) -> Vec<f64> {
    let grid = fin.grid();
    let xs: Vec<f64> = grid.axis_coords(0).iter().map(|x| x * scale).collect();
    let dx = grid.dx(0);
    let masses: Vec<f64> = fin.density().iter().map(|r| r * dx).collect();
    let total: f64 = masses.iter().sum();
    let mut m = bins.masses_from_cells(&xs, dx * scale.abs(), &masses);
    m.iter_mut().for_each(|v| *v /= total);
    m
}

/// Runs the time-of-flight experiment and compares its label law with the
/// momentum density of the initial state.
pub fn time_of_flight_report(cfg: &TimeOfFlightConfig, n: usize, seed: u64) -> Result<(TimeOfFlightReport, RunRecord)> {
    let spec = time_of_flight(cfg)?;
    let psi0 = cfg.initial_state().evaluate(&cfg.grid()?, 0.0)?;
    let (rec, fin) = run_with_state(&spec, &SystemState::Field(psi0.clone()), n, seed)?;
    let (bins, exact) = momentum_reference(&psi0, cfg.hbar)?;
    let labels: Vec<f64> = rec.labels().iter().map(|l| l[0]).collect();
    let emp = bins.histogram(labels.iter().copied());
    let report = TimeOfFlightReport {
        duration: cfg.duration,
        tv_empirical: tv_distance(&emp, &exact),
        tv_exact: tv_distance(&pushed_masses(&fin, cfg.mass / cfg.duration, &bins), &exact),
        label_mean: rec.label_mean.first().copied().unwrap_or(f64::NAN),
        label_variance: rec.label_variance.first().copied().unwrap_or(f64::NAN),
        aborted: rec.aborted,
    };
    Ok((report, rec))
}

/// Exact-density distance only (no trajectories).
pub fn time_of_flight_exact_tv(cfg: &TimeOfFlightConfig) -> Result<f64> {
    let spec = time_of_flight(cfg)?;
    let psi0 = cfg.initial_state().evaluate(&cfg.grid()?, 0.0)?;
    let fin = spec.evolve(&SystemState::Field(psi0.clone()))?;
    let (bins, exact) = momentum_reference(&psi0, cfg.hbar)?;
    Ok(tv_distance(&pushed_masses(&fin, cfg.mass / cfg.duration, &bins), &exact))
}

// ---------------------------------------------------------------------------
// Equivariance scenarios

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivarianceScenario {
    /// `(φ₀ + φ₁)/√2` in a unit harmonic trap, transported to half a period.
    Trap,
    /// Free Gaussian, `t = 2`.
    Free,
    /// Free Gaussian, no evolution.
    Control,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: EquivarianceScenario,
    pub report: EquivarianceReport,
    /// Distance to the closed-form `|Ψ_t|²` instead of the solver's.
    pub tv_analytic: f64,
}

pub fn equivariance_scenario(s: EquivarianceScenario, n: usize, seed: u64) -> Result<ScenarioReport> {
    let h2 = std::f64::consts::FRAC_1_SQRT_2;
    let (state, grid, h, t, dt) = match s {
        EquivarianceScenario::Trap => {
            let grid = GridSpec::line(-12.0, 12.0, 256)?;
            let h = HamiltonianSpec::free(vec![1.0]).with_potential(&grid, |q| 0.5 * q[0] * q[0]);
            let st = AnalyticState::HarmonicSuperposition {
                coefficients: vec![[h2, 0.0], [h2, 0.0]],
                mass: 1.0,
                omega: 1.0,
                hbar: 1.0,
            };
            (st, grid, h, PI, 0.005)
        }
        EquivarianceScenario::Free | EquivarianceScenario::Control => {
            let grid = GridSpec::line(-24.0, 24.0, 512)?;
            let st = AnalyticState::Gaussian {
                center: vec![0.0],
                width: vec![1.0],
                momentum: vec![0.0],
                mass: 1.0,
                hbar: 1.0,
            };
            let t = if s == EquivarianceScenario::Free { 2.0 } else { 0.0 };
            (st, grid, HamiltonianSpec::free(vec![1.0]), t, 0.01)
        }
    };
    let psi0 = state.evaluate(&grid, 0.0)?;
    let opts = IntegrateOptions { dt, tol: 1e-8, record_every: None };
    let ens = sample_equilibrium(&psi0, n, seed)?;
    let run = integrate_ensemble(&psi0, &h, &ens.members, t, &opts)?;
    let ends: Vec<Vec<f64>> = run.trajectories.iter().filter(|t| t.completed()).map(|t| t.end().0.clone()).collect();
    let axis = axis_tv(&run.final_state, &ends)?;
    let exact = state.evaluate(&grid, t)?;
    let tv_analytic = axis_tv(&exact, &ends)?.into_iter().fold(0.0, f64::max);
    let aborted = run.aborted();
    Ok(ScenarioReport {
        scenario: s,
        report: EquivarianceReport {
            seed,
            n,
            time: t,
            tv_distance: axis.iter().copied().fold(0.0, f64::max),
            axis_tv: axis,
            aborted,
            flagged: aborted as f64 > 1e-3 * n as f64,
        },
        tv_analytic,
    })
}

// ---------------------------------------------------------------------------
// Coupled oscillators

/// `a(t) = ½[(1+t²)^{1/2} + 1]`, `b(t) = ½[(1+t²)^{1/2} − 1]`.
pub fn coupled_coefficients(t: f64) -> (f64, f64) {
    let s = (1.0 + t * t).sqrt();
    (0.5 * (s + 1.0), 0.5 * (s - 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupledOscillatorConfig {
    pub duration: f64,
    pub dt: f64,
    pub tol: f64,
    pub extent: f64,
    pub points: usize,
    /// Recorded points per trajectory (evenly spaced in time).
    pub samples: usize,
}

impl Default for CoupledOscillatorConfig {
    fn default() -> Self {
        Self { duration: 5.0, dt: 0.01, tol: 1e-9, extent: 16.0, points: 256, samples: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledOscillatorReport {
    pub n: usize,
    pub seed: u64,
    /// `max |X_t − (a(t)X + b(t)Y)|` and the same for `Y` over all recorded
    /// times and initial conditions.
    pub max_error: f64,
    /// `max |(X,Y)(t) − swap of the trajectory from (Y,X)|`.
    pub symmetry_error: f64,
    pub aborted: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Integrates `n` equilibrium initial conditions (and their mirror images
/// `(Y, X)`) of the two-particle example and compares with the closed form.
pub fn coupled_oscillator(cfg: &CoupledOscillatorConfig, n: usize, seed: u64) -> Result<CoupledOscillatorReport> {
    let grid = GridSpec::square(-cfg.extent, cfg.extent, cfg.points)?;
    let psi = AnalyticState::TwoParticle.evaluate(&grid, 0.0)?;
    let h = HamiltonianSpec::free(vec![1.0, 1.0]).with_potential(&grid, crate::wavefield::two_particle_potential);
    let ens = sample_equilibrium(&psi, n, seed)?;
    let mut starts = ens.members.clone();
    starts.extend(ens.members.iter().map(|q| Configuration(vec![q.0[1], q.0[0]])));
    let steps = (cfg.duration / cfg.dt).round().max(1.0) as usize;
    let every = (steps / cfg.samples.max(1)).max(1);
    let opts = IntegrateOptions { dt: cfg.dt, tol: cfg.tol, record_every: Some(every) };
    let run = integrate_ensemble(&psi, &h, &starts, cfg.duration, &opts)?;
    let mut max_error: f64 = 0.0;
    for tr in &run.trajectories {
        let (x, y) = (tr.start().0[0], tr.start().0[1]);
        for (t, p) in tr.times.iter().zip(&tr.points) {
            let (a, b) = coupled_coefficients(*t);
            max_error = max_error.max((p.0[0] - (a * x + b * y)).abs()).max((p.0[1] - (b * x + a * y)).abs());
        }
    }
    let mut symmetry_error: f64 = 0.0;
    for (u, v) in run.trajectories[..n].iter().zip(&run.trajectories[n..]) {
        for (p, q) in u.points.iter().zip(&v.points) {
            symmetry_error = symmetry_error.max((p.0[0] - q.0[1]).abs()).max((p.0[1] - q.0[0]).abs());
        }
    }
    let aborted = run.aborted();
    let mut trajectories = run.trajectories;
    trajectories.truncate(n);
    Ok(CoupledOscillatorReport { n, seed, max_error, symmetry_error, aborted, trajectories })
}

// ---------------------------------------------------------------------------
// Oscillator-2D paradox

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParadoxConfig {
    pub extent: f64,
    pub points: usize,
    pub dt: f64,
    pub tol: f64,
    /// Radii at which the angular velocity is checked.
    pub radii: Vec<f64>,
}

impl Default for ParadoxConfig {
    fn default() -> Self {
        Self {
            extent: 8.0,
            points: 256,
            dt: 0.005,
            tol: 1e-7,
            radii: vec![0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParadoxReport {
    pub n: usize,
    pub seed: u64,
    pub period: f64,
    /// Largest `|ω(r) − ħ/(mr²)|` over the checked radii and angles.
    pub angular_velocity_error: f64,
    /// `X_τ` against the exact law of `X₀`.
    pub tv: f64,
    /// `X_τ` against the sampled `X₀` (two-sample, includes both noises).
    pub tv_two_sample: f64,
    pub median_displacement: f64,
    pub fraction_displaced: f64,
    pub aborted: usize,
    pub displacements: Vec<f64>,
}

/// Runs the experiments "read `X₀`" and "evolve one period in the trap,
/// read `X_τ`" on the rotating `(x + iy)e^{−r²/2}` state.
pub fn oscillator2d_paradox(cfg: &ParadoxConfig, n: usize, seed: u64) -> Result<ParadoxReport> {
    let (m, w, hb) = (1.0, 1.0, 1.0);
    let grid = GridSpec::square(-cfg.extent, cfg.extent, cfg.points)?;
    let psi = AnalyticState::Oscillator2d11 { mass: m, omega: w, hbar: hb }.evaluate(&grid, 0.0)?;
    let h = HamiltonianSpec::free(vec![m, m])
        .with_hbar(hb)
        .with_potential(&grid, |q| 0.5 * m * w * w * (q[0] * q[0] + q[1] * q[1]));
    let snap = FieldSnapshot::new(&psi, &h, &FftNd::new(&grid))?;
    let mut angular_velocity_error: f64 = 0.0;
    for &r in &cfg.radii {
        for k in 0..12 {
            let th = 0.1 + k as f64 * PI / 6.0;
            let (x, y) = (r * th.cos(), r * th.sin());
            let v = snap.velocity(&[x, y])?;
            let omega = (x * v[1] - y * v[0]) / (r * r);
            angular_velocity_error = angular_velocity_error.max((omega - hb / (m * r * r)).abs());
        }
    }
    let period = 2.0 * PI / w;
    let ens = sample_equilibrium(&psi, n, seed)?;
    let opts = IntegrateOptions { dt: cfg.dt, tol: cfg.tol, record_every: None };
    let run = integrate_ensemble(&psi, &h, &ens.members, period, &opts)?;
    let done: Vec<&Trajectory> = run.trajectories.iter().filter(|t| t.completed()).collect();
    let x0: Vec<f64> = done.iter().map(|t| t.start().0[0]).collect();
    let xt: Vec<f64> = done.iter().map(|t| t.end().0[0]).collect();
    let displacements: Vec<f64> = x0.iter().zip(&xt).map(|(a, b)| (b - a).abs()).collect();
    let tv = axis_tv(&psi, &xt.iter().map(|&x| vec![x, 0.0]).collect::<Vec<_>>())?[0];
    let marg = psi.marginal(0);
    let bins = Bins::covering_support(&grid.axis_coords(0), grid.dx(0), &marg, SUPPORT_FLOOR, TV_BINS)?;
    let tv_two_sample = tv_distance(&bins.histogram(x0.iter().copied()), &bins.histogram(xt.iter().copied()));
    let fraction_displaced = displacements.iter().filter(|d| **d > 0.05).count() as f64 / displacements.len() as f64;
    Ok(ParadoxReport {
        n,
        seed,
        period,
        angular_velocity_error,
        tv,
        tv_two_sample,
        median_displacement: stats::median(&displacements),
        fraction_displaced,
        aborted: run.aborted(),
        displacements,
    })
}

// ---------------------------------------------------------------------------
// EPRB

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EprbConfig {
    /// Magnet field gradient, packet width, mass and ħ (shared by both wings).
    pub params: SgParams,
    pub duration: f64,
    pub dt: f64,
    pub extent: f64,
    pub points: usize,
    pub tol: f64,
}

impl Default for EprbConfig {
    fn default() -> Self {
        Self { params: SgParams::default(), duration: 4.0, dt: 0.004, extent: 32.0, points: 512, tol: 1e-7 }
    }
}

fn unit(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("setting {v:?} is not a unit vector")));
    }
    Ok(v)
}

/// Two spin-1/2 particles in the singlet, each passing a Stern-Gerlach
/// magnet oriented along its setting; labels `(sign z₁, sign z₂)`.
pub fn eprb(cfg: &EprbConfig, settings: [[f64; 3]; 2]) -> Result<ExperimentSpec> {
    let p = &cfg.params;
    if !(p.a > 0.0 && p.d > 0.0) {
        return Err(Error::Validation("EPRB needs a > 0 and d > 0".into()));
    }
    let grid = GridSpec::line(-cfg.extent, cfg.extent, cfg.points)?;
    let ready = GridWaveFunction::from_fn(&grid, |q| C64::new(p.initial(q[0]), 0.0))?;
    let wing = |n: [f64; 3]| -> Result<HamiltonianSpec> {
        Ok(HamiltonianSpec::free(vec![p.mass])
            .with_hbar(p.hbar)
            .with_coupling(SpinCoupling { qubit: 0, axis: 0, direction: unit(n)?, a: p.a, b: p.b }))
    };
    let mut warnings = Vec::new();
    let (mean, spread) = (p.mean(cfg.duration, 1.0), p.spread(cfg.duration, 4.0));
    if mean < 3.0 * spread {
        warnings.push(format!("insufficient separation: packet mean {mean:.3} < 3 x spread {spread:.3}"));
    }
    Ok(ExperimentSpec {
        name: "eprb".into(),
        ready: ReadyState::Wings([ready.clone(), ready]),
        evolution: Evolution::Wings {
            hamiltonians: [wing(settings[0])?, wing(settings[1])?],
            duration: cfg.duration,
            dt: cfg.dt,
        },
        calibration: Calibration::Sign { axes: vec![0, 1], orientation: vec![1.0, 1.0] },
        tol: cfg.tol,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EprbReport {
    pub settings: [[f64; 3]; 2],
    /// Empirical `Prob(Z¹ = −Z²)` and the quantum value `(1 + a·b)/2`.
    pub anticorrelation: f64,
    pub expected: f64,
    pub sigma: f64,
    pub record: RunRecord,
}

pub fn eprb_run(cfg: &EprbConfig, settings: [[f64; 3]; 2], n: usize, seed: u64) -> Result<EprbReport> {
    let spec = eprb(cfg, settings)?;
    let singlet = SystemState::Spinor(crate::hilbert::pauli::singlet());
    let record = run(&spec, &singlet, n, seed)?;
    let labels = record.labels();
    let anti = labels.iter().filter(|l| l[0] == -l[1]).count() as f64 / labels.len().max(1) as f64;
    let dot: f64 = settings[0].iter().zip(&settings[1]).map(|(a, b)| a * b).sum();
    let expected = 0.5 * (1.0 + dot);
    Ok(EprbReport {
        settings,
        anticorrelation: anti,
        expected,
        sigma: stats::binomial_sigma(expected, labels.len().max(1)),
        record,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// Setting of wing 1 and the two alternatives for wing 2.
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
    /// Monte Carlo fraction of matched trials whose `Z¹` differs.
    pub flip_fraction: f64,
    pub sigma: f64,
    /// `|Ψ₀|²`-weighted lattice quadrature of the same fraction.
    pub expected: f64,
    pub lattice: usize,
    pub n: usize,
}

/// Matched-seed runs with settings `(a, b)` and `(a, c)`: the fraction of
/// trials whose wing-1 result changes with the far setting, and its value
/// by deterministic quadrature over a lattice of initial configurations.
pub fn eprb_flip(cfg: &EprbConfig, a: [f64; 3], b: [f64; 3], c: [f64; 3], n: usize, seed: u64, lattice: usize) -> Result<FlipReport> {
    let singlet = SystemState::Spinor(crate::hilbert::pauli::singlet());
    let (s1, s2) = (eprb(cfg, [a, b])?, eprb(cfg, [a, c])?);
    let r1 = run(&s1, &singlet, n, seed)?;
    let r2 = run(&s2, &singlet, n, seed)?;
    let mut flips = 0usize;
    let mut both = 0usize;
    for (t1, t2) in r1.trials.iter().zip(&r2.trials) {
        if let (Some(l1), Some(l2)) = (&t1.label, &t2.label) {
            both += 1;
            if l1[0] != l2[0] {
                flips += 1;
            }
        }
    }
    let flip_fraction = flips as f64 / both.max(1) as f64;

    // lattice quadrature over the support of |Ψ₀|² = Φ₀(z₁)²Φ₀(z₂)²
    let p = &cfg.params;
    let half = 6.5 * p.d;
    let h = 2.0 * half / lattice as f64;
    let mut starts = Vec::with_capacity(lattice * lattice);
    let mut weights = Vec::with_capacity(lattice * lattice);
    for i in 0..lattice {
        for j in 0..lattice {
            let (x, y) = (-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h);
            let wgt = p.initial(x).powi(2) * p.initial(y).powi(2);
            starts.push(Configuration(vec![x, y]));
            weights.push(wgt);
        }
    }
    let (t1, _) = s1.transport(&singlet, &starts)?;
    let (t2, _) = s2.transport(&singlet, &starts)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((u, v), w) in t1.iter().zip(&t2).zip(&weights) {
        if !(u.completed() && v.completed()) {
            continue;
        }
        den += w;
        let (z1, z2) = (s1.calibration.label(&u.end().0), s2.calibration.label(&v.end().0));
        if z1.0[0] != z2.0[0] {
            num += w;
        }
    }
    Ok(FlipReport {
        a,
        b,
        c,
        flip_fraction,
        sigma: stats::binomial_sigma(flip_fraction.max(1.0 / both.max(1) as f64), both.max(1)),
        expected: if den > 0.0 { num / den } else { f64::NAN },
        lattice,
        n,
    })
}
