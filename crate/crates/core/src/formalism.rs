//! Measurement calculus: PVMs, POVMs, strong formal measurements and
//! experiments, sequential measurements, density matrices and instruments.
//!
//! Results are labelled by real vectors ([`Label`]); a scalar result is a
//! length-1 label. Distinct outcomes may share a label (a non-invertible
//! calibration). Grouping by label compares labels after rounding every
//! component to 12 significant digits.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::hilbert::{
    commuting_family, spectral_decompose, HermitianOperator, Operator, StateVector,
    TensorProduct, UnitaryOperator, MAX_DIM,
};
use crate::rng::Stream;
use crate::wavefield::GridWaveFunction;

/// Closure tolerance `Σ O_α = I` for finite-dimensional constructions.
pub const CLOSURE_TOL: f64 = 1e-10;
/// Minimum eigenvalue accepted for a positive operator.
pub const POSITIVITY_TOL: f64 = -1e-10;
/// Probability below which an outcome counts as impossible.
pub const IMPOSSIBLE_PROB: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label(pub Vec<f64>);

impl Label {
    pub fn scalar(x: f64) -> Self {
        Label(vec![x])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    /// Key identifying labels equal to 12 significant digits.
    pub fn key(&self) -> Vec<String> {
        self.0
            .iter()
            .map(|&x| {
                let x = if x == 0.0 { 0.0 } else { x };
                format!("{:.11e}", x)
            })
            .collect()
    }

    pub fn same_as(&self, other: &Label) -> bool {
        self.key() == other.key()
    }
}

impl From<f64> for Label {
    fn from(x: f64) -> Self {
        Label::scalar(x)
    }
}

/// Groups `(label, operator)` pairs by label, summing operators that share
/// one. Order of first appearance is kept.
fn group_by_label(items: impl IntoIterator<Item = (Label, Operator)>) -> Vec<(Label, Operator)> {
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut out: Vec<(Label, Operator)> = Vec::new();
    for (l, op) in items {
        match index.get(&l.key()) {
            Some(&i) => out[i].1 = &out[i].1 + &op,
            None => {
                index.insert(l.key(), out.len());
                out.push((l, op));
            }
        }
    }
    out
}

fn closure_defect<'a>(dim: usize, ops: impl Iterator<Item = &'a Operator>) -> f64 {
    let sum = ops.fold(Operator::zeros(dim), |acc, o| &acc + o);
    sum.max_abs_diff(&Operator::identity(dim))
}

/// Statistics of a weak formal measurement: any labelled family of effects.
pub trait Effects {
    fn dim(&self) -> usize;
    fn effects(&self) -> Vec<(Label, Operator)>;
}

/// Projection-valued measure with distinct labels.
#[derive(Clone, Debug)]
pub struct Pvm {
    outcomes: Vec<(Label, HermitianOperator)>,
}

impl Pvm {
    pub fn new(outcomes: Vec<(Label, HermitianOperator)>) -> Result<Self> {
        let dim = outcomes
            .first()
            .map(|o| o.1.dim())
            .ok_or_else(|| Error::Validation("PVM needs at least one outcome".into()))?;
        for (i, (l, p)) in outcomes.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::Dimension("PVM projectors of unequal dims".into()));
            }
            if (p.op() * p.op()).max_abs_diff(p.op()) > CLOSURE_TOL {
                return Err(Error::Validation(format!("PVM element {i} is not idempotent")));
            }
            for (l2, q) in &outcomes[i + 1..] {
                if l.same_as(l2) {
                    return Err(Error::Validation("PVM labels must be distinct".into()));
                }
                if (p.op() * q.op()).max_abs() > CLOSURE_TOL {
                    return Err(Error::Validation("PVM projectors are not orthogonal".into()));
                }
            }
        }
        let defect = closure_defect(dim, outcomes.iter().map(|o| o.1.op()));
        if defect > CLOSURE_TOL {
            return Err(Error::Validation(format!("PVM does not sum to identity ({defect:e})")));
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(Label, HermitianOperator)] {
        &self.outcomes
    }

    pub fn projector(&self, label: &Label) -> Option<&HermitianOperator> {
        self.outcomes.iter().find(|o| o.0.same_as(label)).map(|o| &o.1)
    }

    pub fn to_povm(&self) -> Povm {
        Povm {
            outcomes: self
                .outcomes
                .iter()
                .map(|(l, p)| (l.clone(), p.clone()))
                .collect(),
        }
    }
}

impl Effects for Pvm {
    fn dim(&self) -> usize {
        self.outcomes[0].1.dim()
    }

    fn effects(&self) -> Vec<(Label, Operator)> {
        self.outcomes
            .iter()
            .map(|(l, p)| (l.clone(), p.op().clone()))
            .collect()
    }
}

/// Positive-operator-valued measure.
#[derive(Clone, Debug)]
pub struct Povm {
    outcomes: Vec<(Label, HermitianOperator)>,
}

impl Povm {
    pub fn new(outcomes: Vec<(Label, HermitianOperator)>) -> Result<Self> {
        Self::with_closure_tol(outcomes, CLOSURE_TOL)
    }

    /// Same validation as [`Povm::new`] with a custom closure tolerance, for
    /// effects obtained by quadrature.
    pub fn with_closure_tol(outcomes: Vec<(Label, HermitianOperator)>, tol: f64) -> Result<Self> {
        let dim = outcomes
            .first()
            .map(|o| o.1.dim())
            .ok_or_else(|| Error::Validation("POVM needs at least one outcome".into()))?;
        for (i, (_, o)) in outcomes.iter().enumerate() {
            if o.dim() != dim {
                return Err(Error::Dimension("POVM effects of unequal dims".into()));
            }
            let m = o.op().min_eigenvalue();
            if m < POSITIVITY_TOL {
                return Err(Error::Validation(format!(
                    "POVM effect {i} is not positive (min eigenvalue {m:e})"
                )));
            }
        }
        let defect = closure_defect(dim, outcomes.iter().map(|o| o.1.op()));
        if defect > tol {
            return Err(Error::Measurement(format!(
                "effects do not sum to identity (defect {defect:e})"
            )));
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(Label, HermitianOperator)] {
        &self.outcomes
    }

    pub fn effect(&self, label: &Label) -> Option<&HermitianOperator> {
        self.outcomes.iter().find(|o| o.0.same_as(label)).map(|o| &o.1)
    }

    pub fn closure_defect(&self) -> f64 {
        closure_defect(self.dim(), self.outcomes.iter().map(|o| o.1.op()))
    }

    /// True if every effect is idempotent within `tol`.
    pub fn is_pvm(&self, tol: f64) -> bool {
        self.outcomes
            .iter()
            .all(|(_, o)| (o.op() * o.op()).max_abs_diff(o.op()) <= tol)
    }

    /// Image of the POVM under a relabelling `f`.
    pub fn pushforward(&self, f: impl Fn(&Label) -> Label) -> Povm {
        let grouped = group_by_label(self.outcomes.iter().map(|(l, o)| (f(l), o.op().clone())));
        Povm {
            outcomes: grouped
                .into_iter()
                .map(|(l, o)| (l, HermitianOperator::symmetrized(&o)))
                .collect(),
        }
    }

    /// Largest entrywise difference between matching effects; labels missing
    /// on one side count against a zero effect.
    pub fn max_abs_diff(&self, other: &Povm) -> f64 {
        let zero = Operator::zeros(self.dim());
        let mut worst: f64 = 0.0;
        for (l, o) in &self.outcomes {
            let q = other.effect(l).map(|q| q.op()).unwrap_or(&zero);
            worst = worst.max(o.op().max_abs_diff(q));
        }
        for (l, o) in &other.outcomes {
            if self.effect(l).is_none() {
                worst = worst.max(o.op().max_abs());
            }
        }
        worst
    }
}

impl Effects for Povm {
    fn dim(&self) -> usize {
        self.outcomes[0].1.dim()
    }

    fn effects(&self) -> Vec<(Label, Operator)> {
        self.outcomes
            .iter()
            .map(|(l, p)| (l.clone(), p.op().clone()))
            .collect()
    }
}

/// Which closure condition a [`StrongMeasurement`] satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    /// Each `R†R` is a projection (strong formal measurement).
    Strong,
    /// Only `Σ R†R = I` (strong formal experiment).
    Experiment,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub label: Label,
    pub transformer: Operator,
}

/// Labelled state transformers `{(λ_α, R_α)}`.
#[derive(Clone, Debug)]
pub struct StrongMeasurement {
    mode: MeasurementMode,
    outcomes: Vec<Outcome>,
}

impl StrongMeasurement {
    pub fn new(mode: MeasurementMode, outcomes: Vec<(Label, Operator)>) -> Result<Self> {
        let dim = outcomes
            .first()
            .map(|o| o.1.dim())
            .ok_or_else(|| Error::Validation("measurement needs at least one outcome".into()))?;
        if outcomes.iter().any(|o| o.1.dim() != dim) {
            return Err(Error::Dimension("transformers of unequal dims".into()));
        }
        let effects: Vec<Operator> = outcomes.iter().map(|(_, r)| &r.adjoint() * r).collect();
        let defect = closure_defect(dim, effects.iter());
        if defect > CLOSURE_TOL {
            return Err(Error::Measurement(format!(
                "Σ R†R differs from identity by {defect:e}"
            )));
        }
        if mode == MeasurementMode::Strong {
            for (i, e) in effects.iter().enumerate() {
                if (e * e).max_abs_diff(e) > CLOSURE_TOL {
                    return Err(Error::Validation(format!(
                        "R†R of outcome {i} is not a projection"
                    )));
                }
            }
        }
        Ok(Self {
            mode,
            outcomes: outcomes
                .into_iter()
                .map(|(label, transformer)| Outcome { label, transformer })
                .collect(),
        })
    }

    pub fn mode(&self) -> MeasurementMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.outcomes[0].transformer.dim()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.outcomes.iter().map(|o| o.label.clone()).collect()
    }

    /// Outcome probabilities `‖R_α ψ‖²` in outcome order.
    pub fn probabilities(&self, psi: &StateVector) -> Result<Vec<f64>> {
        self.outcomes
            .iter()
            .map(|o| Ok(o.transformer.apply(psi)?.norm().powi(2)))
            .collect()
    }

    /// Transformers conjugated by an evolution: `R(t) = U⁻¹ R U`.
    pub fn heisenberg(&self, u: &UnitaryOperator) -> Result<StrongMeasurement> {
        let uinv = u.inverse();
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| {
                Ok((
                    o.label.clone(),
                    uinv.op().compose(&o.transformer.compose(u.op())?)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StrongMeasurement {
            mode: self.mode,
            outcomes: outcomes
                .into_iter()
                .map(|(label, transformer)| Outcome { label, transformer })
                .collect(),
        })
    }
}

impl Effects for StrongMeasurement {
    fn dim(&self) -> usize {
        StrongMeasurement::dim(self)
    }

    fn effects(&self) -> Vec<(Label, Operator)> {
        self.outcomes
            .iter()
            .map(|o| (o.label.clone(), &o.transformer.adjoint() * &o.transformer))
            .collect()
    }
}

/// The spectral PVM of a self-adjoint operator.
pub fn pvm_of_operator(a: &HermitianOperator) -> Result<Pvm> {
    let dec = spectral_decompose(a, None)?;
    Pvm::new(
        dec.eigenvalues
            .iter()
            .rev()
            .zip(dec.projectors.iter().rev())
            .map(|(l, p)| (Label::scalar(*l), p.clone()))
            .collect(),
    )
}

/// `Σ_{λ_α ∈ Δ} ⟨ψ, O_α ψ⟩` for a normalized `psi`.
pub fn born_probability<M: Effects + ?Sized>(
    m: &M,
    psi: &StateVector,
    delta: impl Fn(&Label) -> bool,
) -> Result<f64> {
    psi.require_normalized()?;
    let mut p = 0.0;
    for (l, o) in m.effects() {
        if delta(&l) {
            p += o.expectation(psi)?.re;
        }
    }
    Ok(p)
}

/// Born probabilities of every distinct label.
pub fn born_distribution<M: Effects + ?Sized>(m: &M, psi: &StateVector) -> Result<Vec<(Label, f64)>> {
    psi.require_normalized()?;
    group_by_label(m.effects())
        .into_iter()
        .map(|(l, o)| Ok((l, o.expectation(psi)?.re)))
        .collect()
}

/// Ideal measurement: `R_α = P_α`.
pub fn ideal_measurement(a: &HermitianOperator) -> Result<StrongMeasurement> {
    let pvm = pvm_of_operator(a)?;
    StrongMeasurement::new(
        MeasurementMode::Strong,
        pvm.outcomes
            .into_iter()
            .map(|(l, p)| (l, p.into_op()))
            .collect(),
    )
}

/// Normal measurement `R_α = U_α P_α`; `rotations[α]` acts on the α-th
/// eigenspace (eigenvalues in descending order, matching
/// [`pvm_of_operator`]) expressed in its eigenvector basis.
pub fn normal_measurement(
    a: &HermitianOperator,
    rotations: &[UnitaryOperator],
) -> Result<StrongMeasurement> {
    let dec = spectral_decompose(a, None)?;
    let k = dec.eigenvalues.len();
    if rotations.len() != k {
        return Err(Error::Validation(format!(
            "{} rotations for {k} eigenspaces",
            rotations.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(k);
    for (i, u) in rotations.iter().enumerate() {
        let idx = k - 1 - i;
        let basis = &dec.bases[idx];
        if u.dim() != basis.ncols() {
            return Err(Error::Validation(format!(
                "rotation {i} has dim {}, eigenspace has dim {}",
                u.dim(),
                basis.ncols()
            )));
        }
        let r = basis * u.op().matrix() * basis.adjoint();
        outcomes.push((Label::scalar(dec.eigenvalues[idx]), Operator::from_matrix(r)?));
    }
    StrongMeasurement::new(MeasurementMode::Strong, outcomes)
}

/// Standard measurement `R_α = T_α P_α` with each `T_α` isometric on the
/// range of `P_α`.
pub fn standard_measurement(spaces: &Pvm, isometries: &[Operator]) -> Result<StrongMeasurement> {
    if isometries.len() != spaces.outcomes.len() {
        return Err(Error::Validation("one isometry per PVM element required".into()));
    }
    let mut outcomes = Vec::new();
    for ((l, p), t) in spaces.outcomes.iter().zip(isometries) {
        let r = t.compose(p.op())?;
        let rr = &r.adjoint() * &r;
        if rr.max_abs_diff(p.op()) > CLOSURE_TOL {
            return Err(Error::Validation(format!(
                "T for label {:?} is not isometric on the range of P",
                l.values()
            )));
        }
        outcomes.push((l.clone(), r));
    }
    StrongMeasurement::new(MeasurementMode::Strong, outcomes)
}

/// Draws one outcome with probability `‖R_α ψ‖²` and returns the label and
/// the normalized post-measurement state.
pub fn strong_measure(
    m: &StrongMeasurement,
    psi: &StateVector,
    rng: &mut Stream,
) -> Result<(Label, StateVector)> {
    psi.require_normalized()?;
    let images: Vec<StateVector> = m
        .outcomes
        .iter()
        .map(|o| o.transformer.apply(psi))
        .collect::<Result<_>>()?;
    let probs: Vec<f64> = images.iter().map(|v| v.norm().powi(2)).collect();
    if probs.iter().all(|&p| p < IMPOSSIBLE_PROB) {
        return Err(Error::Measurement("all outcome probabilities vanish".into()));
    }
    let total: f64 = probs.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    let mut chosen = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && *p >= IMPOSSIBLE_PROB {
            chosen = i;
            break;
        }
    }
    while probs[chosen] < IMPOSSIBLE_PROB {
        chosen -= 1;
    }
    Ok((m.outcomes[chosen].label.clone(), images[chosen].normalized()?))
}

/// Joint probabilities of the outcome sequences of successive measurements.
/// `evolutions[i]` is `U_{t_i}` (evolution from time 0 to the i-th
/// measurement).
pub fn sequential_probability(
    ms: &[StrongMeasurement],
    evolutions: &[UnitaryOperator],
    psi: &StateVector,
) -> Result<Vec<(Vec<Label>, f64)>> {
    if ms.len() != evolutions.len() {
        return Err(Error::Dimension("one evolution per measurement required".into()));
    }
    if ms.is_empty() {
        return Err(Error::Validation("no measurements".into()));
    }
    psi.require_normalized()?;
    let total: usize = ms.iter().map(|m| m.len()).product();
    if total > 1 << 20 {
        return Err(Error::SizeCap { dim: total, cap: 1 << 20 });
    }
    let moved: Vec<StrongMeasurement> = ms
        .iter()
        .zip(evolutions)
        .map(|(m, u)| {
            if m.dim() != psi.dim() || u.dim() != psi.dim() {
                return Err(Error::Dimension("sequential: inconsistent dims".into()));
            }
            m.heisenberg(u)
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(total);
    let mut stack: Vec<(Vec<Label>, StateVector)> = vec![(Vec::new(), psi.clone())];
    // depth-first over outcome tuples, lexicographic in outcome index
    while let Some((labels, v)) = stack.pop() {
        let depth = labels.len();
        if depth == moved.len() {
            out.push((labels, v.norm().powi(2)));
            continue;
        }
        for o in moved[depth].outcomes.iter().rev() {
            let mut l = labels.clone();
            l.push(o.label.clone());
            stack.push((l, o.transformer.apply(&v)?));
        }
    }
    Ok(out)
}

/// Relative frequencies of outcome sequences over `n` runs of chained
/// [`strong_measure`] calls (stream `k` for run `k`), in the Heisenberg
/// picture of `evolutions` as in [`sequential_probability`].
pub fn sequential_monte_carlo(
    ms: &[StrongMeasurement],
    evolutions: &[UnitaryOperator],
    psi: &StateVector,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vec<Label>, f64)>> {
    if ms.len() != evolutions.len() || ms.is_empty() {
        return Err(Error::Dimension("one evolution per measurement required".into()));
    }
    psi.require_normalized()?;
    let moved: Vec<StrongMeasurement> = ms.iter().zip(evolutions).map(|(m, u)| m.heisenberg(u)).collect::<Result<_>>()?;
    let mut counts: HashMap<Vec<Vec<String>>, (Vec<Label>, usize)> = HashMap::new();
    for k in 0..n {
        let mut rng = Stream::new(seed, k as u64);
        let mut v = psi.clone();
        let mut labels = Vec::with_capacity(moved.len());
        for m in &moved {
            let (l, next) = strong_measure(m, &v, &mut rng)?;
            labels.push(l);
            v = next;
        }
        let key = labels.iter().map(|l| l.key()).collect();
        counts.entry(key).or_insert((labels, 0)).1 += 1;
    }
    let mut out: Vec<(Vec<Label>, f64)> = counts.into_values().map(|(l, c)| (l, c as f64 / n as f64)).collect();
    out.sort_by(|a, b| {
        let ka: Vec<Vec<String>> = a.0.iter().map(|l| l.key()).collect();
        let kb: Vec<Vec<String>> = b.0.iter().map(|l| l.key()).collect();
        ka.cmp(&kb)
    });
    Ok(out)
}

/// Largest difference between the distribution of the last measurement
/// measured alone and its marginal in the sequence (the sum rule for
/// sequential probabilities, which fails in general).
pub fn marginal_discrepancy(
    ms: &[StrongMeasurement],
    evolutions: &[UnitaryOperator],
    psi: &StateVector,
) -> Result<f64> {
    let joint = sequential_probability(ms, evolutions, psi)?;
    let last = ms.len() - 1;
    let alone = sequential_probability(&ms[last..], &evolutions[last..], psi)?;
    let mut worst: f64 = 0.0;
    for (l, p) in &alone {
        let marg: f64 = joint.iter().filter(|(ls, _)| ls[last].same_as(&l[0])).map(|(_, q)| q).sum();
        worst = worst.max((marg - p).abs());
    }
    Ok(worst)
}

/// Relabels the outcomes by `f`; transformers are unchanged.
pub fn recalibrate(m: &StrongMeasurement, f: impl Fn(&Label) -> Label) -> StrongMeasurement {
    StrongMeasurement {
        mode: m.mode,
        outcomes: m
            .outcomes
            .iter()
            .map(|o| Outcome {
                label: f(&o.label),
                transformer: o.transformer.clone(),
            })
            .collect(),
    }
}

/// POVM `O_α = R_α† R_α`, summed over outcomes that share a label.
pub fn povm_of(m: &StrongMeasurement) -> Result<Povm> {
    let grouped = group_by_label(m.effects());
    Povm::new(
        grouped
            .into_iter()
            .map(|(l, o)| (l, HermitianOperator::symmetrized(&o)))
            .collect(),
    )
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_bins(a_eigs: &[f64], sigma: f64, edges: &[f64]) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::Validation("noise width must be positive".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("bin edges must be strictly increasing".into()));
    }
    let lo = a_eigs.iter().copied().fold(f64::INFINITY, f64::min) - 6.0 * sigma;
    let hi = a_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * sigma;
    if edges[0] > lo || *edges.last().unwrap() < hi {
        return Err(Error::Coverage(format!(
            "edges [{}, {}] do not cover [{lo}, {hi}]",
            edges[0],
            edges.last().unwrap()
        )));
    }
    Ok(())
}

/// POVM of `A` plus independent Gaussian noise of width `sigma`, binned by
/// `edges`. Labels are bin centres; the first and last bins are open-ended.
pub fn approximate_povm(a: &HermitianOperator, sigma: f64, edges: &[f64]) -> Result<Povm> {
    let dec = spectral_decompose(a, None)?;
    check_bins(&dec.eigenvalues, sigma, edges)?;
    let nb = edges.len() - 1;
    let mut outcomes = Vec::with_capacity(nb);
    for b in 0..nb {
        let lo = if b == 0 { f64::NEG_INFINITY } else { edges[b] };
        let hi = if b == nb - 1 { f64::INFINITY } else { edges[b + 1] };
        let mut o = Operator::zeros(a.dim());
        for (l, p) in dec.eigenvalues.iter().zip(&dec.projectors) {
            let w = normal_cdf((hi - l) / sigma) - normal_cdf((lo - l) / sigma);
            o = &o + &p.op().scale_real(w);
        }
        let centre = 0.5 * (edges[b] + edges[b + 1]);
        outcomes.push((Label::scalar(centre), HermitianOperator::symmetrized(&o)));
    }
    Povm::new(outcomes)
}

/// Discretised weak-measurement transformers `R_λ ∝ ξ(λ − A)` at the bin
/// centres of `edges`, with `ξ` the quarter-power Gaussian. The quadrature
/// weights are renormalised per eigenvalue so that `Σ R†R = I` exactly.
pub fn weak_transformers(
    a: &HermitianOperator,
    sigma: f64,
    edges: &[f64],
) -> Result<StrongMeasurement> {
    let dec = spectral_decompose(a, None)?;
    check_bins(&dec.eigenvalues, sigma, edges)?;
    let eta = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let centres: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let widths: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let norms: Vec<f64> = dec
        .eigenvalues
        .iter()
        .map(|l| {
            centres
                .iter()
                .zip(&widths)
                .map(|(c, w)| eta(c - l) * w)
                .sum::<f64>()
        })
        .collect();
    let mut outcomes = Vec::with_capacity(centres.len());
    for (c, w) in centres.iter().zip(&widths) {
        let mut r = Operator::zeros(a.dim());
        for ((l, p), n) in dec.eigenvalues.iter().zip(&dec.projectors).zip(&norms) {
            r = &r + &p.op().scale_real((eta(c - l) * w / n).sqrt());
        }
        outcomes.push((Label::scalar(*c), r));
    }
    StrongMeasurement::new(MeasurementMode::Experiment, outcomes)
}

/// Unnormalised quadrature `Σ_j ξ(λ_j − A)² Δλ_j`, for checking how close the
/// discretisation in [`weak_transformers`] is to the continuum closure.
pub fn weak_quadrature_defect(a: &HermitianOperator, sigma: f64, edges: &[f64]) -> Result<f64> {
    let dec = spectral_decompose(a, None)?;
    check_bins(&dec.eigenvalues, sigma, edges)?;
    let eta = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    Ok(dec
        .eigenvalues
        .iter()
        .map(|l| {
            let s: f64 = edges
                .windows(2)
                .map(|w| eta(0.5 * (w[0] + w[1]) - l) * (w[1] - w[0]))
                .sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max))
}

/// System ⊗ apparatus realisation of a formal measurement:
/// `U(ψ ⊗ Φ₀) = Σ_α (R_α ψ) ⊗ Φ_α` on `C^n ⊗ C^(K+1)` with `Φ₀ = e₀` and
/// `Φ_α = e_{α+1}`.
#[derive(Clone, Debug)]
pub struct DiscreteExperimentSpec {
    pub system_dim: usize,
    pub apparatus_dim: usize,
    pub ready: StateVector,
    pub pointers: Vec<StateVector>,
    pub unitary: UnitaryOperator,
    pub calibration: Vec<Label>,
}

impl DiscreteExperimentSpec {
    /// `U(ψ ⊗ Φ₀)`.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        self.unitary.op().apply(&psi.tensor(&self.ready)?)
    }

    /// Projector `I ⊗ |Φ_α⟩⟨Φ_α|` onto the α-th pointer branch.
    pub fn branch_projector(&self, alpha: usize) -> Result<Operator> {
        Operator::identity(self.system_dim).tensor(&self.pointers[alpha].projector())
    }

    /// Pointer statistics: `‖(I ⊗ ⟨Φ_α|) U(ψ ⊗ Φ₀)‖²` per outcome.
    pub fn pointer_probabilities(&self, psi: &StateVector) -> Result<Vec<f64>> {
        let out = self.apply(psi)?;
        (0..self.pointers.len())
            .map(|a| Ok(self.branch_projector(a)?.apply(&out)?.norm().powi(2)))
            .collect()
    }
}

/// Builds the discrete experiment realising `m`, completing the isometry
/// `ψ ⊗ Φ₀ ↦ Σ R_α ψ ⊗ Φ_α` to a unitary by Gram-Schmidt.
pub fn build_discrete_experiment(m: &StrongMeasurement) -> Result<DiscreteExperimentSpec> {
    let n = m.dim();
    let k = m.len();
    let na = k + 1;
    let total = n * na;
    if total > MAX_DIM {
        return Err(Error::SizeCap { dim: total, cap: MAX_DIM });
    }
    let mut u = DMatrix::<C64>::zeros(total, total);
    let mut filled = vec![false; total];
    for i in 0..n {
        let col = i * na;
        for (alpha, o) in m.outcomes.iter().enumerate() {
            for r in 0..n {
                u[(r * na + alpha + 1, col)] = o.transformer.get(r, i);
            }
        }
        filled[col] = true;
    }
    // orthonormal completion of the remaining columns
    let mut basis: Vec<nalgebra::DVector<C64>> = (0..n).map(|i| u.column(i * na).into_owned()).collect();
    let mut cand = 0usize;
    for col in 0..total {
        if filled[col] {
            continue;
        }
        loop {
            if cand >= total {
                return Err(Error::Measurement("unitary completion failed".into()));
            }
            let mut v = nalgebra::DVector::<C64>::zeros(total);
            v[cand] = C64::new(1.0, 0.0);
            cand += 1;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dotc(&v);
                    v -= b * c;
                }
            }
            let nv = v.norm();
            if nv > 1e-8 {
                v /= C64::new(nv, 0.0);
                u.set_column(col, &v);
                basis.push(v);
                break;
            }
        }
    }
    let unitary = UnitaryOperator::new(Operator::from_matrix(u)?)?;
    Ok(DiscreteExperimentSpec {
        system_dim: n,
        apparatus_dim: na,
        ready: StateVector::basis(na, 0)?,
        pointers: (1..na).map(|a| StateVector::basis(na, a)).collect::<Result<_>>()?,
        unitary,
        calibration: m.labels(),
    })
}

/// Outcome of a von Neumann pointer coupling `exp(−iγT A ⊗ P̂_y)`.
#[derive(Clone, Debug)]
pub struct VonNeumannResult {
    /// Pointer wave function shifted by `λ_α γT`, one per eigenvalue
    /// (descending order).
    pub shifted_pointers: Vec<GridWaveFunction>,
    pub shifts: Vec<f64>,
    /// Largest `|⟨φ_α, φ_β⟩|` between distinct shifted pointers.
    pub max_overlap: f64,
    /// Set when the pointer copies overlap by more than `1e-6`.
    pub insufficient_separation: bool,
    /// POVM of the pointer read-out calibrated to the nearest shift.
    pub povm: Povm,
    /// Induced transformers `R_α = e^{−iT H₀} P_α`.
    pub measurement: StrongMeasurement,
}

/// Von Neumann measurement of `a` with a 1-D pointer. The optional
/// `free_part = (H₀, T)` must commute with `a`.
pub fn von_neumann_experiment(
    a: &HermitianOperator,
    gamma_t: f64,
    pointer: &GridWaveFunction,
    free_part: Option<(&HermitianOperator, f64)>,
) -> Result<VonNeumannResult> {
    if pointer.grid().ndim() != 1 || pointer.spin_dim() != 1 {
        return Err(Error::Validation("pointer must be a scalar 1-D wave function".into()));
    }
    let dec = spectral_decompose(a, None)?;
    let eigs: Vec<f64> = dec.eigenvalues.iter().rev().copied().collect();
    let projs: Vec<&HermitianOperator> = dec.projectors.iter().rev().collect();
    let shifts: Vec<f64> = eigs.iter().map(|l| l * gamma_t).collect();
    let shifted: Vec<GridWaveFunction> = shifts.iter().map(|&s| pointer.translated(0, s)).collect();

    let mut max_overlap: f64 = 0.0;
    for i in 0..shifted.len() {
        for j in i + 1..shifted.len() {
            max_overlap = max_overlap.max(shifted[i].inner(&shifted[j])?.norm());
        }
    }

    // read-out regions: nearest shift wins
    let xs = pointer.grid().axis_coords(0);
    let mut order: Vec<usize> = (0..shifts.len()).collect();
    order.sort_by(|&i, &j| shifts[i].total_cmp(&shifts[j]));
    let region = |x: f64| -> usize {
        let mut best = order[0];
        for &i in &order {
            if (x - shifts[i]).abs() < (x - shifts[best]).abs() {
                best = i;
            }
        }
        best
    };
    let h = pointer.grid().cell_volume();
    let mut weights = vec![vec![0.0; shifts.len()]; shifts.len()];
    for (beta, phi) in shifted.iter().enumerate() {
        for (j, x) in xs.iter().enumerate() {
            weights[region(*x)][beta] += phi.samples()[j].norm_sqr() * h;
        }
    }
    let dim = a.dim();
    let mut effects = Vec::new();
    for (alpha, l) in eigs.iter().enumerate() {
        let mut o = Operator::zeros(dim);
        for (beta, p) in projs.iter().enumerate() {
            o = &o + &p.op().scale_real(weights[alpha][beta]);
        }
        effects.push((Label::scalar(*l), HermitianOperator::symmetrized(&o)));
    }
    let povm = Povm::with_closure_tol(effects, 1e-8)?;

    let evolution = match free_part {
        Some((h0, t)) => {
            if !commuting_family(&[a.clone(), h0.clone()], 1e-10)? {
                return Err(Error::Validation("free Hamiltonian must commute with A".into()));
            }
            h0.exp_i(t)?
        }
        None => UnitaryOperator::identity(dim),
    };
    let measurement = StrongMeasurement::new(
        MeasurementMode::Strong,
        eigs.iter()
            .zip(&projs)
            .map(|(l, p)| Ok((Label::scalar(*l), evolution.op().compose(p.op())?)))
            .collect::<Result<_>>()?,
    )?;

    Ok(VonNeumannResult {
        shifted_pointers: shifted,
        shifts,
        max_overlap,
        insufficient_separation: max_overlap > 1e-6,
        povm,
        measurement,
    })
}

/// Joint spectral PVM of a commuting family; labels are eigenvalue tuples.
pub fn joint_pvm(family: &[HermitianOperator]) -> Result<Pvm> {
    if family.is_empty() {
        return Err(Error::Validation("empty family".into()));
    }
    if !commuting_family(family, 1e-10)? {
        return Err(Error::Validation("operators do not commute".into()));
    }
    let dim = family[0].dim();
    let pvms: Vec<Pvm> = family.iter().map(pvm_of_operator).collect::<Result<_>>()?;
    let mut acc: Vec<(Vec<f64>, Operator)> = vec![(Vec::new(), Operator::identity(dim))];
    for pvm in &pvms {
        let mut next = Vec::new();
        for (labels, p) in &acc {
            for (l, q) in pvm.outcomes() {
                let prod = p.compose(q.op())?;
                if prod.trace().re > 1e-10 {
                    let mut nl = labels.clone();
                    nl.push(l.first());
                    next.push((nl, prod));
                }
            }
        }
        acc = next;
    }
    Pvm::new(
        acc.into_iter()
            .map(|(l, p)| (Label(l), HermitianOperator::symmetrized(&p)))
            .collect(),
    )
}

/// Positive, unit-trace operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        if !op.is_hermitian(1e-10) {
            return Err(Error::Validation("density matrix must be Hermitian".into()));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::Validation(format!("density matrix trace is {tr}")));
        }
        let m = op.min_eigenvalue();
        if m < POSITIVITY_TOL {
            return Err(Error::Validation(format!(
                "density matrix not positive (min eigenvalue {m:e})"
            )));
        }
        Ok(Self(op.hermitian_part()))
    }

    pub fn pure(psi: &StateVector) -> Result<Self> {
        psi.require_normalized()?;
        Self::new(psi.projector())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(Operator::identity(dim).scale_real(1.0 / dim as f64))
    }

    pub fn op(&self) -> &Operator {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Reduced density matrix of factor `keep`.
    pub fn reduce(&self, keep: usize, dims: &[usize]) -> Result<DensityMatrix> {
        DensityMatrix::new(crate::hilbert::partial_trace(&self.0, keep, dims)?)
    }

    /// `tr(W O)`, summed over effects whose label lies in `delta`.
    pub fn probability<M: Effects + ?Sized>(&self, m: &M, delta: impl Fn(&Label) -> bool) -> f64 {
        m.effects()
            .iter()
            .filter(|(l, _)| delta(l))
            .map(|(_, o)| (self.0.matrix() * o.matrix()).trace().re)
            .sum()
    }
}

/// `Σ p_k |ψ_k⟩⟨ψ_k|`.
pub fn ensemble_density(states: &[(f64, StateVector)]) -> Result<DensityMatrix> {
    let first = states
        .first()
        .ok_or_else(|| Error::Validation("empty ensemble".into()))?;
    let dim = first.1.dim();
    let mut total = 0.0;
    let mut w = Operator::zeros(dim);
    for (p, psi) in states {
        if !(*p >= 0.0) {
            return Err(Error::Validation(format!("negative weight {p}")));
        }
        if psi.dim() != dim {
            return Err(Error::Dimension("ensemble states of unequal dims".into()));
        }
        psi.require_normalized()?;
        total += p;
        w = &w + &psi.projector().scale_real(*p);
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("weights sum to {total}")));
    }
    DensityMatrix::new(w)
}

/// Probability of `label` and the updated state `Σ R W R† / prob`, the sum
/// running over outcomes carrying that label.
pub fn density_update(
    w: &DensityMatrix,
    m: &StrongMeasurement,
    label: &Label,
) -> Result<(f64, DensityMatrix)> {
    let inst = instrument_of(m);
    let unnorm = inst.apply(|l| l.same_as(label), w.op())?;
    let prob = unnorm.trace().re;
    if prob < IMPOSSIBLE_PROB {
        return Err(Error::ImpossibleOutcome { prob });
    }
    Ok((prob, DensityMatrix::new(unnorm.scale_real(1.0 / prob))?))
}

/// Set function `Δ ↦ (W ↦ Σ_{λ_α∈Δ} R_α W R_α†)`.
#[derive(Clone, Debug)]
pub struct Instrument {
    outcomes: Vec<Outcome>,
}

impl Instrument {
    pub fn apply(&self, delta: impl Fn(&Label) -> bool, w: &Operator) -> Result<Operator> {
        let dim = self.outcomes[0].transformer.dim();
        if w.dim() != dim {
            return Err(Error::Dimension("instrument applied to wrong dimension".into()));
        }
        let mut acc = Operator::zeros(dim);
        for o in &self.outcomes {
            if delta(&o.label) {
                acc = &acc + &(&(&o.transformer * w) * &o.transformer.adjoint());
            }
        }
        Ok(acc)
    }

    /// `R(Δ)W / tr(R(Δ)W)`.
    pub fn conditional_state(
        &self,
        delta: impl Fn(&Label) -> bool,
        w: &DensityMatrix,
    ) -> Result<(f64, DensityMatrix)> {
        let unnorm = self.apply(delta, w.op())?;
        let prob = unnorm.trace().re;
        if prob < IMPOSSIBLE_PROB {
            return Err(Error::ImpossibleOutcome { prob });
        }
        Ok((prob, DensityMatrix::new(unnorm.scale_real(1.0 / prob))?))
    }
}

pub fn instrument_of(m: &StrongMeasurement) -> Instrument {
    Instrument {
        outcomes: m.outcomes.clone(),
    }
}

/// The shift experiment on `C^(2K+1)` (basis `e_{−K} .. e_K`):
/// `R_{±1} = V_± (P_± + P₀/√2)` with cyclic shifts `V_±`.
pub fn shift_experiment(half_width: usize) -> Result<StrongMeasurement> {
    if half_width < 1 {
        return Err(Error::Validation("half width must be at least 1".into()));
    }
    let n = 2 * half_width + 1;
    let idx = |alpha: i64| (alpha + half_width as i64) as usize;
    let k = half_width as i64;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut plus = DMatrix::<C64>::zeros(n, n);
    let mut minus = DMatrix::<C64>::zeros(n, n);
    for alpha in -k..=k {
        let w_plus = if alpha > 0 { 1.0 } else if alpha == 0 { s } else { 0.0 };
        let w_minus = if alpha < 0 { 1.0 } else if alpha == 0 { s } else { 0.0 };
        let up = if alpha == k { -k } else { alpha + 1 };
        let down = if alpha == -k { k } else { alpha - 1 };
        plus[(idx(up), idx(alpha))] += C64::new(w_plus, 0.0);
        minus[(idx(down), idx(alpha))] += C64::new(w_minus, 0.0);
    }
    StrongMeasurement::new(
        MeasurementMode::Experiment,
        vec![
            (Label::scalar(1.0), Operator::from_matrix(plus)?),
            (Label::scalar(-1.0), Operator::from_matrix(minus)?),
        ],
    )
}

/// Coin-flip experiment `R_α = c_α I` on `C^dim`.
pub fn coin_flip(coefficients: &[C64], dim: usize) -> Result<StrongMeasurement> {
    StrongMeasurement::new(
        MeasurementMode::Experiment,
        coefficients
            .iter()
            .enumerate()
            .map(|(i, c)| (Label::scalar(i as f64), Operator::identity(dim).scale(*c)))
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OutcomeDoc {
    pub label: Vec<f64>,
    /// Row-major `[re, im]` pairs.
    pub matrix: Vec<[f64; 2]>,
}

/// `{dim, mode, outcomes: [{label, matrix}]}`; `mode` is one of
/// `strong`, `experiment`, `pvm`, `povm`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasurementDoc {
    pub dim: usize,
    pub mode: String,
    pub outcomes: Vec<OutcomeDoc>,
}

fn op_to_doc(label: &Label, op: &Operator) -> OutcomeDoc {
    let n = op.dim();
    let mut matrix = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let z = op.get(i, j);
            matrix.push([z.re, z.im]);
        }
    }
    OutcomeDoc {
        label: label.0.clone(),
        matrix,
    }
}

fn doc_to_op(dim: usize, doc: &OutcomeDoc) -> Result<(Label, Operator)> {
    if doc.matrix.len() != dim * dim {
        return Err(Error::Dimension(format!(
            "matrix has {} entries, expected {}",
            doc.matrix.len(),
            dim * dim
        )));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let [re, im] = doc.matrix[i * dim + j];
        C64::new(re, im)
    });
    Ok((Label(doc.label.clone()), Operator::from_matrix(m)?))
}

impl MeasurementDoc {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl StrongMeasurement {
    pub fn to_doc(&self) -> MeasurementDoc {
        MeasurementDoc {
            dim: self.dim(),
            mode: match self.mode {
                MeasurementMode::Strong => "strong".into(),
                MeasurementMode::Experiment => "experiment".into(),
            },
            outcomes: self
                .outcomes
                .iter()
                .map(|o| op_to_doc(&o.label, &o.transformer))
                .collect(),
        }
    }

    pub fn from_doc(doc: &MeasurementDoc) -> Result<Self> {
        let mode = match doc.mode.as_str() {
            "strong" => MeasurementMode::Strong,
            "experiment" => MeasurementMode::Experiment,
            other => return Err(Error::Parse(format!("not a strong measurement mode: {other}"))),
        };
        let outcomes = doc
            .outcomes
            .iter()
            .map(|o| doc_to_op(doc.dim, o))
            .collect::<Result<_>>()?;
        StrongMeasurement::new(mode, outcomes)
    }
}

impl Povm {
    pub fn to_doc(&self) -> MeasurementDoc {
        MeasurementDoc {
            dim: self.dim(),
            mode: "povm".into(),
            outcomes: self.outcomes.iter().map(|(l, o)| op_to_doc(l, o.op())).collect(),
        }
    }

    pub fn from_doc(doc: &MeasurementDoc) -> Result<Self> {
        if doc.mode != "povm" && doc.mode != "pvm" {
            return Err(Error::Parse(format!("not a POVM document: {}", doc.mode)));
        }
        let outcomes = doc
            .outcomes
            .iter()
            .map(|o| {
                let (l, op) = doc_to_op(doc.dim, o)?;
                Ok((l, HermitianOperator::new(op)?))
            })
            .collect::<Result<_>>()?;
        Povm::new(outcomes)
    }
}

impl Pvm {
    pub fn to_doc(&self) -> MeasurementDoc {
        MeasurementDoc {
            dim: self.dim(),
            mode: "pvm".into(),
            outcomes: self.outcomes.iter().map(|(l, o)| op_to_doc(l, o.op())).collect(),
        }
    }

    pub fn from_doc(doc: &MeasurementDoc) -> Result<Self> {
        if doc.mode != "pvm" {
            return Err(Error::Parse(format!("not a PVM document: {}", doc.mode)));
        }
        let outcomes = doc
            .outcomes
            .iter()
            .map(|o| {
                let (l, op) = doc_to_op(doc.dim, o)?;
                Ok((l, HermitianOperator::new(op)?))
            })
            .collect::<Result<_>>()?;
        Pvm::new(outcomes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::pauli::*;
    use crate::hilbert::tensor_product;

    fn plus_one(l: &Label) -> bool {
        (l.first() - 1.0).abs() < 1e-12
    }

    #[test]
    fn pvm_of_sigma_z_and_identity() {
        let p = pvm_of_operator(&sigma_z()).unwrap();
        assert_eq!(p.outcomes().len(), 2);
        assert!(p.projector(&1.0.into()).unwrap().op().max_abs_diff(&Operator::diagonal(&[1.0, 0.0])) < 1e-15);
        assert!(p.projector(&(-1.0).into()).unwrap().op().max_abs_diff(&Operator::diagonal(&[0.0, 1.0])) < 1e-15);
        let p = pvm_of_operator(&HermitianOperator::identity(2)).unwrap();
        assert_eq!(p.outcomes().len(), 1);
    }

    #[test]
    fn pvm_of_sigma_x_by_hand() {
        let p = pvm_of_operator(&sigma_x()).unwrap();
        let half_plus = (&Operator::identity(2) + sigma_x().op()).scale_real(0.5);
        let half_minus = (&Operator::identity(2) - sigma_x().op()).scale_real(0.5);
        assert!(p.projector(&1.0.into()).unwrap().op().max_abs_diff(&half_plus) < 1e-14);
        assert!(p.projector(&(-1.0).into()).unwrap().op().max_abs_diff(&half_minus) < 1e-14);
    }

    #[test]
    fn born_rule_examples() {
        let m = ideal_measurement(&sigma_z()).unwrap();
        assert!((born_probability(&m, &up(), plus_one).unwrap() - 1.0).abs() < 1e-15);
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        assert!((born_probability(&m, &psi, plus_one).unwrap() - 0.36).abs() < 1e-15);
        let bad = StateVector::from_real(&[1.0, 1.0]).unwrap();
        assert!(born_probability(&m, &bad, plus_one).is_err());
    }

    #[test]
    fn coin_flip_ignores_the_state() {
        let c = [C64::new(0.6, 0.0), C64::new(0.0, 0.8)];
        let m = coin_flip(&c, 3).unwrap();
        let psi = StateVector::new(vec![C64::new(0.3, 0.1), C64::new(-0.5, 0.2), C64::new(0.1, 0.0)])
            .unwrap()
            .normalized()
            .unwrap();
        let p0 = born_probability(&m, &psi, |l| l.first() == 0.0).unwrap();
        assert!((p0 - 0.36).abs() < 1e-14);
    }

    #[test]
    fn degenerate_ideal_measurement() {
        let m = ideal_measurement(&HermitianOperator::diagonal(&[1.0, 1.0, 2.0])).unwrap();
        assert_eq!(m.len(), 2);
        let ranks: Vec<f64> = m.outcomes().iter().map(|o| o.transformer.trace().re).collect();
        assert_eq!(ranks, vec![1.0, 2.0]);
    }

    #[test]
    fn normal_measurement_flip_on_identity() {
        let m = normal_measurement(&HermitianOperator::identity(2), &[UnitaryOperator::new(sigma_x().op().clone()).unwrap()]).unwrap();
        let r = &m.outcomes()[0].transformer;
        assert!(r.max_abs_diff(sigma_x().op()) < 1e-14);
        let mut rng = Stream::new(1, 0);
        let (_, post) = strong_measure(&m, &up(), &mut rng).unwrap();
        assert!((post.inner(&down()).norm() - 1.0).abs() < 1e-14);
        // block mismatch
        let err = normal_measurement(&sigma_z(), &[UnitaryOperator::identity(2), UnitaryOperator::identity(1)]);
        assert!(err.is_err());
    }

    #[test]
    fn normal_measurement_is_qnd() {
        let a = HermitianOperator::diagonal(&[1.0, 1.0, 3.0]);
        let rot = UnitaryOperator::new(
            Operator::from_rows(&[
                vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
                vec![C64::new(0.0, 0.0), C64::new(-1.0, 0.0)],
            ])
            .unwrap(),
        )
        .unwrap();
        let m = normal_measurement(&a, &[UnitaryOperator::identity(1), rot]).unwrap();
        for o in m.outcomes() {
            assert!(o.transformer.commutator(a.op()).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn photodetection_standard_measurement() {
        let e = |i| StateVector::basis(3, i).unwrap();
        let a = HermitianOperator::diagonal(&[0.0, 1.0, 2.0]);
        let pvm = pvm_of_operator(&a).unwrap();
        // T_α maps e_α to the vacuum e₀ and the rest anywhere isometric
        let isos: Vec<Operator> = pvm
            .outcomes()
            .iter()
            .map(|(l, _)| {
                let alpha = l.first().round() as usize;
                Operator::outer(&e(0), &e(alpha))
            })
            .collect();
        let m = standard_measurement(&pvm, &isos).unwrap();
        let psi = StateVector::from_real(&[0.2, 0.4, 0.8]).unwrap().normalized().unwrap();
        let mut rng = Stream::new(5, 0);
        for _ in 0..20 {
            let (_, post) = strong_measure(&m, &psi, &mut rng).unwrap();
            assert!((post.inner(&e(0)).norm() - 1.0).abs() < 1e-14);
        }
        let bad = vec![Operator::zeros(3); 3];
        assert!(standard_measurement(&pvm, &bad).is_err());
    }

    #[test]
    fn shift_experiment_on_e0() {
        let m = shift_experiment(4).unwrap();
        let e = |a: i64| StateVector::basis(9, (a + 4) as usize).unwrap();
        let probs = m.probabilities(&e(0)).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-15 && (probs[1] - 0.5).abs() < 1e-15);
        let mut rng = Stream::new(3, 0);
        for _ in 0..10 {
            let (l, post) = strong_measure(&m, &e(0), &mut rng).unwrap();
            let target = if l.first() > 0.0 { e(1) } else { e(-1) };
            assert!((post.inner(&target).norm() - 1.0).abs() < 1e-14);
        }
        let povm = povm_of(&m).unwrap();
        assert!(!povm.is_pvm(1e-6));
    }

    #[test]
    fn recalibration_examples() {
        let m = ideal_measurement(&sigma_x()).unwrap();
        let sq = recalibrate(&m, |l| Label::scalar(l.first() * l.first()));
        let povm = povm_of(&sq).unwrap();
        assert_eq!(povm.outcomes().len(), 1);
        assert!(povm.outcomes()[0].1.op().max_abs_diff(&Operator::identity(2)) < 1e-14);
        let same = recalibrate(&m, |l| l.clone());
        assert!(povm_of(&same).unwrap().max_abs_diff(&povm_of(&m).unwrap()) < 1e-15);
    }

    #[test]
    fn indicator_recalibration_vs_ideal_projection() {
        // A with three eigenvalues, Δ = {1, 2}
        let a = HermitianOperator::diagonal(&[1.0, 2.0, 3.0]);
        let m = ideal_measurement(&a).unwrap();
        let in_delta = |x: f64| if x < 2.5 { 1.0 } else { 0.0 };
        let ind = recalibrate(&m, |l| Label::scalar(in_delta(l.first())));
        let p_delta = HermitianOperator::diagonal(&[1.0, 1.0, 0.0]);
        let ideal_p = ideal_measurement(&p_delta).unwrap();
        let psi = StateVector::from_real(&[0.6, 0.8, 0.0]).unwrap();
        let d1 = born_distribution(&povm_of(&ind).unwrap(), &psi).unwrap();
        let d2 = born_distribution(&povm_of(&ideal_p).unwrap(), &psi).unwrap();
        for (l, p) in &d1 {
            let q = d2.iter().find(|(l2, _)| l2.same_as(l)).map(|x| x.1).unwrap_or(0.0);
            assert!((p - q).abs() < 1e-14);
        }
        // post-states differ: the indicator-calibrated measurement collapses
        // onto an eigenvector, the ideal projection keeps the superposition
        let mut rng = Stream::new(11, 0);
        let (_, post_ind) = strong_measure(&ind, &psi, &mut rng).unwrap();
        let mut rng = Stream::new(11, 0);
        let (_, post_ideal) = strong_measure(&ideal_p, &psi, &mut rng).unwrap();
        assert!((post_ideal.inner(&psi).norm() - 1.0).abs() < 1e-14);
        assert!((post_ind.inner(&psi).norm() - 1.0).abs() > 0.1);
    }

    #[test]
    fn sequential_z_then_x() {
        let mz = ideal_measurement(&sigma_z()).unwrap();
        let mx = ideal_measurement(&sigma_x()).unwrap();
        let id = UnitaryOperator::identity(2);
        let probs = sequential_probability(&[mz.clone(), mx], &[id.clone(), id.clone()], &up()).unwrap();
        let total: f64 = probs.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
        for (ls, p) in &probs {
            let expect = if ls[0].first() > 0.0 { 0.5 } else { 0.0 };
            assert!((p - expect).abs() < 1e-14);
        }
        let twice = sequential_probability(&[mz.clone(), mz], &[id.clone(), id], &up()).unwrap();
        for (ls, p) in &twice {
            let expect = if ls[0].first() > 0.0 && ls[1].first() > 0.0 { 1.0 } else { 0.0 };
            assert!((p - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn sequential_monte_carlo_matches_wigner_formula() {
        let mz = ideal_measurement(&sigma_z()).unwrap();
        let mx = ideal_measurement(&sigma_x()).unwrap();
        let id = UnitaryOperator::identity(2);
        let ms = [mz.clone(), mx, mz];
        let us = [id.clone(), id.clone(), id];
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let exact = sequential_probability(&ms, &us, &psi).unwrap();
        let n = 4000;
        let mc = sequential_monte_carlo(&ms, &us, &psi, n, 5).unwrap();
        for (ls, p) in &exact {
            let f = mc.iter().find(|(m, _)| m.iter().zip(ls).all(|(a, b)| a.same_as(b))).map_or(0.0, |x| x.1);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 3.0 * sigma + 1e-12, "{f} vs {p}");
        }
    }

    #[test]
    fn sequential_marginal_fails_sum_rule() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus_x = StateVector::from_real(&[s, s]).unwrap();
        let ms = [ideal_measurement(&sigma_z()).unwrap(), ideal_measurement(&sigma_x()).unwrap()];
        let us = [UnitaryOperator::identity(2), UnitaryOperator::identity(2)];
        assert!((marginal_discrepancy(&ms, &us, &plus_x).unwrap() - 0.5).abs() < 1e-14);
        assert!(marginal_discrepancy(&ms, &us, &up()).unwrap() < 1e-14);
    }

    #[test]
    fn sequential_effects_need_not_commute() {
        // composite transformers R_{x}R_{z} of σz-then-σx
        let mz = ideal_measurement(&sigma_z()).unwrap();
        let mx = ideal_measurement(&sigma_x()).unwrap();
        let mut outcomes = Vec::new();
        for a in mz.outcomes() {
            for b in mx.outcomes() {
                let mut l = a.label.0.clone();
                l.extend(&b.label.0);
                outcomes.push((Label(l), b.transformer.compose(&a.transformer).unwrap()));
            }
        }
        let seq = StrongMeasurement::new(MeasurementMode::Experiment, outcomes).unwrap();
        let povm = povm_of(&seq).unwrap();
        // marginal effect for first result +1 is P_z+, for second +1 is ½I:
        // they commute, but O(+1,+1) = ½P_z+ and the x-marginal of outcome
        // (+,+) ∪ (−,−) does not commute with σz-effects
        let o_pp = povm.effect(&Label(vec![1.0, 1.0])).unwrap().op().clone();
        let o_mm = povm.effect(&Label(vec![-1.0, -1.0])).unwrap().op().clone();
        let same = &o_pp + &o_mm;
        // by hand: O(+,+) = ½P+, O(−,−) = ½P− so same = ½I, commute trivially;
        // compare instead with the effects of the reversed order
        let mut rev = Vec::new();
        for a in mx.outcomes() {
            for b in mz.outcomes() {
                let mut l = a.label.0.clone();
                l.extend(&b.label.0);
                rev.push((Label(l), b.transformer.compose(&a.transformer).unwrap()));
            }
        }
        let rev = povm_of(&StrongMeasurement::new(MeasurementMode::Experiment, rev).unwrap()).unwrap();
        let r_pp = rev.effect(&Label(vec![1.0, 1.0])).unwrap().op().clone();
        let c = o_pp.commutator(&r_pp).unwrap();
        assert!(c.max_abs() > 0.1);
        assert!(same.max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-14);
    }

    #[test]
    fn approximate_povm_of_sigma_z() {
        let povm = approximate_povm(&sigma_z(), 1.0, &[-7.0, 0.0, 7.0]).unwrap();
        let o = povm.effect(&Label::scalar(3.5)).unwrap();
        let phi = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        assert!((o.op().get(0, 0).re - phi(1.0)).abs() < 1e-15);
        assert!((o.op().get(1, 1).re - phi(-1.0)).abs() < 1e-15);
        assert!(matches!(approximate_povm(&sigma_z(), 1.0, &[-2.0, 0.0, 2.0]), Err(Error::Coverage(_))));
    }

    #[test]
    fn approximate_povm_small_noise_limit() {
        let a = HermitianOperator::diagonal(&[-1.0, 0.5, 2.0]);
        let sigma = 1e-4 * 1.5;
        let edges = [-3.0, -0.25, 1.25, 3.0];
        let povm = approximate_povm(&a, sigma, &edges).unwrap();
        let pvm = pvm_of_operator(&a).unwrap();
        let psi = StateVector::from_real(&[0.3, 0.5, 0.81]).unwrap().normalized().unwrap();
        let approx: Vec<f64> = born_distribution(&povm, &psi).unwrap().iter().map(|x| x.1).collect();
        let exact: Vec<f64> = born_distribution(&pvm, &psi).unwrap().iter().rev().map(|x| x.1).collect();
        for (p, q) in approx.iter().zip(&exact) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn weak_transformers_mean_and_moments() {
        let a = HermitianOperator::diagonal(&[-1.0, 2.0]);
        let sigma = 0.7;
        let edges: Vec<f64> = (0..=800).map(|i| -8.0 + 16.0 * i as f64 / 800.0).collect();
        let m = weak_transformers(&a, sigma, &edges).unwrap();
        assert!(weak_quadrature_defect(&a, sigma, &edges).unwrap() < 1e-6);
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let probs = m.probabilities(&psi).unwrap();
        let labels = m.labels();
        let mean: f64 = probs.iter().zip(&labels).map(|(p, l)| p * l.first()).sum();
        let second: f64 = probs.iter().zip(&labels).map(|(p, l)| p * l.first().powi(2)).sum();
        let exp_a = 0.36 * -1.0 + 0.64 * 2.0;
        let exp_a2 = 0.36 * 1.0 + 0.64 * 4.0;
        assert!((mean - exp_a).abs() < 1e-6);
        // second moment carries the noise variance
        assert!((second - (exp_a2 + sigma * sigma)).abs() < 1e-3);
        assert!((second - exp_a2).abs() > 0.4);
    }

    #[test]
    fn weak_measurement_barely_disturbs_for_large_sigma() {
        let a = sigma_z();
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let mut scaled = Vec::new();
        for sigma in [5.0, 10.0, 20.0, 40.0] {
            let edges: Vec<f64> = (0..=800).map(|i| -8.0 * sigma + 16.0 * sigma * i as f64 / 800.0).collect();
            let m = weak_transformers(&a, sigma, &edges).unwrap();
            // mean infidelity 1 − |⟨ψ, R_λψ⟩|/‖R_λψ‖ over the result distribution
            let mut loss = 0.0;
            for (o, p) in m.outcomes().iter().zip(m.probabilities(&psi).unwrap()) {
                if p < 1e-300 {
                    continue;
                }
                let r = o.transformer.apply(&psi).unwrap();
                loss += p * (1.0 - psi.inner(&r).norm() / r.norm());
            }
            scaled.push(loss * sigma * sigma);
        }
        // 1 − fidelity = O(1/σ²): σ²·loss settles to a constant
        for w in scaled.windows(2) {
            assert!((w[1] / w[0] - 1.0).abs() < 0.05, "{scaled:?}");
        }
        assert!(scaled[3] < 1.0);
    }

    #[test]
    fn weak_eigenstate_is_gaussian_around_eigenvalue() {
        let a = HermitianOperator::diagonal(&[1.5, -0.5]);
        let edges: Vec<f64> = (0..=600).map(|i| -6.0 + 12.0 * i as f64 / 600.0).collect();
        let m = weak_transformers(&a, 0.5, &edges).unwrap();
        let probs = m.probabilities(&StateVector::basis(2, 0).unwrap()).unwrap();
        let mean: f64 = probs.iter().zip(m.labels()).map(|(p, l)| p * l.first()).sum();
        let var: f64 = probs.iter().zip(m.labels()).map(|(p, l)| p * (l.first() - mean).powi(2)).sum();
        assert!((mean - 1.5).abs() < 1e-9);
        assert!((var - 0.25).abs() < 1e-3);
    }

    #[test]
    fn discrete_experiment_for_ideal_sigma_z() {
        let m = ideal_measurement(&sigma_z()).unwrap();
        let de = build_discrete_experiment(&m).unwrap();
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let probs = de.pointer_probabilities(&psi).unwrap();
        assert!((probs[0] - 0.36).abs() < 1e-14 && (probs[1] - 0.64).abs() < 1e-14);
        // branches are orthogonal
        let out = de.apply(&psi).unwrap();
        let b0 = de.branch_projector(0).unwrap().apply(&out).unwrap();
        let b1 = de.branch_projector(1).unwrap().apply(&out).unwrap();
        assert!(b0.inner(&b1).norm() < 1e-15);
    }

    #[test]
    fn discrete_coin_flip_is_independent_of_psi() {
        let c = [C64::new(0.6, 0.0), C64::new(0.8, 0.0)];
        let de = build_discrete_experiment(&coin_flip(&c, 2).unwrap()).unwrap();
        for psi in [up(), down(), StateVector::from_real(&[0.6, 0.8]).unwrap()] {
            let p = de.pointer_probabilities(&psi).unwrap();
            assert!((p[0] - 0.36).abs() < 1e-14 && (p[1] - 0.64).abs() < 1e-14);
            // final state is ψ ⊗ Σ c_α Φ_α
            let pointer = &de.pointers[0].scale(c[0]) + &de.pointers[1].scale(c[1]);
            let expect = psi.tensor(&pointer).unwrap();
            assert!((de.apply(&psi).unwrap().inner(&expect).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn density_update_examples() {
        let m = ideal_measurement(&sigma_z()).unwrap();
        let w = DensityMatrix::maximally_mixed(2);
        let (p, w2) = density_update(&w, &m, &1.0.into()).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(w2.op().max_abs_diff(&Operator::diagonal(&[1.0, 0.0])) < 1e-15);
        let pure = DensityMatrix::pure(&up()).unwrap();
        assert!(matches!(density_update(&pure, &m, &(-1.0).into()), Err(Error::ImpossibleOutcome { .. })));
    }

    #[test]
    fn ensemble_many_to_one() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = StateVector::from_real(&[s, s]).unwrap();
        let minus = StateVector::from_real(&[s, -s]).unwrap();
        let w1 = ensemble_density(&[(0.5, up()), (0.5, down())]).unwrap();
        let w2 = ensemble_density(&[(0.5, plus), (0.5, minus)]).unwrap();
        assert!(w1.op().max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-15);
        assert!(w1.op().max_abs_diff(w2.op()) < 1e-15);
        assert!(ensemble_density(&[(0.7, up()), (0.5, down())]).is_err());
        assert!(ensemble_density(&[(-0.5, up()), (1.5, down())]).is_err());
    }

    #[test]
    fn instrument_examples() {
        let m = ideal_measurement(&HermitianOperator::diagonal(&[1.0, -1.0, 0.0])).unwrap();
        let inst = instrument_of(&m);
        let psi = StateVector::from_real(&[0.5, 0.5, 0.5f64.sqrt()]).unwrap();
        let w = DensityMatrix::pure(&psi).unwrap();
        let all = inst.apply(|_| true, w.op()).unwrap();
        // Lüders average: diagonal part
        let luders = Operator::diagonal(&[0.25, 0.25, 0.5]);
        assert!(all.max_abs_diff(&luders) < 1e-14);
        assert!(inst.apply(|_| false, w.op()).unwrap().max_abs() == 0.0);
        // conditional state for Δ = {+1, −1}
        let delta = |l: &Label| l.first().abs() > 0.5;
        let (p, cond) = inst.conditional_state(delta, &w).unwrap();
        let mut mix = Operator::zeros(3);
        for lab in [1.0, -1.0] {
            let (q, wq) = density_update(&w, &m, &lab.into()).unwrap();
            mix = &mix + &wq.op().scale_real(q / p);
        }
        assert!(cond.op().max_abs_diff(&mix) < 1e-14);
    }

    #[test]
    fn joint_pvm_on_singlet() {
        let i2 = HermitianOperator::identity(2);
        let fam = [tensor_product(&sigma_z(), &i2).unwrap(), tensor_product(&i2, &sigma_z()).unwrap()];
        let pvm = joint_pvm(&fam).unwrap();
        let s = singlet();
        for (l, p) in pvm.outcomes() {
            let prob = p.op().expectation(&s).unwrap().re;
            let expect = if l.0[0] != l.0[1] { 0.5 } else { 0.0 };
            assert!((prob - expect).abs() < 1e-14);
        }
        assert!(joint_pvm(&[sigma_z(), sigma_x()]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let a = HermitianOperator::diagonal(&[0.1, 1.0 / 3.0, 2.0f64.sqrt()]);
        let m = weak_transformers(&a, 0.3, &[-3.0, -1.0, 0.2, 1.3, 5.0]).unwrap();
        let doc = m.to_doc();
        let back = StrongMeasurement::from_doc(&MeasurementDoc::from_json(&doc.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back.to_doc(), doc);
        let povm = povm_of(&m).unwrap();
        let back = Povm::from_doc(&MeasurementDoc::from_json(&povm.to_doc().to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back.to_doc(), povm.to_doc());
        let bad = r#"{"dim":1,"mode":"povm","outcomes":[],"extra":1}"#;
        assert!(MeasurementDoc::from_json(bad).is_err());
    }
}
