//! No-go results made quantitative: Bell's inequality, Hardy's conditions,
//! linear-programming infeasibility of noncontextual value maps, and the
//! quadratic-map inequality that any measurable functional of `ψ` obeys.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formalism::{born_distribution, joint_pvm, Label, Povm};
use crate::hilbert::{
    pauli, spectral_decompose, tensor_product, HermitianOperator, Operator, StateVector,
};
use crate::rng::Stream;
use crate::wavefield::{probability_current, GridWaveFunction, HamiltonianSpec};

/// Largest deterministic assignment space [`value_map_feasibility`] enumerates.
pub const MAX_ASSIGNMENTS: usize = 1_000_000;
/// LP feasibility tolerance.
pub const LP_TOL: f64 = 1e-9;
/// Hardy conditions (2)-(4) must hold to this accuracy.
pub const HARDY_TOL: f64 = 1e-6;

fn unit(n: [f64; 3]) -> Result<[f64; 3]> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !len.is_finite() || (len - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("{n:?} is not a unit vector")));
    }
    Ok(n)
}

/// `σ·n ⊗ I`.
pub fn spin_on_first(n: [f64; 3]) -> Result<HermitianOperator> {
    tensor_product(&pauli::sigma_along(unit(n)?), &HermitianOperator::identity(2))
}

/// `I ⊗ σ·n`.
pub fn spin_on_second(n: [f64; 3]) -> Result<HermitianOperator> {
    tensor_product(&HermitianOperator::identity(2), &pauli::sigma_along(unit(n)?))
}

/// `Prob(Z¹_a = −Z²_b)` on the singlet.
pub fn anticorrelation(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let pvm = joint_pvm(&[spin_on_first(a)?, spin_on_second(b)?])?;
    Ok(born_distribution(&pvm, &pauli::singlet())?
        .iter()
        .filter(|(l, _)| (l.0[0] + l.0[1]).abs() < 1e-9)
        .map(|(_, p)| p)
        .sum())
}

/// The three anticorrelation probabilities of Bell's inequality.
pub fn bell_terms(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<[f64; 3]> {
    Ok([anticorrelation(a, b)?, anticorrelation(b, c)?, anticorrelation(c, a)?])
}

/// `Prob(Z¹_a=−Z²_b) + Prob(Z¹_b=−Z²_c) + Prob(Z¹_c=−Z²_a)`; every local
/// model with perfect same-axis anticorrelation gives at least 1.
pub fn bell_lhs(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<f64> {
    Ok(bell_terms(a, b, c)?.iter().sum())
}

/// Three coplanar directions `120°` apart.
pub fn trine() -> [[f64; 3]; 3] {
    let t = 2.0 * std::f64::consts::PI / 3.0;
    [pauli::xz_direction(0.0), pauli::xz_direction(t), pauli::xz_direction(2.0 * t)]
}

// ---------------------------------------------------------------------------
// Pairwise models and value-map feasibility

/// Quantum joint distribution of one compatible pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistribution {
    pub pair: (usize, usize),
    /// `probs[u][v] = Prob(Z_i = spectra[i][u], Z_j = spectra[j][v])`.
    pub probs: Vec<Vec<f64>>,
}

/// Spectra of a family of observables and the joint distributions of the
/// compatible pairs in a given state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub names: Vec<String>,
    pub spectra: Vec<Vec<f64>>,
    pub pairs: Vec<PairDistribution>,
}

impl PairwiseModel {
    /// Distributions from `ψ`. With `pairs = None` every commuting pair is
    /// used; listed pairs must commute.
    pub fn from_quantum(
        names: &[&str],
        observables: &[HermitianOperator],
        pairs: Option<&[(usize, usize)]>,
        psi: &StateVector,
    ) -> Result<Self> {
        if names.len() != observables.len() || observables.is_empty() {
            return Err(Error::Validation("one name per observable required".into()));
        }
        psi.require_normalized()?;
        let spectra: Vec<Vec<f64>> = observables
            .iter()
            .map(|o| Ok(spectral_decompose(o, None)?.eigenvalues))
            .collect::<Result<_>>()?;
        let graph: Vec<(usize, usize)> = match pairs {
            Some(p) => p.to_vec(),
            None => {
                let mut g = Vec::new();
                for i in 0..observables.len() {
                    for j in i + 1..observables.len() {
                        if observables[i].op().commutator(observables[j].op())?.max_abs() < 1e-10 {
                            g.push((i, j));
                        }
                    }
                }
                g
            }
        };
        let mut dists = Vec::with_capacity(graph.len());
        for &(i, j) in &graph {
            if i >= observables.len() || j >= observables.len() || i == j {
                return Err(Error::Validation(format!("bad pair ({i}, {j})")));
            }
            let pvm = joint_pvm(&[observables[i].clone(), observables[j].clone()])?;
            let mut probs = vec![vec![0.0; spectra[j].len()]; spectra[i].len()];
            for (l, p) in born_distribution(&pvm, psi)? {
                let u = nearest(&spectra[i], l.0[0]);
                let v = nearest(&spectra[j], l.0[1]);
                probs[u][v] += p;
            }
            dists.push(PairDistribution { pair: (i, j), probs });
        }
        let model = Self { names: names.iter().map(|s| s.to_string()).collect(), spectra, pairs: dists };
        model.validate()?;
        Ok(model)
    }

    /// Probabilities are non-negative, sum to one per pair, and the
    /// marginals of each observable agree across pairs.
    pub fn validate(&self) -> Result<()> {
        let mut marginals: Vec<Option<Vec<f64>>> = vec![None; self.spectra.len()];
        for d in &self.pairs {
            let (i, j) = d.pair;
            if i >= self.spectra.len() || j >= self.spectra.len() {
                return Err(Error::Validation("pair index out of range".into()));
            }
            if d.probs.len() != self.spectra[i].len() || d.probs.iter().any(|r| r.len() != self.spectra[j].len()) {
                return Err(Error::Dimension("pair table does not match the spectra".into()));
            }
            if d.probs.iter().flatten().any(|&p| p < -1e-12 || !p.is_finite()) {
                return Err(Error::Validation("negative probability".into()));
            }
            let total: f64 = d.probs.iter().flatten().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("pair ({i}, {j}) sums to {total}")));
            }
            let mi: Vec<f64> = d.probs.iter().map(|r| r.iter().sum()).collect();
            let mj: Vec<f64> = (0..self.spectra[j].len()).map(|v| d.probs.iter().map(|r| r[v]).sum()).collect();
            for (k, m) in [(i, mi), (j, mj)] {
                match &marginals[k] {
                    Some(prev) if prev.iter().zip(&m).any(|(a, b)| (a - b).abs() > 1e-9) => {
                        return Err(Error::Validation(format!("inconsistent marginals for {}", self.names[k])));
                    }
                    Some(_) => {}
                    None => marginals[k] = Some(m),
                }
            }
        }
        Ok(())
    }

    /// Number of deterministic outcome assignments.
    pub fn assignment_count(&self) -> Option<usize> {
        self.spectra.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
    }

    /// Spectral indices of assignment `k` (mixed radix, first observable
    /// fastest).
    fn assignment(&self, mut k: usize) -> Vec<usize> {
        self.spectra
            .iter()
            .map(|s| {
                let i = k % s.len();
                k /= s.len();
                i
            })
            .collect()
    }

    /// LP rows: one per pair outcome plus normalisation.
    fn rows(&self) -> Vec<(usize, usize, usize)> {
        let mut rows = Vec::new();
        for (p, d) in self.pairs.iter().enumerate() {
            for u in 0..self.spectra[d.pair.0].len() {
                for v in 0..self.spectra[d.pair.1].len() {
                    rows.push((p, u, v));
                }
            }
        }
        rows
    }
}

fn nearest(spectrum: &[f64], x: f64) -> usize {
    spectrum
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedAssignment {
    /// One outcome per observable.
    pub values: Vec<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityTerm {
    pub pair: (usize, usize),
    pub values: (f64, f64),
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Mixture of deterministic assignments reproducing every pair table.
    Mixture { assignments: Vec<WeightedAssignment> },
    /// `Σ c·Prob(Z_i=u, Z_j=v) + constant ≤ 0` holds for every mixture of
    /// assignments; the quantum tables give `quantum_value > 0`.
    Inequality { terms: Vec<InequalityTerm>, constant: f64, quantum_value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub feasible: bool,
    pub assignments: usize,
    pub witness: Witness,
}

impl FeasibilityCertificate {
    /// Re-verifies the witness against `model` by direct substitution.
    /// Returns the largest residual for a mixture, or the violation
    /// (quantum value) for an inequality.
    pub fn verify(&self, model: &PairwiseModel) -> Result<f64> {
        match &self.witness {
            Witness::Mixture { assignments } => {
                let total: f64 = assignments.iter().map(|a| a.weight).sum();
                let mut worst: f64 = (total - 1.0).abs();
                if assignments.iter().any(|a| a.weight < -LP_TOL) {
                    return Err(Error::Validation("negative mixture weight".into()));
                }
                for d in &model.pairs {
                    let (i, j) = d.pair;
                    for (u, row) in d.probs.iter().enumerate() {
                        for (v, &p) in row.iter().enumerate() {
                            let (x, y) = (model.spectra[i][u], model.spectra[j][v]);
                            let m: f64 = assignments
                                .iter()
                                .filter(|a| a.values[i] == x && a.values[j] == y)
                                .map(|a| a.weight)
                                .sum();
                            worst = worst.max((m - p).abs());
                        }
                    }
                }
                if worst > LP_TOL {
                    return Err(Error::Validation(format!("mixture misses the tables by {worst:e}")));
                }
                Ok(worst)
            }
            Witness::Inequality { terms, constant, quantum_value } => {
                let index = |pair: (usize, usize)| model.pairs.iter().position(|d| d.pair == pair);
                let mut q = *constant;
                for t in terms {
                    let d = &model.pairs[index(t.pair).ok_or_else(|| Error::Validation("unknown pair".into()))?];
                    let u = nearest(&model.spectra[t.pair.0], t.values.0);
                    let v = nearest(&model.spectra[t.pair.1], t.values.1);
                    q += t.coefficient * d.probs[u][v];
                }
                if (q - quantum_value).abs() > 1e-9 {
                    return Err(Error::Validation("recorded quantum value does not match".into()));
                }
                let n = model.assignment_count().unwrap_or(usize::MAX);
                if n > MAX_ASSIGNMENTS {
                    return Err(Error::SizeCap { dim: n, cap: MAX_ASSIGNMENTS });
                }
                let worst = (0..n)
                    .map(|k| {
                        let s = model.assignment(k);
                        *constant
                            + terms
                                .iter()
                                .filter(|t| {
                                    model.spectra[t.pair.0][s[t.pair.0]] == t.values.0
                                        && model.spectra[t.pair.1][s[t.pair.1]] == t.values.1
                                })
                                .map(|t| t.coefficient)
                                .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                if worst > LP_TOL {
                    return Err(Error::Validation(format!("inequality fails for an assignment by {worst:e}")));
                }
                if q < 1e-6 {
                    return Err(Error::Validation(format!("quantum violation {q:e} below 1e-6")));
                }
                Ok(q)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum Phase1 {
    Feasible(Vec<f64>),
    /// Dual vector `y` with `yᵀA ≤ 0` and `yᵀb > 0`.
    Infeasible(Vec<f64>),
}

/// Phase-1 simplex with Bland's rule for `Ax = b, x ≥ 0` (dense).
fn phase_one(a: &DMatrix<f64>, b: &[f64]) -> Phase1 {
    let (m, n) = a.shape();
    let width = n + m + 1;
    let mut t = DMatrix::<f64>::zeros(m + 1, width);
    let mut flip = vec![1.0; m];
    for i in 0..m {
        if b[i] < 0.0 {
            flip[i] = -1.0;
        }
        for j in 0..n {
            t[(i, j)] = flip[i] * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = flip[i] * b[i];
    }
    for j in 0..n {
        t[(m, j)] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
    }
    t[(m, width - 1)] = -(0..m).map(|i| t[(i, width - 1)]).sum::<f64>();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let eps = 1e-12;
    loop {
        let Some(enter) = (0..n + m).find(|&j| t[(m, j)] < -eps) else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if t[(i, enter)] > eps {
                let r = t[(i, width - 1)] / t[(i, enter)];
                leave = match leave {
                    Some((k, best)) if r > best + eps || (r > best - eps && basis[k] < basis[i]) => Some((k, best)),
                    _ => Some((i, r)),
                };
            }
        }
        // phase 1 is bounded below by zero, so a leaving row always exists
        let Some((row, _)) = leave else { break };
        let piv = t[(row, enter)];
        for j in 0..width {
            t[(row, j)] /= piv;
        }
        for i in 0..=m {
            if i != row {
                let f = t[(i, enter)];
                if f != 0.0 {
                    for j in 0..width {
                        let v = t[(row, j)];
                        t[(i, j)] -= f * v;
                    }
                }
            }
        }
        basis[row] = enter;
    }
    let value = -t[(m, width - 1)];
    if value <= LP_TOL {
        let mut x = vec![0.0; n];
        for (i, &j) in basis.iter().enumerate() {
            if j < n {
                x[j] = t[(i, width - 1)];
            }
        }
        Phase1::Feasible(x)
    } else {
        // reduced cost of artificial i is 1 − y_i
        Phase1::Infeasible((0..m).map(|i| flip[i] * (1.0 - t[(m, n + i)])).collect())
    }
}

/// Is there a probability mixture of deterministic outcome assignments that
/// reproduces every compatible-pair distribution of `model`?
pub fn value_map_feasibility(model: &PairwiseModel) -> Result<FeasibilityCertificate> {
    model.validate()?;
    let n = model.assignment_count().unwrap_or(usize::MAX);
    if n > MAX_ASSIGNMENTS {
        return Err(Error::SizeCap { dim: n, cap: MAX_ASSIGNMENTS });
    }
    let rows = model.rows();
    let m = rows.len() + 1;
    let assignments: Vec<Vec<usize>> = (0..n).map(|k| model.assignment(k)).collect();
    let a = DMatrix::from_fn(m, n, |r, k| {
        if r == rows.len() {
            return 1.0;
        }
        let (p, u, v) = rows[r];
        let (i, j) = model.pairs[p].pair;
        if assignments[k][i] == u && assignments[k][j] == v {
            1.0
        } else {
            0.0
        }
    });
    let mut b: Vec<f64> = rows.iter().map(|&(p, u, v)| model.pairs[p].probs[u][v].max(0.0)).collect();
    b.push(1.0);
    let cert = match phase_one(&a, &b) {
        Phase1::Feasible(x) => FeasibilityCertificate {
            feasible: true,
            assignments: n,
            witness: Witness::Mixture {
                assignments: x
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > 1e-15)
                    .map(|(k, &w)| WeightedAssignment {
                        values: assignments[k].iter().enumerate().map(|(o, &i)| model.spectra[o][i]).collect(),
                        weight: w,
                    })
                    .collect(),
            },
        },
        Phase1::Infeasible(y) => {
            let scale = y.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            let y: Vec<f64> = y.iter().map(|v| v / scale).collect();
            let terms: Vec<InequalityTerm> = rows
                .iter()
                .zip(&y)
                .filter(|(_, c)| c.abs() > 1e-13)
                .map(|(&(p, u, v), &c)| {
                    let (i, j) = model.pairs[p].pair;
                    InequalityTerm { pair: (i, j), values: (model.spectra[i][u], model.spectra[j][v]), coefficient: c }
                })
                .collect();
            let quantum_value = y.iter().zip(&b).map(|(c, p)| c * p).sum();
            FeasibilityCertificate {
                feasible: false,
                assignments: n,
                witness: Witness::Inequality { terms, constant: y[rows.len()], quantum_value },
            }
        }
    };
    cert.verify(model)?;
    Ok(cert)
}

/// Six spin observables `σ_x ⊗ I` and `I ⊗ σ_x` for `x ∈ {a, b, c}` on the
/// singlet, with every cross-wing pair compatible.
pub fn bell_model(dirs: [[f64; 3]; 3]) -> Result<PairwiseModel> {
    let mut obs = Vec::with_capacity(6);
    for d in dirs {
        obs.push(spin_on_first(d)?);
    }
    for d in dirs {
        obs.push(spin_on_second(d)?);
    }
    let pairs: Vec<(usize, usize)> = (0..3).flat_map(|i| (3..6).map(move |j| (i, j))).collect();
    PairwiseModel::from_quantum(&["a1", "b1", "c1", "a2", "b2", "c2"], &obs, Some(&pairs), &pauli::singlet())
}

// ---------------------------------------------------------------------------
// Hardy

/// Values of Hardy's four conditions for observables `A, C` on particle 1
/// and `B, D` on particle 2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyConditions {
    /// (1) `Prob(Z_A = 1, Z_B = 1)`.
    pub p_ab: f64,
    /// (2) `Prob(Z_D = 1 | Z_A = 1)`.
    pub d_given_a: f64,
    /// (3) `Prob(Z_C = 1 | Z_B = 1)`.
    pub c_given_b: f64,
    /// (4) `Prob(Z_D = 1, Z_C = 1)`.
    pub p_cd: f64,
}

impl HardyConditions {
    /// (2)-(4) hold within `tol`.
    pub fn constraints_hold(&self, tol: f64) -> bool {
        1.0 - self.d_given_a <= tol && 1.0 - self.c_given_b <= tol && self.p_cd <= tol
    }

    pub fn max_abs_diff(&self, o: &HardyConditions) -> f64 {
        [
            self.p_ab - o.p_ab,
            self.d_given_a - o.d_given_a,
            self.c_given_b - o.c_given_b,
            self.p_cd - o.p_cd,
        ]
        .iter()
        .fold(0.0, |m, x| m.max(x.abs()))
    }
}

fn joint_plus(p: &HermitianOperator, q: &HermitianOperator, psi: &StateVector) -> Result<(f64, f64)> {
    let pvm = joint_pvm(&[p.clone(), q.clone()])?;
    let dist = born_distribution(&pvm, psi)?;
    let both = dist.iter().filter(|(l, _)| l.0[0] > 0.0 && l.0[1] > 0.0).map(|(_, p)| p).sum();
    let first = dist.iter().filter(|(l, _)| l.0[0] > 0.0).map(|(_, p)| p).sum();
    Ok((both, first))
}

/// Evaluates the conditions by joint spectral decomposition of each
/// commuting pair.
pub fn hardy_conditions(psi: &StateVector, a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> Result<HardyConditions> {
    let (oa, oc) = (spin_on_first(a)?, spin_on_first(c)?);
    let (ob, od) = (spin_on_second(b)?, spin_on_second(d)?);
    let (p_ab, _) = joint_plus(&oa, &ob, psi)?;
    let (ad, pa) = joint_plus(&oa, &od, psi)?;
    let (bc, pb) = joint_plus(&ob, &oc, psi)?;
    let (p_cd, _) = joint_plus(&oc, &od, psi)?;
    Ok(HardyConditions {
        p_ab,
        d_given_a: if pa > 0.0 { ad / pa } else { 1.0 },
        c_given_b: if pb > 0.0 { bc / pb } else { 1.0 },
        p_cd,
    })
}

/// Bloch vector of a qubit state.
fn bloch(u: [C64; 2]) -> [f64; 3] {
    let n = u[0].norm_sqr() + u[1].norm_sqr();
    let x = u[0].conj() * u[1];
    [2.0 * x.re / n, 2.0 * x.im / n, (u[0].norm_sqr() - u[1].norm_sqr()) / n]
}

/// `(+1, −1)` eigenvectors of `σ·n`.
fn eigvecs(n: [f64; 3]) -> [[C64; 2]; 2] {
    let th = n[2].clamp(-1.0, 1.0).acos();
    let ph = n[1].atan2(n[0]);
    let (c, s) = ((0.5 * th).cos(), (0.5 * th).sin());
    [
        [C64::new(c, 0.0), C64::from_polar(s, ph)],
        [C64::from_polar(-s, -ph), C64::new(c, 0.0)],
    ]
}

/// Qubit state orthogonal to `w`, or `None` when `w` vanishes.
fn orthogonal(w: [C64; 2]) -> Option<[C64; 2]> {
    let n = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    (n > 1e-12).then(|| [-w[1].conj() / n, w[0].conj() / n])
}

/// Given `ψ` and the `C` (particle 1) and `D` (particle 2) directions,
/// the directions of `A` and `B` that make (2) and (3) exact:
/// `A`'s up state is orthogonal to `⟨d₋|ψ⟩` and `B`'s to `⟨c₋|ψ⟩`.
pub fn hardy_completion(psi: &StateVector, c: [f64; 3], d: [f64; 3]) -> Option<([f64; 3], [f64; 3])> {
    let s = psi.amplitudes();
    let (cm, dm) = (eigvecs(c)[1], eigvecs(d)[1]);
    let w = [
        dm[0].conj() * s[0] + dm[1].conj() * s[1],
        dm[0].conj() * s[2] + dm[1].conj() * s[3],
    ];
    let v = [
        cm[0].conj() * s[0] + cm[1].conj() * s[2],
        cm[0].conj() * s[1] + cm[1].conj() * s[3],
    ];
    Some((bloch(orthogonal(w)?), bloch(orthogonal(v)?)))
}

/// State `α|+−⟩ + β|−+⟩ + γ|−−⟩` (σ_z basis) with
/// `(α, β, γ) = (sinθ cosφ, sinθ sinφ, cosθ)`; it satisfies (4) for
/// `C = D = σ_z`.
pub fn hardy_state(theta: f64, phi: f64) -> StateVector {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    StateVector::from_real(&[0.0, st * cp, st * sp, ct]).expect("finite amplitudes")
}

/// `p` for [`hardy_state`] completed by [`hardy_completion`]:
/// `α²β²γ² / ((α²+γ²)(β²+γ²))`.
pub fn hardy_objective(theta: f64, phi: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (a, b, g) = (st * cp, st * sp, ct);
    let den = (a * a + g * g) * (b * b + g * g);
    if den < 1e-300 {
        0.0
    } else {
        a * a * b * b * g * g / den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyConfiguration {
    /// Two-qubit amplitudes as `[re, im]` pairs.
    pub state: Vec<[f64; 2]>,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
    pub d: [f64; 3],
    /// Value claimed by the optimiser.
    pub p: f64,
    /// Conditions re-evaluated from scratch.
    pub conditions: HardyConditions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardySearch {
    pub best: HardyConfiguration,
    pub evaluations: usize,
    pub converged: bool,
    /// `|p_claimed − p_reevaluated|`.
    pub reevaluation_diff: f64,
}

impl HardyConfiguration {
    pub fn state_vector(&self) -> Result<StateVector> {
        StateVector::new(self.state.iter().map(|z| C64::new(z[0], z[1])).collect())
    }
}

/// Maximises `p` over the two-parameter family [`hardy_state`] with `C = D
/// = σ_z` and `A, B` fixed by [`hardy_completion`]: a `grid × grid` scan,
/// then coordinate descent with step halving down to `1e-8`. Conditions
/// (2)-(4) hold by construction and are re-checked at the optimum.
pub fn hardy_search(grid: usize, budget: usize) -> Result<HardySearch> {
    if grid < 2 {
        return Err(Error::Validation("grid needs at least 2 points per angle".into()));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let cells: Vec<(f64, f64, f64)> = (0..grid * grid)
        .into_par_iter()
        .map(|k| {
            let th = half_pi * ((k / grid) as f64 + 0.5) / grid as f64;
            let ph = half_pi * ((k % grid) as f64 + 0.5) / grid as f64;
            (hardy_objective(th, ph), th, ph)
        })
        .collect();
    let mut evaluations = cells.len();
    let (mut best, mut th, mut ph) = cells.into_iter().fold((f64::NEG_INFINITY, 0.0, 0.0), |b, c| if c.0 > b.0 { c } else { b });
    let mut step = half_pi / grid as f64;
    let mut converged = false;
    while evaluations < budget {
        if step < 1e-8 {
            converged = true;
            break;
        }
        let mut moved = false;
        for (dth, dph) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let v = hardy_objective(th + dth, ph + dph);
            evaluations += 1;
            if v > best {
                best = v;
                th += dth;
                ph += dph;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    let psi = hardy_state(th, ph);
    let z = [0.0, 0.0, 1.0];
    let (a, b) = hardy_completion(&psi, z, z)
        .ok_or_else(|| Error::Validation("degenerate Hardy state".into()))?;
    let conditions = hardy_conditions(&psi, a, b, z, z)?;
    Ok(HardySearch {
        best: HardyConfiguration {
            state: psi.amplitudes().iter().map(|z| [z.re, z.im]).collect(),
            a,
            b,
            c: z,
            d: z,
            p: best,
            conditions,
        },
        evaluations,
        converged,
        reevaluation_diff: (best - conditions.p_ab).abs(),
    })
}

/// Pairwise model of a Hardy configuration: pairs `(A,B), (B,C), (C,D),
/// (D,A)`.
pub fn hardy_model(cfg: &HardyConfiguration) -> Result<PairwiseModel> {
    let obs = [spin_on_first(cfg.a)?, spin_on_second(cfg.b)?, spin_on_first(cfg.c)?, spin_on_second(cfg.d)?];
    PairwiseModel::from_quantum(
        &["A", "B", "C", "D"],
        &obs,
        Some(&[(0, 1), (1, 2), (2, 3), (0, 3)]),
        &cfg.state_vector()?,
    )
}

fn random_qubit(s: &mut Stream) -> [C64; 2] {
    let z = [C64::new(s.normal(), s.normal()), C64::new(s.normal(), s.normal())];
    let n = (z[0].norm_sqr() + z[1].norm_sqr()).sqrt();
    [z[0] / n, z[1] / n]
}

fn random_direction(s: &mut Stream) -> [f64; 3] {
    bloch(random_qubit(s))
}

/// Largest `p` among Hardy configurations on random product states.
/// For each state, `C` and `D` range over the directions that make (4)
/// exact plus `directions` random ones; `A`, `B` are completed when
/// determined and otherwise drawn at random. Only configurations meeting
/// (2)-(4) within `1e-6` count.
pub fn hardy_product_sweep(states: usize, directions: usize, seed: u64) -> Result<f64> {
    let sups: Vec<f64> = (0..states)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut s = Stream::new(seed, k as u64);
            let (u, v) = (random_qubit(&mut s), random_qubit(&mut s));
            let psi = StateVector::new(vec![u[0] * v[0], u[0] * v[1], u[1] * v[0], u[1] * v[1]])?;
            // directions whose up state is orthogonal to u (resp. v)
            let mut cs = vec![bloch(orthogonal(u).unwrap())];
            let mut ds = vec![bloch(orthogonal(v).unwrap())];
            for _ in 0..directions {
                cs.push(random_direction(&mut s));
                ds.push(random_direction(&mut s));
            }
            let mut sup: f64 = 0.0;
            for &c in &cs {
                for &d in &ds {
                    let (a, b) = match hardy_completion(&psi, c, d) {
                        Some(ab) => ab,
                        None => (random_direction(&mut s), random_direction(&mut s)),
                    };
                    let h = hardy_conditions(&psi, a, b, c, d)?;
                    if h.constraints_hold(HARDY_TOL) {
                        sup = sup.max(h.p_ab);
                    }
                }
            }
            Ok(sup)
        })
        .collect::<Result<_>>()?;
    Ok(sups.into_iter().fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// Quadratic-map test

/// Vectors that can be superposed and have a squared norm.
pub trait Superposable: Sized {
    fn norm_sqr(&self) -> f64;
    fn superpose(&self, other: &Self) -> Result<Self>;
}

impl Superposable for StateVector {
    fn norm_sqr(&self) -> f64 {
        self.norm().powi(2)
    }
    fn superpose(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension("superposing states of different dimension".into()));
        }
        Ok(self + other)
    }
}

impl Superposable for GridWaveFunction {
    fn norm_sqr(&self) -> f64 {
        GridWaveFunction::norm_sqr(self)
    }
    fn superpose(&self, other: &Self) -> Result<Self> {
        if self.grid() != other.grid() || self.spin_dim() != other.spin_dim() {
            return Err(Error::Dimension("superposing wave functions on different grids".into()));
        }
        let s = self.samples().iter().zip(other.samples()).map(|(a, b)| a + b).collect();
        GridWaveFunction::new(self.grid().clone(), self.spin_dim(), s, self.time())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticMapReport {
    pub pairs: usize,
    pub bins: usize,
    /// `min over pairs and bins of 2(μ^{ψ₁} + μ^{ψ₂}) − μ^{ψ₁+ψ₂}`.
    pub worst_slack: f64,
    pub worst_pair: usize,
    pub worst_bin: usize,
}

impl QuadraticMapReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_slack >= -tol
    }
}

/// Checks `μ^{ψ₁+ψ₂}(Δ) ≤ 2(μ^{ψ₁}(Δ) + μ^{ψ₂}(Δ))` over `pairs` and the
/// bins of `map`. `map` returns the label distribution of the normalised
/// state; `μ^ψ` is that distribution times `‖ψ‖²`.
pub fn quadratic_map_test<T: Superposable>(
    map: impl Fn(&T) -> Result<Vec<f64>>,
    pairs: &[(T, T)],
) -> Result<QuadraticMapReport> {
    let mu = |psi: &T| -> Result<Option<Vec<f64>>> {
        let n = psi.norm_sqr();
        if n < 1e-300 {
            return Ok(None);
        }
        Ok(Some(map(psi)?.into_iter().map(|p| p * n).collect()))
    };
    let mut report = QuadraticMapReport { pairs: pairs.len(), bins: 0, worst_slack: f64::INFINITY, worst_pair: 0, worst_bin: 0 };
    for (k, (p1, p2)) in pairs.iter().enumerate() {
        let sum = p1.superpose(p2)?;
        let m12 = match mu(&sum)? {
            Some(m) => m,
            None => continue,
        };
        let bins = m12.len();
        let m1 = mu(p1)?.unwrap_or_else(|| vec![0.0; bins]);
        let m2 = mu(p2)?.unwrap_or_else(|| vec![0.0; bins]);
        if m1.len() != bins || m2.len() != bins {
            return Err(Error::Dimension("map returned different bin counts".into()));
        }
        report.bins = bins;
        for b in 0..bins {
            let slack = 2.0 * (m1[b] + m2[b]) - m12[b];
            if slack < report.worst_slack {
                report.worst_slack = slack;
                report.worst_pair = k;
                report.worst_bin = b;
            }
        }
    }
    Ok(report)
}

/// Born distribution of `povm` (one bin per outcome, in outcome order).
pub fn povm_map(povm: &Povm) -> impl Fn(&StateVector) -> Result<Vec<f64>> + '_ {
    move |psi| {
        let psi = psi.normalized()?;
        povm.outcomes().iter().map(|(_, o)| Ok(o.op().expectation(&psi)?.re)).collect()
    }
}

/// Distribution of the sign of the Bohmian velocity `v = J/ρ` on axis 0
/// under `|ψ|²`: bins `v < −ε`, `|v| ≤ ε`, `v > ε`.
pub fn velocity_sign_map(h: &HamiltonianSpec, eps: f64) -> impl Fn(&GridWaveFunction) -> Result<Vec<f64>> + '_ {
    move |psi| {
        let psi = psi.clone().normalized()?;
        let j = probability_current(&psi, h)?;
        let rho = psi.density();
        let dv = psi.grid().cell_volume();
        let mut out = vec![0.0; 3];
        for (r, jx) in rho.iter().zip(&j[0]) {
            let bin = if *r <= 0.0 {
                1
            } else {
                let v = jx / r;
                if v < -eps {
                    0
                } else if v > eps {
                    2
                } else {
                    1
                }
            };
            out[bin] += r * dv;
        }
        Ok(out)
    }
}

/// `μ_ψ = δ_{[ψ]}`: one bin per ray in `rays`, reading 1 when `ψ` lies on it.
pub fn identity_map(rays: Vec<StateVector>) -> impl Fn(&StateVector) -> Result<Vec<f64>> {
    move |psi| {
        let psi = psi.normalized()?;
        rays.iter()
            .map(|r| {
                let r = r.normalized()?;
                Ok(if r.inner(&psi).norm_sqr() > 1.0 - 1e-12 { 1.0 } else { 0.0 })
            })
            .collect()
    }
}

/// Random state of dimension `dim` (complex Gaussian, normalised).
pub fn random_state(dim: usize, s: &mut Stream) -> Result<StateVector> {
    StateVector::new((0..dim).map(|_| C64::new(s.normal(), s.normal())).collect())?.normalized()
}

/// Random POVM with `outcomes` effects on `C^dim`: `O_k = V_k†V_k` for the
/// blocks of a random isometry `V: C^dim → C^{outcomes·dim}`.
pub fn random_povm(dim: usize, outcomes: usize, s: &mut Stream) -> Result<Povm> {
    let rows = outcomes * dim;
    let g = DMatrix::from_fn(rows, dim, |_, _| C64::new(s.normal(), s.normal()));
    let q = g.qr().q();
    let effects = (0..outcomes)
        .map(|k| {
            let block = q.rows(k * dim, dim).into_owned();
            let op = Operator::from_matrix(block.adjoint() * block)?;
            Ok((Label::scalar(k as f64), HermitianOperator::symmetrized(&op)))
        })
        .collect::<Result<Vec<_>>>()?;
    Povm::new(effects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{AnalyticState, GridSpec};

    #[test]
    fn bell_at_120_degrees() {
        let [a, b, c] = trine();
        let terms = bell_terms(a, b, c).unwrap();
        for t in terms {
            assert!((t - 0.25).abs() < 1e-12);
        }
        assert!((bell_lhs(a, b, c).unwrap() - 0.75).abs() < 1e-12);
        assert!((bell_lhs(a, a, a).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn anticorrelation_is_half_one_plus_dot() {
        let mut s = Stream::new(3, 0);
        for _ in 0..20 {
            let (a, b) = (random_direction(&mut s), random_direction(&mut s));
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((anticorrelation(a, b).unwrap() - 0.5 * (1.0 + dot)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_unit_settings_are_rejected() {
        assert!(bell_lhs([1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn single_pair_is_feasible() {
        let z = [0.0, 0.0, 1.0];
        let model = PairwiseModel::from_quantum(
            &["z1", "z2"],
            &[spin_on_first(z).unwrap(), spin_on_second(z).unwrap()],
            None,
            &pauli::singlet(),
        )
        .unwrap();
        let cert = value_map_feasibility(&model).unwrap();
        assert!(cert.feasible);
        let Witness::Mixture { assignments } = &cert.witness else { panic!() };
        assert_eq!(assignments.len(), 2);
        for a in assignments {
            assert!((a.weight - 0.5).abs() < 1e-12);
            assert_eq!(a.values[0], -a.values[1]);
        }
    }

    #[test]
    fn bell_triple_is_infeasible_with_witness() {
        let model = bell_model(trine()).unwrap();
        let cert = value_map_feasibility(&model).unwrap();
        assert!(!cert.feasible);
        assert!(cert.verify(&model).unwrap() >= 1e-6);
        let back: FeasibilityCertificate = serde_json::from_str(&cert.to_json().unwrap()).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn coplanar_same_axis_bell_model_is_feasible() {
        let z = [0.0, 0.0, 1.0];
        let cert = value_map_feasibility(&bell_model([z, z, z]).unwrap()).unwrap();
        assert!(cert.feasible);
    }

    #[test]
    fn hardy_optimum() {
        let h = hardy_search(64, 1_000_000).unwrap();
        assert!(h.converged);
        let exact = (5.0 * 5f64.sqrt() - 11.0) / 2.0;
        assert!((h.best.p - exact).abs() < 1e-9, "{}", h.best.p);
        assert!(h.best.conditions.constraints_hold(1e-12));
        assert!(h.reevaluation_diff < 1e-8);
        let cert = value_map_feasibility(&hardy_model(&h.best).unwrap()).unwrap();
        assert!(!cert.feasible);
    }

    #[test]
    fn hardy_search_reports_exhausted_budget() {
        let h = hardy_search(8, 70).unwrap();
        assert!(!h.converged);
        assert!(h.best.p > 0.0);
    }

    #[test]
    fn product_states_have_no_hardy_effect() {
        assert!(hardy_product_sweep(64, 6, 1).unwrap() <= 1e-6);
    }

    #[test]
    fn povm_maps_satisfy_quadratic_inequality() {
        let mut s = Stream::new(8, 0);
        let povm = random_povm(3, 4, &mut s).unwrap();
        let pairs: Vec<_> = (0..50)
            .map(|_| {
                let a = random_state(3, &mut s).unwrap().scale(C64::new(s.uniform() * 2.0, 0.0));
                let b = random_state(3, &mut s).unwrap();
                (a, b)
            })
            .collect();
        let r = quadratic_map_test(povm_map(&povm), &pairs).unwrap();
        assert!(r.holds(1e-10), "{}", r.worst_slack);
    }

    #[test]
    fn velocity_sign_map_violates_inequality() {
        let grid = GridSpec::line(-20.0, 20.0, 512).unwrap();
        let st = AnalyticState::Gaussian { center: vec![0.0], width: vec![1.0], momentum: vec![1.25], mass: 1.0, hbar: 1.0 };
        let psi = st.evaluate(&grid, 0.0).unwrap();
        let re = GridWaveFunction::new(grid.clone(), 1, psi.samples().iter().map(|z| C64::new(z.re, 0.0)).collect(), 0.0).unwrap();
        let im = GridWaveFunction::new(grid.clone(), 1, psi.samples().iter().map(|z| C64::new(0.0, z.im)).collect(), 0.0).unwrap();
        let h = HamiltonianSpec::free(vec![1.0]);
        let r = quadratic_map_test(velocity_sign_map(&h, 1e-3), &[(re, im)]).unwrap();
        assert!(r.worst_slack <= -0.1, "{}", r.worst_slack);
        assert_eq!(r.worst_bin, 2);
    }

    #[test]
    fn identity_map_violates_inequality() {
        let a = StateVector::from_real(&[1.0, 0.0]).unwrap();
        let b = StateVector::from_real(&[0.0, 1.0]).unwrap();
        let rays = vec![a.clone(), b.clone(), &a + &b];
        let r = quadratic_map_test(identity_map(rays), &[(a, b)]).unwrap();
        assert!((r.worst_slack + 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_povm_closes() {
        let mut s = Stream::new(1, 1);
        let p = random_povm(4, 3, &mut s).unwrap();
        assert!(p.closure_defect() < 1e-12);
    }
}
