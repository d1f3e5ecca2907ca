//! Dense finite-dimensional complex linear algebra.
//!
//! Tensor products use the convention that the left factor is the slow
//! index: `(a ⊗ b)[i * dim(b) + j] = a[i] * b[j]`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Largest dimension any constructed vector or operator may have.
pub const MAX_DIM: usize = 4096;

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;
const NORMALIZED_TOL: f64 = 1e-12;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Dimension("dimension must be positive".into()));
    }
    if dim > MAX_DIM {
        return Err(Error::SizeCap { dim, cap: MAX_DIM });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        check_dim(amps.len())?;
        if amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("state amplitudes must be finite".into()));
        }
        Ok(Self {
            amps: DVector::from_vec(amps),
        })
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_vector(amps: DVector<C64>) -> Result<Self> {
        Self::new(amps.iter().copied().collect())
    }

    /// Standard basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        check_dim(dim)?;
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} >= dim {dim}")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Self::new(amps)
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        self.amps.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORMALIZED_TOL
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "state is not normalized (norm {})",
                self.norm()
            )))
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::Validation("cannot normalize the zero vector".into()));
        }
        Ok(Self {
            amps: &self.amps / C64::new(n, 0.0),
        })
    }

    /// `⟨self, other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps.dotc(&other.amps)
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            amps: &self.amps * c,
        }
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn projector(&self) -> Operator {
        Operator(&self.amps * self.amps.adjoint())
    }
}

impl Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        StateVector {
            amps: &self.amps + &rhs.amps,
        }
    }
}

impl Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        StateVector {
            amps: &self.amps - &rhs.amps,
        }
    }
}

/// A general square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_dim(m.nrows())?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Validation("operator entries must be finite".into()));
        }
        Ok(Self(m))
    }

    /// Row-major construction.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("rows must form a square matrix".into()));
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let n = entries.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(entries[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// `|a⟩⟨b|`.
    pub fn outer(a: &StateVector, b: &StateVector) -> Self {
        Self(a.as_vector() * b.as_vector().adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    pub fn scale_real(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        if v.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "operator dim {} vs state dim {}",
                self.dim(),
                v.dim()
            )));
        }
        Ok(StateVector {
            amps: &self.0 * v.as_vector(),
        })
    }

    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        if rhs.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "cannot compose {}x{} with {}x{}",
                self.dim(),
                self.dim(),
                rhs.dim(),
                rhs.dim()
            )));
        }
        Ok(Operator(&self.0 * &rhs.0))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "max_abs_diff: dimension mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        Ok(&self.compose(other)? - &other.compose(self)?)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol * self.max_abs().max(1.0)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let prod = Operator(self.0.adjoint() * &self.0);
        prod.max_abs_diff(&Operator::identity(self.dim())) <= tol
    }

    /// Hermitian part `(A + A†)/2`.
    pub fn hermitian_part(&self) -> Operator {
        Operator((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = self.hermitian_part();
        h.0.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `⟨ψ, Aψ⟩`.
    pub fn expectation(&self, psi: &StateVector) -> Result<C64> {
        Ok(psi.inner(&self.apply(psi)?))
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let z = self.0[(i, j)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator(Operator);

impl HermitianOperator {
    pub fn new(op: Operator) -> Result<Self> {
        if !op.is_hermitian(HERMITIAN_TOL) {
            return Err(Error::Validation(format!(
                "operator is not Hermitian (max |A - A†| = {:e})",
                op.max_abs_diff(&op.adjoint())
            )));
        }
        Ok(Self(op))
    }

    /// Takes the Hermitian part, for operators that are Hermitian up to
    /// rounding from a computation.
    pub fn symmetrized(op: &Operator) -> Self {
        Self(op.hermitian_part())
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Operator::from_real_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self(Operator::identity(dim))
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self(Operator::diagonal(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn op(&self) -> &Operator {
        &self.0
    }

    pub fn into_op(self) -> Operator {
        self.0
    }

    /// `exp(-i t A)` through the spectral decomposition.
    pub fn exp_i(&self, t: f64) -> Result<UnitaryOperator> {
        let dec = spectral_decompose(self, None)?;
        let mut acc = Operator::zeros(self.dim());
        for (lambda, p) in dec.eigenvalues.iter().zip(&dec.projectors) {
            acc = &acc + &p.op().scale(C64::from_polar(1.0, -t * lambda));
        }
        UnitaryOperator::new(acc)
    }
}

impl AsRef<Operator> for HermitianOperator {
    fn as_ref(&self) -> &Operator {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryOperator(Operator);

impl UnitaryOperator {
    pub fn new(op: Operator) -> Result<Self> {
        if !op.is_unitary(UNITARY_TOL) {
            return Err(Error::Validation("operator is not unitary".into()));
        }
        Ok(Self(op))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Operator::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn op(&self) -> &Operator {
        &self.0
    }

    pub fn inverse(&self) -> UnitaryOperator {
        UnitaryOperator(self.0.adjoint())
    }
}

impl AsRef<Operator> for UnitaryOperator {
    fn as_ref(&self) -> &Operator {
        &self.0
    }
}

/// Distinct eigenvalues (ascending) with their spectral projectors.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub projectors: Vec<HermitianOperator>,
    /// Orthonormal eigenvectors spanning each eigenspace, as columns.
    pub bases: Vec<DMatrix<C64>>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> Operator {
        let dim = self.projectors[0].dim();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(Operator::zeros(dim), |acc, (l, p)| &acc + &p.op().scale_real(*l))
    }
}

/// Spectral decomposition of `a`. Eigenvalues closer than `degeneracy_tol`
/// (default `1e-9 * max|A_ij|`) are merged into one eigenspace.
pub fn spectral_decompose(
    a: &HermitianOperator,
    degeneracy_tol: Option<f64>,
) -> Result<SpectralDecomposition> {
    let scale = a.op().max_abs();
    let tol = degeneracy_tol.unwrap_or(1e-9 * if scale > 0.0 { scale } else { 1.0 });
    let eig = a.op().hermitian_part().into_matrix().symmetric_eigen();
    let n = a.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for &i in &order {
        let l = eig.eigenvalues[i];
        match groups.last_mut() {
            Some(g) if l - last < tol => g.push(i),
            _ => groups.push(vec![i]),
        }
        last = l;
    }

    let mut eigenvalues = Vec::with_capacity(groups.len());
    let mut projectors = Vec::with_capacity(groups.len());
    let mut bases = Vec::with_capacity(groups.len());
    for g in groups {
        let mean = g.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / g.len() as f64;
        let basis = DMatrix::from_fn(n, g.len(), |r, c| eig.eigenvectors[(r, g[c])]);
        let p = Operator(&basis * basis.adjoint()).hermitian_part();
        eigenvalues.push(mean);
        projectors.push(HermitianOperator(p));
        bases.push(basis);
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        projectors,
        bases,
    })
}

/// Kronecker products of operators and state vectors.
pub trait TensorProduct: Sized {
    fn tensor(&self, other: &Self) -> Result<Self>;
}

impl TensorProduct for Operator {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let (n, m) = (self.dim(), other.dim());
        check_dim(n.checked_mul(m).unwrap_or(usize::MAX))?;
        Ok(Operator(self.0.kronecker(&other.0)))
    }
}

impl TensorProduct for HermitianOperator {
    fn tensor(&self, other: &Self) -> Result<Self> {
        Ok(HermitianOperator(self.0.tensor(&other.0)?))
    }
}

impl TensorProduct for UnitaryOperator {
    fn tensor(&self, other: &Self) -> Result<Self> {
        Ok(UnitaryOperator(self.0.tensor(&other.0)?))
    }
}

impl TensorProduct for StateVector {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let (n, m) = (self.dim(), other.dim());
        check_dim(n.checked_mul(m).unwrap_or(usize::MAX))?;
        Ok(StateVector {
            amps: self.amps.kronecker(&other.amps),
        })
    }
}

pub fn tensor_product<T: TensorProduct>(a: &T, b: &T) -> Result<T> {
    a.tensor(b)
}

/// Traces out every factor except `keep` from an operator on
/// `dims[0] ⊗ dims[1] ⊗ ...`.
pub fn partial_trace(op: &Operator, keep: usize, dims: &[usize]) -> Result<Operator> {
    let total: usize = dims.iter().product();
    if total != op.dim() {
        return Err(Error::Dimension(format!(
            "factor dims {:?} multiply to {total}, operator dim is {}",
            dims,
            op.dim()
        )));
    }
    if keep >= dims.len() {
        return Err(Error::Dimension(format!(
            "keep index {keep} out of range for {} factors",
            dims.len()
        )));
    }
    let before: usize = dims[..keep].iter().product();
    let k = dims[keep];
    let after: usize = dims[keep + 1..].iter().product();
    let m = op.matrix();
    let out = DMatrix::from_fn(k, k, |i, j| {
        let mut acc = C64::new(0.0, 0.0);
        for b in 0..before {
            for a in 0..after {
                let r = (b * k + i) * after + a;
                let c = (b * k + j) * after + a;
                acc += m[(r, c)];
            }
        }
        acc
    });
    Ok(Operator(out))
}

/// True iff every pairwise commutator has max-abs entry `<= tol`.
pub fn commuting_family(ops: &[HermitianOperator], tol: f64) -> Result<bool> {
    if let Some(first) = ops.first() {
        if ops.iter().any(|o| o.dim() != first.dim()) {
            return Err(Error::Dimension("commuting_family: unequal dims".into()));
        }
    }
    for (i, a) in ops.iter().enumerate() {
        for b in &ops[i + 1..] {
            if a.op().commutator(b.op())?.max_abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Pauli matrices and spin-1/2 helpers.
pub mod pauli {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub fn sigma_x() -> HermitianOperator {
        HermitianOperator(Operator::from_rows(&[vec![c(0., 0.), c(1., 0.)], vec![c(1., 0.), c(0., 0.)]]).unwrap())
    }

    pub fn sigma_y() -> HermitianOperator {
        HermitianOperator(Operator::from_rows(&[vec![c(0., 0.), c(0., -1.)], vec![c(0., 1.), c(0., 0.)]]).unwrap())
    }

    pub fn sigma_z() -> HermitianOperator {
        HermitianOperator::diagonal(&[1.0, -1.0])
    }

    /// `σ·n` for a (not necessarily unit) direction `n`.
    pub fn sigma_along(n: [f64; 3]) -> HermitianOperator {
        let m = &(&sigma_x().op().scale_real(n[0]) + &sigma_y().op().scale_real(n[1]))
            + &sigma_z().op().scale_real(n[2]);
        HermitianOperator(m)
    }

    /// Eigenvector of `σ_z` with eigenvalue +1.
    pub fn up() -> StateVector {
        StateVector::basis(2, 0).unwrap()
    }

    /// Eigenvector of `σ_z` with eigenvalue -1.
    pub fn down() -> StateVector {
        StateVector::basis(2, 1).unwrap()
    }

    /// Antisymmetric two-spin singlet `(|+−⟩ − |−+⟩)/√2`.
    pub fn singlet() -> StateVector {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::from_real(&[0.0, s, -s, 0.0]).unwrap()
    }

    /// Unit vector in the x-z plane at polar angle `theta` from +z.
    pub fn xz_direction(theta: f64) -> [f64; 3] {
        [theta.sin(), 0.0, theta.cos()]
    }
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;

    #[test]
    fn identity_tensor_identity() {
        for n in 1..5 {
            for m in 1..4 {
                let p = tensor_product(&Operator::identity(n), &Operator::identity(m)).unwrap();
                assert_eq!(p, Operator::identity(n * m));
            }
        }
    }

    #[test]
    fn sigma_z_tensor_identity_is_diag() {
        let p = sigma_z().tensor(&HermitianOperator::identity(2)).unwrap();
        assert_eq!(p.op(), &Operator::diagonal(&[1.0, 1.0, -1.0, -1.0]));
    }

    #[test]
    fn up_tensor_down_is_e1() {
        let v = up().tensor(&down()).unwrap();
        assert_eq!(v, StateVector::basis(4, 1).unwrap());
    }

    #[test]
    fn tensor_size_cap() {
        let a = Operator::identity(100);
        let b = Operator::identity(50);
        assert!(matches!(a.tensor(&b), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn partial_trace_of_singlet_is_maximally_mixed() {
        let w = singlet().projector();
        let r = partial_trace(&w, 0, &[2, 2]).unwrap();
        assert!(r.max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-15);
        let r = partial_trace(&w, 1, &[2, 2]).unwrap();
        assert!(r.max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-15);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let phi = StateVector::new(vec![C64::new(0.0, 1.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]).unwrap();
        let w = psi.tensor(&phi).unwrap().projector();
        let r = partial_trace(&w, 0, &[2, 3]).unwrap();
        assert!(r.max_abs_diff(&psi.projector()) < 1e-15);
        let r = partial_trace(&w, 1, &[2, 3]).unwrap();
        assert!(r.max_abs_diff(&phi.projector()) < 1e-15);
    }

    #[test]
    fn partial_trace_keeps_identity_factor() {
        let w = StateVector::from_real(&[0.6, 0.8]).unwrap().projector();
        let prod = w.tensor(&Operator::identity(2).scale_real(0.5)).unwrap();
        let r = partial_trace(&prod, 1, &[2, 2]).unwrap();
        assert!(r.max_abs_diff(&Operator::identity(2).scale_real(0.5)) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let w = Operator::identity(4);
        assert!(matches!(partial_trace(&w, 0, &[2, 3]), Err(Error::Dimension(_))));
        assert!(matches!(partial_trace(&w, 2, &[2, 2]), Err(Error::Dimension(_))));
    }

    #[test]
    fn spectral_sigma_z() {
        let d = spectral_decompose(&sigma_z(), None).unwrap();
        assert_eq!(d.eigenvalues.len(), 2);
        assert!((d.eigenvalues[0] + 1.0).abs() < 1e-15);
        assert!((d.eigenvalues[1] - 1.0).abs() < 1e-15);
        assert!(d.projectors[0].op().max_abs_diff(&Operator::diagonal(&[0.0, 1.0])) < 1e-15);
        assert!(d.projectors[1].op().max_abs_diff(&Operator::diagonal(&[1.0, 0.0])) < 1e-15);
    }

    #[test]
    fn spectral_identity_single_projector() {
        let d = spectral_decompose(&HermitianOperator::identity(3), None).unwrap();
        assert_eq!(d.eigenvalues, vec![1.0]);
        assert!(d.projectors[0].op().max_abs_diff(&Operator::identity(3)) < 1e-15);
    }

    #[test]
    fn spectral_rejects_non_hermitian() {
        let m = Operator::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(HermitianOperator::new(m).is_err());
    }

    #[test]
    fn commutators() {
        let i2 = HermitianOperator::identity(2);
        assert!(commuting_family(&[sigma_z(), i2.clone()], 1e-12).unwrap());
        assert!(!commuting_family(&[sigma_z(), sigma_x()], 1e-12).unwrap());
        // [σz, σx] = 2iσy
        let c = sigma_z().op().commutator(sigma_x().op()).unwrap();
        assert!(c.max_abs_diff(&sigma_y().op().scale(C64::new(0.0, 2.0))) < 1e-15);
        let a = sigma_z().tensor(&i2).unwrap();
        let b = i2.tensor(&sigma_x()).unwrap();
        assert!(commuting_family(&[a, b], 1e-12).unwrap());
    }

    #[test]
    fn exp_i_of_sigma_z() {
        let u = sigma_z().exp_i(0.3).unwrap();
        assert!((u.op().get(0, 0) - C64::from_polar(1.0, -0.3)).norm() < 1e-14);
        assert!((u.op().get(1, 1) - C64::from_polar(1.0, 0.3)).norm() < 1e-14);
    }
}
