//! State construction and validation: Bloch vectors, density matrices,
//! traceless deviation states, thermal equilibrium, ensemble measurement.

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::real::{cre, cx, tol, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochVector<T: Real> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> BlochVector<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// rho = (1 + r.sigma)/2; rejects |r| > 1 (+ roundoff slack).
pub fn density_from_bloch<T: Real>(r: &BlochVector<T>) -> Result<DensityMatrix<T>> {
    if r.norm() > T::one() + tol::<T>(1e-10) {
        return Err(Error::InvalidArgument(format!(
            "Bloch vector norm {} exceeds 1",
            r.norm()
        )));
    }
    let half = T::lit(0.5);
    let mut m = Operator::zeros(2);
    m.set(0, 0, cre((T::one() + r.z) * half));
    m.set(1, 1, cre((T::one() - r.z) * half));
    m.set(0, 1, cx(r.x * half, -r.y * half));
    m.set(1, 0, cx(r.x * half, r.y * half));
    DensityMatrix::new(m)
}

/// Trace-1 Hermitian PSD state.
#[derive(Clone, Debug)]
pub struct DensityMatrix<T: Real> {
    op: Operator<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn new(op: Operator<T>) -> Result<Self> {
        match validate_density(&op) {
            StateClass::Invalid(reason) => Err(Error::InvalidArgument(reason)),
            _ => Ok(Self { op }),
        }
    }

    pub fn op(&self) -> &Operator<T> {
        &self.op
    }

    pub fn into_op(self) -> Operator<T> {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn purity(&self) -> T {
        self.op.matmul(&self.op).trace().re
    }

    pub fn expectation(&self, observable: &Operator<T>) -> Result<T> {
        expectation(observable, &self.op)
    }

    /// Single-qubit Bloch components (Tr[X rho], Tr[Y rho], Tr[Z rho]).
    pub fn bloch(&self) -> Result<BlochVector<T>> {
        if self.dim() != 2 {
            return Err(Error::DimMismatch(format!(
                "Bloch vector requires a single qubit, dim is {}",
                self.dim()
            )));
        }
        Ok(BlochVector::new(
            self.expectation(&Operator::pauli_x())?,
            self.expectation(&Operator::pauli_y())?,
            self.expectation(&Operator::pauli_z())?,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StateClass {
    ValidPure,
    ValidMixed,
    Invalid(String),
}

/// Checks trace 1, Hermiticity, positive semidefiniteness; classifies
/// pure vs mixed by Tr[rho^2] within 1e-8.
pub fn validate_density<T: Real>(m: &Operator<T>) -> StateClass {
    let tr = m.trace();
    if (tr - cre(T::one())).norm() > tol::<T>(1e-10) {
        return StateClass::Invalid(format!("trace is {}, expected 1", tr));
    }
    let herm = m.hermiticity_deviation();
    if herm > tol::<T>(1e-12) {
        return StateClass::Invalid(format!("not Hermitian (deviation {})", herm));
    }
    let eigs = match m.eigh() {
        Ok(e) => e.values,
        Err(e) => return StateClass::Invalid(format!("eigendecomposition failed: {e}")),
    };
    if eigs[0] < -tol::<T>(1e-10) {
        return StateClass::Invalid(format!("negative eigenvalue {}", eigs[0]));
    }
    let purity = m.matmul(m).trace().re;
    if (purity - T::one()).abs() <= tol::<T>(1e-8) {
        StateClass::ValidPure
    } else {
        StateClass::ValidMixed
    }
}

/// Traceless Hermitian deviation state; carries the observable signal of a
/// high-temperature ensemble (the identity part is silent).
#[derive(Clone, Debug)]
pub struct DeviationDensity<T: Real> {
    op: Operator<T>,
}

impl<T: Real> DeviationDensity<T> {
    pub fn new(op: Operator<T>) -> Result<Self> {
        let tr = op.trace().norm();
        if tr > tol::<T>(1e-12) * op.max_abs().max(T::one()) {
            return Err(Error::InvalidArgument(format!("deviation state trace {} is not 0", tr)));
        }
        let herm = op.hermiticity_deviation();
        if herm > tol::<T>(1e-12) * op.max_abs().max(T::one()) {
            return Err(Error::NotHermitian(herm.as_f64()));
        }
        Ok(Self { op })
    }

    pub fn op(&self) -> &Operator<T> {
        &self.op
    }

    pub fn into_op(self) -> Operator<T> {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn expectation(&self, observable: &Operator<T>) -> Result<T> {
        expectation(observable, &self.op)
    }
}

/// High-temperature thermal deviation state -sum_i (w_i/w_mean) I_z^i,
/// normalized so each coefficient is -1 when all frequencies are equal
/// (the overall polarization prefactor is factored out).
pub fn thermal_deviation_state<T: Real>(omegas: &[T]) -> Result<DeviationDensity<T>> {
    if omegas.is_empty() {
        return Err(Error::Empty("thermal_deviation_state omegas"));
    }
    let n = omegas.len();
    let mean = omegas.iter().copied().sum::<T>() / T::lit(n as f64);
    if mean == T::zero() {
        return Err(Error::InvalidArgument("mean Larmor frequency is zero".into()));
    }
    let mut acc = Operator::zeros(1 << n);
    for (i, &w) in omegas.iter().enumerate() {
        let term = Operator::embed(&Operator::spin_z(), i, n)?.scaled_re(-(w / mean));
        acc = &acc + &term;
    }
    DeviationDensity::new(acc)
}

/// Polarization bound 1/(1+2^{n/2}) below which the pseudo-pure state is
/// separable for all unitary preparations.
pub fn pseudo_pure_threshold<T: Real>(n: usize) -> T {
    T::one() / (T::one() + T::lit(2.0).powf(T::lit(n as f64) * T::lit(0.5)))
}

/// <A> = Tr[A rho]; requires Hermitian A, checks the imaginary residue.
pub fn expectation<T: Real>(observable: &Operator<T>, state: &Operator<T>) -> Result<T> {
    if observable.dim() != state.dim() {
        return Err(Error::DimMismatch(format!(
            "observable dim {} vs state dim {}",
            observable.dim(),
            state.dim()
        )));
    }
    let herm = observable.hermiticity_deviation();
    if herm > tol::<T>(1e-12) * observable.max_abs().max(T::one()) {
        return Err(Error::NotHermitian(herm.as_f64()));
    }
    let tr = observable.matmul(state).trace();
    let scale = observable.max_abs().max(T::one()) * state.max_abs().max(T::one());
    if tr.im.abs() > tol::<T>(1e-10) * scale * T::lit(state.dim() as f64) {
        return Err(Error::NonFinite("expectation imaginary residue"));
    }
    Ok(tr.re)
}
