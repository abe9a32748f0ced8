//! Rotations, standard gates, pulse-sequence composition, fidelity, and
//! weak-coupling transition-line bookkeeping.

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::real::{cis, cre, cx, tol, Cx, Real};
use serde::{Deserialize, Serialize};

/// Rotation about n by theta on one qubit: exp(-i theta n.sigma/2).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSpec<T: Real> {
    pub axis: [T; 3],
    pub angle: T,
    pub target: usize,
}

impl<T: Real> RotationSpec<T> {
    pub fn x(angle: T, target: usize) -> Self {
        Self { axis: [T::one(), T::zero(), T::zero()], angle, target }
    }

    pub fn y(angle: T, target: usize) -> Self {
        Self { axis: [T::zero(), T::one(), T::zero()], angle, target }
    }

    pub fn z(angle: T, target: usize) -> Self {
        Self { axis: [T::zero(), T::zero(), T::one()], angle, target }
    }
}

/// cos(theta/2) I - i sin(theta/2) (nx X + ny Y + nz Z), single qubit.
pub fn rotation_single<T: Real>(axis: [T; 3], angle: T) -> Result<Operator<T>> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if (norm - T::one()).abs() > tol::<T>(1e-10) {
        return Err(Error::InvalidArgument(format!("rotation axis norm {} is not 1", norm)));
    }
    let half = angle * T::lit(0.5);
    let (c, s) = (half.cos(), half.sin());
    let gen = &(&Operator::pauli_x().scaled_re(axis[0]) + &Operator::pauli_y().scaled_re(axis[1]))
        + &Operator::pauli_z().scaled_re(axis[2]);
    Ok(&Operator::identity(2).scaled_re(c) + &gen.scaled(cx(T::zero(), -s)))
}

/// Rotation embedded on `spec.target` of an `n`-qubit register.
pub fn rotation<T: Real>(spec: &RotationSpec<T>, n: usize) -> Result<Operator<T>> {
    Operator::embed(&rotation_single(spec.axis, spec.angle)?, spec.target, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardGate {
    H,
    S,
    X,
    Y,
    Z,
    Cnot,
}

/// Exact gate matrices; CNOT is 4x4 with the first qubit as control.
pub fn standard_gate<T: Real>(gate: StandardGate) -> Operator<T> {
    let o = T::one();
    let z = T::zero();
    match gate {
        StandardGate::H => {
            let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
            Operator::from_fn(2, |i, j| if (i, j) == (1, 1) { cx(-r, z) } else { cx(r, z) }).unwrap()
        }
        StandardGate::S => Operator::from_diag(&[cx(o, z), cx(z, o)]),
        StandardGate::X => Operator::pauli_x(),
        StandardGate::Y => Operator::pauli_y(),
        StandardGate::Z => Operator::pauli_z(),
        StandardGate::Cnot => {
            let mut m = Operator::zeros(4);
            m.set(0, 0, cre(o));
            m.set(1, 1, cre(o));
            m.set(2, 3, cre(o));
            m.set(3, 2, cre(o));
            m
        }
    }
}

/// Two-qubit scalar-coupling propagator exp(-i 2 pi J Iz Sz t); diagonal.
pub fn coupling_propagator<T: Real>(j_hz: T, t_s: T) -> Operator<T> {
    let a = T::PI() * j_hz * t_s * T::lit(0.5);
    Operator::from_diag(&[cis(-a), cis(a), cis(a), cis(-a)])
}

/// Same for a chosen qubit pair of an n-qubit register.
pub fn coupling_propagator_pair<T: Real>(
    j_hz: T,
    t_s: T,
    pair: (usize, usize),
    n: usize,
) -> Result<Operator<T>> {
    if pair.0 == pair.1 || pair.0 >= n || pair.1 >= n {
        return Err(Error::InvalidArgument(format!("bad coupling pair {:?} for {} qubits", pair, n)));
    }
    let dim = 1usize << n;
    let a = T::PI() * j_hz * t_s * T::lit(0.5);
    let diag: Vec<Cx<T>> = (0..dim)
        .map(|idx| {
            let b0 = (idx >> (n - 1 - pair.0)) & 1;
            let b1 = (idx >> (n - 1 - pair.1)) & 1;
            if b0 == b1 {
                cis(-a)
            } else {
                cis(a)
            }
        })
        .collect();
    Ok(Operator::from_diag(&diag))
}

/// Weak-coupling (first-order) Hamiltonian: offsets and Iz Iz couplings,
/// all in Hz; matrix form is 2 pi [sum nu_i Iz_i + sum J_ij Iz_i Iz_j] rad/s.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakCouplingHamiltonian<T: Real> {
    pub offsets_hz: Vec<T>,
    pub couplings_hz: Vec<(usize, usize, T)>,
}

impl<T: Real> WeakCouplingHamiltonian<T> {
    pub fn n(&self) -> usize {
        self.offsets_hz.len()
    }

    pub fn matrix(&self) -> Result<Operator<T>> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Empty("weak-coupling offsets"));
        }
        let two_pi = T::lit(2.0) * T::PI();
        let mut h = Operator::zeros(1 << n);
        for (i, &nu) in self.offsets_hz.iter().enumerate() {
            h = &h + &Operator::embed(&Operator::spin_z(), i, n)?.scaled_re(two_pi * nu);
        }
        for &(i, j, jij) in &self.couplings_hz {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("bad coupling pair ({i},{j})")));
            }
            let zz = Operator::embed(&Operator::spin_z(), i, n)?
                .matmul(&Operator::embed(&Operator::spin_z(), j, n)?);
            h = &h + &zz.scaled_re(two_pi * jij);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PulseElement<T: Real> {
    Rotation(RotationSpec<T>),
    CouplingDelay { j_hz: T, duration_s: T, pair: (usize, usize) },
    FreeEvolution { duration_s: T, hamiltonian: WeakCouplingHamiltonian<T> },
}

/// Elements listed in time order (first element acts first).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence<T: Real> {
    pub n_qubits: usize,
    pub elements: Vec<PulseElement<T>>,
}

/// Left-to-right time ordering compiles to U = U_last ... U_first.
pub fn compile_sequence<T: Real>(seq: &PulseSequence<T>) -> Result<Operator<T>> {
    let dim = 1usize << seq.n_qubits;
    let mut u = Operator::identity(dim);
    for el in &seq.elements {
        let step = match el {
            PulseElement::Rotation(spec) => rotation(spec, seq.n_qubits)?,
            PulseElement::CouplingDelay { j_hz, duration_s, pair } => {
                coupling_propagator_pair(*j_hz, *duration_s, *pair, seq.n_qubits)?
            }
            PulseElement::FreeEvolution { duration_s, hamiltonian } => {
                if hamiltonian.n() != seq.n_qubits {
                    return Err(Error::DimMismatch(format!(
                        "free-evolution Hamiltonian spans {} qubits, sequence has {}",
                        hamiltonian.n(),
                        seq.n_qubits
                    )));
                }
                hamiltonian.matrix()?.matexp_hermitian(*duration_s)?
            }
        };
        if step.dim() != dim {
            return Err(Error::DimMismatch("pulse element dimension".into()));
        }
        u = step.matmul(&u);
    }
    Ok(u)
}

/// F = |Tr[u1 u2^dag]| / dim; 1 iff equal up to a global phase.
pub fn gate_fidelity<T: Real>(u1: &Operator<T>, u2: &Operator<T>) -> Result<T> {
    if u1.dim() != u2.dim() {
        return Err(Error::DimMismatch(format!("fidelity dims {} vs {}", u1.dim(), u2.dim())));
    }
    Ok(u1.matmul(&u2.dagger()).trace().norm() / T::lit(u1.dim() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionLine<T: Real> {
    pub spin: usize,
    pub frequency_hz: T,
}

/// First-order multiplet line positions: for each spin, one line per
/// partner-spin sign pattern at offset_i + sum_j J_ij m_j, m_j = +-1/2.
/// Always n * 2^(n-1) lines (degenerate when couplings vanish).
pub fn transition_lines<T: Real>(
    offsets_hz: &[T],
    couplings_hz: &[(usize, usize, T)],
) -> Vec<TransitionLine<T>> {
    let n = offsets_hz.len();
    let jij = |a: usize, b: usize| -> T {
        couplings_hz
            .iter()
            .find(|&&(i, j, _)| (i, j) == (a, b) || (j, i) == (a, b))
            .map(|&(_, _, j)| j)
            .unwrap_or_else(T::zero)
    };
    let mut lines = Vec::with_capacity(n * (1 << n.saturating_sub(1)));
    for i in 0..n {
        let partners: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        for mask in 0..(1usize << partners.len()) {
            let mut f = offsets_hz[i];
            for (b, &j) in partners.iter().enumerate() {
                let m = if (mask >> b) & 1 == 0 { T::lit(0.5) } else { T::lit(-0.5) };
                f = f + jij(i, j) * m;
            }
            lines.push(TransitionLine { spin: i, frequency_hz: f });
        }
    }
    lines
}

/// CNOT decomposition into rotations and a 1/(2J) coupling delay, control
/// on qubit 0, target on qubit 1; elements in time order.
pub fn cnot_nmr_sequence<T: Real>(j_hz: T) -> PulseSequence<T> {
    let half_pi = T::FRAC_PI_2();
    PulseSequence {
        n_qubits: 2,
        elements: vec![
            PulseElement::Rotation(RotationSpec::y(half_pi, 1)),
            PulseElement::CouplingDelay {
                j_hz,
                duration_s: T::one() / (T::lit(2.0) * j_hz),
                pair: (0, 1),
            },
            PulseElement::Rotation(RotationSpec::x(half_pi, 1)),
            PulseElement::Rotation(RotationSpec::z(-half_pi, 1)),
            PulseElement::Rotation(RotationSpec::z(half_pi, 0)),
        ],
    }
}

/// Hadamard as a rotation pair: y by pi/2, then x by pi.
pub fn hadamard_sequence<T: Real>(target: usize, n_qubits: usize) -> PulseSequence<T> {
    PulseSequence {
        n_qubits,
        elements: vec![
            PulseElement::Rotation(RotationSpec::y(T::FRAC_PI_2(), target)),
            PulseElement::Rotation(RotationSpec::x(T::PI(), target)),
        ],
    }
}

/// Spin echo: free evolution tau/2, pi pulse about x, free evolution tau/2.
pub fn hahn_echo_sequence<T: Real>(
    tau_s: T,
    hamiltonian: WeakCouplingHamiltonian<T>,
    target: usize,
) -> PulseSequence<T> {
    let half = tau_s * T::lit(0.5);
    PulseSequence {
        n_qubits: hamiltonian.n(),
        elements: vec![
            PulseElement::FreeEvolution { duration_s: half, hamiltonian: hamiltonian.clone() },
            PulseElement::Rotation(RotationSpec::x(T::PI(), target)),
            PulseElement::FreeEvolution { duration_s: half, hamiltonian },
        ],
    }
}
