//! Single-qubit state and process tomography, plus dynamical-decoupling noise
//! spectroscopy: CPMG scans over the pulse interval map a bath to S(omega).

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::decoherence::{dd_schedule, fit_t2, run_dd_under_kicks, DdKind, KickSchedule, SystemEnvModel};
use crate::error::{Error, Result};
use crate::numerics::linsolve;
use crate::operator::Operator;
use crate::real::{tol, Cx, Real};
use crate::state::{density_from_bloch, BlochVector, DensityMatrix};

/// Labels of the fixed process-matrix operator basis.
pub const CHI_LABELS: [&str; 4] = ["E", "X", "-iY", "Z"];

/// The fixed basis {E, X, -iY, Z}. All four elements are real matrices, which
/// keeps the chi matrix of any channel diagonal-real for the common gates.
fn chi_basis<T: Real>() -> [Operator<T>; 4] {
    let minus_i = Cx::new(T::zero(), -T::one());
    [
        Operator::identity(2),
        Operator::pauli_x(),
        Operator::pauli_y().scaled(minus_i),
        Operator::pauli_z(),
    ]
}

/// Phase relating basis element m to the plain Pauli operator: B_m = c_m P_m.
fn basis_phase<T: Real>(m: usize) -> Cx<T> {
    if m == 2 {
        Cx::new(T::zero(), -T::one())
    } else {
        Cx::new(T::one(), T::zero())
    }
}

/// Process matrix chi in the basis {E, X, -iY, Z}: the reconstructed channel
/// acts as rho -> sum_{mn} chi[m,n] B_m rho B_n^dagger.
#[derive(Debug, Clone)]
pub struct ChiMatrix<T: Real> {
    m: Operator<T>,
}

impl<T: Real> ChiMatrix<T> {
    pub fn from_operator(m: Operator<T>) -> Result<Self> {
        if m.dim() != 4 {
            return Err(Error::BadDim(m.dim()));
        }
        Ok(Self { m })
    }

    pub fn operator(&self) -> &Operator<T> {
        &self.m
    }

    pub fn get(&self, m: usize, n: usize) -> Cx<T> {
        self.m.get(m, n)
    }

    pub fn hermiticity_deviation(&self) -> T {
        self.m.hermiticity_deviation()
    }

    /// Max-abs deviation of sum_{mn} chi[m,n] B_n^dagger B_m from the
    /// identity; zero exactly when the channel is trace preserving.
    pub fn completeness_deviation(&self) -> T {
        let basis = chi_basis::<T>();
        let mut acc = Operator::zeros(2);
        for m in 0..4 {
            for n in 0..4 {
                let term = basis[n].dagger().matmul(&basis[m]).scaled(self.m.get(m, n));
                acc = &acc + &term;
            }
        }
        acc.max_abs_diff(&Operator::identity(2))
    }

    /// Eigenvalues of the Hermitian part, ascending. A physical channel has
    /// all of them non-negative; negative entries are reported as-is.
    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        let herm = (&self.m + &self.m.dagger()).scaled_re(T::lit(0.5));
        Ok(herm.eigh()?.values)
    }

    /// How far the matrix sits from the positive cone: the magnitude of the
    /// most negative eigenvalue, or zero.
    pub fn psd_distance(&self) -> Result<T> {
        let vals = self.eigenvalues()?;
        Ok(vals.first().map(|&v| (-v).max(T::zero())).unwrap_or(T::zero()))
    }

    /// Apply the reconstructed channel to a state.
    pub fn apply(&self, rho: &Operator<T>) -> Result<Operator<T>> {
        if rho.dim() != 2 {
            return Err(Error::BadDim(rho.dim()));
        }
        let basis = chi_basis::<T>();
        let mut acc = Operator::zeros(2);
        for m in 0..4 {
            for n in 0..4 {
                let term =
                    basis[m].matmul(rho).matmul(&basis[n].dagger()).scaled(self.m.get(m, n));
                acc = &acc + &term;
            }
        }
        Ok(acc)
    }

    /// Re-express in the plain Pauli basis {E, X, Y, Z}:
    /// chi'[m,n] = chi[m,n] c_m conj(c_n) with c = (1, 1, -i, 1).
    pub fn to_pauli_basis(&self) -> Operator<T> {
        Operator::from_fn(4, |m, n| {
            self.m.get(m, n) * basis_phase::<T>(m) * basis_phase::<T>(n).conj()
        })
        .expect("4x4 construction cannot fail")
    }

    /// JSON document with basis labels and [re, im] entry pairs.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<[f64; 2]>> = (0..4)
            .map(|m| {
                (0..4)
                    .map(|n| {
                        let z = self.m.get(m, n);
                        [z.re.as_f64(), z.im.as_f64()]
                    })
                    .collect()
            })
            .collect();
        json!({ "basis": CHI_LABELS, "chi": rows })
    }
}

/// State reconstructed from measured <X>, <Y>, <Z>, with a flag marking
/// inputs that had to be pulled back onto the Bloch ball.
#[derive(Debug, Clone)]
pub struct QstOutcome<T: Real> {
    pub rho: DensityMatrix<T>,
    /// Set when the expectation triple exceeded unit norm by more than the
    /// calibration tolerance and was radially projected.
    pub projected: bool,
}

/// Reconstruct a single-qubit state from its three Pauli expectations.
/// Norms beyond 1 + 1e-6 are projected back to the unit sphere and flagged;
/// smaller overshoots are treated as roundoff and rescaled silently.
pub fn qst_single<T: Real>(x: T, y: T, z: T) -> Result<QstOutcome<T>> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::InvalidArgument("expectation values must be finite".into()));
    }
    let mut r = BlochVector::new(x, y, z);
    let norm = r.norm();
    let projected = norm > T::one() + tol::<T>(1e-6);
    if norm > T::one() {
        let inv = T::one() / norm;
        r = BlochVector::new(r.x * inv, r.y * inv, r.z * inv);
    }
    Ok(QstOutcome { rho: density_from_bloch(&r)?, projected })
}

/// Tomography probe states: |0><0|, |1><1|, |+><+|, and the -y eigenstate
/// (|0> - i|1>)/sqrt(2). The duals in the inner-product expansion are the
/// probes themselves.
fn probe_states<T: Real>() -> [Operator<T>; 4] {
    let h = T::lit(0.5);
    let zero = Cx::new(T::zero(), T::zero());
    let re = |v: T| Cx::new(v, T::zero());
    let im = |v: T| Cx::new(T::zero(), v);
    [
        Operator::from_diag(&[re(T::one()), zero]),
        Operator::from_diag(&[zero, re(T::one())]),
        Operator::from_fn(2, |_, _| re(h)).expect("2x2"),
        Operator::from_fn(2, |i, j| if i == j { re(h) } else if i < j { im(h) } else { im(-h) })
            .expect("2x2"),
    ]
}

/// Characterize a black-box single-qubit channel as a chi matrix over
/// {E, X, -iY, Z}. The channel is probed on four informationally complete
/// inputs and the 16 linear equations
/// sum_{mn} Tr[B_m rho_p B_n^dagger rho_q] chi[m,n] = Tr[channel(rho_p) rho_q]
/// are solved directly; no positivity projection is applied, so unphysical
/// data shows up as negative eigenvalues (see `psd_distance`).
pub fn qpt_single<T, F>(channel: F) -> Result<ChiMatrix<T>>
where
    T: Real,
    F: Fn(&Operator<T>) -> Operator<T>,
{
    let probes = probe_states::<T>();
    let basis = chi_basis::<T>();
    let zero = Cx::new(T::zero(), T::zero());

    let mut a = Array2::from_elem((16, 16), zero);
    let mut b = vec![zero; 16];
    for p in 0..4 {
        let out = channel(&probes[p]);
        if out.dim() != 2 {
            return Err(Error::DimMismatch(format!(
                "channel output dim {} for a single-qubit probe",
                out.dim()
            )));
        }
        if !out.max_abs().is_finite() {
            return Err(Error::NonFinite("channel output"));
        }
        for q in 0..4 {
            let row = 4 * p + q;
            b[row] = out.trace_product(&probes[q]);
            for m in 0..4 {
                let left = basis[m].matmul(&probes[p]);
                for n in 0..4 {
                    let beta = left.matmul(&basis[n].dagger()).trace_product(&probes[q]);
                    a[[row, 4 * m + n]] = beta;
                }
            }
        }
    }
    let x = linsolve(&a, &b)?;
    let chi = Operator::from_fn(4, |m, n| x[4 * m + n]).expect("4x4 construction cannot fail");
    ChiMatrix::from_operator(chi)
}

/// One sampled point of the reconstructed bath spectrum.
#[derive(Debug, Clone, Copy)]
pub struct NoisePoint<T: Real> {
    /// Probe frequency pi / tau, rad/s.
    pub omega_rad_s: T,
    /// Spectral density pi^2 / (4 T2), 1/s.
    pub s_per_s: T,
    /// Fitted coherence time at this probe frequency, s.
    pub t2_s: T,
}

/// Spectrum samples plus the grid points whose decay could not be fitted.
#[derive(Debug, Clone)]
pub struct NoiseSpectrum<T: Real> {
    pub points: Vec<NoisePoint<T>>,
    /// (tau, reason) for omitted grid points.
    pub skipped: Vec<(T, String)>,
}

impl<T: Real> NoiseSpectrum<T> {
    pub fn csv(&self) -> String {
        let mut out = String::from("omega_rad_s,S_per_s,T2_s\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{}",
                p.omega_rad_s.as_f64(),
                p.s_per_s.as_f64(),
                p.t2_s.as_f64()
            );
        }
        out
    }
}

/// What the CPMG scan is probing.
pub enum NoiseSource<'a, T: Real> {
    /// Monte-Carlo kick bath. The schedule supplies rate, angle bound, modes,
    /// and master seed; its cycle time is replaced per grid point.
    Kicks { model: &'a SystemEnvModel<T>, schedule: &'a KickSchedule<T> },
    /// Closed-form T2(omega) used to synthesize ideal exponential decays,
    /// exercising the same fitting path end to end.
    Synthetic(&'a (dyn Fn(T) -> T + Sync)),
}

enum ScanOutcome<T: Real> {
    Point(NoisePoint<T>),
    Skip(T, String),
}

fn spectrum_point<T: Real>(tau: T, t2: T) -> NoisePoint<T> {
    let quarter_pi_sq = T::PI() * T::PI() * T::lit(0.25);
    let s = if t2.is_finite() { quarter_pi_sq / t2 } else { T::zero() };
    NoisePoint { omega_rad_s: T::PI() / tau, s_per_s: s, t2_s: t2 }
}

fn scan_one<T: Real>(
    source: &NoiseSource<'_, T>,
    tau: T,
    n_pulses: usize,
    cycles: usize,
    m_realizations: usize,
) -> Result<ScanOutcome<T>> {
    let t_c = tau * T::lit(n_pulses as f64);
    let samples: Vec<(T, T)> = match source {
        NoiseSource::Kicks { model, schedule } => {
            let sched = schedule.with_cycle_time(t_c)?;
            let dd = dd_schedule(DdKind::Cpmg, n_pulses, t_c)?;
            let series = run_dd_under_kicks(model, &sched, &dd, cycles, m_realizations)?;
            series.mx_samples()
        }
        NoiseSource::Synthetic(t2_of_omega) => {
            let t2 = t2_of_omega(T::PI() / tau);
            if !(t2 > T::zero()) {
                return Ok(ScanOutcome::Skip(
                    tau,
                    format!("synthetic T2 {} is not positive", t2.as_f64()),
                ));
            }
            (0..=cycles)
                .map(|j| {
                    let t = t_c * T::lit(j as f64);
                    (t, (-t / t2).exp())
                })
                .collect()
        }
    };
    match fit_t2(&samples) {
        Ok(t2) => Ok(ScanOutcome::Point(spectrum_point(tau, t2))),
        Err(e) => Ok(ScanOutcome::Skip(tau, e.to_string())),
    }
}

/// Reconstruct the bath spectrum seen through CPMG filtering: for each pulse
/// interval tau, run an `n_pulses`-pulse CPMG cycle (cycle time n*tau) for
/// `cycles` cycles, fit T2 to the cycle-boundary magnetization, and report
/// the point (omega = pi/tau, S = pi^2/(4 T2)). Grid points whose decay
/// cannot be fitted are omitted and listed in `skipped` with the reason.
pub fn noise_spectroscopy<T: Real>(
    source: &NoiseSource<'_, T>,
    tau_grid: &[T],
    n_pulses: usize,
    cycles: usize,
    m_realizations: usize,
) -> Result<NoiseSpectrum<T>> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidArgument("tau grid is empty".into()));
    }
    for &tau in tau_grid {
        if !(tau > T::zero() && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pulse interval {} must be positive",
                tau.as_f64()
            )));
        }
    }
    if n_pulses == 0 {
        return Err(Error::InvalidArgument("pulse count must be at least 1".into()));
    }
    if cycles < 2 {
        return Err(Error::InvalidArgument("need at least 2 cycles to fit a decay".into()));
    }
    if m_realizations == 0 {
        return Err(Error::InvalidArgument("realization count must be at least 1".into()));
    }
    let outcomes: Vec<ScanOutcome<T>> = tau_grid
        .par_iter()
        .map(|&tau| scan_one(source, tau, n_pulses, cycles, m_realizations))
        .collect::<Result<_>>()?;
    let mut spectrum = NoiseSpectrum { points: Vec::new(), skipped: Vec::new() };
    for outcome in outcomes {
        match outcome {
            ScanOutcome::Point(p) => spectrum.points.push(p),
            ScanOutcome::Skip(tau, why) => spectrum.skipped.push((tau, why)),
        }
    }
    Ok(spectrum)
}
