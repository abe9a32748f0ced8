//! Dynamical many-body freezing: Trotterized evolution of a driven
//! transverse-field Ising chain, stroboscopic magnetization, the dynamical
//! order parameter Q with Bessel closed forms, decay fitting and
//! inverse-decay correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grape::EnsembleMember;
use crate::numerics::{bessel_j0, linsolve, nls_fit, FitOptions};
use crate::operator::{Operator, MAX_QUBITS};
use crate::real::{Cx, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Drive and chain parameters for H(t) = -1/2 [J sum Z_i Z_{i+1} + h0 cos(wt) sum X_i].
/// Couplings are angular frequencies; an NMR coupling J_Hz enters as 2*pi*J_Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams<T: Real> {
    pub h0: T,
    pub j_coupling: T,
    pub omega: T,
    pub n: usize,
    pub boundary: Boundary,
}

impl<T: Real> DriveParams<T> {
    pub fn new(h0: T, j_coupling: T, omega: T, n: usize, boundary: Boundary) -> Result<Self> {
        if !(h0.is_finite() && j_coupling.is_finite() && omega.is_finite()) {
            return Err(Error::NonFinite("drive parameters"));
        }
        if !(omega > T::zero()) {
            return Err(Error::InvalidArgument("drive frequency must be positive".into()));
        }
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::TooLarge { qubits: n, max: MAX_QUBITS });
        }
        Ok(Self { h0, j_coupling, omega, n, boundary })
    }

    /// Cycle time 2*pi/omega.
    pub fn tau(&self) -> T {
        T::TAU() / self.omega
    }

    /// Regime warnings (never errors): the closed-form oracles assume a fast,
    /// strong drive.
    pub fn advisories(&self) -> Vec<String> {
        let mut notes = Vec::new();
        let j = self.j_coupling.abs();
        if self.omega <= T::lit(2.0) * j {
            notes.push(format!(
                "omega = {} rad/s is not fast compared to 2|J| = {} rad/s",
                self.omega.as_f64(),
                (T::lit(2.0) * j).as_f64()
            ));
        }
        if self.h0.abs() <= j {
            notes.push(format!(
                "drive amplitude |h0| = {} rad/s does not dominate |J| = {} rad/s",
                self.h0.abs().as_f64(),
                j.as_f64()
            ));
        }
        notes
    }
}

fn bonds(n: usize, boundary: Boundary) -> Vec<(usize, usize)> {
    let mut b: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    // the closing bond only exists for rings of three or more sites
    if boundary == Boundary::Periodic && n >= 3 {
        b.push((n - 1, 0));
    }
    b
}

/// sum_i X_i / 2, the (unnormalized) transverse magnetization observable.
pub fn total_sx<T: Real>(n: usize) -> Result<Operator<T>> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::TooLarge { qubits: n, max: MAX_QUBITS });
    }
    let dim = 1 << n;
    let mut sum = Operator::zeros(dim);
    for i in 0..n {
        sum = &sum + &Operator::embed(&Operator::spin_x(), i, n)?;
    }
    Ok(sum)
}

fn total_pauli_sum<T: Real>(n: usize, p: &Operator<T>) -> Result<Operator<T>> {
    let dim = 1 << n;
    let mut sum = Operator::zeros(dim);
    for i in 0..n {
        sum = &sum + &Operator::embed(p, i, n)?;
    }
    Ok(sum)
}

fn zz_sum<T: Real>(n: usize, boundary: Boundary) -> Result<Operator<T>> {
    let dim = 1 << n;
    let mut sum = Operator::zeros(dim);
    for (i, j) in bonds(n, boundary) {
        let zi = Operator::embed(&Operator::pauli_z(), i, n)?;
        let zj = Operator::embed(&Operator::pauli_z(), j, n)?;
        sum = &sum + &zi.matmul(&zj);
    }
    Ok(sum)
}

/// Deviation state sum_i (sin(theta) X_i + cos(theta) Z_i)/2: thermal
/// z-magnetization tipped by `theta` about y, so m_x(0) = sin(theta).
pub fn prepared_state<T: Real>(n: usize, theta: T) -> Result<Operator<T>> {
    let sx = total_sx::<T>(n)?;
    let sz = total_pauli_sum::<T>(n, &Operator::spin_z())?;
    Ok(&sx.scaled_re(theta.sin()) + &sz.scaled_re(theta.cos()))
}

/// Instantaneous Hamiltonian H(t) = -1/2 [J sum ZZ + h0 cos(wt) sum X].
pub fn dmf_hamiltonian<T: Real>(p: &DriveParams<T>, t: T) -> Result<Operator<T>> {
    let half = T::lit(-0.5);
    let zz = zz_sum(p.n, p.boundary)?.scaled_re(half * p.j_coupling);
    let xs = total_pauli_sum::<T>(p.n, &Operator::pauli_x())?
        .scaled_re(half * p.h0 * (p.omega * t).cos());
    Ok(&zz + &xs)
}

/// One-cycle propagator: ordered product of `slices` midpoint-sampled slice
/// exponentials, U = U_slices ... U_2 U_1.
pub fn dmf_cycle_propagator<T: Real>(p: &DriveParams<T>, slices: usize) -> Result<Operator<T>> {
    if slices == 0 {
        return Err(Error::InvalidArgument("slice count must be at least 1".into()));
    }
    let tau = p.tau();
    let dt = tau / T::lit(slices as f64);
    let half = T::lit(-0.5);
    let zz = zz_sum(p.n, p.boundary)?.scaled_re(half * p.j_coupling);
    let xs = total_pauli_sum::<T>(p.n, &Operator::pauli_x())?;
    let mut u = Operator::identity(1 << p.n);
    for m in 0..slices {
        let t_mid = (T::lit(m as f64) + T::lit(0.5)) * dt;
        let h = &zz + &xs.scaled_re(half * p.h0 * (p.omega * t_mid).cos());
        u = h.matexp_hermitian(dt)?.matmul(&u);
    }
    Ok(u)
}

/// Stroboscopic transverse magnetization sampled at t_j = j*tau.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnetizationSeries<T: Real> {
    tau: T,
    samples: Vec<(T, T)>,
}

impl<T: Real> MagnetizationSeries<T> {
    /// Build from per-cycle values; sample j is assigned time j*tau.
    pub fn from_values(tau: T, values: Vec<T>) -> Result<Self> {
        if !(tau > T::zero() && tau.is_finite()) {
            return Err(Error::InvalidArgument("cycle time must be positive".into()));
        }
        if values.is_empty() {
            return Err(Error::Empty("magnetization series"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("magnetization sample"));
        }
        let samples =
            values.into_iter().enumerate().map(|(j, v)| (T::lit(j as f64) * tau, v)).collect();
        Ok(Self { tau, samples })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Cycle count N; the series holds N+1 samples.
    pub fn n_cycles(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn samples(&self) -> &[(T, T)] {
        &self.samples
    }

    pub fn values(&self) -> Vec<T> {
        self.samples.iter().map(|&(_, v)| v).collect()
    }

    pub fn times(&self) -> Vec<T> {
        self.samples.iter().map(|&(t, _)| t).collect()
    }

    /// Series divided by its own first sample.
    pub fn normalized(&self) -> Result<Self> {
        let m0 = self.samples[0].1;
        if m0.abs() < T::lit(1e-12) {
            return Err(Error::InvalidArgument("cannot normalize: m_x(0) is zero".into()));
        }
        Ok(Self {
            tau: self.tau,
            samples: self.samples.iter().map(|&(t, v)| (t, v / m0)).collect(),
        })
    }
}

/// Tr[(sum X_i/2)^2] = n 2^(n-2): the t=0 magnetization of the reference state.
fn reference_norm<T: Real>(n: usize) -> T {
    T::lit(n as f64) * T::lit(2.0f64.powi(n as i32 - 2))
}

/// Evolve `rho0` stroboscopically for `n_cycles` cycles and report
/// m_x(j*tau) = Tr[rho(j*tau) sum X_i/2], normalized so the reference state
/// sum X_i/2 reads 1 at t = 0.
pub fn simulate_dmf<T: Real>(
    p: &DriveParams<T>,
    rho0: &Operator<T>,
    n_cycles: usize,
    slices: usize,
) -> Result<MagnetizationSeries<T>> {
    if rho0.dim() != 1 << p.n {
        return Err(Error::DimMismatch(format!(
            "state dim {} does not match {} spins",
            rho0.dim(),
            p.n
        )));
    }
    let u = dmf_cycle_propagator(p, slices)?;
    let sx = total_sx::<T>(p.n)?;
    let norm = reference_norm::<T>(p.n);
    let mut rho = rho0.clone();
    let mut values = Vec::with_capacity(n_cycles + 1);
    for _ in 0..=n_cycles {
        values.push(rho.trace_product(&sx).re / norm);
        rho = rho.conjugated_by(&u);
    }
    MagnetizationSeries::from_values(p.tau(), values)
}

/// Arithmetic mean of the N+1 stroboscopic samples.
pub fn q_from_series<T: Real>(s: &MagnetizationSeries<T>) -> T {
    let vals = s.values();
    vals.iter().copied().sum::<T>() / T::lit(vals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QVariant {
    /// Thermodynamic limit: Q = 1/(1 + |J0(2 h0/w)|).
    Infinite,
    /// Three-spin ring: Q = (1 + J0^2)/(1 + 3 J0^2).
    Three,
}

/// Closed-form long-time average of m_x under fast strong driving.
pub fn q_closed_form<T: Real>(variant: QVariant, h0: T, omega: T) -> Result<T> {
    if !(omega > T::zero()) {
        return Err(Error::InvalidArgument("drive frequency must be positive".into()));
    }
    let b = bessel_j0(T::lit(2.0) * h0 / omega);
    Ok(match variant {
        QVariant::Infinite => T::one() / (T::one() + b.abs()),
        QVariant::Three => (T::one() + b * b) / (T::one() + T::lit(3.0) * b * b),
    })
}

/// Fitted decay model m_x(t) = alpha + [beta + gamma cos(c t)] e^(-t/T_d).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit<T: Real> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    /// Oscillation angular frequency, rad/s.
    pub c: T,
    /// Decay time, seconds; may be infinite (no decay).
    pub t_d: T,
    pub residual: T,
    /// Set when the oscillatory term is absent so c is unidentifiable.
    pub degenerate: bool,
}

fn decay_model<T: Real>(p: &[T], t: T) -> T {
    p[0] + (p[1] + p[2] * (p[3] * t).cos()) * (-t / p[4]).exp()
}

/// Least-squares fit of the decay model from an explicit initial guess.
pub fn decay_fit<T: Real>(s: &MagnetizationSeries<T>, init: &DecayFit<T>) -> Result<DecayFit<T>> {
    let samples = s.samples();
    if samples.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 6 samples, got {}",
            samples.len()
        )));
    }
    let ts: Vec<T> = samples.iter().map(|&(t, _)| t).collect();
    let ys: Vec<T> = samples.iter().map(|&(_, v)| v).collect();

    let lo = ys.iter().copied().fold(T::infinity(), T::min);
    let hi = ys.iter().copied().fold(T::neg_infinity(), T::max);
    let spread = hi - lo;
    if spread < T::lit(1e-10) {
        // constant series: exact fit with no oscillation and no decay
        let mean = ys.iter().copied().sum::<T>() / T::lit(ys.len() as f64);
        return Ok(DecayFit {
            alpha: mean,
            beta: T::zero(),
            gamma: T::zero(),
            c: init.c,
            t_d: T::infinity(),
            residual: spread,
            degenerate: true,
        });
    }

    let p0 = [init.alpha, init.beta, init.gamma, init.c, init.t_d.min(T::lit(1e15))];
    let big = T::lit(1e6);
    let opts = FitOptions {
        max_iter: 400,
        tol: T::lit(1e-14),
        bounds: Some(vec![
            (-big, big),
            (-big, big),
            (-big, big),
            (-T::lit(1e9), T::lit(1e9)),
            (T::lit(1e-9), T::lit(1e15)),
        ]),
    };
    let fit = nls_fit(&ts, &ys, &|p, t| decay_model(p, t), &p0, &opts)?;
    let [alpha, beta, gamma, c, t_d] = [fit.params[0], fit.params[1], fit.params[2], fit.params[3], fit.params[4]];
    if !fit.converged {
        return Err(Error::FitDidNotConverge {
            iterations: fit.iterations,
            residual: fit.residual_rms.as_f64(),
            best: format!(
                "alpha={} beta={} gamma={} c={} t_d={}",
                alpha.as_f64(),
                beta.as_f64(),
                gamma.as_f64(),
                c.as_f64(),
                t_d.as_f64()
            ),
        });
    }
    let degenerate = gamma.abs() < T::lit(1e-8) * spread.max(T::one());
    Ok(DecayFit { alpha, beta, gamma, c, t_d, residual: fit.residual_rms, degenerate })
}

/// Fit with an automatic initial guess: coarse grid over (c, T_d) with the
/// linear parameters solved exactly, then the usual refinement.
pub fn decay_fit_auto<T: Real>(s: &MagnetizationSeries<T>) -> Result<DecayFit<T>> {
    let samples = s.samples();
    if samples.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 6 samples, got {}",
            samples.len()
        )));
    }
    let ts: Vec<T> = samples.iter().map(|&(t, _)| t).collect();
    let ys: Vec<T> = samples.iter().map(|&(_, v)| v).collect();
    let t_total = *ts.last().unwrap();
    let tau = s.tau();

    // model is linear in (alpha, beta, gamma) once (c, T_d) are fixed
    let sse_of = |c: T, t_d: T| -> Option<(T, [T; 3])> {
        let basis: Vec<[T; 3]> = ts
            .iter()
            .map(|&t| {
                let e = (-t / t_d).exp();
                [T::one(), e, (c * t).cos() * e]
            })
            .collect();
        let mut ata = ndarray::Array2::from_elem((3, 3), Cx::new(T::zero(), T::zero()));
        let mut atb = vec![Cx::new(T::zero(), T::zero()); 3];
        for a in 0..3 {
            for b in 0..3 {
                let v: T = basis.iter().map(|row| row[a] * row[b]).sum();
                ata[[a, b]] = Cx::new(v, T::zero());
            }
            let v: T = basis.iter().zip(&ys).map(|(row, &y)| row[a] * y).sum();
            atb[a] = Cx::new(v, T::zero());
        }
        let coef = linsolve(&ata, &atb).ok()?;
        let p = [coef[0].re, coef[1].re, coef[2].re];
        let sse: T = ts
            .iter()
            .zip(&ys)
            .map(|(&t, &y)| {
                let e = (-t / t_d).exp();
                let m = p[0] + (p[1] + p[2] * (c * t).cos()) * e;
                (m - y).powi(2)
            })
            .sum();
        sse.is_finite().then_some((sse, p))
    };

    let mut best: Option<(T, DecayFit<T>)> = None;
    for kc in 1..=16 {
        // candidate frequencies up to the stroboscopic Nyquist limit pi/tau
        let c = T::lit(kc as f64 / 16.0) * T::PI() / tau;
        for &fd in &[0.25, 0.5, 1.0, 2.0, 8.0, 1e6] {
            let t_d = T::lit(fd) * t_total;
            if let Some((sse, p)) = sse_of(c, t_d) {
                let cand = DecayFit {
                    alpha: p[0],
                    beta: p[1],
                    gamma: p[2],
                    c,
                    t_d,
                    residual: (sse / T::lit(ts.len() as f64)).sqrt(),
                    degenerate: false,
                };
                if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                    best = Some((sse, cand));
                }
            }
        }
    }
    let init = best.map(|(_, f)| f).ok_or(Error::InvalidArgument(
        "no viable initial guess for decay fit".into(),
    ))?;
    decay_fit(s, &init)
}

/// Inverse-decay corrected series plus the indices of samples where the
/// correction factor overflowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedSeries<T: Real> {
    pub series: MagnetizationSeries<T>,
    pub overflow_samples: Vec<usize>,
}

/// Divide out the fitted decay about the baseline:
/// corrected(t) = alpha + (raw(t) - alpha) e^(t/T_d).
pub fn inverse_decay_correct<T: Real>(
    s: &MagnetizationSeries<T>,
    f: &DecayFit<T>,
) -> Result<CorrectedSeries<T>> {
    if !(f.t_d > T::zero()) {
        return Err(Error::InvalidArgument("decay time must be positive".into()));
    }
    let limit = T::lit(1e6);
    let mut overflow = Vec::new();
    let samples = s
        .samples()
        .iter()
        .enumerate()
        .map(|(j, &(t, v))| {
            let factor = (t / f.t_d).exp();
            if !(factor.is_finite() && factor <= limit) {
                overflow.push(j);
                // leave the sample uncorrected rather than emit garbage
                (t, v)
            } else {
                (t, f.alpha + (v - f.alpha) * factor)
            }
        })
        .collect();
    Ok(CorrectedSeries {
        series: MagnetizationSeries { tau: s.tau, samples },
        overflow_samples: overflow,
    })
}

/// Simulation with the two dominant error channels: RF-amplitude scaling of
/// the drive (ensemble average) and per-cycle coherence decay e^(-t/T2).
pub fn noisy_simulate<T: Real>(
    p: &DriveParams<T>,
    rho0: &Operator<T>,
    n_cycles: usize,
    slices: usize,
    t2: T,
    ensemble: &[EnsembleMember<T>],
) -> Result<MagnetizationSeries<T>> {
    if !(t2 > T::zero()) {
        return Err(Error::InvalidArgument("T2 must be positive".into()));
    }
    if ensemble.is_empty() {
        return Err(Error::Empty("scaling ensemble"));
    }
    let wsum: T = ensemble.iter().map(|m| m.weight).sum();
    if ensemble.iter().any(|m| !(m.weight > T::zero())) || !wsum.is_finite() {
        return Err(Error::InvalidArgument("ensemble weights must be positive".into()));
    }
    let mut mean = vec![T::zero(); n_cycles + 1];
    for member in ensemble {
        let scaled = DriveParams { h0: p.h0 * member.scale, ..*p };
        let series = simulate_dmf(&scaled, rho0, n_cycles, slices)?;
        for (acc, v) in mean.iter_mut().zip(series.values()) {
            *acc += member.weight / wsum * v;
        }
    }
    let tau = p.tau();
    let damped = mean
        .into_iter()
        .enumerate()
        .map(|(j, v)| v * (-(T::lit(j as f64) * tau) / t2).exp())
        .collect();
    MagnetizationSeries::from_values(tau, damped)
}

/// One row of the frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T: Real> {
    pub omega: T,
    pub q_sim: T,
    pub q3_closed: T,
    pub qinf_closed: T,
    pub q_noisy: T,
    pub q_corrected: T,
}

#[derive(Debug, Clone)]
pub struct SweepConfig<T: Real> {
    pub h0: T,
    pub j_coupling: T,
    pub n: usize,
    pub boundary: Boundary,
    pub n_cycles: usize,
    pub slices: usize,
    pub t2: T,
    pub ensemble: Vec<EnsembleMember<T>>,
    pub omegas: Vec<T>,
}

/// Sweep Q over drive frequencies. Points run in parallel; output is ordered
/// by omega regardless of worker count. A failed decay fit falls back to the
/// uncorrected noisy Q for that point.
pub fn dmf_sweep<T: Real>(cfg: &SweepConfig<T>) -> Result<Vec<SweepPoint<T>>> {
    if cfg.omegas.is_empty() {
        return Err(Error::Empty("sweep frequencies"));
    }
    if cfg.omegas.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("sweep frequency"));
    }
    let mut omegas = cfg.omegas.clone();
    omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rho0 = total_sx::<T>(cfg.n)?;
    omegas
        .par_iter()
        .map(|&omega| {
            let p = DriveParams::new(cfg.h0, cfg.j_coupling, omega, cfg.n, cfg.boundary)?;
            let ideal = simulate_dmf(&p, &rho0, cfg.n_cycles, cfg.slices)?;
            let noisy =
                noisy_simulate(&p, &rho0, cfg.n_cycles, cfg.slices, cfg.t2, &cfg.ensemble)?;
            let q_noisy = q_from_series(&noisy);
            let q_corrected = decay_fit_auto(&noisy)
                .and_then(|f| inverse_decay_correct(&noisy, &f))
                .map(|c| q_from_series(&c.series))
                .unwrap_or(q_noisy);
            Ok(SweepPoint {
                omega,
                q_sim: q_from_series(&ideal),
                q3_closed: q_closed_form(QVariant::Three, cfg.h0, omega)?,
                qinf_closed: q_closed_form(QVariant::Infinite, cfg.h0, omega)?,
                q_noisy,
                q_corrected,
            })
        })
        .collect()
}
