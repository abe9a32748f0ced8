//! Engineered phase decoherence: product-state dephasing factor, Monte Carlo
//! kicked evolution of a system-environment pair, the superoperator
//! closed-form envelope, dynamical-decoupling schedules, and T2 fitting.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{nls_fit, FitOptions};
use crate::operator::Operator;
use crate::real::{cis, Cx, Real};
use crate::rng::stream;
use crate::state::{validate_density, StateClass};

/// Product-state dephasing factor z(t) = prod_j (|a_j|^2 e^{-2i J_j t} + |b_j|^2 e^{+2i J_j t})
/// for a central spin coupled to `env` spins by J_j (rad/s) under sum_j J_j Z_0 Z_j.
pub fn zurek_factor<T: Real>(env: &[(Cx<T>, Cx<T>)], couplings: &[T], t: T) -> Result<Cx<T>> {
    if env.len() != couplings.len() {
        return Err(Error::DimMismatch(format!(
            "{} environment spins vs {} couplings",
            env.len(),
            couplings.len()
        )));
    }
    let mut z = Cx::new(T::one(), T::zero());
    for (&(a, b), &j) in env.iter().zip(couplings) {
        let pa = a.norm_sqr();
        let pb = b.norm_sqr();
        if ((pa + pb) - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "environment amplitudes not normalized: |a|^2+|b|^2 = {}",
                (pa + pb).as_f64()
            )));
        }
        let phase = T::lit(2.0) * j * t;
        z = z * (cis(-phase).scale(pa) + cis(phase).scale(pb));
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleMode {
    /// Kick angles uniform in [-alpha, alpha].
    Symmetric,
    /// Kick angles uniform in [0, alpha].
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// All kicks rotate about y.
    FixedY,
    /// Kick axis in the transverse plane at a uniform angle in [0, 2 pi).
    UniformPhase,
}

/// Random-kick schedule: `k` kicks per cycle of length `t_c`, at rate
/// `gamma` kicks/ms, each a rotation of the environment spin by a random
/// angle bounded by `alpha` (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KickSchedule<T: Real> {
    pub gamma_per_ms: T,
    pub alpha: T,
    pub angle_mode: AngleMode,
    pub phase_mode: PhaseMode,
    pub t_c: T,
    pub seed: u64,
    k: usize,
    delta: T,
}

impl<T: Real> KickSchedule<T> {
    pub fn new(
        gamma_per_ms: T,
        alpha: T,
        angle_mode: AngleMode,
        phase_mode: PhaseMode,
        t_c: T,
        seed: u64,
    ) -> Result<Self> {
        if !(gamma_per_ms > T::zero() && gamma_per_ms.is_finite()) {
            return Err(Error::InvalidArgument("kick rate must be positive".into()));
        }
        if !(alpha >= T::zero() && alpha.is_finite()) {
            return Err(Error::InvalidArgument("kick angle bound must be non-negative".into()));
        }
        if !(t_c > T::zero() && t_c.is_finite()) {
            return Err(Error::InvalidArgument("cycle time must be positive".into()));
        }
        // kicks per cycle, rounded to the nearest whole kick (at least one)
        let k = (gamma_per_ms * t_c * T::lit(1000.0)).round().as_f64() as usize;
        let k = k.max(1);
        let delta = t_c / T::lit(k as f64);
        Ok(Self { gamma_per_ms, alpha, angle_mode, phase_mode, t_c, seed, k, delta })
    }

    /// Kicks per cycle.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Inter-kick interval t_c / k.
    pub fn delta(&self) -> T {
        self.delta
    }

    /// Rate actually realized after rounding k to an integer.
    pub fn effective_gamma_per_ms(&self) -> T {
        T::lit(self.k as f64) / (self.t_c * T::lit(1000.0))
    }

    pub fn with_cycle_time(&self, t_c: T) -> Result<Self> {
        Self::new(self.gamma_per_ms, self.alpha, self.angle_mode, self.phase_mode, t_c, self.seed)
    }
}

/// Heteronuclear two-spin model H = pi (nu_S Z_S + nu_E Z_E + (J/2) Z_S Z_E),
/// frequencies in Hz, with a product initial state.
#[derive(Debug, Clone)]
pub struct SystemEnvModel<T: Real> {
    pub j_hz: T,
    pub nu_s_hz: T,
    pub nu_e_hz: T,
    rho_s0: Operator<T>,
    rho_e0: Operator<T>,
    /// Optional phenomenological coherence decay multiplying readout.
    pub intrinsic_t2_s: Option<T>,
}

impl<T: Real> SystemEnvModel<T> {
    pub fn new(
        j_hz: T,
        nu_s_hz: T,
        nu_e_hz: T,
        rho_s0: Operator<T>,
        rho_e0: Operator<T>,
        intrinsic_t2_s: Option<T>,
    ) -> Result<Self> {
        for rho in [&rho_s0, &rho_e0] {
            if rho.dim() != 2 {
                return Err(Error::BadDim(rho.dim()));
            }
            if let StateClass::Invalid(why) = validate_density(rho) {
                return Err(Error::InvalidArgument(format!("initial state: {why}")));
            }
        }
        if let Some(t2) = intrinsic_t2_s {
            if !(t2 > T::zero()) {
                return Err(Error::InvalidArgument("intrinsic T2 must be positive".into()));
            }
        }
        Ok(Self { j_hz, nu_s_hz, nu_e_hz, rho_s0, rho_e0, intrinsic_t2_s })
    }

    /// Rotating-frame defaults: system prepared along +x, environment maximally
    /// mixed, both offsets zero.
    pub fn standard(j_hz: T) -> Self {
        let half = T::lit(0.5);
        let rho_s0 = Operator::from_fn(2, |_, _| Cx::new(half, T::zero())).unwrap();
        let rho_e0 = Operator::identity(2).scaled_re(half);
        Self { j_hz, nu_s_hz: T::zero(), nu_e_hz: T::zero(), rho_s0, rho_e0, intrinsic_t2_s: None }
    }

    pub fn rho_s0(&self) -> &Operator<T> {
        &self.rho_s0
    }

    pub fn rho_e0(&self) -> &Operator<T> {
        &self.rho_e0
    }

    /// Diagonal energies over |s e> basis states, rad/s.
    fn energies(&self) -> [T; 4] {
        let pi = T::PI();
        let mut e = [T::zero(); 4];
        for s in 0..2usize {
            for v in 0..2usize {
                let zs = T::one() - T::lit(2.0 * s as f64);
                let ze = T::one() - T::lit(2.0 * v as f64);
                e[2 * s + v] =
                    pi * (self.nu_s_hz * zs + self.nu_e_hz * ze + self.j_hz * T::lit(0.5) * zs * ze);
            }
        }
        e
    }

    pub fn hamiltonian(&self) -> Operator<T> {
        Operator::from_diag(&self.energies().map(|e| Cx::new(e, T::zero())))
    }

    /// e^{-iHt}; H is diagonal so this is exact.
    pub fn free_propagator(&self, t: T) -> Operator<T> {
        Operator::from_diag(&self.energies().map(|e| cis(-e * t)))
    }
}

fn free_phases<T: Real>(model: &SystemEnvModel<T>, dt: T) -> [Cx<T>; 4] {
    model.energies().map(|e| cis(-e * dt))
}

/// One random kick as a 2x2 rotation of the environment spin,
/// K = cos(eps) I - i sin(eps) (cos(phi) X + sin(phi) Y).
fn draw_kick<T: Real>(sched: &KickSchedule<T>, rng: &mut ChaCha12Rng) -> [Cx<T>; 4] {
    let a = sched.alpha.as_f64();
    let eps = T::lit(match sched.angle_mode {
        AngleMode::Symmetric => rng.random_range(-a..=a),
        AngleMode::Positive => rng.random_range(0.0..=a),
    });
    let phi = match sched.phase_mode {
        PhaseMode::FixedY => T::FRAC_PI_2(),
        PhaseMode::UniformPhase => T::lit(rng.random_range(0.0..std::f64::consts::TAU)),
    };
    let (c, s) = (eps.cos(), eps.sin());
    // -i e^{-i phi} and -i e^{+i phi} off-diagonals
    [
        Cx::new(c, T::zero()),
        cis(-phi) * Cx::new(T::zero(), -s),
        cis(phi) * Cx::new(T::zero(), -s),
        Cx::new(c, T::zero()),
    ]
}

/// pi rotation about the transverse axis (ax, ay): -i (ax X + ay Y).
fn pi_pulse<T: Real>(ax: T, ay: T) -> [Cx<T>; 4] {
    [
        Cx::new(T::zero(), T::zero()),
        Cx::new(ay, T::zero()) - Cx::new(T::zero(), ax),
        Cx::new(-ay, T::zero()) - Cx::new(T::zero(), ax),
        Cx::new(T::zero(), T::zero()),
    ]
}

#[derive(Clone)]
enum EventKind<T: Real> {
    Kick,
    Pulse([Cx<T>; 4]),
}

#[derive(Clone)]
struct Segment<T: Real> {
    phases: [Cx<T>; 4],
    kind: EventKind<T>,
}

/// Per-cycle event list, shared across realizations and cycles.
struct Timeline<T: Real> {
    segs: Vec<Segment<T>>,
    tail: [Cx<T>; 4],
}

fn build_timeline<T: Real>(
    model: &SystemEnvModel<T>,
    sched: &KickSchedule<T>,
    dd: Option<(&DdSchedule<T>, [Cx<T>; 4])>,
) -> Timeline<T> {
    // kick m fires at m*delta; at equal timestamps the kick precedes the pulse
    let mut events: Vec<(T, Option<[Cx<T>; 4]>)> =
        (1..=sched.k).map(|m| (T::lit(m as f64) * sched.delta, None)).collect();
    if let Some((schedule, pulse)) = dd {
        events.extend(schedule.times_s.iter().map(|&t| (t, Some(pulse))));
    }
    events.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.is_some().cmp(&b.1.is_some()))
    });
    let mut segs = Vec::with_capacity(events.len());
    let mut prev = T::zero();
    for (t, pulse) in events {
        segs.push(Segment {
            phases: free_phases(model, t - prev),
            kind: match pulse {
                None => EventKind::Kick,
                Some(p) => EventKind::Pulse(p),
            },
        });
        prev = t;
    }
    Timeline { segs, tail: free_phases(model, sched.t_c - prev) }
}

/// Pure 4-vector component of the product initial state, indexed |s e> = 2s+e.
#[derive(Clone)]
struct Branch<T: Real> {
    w: T,
    psi: [Cx<T>; 4],
}

fn initial_branches<T: Real>(model: &SystemEnvModel<T>) -> Result<Vec<Branch<T>>> {
    let es = model.rho_s0.eigh()?;
    let ee = model.rho_e0.eigh()?;
    let mut out = Vec::new();
    for (si, &ws) in es.values.iter().enumerate() {
        if ws <= T::lit(1e-14) {
            continue;
        }
        for (vi, &we) in ee.values.iter().enumerate() {
            if we <= T::lit(1e-14) {
                continue;
            }
            let mut psi = [Cx::new(T::zero(), T::zero()); 4];
            for s in 0..2 {
                for v in 0..2 {
                    psi[2 * s + v] = es.vectors.get(s, si) * ee.vectors.get(v, vi);
                }
            }
            out.push(Branch { w: ws * we, psi });
        }
    }
    Ok(out)
}

fn apply_phases<T: Real>(psi: &mut [Cx<T>; 4], phases: &[Cx<T>; 4]) {
    for (a, p) in psi.iter_mut().zip(phases) {
        *a = *a * *p;
    }
}

/// 2x2 `m` acting on the environment index: mixes (2s, 2s+1).
fn apply_env<T: Real>(psi: &mut [Cx<T>; 4], m: &[Cx<T>; 4]) {
    for s in 0..2 {
        let (a, b) = (psi[2 * s], psi[2 * s + 1]);
        psi[2 * s] = m[0] * a + m[1] * b;
        psi[2 * s + 1] = m[2] * a + m[3] * b;
    }
}

/// 2x2 `m` acting on the system index: mixes (e, 2+e).
fn apply_sys<T: Real>(psi: &mut [Cx<T>; 4], m: &[Cx<T>; 4]) {
    for e in 0..2 {
        let (a, b) = (psi[e], psi[2 + e]);
        psi[e] = m[0] * a + m[1] * b;
        psi[2 + e] = m[2] * a + m[3] * b;
    }
}

/// rho_S^{01} = Tr_E[|psi><psi|]_{01} summed over branches.
fn coherence_of<T: Real>(branches: &[Branch<T>]) -> Cx<T> {
    branches.iter().fold(Cx::new(T::zero(), T::zero()), |acc, b| {
        acc + (b.psi[0] * b.psi[2].conj() + b.psi[1] * b.psi[3].conj()).scale(b.w)
    })
}

fn run_realization<T: Real>(
    init: &[Branch<T>],
    tl: &Timeline<T>,
    sched: &KickSchedule<T>,
    rng: &mut ChaCha12Rng,
    cycles: usize,
) -> Vec<Cx<T>> {
    let mut br = init.to_vec();
    let mut out = Vec::with_capacity(cycles + 1);
    out.push(coherence_of(&br));
    for _ in 0..cycles {
        for seg in &tl.segs {
            match &seg.kind {
                EventKind::Kick => {
                    let kick = draw_kick(sched, rng);
                    for b in &mut br {
                        apply_phases(&mut b.psi, &seg.phases);
                        apply_env(&mut b.psi, &kick);
                    }
                }
                EventKind::Pulse(p) => {
                    for b in &mut br {
                        apply_phases(&mut b.psi, &seg.phases);
                        apply_sys(&mut b.psi, p);
                    }
                }
            }
        }
        for b in &mut br {
            apply_phases(&mut b.psi, &tl.tail);
        }
        out.push(coherence_of(&br));
    }
    out
}

/// One realization's single-cycle propagator U = K_k U(delta) ... K_1 U(delta)
/// as a full 4x4 matrix. Realization `index` draws the same kicks as that
/// member of the seeded ensemble.
pub fn kicked_propagator<T: Real>(
    model: &SystemEnvModel<T>,
    sched: &KickSchedule<T>,
    index: u64,
) -> Operator<T> {
    let mut rng = stream(sched.seed, index);
    let u_free = model.free_propagator(sched.delta);
    let mut u = Operator::identity(4);
    for _ in 0..sched.k {
        let k2 = draw_kick(sched, &mut rng);
        let kick = Operator::identity(2)
            .kron(&Operator::from_fn(2, |i, j| k2[2 * i + j]).unwrap())
            .unwrap();
        u = kick.matmul(&u_free).matmul(&u);
    }
    u
}

/// Ensemble-averaged system coherence and transverse magnetization sampled at
/// cycle boundaries t = m t_c.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherencePoint<T: Real> {
    pub t: T,
    /// Mean off-diagonal rho_S^{01} over realizations.
    pub coherence: Cx<T>,
    pub mx_mean: T,
    pub mx_stderr: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceSeries<T: Real> {
    pub t_c: T,
    pub points: Vec<CoherencePoint<T>>,
}

impl<T: Real> CoherenceSeries<T> {
    pub fn magnitudes(&self) -> Vec<T> {
        self.points.iter().map(|p| p.coherence.norm()).collect()
    }

    pub fn endpoint_magnitude(&self) -> T {
        self.points.last().map(|p| p.coherence.norm()).unwrap_or(T::zero())
    }

    /// (t, M_x) pairs for decay fitting.
    pub fn mx_samples(&self) -> Vec<(T, T)> {
        self.points.iter().map(|p| (p.t, p.mx_mean)).collect()
    }
}

fn average_realizations<T: Real>(
    model: &SystemEnvModel<T>,
    sched: &KickSchedule<T>,
    tl: &Timeline<T>,
    m_realizations: usize,
    cycles: usize,
) -> Result<CoherenceSeries<T>> {
    if m_realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    let init = initial_branches(model)?;
    // parallel over realizations, reduced in index order for determinism
    let per: Vec<Vec<Cx<T>>> = (0..m_realizations)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(sched.seed, i as u64);
            run_realization(&init, tl, sched, &mut rng, cycles)
        })
        .collect();
    let m_t = T::lit(m_realizations as f64);
    let points = (0..=cycles)
        .map(|cycle| {
            let t = T::lit(cycle as f64) * sched.t_c;
            let envelope = match model.intrinsic_t2_s {
                Some(t2) => (-t / t2).exp(),
                None => T::one(),
            };
            let mut csum = Cx::new(T::zero(), T::zero());
            for r in &per {
                csum = csum + r[cycle];
            }
            let coherence = csum.scale(envelope / m_t);
            let mxs: Vec<T> =
                per.iter().map(|r| T::lit(2.0) * r[cycle].re * envelope).collect();
            let mean = mxs.iter().copied().sum::<T>() / m_t;
            let stderr = if m_realizations > 1 {
                let var = mxs.iter().map(|&x| (x - mean).powi(2)).sum::<T>()
                    / (m_t - T::one());
                (var / m_t).sqrt()
            } else {
                T::zero()
            };
            CoherencePoint { t, coherence, mx_mean: mean, mx_stderr: stderr }
        })
        .collect();
    Ok(CoherenceSeries { t_c: sched.t_c, points })
}

/// Monte Carlo estimate of the dephased system state over `cycles` cycles of
/// `m_realizations` independent kick trajectories.
pub fn ensemble_coherence<T: Real>(
    model: &SystemEnvModel<T>,
    sched: &KickSchedule<T>,
    m_realizations: usize,
    cycles: usize,
) -> Result<CoherenceSeries<T>> {
    let tl = build_timeline(model, sched, None);
    average_realizations(model, sched, &tl, m_realizations, cycles)
}

/// sin(2 alpha) / (2 alpha), the mean kick cosine for symmetric angles; 1 at alpha = 0.
pub fn kick_gamma_factor<T: Real>(alpha: T) -> T {
    if alpha == T::zero() {
        T::one()
    } else {
        (T::lit(2.0) * alpha).sin() / (T::lit(2.0) * alpha)
    }
}

/// Closed-form dephasing envelope D(k) = Tr_E[O^k(rho_E0)] with
/// O(B) = c V B V + d Y V B V Y, V = e^{-i pi J delta Z/2}, c,d = (1 +- gamma)/2,
/// written for symmetric fixed-y kicks. Generally complex; compare magnitudes
/// against the Monte Carlo envelope.
pub fn superop_factor<T: Real>(
    sched: &KickSchedule<T>,
    j_hz: T,
    rho_e0: &Operator<T>,
    k_total: usize,
) -> Result<Cx<T>> {
    Ok(*superop_series(sched, j_hz, rho_e0, k_total, 1)?.last().unwrap())
}

/// D sampled every `stride` kicks: D(0), D(stride), ..., D(n*stride).
pub fn superop_series<T: Real>(
    sched: &KickSchedule<T>,
    j_hz: T,
    rho_e0: &Operator<T>,
    n: usize,
    stride: usize,
) -> Result<Vec<Cx<T>>> {
    if rho_e0.dim() != 2 {
        return Err(Error::BadDim(rho_e0.dim()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let gamma = kick_gamma_factor(sched.alpha);
    let c = (T::one() + gamma) * T::lit(0.5);
    let d = (T::one() - gamma) * T::lit(0.5);
    let phase = T::PI() * j_hz * sched.delta * T::lit(0.5);
    let v = Operator::from_diag(&[cis(-phase), cis(phase)]);
    let y = Operator::pauli_y();
    let mut b = rho_e0.clone();
    let mut out = Vec::with_capacity(n + 1);
    out.push(b.trace());
    for _ in 0..n {
        for _ in 0..stride {
            let vbv = v.matmul(&b).matmul(&v);
            b = &vbv.scaled_re(c) + &y.matmul(&vbv).matmul(&y).scaled_re(d);
        }
        out.push(b.trace());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DdKind {
    Hahn,
    Cpmg,
    Udd,
}

/// Pulse times for one decoupling cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdSchedule<T: Real> {
    pub kind: DdKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub t_c_s: T,
    pub times_s: Vec<T>,
}

/// Pulse times in (0, t_c): Hahn is the single mid-cycle echo, CPMG places N
/// pulses at (2j-1) t_c/(2N), UDD at t_c sin^2[pi j / (2(N+1))].
pub fn dd_schedule<T: Real>(kind: DdKind, n: usize, t_c: T) -> Result<DdSchedule<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("pulse count must be at least 1".into()));
    }
    if !(t_c > T::zero() && t_c.is_finite()) {
        return Err(Error::InvalidArgument("cycle time must be positive".into()));
    }
    let n = if kind == DdKind::Hahn { 1 } else { n };
    let times = match kind {
        DdKind::Hahn => vec![t_c * T::lit(0.5)],
        DdKind::Cpmg => (1..=n)
            .map(|j| t_c * T::lit((2 * j - 1) as f64) / T::lit((2 * n) as f64))
            .collect(),
        DdKind::Udd => (1..=n)
            .map(|j| {
                let arg = T::PI() * T::lit(j as f64) / T::lit((2 * (n + 1)) as f64);
                t_c * arg.sin().powi(2)
            })
            .collect(),
    };
    debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(times.iter().all(|&t| t > T::zero() && t < t_c));
    Ok(DdSchedule { kind, n, t_c_s: t_c, times_s: times })
}

/// Kicked evolution with instantaneous system pi-pulses interleaved per the
/// decoupling schedule. The pulse axis follows the transverse component of
/// the prepared system state.
pub fn run_dd_under_kicks<T: Real>(
    model: &SystemEnvModel<T>,
    sched: &KickSchedule<T>,
    dd: &DdSchedule<T>,
    cycles: usize,
    m_realizations: usize,
) -> Result<CoherenceSeries<T>> {
    if (dd.t_c_s - sched.t_c).abs() > T::lit(1e-12) * sched.t_c {
        return Err(Error::InvalidArgument(format!(
            "decoupling cycle {} s does not match kick cycle {} s",
            dd.t_c_s.as_f64(),
            sched.t_c.as_f64()
        )));
    }
    let r01 = model.rho_s0.get(0, 1);
    let (x, y) = (T::lit(2.0) * r01.re, -T::lit(2.0) * r01.im);
    let r = x.hypot(y);
    if r < T::lit(1e-9) {
        return Err(Error::InvalidArgument(
            "prepared state has no transverse component to set the pulse axis".into(),
        ));
    }
    let pulse = pi_pulse(x / r, y / r);
    let tl = build_timeline(model, sched, Some((dd, pulse)));
    average_realizations(model, sched, &tl, m_realizations, cycles)
}

/// Exponential decay time from (t, M_x) samples: log-linear estimate refined
/// by least squares. Non-decaying data yields the infinity sentinel.
pub fn fit_t2<T: Real>(samples: &[(T, T)]) -> Result<T> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "T2 fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let logpts: Vec<(T, T)> =
        samples.iter().filter(|&&(_, y)| y > T::zero()).map(|&(t, y)| (t, y.ln())).collect();
    if logpts.len() < 3 {
        return Err(Error::InvalidArgument("T2 fit needs at least 3 positive samples".into()));
    }
    let m = T::lit(logpts.len() as f64);
    let tbar = logpts.iter().map(|&(t, _)| t).sum::<T>() / m;
    let ybar = logpts.iter().map(|&(_, y)| y).sum::<T>() / m;
    let cov = logpts.iter().map(|&(t, y)| (t - tbar) * (y - ybar)).sum::<T>();
    let var = logpts.iter().map(|&(t, _)| (t - tbar).powi(2)).sum::<T>();
    if var == T::zero() {
        return Err(Error::InvalidArgument("T2 fit needs distinct sample times".into()));
    }
    let slope = cov / var;
    let span = logpts.last().unwrap().0 - logpts[0].0;
    // decay of less than 1e-9 over the whole record is indistinguishable from none
    if slope * span > -T::lit(1e-9) {
        return Ok(T::infinity());
    }
    let t2_0 = -T::one() / slope;
    let y0 = (ybar - slope * tbar).exp();
    let ts: Vec<T> = samples.iter().map(|&(t, _)| t).collect();
    let ys: Vec<T> = samples.iter().map(|&(_, y)| y).collect();
    let opts = FitOptions {
        max_iter: 200,
        tol: T::lit(1e-14),
        bounds: Some(vec![(T::lit(-1e6), T::lit(1e6)), (T::lit(1e-12), T::lit(1e18))]),
    };
    let fit = nls_fit(&ts, &ys, &|p, t| p[0] * (-t / p[1]).exp(), &[y0, t2_0], &opts)?;
    Ok(if fit.converged { fit.params[1] } else { t2_0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    const J: f64 = 209.4;

    fn deg(d: f64) -> f64 {
        d * PI / 180.0
    }

    fn sched(gamma: f64, alpha_deg: f64, t_c: f64, seed: u64) -> KickSchedule<f64> {
        KickSchedule::new(gamma, deg(alpha_deg), AngleMode::Symmetric, PhaseMode::FixedY, t_c, seed)
            .unwrap()
    }

    #[test]
    fn zurek_basics() {
        let half = Cx::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let env = [(half, half)];
        let j = [3.0];
        let z0 = zurek_factor(&env, &j, 0.0).unwrap();
        assert!((z0 - Cx::new(1.0, 0.0)).norm() < 1e-14);
        // equal-weight single spin: z(t) = cos(2Jt)
        for t in [0.1, 0.37, 1.9] {
            let z = zurek_factor(&env, &j, t).unwrap();
            assert!((z.re - (2.0 * 3.0 * t).cos()).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
        // |z| <= 1 for random amplitudes
        let env2 = [(Cx::new(0.6, 0.0), Cx::new(0.0, 0.8)), (Cx::new(0.28, 0.96), Cx::new(0.0, 0.0))];
        let z = zurek_factor(&env2, &[1.0, 2.5], 0.83).unwrap();
        assert!(z.norm() <= 1.0 + 1e-12);
        // unnormalized amplitudes rejected
        assert!(zurek_factor(&[(half, Cx::new(0.9, 0.0))], &[1.0], 0.1).is_err());
        assert!(zurek_factor(&env, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn zurek_matches_brute_force() {
        // central spin + 2 env spins under sum_j J_j Z_0 Z_j
        let (a, b) = (Cx::new(0.8, 0.0), Cx::new(0.36, 0.48));
        let env = [(Cx::new(0.6, 0.0), Cx::new(0.8, 0.0)), (Cx::new(0.28, 0.96), Cx::new(0.0, 0.0))];
        let js = [1.3, 0.7];
        let kets: Vec<Vec<Cx<f64>>> = vec![
            vec![a, b],
            vec![env[0].0, env[0].1],
            vec![env[1].0, env[1].1],
        ];
        let mut psi = vec![Cx::new(1.0, 0.0)];
        for k in &kets {
            psi = psi.iter().flat_map(|&c| k.iter().map(move |&x| c * x)).collect();
        }
        let rho = Operator::from_fn(8, |i, j| psi[i] * psi[j].conj()).unwrap();
        let z0 = Operator::embed(&Operator::pauli_z(), 0, 3).unwrap();
        let h = (0..2).fold(Operator::zeros(8), |acc, j| {
            let zj = Operator::embed(&Operator::pauli_z(), j + 1, 3).unwrap();
            &acc + &z0.matmul(&zj).scaled_re(js[j])
        });
        let t = 0.41;
        let u = h.matexp_hermitian(t).unwrap();
        let rho_s = rho.conjugated_by(&u).partial_trace(&[2, 2, 2], &[0]).unwrap();
        let expect = zurek_factor(&env, &js, t).unwrap() * (a * b.conj());
        assert!((rho_s.get(0, 1) - expect).norm() < 1e-10);
    }

    #[test]
    fn schedule_rounds_kick_count() {
        let s = sched(25.0, 1.0, 22.4e-3, 0);
        assert_eq!(s.k(), 560);
        assert!((s.delta() - 22.4e-3 / 560.0).abs() < 1e-18);
        assert!((s.effective_gamma_per_ms() - 25.0).abs() < 1e-12);
        // sub-kick rates clamp to one kick per cycle
        let tiny = sched(0.001, 1.0, 1e-3, 0);
        assert_eq!(tiny.k(), 1);
        assert!(KickSchedule::<f64>::new(0.0, 0.1, AngleMode::Symmetric, PhaseMode::FixedY, 1.0, 0)
            .is_err());
        assert!(KickSchedule::<f64>::new(1.0, -0.1, AngleMode::Symmetric, PhaseMode::FixedY, 1.0, 0)
            .is_err());
    }

    #[test]
    fn kickless_propagator_is_free_evolution() {
        let model = SystemEnvModel::standard(J);
        let s = sched(10.0, 0.0, 6.0 / J, 3);
        let u = kicked_propagator(&model, &s, 0);
        assert!(u.max_abs_diff(&model.free_propagator(s.t_c)) < 1e-12);
        assert!(u.unitarity_deviation() < 1e-12);
    }

    #[test]
    fn single_kick_propagator_composes_by_hand() {
        let model = SystemEnvModel::standard(J);
        let t_c = 1e-3;
        let s = KickSchedule::new(1.0, deg(30.0), AngleMode::Positive, PhaseMode::UniformPhase, t_c, 77)
            .unwrap();
        assert_eq!(s.k(), 1);
        let u = kicked_propagator(&model, &s, 5);
        let mut rng = stream(s.seed, 5);
        let k2 = draw_kick(&s, &mut rng);
        let kick = Operator::identity(2)
            .kron(&Operator::from_fn(2, |i, j| k2[2 * i + j]).unwrap())
            .unwrap();
        let expect = kick.matmul(&model.free_propagator(t_c));
        assert!(u.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn propagator_deterministic_and_unitary() {
        let model = SystemEnvModel::standard(J);
        let s = sched(25.0, 2.0, 22.4e-3, 9);
        let a = kicked_propagator(&model, &s, 4);
        let b = kicked_propagator(&model, &s, 4);
        assert_eq!(a.array(), b.array());
        assert!(a.unitarity_deviation() < 1e-9);
        assert_ne!(kicked_propagator(&model, &s, 5).array(), a.array());
    }

    #[test]
    fn branch_evolution_matches_full_matrix() {
        // the fast pure-branch path must agree with explicit 4x4 conjugation
        let model = SystemEnvModel::standard(J);
        for (mode_a, mode_p, seed) in [
            (AngleMode::Symmetric, PhaseMode::FixedY, 21u64),
            (AngleMode::Positive, PhaseMode::UniformPhase, 22u64),
        ] {
            let s =
                KickSchedule::new(10.0, deg(5.0), mode_a, mode_p, 6.0 / J, seed).unwrap();
            let series = ensemble_coherence(&model, &s, 1, 1).unwrap();
            let u = kicked_propagator(&model, &s, 0);
            let rho0 = model.rho_s0.kron(&model.rho_e0).unwrap();
            let rho_s = rho0.conjugated_by(&u).partial_trace(&[2, 2], &[0]).unwrap();
            let got = series.points[1].coherence;
            assert!((got - rho_s.get(0, 1)).norm() < 1e-12, "modes {mode_a:?}/{mode_p:?}");
        }
    }

    #[test]
    fn kickless_coherence_constant_at_j_periods() {
        let model = SystemEnvModel::standard(J);
        // t_c = 6/J lands on full J periods, where |coherence| returns to 1/2
        let s = sched(10.0, 0.0, 6.0 / J, 1);
        let series = ensemble_coherence(&model, &s, 3, 8).unwrap();
        for p in &series.points {
            assert!((p.coherence.norm() - 0.5).abs() < 1e-9, "t={}", p.t);
        }
    }

    #[test]
    fn kicks_decay_faster_than_baseline() {
        let model = SystemEnvModel::standard(J);
        let kicked = sched(25.0, 1.0, 22.4e-3, 11);
        let base = sched(25.0, 0.0, 22.4e-3, 11);
        let with = ensemble_coherence(&model, &kicked, 300, 8).unwrap();
        let without = ensemble_coherence(&model, &base, 300, 8).unwrap();
        assert!(with.endpoint_magnitude() < without.endpoint_magnitude());
    }

    #[test]
    fn populations_preserved_per_realization() {
        let model = SystemEnvModel::standard(J);
        let s = sched(25.0, 2.0, 22.4e-3, 13);
        let rho0 = model.rho_s0.kron(&model.rho_e0).unwrap();
        let mut rho = rho0.clone();
        for i in 0..3 {
            let u = kicked_propagator(&model, &s, i);
            rho = rho.conjugated_by(&u);
            let rs = rho.partial_trace(&[2, 2], &[0]).unwrap();
            assert!((rs.get(0, 0).re - 0.5).abs() < 1e-9);
            assert!((rs.get(1, 1).re - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn averaged_state_remains_physical() {
        let model = SystemEnvModel::standard(J);
        let s = sched(25.0, 2.0, 22.4e-3, 17);
        let series = ensemble_coherence(&model, &s, 200, 6).unwrap();
        // populations stay at 1/2, so PSD means |coherence| <= 1/2
        for p in &series.points {
            assert!(p.coherence.norm() <= 0.5 + 1e-9);
            assert!(p.mx_stderr >= 0.0);
        }
    }

    #[test]
    fn half_ensembles_agree() {
        let model = SystemEnvModel::standard(J);
        let cycles = 6;
        let a = ensemble_coherence(&model, &sched(25.0, 1.0, 22.4e-3, 100), 250, cycles).unwrap();
        let b = ensemble_coherence(&model, &sched(25.0, 1.0, 22.4e-3, 101), 250, cycles).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            let sigma = pa.mx_stderr.hypot(pb.mx_stderr).max(1e-12);
            assert!(
                (pa.mx_mean - pb.mx_mean).abs() <= 3.0 * sigma,
                "t={}: {} vs {}",
                pa.t,
                pa.mx_mean,
                pb.mx_mean
            );
        }
    }

    #[test]
    fn intrinsic_envelope_applies() {
        let mut model = SystemEnvModel::standard(J);
        let s = sched(10.0, 0.0, 6.0 / J, 1);
        let bare = ensemble_coherence(&model, &s, 2, 4).unwrap();
        model.intrinsic_t2_s = Some(0.05);
        let damped = ensemble_coherence(&model, &s, 2, 4).unwrap();
        for (b, d) in bare.points.iter().zip(&damped.points) {
            let f = (-b.t / 0.05f64).exp();
            assert!((d.coherence.norm() - b.coherence.norm() * f).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_factor_values() {
        assert_eq!(kick_gamma_factor(0.0f64), 1.0);
        assert!((kick_gamma_factor(PI / 4.0) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn superop_alpha_zero_matches_free_dephasing() {
        // with no kicks D(k) is the bare conditional-phase trace
        let s = sched(10.0, 0.0, 6.0 / J, 1);
        let rho_e = Operator::identity(2).scaled_re(0.5);
        let d = superop_series(&s, J, &rho_e, s.k(), 1).unwrap();
        // V B V doubles the per-kick phase: D(m) = cos(pi J delta m)
        for (m, dk) in d.iter().enumerate() {
            let expect = (PI * J * s.delta() * m as f64).cos();
            assert!((dk.re - expect).abs() < 1e-12);
            assert!(dk.im.abs() < 1e-12);
        }
    }

    #[test]
    fn superop_tracks_monte_carlo() {
        let model = SystemEnvModel::standard(J);
        let s = sched(10.0, 2.0, 6.0 / J, 23);
        let cycles = 8;
        let mc = ensemble_coherence(&model, &s, 800, cycles).unwrap();
        let d = superop_series(&s, J, model.rho_e0(), cycles, s.k()).unwrap();
        for (p, dk) in mc.points.iter().zip(&d) {
            let pred = 0.5 * dk.norm();
            // binomial-style bound on |coherence| via the Mx scatter
            let sigma = (0.5 * p.mx_stderr).max(1e-4);
            assert!(
                (p.coherence.norm() - pred).abs() <= 3.0 * sigma,
                "t={}: mc {} vs closed form {}",
                p.t,
                p.coherence.norm(),
                pred
            );
        }
    }

    #[test]
    fn dd_schedule_shapes() {
        let hahn = dd_schedule::<f64>(DdKind::Hahn, 5, 2.0).unwrap();
        assert_eq!(hahn.n, 1);
        assert_eq!(hahn.times_s, vec![1.0]);
        let udd1 = dd_schedule::<f64>(DdKind::Udd, 1, 2.0).unwrap();
        assert!((udd1.times_s[0] - 1.0).abs() < 1e-15);
        let cpmg1 = dd_schedule::<f64>(DdKind::Cpmg, 1, 2.0).unwrap();
        assert!((cpmg1.times_s[0] - 1.0).abs() < 1e-15);

        let udd = dd_schedule::<f64>(DdKind::Udd, 7, 1.0).unwrap();
        assert!((udd.times_s[0] - 0.038060).abs() < 1e-6);
        assert!((udd.times_s[6] - 0.961940).abs() < 1e-6);
        let cpmg = dd_schedule::<f64>(DdKind::Cpmg, 7, 1.0).unwrap();
        for (j, &t) in cpmg.times_s.iter().enumerate() {
            assert!((t - (2.0 * (j + 1) as f64 - 1.0) / 14.0).abs() < 1e-15);
            // mirror symmetry about t_c/2
            assert!((t + cpmg.times_s[6 - j] - 1.0).abs() < 1e-12);
        }
        for s in [&udd, &cpmg] {
            assert!(s.times_s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.times_s.iter().all(|&t| t > 0.0 && t < 1.0));
        }
        assert!(dd_schedule::<f64>(DdKind::Cpmg, 0, 1.0).is_err());
    }

    #[test]
    fn dd_schedule_serializes_with_pinned_keys() {
        let s = dd_schedule(DdKind::Udd, 2, 0.5f64).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        for key in ["\"kind\"", "\"N\"", "\"t_c_s\"", "\"times_s\""] {
            assert!(json.contains(key), "{json}");
        }
        let back: DdSchedule<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn dd_refocuses_static_coupling() {
        let model = SystemEnvModel::standard(J);
        // alpha = 0: kicks are identity, only the static ZZ coupling acts
        let s = sched(5.0, 0.0, 22.4e-3, 31);
        for kind in [DdKind::Hahn, DdKind::Cpmg, DdKind::Udd] {
            let n = if kind == DdKind::Hahn { 1 } else { 7 };
            let dd = dd_schedule(kind, n, s.t_c).unwrap();
            let series = run_dd_under_kicks(&model, &s, &dd, 3, 1).unwrap();
            for p in &series.points {
                assert!(
                    (p.coherence.norm() - 0.5).abs() < 1e-9,
                    "{kind:?} at t={}: {}",
                    p.t,
                    p.coherence.norm()
                );
            }
        }
    }

    #[test]
    fn cpmg_beats_no_dd_under_kicks() {
        let model = SystemEnvModel::standard(J);
        let s = sched(25.0, 1.0, 22.4e-3, 37);
        let dd = dd_schedule(DdKind::Cpmg, 7, s.t_c).unwrap();
        let cycles = 6;
        let m = 300;
        let with = run_dd_under_kicks(&model, &s, &dd, cycles, m).unwrap();
        let without = ensemble_coherence(&model, &s, m, cycles).unwrap();
        assert!(with.endpoint_magnitude() > without.endpoint_magnitude());
    }

    #[test]
    fn dd_requires_matching_cycle_and_transverse_state() {
        let model = SystemEnvModel::standard(J);
        let s = sched(25.0, 1.0, 22.4e-3, 37);
        let dd = dd_schedule(DdKind::Cpmg, 7, 10e-3).unwrap();
        assert!(run_dd_under_kicks(&model, &s, &dd, 2, 2).is_err());
        let z_state = SystemEnvModel::new(
            J,
            0.0,
            0.0,
            Operator::from_diag(&[Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)]),
            Operator::identity(2).scaled_re(0.5),
            None,
        )
        .unwrap();
        let dd_ok = dd_schedule(DdKind::Cpmg, 7, s.t_c).unwrap();
        assert!(run_dd_under_kicks(&z_state, &s, &dd_ok, 2, 2).is_err());
    }

    #[test]
    fn t2_fit_round_trips() {
        let t2 = 2.9;
        let pts: Vec<(f64, f64)> = (0..10).map(|i| {
            let t = i as f64 * 0.8;
            (t, (-t / t2).exp())
        })
        .collect();
        let got = fit_t2(&pts).unwrap();
        assert!((got - t2).abs() / t2 < 0.01, "{got}");
    }

    #[test]
    fn t2_fit_flat_series_is_infinite() {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, 0.73)).collect();
        assert!(fit_t2(&pts).unwrap().is_infinite());
        assert!(fit_t2(&pts[..2]).is_err());
    }

    #[test]
    fn t2_fit_tolerates_noise() {
        let t2 = 2.9;
        let mut rng = stream(5, 0);
        let mut gauss = || {
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        };
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let t = i as f64 * 0.5;
                (t, (-t / t2).exp() + 0.02 * gauss())
            })
            .collect();
        let got = fit_t2(&pts).unwrap();
        assert!((got - t2).abs() / t2 < 0.10, "{got}");
    }

    #[test]
    fn decay_rate_orderings() {
        // 1/T2 grows with kick rate and with kick angle
        let model = SystemEnvModel::standard(J);
        let t_c = 6.0 / J;
        let cycles = 12;
        let m = 400;
        let rate = |gamma: f64, alpha_deg: f64| {
            let s = sched(gamma, alpha_deg, t_c, 41);
            let series = ensemble_coherence(&model, &s, m, cycles).unwrap();
            1.0 / fit_t2(&series.mx_samples()).unwrap()
        };
        let r5 = rate(5.0, 1.0);
        let r25 = rate(25.0, 1.0);
        assert!(r25 > r5, "{r25} vs {r5}");
        let r25_2 = rate(25.0, 2.0);
        assert!(r25_2 > r25, "{r25_2} vs {r25}");
    }
}
