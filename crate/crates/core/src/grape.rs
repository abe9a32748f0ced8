//! Gradient-ascent pulse engineering: state-transfer optimization of
//! piecewise-constant controls, robust to RF-amplitude scaling ensembles.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::operator::Operator;
use crate::real::{tol, Cx, Real};

/// Piecewise-constant control amplitudes u[k][j] in rad/s for channel k at step j.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPulse<T: Real> {
    dt: T,
    amps: Vec<Vec<T>>,
}

impl<T: Real> ControlPulse<T> {
    pub fn new(dt: T, amps: Vec<Vec<T>>) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidArgument("pulse step duration must be positive".into()));
        }
        let n = amps.first().map_or(0, Vec::len);
        if amps.is_empty() || n == 0 {
            return Err(Error::Empty("control amplitudes"));
        }
        if amps.iter().any(|ch| ch.len() != n) {
            return Err(Error::DimMismatch("control channels differ in step count".into()));
        }
        if amps.iter().flatten().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("control amplitude"));
        }
        Ok(Self { dt, amps })
    }

    pub fn zeros(n_controls: usize, n_steps: usize, dt: T) -> Result<Self> {
        Self::new(dt, vec![vec![T::zero(); n_steps]; n_controls])
    }

    /// Uniform random amplitudes in [-u_max, u_max].
    pub fn random(
        n_controls: usize,
        n_steps: usize,
        dt: T,
        u_max: T,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(u_max >= T::zero() && u_max.is_finite()) {
            return Err(Error::InvalidArgument("u_max must be finite and non-negative".into()));
        }
        let hi = u_max.as_f64();
        let amps = (0..n_controls)
            .map(|_| (0..n_steps).map(|_| T::lit(rng.random_range(-hi..=hi))).collect())
            .collect();
        Self::new(dt, amps)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn n_controls(&self) -> usize {
        self.amps.len()
    }

    pub fn n_steps(&self) -> usize {
        self.amps[0].len()
    }

    pub fn duration(&self) -> T {
        self.dt * T::lit(self.n_steps() as f64)
    }

    pub fn amplitudes(&self) -> &[Vec<T>] {
        &self.amps
    }

    fn offset(&self, direction: &[Vec<T>], eps: T) -> Self {
        let amps = self
            .amps
            .iter()
            .zip(direction)
            .map(|(ch, d)| ch.iter().zip(d).map(|(&u, &g)| u + eps * g).collect())
            .collect();
        Self { dt: self.dt, amps }
    }
}

/// One RF-inhomogeneity ensemble point: controls scale by `scale`, weighted `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember<T: Real> {
    pub scale: T,
    pub weight: T,
}

/// Five-point RF-amplitude distribution (scales 0.8..1.2); raw percentage
/// weights total 92.71 and are renormalized to sum to 1.
pub fn rf_ensemble<T: Real>() -> Vec<EnsembleMember<T>> {
    let raw = [(0.8, 4.31), (0.9, 0.81), (1.0, 75.32), (1.1, 8.01), (1.2, 4.26)];
    let total: f64 = raw.iter().map(|&(_, w)| w).sum();
    raw.iter()
        .map(|&(s, w)| EnsembleMember { scale: T::lit(s), weight: T::lit(w / total) })
        .collect()
}

/// State-transfer problem: drift + scaled controls steer `initial` toward `target`.
#[derive(Debug, Clone)]
pub struct GrapeProblem<T: Real> {
    drift: Operator<T>,
    controls: Vec<Operator<T>>,
    initial: Operator<T>,
    target: Operator<T>,
    ensemble: Vec<EnsembleMember<T>>,
}

impl<T: Real> GrapeProblem<T> {
    pub fn new(
        drift: Operator<T>,
        controls: Vec<Operator<T>>,
        initial: Operator<T>,
        target: Operator<T>,
        ensemble: Vec<EnsembleMember<T>>,
    ) -> Result<Self> {
        let dim = drift.dim();
        let herm_tol = tol::<T>(1e-9);
        if controls.is_empty() {
            return Err(Error::Empty("control Hamiltonians"));
        }
        for (name, op) in [("drift", &drift), ("initial state", &initial), ("target", &target)]
            .into_iter()
            .chain(controls.iter().map(|c| ("control", c)))
        {
            if op.dim() != dim {
                return Err(Error::DimMismatch(format!(
                    "{name} is {}x{} but drift is {dim}x{dim}",
                    op.dim(),
                    op.dim()
                )));
            }
            if !op.is_hermitian(herm_tol) {
                return Err(Error::NotHermitian(op.hermiticity_deviation().as_f64()));
            }
        }
        if initial.frobenius_norm() == T::zero() || target.frobenius_norm() == T::zero() {
            return Err(Error::InvalidArgument("initial and target must be nonzero".into()));
        }
        if ensemble.is_empty() {
            return Err(Error::Empty("scaling ensemble"));
        }
        let wsum: T = ensemble.iter().map(|m| m.weight).sum();
        if ensemble.iter().any(|m| !(m.weight > T::zero() && m.scale.is_finite())) || !wsum.is_finite()
        {
            return Err(Error::InvalidArgument("ensemble weights must be positive".into()));
        }
        let ensemble = ensemble
            .into_iter()
            .map(|m| EnsembleMember { scale: m.scale, weight: m.weight / wsum })
            .collect();
        Ok(Self { drift, controls, initial, target, ensemble })
    }

    pub fn drift(&self) -> &Operator<T> {
        &self.drift
    }

    pub fn controls(&self) -> &[Operator<T>] {
        &self.controls
    }

    pub fn initial(&self) -> &Operator<T> {
        &self.initial
    }

    pub fn target(&self) -> &Operator<T> {
        &self.target
    }

    pub fn ensemble(&self) -> &[EnsembleMember<T>] {
        &self.ensemble
    }

    /// SHA-256 of the problem content, for pulse-file provenance.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut put_op = |op: &Operator<T>| {
            h.update((op.dim() as u64).to_le_bytes());
            for v in op.array() {
                h.update(v.re.as_f64().to_le_bytes());
                h.update(v.im.as_f64().to_le_bytes());
            }
        };
        put_op(&self.drift);
        for c in &self.controls {
            put_op(c);
        }
        put_op(&self.initial);
        put_op(&self.target);
        h.update((self.controls.len() as u64).to_le_bytes());
        h.update((self.ensemble.len() as u64).to_le_bytes());
        for m in &self.ensemble {
            h.update(m.scale.as_f64().to_le_bytes());
            h.update(m.weight.as_f64().to_le_bytes());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Tr[a† b], the Hilbert-Schmidt inner product.
fn hs_inner<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Cx<T> {
    a.array().iter().zip(b.array()).map(|(x, y)| x.conj() * y).sum()
}

fn step_unitaries<T: Real>(
    problem: &GrapeProblem<T>,
    pulse: &ControlPulse<T>,
    scale: T,
) -> Result<Vec<Operator<T>>> {
    if pulse.n_controls() != problem.controls.len() {
        return Err(Error::DimMismatch(format!(
            "pulse has {} channels but problem has {} controls",
            pulse.n_controls(),
            problem.controls.len()
        )));
    }
    (0..pulse.n_steps())
        .map(|j| {
            let mut h = problem.drift.clone();
            for (k, hk) in problem.controls.iter().enumerate() {
                h = &h + &hk.scaled_re(scale * pulse.amps[k][j]);
            }
            h.matexp_hermitian(pulse.dt)
        })
        .collect()
}

/// States rho_0..rho_N under the pulse with controls multiplied by `scale`.
pub fn forward_propagate<T: Real>(
    problem: &GrapeProblem<T>,
    pulse: &ControlPulse<T>,
    scale: T,
) -> Result<Vec<Operator<T>>> {
    let us = step_unitaries(problem, pulse, scale)?;
    let mut rhos = Vec::with_capacity(us.len() + 1);
    rhos.push(problem.initial.clone());
    for u in &us {
        let next = rhos.last().unwrap().conjugated_by(u);
        rhos.push(next);
    }
    Ok(rhos)
}

/// Normalized transfer fidelity Re Tr[C† rho] / (||C||_F ||rho||_F).
pub fn grape_fidelity<T: Real>(target: &Operator<T>, rho: &Operator<T>) -> Result<T> {
    if target.dim() != rho.dim() {
        return Err(Error::DimMismatch(format!("target {} vs state {}", target.dim(), rho.dim())));
    }
    let denom = target.frobenius_norm() * rho.frobenius_norm();
    if denom == T::zero() {
        return Err(Error::InvalidArgument("zero operator in fidelity".into()));
    }
    Ok(hs_inner(target, rho).re / denom)
}

/// Weighted ensemble-average fidelity; members evaluate in parallel but
/// accumulate in fixed order, so the result is worker-count-independent.
pub fn ensemble_fidelity<T: Real>(problem: &GrapeProblem<T>, pulse: &ControlPulse<T>) -> Result<T> {
    let phis: Vec<T> = problem
        .ensemble
        .par_iter()
        .map(|m| {
            let rhos = forward_propagate(problem, pulse, m.scale)?;
            Ok(m.weight * grape_fidelity(&problem.target, rhos.last().unwrap())?)
        })
        .collect::<Result<_>>()?;
    Ok(phis.into_iter().sum())
}

/// First-order gradient g[k][j] = -Re Tr[lambda_j† i dt scale [H_k, rho_j]],
/// normalized like the fidelity. lambda_N = C, lambda_j = U_{j+1}† lambda_{j+1} U_{j+1}.
pub fn grape_gradient<T: Real>(
    problem: &GrapeProblem<T>,
    pulse: &ControlPulse<T>,
    scale: T,
) -> Result<Vec<Vec<T>>> {
    let us = step_unitaries(problem, pulse, scale)?;
    let n = pulse.n_steps();
    let m = pulse.n_controls();
    let mut rhos = Vec::with_capacity(n + 1);
    rhos.push(problem.initial.clone());
    for u in &us {
        let next = rhos.last().unwrap().conjugated_by(u);
        rhos.push(next);
    }
    // unitary conjugation preserves the Frobenius norm, so ||rho(T)|| = ||rho(0)||
    let denom = problem.target.frobenius_norm() * problem.initial.frobenius_norm();
    let mut g = vec![vec![T::zero(); n]; m];
    let mut lambda = problem.target.clone();
    for j in (1..=n).rev() {
        for k in 0..m {
            let comm = problem.controls[k].commutator(&rhos[j]);
            // -Re(i z) = Im(z)
            g[k][j - 1] = pulse.dt * scale * hs_inner(&lambda, &comm).im / denom;
        }
        lambda = lambda.conjugated_by(&us[j - 1].dagger());
    }
    Ok(g)
}

fn ensemble_gradient<T: Real>(
    problem: &GrapeProblem<T>,
    pulse: &ControlPulse<T>,
) -> Result<Vec<Vec<T>>> {
    let grads: Vec<Vec<Vec<T>>> = problem
        .ensemble
        .par_iter()
        .map(|m| grape_gradient(problem, pulse, m.scale))
        .collect::<Result<_>>()?;
    let mut g = vec![vec![T::zero(); pulse.n_steps()]; pulse.n_controls()];
    for (mem, gm) in problem.ensemble.iter().zip(&grads) {
        for (gk, gmk) in g.iter_mut().zip(gm) {
            for (a, &b) in gk.iter_mut().zip(gmk) {
                *a += mem.weight * b;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct GrapeOptions<T: Real> {
    /// Initial ascent step.
    pub step: T,
    pub max_iter: usize,
    pub target_phi: T,
    /// Halve the step (up to 30 times) until the ensemble fidelity does not
    /// decrease; `false` applies the fixed-step update unconditionally.
    pub line_search: bool,
}

impl<T: Real> Default for GrapeOptions<T> {
    fn default() -> Self {
        Self { step: T::one(), max_iter: 500, target_phi: T::lit(0.99), line_search: true }
    }
}

#[derive(Debug, Clone)]
pub struct GrapeOutcome<T: Real> {
    pub pulse: ControlPulse<T>,
    /// Ensemble-average fidelity before each accepted update, then after the last.
    pub history: Vec<T>,
    pub reached_target: bool,
}

/// Gradient ascent on the ensemble-average fidelity. Stops at `target_phi`,
/// `max_iter`, or a stalled line search.
pub fn grape_optimize<T: Real>(
    problem: &GrapeProblem<T>,
    init: ControlPulse<T>,
    opts: &GrapeOptions<T>,
) -> Result<GrapeOutcome<T>> {
    if !(opts.step > T::zero() && opts.step.is_finite()) {
        return Err(Error::InvalidArgument("ascent step must be positive".into()));
    }
    let mut pulse = init;
    let mut phi = ensemble_fidelity(problem, &pulse)?;
    if !phi.is_finite() {
        return Err(Error::NonFinite("ensemble fidelity"));
    }
    let mut history = vec![phi];
    if phi >= opts.target_phi {
        return Ok(GrapeOutcome { pulse, history, reached_target: true });
    }
    let mut reached = false;
    for _ in 0..opts.max_iter {
        let g = ensemble_gradient(problem, &pulse)?;
        if opts.line_search {
            let mut eps = opts.step;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = pulse.offset(&g, eps);
                let phi_new = ensemble_fidelity(problem, &trial)?;
                if !phi_new.is_finite() {
                    return Err(Error::NonFinite("ensemble fidelity"));
                }
                if phi_new >= phi - T::lit(1e-12) {
                    pulse = trial;
                    phi = phi_new;
                    accepted = true;
                    break;
                }
                eps *= T::lit(0.5);
            }
            if !accepted {
                break;
            }
        } else {
            pulse = pulse.offset(&g, opts.step);
            phi = ensemble_fidelity(problem, &pulse)?;
            if !phi.is_finite() {
                return Err(Error::NonFinite("ensemble fidelity"));
            }
        }
        history.push(phi);
        if phi >= opts.target_phi {
            reached = true;
            break;
        }
    }
    Ok(GrapeOutcome { pulse, history, reached_target: reached })
}

/// CSV with header `step,dt_s,u1,u2,...`, one row per step, 1-based step index.
pub fn pulse_csv<T: Real>(pulse: &ControlPulse<T>) -> String {
    let mut out = String::from("step,dt_s");
    for k in 1..=pulse.n_controls() {
        let _ = write!(out, ",u{k}");
    }
    out.push('\n');
    for j in 0..pulse.n_steps() {
        let _ = write!(out, "{},{}", j + 1, pulse.dt.as_f64());
        for ch in &pulse.amps {
            let _ = write!(out, ",{}", ch[j].as_f64());
        }
        out.push('\n');
    }
    out
}

pub fn parse_pulse_csv<T: Real>(text: &str) -> Result<ControlPulse<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::Empty("pulse csv"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "step" || cols[1] != "dt_s" {
        return Err(Error::Parse(format!("bad pulse csv header: {header}")));
    }
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("u{}", k + 1) {
            return Err(Error::Parse(format!("bad pulse csv column: {c}")));
        }
    }
    let m = cols.len() - 2;
    let mut dt = None;
    let mut amps = vec![Vec::new(); m];
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse(format!("pulse csv row {} has {} fields", i + 1, f.len())));
        }
        let step: usize =
            f[0].parse().map_err(|_| Error::Parse(format!("bad step index: {}", f[0])))?;
        if step != i + 1 {
            return Err(Error::Parse(format!("pulse csv steps out of order at row {}", i + 1)));
        }
        let d: f64 = f[1].parse().map_err(|_| Error::Parse(format!("bad dt_s: {}", f[1])))?;
        match dt {
            None => dt = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Parse("pulse csv dt_s varies between rows".into()))
            }
            _ => {}
        }
        for (k, ch) in amps.iter_mut().enumerate() {
            let v: f64 = f[k + 2]
                .parse()
                .map_err(|_| Error::Parse(format!("bad amplitude: {}", f[k + 2])))?;
            ch.push(T::lit(v));
        }
    }
    let dt = dt.ok_or(Error::Empty("pulse csv rows"))?;
    ControlPulse::new(T::lit(dt), amps)
}
