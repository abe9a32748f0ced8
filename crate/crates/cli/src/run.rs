//! Experiment dispatch: each runner computes its tables, writes them into the
//! output directory, and a `record.json` ties the echoed config to the files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Map, Value};

use spinlab_core::decoherence::{
    dd_schedule, ensemble_coherence, fit_t2, run_dd_under_kicks, CoherenceSeries, DdKind,
};
use spinlab_core::dmf::{
    decay_fit_auto, dmf_sweep, inverse_decay_correct, prepared_state, q_from_series,
    simulate_dmf, DriveParams, MagnetizationSeries, SweepConfig,
};
use spinlab_core::gates::{compile_sequence, gate_fidelity, rotation_single, standard_gate};
use spinlab_core::grape::{
    grape_optimize, pulse_csv, ControlPulse, GrapeOptions, GrapeProblem,
};
use spinlab_core::rng::{derive_seed, stream};
use spinlab_core::tomography::{noise_spectroscopy, qpt_single, ChiMatrix, NoiseSource};
use spinlab_core::{Cx, Op64};

use crate::config::{
    kick_model, kick_schedule, ChannelSpec, DdCompareParams, DmfSeriesParams, DmfSweepParams,
    Experiment, ExperimentConfig, GateCheckParams, GrapeOptParams, KickDecayParams, NsScanParams,
    NsSource, QptRunParams,
};

#[derive(Debug)]
pub enum RunError {
    /// Bad inputs or environment; exit code 2.
    Validation(String),
    /// The computation itself failed; exit code 3.
    Numeric(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "validation: {m}"),
            Self::Numeric(m) => write!(f, "numeric: {m}"),
        }
    }
}

fn numeric(e: spinlab_core::Error) -> RunError {
    RunError::Numeric(e.to_string())
}

/// Tables computed by one experiment: logical name -> (file name, contents),
/// plus a summary.
struct Tables {
    files: BTreeMap<&'static str, (&'static str, String)>,
    summary: Value,
    warnings: Vec<String>,
}

impl Tables {
    fn new() -> Self {
        Self { files: BTreeMap::new(), summary: Value::Null, warnings: Vec::new() }
    }

    fn add(&mut self, logical: &'static str, file: &'static str, contents: String) {
        self.files.insert(logical, (file, contents));
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }
}

pub struct RunOutcome {
    pub record_path: PathBuf,
}

/// Run one experiment end to end and write its artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    let tables = match &config.experiment {
        Experiment::DmfSweep(p) => run_dmf_sweep(p),
        Experiment::DmfSeries(p) => run_dmf_series(p),
        Experiment::GrapeOpt(p) => run_grape_opt(p, config.seed),
        Experiment::KickDecay(p) => run_kick_decay(p, config.seed),
        Experiment::DdCompare(p) => run_dd_compare(p, config.seed),
        Experiment::NsScan(p) => run_ns_scan(p, config.seed),
        Experiment::QptRun(p) => run_qpt(p),
        Experiment::GateCheck(p) => run_gate_check(p),
    }?;

    fs::create_dir_all(&config.output_dir).map_err(|e| {
        RunError::Validation(format!(
            "cannot create output dir {}: {e}",
            config.output_dir.display()
        ))
    })?;
    let mut table_index = Map::new();
    for (logical, (file, contents)) in &tables.files {
        let path = config.output_dir.join(file);
        fs::write(&path, contents)
            .map_err(|e| RunError::Validation(format!("cannot write {}: {e}", path.display())))?;
        table_index.insert((*logical).to_string(), Value::String((*file).to_string()));
    }

    let record = json!({
        "config": config.echo(),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "warnings": tables.warnings,
        "tables": Value::Object(table_index),
        "summary": tables.summary,
    });
    let record_path = config.output_dir.join("record.json");
    let text = serde_json::to_string_pretty(&record).expect("record serializes") + "\n";
    fs::write(&record_path, text)
        .map_err(|e| RunError::Validation(format!("cannot write record.json: {e}")))?;
    Ok(RunOutcome { record_path })
}

fn run_dmf_sweep(p: &DmfSweepParams) -> Result<Tables, RunError> {
    let cfg = SweepConfig {
        h0: p.h0_rad_s,
        j_coupling: p.j_rad_s,
        n: p.n_spins,
        boundary: p.boundary,
        n_cycles: p.n_cycles,
        slices: p.slices,
        t2: p.noise_t2_s,
        ensemble: p.ensemble.members(),
        omegas: p.omegas(),
    };
    let points = dmf_sweep(&cfg).map_err(numeric)?;
    let mut csv = String::from("omega_rad_s,Q_sim,Q3_closed,Qinf_closed,Q_noisy,Q_corrected\n");
    for pt in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            pt.omega, pt.q_sim, pt.q3_closed, pt.qinf_closed, pt.q_noisy, pt.q_corrected
        );
    }
    let max_dev = points
        .iter()
        .map(|pt| (pt.q_sim - pt.q3_closed).abs())
        .fold(0.0f64, f64::max);
    let first = &points[0];
    let peak = points
        .iter()
        .fold((first.omega, first.q_sim), |acc, pt| {
            if pt.q_sim > acc.1 {
                (pt.omega, pt.q_sim)
            } else {
                acc
            }
        });
    let mut t = Tables::new();
    t.add("sweep", "sweep.csv", csv);
    t.summary = json!({
        "n_points": points.len(),
        "max_abs_dev_sim_vs_closed3": max_dev,
        "omega_at_max_q_sim_rad_s": peak.0,
        "max_q_sim": peak.1,
    });
    Ok(t)
}

fn run_dmf_series(p: &DmfSeriesParams) -> Result<Tables, RunError> {
    let drive = DriveParams::new(p.h0_rad_s, p.j_rad_s, p.omega_rad_s, p.n_spins, p.boundary)
        .map_err(numeric)?;
    let rho0 = prepared_state(p.n_spins, p.theta_rad).map_err(numeric)?;
    let raw = simulate_dmf(&drive, &rho0, p.n_cycles, p.slices).map_err(numeric)?;
    let noisy = spinlab_core::dmf::noisy_simulate(
        &drive,
        &rho0,
        p.n_cycles,
        p.slices,
        p.noise_t2_s,
        &p.ensemble.members(),
    )
    .map_err(numeric)?;

    let mut t = Tables::new();
    let (corrected, fit_value): (MagnetizationSeries<f64>, Value) = match decay_fit_auto(&noisy) {
        Ok(fit) => match inverse_decay_correct(&noisy, &fit) {
            Ok(c) => {
                if !c.overflow_samples.is_empty() {
                    t.warn(format!(
                        "inverse-decay factor overflowed at {} sample(s); left uncorrected",
                        c.overflow_samples.len()
                    ));
                }
                (c.series, serde_json::to_value(&fit).expect("fit serializes"))
            }
            Err(e) => {
                t.warn(format!("decay correction skipped: {e}"));
                (noisy.clone(), Value::Null)
            }
        },
        Err(e) => {
            t.warn(format!("decay fit failed: {e}"));
            (noisy.clone(), Value::Null)
        }
    };

    let mut csv = String::from("j,t_s,mx_raw,mx_noisy,mx_corrected\n");
    let raw_s = raw.samples();
    let noisy_s = noisy.samples();
    let corr_s = corrected.samples();
    for j in 0..raw_s.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            j, raw_s[j].0, raw_s[j].1, noisy_s[j].1, corr_s[j].1
        );
    }
    let m0 = raw_s[0].1;
    let min_norm = if m0.abs() > 1e-12 {
        raw_s.iter().map(|&(_, v)| v / m0).fold(f64::INFINITY, f64::min)
    } else {
        f64::NAN
    };
    t.add("series", "series.csv", csv);
    t.summary = json!({
        "q_raw": q_from_series(&raw),
        "q_noisy": q_from_series(&noisy),
        "q_corrected": q_from_series(&corrected),
        "mx_initial": m0,
        "min_normalized_mx": if min_norm.is_finite() { json!(min_norm) } else { Value::Null },
        "decay_fit": fit_value,
    });
    Ok(t)
}

fn run_grape_opt(p: &GrapeOptParams, seed: u64) -> Result<Tables, RunError> {
    let rho0 = Op64::from_diag(&[Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)]);
    let u = rotation_single(p.axis, p.angle_rad).map_err(numeric)?;
    let target = rho0.conjugated_by(&u);
    let controls: Vec<Op64> = p.controls.iter().map(|a| a.generator()).collect();
    let problem = GrapeProblem::new(Op64::zeros(2), controls, rho0, target, p.ensemble.members())
        .map_err(numeric)?;
    let mut rng = stream(seed, 0);
    let init = ControlPulse::random(p.controls.len(), p.n_steps, p.dt_s, p.u_max, &mut rng)
        .map_err(numeric)?;
    let opts = GrapeOptions { max_iter: p.max_iter, target_phi: p.target_phi, ..Default::default() };
    let outcome = grape_optimize(&problem, init, &opts).map_err(numeric)?;

    let phi = *outcome.history.last().expect("history is never empty");
    let iterations = outcome.history.len() - 1;
    let mut t = Tables::new();
    if !outcome.reached_target {
        t.warn(format!(
            "optimizer stopped at fidelity {phi} after {iterations} iteration(s), \
             below target {}",
            p.target_phi
        ));
    }
    t.add("pulse", "pulse.csv", pulse_csv(&outcome.pulse));
    let sidecar = json!({
        "problem_digest": problem.digest(),
        "phi": phi,
        "reached_target": outcome.reached_target,
        "iterations": iterations,
    });
    t.add("pulse_meta", "pulse.json", serde_json::to_string_pretty(&sidecar).expect("sidecar") + "\n");
    t.summary = sidecar;
    Ok(t)
}

fn coherence_csv(s: &CoherenceSeries<f64>) -> String {
    let mut out = String::from("t_s,mx_mean,mx_stderr,coh_abs\n");
    for p in &s.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.t,
            p.mx_mean,
            p.mx_stderr,
            p.coherence.norm()
        );
    }
    out
}

/// fit_t2's infinity sentinel (no decay detected) maps to null.
fn t2_json(samples: &[(f64, f64)], label: &str, warnings: &mut Vec<String>) -> Value {
    match fit_t2(samples) {
        Ok(t2) if t2.is_finite() => json!({ "t2_s": t2, "decay_detected": true }),
        Ok(_) => json!({ "t2_s": Value::Null, "decay_detected": false }),
        Err(e) => {
            warnings.push(format!("T2 fit failed for {label}: {e}"));
            json!({ "t2_s": Value::Null, "decay_detected": Value::Null })
        }
    }
}

fn run_kick_decay(p: &KickDecayParams, seed: u64) -> Result<Tables, RunError> {
    let model = kick_model(p.j_hz, p.intrinsic_t2_ms);
    let sched = kick_schedule(
        p.gamma_kicks_per_ms,
        p.alpha_deg,
        p.angle_mode,
        p.phase_mode,
        p.tc_ms,
        derive_seed(seed, 1),
    )
    .map_err(RunError::Numeric)?;
    let kicked = ensemble_coherence(&model, &sched, p.m_realizations, p.cycles).map_err(numeric)?;
    // alpha = 0 keeps the timing but makes every kick the identity
    let quiet_sched = kick_schedule(
        p.gamma_kicks_per_ms,
        0.0,
        p.angle_mode,
        p.phase_mode,
        p.tc_ms,
        derive_seed(seed, 2),
    )
    .map_err(RunError::Numeric)?;
    let baseline =
        ensemble_coherence(&model, &quiet_sched, p.m_realizations, p.cycles).map_err(numeric)?;

    let mut t = Tables::new();
    t.add("decay", "decay.csv", coherence_csv(&kicked));
    t.add("baseline", "baseline.csv", coherence_csv(&baseline));
    let mut warnings = Vec::new();
    let fits = json!({
        "kicked": t2_json(&kicked.mx_samples(), "kicked decay", &mut warnings),
        "baseline": t2_json(&baseline.mx_samples(), "baseline decay", &mut warnings),
    });
    t.add("t2", "t2.json", serde_json::to_string_pretty(&fits).expect("t2 json") + "\n");
    for w in warnings {
        t.warn(w);
    }
    t.summary = json!({
        "fits": fits,
        "endpoint_coh_abs_kicked": kicked.endpoint_magnitude(),
        "endpoint_coh_abs_baseline": baseline.endpoint_magnitude(),
        "kicks_per_cycle": sched.k(),
    });
    Ok(t)
}

fn run_dd_compare(p: &DdCompareParams, seed: u64) -> Result<Tables, RunError> {
    let model = kick_model(p.j_hz, p.intrinsic_t2_ms);
    // all four variants replay the same kick realizations
    let sched = kick_schedule(
        p.gamma_kicks_per_ms,
        p.alpha_deg,
        p.angle_mode,
        p.phase_mode,
        p.tc_ms,
        derive_seed(seed, 1),
    )
    .map_err(RunError::Numeric)?;
    let t_c = p.tc_ms * 1e-3;

    let free = ensemble_coherence(&model, &sched, p.m_realizations, p.cycles).map_err(numeric)?;
    let mut t = Tables::new();
    t.add("decay_free", "decay_free.csv", coherence_csv(&free));

    let mut schedules = Map::new();
    let mut endpoints = Map::new();
    endpoints.insert("free".into(), json!(free.endpoint_magnitude()));
    let variants: [(&'static str, &'static str, &'static str, DdKind); 3] = [
        ("hahn", "decay_hahn", "decay_hahn.csv", DdKind::Hahn),
        ("cpmg", "decay_cpmg", "decay_cpmg.csv", DdKind::Cpmg),
        ("udd", "decay_udd", "decay_udd.csv", DdKind::Udd),
    ];
    for (label, logical, file, kind) in variants {
        let dd = dd_schedule(kind, p.n_pulses, t_c).map_err(numeric)?;
        let series =
            run_dd_under_kicks(&model, &sched, &dd, p.cycles, p.m_realizations).map_err(numeric)?;
        t.add(logical, file, coherence_csv(&series));
        schedules.insert(label.into(), serde_json::to_value(&dd).expect("schedule serializes"));
        endpoints.insert(label.into(), json!(series.endpoint_magnitude()));
    }
    t.add(
        "schedules",
        "schedules.json",
        serde_json::to_string_pretty(&Value::Object(schedules)).expect("schedules") + "\n",
    );
    t.summary = json!({
        "endpoint_coh_abs": Value::Object(endpoints),
        "kicks_per_cycle": sched.k(),
    });
    Ok(t)
}

fn run_ns_scan(p: &NsScanParams, seed: u64) -> Result<Tables, RunError> {
    let taus_s: Vec<f64> = p.taus_ms.iter().map(|ms| ms * 1e-3).collect();
    let spectrum = match &p.source {
        NsSource::Kicks(k) => {
            let model = kick_model(k.j_hz, k.intrinsic_t2_ms);
            // placeholder cycle time; the scan substitutes tau * n_pulses per point
            let sched = kick_schedule(
                k.gamma_kicks_per_ms,
                k.alpha_deg,
                k.angle_mode,
                k.phase_mode,
                1.0,
                derive_seed(seed, 1),
            )
            .map_err(RunError::Numeric)?;
            let source = NoiseSource::Kicks { model: &model, schedule: &sched };
            noise_spectroscopy(&source, &taus_s, p.n_pulses, p.cycles, p.m_realizations)
                .map_err(numeric)?
        }
        NsSource::SyntheticConstant(s) => {
            let t2_s = s.t2_ms * 1e-3;
            let constant = move |_omega: f64| t2_s;
            let source = NoiseSource::Synthetic(&constant);
            noise_spectroscopy(&source, &taus_s, p.n_pulses, p.cycles, p.m_realizations)
                .map_err(numeric)?
        }
    };
    let mut t = Tables::new();
    for (tau, reason) in &spectrum.skipped {
        t.warn(format!("skipped tau = {tau} s: {reason}"));
    }
    if spectrum.points.is_empty() {
        return Err(RunError::Numeric("no grid point produced a usable decay fit".into()));
    }
    t.add("spectrum", "spectrum.csv", spectrum.csv());
    t.summary = json!({
        "n_points": spectrum.points.len(),
        "n_skipped": spectrum.skipped.len(),
        "s_min_per_s": spectrum.points.iter().map(|q| q.s_per_s).fold(f64::INFINITY, f64::min),
        "s_max_per_s": spectrum.points.iter().map(|q| q.s_per_s).fold(0.0f64, f64::max),
    });
    Ok(t)
}

fn chi_rows(op: &Op64) -> Vec<Vec<[f64; 2]>> {
    (0..4)
        .map(|m| {
            (0..4)
                .map(|n| {
                    let z = op.get(m, n);
                    [z.re, z.im]
                })
                .collect()
        })
        .collect()
}

fn run_qpt(p: &QptRunParams) -> Result<Tables, RunError> {
    enum Built {
        Unitary(Op64),
        Dephase(f64),
    }
    let built = match &p.channel {
        ChannelSpec::Identity => Built::Unitary(Op64::identity(2)),
        ChannelSpec::XGate => Built::Unitary(Op64::pauli_x()),
        ChannelSpec::YGate => Built::Unitary(Op64::pauli_y()),
        ChannelSpec::ZGate => Built::Unitary(Op64::pauli_z()),
        ChannelSpec::Hadamard => {
            Built::Unitary(standard_gate(spinlab_core::gates::StandardGate::H))
        }
        ChannelSpec::Rotation(r) => {
            Built::Unitary(rotation_single(r.axis, r.angle_rad).map_err(numeric)?)
        }
        ChannelSpec::Dephasing(d) => Built::Dephase(d.weight),
    };
    let chi: ChiMatrix<f64> = match &built {
        Built::Unitary(u) => qpt_single(|rho| rho.conjugated_by(u)),
        Built::Dephase(w) => {
            let z = Op64::pauli_z();
            qpt_single(move |rho| {
                &rho.scaled_re(1.0 - w) + &rho.conjugated_by(&z).scaled_re(*w)
            })
        }
    }
    .map_err(numeric)?;

    let eigenvalues = chi.eigenvalues().map_err(numeric)?;
    let psd_distance = chi.psd_distance().map_err(numeric)?;
    let doc = json!({
        "fixed_basis": chi.to_json(),
        "pauli_basis": {
            "basis": ["E", "X", "Y", "Z"],
            "chi": chi_rows(&chi.to_pauli_basis()),
        },
        "diagnostics": {
            "hermiticity_deviation": chi.hermiticity_deviation(),
            "completeness_deviation": chi.completeness_deviation(),
            "eigenvalues": eigenvalues,
            "psd_distance": psd_distance,
        },
    });
    let mut t = Tables::new();
    t.add("chi", "chi.json", serde_json::to_string_pretty(&doc).expect("chi json") + "\n");
    t.summary = json!({
        "chi_diagonal_re": (0..4).map(|m| chi.get(m, m).re).collect::<Vec<f64>>(),
        "psd_distance": psd_distance,
    });
    Ok(t)
}

fn run_gate_check(p: &GateCheckParams) -> Result<Tables, RunError> {
    let seq = p.sequence.build();
    let compiled = compile_sequence(&seq).map_err(numeric)?;
    let target = standard_gate::<f64>(p.target);
    if compiled.dim() != target.dim() {
        return Err(RunError::Validation(format!(
            "sequence dimension {} does not match target dimension {}",
            compiled.dim(),
            target.dim()
        )));
    }
    let fidelity = gate_fidelity(&compiled, &target).map_err(numeric)?;
    let pass = fidelity >= p.min_fidelity;
    let doc = json!({
        "fidelity": fidelity,
        "min_fidelity": p.min_fidelity,
        "pass": pass,
        "n_qubits": seq.n_qubits,
        "n_elements": seq.elements.len(),
    });
    let mut t = Tables::new();
    if !pass {
        t.warn(format!("fidelity {fidelity} is below the threshold {}", p.min_fidelity));
    }
    t.add("gate_check", "gate_check.json", serde_json::to_string_pretty(&doc).expect("gate json") + "\n");
    t.summary = doc;
    Ok(t)
}
