//! End-to-end acceptance gates. Each test prints a single line
//! `ACCEPT cNN <name>: PASS|FAIL (<detail>)` and then asserts, so the
//! verdict for every gate is visible with `cargo test --test acceptance
//! -- --nocapture` and a red test pinpoints which gate failed.

use spinlab_core::decoherence::{
    dd_schedule, ensemble_coherence, fit_t2, run_dd_under_kicks, superop_series, AngleMode,
    CoherenceSeries, DdKind, KickSchedule, PhaseMode, SystemEnvModel,
};
use spinlab_core::dmf::{
    dmf_sweep, prepared_state, simulate_dmf, Boundary, DriveParams, SweepConfig,
};
use spinlab_core::gates::rotation_single;
use spinlab_core::grape::{
    ensemble_fidelity, grape_gradient, grape_optimize, rf_ensemble, ControlPulse, EnsembleMember,
    GrapeOptions, GrapeProblem,
};
use spinlab_core::rng::{derive_seed, stream};
use spinlab_core::selftest::run_selftests;
use spinlab_core::tomography::{noise_spectroscopy, qpt_single, qst_single, NoiseSource};
use spinlab_core::{Cx, Op64};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};
use std::fmt::Write as _;
use std::fs;
use std::process::Command;
use std::time::Instant;

/// Heteronuclear coupling (Hz) shared by the decoherence gates.
const J_HZ: f64 = 209.4;

/// First two zeros of the Bessel function J0.
const J0_ZERO_1: f64 = 2.404825557695773;
const J0_ZERO_2: f64 = 5.520078110286311;

fn accept(id: &str, name: &str, pass: bool, detail: &str) {
    println!("ACCEPT {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{id} {name}: {detail}");
}

#[test]
fn c01_sweep_tracks_closed_form_and_peaks() {
    let h0 = 5.0 * PI;
    let omegas: Vec<f64> = (0..=130).map(|k| 4.0 + 0.2 * k as f64).collect();
    let cfg = SweepConfig {
        h0,
        j_coupling: h0 / 20.0,
        n: 3,
        boundary: Boundary::Periodic,
        n_cycles: 30,
        slices: 11,
        t2: 10.0,
        ensemble: vec![EnsembleMember { scale: 1.0, weight: 1.0 }],
        omegas,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let points = pool.install(|| dmf_sweep(&cfg)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let max_dev = points.iter().map(|p| (p.q_sim - p.q3_closed).abs()).fold(0.0f64, f64::max);

    let mut peaks = String::new();
    let mut peaks_ok = true;
    for zero in [J0_ZERO_2, J0_ZERO_1] {
        let predicted = 2.0 * h0 / zero;
        let best = points
            .iter()
            .filter(|p| (p.omega - predicted).abs() <= 2.0)
            .max_by(|a, b| a.q_sim.partial_cmp(&b.q_sim).unwrap())
            .unwrap();
        let off = (best.omega - predicted).abs();
        peaks_ok &= off <= 0.4;
        write!(peaks, ", peak {predicted:.2}->{:.1} (off {off:.2})", best.omega).unwrap();
    }

    let pass = max_dev <= 0.08 && peaks_ok && elapsed < 120.0;
    accept(
        "c01",
        "sweep-closed-form",
        pass,
        &format!("max|Q_sim-Q3|={max_dev:.4} over {} points{peaks}, {elapsed:.1}s single-thread", points.len()),
    );
}

#[test]
fn c02_freezing_is_preparation_independent() {
    let h0 = 5.0 * PI;
    let omega = 2.0 * h0 / J0_ZERO_2;
    let p = DriveParams::new(h0, h0 / 20.0, omega, 3, Boundary::Periodic).unwrap();
    let mut detail = String::new();
    let mut pass = true;
    for theta in [FRAC_PI_2, FRAC_PI_6] {
        let rho0 = prepared_state(3, theta).unwrap();
        let series = simulate_dmf(&p, &rho0, 30, 11).unwrap();
        let min =
            series.normalized().unwrap().values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        pass &= min >= 0.9;
        write!(detail, "theta={theta:.4}: min m_x/m_x(0)={min:.4}; ").unwrap();
    }
    accept("c02", "freezing-universality", pass, detail.trim_end_matches("; "));
}

#[test]
fn c03_grape_reaches_target_and_gradient_matches_fd() {
    // Pi/2 transfer |0><0| -> R_x(pi/2) |0><0| R_x(pi/2)^dag under the
    // five-point renormalized rf-inhomogeneity ensemble.
    let rho0 = Op64::from_diag(&[Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)]);
    let u = rotation_single([1.0, 0.0, 0.0], FRAC_PI_2).unwrap();
    let target = rho0.conjugated_by(&u);
    let problem = GrapeProblem::new(
        Op64::zeros(2),
        vec![Op64::spin_x(), Op64::spin_y()],
        rho0.clone(),
        target.clone(),
        rf_ensemble(),
    )
    .unwrap();
    let init = ControlPulse::random(2, 20, 0.05, 1.0, &mut stream(11, 0)).unwrap();
    let out = grape_optimize(&problem, init, &GrapeOptions::default()).unwrap();
    let iters = out.history.len() - 1;
    let phi = *out.history.last().unwrap();
    let transfer_ok = out.reached_target && phi >= 0.99 && iters <= 500;

    // Exact gradient against central finite differences in the regime where
    // the piecewise-constant propagators are effectively first order:
    // dt * ||H|| <= 1e-3 * (0.15 + 0.25 + 0.25) = 6.5e-4 per step.
    let fd_problem = GrapeProblem::new(
        Op64::spin_z().scaled_re(0.3),
        vec![Op64::spin_x(), Op64::spin_y()],
        rho0,
        target,
        vec![EnsembleMember { scale: 1.0, weight: 1.0 }],
    )
    .unwrap();
    let dt = 1e-3;
    let pulse = ControlPulse::random(2, 8, dt, 0.5, &mut stream(12, 0)).unwrap();
    let grad = grape_gradient(&fd_problem, &pulse, 1.0).unwrap();
    let eps = 1e-6;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for k in 0..pulse.n_controls() {
        for j in 0..pulse.n_steps() {
            let mut plus = pulse.amplitudes().to_vec();
            plus[k][j] += eps;
            let mut minus = pulse.amplitudes().to_vec();
            minus[k][j] -= eps;
            let fp = ensemble_fidelity(&fd_problem, &ControlPulse::new(dt, plus).unwrap()).unwrap();
            let fm =
                ensemble_fidelity(&fd_problem, &ControlPulse::new(dt, minus).unwrap()).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            num += (grad[k][j] - fd).powi(2);
            den += fd * fd;
        }
    }
    let rel = (num / den).sqrt();
    let grad_ok = rel <= 1e-3;

    accept(
        "c03",
        "grape-transfer-and-gradient",
        transfer_ok && grad_ok,
        &format!("phi={phi:.5} in {iters} iters (target 0.99/500), grad rel err={rel:.2e}"),
    );
}

#[test]
fn c04_kick_ensemble_matches_transfer_matrix() {
    let model = SystemEnvModel::standard(J_HZ);
    let t_c = 6.0 / J_HZ;
    let cycles = 4;
    let m = 5000;
    let mut pass = true;
    let mut worst = 0.0f64;
    for (i, (gamma, alpha_deg)) in
        [(10.0, 1.0), (10.0, 2.0), (25.0, 1.0), (25.0, 2.0)].into_iter().enumerate()
    {
        let sched = KickSchedule::new(
            gamma,
            alpha_deg * PI / 180.0,
            AngleMode::Symmetric,
            PhaseMode::FixedY,
            t_c,
            derive_seed(4242, i as u64),
        )
        .unwrap();
        let series = ensemble_coherence(&model, &sched, m, cycles).unwrap();
        let oracle = superop_series(&sched, J_HZ, model.rho_e0(), cycles, sched.k()).unwrap();
        assert_eq!(series.points.len(), oracle.len());
        for (pt, d) in series.points.iter().zip(&oracle) {
            let predicted = 0.5 * d.norm();
            let sigma = (0.5 * pt.mx_stderr).max(1e-4);
            let dev = (pt.coherence.norm() - predicted).abs() / sigma;
            worst = worst.max(dev);
            pass &= dev <= 3.0;
        }
    }
    accept(
        "c04",
        "kick-vs-transfer-matrix",
        pass,
        &format!(
            "worst dev {worst:.2} sigma over 4 (gamma, alpha) combos x {} cycles, M={m}",
            cycles + 1
        ),
    );
}

#[test]
fn c05_decay_rate_rises_with_rate_and_angle() {
    let model = SystemEnvModel::standard(J_HZ);
    let t_c = 6.0 / J_HZ;
    let rate = |gamma: f64, alpha_deg: f64, idx: u64| -> f64 {
        let sched = KickSchedule::new(
            gamma,
            alpha_deg * PI / 180.0,
            AngleMode::Symmetric,
            PhaseMode::FixedY,
            t_c,
            derive_seed(4343, idx),
        )
        .unwrap();
        let series = ensemble_coherence(&model, &sched, 400, 12).unwrap();
        1.0 / fit_t2(&series.mx_samples()).unwrap()
    };
    let r5 = rate(5.0, 1.0, 0);
    let r10 = rate(10.0, 1.0, 1);
    let r25 = rate(25.0, 1.0, 2);
    let r25_wide = rate(25.0, 2.0, 3);
    let pass = r5 < r10 && r10 < r25 && r25 < r25_wide;
    accept(
        "c05",
        "decay-rate-monotonicity",
        pass,
        &format!(
            "1/T2 [1/s]: gamma 5/10/25 @1deg = {r5:.2}/{r10:.2}/{r25:.2}, 25 @2deg = {r25_wide:.2}"
        ),
    );
}

fn endpoint(series: &CoherenceSeries<f64>) -> (f64, f64) {
    let p = series.points.last().unwrap();
    (p.coherence.norm(), p.mx_stderr)
}

#[test]
fn c06_dd_restores_coherence_in_order() {
    let model = SystemEnvModel::standard(J_HZ);
    let t_c = 22.4e-3;
    let cycles = 10;
    let m = 5000;
    let sched = KickSchedule::new(
        25.0,
        PI / 180.0,
        AngleMode::Symmetric,
        PhaseMode::FixedY,
        t_c,
        derive_seed(4444, 1),
    )
    .unwrap();
    let free = ensemble_coherence(&model, &sched, m, cycles).unwrap();
    let cpmg = run_dd_under_kicks(
        &model,
        &sched,
        &dd_schedule(DdKind::Cpmg, 7, t_c).unwrap(),
        cycles,
        m,
    )
    .unwrap();
    let udd =
        run_dd_under_kicks(&model, &sched, &dd_schedule(DdKind::Udd, 7, t_c).unwrap(), cycles, m)
            .unwrap();
    let (e_free, se_free) = endpoint(&free);
    let (e_udd, se_udd) = endpoint(&udd);
    let (e_cpmg, se_cpmg) = endpoint(&cpmg);
    // Endpoint gap must clear three combined sigmas, with the half factor
    // mapping an m_x standard error onto the coherence magnitude scale.
    let gap_cu = e_cpmg - e_udd;
    let sig_cu = 0.5 * (se_cpmg + se_udd);
    let gap_uf = e_udd - e_free;
    let sig_uf = 0.5 * (se_udd + se_free);
    let pass = gap_cu > 3.0 * sig_cu && gap_uf > 3.0 * sig_uf;
    accept(
        "c06",
        "dd-ordering",
        pass,
        &format!(
            "endpoint |coh| cpmg={e_cpmg:.4} > udd={e_udd:.4} > free={e_free:.4}; \
             gaps {gap_cu:.4} vs 3sig {:.4}, {gap_uf:.4} vs 3sig {:.4}",
            3.0 * sig_cu,
            3.0 * sig_uf
        ),
    );
}

#[test]
fn c07_tomography_identities() {
    // Chi matrices in the fixed operator basis [E, X, -iY, Z].
    let tol = 1e-8;
    let mut worst = 0.0f64;
    let mut check = |chi: &spinlab_core::Chi64, want: &dyn Fn(usize, usize) -> f64| {
        for m in 0..4 {
            for n in 0..4 {
                worst = worst.max((chi.get(m, n) - Cx::new(want(m, n), 0.0)).norm());
            }
        }
    };
    let chi_id = qpt_single(|rho: &Op64| rho.clone()).unwrap();
    check(&chi_id, &|m, n| if (m, n) == (0, 0) { 1.0 } else { 0.0 });

    let x = Op64::pauli_x();
    let chi_x = qpt_single(move |rho: &Op64| rho.conjugated_by(&x)).unwrap();
    check(&chi_x, &|m, n| if (m, n) == (1, 1) { 1.0 } else { 0.0 });

    let z = Op64::pauli_z();
    let chi_deph = qpt_single(move |rho: &Op64| {
        &rho.scaled_re(0.5) + &rho.conjugated_by(&z).scaled_re(0.5)
    })
    .unwrap();
    check(&chi_deph, &|m, n| if (m, n) == (0, 0) || (m, n) == (3, 3) { 0.5 } else { 0.0 });

    let mut qst_worst = 0.0f64;
    for (x, y, z) in
        [(0.3f64, -0.5f64, 0.2f64), (0.6, 0.6, -0.3), (0.0, 0.0, 0.0), (0.0, 1.0, 0.0)]
    {
        let out = qst_single(x, y, z).unwrap();
        assert!(!out.projected);
        let r = out.rho.bloch().unwrap();
        qst_worst = qst_worst.max((r.x - x).abs().max((r.y - y).abs()).max((r.z - z).abs()));
    }

    let pass = worst <= tol && qst_worst <= 1e-10;
    accept(
        "c07",
        "tomography-identities",
        pass,
        &format!("max chi dev={worst:.1e} (tol 1e-8), qst round trip dev={qst_worst:.1e} (tol 1e-10)"),
    );
}

#[test]
fn c08_noise_spectroscopy_flat_and_kick_baths() {
    // A constant-T2 bath must read back as a flat spectrum pi^2/(4 T2).
    let t2 = 0.12;
    let constant = move |_omega: f64| t2;
    let taus: Vec<f64> = [2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0].map(|t| t * 1e-3).into();
    let flat = noise_spectroscopy(&NoiseSource::Synthetic(&constant), &taus, 2, 4, 1).unwrap();
    let expect = PI * PI / (4.0 * t2);
    let mut flat_dev = 0.0f64;
    for p in &flat.points {
        flat_dev = flat_dev.max((p.s_per_s - expect).abs() / expect);
    }
    let flat_ok =
        flat.skipped.is_empty() && flat.points.len() == taus.len() && flat_dev <= 0.02;

    // The kick bath on top of the same intrinsic decay must never read below
    // the kick-free baseline at any probed frequency.
    let mut model = SystemEnvModel::standard(J_HZ);
    model.intrinsic_t2_s = Some(t2);
    let kick_taus: Vec<f64> = [1.5, 2.0, 3.0, 4.0, 6.0].map(|t| t * 1e-3).into();
    let spectrum_for = |alpha_deg: f64| {
        let sched = KickSchedule::new(
            25.0,
            alpha_deg * PI / 180.0,
            AngleMode::Symmetric,
            PhaseMode::FixedY,
            1e-3,
            derive_seed(4545, 1),
        )
        .unwrap();
        noise_spectroscopy(
            &NoiseSource::Kicks { model: &model, schedule: &sched },
            &kick_taus,
            4,
            8,
            400,
        )
        .unwrap()
    };
    let kicked = spectrum_for(2.0);
    let baseline = spectrum_for(0.0);
    let mut kick_ok = kicked.skipped.is_empty()
        && baseline.skipped.is_empty()
        && kicked.points.len() == baseline.points.len();
    let mut min_ratio = f64::INFINITY;
    if kick_ok {
        for (k, b) in kicked.points.iter().zip(&baseline.points) {
            assert!((k.omega_rad_s - b.omega_rad_s).abs() < 1e-9);
            kick_ok &= k.s_per_s >= b.s_per_s;
            min_ratio = min_ratio.min(k.s_per_s / b.s_per_s);
        }
    }

    accept(
        "c08",
        "noise-spectroscopy",
        flat_ok && kick_ok,
        &format!(
            "flat bath max rel dev={flat_dev:.4} (tol 0.02); kick/baseline S ratio >= {min_ratio:.2} at {} frequencies",
            kicked.points.len()
        ),
    );
}

#[test]
fn c09_exact_identity_suite() {
    let start = Instant::now();
    let results = run_selftests();
    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let pass = failed.is_empty() && elapsed < 30.0;
    let detail = if failed.is_empty() {
        format!("{} checks in {elapsed:.1}s (limit 30s)", results.len())
    } else {
        format!("{} checks in {elapsed:.1}s, failed: {failed:?}", results.len())
    };
    accept("c09", "exact-identities", pass, &detail);
}

#[test]
fn c10_outputs_are_bit_reproducible() {
    let bin = env!("CARGO_BIN_EXE_spinlab");
    let root = tempfile::tempdir().unwrap();
    let sweep_cfg = serde_json::json!({
        "kind": "dmf-sweep", "seed": 7, "output_dir": "",
        "h0_rad_s": 15.707963267948966, "j_rad_s": 0.7853981633974483,
        "omega_start_rad_s": 5.0, "omega_stop_rad_s": 7.0, "omega_step_rad_s": 0.5,
        "n_spins": 2, "boundary": "open", "n_cycles": 8, "slices": 7,
        "noise_t2_s": 5.0, "ensemble": "rf-renormalized"
    });
    let kick_cfg = serde_json::json!({
        "kind": "kick-decay", "seed": 9, "output_dir": "",
        "j_hz": J_HZ, "gamma_kicks_per_ms": 25.0, "alpha_deg": 2.0,
        "angle_mode": "symmetric", "phase_mode": "fixed-y",
        "tc_ms": 10.0, "cycles": 3, "m_realizations": 200
    });
    let mut pass = true;
    let mut detail = String::new();
    for (label, template, tables) in [
        ("sweep", sweep_cfg, vec!["sweep.csv"]),
        ("kicks", kick_cfg, vec!["decay.csv", "baseline.csv"]),
    ] {
        let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
        for (i, threads) in [None, None, Some(1usize), Some(2)].into_iter().enumerate() {
            let out_dir = root.path().join(format!("{label}-{i}"));
            let mut cfg = template.clone();
            cfg["output_dir"] = serde_json::json!(out_dir.to_str().unwrap());
            let cfg_path = root.path().join(format!("{label}-{i}.json"));
            fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
            let mut cmd = Command::new(bin);
            cmd.arg("run").arg(&cfg_path);
            if let Some(t) = threads {
                cmd.args(["--threads", &t.to_string()]);
            }
            let ok = cmd.status().map(|s| s.success()).unwrap_or(false);
            if !ok {
                pass = false;
                write!(detail, "{label} run {i} failed; ").unwrap();
                continue;
            }
            outputs.push(tables.iter().map(|t| fs::read(out_dir.join(t)).unwrap()).collect());
        }
        let identical = outputs.len() == 4 && outputs.iter().all(|o| *o == outputs[0]);
        pass &= identical;
        write!(
            detail,
            "{label} {:?} {}; ",
            tables,
            if identical { "identical across reruns and --threads 1/2" } else { "DIFFER" }
        )
        .unwrap();
    }
    accept("c10", "bit-reproducible-outputs", pass, detail.trim_end_matches("; "));
}
