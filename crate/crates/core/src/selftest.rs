//! Exact-identity checks over the public API: spin-operator evolution rules,
//! pulse-sequence compilation targets, schedule geometry, line counting, and
//! Bessel behavior. Shared by the CLI `selftest` command and the test suite.

use crate::decoherence::{dd_schedule, DdKind};
use crate::gates::{
    cnot_nmr_sequence, compile_sequence, coupling_propagator, gate_fidelity, hadamard_sequence,
    hahn_echo_sequence, rotation_single, standard_gate, transition_lines, StandardGate,
    WeakCouplingHamiltonian,
};
use crate::numerics::bessel_j0;
use crate::operator::Operator;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &'static str, dev: f64, tol: f64) -> Self {
        Self { name, passed: dev <= tol, detail: format!("max deviation {dev:.3e} (tol {tol:.0e})") }
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

type Op = Operator<f64>;

/// Largest elementwise gap between `actual` and a real combination of basis
/// operators.
fn combo_residual(actual: &Op, terms: &[(f64, &Op)]) -> f64 {
    let mut pred = Operator::zeros(actual.dim());
    for (c, op) in terms {
        pred = &pred + &op.scaled_re(*c);
    }
    actual.max_abs_diff(&pred)
}

fn rf_rotation_rules() -> CheckResult {
    let ix = Op::spin_x();
    let iy = Op::spin_y();
    let iz = Op::spin_z();
    let mut worst = 0.0f64;
    for theta in [0.3f64, 1.1, 2.7] {
        let ux = rotation_single([1.0, 0.0, 0.0], theta).unwrap();
        let (c, s) = (theta.cos(), theta.sin());
        for (op, terms) in [
            (&ix, vec![(1.0, &ix)]),
            (&iy, vec![(c, &iy), (s, &iz)]),
            (&iz, vec![(c, &iz), (-s, &iy)]),
        ] {
            worst = worst.max(combo_residual(&op.conjugated_by(&ux), &terms));
        }
        let uy = rotation_single([0.0, 1.0, 0.0], theta).unwrap();
        for (op, terms) in [
            (&ix, vec![(c, &ix), (-s, &iz)]),
            (&iy, vec![(1.0, &iy)]),
            (&iz, vec![(c, &iz), (s, &ix)]),
        ] {
            worst = worst.max(combo_residual(&op.conjugated_by(&uy), &terms));
        }
    }
    CheckResult::bound("rf-rotation-rules", worst, 1e-10)
}

fn chemical_shift_rules() -> CheckResult {
    let ix = Op::spin_x();
    let iy = Op::spin_y();
    let iz = Op::spin_z();
    let nu_hz = 83.0;
    let h = WeakCouplingHamiltonian { offsets_hz: vec![nu_hz], couplings_hz: vec![] }
        .matrix()
        .unwrap();
    let mut worst = 0.0f64;
    for t in [1.3e-3, 4.7e-3] {
        let u = h.matexp_hermitian(t).unwrap();
        let angle = 2.0 * std::f64::consts::PI * nu_hz * t;
        let (c, s) = (angle.cos(), angle.sin());
        for (op, terms) in [
            (&iz, vec![(1.0, &iz)]),
            (&ix, vec![(c, &ix), (s, &iy)]),
            (&iy, vec![(c, &iy), (-s, &ix)]),
        ] {
            worst = worst.max(combo_residual(&op.conjugated_by(&u), &terms));
        }
    }
    CheckResult::bound("chemical-shift-rules", worst, 1e-10)
}

fn zz_coupling_table() -> CheckResult {
    let embed = |op: &Op, at: usize| Op::embed(op, at, 2).unwrap();
    let ix = embed(&Op::spin_x(), 0);
    let iy = embed(&Op::spin_y(), 0);
    let iz = embed(&Op::spin_z(), 0);
    let sz = embed(&Op::spin_z(), 1);
    let ixsz2 = ix.matmul(&sz).scaled_re(2.0);
    let iysz2 = iy.matmul(&sz).scaled_re(2.0);
    let izsz2 = iz.matmul(&sz).scaled_re(2.0);
    let j_hz = 209.4;
    let mut worst = 0.0f64;
    for t in [0.9e-3, 2.4e-3] {
        let u = coupling_propagator(j_hz, t);
        let theta = std::f64::consts::PI * j_hz * t;
        let (c, s) = (theta.cos(), theta.sin());
        for (op, terms) in [
            (&ix, vec![(c, &ix), (s, &iysz2)]),
            (&iy, vec![(c, &iy), (-s, &ixsz2)]),
            (&iz, vec![(1.0, &iz)]),
            (&ixsz2, vec![(c, &ixsz2), (s, &iy)]),
            (&iysz2, vec![(c, &iysz2), (-s, &ix)]),
            (&izsz2, vec![(1.0, &izsz2)]),
        ] {
            worst = worst.max(combo_residual(&op.conjugated_by(&u), &terms));
        }
    }
    CheckResult::bound("zz-coupling-table", worst, 1e-10)
}

fn cnot_sequence_fidelity() -> CheckResult {
    let compiled = compile_sequence(&cnot_nmr_sequence::<f64>(209.4)).unwrap();
    let f = gate_fidelity(&compiled, &standard_gate(StandardGate::Cnot)).unwrap();
    CheckResult::bound("cnot-sequence-fidelity", 1.0 - f, 1e-9)
}

fn hadamard_composition() -> CheckResult {
    let compiled = compile_sequence(&hadamard_sequence::<f64>(0, 1)).unwrap();
    let f = gate_fidelity(&compiled, &standard_gate(StandardGate::H)).unwrap();
    CheckResult::bound("hadamard-composition", 1.0 - f, 1e-9)
}

fn hahn_echo_refocus() -> CheckResult {
    let h = WeakCouplingHamiltonian { offsets_hz: vec![37.3], couplings_hz: vec![] };
    let echo = compile_sequence(&hahn_echo_sequence(8.5e-3, h, 0)).unwrap();
    let bare_pi = rotation_single([1.0, 0.0, 0.0], std::f64::consts::PI).unwrap();
    let f = gate_fidelity(&echo, &bare_pi).unwrap();
    CheckResult::bound("hahn-echo-refocus", 1.0 - f, 1e-9)
}

fn udd_single_pulse_midpoint() -> CheckResult {
    let t_c = 22.4e-3;
    let udd = dd_schedule::<f64>(DdKind::Udd, 1, t_c).unwrap();
    let dev = (udd.times_s[0] - t_c / 2.0).abs();
    CheckResult::bound("udd-single-pulse-midpoint", dev, 1e-15)
}

fn transition_line_count() -> CheckResult {
    let mut detail = String::new();
    let mut passed = true;

    let one = transition_lines::<f64>(&[312.0], &[]);
    passed &= one.len() == 1 && (one[0].frequency_hz - 312.0).abs() < 1e-12;

    let two = transition_lines(&[100.0, -220.0], &[(0, 1, 8.0)]);
    let mut freqs: Vec<f64> = two.iter().map(|l| l.frequency_hz).collect();
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let want = [-224.0, -216.0, 96.0, 104.0];
    passed &= two.len() == 4
        && freqs.iter().zip(&want).all(|(got, want)| (got - want).abs() < 1e-12);

    for n in [3usize, 4] {
        let offsets: Vec<f64> = (0..n).map(|i| 100.0 * i as f64).collect();
        let mut couplings = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                couplings.push((i, j, 3.0 + (i * n + j) as f64));
            }
        }
        let lines = transition_lines(&offsets, &couplings);
        passed &= lines.len() == n * (1 << (n - 1));
        let _ = std::fmt::Write::write_fmt(
            &mut detail,
            format_args!("n={n}: {} lines; ", lines.len()),
        );
    }
    CheckResult { name: "transition-line-count", passed, detail }
}

fn bessel_j0_identities() -> CheckResult {
    let mut worst = 0.0f64;
    for zero in [2.404825557695773f64, 5.520078110286311] {
        worst = worst.max(bessel_j0(zero).abs());
    }
    for x in [0.3f64, 1.7, 9.2] {
        worst = worst.max((bessel_j0(-x) - bessel_j0(x)).abs());
    }
    worst = worst.max((bessel_j0(0.0f64) - 1.0).abs());
    CheckResult::bound("bessel-j0-identities", worst, 1e-10)
}

/// Run the whole identity suite; every check is deterministic and fast.
pub fn run_selftests() -> Vec<CheckResult> {
    vec![
        rf_rotation_rules(),
        chemical_shift_rules(),
        zz_coupling_table(),
        cnot_sequence_fidelity(),
        hadamard_composition(),
        hahn_echo_refocus(),
        udd_single_pulse_midpoint(),
        transition_line_count(),
        bessel_j0_identities(),
    ]
}
