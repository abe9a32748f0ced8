//! Strict JSON experiment configs: a top-level `kind` tag picks the
//! experiment, the remaining keys are kind-specific, unknown keys are
//! rejected, and every physical quantity carries its unit in the key name.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use spinlab_core::decoherence::{AngleMode, KickSchedule, PhaseMode, SystemEnvModel};
use spinlab_core::dmf::Boundary;
use spinlab_core::gates::{
    cnot_nmr_sequence, hadamard_sequence, rotation_single, PulseSequence, StandardGate,
};
use spinlab_core::grape::{rf_ensemble, EnsembleMember};
use spinlab_core::Op64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleChoice {
    /// Five-point RF-amplitude distribution with renormalized weights.
    RfRenormalized,
    /// Single member at nominal amplitude.
    Single,
}

impl EnsembleChoice {
    pub fn members(self) -> Vec<EnsembleMember<f64>> {
        match self {
            Self::RfRenormalized => rf_ensemble(),
            Self::Single => vec![EnsembleMember { scale: 1.0, weight: 1.0 }],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmfSweepParams {
    pub h0_rad_s: f64,
    pub j_rad_s: f64,
    pub omega_start_rad_s: f64,
    pub omega_stop_rad_s: f64,
    pub omega_step_rad_s: f64,
    pub n_spins: usize,
    pub boundary: Boundary,
    pub n_cycles: usize,
    pub slices: usize,
    pub noise_t2_s: f64,
    pub ensemble: EnsembleChoice,
}

impl DmfSweepParams {
    pub fn omegas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let w = self.omega_start_rad_s + k as f64 * self.omega_step_rad_s;
            if w > self.omega_stop_rad_s + 1e-9 * self.omega_step_rad_s.abs() {
                break;
            }
            out.push(w);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmfSeriesParams {
    pub h0_rad_s: f64,
    pub j_rad_s: f64,
    pub omega_rad_s: f64,
    pub n_spins: usize,
    pub boundary: Boundary,
    pub theta_rad: f64,
    pub n_cycles: usize,
    pub slices: usize,
    pub noise_t2_s: f64,
    pub ensemble: EnsembleChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlAxis {
    X,
    Y,
    Z,
}

impl ControlAxis {
    pub fn generator(self) -> Op64 {
        match self {
            Self::X => Op64::spin_x(),
            Self::Y => Op64::spin_y(),
            Self::Z => Op64::spin_z(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrapeOptParams {
    /// Target rotation applied to |0><0| to form the transfer target.
    pub axis: [f64; 3],
    pub angle_rad: f64,
    pub controls: Vec<ControlAxis>,
    pub n_steps: usize,
    pub dt_s: f64,
    /// Amplitude bound for the random initial pulse.
    pub u_max: f64,
    pub max_iter: usize,
    pub target_phi: f64,
    pub ensemble: EnsembleChoice,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickDecayParams {
    pub j_hz: f64,
    pub gamma_kicks_per_ms: f64,
    pub alpha_deg: f64,
    pub angle_mode: AngleMode,
    pub phase_mode: PhaseMode,
    pub tc_ms: f64,
    pub cycles: usize,
    pub m_realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_t2_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdCompareParams {
    pub j_hz: f64,
    pub gamma_kicks_per_ms: f64,
    pub alpha_deg: f64,
    pub angle_mode: AngleMode,
    pub phase_mode: PhaseMode,
    pub tc_ms: f64,
    pub n_pulses: usize,
    pub cycles: usize,
    pub m_realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_t2_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KickSourceParams {
    pub j_hz: f64,
    pub gamma_kicks_per_ms: f64,
    pub alpha_deg: f64,
    pub angle_mode: AngleMode,
    pub phase_mode: PhaseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic_t2_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSourceParams {
    pub t2_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NsSource {
    Kicks(KickSourceParams),
    SyntheticConstant(SyntheticSourceParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsScanParams {
    pub source: NsSource,
    pub taus_ms: Vec<f64>,
    pub n_pulses: usize,
    pub cycles: usize,
    pub m_realizations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationChannelParams {
    pub axis: [f64; 3],
    pub angle_rad: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingParams {
    /// rho -> (1-w) rho + w Z rho Z; w = 1/2 is complete dephasing.
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSpec {
    Identity,
    XGate,
    YGate,
    ZGate,
    Hadamard,
    Rotation(RotationChannelParams),
    Dephasing(DephasingParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QptRunParams {
    pub channel: ChannelSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnotNmrParams {
    pub j_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HadamardSeqParams {
    pub target: usize,
    pub n_qubits: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceSpec {
    CnotNmr(CnotNmrParams),
    Hadamard(HadamardSeqParams),
    Custom(PulseSequence<f64>),
}

impl SequenceSpec {
    pub fn build(&self) -> PulseSequence<f64> {
        match self {
            Self::CnotNmr(p) => cnot_nmr_sequence(p.j_hz),
            Self::Hadamard(p) => hadamard_sequence(p.target, p.n_qubits),
            Self::Custom(seq) => seq.clone(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        match self {
            Self::CnotNmr(_) => 2,
            Self::Hadamard(p) => p.n_qubits,
            Self::Custom(seq) => seq.n_qubits,
        }
    }
}

fn default_min_fidelity() -> f64 {
    1.0 - 1e-9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateCheckParams {
    pub sequence: SequenceSpec,
    pub target: StandardGate,
    #[serde(default = "default_min_fidelity")]
    pub min_fidelity: f64,
}

#[derive(Debug, Clone)]
pub enum Experiment {
    DmfSweep(DmfSweepParams),
    DmfSeries(DmfSeriesParams),
    GrapeOpt(GrapeOptParams),
    KickDecay(KickDecayParams),
    DdCompare(DdCompareParams),
    NsScan(NsScanParams),
    QptRun(QptRunParams),
    GateCheck(GateCheckParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DmfSweep(_) => "dmf-sweep",
            Self::DmfSeries(_) => "dmf-series",
            Self::GrapeOpt(_) => "grape-opt",
            Self::KickDecay(_) => "kick-decay",
            Self::DdCompare(_) => "dd-compare",
            Self::NsScan(_) => "ns-scan",
            Self::QptRun(_) => "qpt-run",
            Self::GateCheck(_) => "gate-check",
        }
    }

    fn params_value(&self) -> Value {
        match self {
            Self::DmfSweep(p) => serde_json::to_value(p),
            Self::DmfSeries(p) => serde_json::to_value(p),
            Self::GrapeOpt(p) => serde_json::to_value(p),
            Self::KickDecay(p) => serde_json::to_value(p),
            Self::DdCompare(p) => serde_json::to_value(p),
            Self::NsScan(p) => serde_json::to_value(p),
            Self::QptRun(p) => serde_json::to_value(p),
            Self::GateCheck(p) => serde_json::to_value(p),
        }
        .expect("experiment params serialize")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub experiment: Experiment,
}

impl ExperimentConfig {
    /// The config as it would be written to disk; parsing this back yields an
    /// equivalent config.
    pub fn echo(&self) -> Value {
        let mut map = Map::new();
        map.insert("kind".into(), Value::String(self.experiment.kind().into()));
        map.insert("seed".into(), Value::from(self.seed));
        map.insert(
            "output_dir".into(),
            Value::String(self.output_dir.to_string_lossy().into_owned()),
        );
        if let Value::Object(params) = self.experiment.params_value() {
            for (k, v) in params {
                map.insert(k, v);
            }
        }
        Value::Object(map)
    }
}

fn field<T: serde::de::DeserializeOwned>(
    map: &mut Map<String, Value>,
    key: &str,
) -> Result<T, String> {
    let v = map.remove(key).ok_or_else(|| format!("missing required key `{key}`"))?;
    serde_json::from_value(v).map_err(|e| format!("key `{key}`: {e}"))
}

/// Parse and fully validate a config document. Unknown keys anywhere are
/// errors; so are missing keys, wrong types, and out-of-range values.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let doc: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(mut map) = doc else {
        return Err("config must be a JSON object".into());
    };
    let kind: String = field(&mut map, "kind")?;
    let seed: u64 = field(&mut map, "seed")?;
    let output_dir: String = field(&mut map, "output_dir")?;
    let rest = Value::Object(map);
    let detail = |e: serde_json::Error| format!("config for kind `{kind}`: {e}");
    let experiment = match kind.as_str() {
        "dmf-sweep" => Experiment::DmfSweep(serde_json::from_value(rest).map_err(detail)?),
        "dmf-series" => Experiment::DmfSeries(serde_json::from_value(rest).map_err(detail)?),
        "grape-opt" => Experiment::GrapeOpt(serde_json::from_value(rest).map_err(detail)?),
        "kick-decay" => Experiment::KickDecay(serde_json::from_value(rest).map_err(detail)?),
        "dd-compare" => Experiment::DdCompare(serde_json::from_value(rest).map_err(detail)?),
        "ns-scan" => Experiment::NsScan(serde_json::from_value(rest).map_err(detail)?),
        "qpt-run" => Experiment::QptRun(serde_json::from_value(rest).map_err(detail)?),
        "gate-check" => Experiment::GateCheck(serde_json::from_value(rest).map_err(detail)?),
        other => {
            return Err(format!(
                "unknown experiment kind `{other}` (expected one of dmf-sweep, dmf-series, \
                 grape-opt, kick-decay, dd-compare, ns-scan, qpt-run, gate-check)"
            ))
        }
    };
    let config =
        ExperimentConfig { seed, output_dir: PathBuf::from(output_dir), experiment };
    validate(&config)?;
    Ok(config)
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("`{name}` must be positive and finite, got {v}"))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<(), String> {
    if v >= min {
        Ok(())
    } else {
        Err(format!("`{name}` must be at least {min}, got {v}"))
    }
}

fn check_kick_schedule(
    j_hz: f64,
    gamma_kicks_per_ms: f64,
    alpha_deg: f64,
    angle_mode: AngleMode,
    phase_mode: PhaseMode,
    tc_ms: f64,
    intrinsic_t2_ms: Option<f64>,
) -> Result<(), String> {
    positive("j_hz", j_hz)?;
    KickSchedule::new(
        gamma_kicks_per_ms,
        alpha_deg * PI / 180.0,
        angle_mode,
        phase_mode,
        tc_ms * 1e-3,
        0,
    )
    .map_err(|e| e.to_string())?;
    if let Some(t2) = intrinsic_t2_ms {
        positive("intrinsic_t2_ms", t2)?;
    }
    Ok(())
}

/// Semantic validation on top of the schema: ranges, grids, and anything the
/// core constructors would reject.
pub fn validate(config: &ExperimentConfig) -> Result<(), String> {
    use spinlab_core::dmf::DriveParams;
    match &config.experiment {
        Experiment::DmfSweep(p) => {
            positive("omega_step_rad_s", p.omega_step_rad_s)?;
            let omegas = p.omegas();
            if omegas.is_empty() {
                return Err("omega grid is empty".into());
            }
            DriveParams::new(p.h0_rad_s, p.j_rad_s, omegas[0], p.n_spins, p.boundary)
                .map_err(|e| e.to_string())?;
            positive("noise_t2_s", p.noise_t2_s)?;
            at_least("n_cycles", p.n_cycles, 1)?;
            at_least("slices", p.slices, 1)?;
        }
        Experiment::DmfSeries(p) => {
            DriveParams::new(p.h0_rad_s, p.j_rad_s, p.omega_rad_s, p.n_spins, p.boundary)
                .map_err(|e| e.to_string())?;
            if !p.theta_rad.is_finite() {
                return Err("`theta_rad` must be finite".into());
            }
            positive("noise_t2_s", p.noise_t2_s)?;
            at_least("n_cycles", p.n_cycles, 1)?;
            at_least("slices", p.slices, 1)?;
        }
        Experiment::GrapeOpt(p) => {
            rotation_single(p.axis, p.angle_rad).map_err(|e| e.to_string())?;
            if p.controls.is_empty() {
                return Err("`controls` must list at least one axis".into());
            }
            at_least("n_steps", p.n_steps, 1)?;
            positive("dt_s", p.dt_s)?;
            positive("u_max", p.u_max)?;
            at_least("max_iter", p.max_iter, 1)?;
            if !(p.target_phi > 0.0 && p.target_phi <= 1.0) {
                return Err(format!("`target_phi` must be in (0, 1], got {}", p.target_phi));
            }
        }
        Experiment::KickDecay(p) => {
            check_kick_schedule(
                p.j_hz,
                p.gamma_kicks_per_ms,
                p.alpha_deg,
                p.angle_mode,
                p.phase_mode,
                p.tc_ms,
                p.intrinsic_t2_ms,
            )?;
            at_least("cycles", p.cycles, 2)?;
            at_least("m_realizations", p.m_realizations, 1)?;
        }
        Experiment::DdCompare(p) => {
            check_kick_schedule(
                p.j_hz,
                p.gamma_kicks_per_ms,
                p.alpha_deg,
                p.angle_mode,
                p.phase_mode,
                p.tc_ms,
                p.intrinsic_t2_ms,
            )?;
            at_least("n_pulses", p.n_pulses, 1)?;
            at_least("cycles", p.cycles, 1)?;
            at_least("m_realizations", p.m_realizations, 1)?;
        }
        Experiment::NsScan(p) => {
            match &p.source {
                NsSource::Kicks(k) => check_kick_schedule(
                    k.j_hz,
                    k.gamma_kicks_per_ms,
                    k.alpha_deg,
                    k.angle_mode,
                    k.phase_mode,
                    // any positive stand-in; the scan replaces the cycle time per point
                    1.0,
                    k.intrinsic_t2_ms,
                )?,
                NsSource::SyntheticConstant(s) => positive("t2_ms", s.t2_ms)?,
            }
            if p.taus_ms.is_empty() {
                return Err("`taus_ms` must list at least one pulse interval".into());
            }
            for &tau in &p.taus_ms {
                positive("taus_ms entry", tau)?;
            }
            at_least("n_pulses", p.n_pulses, 1)?;
            at_least("cycles", p.cycles, 2)?;
            at_least("m_realizations", p.m_realizations, 1)?;
        }
        Experiment::QptRun(p) => match &p.channel {
            ChannelSpec::Rotation(r) => {
                rotation_single(r.axis, r.angle_rad).map_err(|e| e.to_string())?;
            }
            ChannelSpec::Dephasing(d) => {
                if !(0.0..=1.0).contains(&d.weight) {
                    return Err(format!(
                        "dephasing `weight` must be in [0, 1], got {}",
                        d.weight
                    ));
                }
            }
            _ => {}
        },
        Experiment::GateCheck(p) => {
            if !(p.min_fidelity > 0.0 && p.min_fidelity <= 1.0) {
                return Err(format!("`min_fidelity` must be in (0, 1], got {}", p.min_fidelity));
            }
            match &p.sequence {
                SequenceSpec::CnotNmr(c) => positive("j_hz", c.j_hz)?,
                SequenceSpec::Hadamard(h) => {
                    at_least("n_qubits", h.n_qubits, 1)?;
                    if h.target >= h.n_qubits {
                        return Err(format!(
                            "hadamard target {} out of range for {} qubits",
                            h.target, h.n_qubits
                        ));
                    }
                }
                SequenceSpec::Custom(seq) => {
                    if seq.n_qubits == 0 || seq.n_qubits > 4 {
                        return Err(format!(
                            "custom sequence must span 1..=4 qubits, got {}",
                            seq.n_qubits
                        ));
                    }
                }
            }
            let target_qubits = if p.target == StandardGate::Cnot { 2 } else { 1 };
            if p.sequence.n_qubits() != target_qubits {
                return Err(format!(
                    "sequence spans {} qubit(s) but the target gate acts on {}",
                    p.sequence.n_qubits(),
                    target_qubits
                ));
            }
        }
    }
    Ok(())
}

/// The heteronuclear model used by the kick experiments.
pub fn kick_model(j_hz: f64, intrinsic_t2_ms: Option<f64>) -> SystemEnvModel<f64> {
    let mut model = SystemEnvModel::standard(j_hz);
    model.intrinsic_t2_s = intrinsic_t2_ms.map(|ms| ms * 1e-3);
    model
}

/// Kick schedule from CLI units (ms, degrees) and a derived stream seed.
pub fn kick_schedule(
    gamma_kicks_per_ms: f64,
    alpha_deg: f64,
    angle_mode: AngleMode,
    phase_mode: PhaseMode,
    tc_ms: f64,
    seed: u64,
) -> Result<KickSchedule<f64>, String> {
    KickSchedule::new(
        gamma_kicks_per_ms,
        alpha_deg * PI / 180.0,
        angle_mode,
        phase_mode,
        tc_ms * 1e-3,
        seed,
    )
    .map_err(|e| e.to_string())
}
