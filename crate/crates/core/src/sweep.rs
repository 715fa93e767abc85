//! Orchestration of the reference numerical experiments: elementary-gate
//! fidelity maps over (θ, τ), gate/state error sweeps over ξ and ζ, and
//! deviation-trajectory extraction in the Bloch picture.
//!
//! Grid points are independent and run across a rayon pool; results are
//! merged in deterministic grid order.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    leakage, propagate_with, CouplingTable, DynamicsError, Engine, Method, SimulationConfig,
};
use crate::encoding::{DriveChannel, EncodingError, QutritEncoding};
use crate::gates::{
    decompose, walsh_hadamard, Decomposition, ElementaryRotation, ErrorKind, ErrorModel,
    GateError, GateMatrix, GateSequence, Ordering, StateVector,
};
use crate::gates::{gate_error_coefficient, state_error_coefficient};
use crate::metrics::{
    average_gate_fidelity, bloch_vector, density_from_state, deviation_trajectory,
    state_fidelity, BlochVector8, MetricsError,
};
use crate::pulses::{synthesize, PulseError, PulseSequence, SubpulseLabel, SynthesisOptions};
use crate::rotor::{solve_spectrum, BasisSet, MoleculeSpec, RotorError};

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep config: {0}")]
    Config(String),
    #[error(transparent)]
    Rotor(#[from] RotorError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    FidelityMap,
    AmplitudeSweep,
    PhaseSweep,
    Trajectory,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fidelity_map" => Some(Experiment::FidelityMap),
            "amplitude_sweep" => Some(Experiment::AmplitudeSweep),
            "phase_sweep" => Some(Experiment::PhaseSweep),
            "trajectory" => Some(Experiment::Trajectory),
            _ => None,
        }
    }

    pub fn error_kind(self) -> Option<ErrorKind> {
        match self {
            Experiment::AmplitudeSweep => Some(ErrorKind::Amplitude),
            Experiment::PhaseSweep => Some(ErrorKind::Phase),
            _ => None,
        }
    }
}

/// Named input states for state-fidelity columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputState {
    Zero,
    One,
    Two,
    /// (|0⟩ + e^{i2π/3}|1⟩ + e^{−i2π/3}|2⟩)/√3
    Psi2,
}

impl InputState {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" | "0" => Some(InputState::Zero),
            "one" | "1" => Some(InputState::One),
            "two" | "2" => Some(InputState::Two),
            "psi2" => Some(InputState::Psi2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputState::Zero => "zero",
            InputState::One => "one",
            InputState::Two => "two",
            InputState::Psi2 => "psi2",
        }
    }

    pub fn vector(self) -> StateVector {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        match self {
            InputState::Zero => StateVector::new(one, zero, zero),
            InputState::One => StateVector::new(zero, one, zero),
            InputState::Two => StateVector::new(zero, zero, one),
            InputState::Psi2 => {
                let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
                let inv = 1.0 / 3.0_f64.sqrt();
                StateVector::new(one * inv, w * inv, w.conj() * inv)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    min: f64,
    max: f64,
    count: usize,
}

impl RawGrid {
    fn values(&self) -> Result<Vec<f64>, SweepError> {
        if self.count == 0 {
            return Err(SweepError::Config("grid count must be positive".into()));
        }
        if self.count == 1 {
            return Ok(vec![self.min]);
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        Ok((0..self.count).map(|k| self.min + step * k as f64).collect())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweepSpec {
    experiment: String,
    #[serde(default)]
    method: Option<String>,
    #[serde(default)]
    jmax: Option<i32>,
    #[serde(default)]
    sequences: Option<Vec<usize>>,
    #[serde(default)]
    inputs: Option<Vec<String>>,
    #[serde(default)]
    channel: Option<String>,
    #[serde(default)]
    theta_grid: Option<RawGrid>,
    #[serde(default)]
    tau_grid_ns: Option<RawGrid>,
    #[serde(default)]
    alpha_grid: Option<RawGrid>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    checkpoint_count: Option<usize>,
    #[serde(default)]
    error: Option<String>,
}

/// A validated sweep specification.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub method: Method,
    pub jmax: i32,
    /// 1-based rows of the admissible-ordering table.
    pub sequences: Vec<usize>,
    pub inputs: Vec<InputState>,
    pub channel: Option<DriveChannel>,
    pub theta_grid: Vec<f64>,
    pub tau_grid_ns: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub alpha: f64,
    pub checkpoint_count: usize,
    /// Error kind for trajectory mode.
    pub error_kind: ErrorKind,
}

pub fn parse_sweep_toml(text: &str) -> Result<SweepSpec, SweepError> {
    let raw: RawSweepSpec =
        toml::from_str(text).map_err(|e| SweepError::Config(e.to_string()))?;
    let experiment = Experiment::parse(&raw.experiment)
        .ok_or_else(|| SweepError::Config(format!("unknown experiment '{}'", raw.experiment)))?;
    let method = match raw.method.as_deref() {
        None => Method::Rwa,
        Some(s) => Method::parse(s)
            .ok_or_else(|| SweepError::Config(format!("unknown method '{s}'")))?,
    };
    let jmax = raw.jmax.unwrap_or(3);
    let sequences = raw.sequences.unwrap_or_else(|| vec![1, 2, 3, 4]);
    if sequences.is_empty() || sequences.iter().any(|&s| s == 0 || s > 4) {
        return Err(SweepError::Config(
            "sequences must be a nonempty subset of 1..=4".into(),
        ));
    }
    let inputs = raw
        .inputs
        .unwrap_or_else(|| vec!["zero".into(), "psi2".into()])
        .iter()
        .map(|s| {
            InputState::parse(s)
                .ok_or_else(|| SweepError::Config(format!("unknown input state '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let channel = match raw.channel.as_deref() {
        None => None,
        Some("a") => Some(DriveChannel::A),
        Some("b") => Some(DriveChannel::B),
        Some("c") => Some(DriveChannel::C),
        Some("p") | Some("P") => Some(DriveChannel::P),
        Some("q") | Some("Q") => Some(DriveChannel::Q),
        Some(other) => {
            return Err(SweepError::Config(format!("unknown channel '{other}'")));
        }
    };
    let theta_grid = raw.theta_grid.map(|g| g.values()).transpose()?.unwrap_or_default();
    let tau_grid_ns = raw
        .tau_grid_ns
        .map(|g| g.values())
        .transpose()?
        .unwrap_or_default();
    let alpha_grid = raw
        .alpha_grid
        .map(|g| g.values())
        .transpose()?
        .unwrap_or_default();
    let spec = SweepSpec {
        experiment,
        method,
        jmax,
        sequences,
        inputs,
        channel,
        theta_grid,
        tau_grid_ns,
        alpha_grid,
        alpha: raw.alpha.unwrap_or(-0.2),
        checkpoint_count: raw.checkpoint_count.unwrap_or(200),
        error_kind: match raw.error.as_deref() {
            None | Some("amplitude") => ErrorKind::Amplitude,
            Some("phase") => ErrorKind::Phase,
            Some(other) => {
                return Err(SweepError::Config(format!("unknown error kind '{other}'")));
            }
        },
    };
    spec.validate()?;
    Ok(spec)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        match self.experiment {
            Experiment::FidelityMap => {
                if self.channel.is_none() {
                    return Err(SweepError::Config("fidelity_map needs a channel".into()));
                }
                if self.theta_grid.is_empty() || self.tau_grid_ns.is_empty() {
                    return Err(SweepError::Config(
                        "fidelity_map needs theta_grid and tau_grid_ns".into(),
                    ));
                }
                if self.tau_grid_ns.iter().any(|&t| t <= 0.0) {
                    return Err(SweepError::Config("tau grid must be positive".into()));
                }
            }
            Experiment::AmplitudeSweep | Experiment::PhaseSweep => {
                if self.alpha_grid.is_empty() {
                    return Err(SweepError::Config("error sweep needs alpha_grid".into()));
                }
                if self.alpha_grid.iter().any(|a| a.abs() > 0.5) {
                    return Err(SweepError::Config(
                        "error magnitudes must satisfy |alpha| <= 0.5".into(),
                    ));
                }
            }
            Experiment::Trajectory => {
                if self.alpha.abs() > 0.5 {
                    return Err(SweepError::Config(
                        "error magnitudes must satisfy |alpha| <= 0.5".into(),
                    ));
                }
                if self.checkpoint_count < 2 {
                    return Err(SweepError::Config("checkpoint_count must be >= 2".into()));
                }
            }
        }
        Ok(())
    }
}

/// Decomposes the Walsh-Hadamard gate for the four admissible orderings,
/// in table row order.
pub fn admissible_sequences() -> Result<Vec<GateSequence>, SweepError> {
    let uft = walsh_hadamard();
    Ordering::ADMISSIBLE_FT
        .iter()
        .map(|o| match decompose(&uft, *o)? {
            Decomposition::Admissible(seq) => Ok(seq),
            Decomposition::Inadmissible(rep) => Err(SweepError::Config(format!(
                "ordering {} unexpectedly inadmissible (residual {:.2e})",
                o.name(),
                rep.max_residual
            ))),
        })
        .collect()
}

/// Shared context for sweep runs on one molecule.
pub struct SweepContext {
    pub basis: BasisSet,
    pub table: CouplingTable,
    pub options: SynthesisOptions,
}

impl SweepContext {
    pub fn prepare(molecule: &MoleculeSpec, jmax: i32) -> Result<Self, SweepError> {
        let basis = solve_spectrum(molecule, jmax)?;
        let table = CouplingTable::build(&basis)?;
        Ok(SweepContext {
            basis,
            table,
            options: SynthesisOptions::reference(),
        })
    }

    fn sim_config(&self, method: Method) -> SimulationConfig {
        SimulationConfig::new(method)
    }
}

/// Reference SU(2) phases (sequence 1) used for single-channel map targets.
fn map_phase_reference(channel: DriveChannel) -> f64 {
    match channel {
        DriveChannel::A => 7.0 * PI / 6.0,
        DriveChannel::B => PI / 6.0,
        DriveChannel::C => 4.0 * PI / 3.0,
        DriveChannel::P => 2.0 * PI / 3.0,  // η of sequence 1
        DriveChannel::Q => 5.0 * PI / 6.0,  // χ of sequence 1
    }
}

/// Builds a minimal train for one channel: a single subpulse for a/b/c, the
/// two-subpulse loop for P/Q.
pub fn single_channel_train(
    ctx: &SweepContext,
    channel: DriveChannel,
    theta: f64,
    tau: f64,
) -> Result<(PulseSequence, GateMatrix), SweepError> {
    let encoding = QutritEncoding::standard(&ctx.basis)?;
    let info = encoding.channel_info(channel, &ctx.basis)?;
    let phase_ref = map_phase_reference(channel);
    let trunc = ctx.options.truncation;
    let gap = ctx.options.gap_factor;

    let mut opts = ctx.options.clone();
    // Only the requested channel's tau matters; set it everywhere relevant.
    match channel {
        DriveChannel::A => opts.tau_a = tau,
        DriveChannel::B => opts.tau_b = tau,
        DriveChannel::C => opts.tau_c = tau,
        DriveChannel::P => opts.tau_p = tau,
        DriveChannel::Q => opts.tau_q = tau,
    }

    let (subpulses, target) = match channel {
        DriveChannel::A | DriveChannel::B | DriveChannel::C => {
            let gate_ch = match channel {
                DriveChannel::A => crate::gates::Channel::A,
                DriveChannel::B => crate::gates::Channel::B,
                _ => crate::gates::Channel::C,
            };
            let label = match channel {
                DriveChannel::A => SubpulseLabel::A,
                DriveChannel::B => SubpulseLabel::B,
                _ => SubpulseLabel::C,
            };
            let mut sub = crate::pulses::build_subpulse(label, &info, theta, phase_ref, tau)?;
            sub.delay = trunc * tau;
            let target = crate::gates::elementary_unitary(&ElementaryRotation {
                channel: gate_ch,
                theta,
                phi: phase_ref,
            });
            (vec![sub], target)
        }
        DriveChannel::P | DriveChannel::Q => {
            let (l1, l2) = if channel == DriveChannel::P {
                (SubpulseLabel::P1, SubpulseLabel::P2)
            } else {
                (SubpulseLabel::Q1, SubpulseLabel::Q2)
            };
            let phi2 = if channel == DriveChannel::P {
                phase_ref - PI // φ_{P2} = η − π
            } else {
                PI - phase_ref // φ_{Q2} = π − χ
            };
            let mut s1 = crate::pulses::build_subpulse(l1, &info, theta, 0.0, tau)?;
            let mut s2 = crate::pulses::build_subpulse(l2, &info, theta, phi2, tau)?;
            s1.delay = trunc * tau;
            s2.delay = s1.delay + gap * 2.0 * tau;
            let mut target = GateMatrix::identity();
            if channel == DriveChannel::P {
                target[(1, 1)] = C64::from_polar(1.0, phase_ref);
            } else {
                target[(2, 2)] = C64::from_polar(1.0, phase_ref);
            }
            (vec![s1, s2], target)
        }
    };
    let last = subpulses.last().expect("at least one subpulse");
    let total_duration = last.delay + trunc * last.tau;
    Ok((
        PulseSequence {
            subpulses,
            total_duration,
            truncation: trunc,
        },
        target,
    ))
}

#[derive(Debug, Clone)]
pub struct FidelityMapRow {
    pub theta: f64,
    pub tau_ns: f64,
    pub fidelity: f64,
    pub leakage: f64,
    /// Per-cell failure message instead of aborting the whole map.
    pub error: Option<String>,
}

/// Fidelity map of one elementary operation over (θ, τ).
pub fn run_fidelity_map(spec: &SweepSpec, ctx: &SweepContext) -> Result<Vec<FidelityMapRow>, SweepError> {
    let channel = spec
        .channel
        .ok_or_else(|| SweepError::Config("fidelity_map needs a channel".into()))?;
    let points: Vec<(f64, f64)> = spec
        .theta_grid
        .iter()
        .flat_map(|&th| spec.tau_grid_ns.iter().map(move |&tau| (th, tau)))
        .collect();
    let rows: Vec<FidelityMapRow> = points
        .par_iter()
        .map(|&(theta, tau)| {
            let cell = (|| -> Result<(f64, f64), SweepError> {
                let (train, target) = single_channel_train(ctx, channel, theta, tau)?;
                let config = ctx.sim_config(spec.method);
                let engine = Engine::with_table(&train, &ctx.table, &config)?;
                let res = propagate_with(&engine, &train, &config)?;
                let f = average_gate_fidelity(&res.m_hat, &target)?;
                Ok((f, leakage(&res.m_hat)))
            })();
            match cell {
                Ok((fidelity, leak)) => FidelityMapRow {
                    theta,
                    tau_ns: tau,
                    fidelity,
                    leakage: leak,
                    error: None,
                },
                Err(e) => FidelityMapRow {
                    theta,
                    tau_ns: tau,
                    fidelity: f64::NAN,
                    leakage: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

pub fn fidelity_map_csv(rows: &[FidelityMapRow]) -> String {
    let mut out = String::from("theta_rad,tau_ns,fidelity,leakage,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.9},{:.6},{:.9},{:.3e},{}",
            r.theta,
            r.tau_ns,
            r.fidelity,
            r.leakage,
            r.error.as_deref().unwrap_or("")
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct ErrorSweepRow {
    pub sequence: usize,
    pub alpha: f64,
    pub f_gate: f64,
    pub c_gate: f64,
    pub leakage: f64,
    /// (input, F_state, C_state) per configured input.
    pub states: Vec<(InputState, f64, f64)>,
}

/// Full-train error sweep: perturb gate parameters, re-synthesize, propagate,
/// and attach the analytic error coefficients.
pub fn run_error_sweep(spec: &SweepSpec, ctx: &SweepContext) -> Result<Vec<ErrorSweepRow>, SweepError> {
    let kind = spec
        .experiment
        .error_kind()
        .ok_or_else(|| SweepError::Config("not an error-sweep experiment".into()))?;
    let uft = walsh_hadamard();
    let all = admissible_sequences()?;
    let jobs: Vec<(usize, f64)> = spec
        .sequences
        .iter()
        .flat_map(|&s| spec.alpha_grid.iter().map(move |&a| (s, a)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(snum, alpha)| -> Result<ErrorSweepRow, SweepError> {
            let seq = &all[snum - 1];
            let perturbed = ErrorModel {
                kind,
                magnitude: alpha,
            }
            .apply(seq);
            let train = synthesize(&perturbed, &ctx.basis, &ctx.options)?;
            let config = ctx.sim_config(spec.method);
            let engine = Engine::with_table(&train, &ctx.table, &config)?;
            let res = propagate_with(&engine, &train, &config)?;
            let f_gate = average_gate_fidelity(&res.m_hat, &uft)?;
            let c_gate = gate_error_coefficient(seq, kind);
            let mut states = Vec::with_capacity(spec.inputs.len());
            for &input in &spec.inputs {
                let psi = input.vector();
                let f = state_fidelity(&res.m_hat, &psi, &uft)?;
                let c = state_error_coefficient(seq, kind, &psi)?;
                states.push((input, f, c));
            }
            Ok(ErrorSweepRow {
                sequence: snum,
                alpha,
                f_gate,
                c_gate,
                leakage: leakage(&res.m_hat),
                states,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows)
}

pub fn error_sweep_csv(rows: &[ErrorSweepRow], inputs: &[InputState]) -> String {
    let mut out = String::from("sequence,alpha,f_gate,c_gate,leakage");
    for i in inputs {
        let _ = write!(out, ",f_state_{},c_state_{}", i.name(), i.name());
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{:.9},{:.9},{:.9},{:.3e}",
            r.sequence, r.alpha, r.f_gate, r.c_gate, r.leakage
        );
        for (_, f, c) in &r.states {
            let _ = write!(out, ",{f:.9},{c:.9}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub sequence: usize,
    pub deviations: Vec<BlochVector8>,
}

/// Paired errored/ideal propagations with checkpoints; returns δs(t) series
/// for the configured input state (first entry of `inputs`).
pub fn run_trajectory(spec: &SweepSpec, ctx: &SweepContext) -> Result<Vec<TrajectoryResult>, SweepError> {
    if spec.experiment != Experiment::Trajectory {
        return Err(SweepError::Config("not a trajectory experiment".into()));
    }
    run_trajectory_kind(spec, ctx, spec.error_kind)
}

pub fn run_trajectory_kind(
    spec: &SweepSpec,
    ctx: &SweepContext,
    kind: ErrorKind,
) -> Result<Vec<TrajectoryResult>, SweepError> {
    let input = spec
        .inputs
        .first()
        .copied()
        .ok_or_else(|| SweepError::Config("trajectory needs an input state".into()))?;
    let all = admissible_sequences()?;
    let results = spec
        .sequences
        .par_iter()
        .map(|&snum| -> Result<TrajectoryResult, SweepError> {
            let seq = &all[snum - 1];
            let ideal_train = synthesize(seq, &ctx.basis, &ctx.options)?;
            let perturbed = ErrorModel {
                kind,
                magnitude: spec.alpha,
            }
            .apply(seq);
            let err_train = synthesize(&perturbed, &ctx.basis, &ctx.options)?;
            let t_total = ideal_train.total_duration;
            let times: Vec<f64> = (0..spec.checkpoint_count)
                .map(|k| t_total * k as f64 / (spec.checkpoint_count - 1) as f64)
                .collect();
            let mut config = ctx.sim_config(spec.method);
            config.checkpoints = times;
            let run = |train: &PulseSequence| -> Result<Vec<BlochVector8>, SweepError> {
                let engine = Engine::with_table(train, &ctx.table, &config)?;
                let res = propagate_with(&engine, train, &config)?;
                res.checkpoints
                    .iter()
                    .map(|(t, m)| {
                        let psi = m * input.vector();
                        Ok(bloch_vector(&density_from_state(&psi), *t)?)
                    })
                    .collect()
            };
            let ideal = run(&ideal_train)?;
            let errored = run(&err_train)?;
            Ok(TrajectoryResult {
                sequence: snum,
                deviations: deviation_trajectory(&errored, &ideal)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(results)
}

/// Reproducibility manifest: configuration hash plus the physical and
/// numerical settings of a run.
pub fn manifest_toml(
    config_text: &str,
    molecule: &MoleculeSpec,
    method: Method,
    jmax: i32,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let hash = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in hash {
        let _ = write!(hex, "{b:02x}");
    }
    format!(
        "tool = \"rotor-qutrit\"\nconfig_sha256 = \"{hex}\"\nmolecule = \"{}\"\nmethod = \"{}\"\njmax = {jmax}\n\n[tolerances]\ndecompose = {:.1e}\nmax_phase_step = 0.05\ncarrier_resolution = 1.2\nphase_floor = 1.0e-4\n",
        molecule.name,
        method.name(),
        crate::gates::DECOMPOSE_TOL,
    )
}
