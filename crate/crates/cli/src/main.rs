//! Command-line driver: spectrum and transition tables, gate decomposition,
//! pulse synthesis, full-train simulation, and experiment sweeps.
//!
//! Exit codes: 0 success, 2 validation/configuration failure, 3 numerical
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use rotor_qutrit::dynamics::{
    leakage, propagate, DynamicsError, Method, SimulationConfig,
};
use rotor_qutrit::gates::{
    decompose, parse_gate_matrix, walsh_hadamard, Decomposition, GateError, GateMatrix,
    GateSequence, Ordering,
};
use rotor_qutrit::metrics::{average_gate_fidelity, state_fidelity, trajectory_csv};
use rotor_qutrit::pulses::{synthesize, PulseError, SynthesisOptions};
use rotor_qutrit::rotor::{load_molecule, solve_spectrum, BasisSet, MoleculeSpec, RotorError};
use rotor_qutrit::sweep::{
    error_sweep_csv, fidelity_map_csv, manifest_toml, parse_sweep_toml, run_error_sweep,
    run_fidelity_map, run_trajectory_kind, Experiment, InputState, SweepContext, SweepError,
};

#[derive(Parser)]
#[command(name = "rotor-qutrit", version, about = "Qutrit gate design in asymmetric-top molecules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MoleculeArgs {
    /// Molecule definition file (strict-schema TOML).
    #[arg(long)]
    molecule: PathBuf,
    /// Rotational basis truncation J ≤ jmax.
    #[arg(long, default_value_t = 3)]
    jmax: i32,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the rotational spectrum and write level/transition tables.
    Spectrum {
        #[command(flatten)]
        molecule: MoleculeArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose a target gate into elementary rotations and phases.
    Decompose {
        /// Target gate: "walsh-hadamard" or a path to a 9-line matrix file.
        #[arg(long, default_value = "walsh-hadamard")]
        target: String,
        /// Ordering (e.g. "cab"), or "all" for all six.
        #[arg(long, default_value = "all")]
        ordering: String,
        /// Optional output file for the parameter report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize the microwave pulse train realizing a gate sequence.
    Synthesize {
        #[command(flatten)]
        molecule: MoleculeArgs,
        #[arg(long, default_value = "walsh-hadamard")]
        target: String,
        /// Decomposition ordering, e.g. "cab".
        #[arg(long, default_value = "cab")]
        ordering: String,
        /// Emit a sampled field time series with this step (ns).
        #[arg(long)]
        sample_dt: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the full pulse train and report fidelities.
    Simulate {
        #[command(flatten)]
        molecule: MoleculeArgs,
        #[arg(long, default_value = "walsh-hadamard")]
        target: String,
        #[arg(long, default_value = "cab")]
        ordering: String,
        /// Dynamics method: exact, rwa or magnus1.
        #[arg(long, default_value = "exact")]
        method: String,
        /// Comma-separated input states (zero, one, two, psi2).
        #[arg(long, default_value = "zero,psi2")]
        inputs: String,
        /// Sample this many checkpoints of the computational density matrix.
        #[arg(long)]
        checkpoints: Option<usize>,
        /// Override the slow-phase step cap (rad).
        #[arg(long)]
        phase_cap: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured experiment sweep and write CSV tables.
    Sweep {
        #[command(flatten)]
        molecule: MoleculeArgs,
        /// Sweep specification file (strict-schema TOML).
        #[arg(long, required_unless_present = "seed_config")]
        config: Option<PathBuf>,
        /// Write a template sweep configuration to this path and exit.
        #[arg(long)]
        seed_config: Option<PathBuf>,
        #[arg(long, required_unless_present = "seed_config")]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

/// 2 for validation/configuration problems, 3 for numerical failures.
fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(d) = cause.downcast_ref::<DynamicsError>() {
            return match d {
                DynamicsError::BadConfig(_) | DynamicsError::StepControl(_) => 2,
                _ => 3,
            };
        }
        if let Some(s) = cause.downcast_ref::<SweepError>() {
            return match s {
                SweepError::Dynamics(DynamicsError::NonUnitary { .. }) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<RotorError>().is_some()
            || cause.downcast_ref::<GateError>().is_some()
            || cause.downcast_ref::<PulseError>().is_some()
        {
            return 2;
        }
    }
    3
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Spectrum { molecule, out } => cmd_spectrum(&molecule, &out),
        Command::Decompose {
            target,
            ordering,
            out,
        } => cmd_decompose(&target, &ordering, out.as_deref()),
        Command::Synthesize {
            molecule,
            target,
            ordering,
            sample_dt,
            out,
        } => cmd_synthesize(&molecule, &target, &ordering, sample_dt, &out),
        Command::Simulate {
            molecule,
            target,
            ordering,
            method,
            inputs,
            checkpoints,
            phase_cap,
            out,
        } => cmd_simulate(
            &molecule,
            &target,
            &ordering,
            &method,
            &inputs,
            checkpoints,
            phase_cap,
            &out,
        ),
        Command::Sweep {
            molecule,
            config,
            seed_config,
            out,
        } => cmd_sweep(&molecule, config.as_deref(), seed_config.as_deref(), out.as_deref()),
    }
}

fn load_inputs(args: &MoleculeArgs) -> Result<(MoleculeSpec, BasisSet)> {
    let molecule = load_molecule(&args.molecule)?;
    if args.jmax < 1 {
        bail!(RotorError::JmaxTooSmall(args.jmax));
    }
    let basis = solve_spectrum(&molecule, args.jmax)?;
    Ok((molecule, basis))
}

fn resolve_target(spec: &str) -> Result<GateMatrix> {
    if spec.eq_ignore_ascii_case("walsh-hadamard") || spec.eq_ignore_ascii_case("ft") {
        return Ok(walsh_hadamard());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading target {spec}"))?;
    Ok(parse_gate_matrix(&text)?)
}

fn resolve_sequence(target: &GateMatrix, ordering: &str) -> Result<GateSequence> {
    let ord = Ordering::parse(ordering)?;
    match decompose(target, ord)? {
        Decomposition::Admissible(seq) => Ok(seq),
        Decomposition::Inadmissible(rep) => Err(anyhow!(GateError::Parse(format!(
            "ordering {} is inadmissible for this target (residual {:.3e} at element ({},{}))",
            ord.name(),
            rep.max_residual,
            rep.element.0 + 1,
            rep.element.1 + 1
        )))),
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_spectrum(args: &MoleculeArgs, out: &Path) -> Result<()> {
    let (molecule, basis) = load_inputs(args)?;

    let mut levels = String::from("label,j,ka,kc,m,energy_mhz\n");
    for s in basis.states() {
        let _ = writeln!(
            levels,
            "{},{},{},{},{},{:.6}",
            s.label(),
            s.j,
            s.ka,
            s.kc,
            s.m,
            s.energy_mhz
        );
    }
    let table = rotor_qutrit::rotor::transition_table(&basis, &molecule)?;
    let mut transitions =
        String::from("upper,lower,type,q,frequency_mhz,mu_re_debye,mu_im_debye\n");
    for e in &table {
        let _ = writeln!(
            transitions,
            "{},{},{},{},{:.6},{:.9e},{:.9e}",
            basis.state(e.upper).label(),
            basis.state(e.lower).label(),
            e.kind,
            e.q,
            e.frequency_mhz,
            e.element.re,
            e.element.im
        );
    }
    write_out(out, "levels.csv", &levels)?;
    write_out(out, "transitions.csv", &transitions)?;
    let manifest = manifest_toml(&levels, &molecule, Method::Exact, args.jmax);
    write_out(out, "manifest.toml", &manifest)?;
    println!(
        "wrote {} levels and {} transitions to {}",
        basis.len(),
        table.len(),
        out.display()
    );
    Ok(())
}

fn cmd_decompose(target_spec: &str, ordering: &str, out: Option<&Path>) -> Result<()> {
    let target = resolve_target(target_spec)?;
    let orderings: Vec<Ordering> = if ordering.eq_ignore_ascii_case("all") {
        Ordering::ALL.to_vec()
    } else {
        vec![Ordering::parse(ordering)?]
    };
    let mut report = String::from(
        "# ordering theta_a phi_a theta_b phi_b theta_c phi_c eta chi verdict\n",
    );
    let mut admissible = 0usize;
    for ord in &orderings {
        match decompose(&target, *ord)? {
            Decomposition::Admissible(seq) => {
                admissible += 1;
                let a = seq.rotation(rotor_qutrit::gates::Channel::A);
                let b = seq.rotation(rotor_qutrit::gates::Channel::B);
                let c = seq.rotation(rotor_qutrit::gates::Channel::C);
                let _ = writeln!(
                    report,
                    "{} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} {:.12} admissible",
                    ord.name(),
                    a.theta,
                    a.phi,
                    b.theta,
                    b.phi,
                    c.theta,
                    c.phi,
                    seq.phase.eta,
                    seq.phase.chi
                );
            }
            Decomposition::Inadmissible(rep) => {
                let _ = writeln!(
                    report,
                    "{} - - - - - - - - inadmissible element ({},{}) composed {:.12}{:+.12}i required {:.12}{:+.12}i",
                    ord.name(),
                    rep.element.0 + 1,
                    rep.element.1 + 1,
                    rep.composed.re,
                    rep.composed.im,
                    rep.required.re,
                    rep.required.im
                );
            }
        }
    }
    let _ = writeln!(
        report,
        "# {admissible} of {} orderings admissible",
        orderings.len()
    );
    print!("{report}");
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, &report)?;
    }
    Ok(())
}

fn cmd_synthesize(
    args: &MoleculeArgs,
    target_spec: &str,
    ordering: &str,
    sample_dt: Option<f64>,
    out: &Path,
) -> Result<()> {
    let (molecule, basis) = load_inputs(args)?;
    let target = resolve_target(target_spec)?;
    let seq = resolve_sequence(&target, ordering)?;
    let train = synthesize(&seq, &basis, &SynthesisOptions::reference())?;
    write_out(out, "pulses.txt", &train.export_table())?;
    if let Some(dt) = sample_dt {
        if !(dt > 0.0) {
            bail!(PulseError::BadDuration("sample_dt"));
        }
        write_out(out, "field_samples.csv", &train.export_samples(dt))?;
    }
    let manifest = manifest_toml(&train.export_table(), &molecule, Method::Exact, args.jmax);
    write_out(out, "manifest.toml", &manifest)?;
    println!(
        "wrote {} subpulses spanning {:.1} ns to {}",
        train.subpulses.len(),
        train.total_duration,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    args: &MoleculeArgs,
    target_spec: &str,
    ordering: &str,
    method: &str,
    inputs: &str,
    checkpoints: Option<usize>,
    phase_cap: Option<f64>,
    out: &Path,
) -> Result<()> {
    let (molecule, basis) = load_inputs(args)?;
    let target = resolve_target(target_spec)?;
    let seq = resolve_sequence(&target, ordering)?;
    let method = Method::parse(method)
        .ok_or_else(|| anyhow!(DynamicsError::BadConfig(format!("unknown method '{method}'"))))?;
    let input_states: Vec<InputState> = inputs
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            InputState::parse(s)
                .ok_or_else(|| anyhow!(SweepError::Config(format!("unknown input state '{s}'"))))
        })
        .collect::<Result<_>>()?;

    let train = synthesize(&seq, &basis, &SynthesisOptions::reference())?;
    let mut config = SimulationConfig::new(method);
    if let Some(cap) = phase_cap {
        config.max_phase_step = cap;
    }
    if let Some(n) = checkpoints {
        if n < 2 {
            bail!(DynamicsError::BadConfig("checkpoints must be >= 2".into()));
        }
        config.checkpoints = (0..n)
            .map(|k| train.total_duration * k as f64 / (n - 1) as f64)
            .collect();
    }
    let res = propagate(&train, &basis, &config)?;
    let f_gate = average_gate_fidelity(&res.m_hat, &target)?;
    let leak = leakage(&res.m_hat);

    let mut report = String::new();
    let _ = writeln!(report, "molecule = \"{}\"", molecule.name);
    let _ = writeln!(report, "ordering = \"{}\"", seq.ordering.name());
    let _ = writeln!(report, "method = \"{}\"", method.name());
    let _ = writeln!(report, "gate_fidelity = {f_gate:.9}");
    let _ = writeln!(report, "leakage = {leak:.6e}");
    let _ = writeln!(report, "total_duration_ns = {:.3}", train.total_duration);
    let _ = writeln!(report, "steps = {}", res.steps);
    for input in &input_states {
        let psi = input.vector();
        let f = state_fidelity(&res.m_hat, &psi, &target)?;
        let _ = writeln!(report, "state_fidelity_{} = {f:.9}", input.name());
    }
    write_out(out, "report.toml", &report)?;

    // Output density matrices per input (raw projection; trace < 1 shows leakage).
    for input in &input_states {
        let psi_out = res.m_hat * input.vector();
        let rho = psi_out * psi_out.adjoint();
        let mut text = String::from("# output density matrix, row-major, re im\n");
        for r in 0..3 {
            for c in 0..3 {
                let z: Complex64 = rho[(r, c)];
                let _ = writeln!(text, "{:.17e} {:.17e}", z.re, z.im);
            }
        }
        write_out(out, &format!("density_{}.txt", input.name()), &text)?;
    }

    if !res.checkpoints.is_empty() {
        // time + 9 complex entries of the projected map at each checkpoint
        let mut text = String::from("# t_ns then M row-major re im pairs\n");
        for (t, m) in &res.checkpoints {
            let _ = write!(text, "{t:.6}");
            for r in 0..3 {
                for c in 0..3 {
                    let _ = write!(text, " {:.12e} {:.12e}", m[(r, c)].re, m[(r, c)].im);
                }
            }
            text.push('\n');
        }
        write_out(out, "checkpoints.txt", &text)?;
    }

    let manifest = manifest_toml(&report, &molecule, method, args.jmax);
    write_out(out, "manifest.toml", &manifest)?;
    print!("{report}");
    Ok(())
}

const SWEEP_TEMPLATE: &str = r#"# experiment: fidelity_map | amplitude_sweep | phase_sweep | trajectory
experiment = "amplitude_sweep"
method = "rwa"
jmax = 3
sequences = [1, 2, 3, 4]
inputs = ["zero", "psi2"]

[alpha_grid]
min = -0.2
max = 0.2
count = 41

# fidelity_map settings:
# channel = "c"
# [theta_grid]
# min = 0.1
# max = 1.6
# count = 16
# [tau_grid_ns]
# min = 2.0
# max = 200.0
# count = 12

# trajectory settings:
# alpha = -0.2
# error = "amplitude"   # or "phase"
# checkpoint_count = 200
"#;

fn cmd_sweep(
    args: &MoleculeArgs,
    config: Option<&Path>,
    seed_config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if let Some(path) = seed_config {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, SWEEP_TEMPLATE)?;
        println!("wrote template sweep config to {}", path.display());
        return Ok(());
    }
    let config = config.expect("clap enforces config unless seeding");
    let out = out.expect("clap enforces out unless seeding");
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading sweep config {}", config.display()))?;
    let spec = parse_sweep_toml(&text)?;
    let (molecule, _basis) = load_inputs(args)?;
    let mut ctx = SweepContext::prepare(&molecule, spec.jmax.max(args.jmax))?;
    ctx.options = SynthesisOptions::reference();

    match spec.experiment {
        Experiment::FidelityMap => {
            let rows = run_fidelity_map(&spec, &ctx)?;
            write_out(out, "fidelity_map.csv", &fidelity_map_csv(&rows))?;
        }
        Experiment::AmplitudeSweep | Experiment::PhaseSweep => {
            let rows = run_error_sweep(&spec, &ctx)?;
            let name = if spec.experiment == Experiment::AmplitudeSweep {
                "amplitude_sweep.csv"
            } else {
                "phase_sweep.csv"
            };
            write_out(out, name, &error_sweep_csv(&rows, &spec.inputs))?;
        }
        Experiment::Trajectory => {
            let results = run_trajectory_kind(&spec, &ctx, spec.error_kind)?;
            for r in &results {
                write_out(
                    out,
                    &format!("trajectory_seq{}.csv", r.sequence),
                    &trajectory_csv(&r.deviations),
                )?;
            }
        }
    }
    let manifest = manifest_toml(&text, &molecule, spec.method, spec.jmax);
    write_out(out, "manifest.toml", &manifest)?;
    println!("sweep complete; tables in {}", out.display());
    Ok(())
}
