//! Analytic synthesis of Gaussian microwave pulse sequences from gate
//! parameters, via the multilevel pulse-area mapping.
//!
//! Each subpulse is ε·exp[−(t−T)²/2τ²]·Re[e^{−i(ωt+φ̃)}ê] with peak
//! amplitude ε = √(2/π)·θ/(τ|μ|) and carrier phase φ̃ = φ − arg(μ), so its
//! complex area on the resonant transition is exactly θe^{iφ}. Fields are
//! Rabi-rate amplitudes (rad/ns per Debye); no electromagnetic unit enters.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::encoding::{ChannelInfo, DriveChannel, EncodingError, QutritEncoding};
use crate::gates::GateSequence;
use crate::rotor::BasisSet;

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("transition for channel {channel} is dipole-blocked (|mu| = {mu_abs:.3e} D)")]
    BlockedTransition { channel: &'static str, mu_abs: f64 },
    #[error("pulse duration for channel {0} must be positive")]
    BadDuration(&'static str),
    #[error("scheduling: centers of subpulses {first} and {second} are {gap:.3} ns apart, below the envelope-overlap bound {bound:.3} ns")]
    Scheduling {
        first: usize,
        second: usize,
        gap: f64,
        bound: f64,
    },
    #[error("gap factor must be at least 2 envelope widths, got {0}")]
    GapFactor(f64),
    #[error("explicit schedule must list {expected} centers, got {got}")]
    ScheduleLength { expected: usize, got: usize },
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// Which subpulse of the train this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubpulseLabel {
    A,
    B,
    C,
    P1,
    P2,
    Q1,
    Q2,
}

impl SubpulseLabel {
    pub fn channel(self) -> DriveChannel {
        match self {
            SubpulseLabel::A => DriveChannel::A,
            SubpulseLabel::B => DriveChannel::B,
            SubpulseLabel::C => DriveChannel::C,
            SubpulseLabel::P1 | SubpulseLabel::P2 => DriveChannel::P,
            SubpulseLabel::Q1 | SubpulseLabel::Q2 => DriveChannel::Q,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubpulseLabel::A => "a",
            SubpulseLabel::B => "b",
            SubpulseLabel::C => "c",
            SubpulseLabel::P1 => "P1",
            SubpulseLabel::P2 => "P2",
            SubpulseLabel::Q1 => "Q1",
            SubpulseLabel::Q2 => "Q2",
        }
    }
}

/// One Gaussian subpulse, fully determined by the gate parameters and the
/// addressed transition.
#[derive(Debug, Clone)]
pub struct SubpulseSpec {
    pub label: SubpulseLabel,
    /// (lower, upper) basis indices of the addressed transition.
    pub transition: (usize, usize),
    /// Target pulse area (radians).
    pub theta: f64,
    /// Target area phase (radians).
    pub phi: f64,
    /// Envelope width τ (ns).
    pub tau: f64,
    /// Envelope center T (ns).
    pub delay: f64,
    /// Carrier ω (rad/ns), resonant with the transition.
    pub carrier: f64,
    /// Carrier phase φ̃ = φ − arg(μ) (radians).
    pub carrier_phase: f64,
    /// Spherical polarization components (e_{-1}, e_0, e_{+1}); the slot q
    /// denotes the dipole component μ̂_q the pulse drives (ΔM = q).
    pub polarization: [C64; 3],
    /// Peak Rabi-rate amplitude √(2/π)·θ/(τ|μ|), rad/(ns·Debye).
    pub peak_amplitude: f64,
    /// Transition dipole element the synthesis used (Debye).
    pub mu: C64,
}

impl SubpulseSpec {
    /// The driven spherical index q (ΔM of the absorption).
    pub fn drive_q(&self) -> i32 {
        let mut best = 0;
        let mut best_norm = -1.0;
        for (slot, q) in (-1i32..=1).enumerate() {
            let n = self.polarization[slot].norm();
            if n > best_norm {
                best_norm = n;
                best = q;
            }
        }
        best
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let x = (t - self.delay) / self.tau;
        (-0.5 * x * x).exp()
    }

    /// Window outside which the envelope is truncated to zero.
    pub fn window(&self, truncation: f64) -> (f64, f64) {
        (
            self.delay - truncation * self.tau,
            self.delay + truncation * self.tau,
        )
    }

    /// Spherical field components of this subpulse alone at time t.
    pub fn field_at(&self, t: f64, truncation: f64) -> [C64; 3] {
        let (lo, hi) = self.window(truncation);
        if t < lo || t > hi {
            return [C64::new(0.0, 0.0); 3];
        }
        let half = 0.5 * self.peak_amplitude * self.envelope(t);
        let rot = C64::from_polar(1.0, -(self.carrier * t + self.carrier_phase));
        let mut out = [C64::new(0.0, 0.0); 3];
        for (slot, q) in (-1i32..=1).enumerate() {
            // ε_q = (εf/2)[p_{-q} e^{-i(ωt+φ̃)} + (−1)^q p_q* e^{+i(ωt+φ̃)}]
            let p_minus_q = self.polarization[(1 - q + 1) as usize - 1];
            let p_q = self.polarization[slot];
            let sign = if q.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            out[slot] = half * (p_minus_q * rot + sign * p_q.conj() * rot.conj());
        }
        out
    }
}

/// Synthesis controls; durations are per channel, with P1/P2 (Q1/Q2)
/// sharing τ_P (τ_Q).
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub tau_a: f64,
    pub tau_b: f64,
    pub tau_c: f64,
    pub tau_p: f64,
    pub tau_q: f64,
    /// Center-to-center spacing factor g: adjacent centers sit g·(τᵢ+τⱼ)
    /// apart. Must be ≥ 2; the default 3 keeps the envelope-product overlap
    /// below e⁻⁹ so time ordering of the elementary operations holds.
    pub gap_factor: f64,
    /// Envelope truncation half-width in units of τ.
    pub truncation: f64,
    /// Explicit centers (ns) overriding the automatic schedule; validated
    /// against the ≥ 2(τᵢ+τⱼ) overlap bound.
    pub explicit_centers: Option<Vec<f64>>,
}

impl SynthesisOptions {
    /// Reference durations for the propanediol runs:
    /// τ_a = 6.3, τ_b = 7, τ_c = 163.8, τ_P = 446.1, τ_Q = 94.3 ns.
    pub fn reference() -> Self {
        SynthesisOptions {
            tau_a: 6.3,
            tau_b: 7.0,
            tau_c: 163.8,
            tau_p: 446.1,
            tau_q: 94.3,
            gap_factor: 3.0,
            truncation: 8.0,
            explicit_centers: None,
        }
    }

    pub fn tau(&self, channel: DriveChannel) -> f64 {
        match channel {
            DriveChannel::A => self.tau_a,
            DriveChannel::B => self.tau_b,
            DriveChannel::C => self.tau_c,
            DriveChannel::P => self.tau_p,
            DriveChannel::Q => self.tau_q,
        }
    }
}

/// An ordered train of subpulses realizing a gate sequence.
#[derive(Debug, Clone)]
pub struct PulseSequence {
    pub subpulses: Vec<SubpulseSpec>,
    pub total_duration: f64,
    pub truncation: f64,
}

impl PulseSequence {
    /// Total spherical field components ε_q(t), q ∈ {-1, 0, +1}.
    pub fn field_at(&self, t: f64) -> [C64; 3] {
        let mut out = [C64::new(0.0, 0.0); 3];
        for sub in &self.subpulses {
            let f = sub.field_at(t, self.truncation);
            for k in 0..3 {
                out[k] += f[k];
            }
        }
        out
    }

    /// Per-pulse parameter table as structured text.
    pub fn export_table(&self) -> String {
        let mut s = String::from(
            "# label lower upper theta_rad phi_rad tau_ns center_ns carrier_mhz carrier_phase_rad \
             pol_m1_re pol_m1_im pol_0_re pol_0_im pol_p1_re pol_p1_im\n",
        );
        for p in &self.subpulses {
            let carrier_mhz = p.carrier / crate::MHZ_TO_RAD_NS;
            let _ = writeln!(
                s,
                "{} {} {} {:.12e} {:.12e} {:.6} {:.6} {:.9} {:.12e} {:.3e} {:.3e} {:.3e} {:.3e} {:.3e} {:.3e}",
                p.label.name(),
                p.transition.0,
                p.transition.1,
                p.theta,
                p.phi,
                p.tau,
                p.delay,
                carrier_mhz,
                p.carrier_phase,
                p.polarization[0].re,
                p.polarization[0].im,
                p.polarization[1].re,
                p.polarization[1].im,
                p.polarization[2].re,
                p.polarization[2].im,
            );
        }
        s
    }

    /// Sampled field time series as CSV:
    /// t_ns, eps_m1_re, eps_m1_im, eps_0_re, eps_0_im, eps_p1_re, eps_p1_im.
    pub fn export_samples(&self, dt: f64) -> String {
        let mut s =
            String::from("t_ns,eps_m1_re,eps_m1_im,eps_0_re,eps_0_im,eps_p1_re,eps_p1_im\n");
        let mut t = 0.0;
        while t <= self.total_duration {
            let f = self.field_at(t);
            let _ = writeln!(
                s,
                "{:.6},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                t, f[0].re, f[0].im, f[1].re, f[1].im, f[2].re, f[2].im
            );
            t += dt;
        }
        s
    }
}

fn polarization_for(q: i32) -> [C64; 3] {
    let mut p = [C64::new(0.0, 0.0); 3];
    p[(q + 1) as usize] = C64::new(1.0, 0.0);
    p
}

/// Builds one subpulse from its transition data and target complex area;
/// the delay is assigned by the caller.
pub fn build_subpulse(
    label: SubpulseLabel,
    info: &ChannelInfo,
    theta: f64,
    phi: f64,
    tau: f64,
) -> Result<SubpulseSpec, PulseError> {
    if !(tau > 0.0) {
        return Err(PulseError::BadDuration(info.channel.name()));
    }
    let mu_abs = info.mu.norm();
    if mu_abs < 1e-10 {
        return Err(PulseError::BlockedTransition {
            channel: info.channel.name(),
            mu_abs,
        });
    }
    Ok(SubpulseSpec {
        label,
        transition: (info.lower, info.upper),
        theta,
        phi,
        tau,
        delay: 0.0,
        carrier: info.omega,
        carrier_phase: phi - info.mu.arg(),
        polarization: polarization_for(info.q),
        peak_amplitude: (2.0 / PI).sqrt() * theta / (tau * mu_abs),
        mu: info.mu,
    })
}

/// Builds the seven-subpulse train for a gate sequence: the three SU(2)
/// pulses in application order (Û_{m3} first), then P1, P2, Q1, Q2 with
/// θ = π/2 and φ_{P2} = η − π, φ_{Q2} = π − χ.
pub fn synthesize(
    seq: &GateSequence,
    basis: &BasisSet,
    options: &SynthesisOptions,
) -> Result<PulseSequence, PulseError> {
    if options.gap_factor < 2.0 {
        return Err(PulseError::GapFactor(options.gap_factor));
    }
    let encoding = QutritEncoding::standard(basis)?;

    let mut pulses: Vec<SubpulseSpec> = Vec::with_capacity(7);
    // SU(2) rotations, first-applied first.
    for rot in seq.rotations.iter().rev() {
        let channel = DriveChannel::from(rot.channel);
        let info = encoding.channel_info(channel, basis)?;
        let label = match channel {
            DriveChannel::A => SubpulseLabel::A,
            DriveChannel::B => SubpulseLabel::B,
            DriveChannel::C => SubpulseLabel::C,
            _ => unreachable!("rotation channels are a, b, c"),
        };
        pulses.push(build_subpulse(
            label,
            &info,
            rot.theta,
            rot.phi,
            options.tau(channel),
        )?);
    }
    // Phase loops: η = π + φ_{P2} − φ_{P1}, χ = π − φ_{Q2} + φ_{Q1}.
    let p_info = encoding.channel_info(DriveChannel::P, basis)?;
    let q_info = encoding.channel_info(DriveChannel::Q, basis)?;
    let half_pi = PI / 2.0;
    pulses.push(build_subpulse(SubpulseLabel::P1, &p_info, half_pi, 0.0, options.tau_p)?);
    pulses.push(build_subpulse(
        SubpulseLabel::P2,
        &p_info,
        half_pi,
        seq.phase.eta - PI,
        options.tau_p,
    )?);
    pulses.push(build_subpulse(SubpulseLabel::Q1, &q_info, half_pi, 0.0, options.tau_q)?);
    pulses.push(build_subpulse(
        SubpulseLabel::Q2,
        &q_info,
        half_pi,
        PI - seq.phase.chi,
        options.tau_q,
    )?);

    // Schedule: time origin at the earliest envelope's left truncation edge.
    // A long pulse following a short one can have the earliest edge, so the
    // whole train shifts until every truncated envelope lies in t >= 0.
    match &options.explicit_centers {
        None => {
            let mut t = options.truncation * pulses[0].tau;
            pulses[0].delay = t;
            for k in 1..pulses.len() {
                t += options.gap_factor * (pulses[k - 1].tau + pulses[k].tau);
                pulses[k].delay = t;
            }
            let earliest = pulses
                .iter()
                .map(|p| p.delay - options.truncation * p.tau)
                .fold(f64::INFINITY, f64::min);
            if earliest < 0.0 {
                for p in pulses.iter_mut() {
                    p.delay -= earliest;
                }
            }
        }
        Some(centers) => {
            if centers.len() != pulses.len() {
                return Err(PulseError::ScheduleLength {
                    expected: pulses.len(),
                    got: centers.len(),
                });
            }
            for (p, &c) in pulses.iter_mut().zip(centers.iter()) {
                p.delay = c;
            }
            for k in 1..pulses.len() {
                let gap = pulses[k].delay - pulses[k - 1].delay;
                let bound = 2.0 * (pulses[k - 1].tau + pulses[k].tau);
                if gap < bound {
                    return Err(PulseError::Scheduling {
                        first: k - 1,
                        second: k,
                        gap,
                        bound,
                    });
                }
            }
        }
    }
    let last = pulses.last().expect("seven subpulses");
    let total_duration = last.delay + options.truncation * last.tau;
    Ok(PulseSequence {
        subpulses: pulses,
        total_duration,
        truncation: options.truncation,
    })
}

/// Complex pulse area μ·∫ε(t)e^{−iωt}dt of one subpulse, by composite
/// Simpson quadrature over the truncated envelope support. ε(t) is the
/// scalar field component driving the subpulse's transition.
pub fn spectral_area(sub: &SubpulseSpec, omega: f64, mu: C64, truncation: f64) -> C64 {
    let (t0, t1) = sub.window(truncation);
    let q = sub.drive_q();
    let slot = (q + 1) as usize;
    let sign = if q.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    // Effective scalar field: μ E(t) = ⟨lo|μ·ε|hi⟩ ⇒ E(t) = (−1)^q ε_{+q}(t).
    let eval = |t: f64| -> C64 {
        let f = sub.field_at(t, truncation);
        sign * f[slot] * C64::from_polar(1.0, -omega * t)
    };
    let step_target = (sub.tau / 20.0).min(0.15 / omega.abs().max(sub.carrier));
    let mut n = ((t1 - t0) / step_target).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let n = n.max(2);
    let h = (t1 - t0) / n as f64;
    let mut acc = eval(t0) + eval(t1);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * eval(t0 + h * k as f64);
    }
    mu * acc * (h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{sequence_from_params, walsh_hadamard_table};
    use crate::rotor::{solve_spectrum, MoleculeSpec};
    use approx::assert_abs_diff_eq;

    fn reference_train() -> (PulseSequence, BasisSet) {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 2).unwrap();
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        let train = synthesize(&seq, &basis, &SynthesisOptions::reference()).unwrap();
        (train, basis)
    }

    #[test]
    fn peak_amplitude_formula() {
        // theta = pi/2, tau = 1, |mu| = 1: sqrt(2/pi) * pi/2 ≈ 1.2533
        let amp = (2.0 / PI).sqrt() * (PI / 2.0);
        assert_abs_diff_eq!(amp, 1.2533141373155003, epsilon = 1e-12);
        let (train, _) = reference_train();
        for p in &train.subpulses {
            let expect = (2.0 / PI).sqrt() * p.theta / (p.tau * p.mu.norm());
            assert_abs_diff_eq!(p.peak_amplitude, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn seven_subpulses_in_order() {
        let (train, _) = reference_train();
        let labels: Vec<&str> = train.subpulses.iter().map(|p| p.label.name()).collect();
        // ordering (c,a,b): b first, then a, then c, then the phase loops
        assert_eq!(labels, ["b", "a", "c", "P1", "P2", "Q1", "Q2"]);
        // centers strictly increasing, spacing >= 2(tau_i + tau_j)
        for k in 1..7 {
            let gap = train.subpulses[k].delay - train.subpulses[k - 1].delay;
            let bound = 2.0 * (train.subpulses[k - 1].tau + train.subpulses[k].tau);
            assert!(gap >= bound, "gap {gap} below bound {bound}");
        }
    }

    #[test]
    fn polarization_by_delta_m() {
        let (train, _) = reference_train();
        let q_of = |name: &str| {
            train
                .subpulses
                .iter()
                .find(|p| p.label.name() == name)
                .unwrap()
                .drive_q()
        };
        assert_eq!(q_of("a"), 1); // |0_00,0> -> |1_01,1> forces sigma+
        assert_eq!(q_of("b"), -1);
        assert_eq!(q_of("c"), 0);
        assert_eq!(q_of("P1"), 0);
        assert_eq!(q_of("Q1"), -1);
    }

    #[test]
    fn field_vanishes_outside_envelopes() {
        let (train, _) = reference_train();
        let f = train.field_at(-50.0);
        assert!(f.iter().all(|z| z.norm() == 0.0));
        // reality: eps_q* = (-1)^q eps_{-q}
        let t = train.subpulses[2].delay + 0.37;
        let f = train.field_at(t);
        for (slot, q) in (-1i32..=1).enumerate() {
            let sign = if q.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let partner = f[(1 - q + 1) as usize - 1];
            assert!((f[slot].conj() - sign * partner).norm() < 1e-12);
        }
    }

    #[test]
    fn pi_pulse_peak_pattern() {
        // isolated q=0 pulse with carrier_phase 0: eps_0(T) = peak * cos(w T)
        let (train, _) = reference_train();
        let mut c = train.subpulses[2].clone(); // c pulse, q=0
        c.carrier_phase = 0.0;
        let f = c.field_at(c.delay, 8.0);
        let expect = c.peak_amplitude * (c.carrier * c.delay).cos();
        assert_abs_diff_eq!(f[1].re, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linearity_of_superposition() {
        let (train, _) = reference_train();
        let t = 0.5 * (train.subpulses[0].delay + train.subpulses[1].delay);
        let total = train.field_at(t);
        let mut acc = [C64::new(0.0, 0.0); 3];
        for p in &train.subpulses {
            let f = p.field_at(t, train.truncation);
            for k in 0..3 {
                acc[k] += f[k];
            }
        }
        for k in 0..3 {
            assert!((total[k] - acc[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn area_closure_on_carrier() {
        let (train, _) = reference_train();
        for p in &train.subpulses {
            let area = spectral_area(p, p.carrier, p.mu, train.truncation);
            let want = C64::from_polar(p.theta, p.phi);
            let rel = (area - want).norm() / p.theta.max(1e-12);
            assert!(
                rel < 1e-4,
                "{}: area {area} vs {want} (rel {rel:.2e})",
                p.label.name()
            );
        }
    }

    #[test]
    fn detuned_area_gaussian_profile() {
        let (train, _) = reference_train();
        let p = &train.subpulses[1]; // a pulse
        let delta = 0.08; // rad/ns
        let on = spectral_area(p, p.carrier, p.mu, train.truncation);
        let off = spectral_area(p, p.carrier + delta, p.mu, train.truncation);
        let expect = (-0.5 * delta * delta * p.tau * p.tau).exp();
        assert_abs_diff_eq!(off.norm() / on.norm(), expect, epsilon = 1e-4);
    }

    #[test]
    fn delay_shift_keeps_complex_area() {
        let (train, _) = reference_train();
        let mut p = train.subpulses[1].clone();
        let base = spectral_area(&p, p.carrier, p.mu, train.truncation);
        p.delay += 1000.0;
        let shifted = spectral_area(&p, p.carrier, p.mu, train.truncation);
        assert!(
            (base - shifted).norm() / base.norm() < 1e-6,
            "area moved: {base} -> {shifted}"
        );
    }

    #[test]
    fn zero_amplitude_pulse_has_zero_area() {
        let (train, _) = reference_train();
        let mut p = train.subpulses[0].clone();
        p.peak_amplitude = 0.0;
        assert_eq!(spectral_area(&p, p.carrier, p.mu, 8.0).norm(), 0.0);
    }

    #[test]
    fn blocked_transition_is_reported() {
        let mut m = MoleculeSpec::propanediol();
        m.mu_c_debye = 0.0; // kills the c and P channels
        let basis = solve_spectrum(&m, 1).unwrap();
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        let err = synthesize(&seq, &basis, &SynthesisOptions::reference()).unwrap_err();
        assert!(matches!(err, PulseError::BlockedTransition { .. }), "{err}");
    }

    #[test]
    fn explicit_schedule_validation() {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 1).unwrap();
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        let mut opts = SynthesisOptions::reference();
        opts.explicit_centers = Some(vec![0.0; 7]);
        let err = synthesize(&seq, &basis, &opts).unwrap_err();
        assert!(matches!(err, PulseError::Scheduling { .. }), "{err}");

        let mut opts = SynthesisOptions::reference();
        opts.gap_factor = 1.0;
        assert!(matches!(
            synthesize(&seq, &basis, &opts),
            Err(PulseError::GapFactor(_))
        ));
    }
}
