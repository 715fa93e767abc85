//! Elementary qutrit operators, composition, target-gate decomposition with
//! admissibility detection, and analytic error-sensitivity coefficients.
//!
//! A general single-qutrit gate is factored as D(η,χ)·Û_{m1}·Û_{m2}·Û_{m3},
//! where each Û_m is an SU(2) rotation on one of the three state pairs and
//! D = diag(1, e^{iη}, e^{iχ}). Six orderings of (m1,m2,m3) exist; the
//! decomposition solves the element equations in closed form and reports
//! orderings whose leftover elements cannot match the target as inadmissible,
//! with the offending element value.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use thiserror::Error;

type C64 = Complex64;
pub type GateMatrix = Matrix3<C64>;
pub type StateVector = Vector3<C64>;

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("target is not unitary (‖U†U − I‖ = {residual:.3e})")]
    NotUnitary { residual: f64 },
    #[error("ordering must be a permutation of the three channels")]
    BadOrdering,
    #[error("input state is not normalized (‖ψ‖ = {norm})")]
    UnnormalizedState { norm: f64 },
    #[error("gate matrix parse error: {0}")]
    Parse(String),
    #[error("least-squares refinement did not converge (residual {0:.3e})")]
    NoConvergence(f64),
}

/// The two-level channel an SU(2) rotation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// couples (|0⟩, |1⟩)
    A,
    /// couples (|1⟩, |2⟩)
    B,
    /// couples (|0⟩, |2⟩)
    C,
}

impl Channel {
    pub fn pair(self) -> (usize, usize) {
        match self {
            Channel::A => (0, 1),
            Channel::B => (1, 2),
            Channel::C => (0, 2),
        }
    }

    /// The basis state the rotation leaves exactly invariant.
    pub fn spectator(self) -> usize {
        match self {
            Channel::A => 2,
            Channel::B => 0,
            Channel::C => 1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Channel::A => 'a',
            Channel::B => 'b',
            Channel::C => 'c',
        }
    }
}

/// An ordering (m1, m2, m3): the gate applies Û_{m3} first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ordering(pub [Channel; 3]);

impl Ordering {
    pub const ALL: [Ordering; 6] = [
        Ordering([Channel::C, Channel::A, Channel::B]),
        Ordering([Channel::B, Channel::C, Channel::A]),
        Ordering([Channel::B, Channel::A, Channel::C]),
        Ordering([Channel::A, Channel::C, Channel::B]),
        Ordering([Channel::C, Channel::B, Channel::A]),
        Ordering([Channel::A, Channel::B, Channel::C]),
    ];

    /// The four orderings that admit real solutions for the Walsh-Hadamard
    /// gate, in the row order of the reference parameter table.
    pub const ADMISSIBLE_FT: [Ordering; 4] = [
        Ordering([Channel::C, Channel::A, Channel::B]),
        Ordering([Channel::B, Channel::C, Channel::A]),
        Ordering([Channel::B, Channel::A, Channel::C]),
        Ordering([Channel::A, Channel::C, Channel::B]),
    ];

    pub fn parse(s: &str) -> Result<Self, GateError> {
        let chars: Vec<char> = s.trim().to_ascii_lowercase().chars().collect();
        if chars.len() != 3 {
            return Err(GateError::BadOrdering);
        }
        let mut chans = [Channel::A; 3];
        for (i, c) in chars.iter().enumerate() {
            chans[i] = match c {
                'a' => Channel::A,
                'b' => Channel::B,
                'c' => Channel::C,
                _ => return Err(GateError::BadOrdering),
            };
        }
        let o = Ordering(chans);
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), GateError> {
        let [m1, m2, m3] = self.0;
        if m1 == m2 || m2 == m3 || m1 == m3 {
            return Err(GateError::BadOrdering);
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        self.0.iter().map(|c| c.letter()).collect()
    }
}

/// SU(2) rotation parameters: half-angle θ and complex-area phase φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementaryRotation {
    pub channel: Channel,
    pub theta: f64,
    pub phi: f64,
}

/// Diagonal phase gate diag(1, e^{iη}, e^{iχ}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGate {
    pub eta: f64,
    pub chi: f64,
}

/// A full decomposition: three rotations in application order plus the
/// final phase gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSequence {
    pub ordering: Ordering,
    /// Rotations indexed by ordering position (rotations[0] is Û_{m1},
    /// applied last of the three).
    pub rotations: [ElementaryRotation; 3],
    pub phase: PhaseGate,
    /// Global phase γ such that compose(self) = e^{iγ}·target.
    pub global_phase: f64,
}

impl GateSequence {
    pub fn rotation(&self, channel: Channel) -> &ElementaryRotation {
        self.rotations
            .iter()
            .find(|r| r.channel == channel)
            .expect("ordering is a permutation, every channel present")
    }
}

/// Exact matrix of one SU(2) rotation: cosθ on the pair diagonal,
/// i·sinθ·e^{±iφ} off-diagonal, spectator untouched.
pub fn elementary_unitary(rot: &ElementaryRotation) -> GateMatrix {
    let (lo, hi) = rot.channel.pair();
    let (c, s) = (rot.theta.cos(), rot.theta.sin());
    let mut u = GateMatrix::identity();
    u[(lo, lo)] = C64::new(c, 0.0);
    u[(hi, hi)] = C64::new(c, 0.0);
    u[(lo, hi)] = C64::i() * s * C64::from_polar(1.0, rot.phi);
    u[(hi, lo)] = C64::i() * s * C64::from_polar(1.0, -rot.phi);
    u
}

/// Derivative of [`elementary_unitary`] with respect to θ.
fn elementary_dtheta(rot: &ElementaryRotation) -> GateMatrix {
    let (lo, hi) = rot.channel.pair();
    let (c, s) = (rot.theta.cos(), rot.theta.sin());
    let mut u = GateMatrix::zeros();
    u[(lo, lo)] = C64::new(-s, 0.0);
    u[(hi, hi)] = C64::new(-s, 0.0);
    u[(lo, hi)] = C64::i() * c * C64::from_polar(1.0, rot.phi);
    u[(hi, lo)] = C64::i() * c * C64::from_polar(1.0, -rot.phi);
    u
}

/// Derivative of [`elementary_unitary`] with respect to φ.
fn elementary_dphi(rot: &ElementaryRotation) -> GateMatrix {
    let (lo, hi) = rot.channel.pair();
    let s = rot.theta.sin();
    let mut u = GateMatrix::zeros();
    u[(lo, hi)] = -s * C64::from_polar(1.0, rot.phi);
    u[(hi, lo)] = s * C64::from_polar(1.0, -rot.phi);
    u
}

pub fn phase_unitary(p: &PhaseGate) -> GateMatrix {
    GateMatrix::from_diagonal(&Vector3::new(
        C64::new(1.0, 0.0),
        C64::from_polar(1.0, p.eta),
        C64::from_polar(1.0, p.chi),
    ))
}

/// D(η,χ)·Û_{m1}·Û_{m2}·Û_{m3} — Û_{m3} acts first.
pub fn compose(seq: &GateSequence) -> GateMatrix {
    phase_unitary(&seq.phase)
        * elementary_unitary(&seq.rotations[0])
        * elementary_unitary(&seq.rotations[1])
        * elementary_unitary(&seq.rotations[2])
}

/// The qutrit Walsh-Hadamard (discrete Fourier) gate.
pub fn walsh_hadamard() -> GateMatrix {
    let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
    let inv = 1.0 / 3.0_f64.sqrt();
    GateMatrix::from_row_slice(&[
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        w,
        w.conj(),
        C64::new(1.0, 0.0),
        w.conj(),
        w,
    ]).map(|z| z * inv)
}

pub fn unitarity_residual(u: &GateMatrix) -> f64 {
    let r = u.adjoint() * u - GateMatrix::identity();
    r.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn mod_2pi(x: f64) -> f64 {
    let mut v = x.rem_euclid(TAU);
    if v >= TAU - 1e-10 {
        v = 0.0;
    }
    if v.abs() < 1e-13 {
        v = 0.0;
    }
    v
}

/// Result of a decomposition attempt for one ordering.
#[derive(Debug, Clone)]
pub enum Decomposition {
    Admissible(GateSequence),
    Inadmissible(ResidualReport),
}

impl Decomposition {
    pub fn admissible(&self) -> Option<&GateSequence> {
        match self {
            Decomposition::Admissible(s) => Some(s),
            Decomposition::Inadmissible(_) => None,
        }
    }
}

/// Why an ordering was rejected: the candidate parameters solve the anchor
/// elements, but the listed element of the composed product cannot reach the
/// target value.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub ordering: Ordering,
    pub candidate: GateSequence,
    /// (row, col) of the worst element, 0-indexed.
    pub element: (usize, usize),
    /// Value of that element in the composed candidate.
    pub composed: C64,
    /// Value required by the target.
    pub required: C64,
    pub max_residual: f64,
    /// Every element whose composed value misses the target beyond
    /// tolerance: (row, col, composed, required).
    pub offending: Vec<(usize, usize, C64, C64)>,
}

impl ResidualReport {
    /// Composed value of one offending element, if it is offending.
    pub fn offending_value(&self, row: usize, col: usize) -> Option<C64> {
        self.offending
            .iter()
            .find(|(r, c, _, _)| *r == row && *c == col)
            .map(|(_, _, v, _)| *v)
    }
}

/// Admissibility tolerance on composed-vs-target elements.
pub const DECOMPOSE_TOL: f64 = 1e-8;
const ANCHOR_EPS: f64 = 1e-12;

/// Decomposes `target` for the given ordering by modulus/argument extraction
/// on the solvable element chain, verifying all nine elements afterwards.
///
/// Targets are taken modulo a global phase: the returned sequence composes to
/// e^{iγ}·target with γ recorded in the sequence. Angles land in [0, π/2] and
/// phases in [0, 2π).
pub fn decompose(target: &GateMatrix, ordering: Ordering) -> Result<Decomposition, GateError> {
    ordering.validate()?;
    let ur = unitarity_residual(target);
    if ur > 1e-10 {
        return Err(GateError::NotUnitary { residual: ur });
    }

    let [m1, m2, m3] = ordering.0;
    let (k1, k2, k3) = (m1.spectator(), m2.spectator(), m3.spectator());
    let sgn = |a: usize, b: usize| if a < b { 1.0 } else { -1.0 };
    let (s1, s2, s3) = (sgn(k2, k3), sgn(k1, k3), sgn(k1, k2));

    // Global-phase slice: orderings with k2 != 0 carry a redundant diagonal
    // condition absorbed by rotating the target so P[0,0] is real positive.
    let mut gamma = 0.0;
    if k2 != 0 {
        let anchor = target[(0, 0)];
        if anchor.norm() <= ANCHOR_EPS {
            return solve_least_squares(target, ordering);
        }
        gamma = -anchor.arg();
    }
    let phase_rot = C64::from_polar(1.0, gamma);
    let p = target.map(|z| z * phase_rot);

    let arg_of = |z: C64| if z.norm() > ANCHOR_EPS { z.arg() } else { 0.0 };

    // Rotation angles from element moduli.
    let st2 = p[(k1, k3)].norm().min(1.0);
    let th2 = st2.asin();
    let ct2 = th2.cos();
    if ct2 < 1e-9 {
        return solve_least_squares(target, ordering);
    }
    let st3 = (p[(k1, k2)].norm() / ct2).min(1.0);
    let th3 = st3.asin();
    let st1 = (p[(k2, k3)].norm() / ct2).min(1.0);
    let th1 = st1.asin();
    let (ct1, ct3) = (th1.cos(), th3.cos());

    // Phase chain.
    let d1 = arg_of(p[(k1, k1)]);
    let ph3 = if st3 > ANCHOR_EPS {
        s3 * (arg_of(p[(k1, k2)]) - d1 - PI / 2.0)
    } else {
        0.0
    };
    let ph2 = if st2 > ANCHOR_EPS {
        s2 * (arg_of(p[(k1, k3)]) - d1 - PI / 2.0)
    } else {
        0.0
    };
    let d3 = arg_of(p[(k3, k3)]);

    let (ph1, d2);
    if k2 == 0 {
        d2 = 0.0;
        ph1 = if st1 > ANCHOR_EPS {
            s1 * (arg_of(p[(k2, k3)]) - PI / 2.0)
        } else {
            0.0
        };
    } else {
        // Element (k3,k2) = e^{i d3}·(i·st1·ct3·e^{-i s1 φ1}
        //                              − ct1·st2·st3·e^{i(s3 φ3 − s2 φ2)})
        let denom = st1 * ct3;
        if denom > ANCHOR_EPS {
            let b = ct1 * st2 * st3 * C64::from_polar(1.0, s3 * ph3 - s2 * ph2);
            let z = (p[(k3, k2)] * C64::from_polar(1.0, -d3) + b) / (C64::i() * denom);
            ph1 = -s1 * z.arg();
        } else {
            ph1 = 0.0;
        }
        d2 = if st1 * ct2 > ANCHOR_EPS {
            arg_of(p[(k2, k3)]) - PI / 2.0 - s1 * ph1
        } else if ct1 * ct3 > ANCHOR_EPS {
            // st1 ≈ 0 leaves the (k2,k3) anchor empty; fall back to the
            // diagonal element (k2,k2).
            let inner = C64::new(ct1 * ct3, 0.0)
                - C64::i() * st1 * st2 * st3
                    * C64::from_polar(1.0, s1 * ph1 - s2 * ph2 + s3 * ph3);
            arg_of(p[(k2, k2)]) - inner.arg()
        } else {
            0.0
        };
    }

    let dd = |k: usize| -> f64 {
        if k == k1 {
            d1
        } else if k == k2 {
            d2
        } else {
            d3
        }
    };
    let (eta, chi) = (dd(1), dd(2));

    let th = |m: Channel| -> f64 {
        if m == m1 {
            th1
        } else if m == m2 {
            th2
        } else {
            th3
        }
    };
    let ph = |m: Channel| -> f64 {
        if m == m1 {
            ph1
        } else if m == m2 {
            ph2
        } else {
            ph3
        }
    };

    let seq = GateSequence {
        ordering,
        rotations: [
            ElementaryRotation {
                channel: m1,
                theta: th(m1),
                phi: mod_2pi(ph(m1)),
            },
            ElementaryRotation {
                channel: m2,
                theta: th(m2),
                phi: mod_2pi(ph(m2)),
            },
            ElementaryRotation {
                channel: m3,
                theta: th(m3),
                phi: mod_2pi(ph(m3)),
            },
        ],
        phase: PhaseGate {
            eta: mod_2pi(eta),
            chi: mod_2pi(chi),
        },
        global_phase: mod_2pi(gamma),
    };

    Ok(verify(seq, &p, ordering))
}

/// Composes the candidate and compares all nine elements against the
/// (phase-normalized) target.
fn verify(seq: GateSequence, normalized_target: &GateMatrix, ordering: Ordering) -> Decomposition {
    let composed = compose(&seq);
    let mut worst = 0.0;
    let mut worst_el = (0usize, 0usize);
    let mut offending = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let res = (composed[(r, c)] - normalized_target[(r, c)]).norm();
            if res > DECOMPOSE_TOL {
                offending.push((r, c, composed[(r, c)], normalized_target[(r, c)]));
            }
            if res > worst {
                worst = res;
                worst_el = (r, c);
            }
        }
    }
    if worst <= DECOMPOSE_TOL {
        Decomposition::Admissible(seq)
    } else {
        Decomposition::Inadmissible(ResidualReport {
            ordering,
            element: worst_el,
            composed: composed[worst_el],
            required: normalized_target[worst_el],
            max_residual: worst,
            candidate: seq,
            offending,
        })
    }
}

/// Damped least-squares fallback over the eight gate parameters plus the
/// global phase, for targets whose anchor elements are degenerate.
fn solve_least_squares(
    target: &GateMatrix,
    ordering: Ordering,
) -> Result<Decomposition, GateError> {
    let [m1, m2, m3] = ordering.0;
    let build = |x: &[f64; 9]| -> GateSequence {
        GateSequence {
            ordering,
            rotations: [
                ElementaryRotation {
                    channel: m1,
                    theta: x[0],
                    phi: x[1],
                },
                ElementaryRotation {
                    channel: m2,
                    theta: x[2],
                    phi: x[3],
                },
                ElementaryRotation {
                    channel: m3,
                    theta: x[4],
                    phi: x[5],
                },
            ],
            phase: PhaseGate {
                eta: x[6],
                chi: x[7],
            },
            global_phase: x[8],
        }
    };
    let residual = |x: &[f64; 9]| -> [f64; 18] {
        let rot = C64::from_polar(1.0, x[8]);
        let diff = compose(&build(x)) - target.map(|z| z * rot);
        let mut r = [0.0; 18];
        for (k, z) in diff.iter().enumerate() {
            r[2 * k] = z.re;
            r[2 * k + 1] = z.im;
        }
        r
    };

    let starts: [[f64; 9]; 4] = [
        [0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0],
        [1.2, 2.0, 0.3, 4.0, 0.9, 1.0, 2.0, 4.0, 0.5],
        [0.2, 5.0, 1.3, 1.5, 0.4, 3.0, 4.0, 1.0, 2.5],
        [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
    ];
    let mut best: Option<([f64; 9], f64)> = None;
    for start in starts {
        let mut x = start;
        let mut lambda = 1e-3;
        for _ in 0..250 {
            let r = residual(&x);
            let cost: f64 = r.iter().map(|v| v * v).sum();
            // numeric Jacobian, central differences
            let mut jt_j = nalgebra::SMatrix::<f64, 9, 9>::zeros();
            let mut jt_r = nalgebra::SVector::<f64, 9>::zeros();
            let h = 1e-6;
            let mut jac = [[0.0_f64; 9]; 18];
            for p in 0..9 {
                let mut xp = x;
                xp[p] += h;
                let mut xm = x;
                xm[p] -= h;
                let (rp, rm) = (residual(&xp), residual(&xm));
                for k in 0..18 {
                    jac[k][p] = (rp[k] - rm[k]) / (2.0 * h);
                }
            }
            for i in 0..9 {
                for j in 0..9 {
                    jt_j[(i, j)] = (0..18).map(|k| jac[k][i] * jac[k][j]).sum();
                }
                jt_r[i] = (0..18).map(|k| jac[k][i] * r[k]).sum();
            }
            let mut stepped = false;
            for _ in 0..8 {
                let damped = jt_j + nalgebra::SMatrix::<f64, 9, 9>::identity() * lambda;
                if let Some(delta) = damped.lu().solve(&(-jt_r)) {
                    let mut xn = x;
                    for p in 0..9 {
                        xn[p] += delta[p];
                    }
                    let rn = residual(&xn);
                    let cost_n: f64 = rn.iter().map(|v| v * v).sum();
                    if cost_n < cost {
                        x = xn;
                        lambda = (lambda * 0.3).max(1e-12);
                        stepped = true;
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !stepped {
                break;
            }
            let r_now = residual(&x);
            if r_now.iter().map(|v| v * v).sum::<f64>() < 1e-24 {
                break;
            }
        }
        let cost: f64 = residual(&x).iter().map(|v| v * v).sum();
        if best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((x, cost));
        }
    }
    let (mut x, _) = best.expect("at least one start evaluated");

    // Canonicalize: θ ≥ 0 (θ → -θ absorbed by φ → φ+π), phases in [0, 2π).
    for p in [0, 2, 4] {
        x[p] = x[p].rem_euclid(TAU);
        if x[p] > PI {
            // θ and 2π−θ give the same cos/sin pair up to φ → φ+π twice; map back
            x[p] = TAU - x[p];
            x[p + 1] += PI;
        }
    }
    for p in [1, 3, 5, 6, 7, 8] {
        x[p] = mod_2pi(x[p]);
    }
    let seq = build(&x);
    let rot = C64::from_polar(1.0, x[8]);
    let normalized = target.map(|z| z * rot);
    Ok(verify(seq, &normalized, ordering))
}

/// Which SU(2) parameters a relative control error perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// θ_m → θ_m(1+ξ) on all three rotations.
    Amplitude,
    /// φ_m → φ_m(1+ζ) on all three rotations.
    Phase,
}

/// Relative parameter error applied to the SU(2) rotations; η and χ are
/// never perturbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub kind: ErrorKind,
    pub magnitude: f64,
}

impl ErrorModel {
    pub fn apply(&self, seq: &GateSequence) -> GateSequence {
        let mut out = seq.clone();
        for rot in out.rotations.iter_mut() {
            match self.kind {
                ErrorKind::Amplitude => rot.theta *= 1.0 + self.magnitude,
                ErrorKind::Phase => rot.phi *= 1.0 + self.magnitude,
            }
        }
        out
    }
}

/// Hermitian error generator Ĥ_α = i Û_tar† ∂Û_gen/∂α at α = 0, from the
/// analytic parameter derivatives of the elementary rotations.
pub fn error_generator(seq: &GateSequence, kind: ErrorKind) -> GateMatrix {
    let u_tar = compose(seq);
    let d = phase_unitary(&seq.phase);
    let mats: Vec<GateMatrix> = seq.rotations.iter().map(elementary_unitary).collect();
    let mut du = GateMatrix::zeros();
    for i in 0..3 {
        let rot = &seq.rotations[i];
        let (weight, dm) = match kind {
            ErrorKind::Amplitude => (rot.theta, elementary_dtheta(rot)),
            ErrorKind::Phase => (rot.phi, elementary_dphi(rot)),
        };
        if weight == 0.0 {
            continue;
        }
        let factor_i = |k: usize| if k == i { dm } else { mats[k] };
        du += (d * factor_i(0) * factor_i(1) * factor_i(2)).map(|z| z * weight);
    }
    let h = (u_tar.adjoint() * du).map(|z| z * C64::i());
    // Symmetrize away the last rounding; H is Hermitian analytically.
    (h + h.adjoint()).map(|z| z * 0.5)
}

/// Gate-level error coefficient C_α = d·Tr(Ĥ²) − [Tr(Ĥ)]² with d = 3.
pub fn gate_error_coefficient(seq: &GateSequence, kind: ErrorKind) -> f64 {
    let h = error_generator(seq, kind);
    let tr_h: C64 = h.trace();
    let tr_h2: C64 = (h * h).trace();
    3.0 * tr_h2.re - tr_h.re * tr_h.re
}

/// State-level coefficient ⟨Ĥ²⟩ − ⟨Ĥ⟩² for a normalized input.
pub fn state_error_coefficient(
    seq: &GateSequence,
    kind: ErrorKind,
    psi_in: &StateVector,
) -> Result<f64, GateError> {
    let norm = psi_in.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(GateError::UnnormalizedState { norm });
    }
    let h = error_generator(seq, kind);
    let h_psi = h * psi_in;
    let mean = psi_in.dotc(&h_psi).re;
    let mean_sq = h_psi.norm_squared();
    Ok(mean_sq - mean * mean)
}

/// Writes a 3×3 matrix as structured text: nine "re im" lines, row-major,
/// 17 significant digits, preceded by a comment header.
pub fn write_gate_matrix(u: &GateMatrix) -> String {
    let mut s = String::from("# 3x3 complex matrix, row-major, one \"re im\" pair per line\n");
    for r in 0..3 {
        for c in 0..3 {
            let z = u[(r, c)];
            s.push_str(&format!("{:.17e} {:.17e}\n", z.re, z.im));
        }
    }
    s
}

/// Parses the format written by [`write_gate_matrix`]; `#` lines and blank
/// lines are ignored.
pub fn parse_gate_matrix(text: &str) -> Result<GateMatrix, GateError> {
    let mut entries = Vec::with_capacity(9);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let re: f64 = parts
            .next()
            .ok_or_else(|| GateError::Parse(format!("line {}: missing real part", lineno + 1)))?
            .parse()
            .map_err(|e| GateError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let im: f64 = parts
            .next()
            .ok_or_else(|| {
                GateError::Parse(format!("line {}: missing imaginary part", lineno + 1))
            })?
            .parse()
            .map_err(|e| GateError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if parts.next().is_some() {
            return Err(GateError::Parse(format!(
                "line {}: expected exactly two numbers",
                lineno + 1
            )));
        }
        if !re.is_finite() || !im.is_finite() {
            return Err(GateError::Parse(format!(
                "line {}: non-finite entry",
                lineno + 1
            )));
        }
        entries.push(C64::new(re, im));
    }
    if entries.len() != 9 {
        return Err(GateError::Parse(format!(
            "expected 9 entries, found {}",
            entries.len()
        )));
    }
    Ok(GateMatrix::from_row_slice(&entries))
}

/// Reference decomposition parameters of the Walsh-Hadamard gate for the
/// four admissible orderings: (θa, φa, θb, φb, θc, φc, η, χ).
pub fn walsh_hadamard_table() -> [(Ordering, [f64; 8]); 4] {
    let asr3 = (1.0 / 3.0_f64.sqrt()).asin();
    [
        (
            Ordering::ADMISSIBLE_FT[0],
            [
                asr3,
                7.0 * PI / 6.0,
                PI / 4.0,
                PI / 6.0,
                PI / 4.0,
                4.0 * PI / 3.0,
                2.0 * PI / 3.0,
                5.0 * PI / 6.0,
            ],
        ),
        (
            Ordering::ADMISSIBLE_FT[1],
            [
                PI / 4.0,
                3.0 * PI / 2.0,
                PI / 4.0,
                0.0,
                asr3,
                3.0 * PI / 2.0,
                5.0 * PI / 6.0,
                2.0 * PI / 3.0,
            ],
        ),
        (
            Ordering::ADMISSIBLE_FT[2],
            [
                asr3,
                3.0 * PI / 2.0,
                PI / 4.0,
                0.0,
                PI / 4.0,
                3.0 * PI / 2.0,
                2.0 * PI / 3.0,
                5.0 * PI / 6.0,
            ],
        ),
        (
            Ordering::ADMISSIBLE_FT[3],
            [
                PI / 4.0,
                4.0 * PI / 3.0,
                PI / 4.0,
                11.0 * PI / 6.0,
                asr3,
                7.0 * PI / 6.0,
                5.0 * PI / 6.0,
                2.0 * PI / 3.0,
            ],
        ),
    ]
}

/// Builds a [`GateSequence`] from a parameter row of [`walsh_hadamard_table`].
pub fn sequence_from_params(ordering: Ordering, p: &[f64; 8]) -> GateSequence {
    let rot = |ch: Channel| -> ElementaryRotation {
        let (theta, phi) = match ch {
            Channel::A => (p[0], p[1]),
            Channel::B => (p[2], p[3]),
            Channel::C => (p[4], p[5]),
        };
        ElementaryRotation {
            channel: ch,
            theta,
            phi,
        }
    };
    GateSequence {
        ordering,
        rotations: [rot(ordering.0[0]), rot(ordering.0[1]), rot(ordering.0[2])],
        phase: PhaseGate {
            eta: p[6],
            chi: p[7],
        },
        global_phase: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_diff(a: &GateMatrix, b: &GateMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn elementary_pi2_maps_zero_to_one() {
        let u = elementary_unitary(&ElementaryRotation {
            channel: Channel::A,
            theta: PI / 2.0,
            phi: 0.0,
        });
        // |0> -> i|1>
        let out = u * StateVector::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        assert_abs_diff_eq!((out[1] - C64::i()).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn elementary_zero_is_identity() {
        for ch in [Channel::A, Channel::B, Channel::C] {
            let u = elementary_unitary(&ElementaryRotation {
                channel: ch,
                theta: 0.0,
                phi: 1.3,
            });
            assert!(max_diff(&u, &GateMatrix::identity()) < 1e-15);
        }
    }

    #[test]
    fn elementary_c_entry() {
        let u = elementary_unitary(&ElementaryRotation {
            channel: Channel::C,
            theta: PI / 4.0,
            phi: 4.0 * PI / 3.0,
        });
        let expect = C64::i() * (PI / 4.0).sin() * C64::from_polar(1.0, 4.0 * PI / 3.0);
        assert_abs_diff_eq!((u[(0, 2)] - expect).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn phase_gate_values() {
        let p = PhaseGate {
            eta: 2.0 * PI / 3.0,
            chi: 5.0 * PI / 6.0,
        };
        let u = phase_unitary(&p);
        assert_abs_diff_eq!((u[(1, 1)] - C64::from_polar(1.0, p.eta)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((u[(2, 2)] - C64::from_polar(1.0, p.chi)).norm(), 0.0, epsilon = 1e-15);
        // eta = pi + phi_P2 - phi_P1 inversion
        let (phi_p1, phi_p2) = (0.0, p.eta - PI);
        assert_abs_diff_eq!(PI + phi_p2 - phi_p1, p.eta, epsilon = 1e-15);
    }

    #[test]
    fn table_rows_compose_to_walsh_hadamard() {
        let uft = walsh_hadamard();
        for (ordering, params) in walsh_hadamard_table() {
            let seq = sequence_from_params(ordering, &params);
            let diff = max_diff(&compose(&seq), &uft);
            assert!(
                diff < 1e-9,
                "ordering {} composes with residual {diff:.2e}",
                ordering.name()
            );
        }
    }

    #[test]
    fn identity_composes_from_zero_sequence() {
        let seq = sequence_from_params(Ordering::ALL[0], &[0.0; 8]);
        assert!(max_diff(&compose(&seq), &GateMatrix::identity()) < 1e-15);
    }

    #[test]
    fn decompose_reproduces_table() {
        let uft = walsh_hadamard();
        for (ordering, params) in walsh_hadamard_table() {
            let dec = decompose(&uft, ordering).unwrap();
            let seq = dec
                .admissible()
                .unwrap_or_else(|| panic!("{} should be admissible", ordering.name()));
            let got = [
                seq.rotation(Channel::A).theta,
                seq.rotation(Channel::A).phi,
                seq.rotation(Channel::B).theta,
                seq.rotation(Channel::B).phi,
                seq.rotation(Channel::C).theta,
                seq.rotation(Channel::C).phi,
                seq.phase.eta,
                seq.phase.chi,
            ];
            for (g, w) in got.iter().zip(params.iter()) {
                let d = (g - w).rem_euclid(TAU).min((w - g).rem_euclid(TAU));
                assert!(
                    d < 1e-9,
                    "{}: parameter mismatch {g} vs {w}",
                    ordering.name()
                );
            }
        }
    }

    #[test]
    fn decompose_identity_gives_zero_parameters() {
        for ordering in Ordering::ALL {
            let dec = decompose(&GateMatrix::identity(), ordering).unwrap();
            let seq = dec.admissible().expect("identity decomposes trivially");
            for rot in &seq.rotations {
                assert_abs_diff_eq!(rot.theta, 0.0, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(seq.phase.eta, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(seq.phase.chi, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn inadmissible_orderings_report_closed_form_residuals() {
        let uft = walsh_hadamard();
        let s3 = 3.0_f64.sqrt();

        let cba = Ordering([Channel::C, Channel::B, Channel::A]);
        let rep = match decompose(&uft, cba).unwrap() {
            Decomposition::Inadmissible(r) => r,
            Decomposition::Admissible(_) => panic!("cba must be inadmissible"),
        };
        let m12 = C64::new(0.25 + s3 / 12.0, 0.25 - s3 / 4.0);
        let got = rep.offending_value(0, 1).expect("M12 must offend");
        assert!((got - m12).norm() < 1e-12, "got {got}");

        let abc = Ordering([Channel::A, Channel::B, Channel::C]);
        let rep = match decompose(&uft, abc).unwrap() {
            Decomposition::Inadmissible(r) => r,
            Decomposition::Admissible(_) => panic!("abc must be inadmissible"),
        };
        let m11 = C64::new(0.5 + 1.0 / (4.0 * s3), -0.25);
        let got = rep.offending_value(0, 0).expect("M11 must offend");
        assert!((got - m11).norm() < 1e-12, "got {got}");
    }

    #[test]
    fn exactly_four_admissible_for_walsh_hadamard() {
        let uft = walsh_hadamard();
        let n = Ordering::ALL
            .iter()
            .filter(|o| decompose(&uft, **o).unwrap().admissible().is_some())
            .count();
        assert_eq!(n, 4);
    }

    #[test]
    fn decompose_rejects_non_unitary() {
        let mut m = walsh_hadamard();
        m[(0, 0)] += C64::new(1e-3, 0.0);
        assert!(matches!(
            decompose(&m, Ordering::ALL[0]),
            Err(GateError::NotUnitary { .. })
        ));
    }

    #[test]
    fn decompose_handles_degenerate_anchor() {
        // X-type gate on (0,1): P[0,0] = 0 defeats the closed-form anchor.
        let x01 = elementary_unitary(&ElementaryRotation {
            channel: Channel::A,
            theta: PI / 2.0,
            phi: 0.0,
        });
        let dec = decompose(&x01, Ordering([Channel::C, Channel::A, Channel::B])).unwrap();
        let seq = dec.admissible().expect("x01 is a single a-rotation");
        let composed = compose(&seq);
        let rot = C64::from_polar(1.0, seq.global_phase);
        assert!(max_diff(&composed, &x01.map(|z| z * rot)) < 1e-8);
    }

    #[test]
    fn error_generator_is_hermitian_and_matches_finite_difference() {
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        for kind in [ErrorKind::Amplitude, ErrorKind::Phase] {
            let h = error_generator(&seq, kind);
            assert!(max_diff(&h, &h.adjoint()) < 1e-10);

            // central finite difference of the composed gate
            let u_tar = compose(&seq);
            let step = 1e-5;
            let up = compose(
                &ErrorModel {
                    kind,
                    magnitude: step,
                }
                .apply(&seq),
            );
            let um = compose(
                &ErrorModel {
                    kind,
                    magnitude: -step,
                }
                .apply(&seq),
            );
            let fd = (u_tar.adjoint() * (up - um)).map(|z| z * C64::i() / (2.0 * step));
            assert!(
                max_diff(&h, &fd) < 1e-8,
                "{kind:?} generator disagrees with finite difference"
            );
        }
    }

    #[test]
    fn zero_sequence_has_zero_generator() {
        let seq = sequence_from_params(Ordering::ALL[0], &[0.0; 8]);
        let h = error_generator(&seq, ErrorKind::Amplitude);
        assert!(h.iter().all(|z| z.norm() < 1e-15));
        assert_abs_diff_eq!(gate_error_coefficient(&seq, ErrorKind::Amplitude), 0.0);
    }

    #[test]
    fn amplitude_gate_coefficient_is_ordering_independent() {
        let cs: Vec<f64> = walsh_hadamard_table()
            .iter()
            .map(|(o, p)| gate_error_coefficient(&sequence_from_params(*o, p), ErrorKind::Amplitude))
            .collect();
        for c in &cs[1..] {
            assert_abs_diff_eq!(*c, cs[0], epsilon = 1e-9);
        }
        assert!(cs[0] >= 0.0);
    }

    #[test]
    fn phase_coefficient_largest_for_fourth_sequence() {
        let cs: Vec<f64> = walsh_hadamard_table()
            .iter()
            .map(|(o, p)| gate_error_coefficient(&sequence_from_params(*o, p), ErrorKind::Phase))
            .collect();
        assert!(cs[3] > cs[0], "sequence 4 should be most phase-sensitive");
    }

    #[test]
    fn state_coefficient_pairings() {
        let table = walsh_hadamard_table();
        let seqs: Vec<GateSequence> = table
            .iter()
            .map(|(o, p)| sequence_from_params(*o, p))
            .collect();
        let psi0 = StateVector::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let c0: Vec<f64> = seqs
            .iter()
            .map(|s| state_error_coefficient(s, ErrorKind::Amplitude, &psi0).unwrap())
            .collect();
        assert_abs_diff_eq!(c0[0], c0[3], epsilon = 1e-9);
        assert_abs_diff_eq!(c0[1], c0[2], epsilon = 1e-9);

        let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
        let inv = 1.0 / 3.0_f64.sqrt();
        let psi2 = StateVector::new(C64::new(inv, 0.0), w * inv, w.conj() * inv);
        let c2: Vec<f64> = seqs
            .iter()
            .map(|s| state_error_coefficient(s, ErrorKind::Amplitude, &psi2).unwrap())
            .collect();
        assert_abs_diff_eq!(c2[0], c2[1], epsilon = 1e-9);
        assert_abs_diff_eq!(c2[0], c2[2], epsilon = 1e-9);
        assert!((c2[3] - c2[0]).abs() > 1e-3, "sequence 4 must differ");
    }

    #[test]
    fn variance_vanishes_in_eigenstate() {
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        let h = error_generator(&seq, ErrorKind::Amplitude);
        let eig = nalgebra::SymmetricEigen::new(h);
        let v = eig.eigenvectors.column(0).into_owned();
        let psi = StateVector::new(v[0], v[1], v[2]);
        let c = state_error_coefficient(&seq, ErrorKind::Amplitude, &psi).unwrap();
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn state_coefficient_rejects_unnormalized() {
        let (ordering, params) = &walsh_hadamard_table()[0];
        let seq = sequence_from_params(*ordering, params);
        let psi = StateVector::new(C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        assert!(matches!(
            state_error_coefficient(&seq, ErrorKind::Amplitude, &psi),
            Err(GateError::UnnormalizedState { .. })
        ));
    }

    #[test]
    fn gate_matrix_text_roundtrip() {
        let u = walsh_hadamard();
        let text = write_gate_matrix(&u);
        let back = parse_gate_matrix(&text).unwrap();
        assert!(max_diff(&u, &back) < 1e-16);
        assert!(parse_gate_matrix("1 2\n3").is_err());
        assert!(parse_gate_matrix("").is_err());
    }
}
