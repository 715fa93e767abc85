//! Fidelity measures, Gell-Mann Bloch vectors, and error-trajectory
//! extraction for the projected qutrit maps.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use num_complex::Complex64;
use thiserror::Error;

use crate::gates::{unitarity_residual, GateMatrix, StateVector};

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("target is not unitary (residual {0:.3e})")]
    NotUnitary(f64),
    #[error("input state is not normalized (‖ψ‖ = {0})")]
    UnnormalizedState(f64),
    #[error("density matrix violates Hermiticity/trace (residual {0:.3e})")]
    BadDensity(f64),
    #[error("trajectory time grids differ at sample {index}: {a} vs {b} ns")]
    TimeGridMismatch { index: usize, a: f64, b: f64 },
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// The eight Gell-Mann matrices λ₁..λ₈, Tr(λ_j λ_k) = 2δ_{jk}.
pub fn gell_mann(k: usize) -> Matrix3<C64> {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::i();
    let s3 = 1.0 / 3.0_f64.sqrt();
    match k {
        1 => Matrix3::new(z, one, z, one, z, z, z, z, z),
        2 => Matrix3::new(z, -i, z, i, z, z, z, z, z),
        3 => Matrix3::new(one, z, z, z, -one, z, z, z, z),
        4 => Matrix3::new(z, z, one, z, z, z, one, z, z),
        5 => Matrix3::new(z, z, -i, z, z, z, i, z, z),
        6 => Matrix3::new(z, z, z, z, z, one, z, one, z),
        7 => Matrix3::new(z, z, z, z, z, -i, z, i, z),
        8 => Matrix3::new(
            C64::new(s3, 0.0),
            z,
            z,
            z,
            C64::new(s3, 0.0),
            z,
            z,
            z,
            C64::new(-2.0 * s3, 0.0),
        ),
        _ => panic!("Gell-Mann index must be 1..=8, got {k}"),
    }
}

/// Generalized Bloch vector s_k = Tr(ρ λ_k) at a sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector8 {
    pub s: [f64; 8],
    pub time_ns: f64,
}

impl BlochVector8 {
    pub fn norm_sqr(&self) -> f64 {
        self.s.iter().map(|v| v * v).sum()
    }
}

/// Average gate fidelity [Tr(M†M) + |Tr(U_tar† M)|²] / 12 for d = 3.
pub fn average_gate_fidelity(m: &GateMatrix, target: &GateMatrix) -> Result<f64, MetricsError> {
    let ur = unitarity_residual(target);
    if ur > 1e-10 {
        return Err(MetricsError::NotUnitary(ur));
    }
    let tr_mm = (m.adjoint() * m).trace().re;
    let tr_um = (target.adjoint() * m).trace().norm_sqr();
    Ok((tr_mm + tr_um) / 12.0)
}

/// State fidelity |⟨ψ_tar| M |ψ_in⟩|² with ψ_tar = U_tar ψ_in.
pub fn state_fidelity(
    m: &GateMatrix,
    psi_in: &StateVector,
    target: &GateMatrix,
) -> Result<f64, MetricsError> {
    let norm = psi_in.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(MetricsError::UnnormalizedState(norm));
    }
    let ur = unitarity_residual(target);
    if ur > 1e-10 {
        return Err(MetricsError::NotUnitary(ur));
    }
    let psi_tar = target * psi_in;
    let overlap = psi_tar.dotc(&(m * psi_in));
    Ok(overlap.norm_sqr())
}

/// Bloch components of a Hermitian unit-trace density matrix.
pub fn bloch_vector(rho: &Matrix3<C64>, time_ns: f64) -> Result<BlochVector8, MetricsError> {
    let herm = (rho - rho.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let tr_dev = (rho.trace() - C64::new(1.0, 0.0)).norm();
    let residual = herm.max(tr_dev);
    if residual > 1e-8 {
        return Err(MetricsError::BadDensity(residual));
    }
    let mut s = [0.0; 8];
    for (slot, sk) in s.iter_mut().enumerate() {
        *sk = (rho * gell_mann(slot + 1)).trace().re;
    }
    Ok(BlochVector8 { s, time_ns })
}

/// Inverse of [`bloch_vector`]: ρ = I/3 + Σ s_k λ_k / 2.
pub fn reconstruct_density(b: &BlochVector8) -> Matrix3<C64> {
    let mut rho = Matrix3::identity().map(|v: C64| v / 3.0);
    for (slot, sk) in b.s.iter().enumerate() {
        rho += gell_mann(slot + 1).map(|z| z * (0.5 * sk));
    }
    rho
}

/// Pure-state density matrix of a (possibly leaky) projected state,
/// renormalized to unit trace for Bloch representation.
pub fn density_from_state(psi: &StateVector) -> Matrix3<C64> {
    let n2 = psi.norm_squared();
    Matrix3::from_fn(|r, c| psi[r] * psi[c].conj() / n2)
}

/// Componentwise trajectory difference δs(t) between an errored and an
/// ideal run sampled on the same time grid.
pub fn deviation_trajectory(
    run_err: &[BlochVector8],
    run_ideal: &[BlochVector8],
) -> Result<Vec<BlochVector8>, MetricsError> {
    if run_err.len() != run_ideal.len() {
        return Err(MetricsError::LengthMismatch(run_err.len(), run_ideal.len()));
    }
    run_err
        .iter()
        .zip(run_ideal.iter())
        .enumerate()
        .map(|(index, (e, i))| {
            if (e.time_ns - i.time_ns).abs() > 1e-9 {
                return Err(MetricsError::TimeGridMismatch {
                    index,
                    a: e.time_ns,
                    b: i.time_ns,
                });
            }
            let mut s = [0.0; 8];
            for k in 0..8 {
                s[k] = e.s[k] - i.s[k];
            }
            Ok(BlochVector8 {
                s,
                time_ns: e.time_ns,
            })
        })
        .collect()
}

/// CSV with one row per sample: t_ns, s1..s8.
pub fn trajectory_csv(samples: &[BlochVector8]) -> String {
    let mut out = String::from("t_ns,s1,s2,s3,s4,s5,s6,s7,s8\n");
    for b in samples {
        let _ = write!(out, "{:.6}", b.time_ns);
        for v in b.s {
            let _ = write!(out, ",{v:.12e}");
        }
        out.push('\n');
    }
    out
}
