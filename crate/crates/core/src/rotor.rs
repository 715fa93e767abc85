//! Asymmetric-top rotational structure: Hamiltonian blocks, eigenstates with
//! (Ka, Kc) labels, and space-fixed dipole coupling matrices.
//!
//! The rigid-rotor Hamiltonian A Ĵa² + B Ĵb² + C Ĵc² is assembled in the
//! symmetric-top |JKM⟩ basis with the axis identification a→z, b→x, c→y,
//! giving the standard K ↔ K±2 coupling structure. Energies are kept in MHz;
//! dynamics converts through [`crate::MHZ_TO_RAD_NS`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

use crate::angmom::{symtop_element, AngmomError};

#[derive(Debug, Error)]
pub enum RotorError {
    #[error("rotational constants must satisfy A > B > C > 0 (got A={a}, B={b}, C={c} MHz)")]
    ConstantOrder { a: f64, b: f64, c: f64 },
    #[error("all dipole components are zero; no transition can be driven")]
    NoDipole,
    #[error("Jmax must be at least 1, got {0}")]
    JmaxTooSmall(i32),
    #[error("spherical index q must be -1, 0 or +1, got {0}")]
    SphericalIndex(i32),
    #[error("state (J={j}, Ka={ka}, Kc={kc}, M={m}) not present in the basis")]
    MissingState { j: i32, ka: i32, kc: i32, m: i32 },
    #[error("molecule file: {0}")]
    Config(String),
    #[error(transparent)]
    Angmom(#[from] AngmomError),
}

/// Rotational constants (MHz) and body-frame dipole components (Debye).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoleculeSpec {
    pub name: String,
    pub a_mhz: f64,
    pub b_mhz: f64,
    pub c_mhz: f64,
    pub mu_a_debye: f64,
    pub mu_b_debye: f64,
    pub mu_c_debye: f64,
}

impl MoleculeSpec {
    /// 1,2-propanediol, the molecule used throughout the reference runs.
    pub fn propanediol() -> Self {
        MoleculeSpec {
            name: "1,2-propanediol".into(),
            a_mhz: 8572.05,
            b_mhz: 3640.10,
            c_mhz: 2790.96,
            mu_a_debye: 1.2,
            mu_b_debye: 1.9,
            mu_c_debye: 0.36,
        }
    }

    /// Strict validation used by parsers and the CLI.
    pub fn validate(&self) -> Result<(), RotorError> {
        if !(self.a_mhz > self.b_mhz && self.b_mhz > self.c_mhz && self.c_mhz > 0.0) {
            return Err(RotorError::ConstantOrder {
                a: self.a_mhz,
                b: self.b_mhz,
                c: self.c_mhz,
            });
        }
        self.check_dipole()
    }

    fn check_dipole(&self) -> Result<(), RotorError> {
        if self.mu_a_debye == 0.0 && self.mu_b_debye == 0.0 && self.mu_c_debye == 0.0 {
            return Err(RotorError::NoDipole);
        }
        Ok(())
    }

    /// True when all three body-frame components are nonzero, the condition
    /// for closed cyclic (Δ-type) coupling of three rotational states.
    pub fn has_cyclic_coupling(&self) -> bool {
        self.mu_a_debye != 0.0 && self.mu_b_debye != 0.0 && self.mu_c_debye != 0.0
    }

    /// Molecule-fixed spherical dipole components:
    /// μ₀ = μ_a, μ±1 = ∓(μ_b ± iμ_c)/√2.
    pub fn mu_mf(&self, qp: i32) -> Complex64 {
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        match qp {
            0 => Complex64::new(self.mu_a_debye, 0.0),
            1 => -Complex64::new(self.mu_b_debye, self.mu_c_debye) * inv_sqrt2,
            -1 => Complex64::new(self.mu_b_debye, -self.mu_c_debye) * inv_sqrt2,
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

/// Parses a molecule definition from strict-schema TOML.
pub fn parse_molecule_toml(text: &str) -> Result<MoleculeSpec, RotorError> {
    let spec: MoleculeSpec =
        toml::from_str(text).map_err(|e| RotorError::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_molecule(path: &Path) -> Result<MoleculeSpec, RotorError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RotorError::Config(format!("{}: {e}", path.display())))?;
    parse_molecule_toml(&text)
}

/// One |J_{KaKc}, M⟩ eigenstate with its symmetric-top expansion.
#[derive(Debug, Clone)]
pub struct RotorState {
    pub j: i32,
    pub ka: i32,
    pub kc: i32,
    pub m: i32,
    pub energy_mhz: f64,
    /// C_K coefficients indexed by K + J, phase-fixed so the largest
    /// magnitude entry is positive.
    pub coefficients: Vec<f64>,
}

impl RotorState {
    pub fn omega(&self) -> f64 {
        self.energy_mhz * crate::MHZ_TO_RAD_NS
    }

    pub fn coefficient(&self, k: i32) -> f64 {
        if k.abs() > self.j {
            0.0
        } else {
            self.coefficients[(k + self.j) as usize]
        }
    }

    pub fn label(&self) -> String {
        format!("{}_{}{}", self.j, self.ka, self.kc)
    }
}

/// Rotational Hamiltonian block for fixed J in the |JK⟩ basis (K = -J..J),
/// in MHz. Couples K to K and K±2.
pub fn hamiltonian_block(molecule: &MoleculeSpec, j: i32) -> DMatrix<f64> {
    let (a, b, c) = (molecule.a_mhz, molecule.b_mhz, molecule.c_mhz);
    let n = (2 * j + 1) as usize;
    let jj = f64::from(j * (j + 1));
    let mut h = DMatrix::zeros(n, n);
    for (idx, k) in (-j..=j).enumerate() {
        let kf = f64::from(k);
        h[(idx, idx)] = 0.5 * (b + c) * (jj - kf * kf) + a * kf * kf;
        if k + 2 <= j {
            let f1 = jj - f64::from(k * (k + 1));
            let f2 = jj - f64::from((k + 1) * (k + 2));
            let v = 0.25 * (b - c) * (f1 * f2).sqrt();
            h[(idx + 2, idx)] = v;
            h[(idx, idx + 2)] = v;
        }
    }
    h
}

/// All eigenstates for J ≤ Jmax with every M sublevel, deterministically
/// ordered by (energy, M).
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub molecule: MoleculeSpec,
    pub jmax: i32,
    states: Vec<RotorState>,
    index: HashMap<(i32, i32, i32, i32), usize>,
}

impl BasisSet {
    pub fn states(&self) -> &[RotorState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, idx: usize) -> &RotorState {
        &self.states[idx]
    }

    pub fn index_of(&self, j: i32, ka: i32, kc: i32, m: i32) -> Result<usize, RotorError> {
        self.index
            .get(&(j, ka, kc, m))
            .copied()
            .ok_or(RotorError::MissingState { j, ka, kc, m })
    }
}

/// Builds and diagonalizes all J ≤ Jmax blocks, labelling levels by energy
/// rank within each J: rank r maps to Ka = ⌈r/2⌉, Kc = J − ⌊r/2⌋ along the
/// prolate-oblate correlation diagram.
pub fn solve_spectrum(molecule: &MoleculeSpec, jmax: i32) -> Result<BasisSet, RotorError> {
    if jmax < 1 {
        return Err(RotorError::JmaxTooSmall(jmax));
    }
    if !(molecule.a_mhz >= molecule.b_mhz
        && molecule.b_mhz >= molecule.c_mhz
        && molecule.c_mhz > 0.0)
    {
        return Err(RotorError::ConstantOrder {
            a: molecule.a_mhz,
            b: molecule.b_mhz,
            c: molecule.c_mhz,
        });
    }
    molecule.check_dipole()?;

    let mut states = Vec::new();
    for j in 0..=jmax {
        let block = hamiltonian_block(molecule, j);
        let eig = SymmetricEigen::new(block);
        let n = (2 * j + 1) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));
        for (rank, &col) in order.iter().enumerate() {
            let r = rank as i32;
            let ka = (r + 1) / 2;
            let kc = j - r / 2;
            let mut coef: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let mut imax = 0;
            for (i, c) in coef.iter().enumerate() {
                if c.abs() > coef[imax].abs() {
                    imax = i;
                }
            }
            if coef[imax] < 0.0 {
                for c in coef.iter_mut() {
                    *c = -*c;
                }
            }
            let energy = eig.eigenvalues[col];
            for m in -j..=j {
                states.push(RotorState {
                    j,
                    ka,
                    kc,
                    m,
                    energy_mhz: energy,
                    coefficients: coef.clone(),
                });
            }
        }
    }
    states.sort_by(|s, t| {
        s.energy_mhz
            .total_cmp(&t.energy_mhz)
            .then(s.m.cmp(&t.m))
            .then(s.ka.cmp(&t.ka))
    });
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.j, s.ka, s.kc, s.m), i))
        .collect();
    Ok(BasisSet {
        molecule: molecule.clone(),
        jmax,
        states,
        index,
    })
}

/// ⟨bra| μ̂_q^{(sf)} |ket⟩ in Debye: symmetric-top elements contracted with
/// the eigenvector coefficients and molecule-fixed spherical components.
pub fn dipole_element(
    bra: &RotorState,
    ket: &RotorState,
    q: i32,
    molecule: &MoleculeSpec,
) -> Result<Complex64, RotorError> {
    if q.abs() > 1 {
        return Err(RotorError::SphericalIndex(q));
    }
    if (bra.j - ket.j).abs() > 1 || bra.m != ket.m + q {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut total = Complex64::new(0.0, 0.0);
    for qp in -1..=1 {
        let mu = molecule.mu_mf(qp);
        if mu.norm_sqr() == 0.0 {
            continue;
        }
        let mut geom = 0.0;
        for k in -ket.j..=ket.j {
            let ck = ket.coefficient(k);
            if ck == 0.0 {
                continue;
            }
            let kp = k + qp;
            let cb = bra.coefficient(kp);
            if cb == 0.0 {
                continue;
            }
            geom += cb * ck * symtop_element(bra.j, kp, bra.m, q, qp, ket.j, k, ket.m)?;
        }
        total += mu * geom;
    }
    Ok(total)
}

/// The three N×N space-fixed dipole operator matrices, indexed by q.
#[derive(Debug, Clone)]
pub struct DipoleOperators {
    mats: [DMatrix<Complex64>; 3],
}

impl DipoleOperators {
    pub fn build(basis: &BasisSet) -> Result<Self, RotorError> {
        let n = basis.len();
        let zero = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        let mut mats = [zero.clone(), zero.clone(), zero];
        for (slot, q) in (-1..=1).enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let v = dipole_element(basis.state(i), basis.state(j), q, &basis.molecule)?;
                    mats[slot][(i, j)] = v;
                }
            }
        }
        Ok(DipoleOperators { mats })
    }

    /// μ̂_q as a matrix over the basis; q ∈ {-1, 0, +1}.
    pub fn mu(&self, q: i32) -> &DMatrix<Complex64> {
        &self.mats[(q + 1) as usize]
    }
}

/// Electric-dipole transition class from the (ΔKa, ΔKc) parities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionKind {
    AType,
    BType,
    CType,
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionKind::AType => write!(f, "a"),
            TransitionKind::BType => write!(f, "b"),
            TransitionKind::CType => write!(f, "c"),
        }
    }
}

/// Classifies by selection-rule parity: a-type ΔKa even / ΔKc odd,
/// b-type odd/odd, c-type odd/even. Returns None for even/even, which
/// carries no one-photon dipole strength.
pub fn classify_transition(bra: &RotorState, ket: &RotorState) -> Option<TransitionKind> {
    let dka_odd = (bra.ka - ket.ka).rem_euclid(2) == 1;
    let dkc_odd = (bra.kc - ket.kc).rem_euclid(2) == 1;
    match (dka_odd, dkc_odd) {
        (false, true) => Some(TransitionKind::AType),
        (true, true) => Some(TransitionKind::BType),
        (true, false) => Some(TransitionKind::CType),
        (false, false) => None,
    }
}

#[derive(Debug, Clone)]
pub struct TransitionEntry {
    /// Indices into the basis: (upper, lower) by energy.
    pub upper: usize,
    pub lower: usize,
    pub q: i32,
    pub frequency_mhz: f64,
    pub element: Complex64,
    pub kind: TransitionKind,
}

/// Every nonzero dipole element (|μ| > 1e-10 D) between distinct levels,
/// with its transition frequency and a/b/c classification.
pub fn transition_table(
    basis: &BasisSet,
    molecule: &MoleculeSpec,
) -> Result<Vec<TransitionEntry>, RotorError> {
    let mut out = Vec::new();
    for i in 0..basis.len() {
        for j in 0..i {
            let (si, sj) = (basis.state(i), basis.state(j));
            let freq = si.energy_mhz - sj.energy_mhz;
            if freq <= 0.0 {
                continue;
            }
            for q in -1..=1 {
                let el = dipole_element(si, sj, q, molecule)?;
                if el.norm() > 1e-10 {
                    let kind = classify_transition(si, sj).expect(
                        "nonzero dipole element must fall in one selection-rule class",
                    );
                    out.push(TransitionEntry {
                        upper: i,
                        lower: j,
                        q,
                        frequency_mhz: freq,
                        element: el,
                        kind,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn j0_block_is_zero() {
        let h = hamiltonian_block(&MoleculeSpec::propanediol(), 0);
        assert_eq!(h.nrows(), 1);
        assert_eq!(h[(0, 0)], 0.0);
    }

    #[test]
    fn j1_eigenvalues_closed_form() {
        let m = MoleculeSpec::propanediol();
        let h = hamiltonian_block(&m, 1);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        // {B+C, A+C, A+B}
        assert_abs_diff_eq!(ev[0], 6431.06, epsilon = 1e-9);
        assert_abs_diff_eq!(ev[1], 11363.01, epsilon = 1e-9);
        assert_abs_diff_eq!(ev[2], 12212.15, epsilon = 1e-9);
    }

    #[test]
    fn j1_block_parity_structure() {
        // K = 0 does not couple to K = ±1
        let h = hamiltonian_block(&MoleculeSpec::propanediol(), 1);
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(h[(1, 2)], 0.0);
        assert_ne!(h[(0, 2)], 0.0);
    }

    #[test]
    fn spectrum_levels_and_labels() {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 1).unwrap();
        assert_eq!(basis.len(), 10); // 1 + 9
        let s000 = basis.state(basis.index_of(0, 0, 0, 0).unwrap());
        assert_abs_diff_eq!(s000.energy_mhz, 0.0, epsilon = 1e-12);
        let s101 = basis.state(basis.index_of(1, 0, 1, 0).unwrap());
        assert_abs_diff_eq!(s101.energy_mhz, 6431.06, epsilon = 1e-9);
        let s111 = basis.state(basis.index_of(1, 1, 1, 0).unwrap());
        assert_abs_diff_eq!(s111.energy_mhz, 11363.01, epsilon = 1e-9);
        let s110 = basis.state(basis.index_of(1, 1, 0, 0).unwrap());
        assert_abs_diff_eq!(s110.energy_mhz, 12212.15, epsilon = 1e-9);
        // omega(1_01 -> 1_10) = A - C
        assert_abs_diff_eq!(s110.energy_mhz - s101.energy_mhz, 5781.09, epsilon = 1e-9);
    }

    #[test]
    fn state_count_jmax2() {
        let basis = solve_spectrum(&MoleculeSpec::propanediol(), 2).unwrap();
        assert_eq!(basis.len(), 35); // 1 + 9 + 25
    }

    #[test]
    fn a_type_transition_nonzero() {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 1).unwrap();
        let bra = basis.state(basis.index_of(1, 0, 1, 1).unwrap());
        let ket = basis.state(basis.index_of(0, 0, 0, 0).unwrap());
        let v = dipole_element(bra, ket, 1, &m).unwrap();
        assert!(v.norm() > 1e-6, "a-type element should be nonzero: {v}");
        // Delta M = q enforced
        let bra0 = basis.state(basis.index_of(1, 0, 1, 0).unwrap());
        assert_eq!(dipole_element(bra0, ket, 1, &m).unwrap().norm(), 0.0);
    }

    #[test]
    fn b_type_requires_mu_b() {
        let mut m = MoleculeSpec::propanediol();
        m.mu_b_debye = 0.0;
        let basis = solve_spectrum(&m, 1).unwrap();
        let bra = basis.state(basis.index_of(1, 1, 0, 0).unwrap());
        let ket = basis.state(basis.index_of(0, 0, 0, 0).unwrap());
        // 0_00 -> 1_10 is c-type (needs mu_c): unaffected.
        assert!(dipole_element(bra, ket, 0, &m).unwrap().norm() > 1e-6);
        // 0_00 -> 1_11 is b-type: dies with mu_b = 0.
        let bra_b = basis.state(basis.index_of(1, 1, 1, 0).unwrap());
        assert!(dipole_element(bra_b, ket, 0, &m).unwrap().norm() < 1e-12);
    }

    #[test]
    fn qutrit_transition_types() {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 1).unwrap();
        let table = transition_table(&basis, &m).unwrap();
        let find = |upper: (i32, i32, i32, i32), lower: (i32, i32, i32, i32)| {
            let ui = basis.index_of(upper.0, upper.1, upper.2, upper.3).unwrap();
            let li = basis.index_of(lower.0, lower.1, lower.2, lower.3).unwrap();
            table
                .iter()
                .find(|e| e.upper == ui && e.lower == li)
                .unwrap_or_else(|| panic!("missing transition {upper:?} <- {lower:?}"))
        };
        let a = find((1, 0, 1, 1), (0, 0, 0, 0));
        assert_eq!(a.kind, TransitionKind::AType);
        assert_abs_diff_eq!(a.frequency_mhz, 6431.06, epsilon = 1e-9);
        let b = find((1, 1, 0, 0), (1, 0, 1, 1));
        assert_eq!(b.kind, TransitionKind::BType);
        assert_abs_diff_eq!(b.frequency_mhz, 5781.09, epsilon = 1e-9);
        let c = find((1, 1, 0, 0), (0, 0, 0, 0));
        assert_eq!(c.kind, TransitionKind::CType);
        assert_abs_diff_eq!(c.frequency_mhz, 12212.15, epsilon = 1e-9);
        // 1_11 <- 1_01 is c-type
        let p = find((1, 1, 1, 1), (1, 0, 1, 1));
        assert_eq!(p.kind, TransitionKind::CType);
    }

    #[test]
    fn no_delta_j2_transitions() {
        let m = MoleculeSpec::propanediol();
        let basis = solve_spectrum(&m, 2).unwrap();
        for e in transition_table(&basis, &m).unwrap() {
            let dj = (basis.state(e.upper).j - basis.state(e.lower).j).abs();
            assert!(dj <= 1, "dipole table contains a ΔJ = {dj} entry");
        }
    }

    #[test]
    fn molecule_toml_roundtrip_and_strictness() {
        let good = r#"
            name = "1,2-propanediol"
            a_mhz = 8572.05
            b_mhz = 3640.10
            c_mhz = 2790.96
            mu_a_debye = 1.2
            mu_b_debye = 1.9
            mu_c_debye = 0.36
        "#;
        let m = parse_molecule_toml(good).unwrap();
        assert_eq!(m, MoleculeSpec::propanediol());

        let unknown_key = format!("{good}\nextra = 1.0\n");
        assert!(parse_molecule_toml(&unknown_key).is_err());

        let bad_order = good.replace("8572.05", "1000.0");
        assert!(matches!(
            parse_molecule_toml(&bad_order),
            Err(RotorError::ConstantOrder { .. })
        ));
    }
}
