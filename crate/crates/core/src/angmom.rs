//! Exact angular-momentum kernels: Wigner 3j symbols and symmetric-top
//! dipole matrix elements.
//!
//! Quantum numbers are carried as doubled integers ([`Half`]) so that
//! selection rules are decided by exact integer arithmetic; only the final
//! symbol value is floating point. The 3j evaluation uses the Racah single
//! sum over log-factorials, which is accurate to better than 12 significant
//! digits for the small momenta (j ≲ 5) a rotational manifold needs.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AngmomError {
    /// j and m of one slot disagree in half-integer parity (e.g. integer j
    /// paired with half-integer m), so the symbol is not defined.
    #[error("invalid half-integer parity: j = {j}, m = {m} (doubled values)")]
    Parity { j: i32, m: i32 },
    #[error("negative angular momentum: doubled j = {0}")]
    NegativeJ(i32),
    #[error("projection out of range: |{m}| > {j} (doubled values)")]
    Projection { j: i32, m: i32 },
    #[error("spherical index must be -1, 0 or +1, got {0}")]
    SphericalIndex(i32),
}

/// A half-integer stored as its doubled value, so `Half(3)` is 3/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Half(pub i32);

impl Half {
    pub fn from_int(v: i32) -> Self {
        Half(2 * v)
    }

    pub fn doubled(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

/// Arguments of a Wigner 3j symbol (j1 j2 j3; m1 m2 m3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeJArgs {
    pub j1: Half,
    pub j2: Half,
    pub j3: Half,
    pub m1: Half,
    pub m2: Half,
    pub m3: Half,
}

impl ThreeJArgs {
    /// All-integer arguments, the common case for rotational states.
    pub fn from_int(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> Self {
        ThreeJArgs {
            j1: Half::from_int(j1),
            j2: Half::from_int(j2),
            j3: Half::from_int(j3),
            m1: Half::from_int(m1),
            m2: Half::from_int(m2),
            m3: Half::from_int(m3),
        }
    }
}

fn ln_fact_table() -> &'static [f64; 128] {
    static TABLE: OnceLock<[f64; 128]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0_f64; 128];
        for n in 2..128 {
            t[n] = t[n - 1] + (n as f64).ln();
        }
        t
    })
}

/// ln(n!) for n given as an exact integer. Panics on negative input, which
/// cannot occur once the selection rules have been applied.
fn ln_fact(n: i32) -> f64 {
    assert!((0..128).contains(&n), "factorial argument out of range: {n}");
    ln_fact_table()[n as usize]
}

/// Sums a short series pairwise to keep cancellation error down.
fn pairwise_sum(terms: &mut [f64]) -> f64 {
    let mut len = terms.len();
    if len == 0 {
        return 0.0;
    }
    while len > 1 {
        let half = len / 2;
        for k in 0..half {
            terms[k] = terms[2 * k] + terms[2 * k + 1];
        }
        if len % 2 == 1 {
            terms[half] = terms[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    terms[0]
}

/// Wigner 3j symbol via the Racah summation formula.
///
/// Selection failures (m1+m2+m3 ≠ 0, triangle violation, |m| > j) give an
/// exact 0.0; mismatched half-integer parity is a domain error.
pub fn wigner3j(args: ThreeJArgs) -> Result<f64, AngmomError> {
    let (dj1, dj2, dj3) = (args.j1.0, args.j2.0, args.j3.0);
    let (dm1, dm2, dm3) = (args.m1.0, args.m2.0, args.m3.0);

    for (dj, dm) in [(dj1, dm1), (dj2, dm2), (dj3, dm3)] {
        if dj < 0 {
            return Err(AngmomError::NegativeJ(dj));
        }
        if (dj + dm) % 2 != 0 {
            return Err(AngmomError::Parity { j: dj, m: dm });
        }
    }
    if dm1.abs() > dj1 || dm2.abs() > dj2 || dm3.abs() > dj3 {
        return Ok(0.0);
    }
    if dm1 + dm2 + dm3 != 0 {
        return Ok(0.0);
    }
    // Triangle rule, including integer perimeter (j1+j2+j3 must be integral).
    if dj3 > dj1 + dj2 || dj3 < (dj1 - dj2).abs() || (dj1 + dj2 + dj3) % 2 != 0 {
        return Ok(0.0);
    }

    // Everything below works with true (undoubled) integer factorial args.
    let h = |x: i32| -> i32 {
        debug_assert!(x % 2 == 0);
        x / 2
    };
    let delta_ln = 0.5
        * (ln_fact(h(dj1 + dj2 - dj3)) + ln_fact(h(dj1 - dj2 + dj3))
            + ln_fact(h(-dj1 + dj2 + dj3))
            - ln_fact(h(dj1 + dj2 + dj3) + 1));
    let pre_ln = 0.5
        * (ln_fact(h(dj1 + dm1)) + ln_fact(h(dj1 - dm1)) + ln_fact(h(dj2 + dm2))
            + ln_fact(h(dj2 - dm2))
            + ln_fact(h(dj3 + dm3))
            + ln_fact(h(dj3 - dm3)));

    let kmin = 0
        .max(h(dj2 - dj3 - dm1))
        .max(h(dj1 - dj3 + dm2));
    let kmax = h(dj1 + dj2 - dj3)
        .min(h(dj1 - dm1))
        .min(h(dj2 + dm2));
    let mut terms: Vec<f64> = (kmin..=kmax)
        .map(|k| {
            let denom_ln = ln_fact(k)
                + ln_fact(h(dj1 + dj2 - dj3) - k)
                + ln_fact(h(dj1 - dm1) - k)
                + ln_fact(h(dj2 + dm2) - k)
                + ln_fact(h(dj3 - dj2 + dm1) + k)
                + ln_fact(h(dj3 - dj1 - dm2) + k);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * (delta_ln + pre_ln - denom_ln).exp()
        })
        .collect();
    let sum = pairwise_sum(&mut terms);

    let phase = if h(dj1 - dj2 - dm3).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    Ok(phase * sum)
}

/// Symmetric-top matrix element ⟨J'K'M'| D¹*_{qq'} |JKM⟩.
///
/// Evaluates √(2J+1)√(2J'+1) (−1)^{M'+K'+q−q'} (J 1 J'; M q −M')(J 1 J'; K q' −K'),
/// which vanishes unless ΔJ ∈ {0,±1}, M' = M + q and K' = K + q'.
#[allow(clippy::too_many_arguments)]
pub fn symtop_element(
    jp: i32,
    kp: i32,
    mp: i32,
    q: i32,
    qp: i32,
    j: i32,
    k: i32,
    m: i32,
) -> Result<f64, AngmomError> {
    if jp < 0 {
        return Err(AngmomError::NegativeJ(2 * jp));
    }
    if j < 0 {
        return Err(AngmomError::NegativeJ(2 * j));
    }
    if kp.abs() > jp || mp.abs() > jp {
        return Err(AngmomError::Projection {
            j: 2 * jp,
            m: 2 * kp.abs().max(mp.abs()),
        });
    }
    if k.abs() > j || m.abs() > j {
        return Err(AngmomError::Projection {
            j: 2 * j,
            m: 2 * k.abs().max(m.abs()),
        });
    }
    if q.abs() > 1 {
        return Err(AngmomError::SphericalIndex(q));
    }
    if qp.abs() > 1 {
        return Err(AngmomError::SphericalIndex(qp));
    }

    let w_m = wigner3j(ThreeJArgs::from_int(j, 1, jp, m, q, -mp))?;
    let w_k = wigner3j(ThreeJArgs::from_int(j, 1, jp, k, qp, -kp))?;
    let norm = (f64::from(2 * j + 1) * f64::from(2 * jp + 1)).sqrt();
    let phase = if (mp + kp + q - qp).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    Ok(norm * phase * w_m * w_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn w3j_110_000() {
        // closed form -1/sqrt(3)
        let v = wigner3j(ThreeJArgs::from_int(1, 1, 0, 0, 0, 0)).unwrap();
        assert_abs_diff_eq!(v, -0.577_350_269_189_625_8, epsilon = 1e-14);
    }

    #[test]
    fn w3j_m_sum_rule() {
        let v = wigner3j(ThreeJArgs::from_int(1, 1, 1, 0, 0, 1)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn w3j_triangle_rule() {
        let v = wigner3j(ThreeJArgs::from_int(2, 0, 1, 0, 0, 0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn w3j_half_integer() {
        // (1/2 1/2 1; 1/2 -1/2 0) = 1/sqrt(6)
        let v = wigner3j(ThreeJArgs {
            j1: Half(1),
            j2: Half(1),
            j3: Half(2),
            m1: Half(1),
            m2: Half(-1),
            m3: Half(0),
        })
        .unwrap();
        assert_abs_diff_eq!(v, 1.0 / 6.0_f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn w3j_parity_error() {
        // integer j with half-integer m
        let r = wigner3j(ThreeJArgs {
            j1: Half(2),
            j2: Half(2),
            j3: Half(0),
            m1: Half(1),
            m2: Half(-1),
            m3: Half(0),
        });
        assert!(matches!(r, Err(AngmomError::Parity { .. })));
    }

    #[test]
    fn w3j_out_of_range_projection_is_zero() {
        let v = wigner3j(ThreeJArgs::from_int(1, 2, 1, 2, -2, 0));
        assert_eq!(v.unwrap(), 0.0);
    }

    #[test]
    fn symtop_ground_to_101() {
        let v = symtop_element(1, 0, 0, 0, 0, 0, 0, 0).unwrap();
        assert_abs_diff_eq!(v, 0.577_350_269_189_625_8, epsilon = 1e-14);
    }

    #[test]
    fn symtop_selection_rules() {
        // M' != M + q
        assert_eq!(symtop_element(1, 0, 1, 0, 0, 1, 0, 0).unwrap(), 0.0);
        // K' != K + q'
        assert_eq!(symtop_element(1, 1, 0, 0, 0, 1, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn symtop_rejects_bad_projection() {
        assert!(symtop_element(1, 2, 0, 0, 0, 0, 0, 0).is_err());
        assert!(symtop_element(1, 0, 0, 2, 0, 0, 0, 0).is_err());
    }
}
