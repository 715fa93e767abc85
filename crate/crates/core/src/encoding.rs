//! The qutrit encoding in rotational states and its five drive channels.
//!
//! Computational states: |0⟩ = |0_00, M=0⟩, |1⟩ = |1_01, M=1⟩,
//! |2⟩ = |1_10, M=0⟩, with auxiliary |S⟩ = |1_11, M=1⟩. Channels a, b, c
//! couple the qutrit pairs directly; P and Q couple |1⟩↔|S⟩ and |S⟩↔|2⟩
//! for the two-subpulse phase loops.

use num_complex::Complex64;
use thiserror::Error;

use crate::gates::Channel;
use crate::rotor::{classify_transition, dipole_element, BasisSet, RotorError, TransitionKind};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error(transparent)]
    Rotor(#[from] RotorError),
    #[error("encoding requires E(1) < E(S) < E(2); got E1={e1} MHz, ES={es} MHz, E2={e2} MHz")]
    LevelOrder { e1: f64, es: f64, e2: f64 },
}

/// One of the five driven transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriveChannel {
    A,
    B,
    C,
    P,
    Q,
}

impl DriveChannel {
    pub const ALL: [DriveChannel; 5] = [
        DriveChannel::A,
        DriveChannel::B,
        DriveChannel::C,
        DriveChannel::P,
        DriveChannel::Q,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DriveChannel::A => "a",
            DriveChannel::B => "b",
            DriveChannel::C => "c",
            DriveChannel::P => "P",
            DriveChannel::Q => "Q",
        }
    }
}

impl From<Channel> for DriveChannel {
    fn from(c: Channel) -> Self {
        match c {
            Channel::A => DriveChannel::A,
            Channel::B => DriveChannel::B,
            Channel::C => DriveChannel::C,
        }
    }
}

/// Resolved single-transition data for one channel.
#[derive(Debug, Clone)]
pub struct ChannelInfo {
    pub channel: DriveChannel,
    /// Basis indices of the (lower, upper) energy endpoints.
    pub lower: usize,
    pub upper: usize,
    /// Spherical drive index q = ΔM of the absorption (lower → upper).
    pub q: i32,
    /// Transition element ⟨lower| μ̂_{-q} |upper⟩ in Debye; its argument
    /// enters the carrier-phase correction.
    pub mu: Complex64,
    /// Transition angular frequency in rad/ns.
    pub omega: f64,
    pub kind: Option<TransitionKind>,
}

/// Basis positions of the four encoded states.
#[derive(Debug, Clone, Copy)]
pub struct QutritEncoding {
    /// Indices of |0⟩, |1⟩, |2⟩ in the basis.
    pub computational: [usize; 3],
    /// Index of the auxiliary state |S⟩.
    pub auxiliary: usize,
}

impl QutritEncoding {
    /// The standard rotational encoding; fails if the basis lacks the levels
    /// or if the auxiliary level does not sit between E(1) and E(2).
    pub fn standard(basis: &BasisSet) -> Result<Self, EncodingError> {
        let s0 = basis.index_of(0, 0, 0, 0)?;
        let s1 = basis.index_of(1, 0, 1, 1)?;
        let s2 = basis.index_of(1, 1, 0, 0)?;
        let saux = basis.index_of(1, 1, 1, 1)?;
        let (e1, es, e2) = (
            basis.state(s1).energy_mhz,
            basis.state(saux).energy_mhz,
            basis.state(s2).energy_mhz,
        );
        if !(e1 < es && es < e2) {
            return Err(EncodingError::LevelOrder { e1, es, e2 });
        }
        Ok(QutritEncoding {
            computational: [s0, s1, s2],
            auxiliary: saux,
        })
    }

    pub fn endpoints(&self, channel: DriveChannel) -> (usize, usize) {
        let [q0, q1, q2] = self.computational;
        match channel {
            DriveChannel::A => (q0, q1),
            DriveChannel::B => (q1, q2),
            DriveChannel::C => (q0, q2),
            DriveChannel::P => (q1, self.auxiliary),
            DriveChannel::Q => (self.auxiliary, q2),
        }
    }

    pub fn channel_info(
        &self,
        channel: DriveChannel,
        basis: &BasisSet,
    ) -> Result<ChannelInfo, EncodingError> {
        let (lower, upper) = self.endpoints(channel);
        let (lo, hi) = (basis.state(lower), basis.state(upper));
        let q = hi.m - lo.m;
        let mu = dipole_element(lo, hi, -q, &basis.molecule)?;
        let omega = (hi.energy_mhz - lo.energy_mhz) * crate::MHZ_TO_RAD_NS;
        Ok(ChannelInfo {
            channel,
            lower,
            upper,
            q,
            mu,
            omega,
            kind: classify_transition(lo, hi),
        })
    }

    pub fn all_channels(&self, basis: &BasisSet) -> Result<Vec<ChannelInfo>, EncodingError> {
        DriveChannel::ALL
            .iter()
            .map(|c| self.channel_info(*c, basis))
            .collect()
    }
}
