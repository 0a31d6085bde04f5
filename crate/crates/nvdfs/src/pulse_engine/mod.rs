//! Pulse sequences on the register and their exact propagation.
//!
//! Electron pulses are instantaneous. Between pulses the two nuclei precess
//! under the branch Hamiltonian selected by the electron state, in the lab
//! frame.

mod circuit;
mod synthesis;

pub use circuit::*;
pub use synthesis::*;

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nv_model::{branch_coefficients, Branch, NvSystem};
use crate::spin_core::{partial_trace_first, qubit_propagator, CMatrix, DensityMatrix, Operator};

/// XY8 phase cycle of the electron π pulses.
pub const XY8_PHASES: [f64; 8] = [0.0, PI / 2.0, 0.0, PI / 2.0, PI / 2.0, 0.0, PI / 2.0, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub enum PulseEvent {
    /// Instantaneous electron π pulse about the equatorial axis at `phase`.
    ElectronPi { phase: f64 },
    /// Instantaneous electron rotation.
    ElectronRotation { phase: f64, angle: f64 },
    /// Free evolution, μs.
    Free { duration_us: f64 },
    /// Optical reset of the electron to ms = 0.
    Reset,
    /// Ideal rf rotation of one nucleus; `duration_us` is bookkeeping only.
    NuclearRf {
        spin: usize,
        phase: f64,
        angle: f64,
        duration_us: f64,
    },
}

impl PulseEvent {
    pub fn validate(&self) -> Result<()> {
        let angle_ok = |a: f64| a > -2.0 * PI && a <= 2.0 * PI;
        match *self {
            PulseEvent::ElectronPi { phase } if phase.is_finite() => Ok(()),
            PulseEvent::ElectronRotation { phase, angle } if phase.is_finite() && angle_ok(angle) => Ok(()),
            PulseEvent::Free { duration_us } if duration_us >= 0.0 => Ok(()),
            PulseEvent::Reset => Ok(()),
            PulseEvent::NuclearRf {
                spin,
                angle,
                duration_us,
                ..
            } if (spin == 1 || spin == 2) && angle_ok(angle) && duration_us >= 0.0 => Ok(()),
            ref e => Err(Error::InvalidArgument(format!("bad pulse event {e:?}"))),
        }
    }

    fn to_line(&self) -> String {
        match *self {
            PulseEvent::ElectronPi { phase } => format!("pi {phase} {PI} 0"),
            PulseEvent::ElectronRotation { phase, angle } => format!("rot {phase} {angle} 0"),
            PulseEvent::Free { duration_us } => format!("free - 0 {duration_us}"),
            PulseEvent::Reset => "reset - 0 0".to_string(),
            PulseEvent::NuclearRf {
                spin,
                phase,
                angle,
                duration_us,
            } => format!("rf{spin} {phase} {angle} {duration_us}"),
        }
    }

    fn from_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("expected 4 fields: {line:?}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {s:?} in {line:?}")))
        };
        let ev = match f[0] {
            "pi" => PulseEvent::ElectronPi { phase: num(f[1])? },
            "rot" => PulseEvent::ElectronRotation {
                phase: num(f[1])?,
                angle: num(f[2])?,
            },
            "free" => PulseEvent::Free {
                duration_us: num(f[3])?,
            },
            "reset" => PulseEvent::Reset,
            "rf1" | "rf2" => PulseEvent::NuclearRf {
                spin: if f[0] == "rf1" { 1 } else { 2 },
                phase: num(f[1])?,
                angle: num(f[2])?,
                duration_us: num(f[3])?,
            },
            k => return Err(Error::Parse(format!("unknown event kind {k:?}"))),
        };
        ev.validate()?;
        Ok(ev)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseSequence {
    pub events: Vec<PulseEvent>,
}

impl PulseSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<PulseEvent>) -> Result<Self> {
        for e in &events {
            e.validate()?;
        }
        Ok(Self { events })
    }

    pub fn push(&mut self, e: PulseEvent) {
        self.events.push(e);
    }

    pub fn extend(&mut self, other: &PulseSequence) {
        self.events.extend_from_slice(&other.events);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sum of free-evolution durations in μs.
    pub fn total_duration_us(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                PulseEvent::Free { duration_us } => *duration_us,
                _ => 0.0,
            })
            .sum()
    }

    pub fn has_reset(&self) -> bool {
        self.events.iter().any(|e| matches!(e, PulseEvent::Reset))
    }

    pub fn pi_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, PulseEvent::ElectronPi { .. }))
            .count()
    }

    /// One event per line: `kind axis angle duration`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            let _ = writeln!(s, "{}", e.to_line());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let events = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(PulseEvent::from_line)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { events })
    }
}

/// Decoupling block: `τ - π - 2τ - π - … - π - τ` with `n` π pulses on the
/// XY8 phase cycle. An odd count gets one closing π pulse so the electron
/// ends in the branch it started in.
pub fn decoupling_block(tau_us: f64, n: u32) -> PulseSequence {
    let mut s = PulseSequence::new();
    if n == 0 {
        return s;
    }
    s.push(PulseEvent::Free { duration_us: tau_us });
    for i in 0..n as usize {
        s.push(PulseEvent::ElectronPi {
            phase: XY8_PHASES[i % 8],
        });
        let d = if i + 1 < n as usize { 2.0 * tau_us } else { tau_us };
        s.push(PulseEvent::Free { duration_us: d });
    }
    if n % 2 == 1 {
        s.push(PulseEvent::ElectronPi {
            phase: XY8_PHASES[n as usize % 8],
        });
    }
    s
}

/// 8x8 free evolution for `duration_us`.
pub fn free_evolution(sys: &NvSystem, duration_us: f64) -> Operator {
    let wl = sys.field.omega_l();
    let t = duration_us * 1e-3;
    let block = |b: Branch| {
        let u: Vec<CMatrix> = sys
            .spins
            .iter()
            .map(|p| {
                let (hz, hx) = branch_coefficients(b, p, wl);
                qubit_propagator(hx, 0.0, hz, t)
            })
            .collect();
        u[0].kronecker(&u[1])
    };
    let u0 = block(Branch::Zero);
    let u1 = block(Branch::MinusOne);
    let mut m = CMatrix::zeros(8, 8);
    m.view_mut((0, 0), (4, 4)).copy_from(&u0);
    m.view_mut((4, 4), (4, 4)).copy_from(&u1);
    Operator::from_matrix(m)
}

/// Electron rotation embedded in the register.
pub fn electron_rotation(phase: f64, angle: f64) -> Operator {
    Operator::r_phi(phase, angle).kron(&Operator::identity(4))
}

/// Single-nucleus operator embedded in the register; `spin` is 1 or 2.
pub fn nuclear_op(op: &Operator, spin: usize) -> Operator {
    let id2 = Operator::identity(2);
    match spin {
        1 => id2.kron(op).kron(&id2),
        2 => Operator::identity(4).kron(op),
        _ => panic!("spin index {spin}"),
    }
}

/// `ρ → |0><0| ⊗ Tr_e ρ`.
pub fn reset_electron(rho: &DensityMatrix) -> DensityMatrix {
    let rn = partial_trace_first(rho.matrix(), 2, 4);
    let mut m = CMatrix::zeros(8, 8);
    m.view_mut((0, 0), (4, 4)).copy_from(&rn);
    DensityMatrix::from_matrix_unchecked(m)
}

#[derive(Clone, Debug)]
pub enum Step {
    Unitary(Operator),
    Reset,
}

/// A sequence compiled to unitary segments separated by resets.
#[derive(Clone, Debug)]
pub struct SequenceAction {
    pub steps: Vec<Step>,
}

impl SequenceAction {
    /// The full unitary when the sequence has no reset.
    pub fn unitary(&self) -> Option<Operator> {
        match self.steps.as_slice() {
            [] => Some(Operator::identity(8)),
            [Step::Unitary(u)] => Some(u.clone()),
            _ => None,
        }
    }

    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        let mut out = rho.clone();
        for s in &self.steps {
            out = match s {
                Step::Unitary(u) => out.evolve(u),
                Step::Reset => reset_electron(&out),
            };
        }
        out
    }
}

/// Unitary of a reset-free event list, without allocation of a channel.
pub fn events_unitary(events: &[PulseEvent], sys: &NvSystem) -> Result<Operator> {
    let mut u = CMatrix::identity(8, 8);
    for e in events {
        let step = match *e {
            PulseEvent::ElectronPi { phase } => electron_rotation(phase, PI),
            PulseEvent::ElectronRotation { phase, angle } => electron_rotation(phase, angle),
            PulseEvent::Free { duration_us } => free_evolution(sys, duration_us),
            PulseEvent::NuclearRf { spin, phase, angle, .. } => nuclear_op(&Operator::r_phi(phase, angle), spin),
            PulseEvent::Reset => return Err(Error::InvalidArgument("reset inside a unitary segment".into())),
        };
        u = step.matrix() * u;
    }
    Ok(Operator::from_matrix(u))
}

/// Composes the exact propagators of a sequence.
pub fn sequence_propagator(seq: &PulseSequence, sys: &NvSystem) -> Result<SequenceAction> {
    let mut steps = Vec::new();
    let mut start = 0;
    for (i, e) in seq.events.iter().enumerate() {
        e.validate()?;
        if matches!(e, PulseEvent::Reset) {
            if i > start {
                steps.push(Step::Unitary(events_unitary(&seq.events[start..i], sys)?));
            }
            steps.push(Step::Reset);
            start = i + 1;
        }
    }
    if start < seq.events.len() {
        steps.push(Step::Unitary(events_unitary(&seq.events[start..], sys)?));
    }
    Ok(SequenceAction { steps })
}
