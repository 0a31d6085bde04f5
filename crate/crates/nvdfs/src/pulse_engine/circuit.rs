//! Logical circuits and their compilation to pulse sequences.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use super::{
    electron_rotation, ideal_conditional, ideal_unconditional_x, nuclear_op, reset_electron, sequence_propagator,
    synthesize_gate, CompileOptions, CompiledGate, GateKind, GateSpec, PhaseLedger, PulseEvent, PulseSequence,
};
use crate::error::Result;
use crate::nv_model::NvSystem;
use crate::spin_core::{partial_trace_first, DensityMatrix, Operator};

/// A gate at the logical level, before synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LogicalOp {
    /// Electron rotation about the equatorial axis at `phase`.
    Electron {
        phase: f64,
        angle: f64,
    },
    /// Electron-conditional x rotation of a nucleus.
    Cx {
        spin: usize,
        angle: f64,
    },
    /// Unconditional x rotation of a nucleus.
    X {
        spin: usize,
        angle: f64,
    },
    /// Z rotation of a nucleus (frame change only).
    Z {
        spin: usize,
        angle: f64,
    },
    Reset,
}

/// Resonance orders used for each gate of the register.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateOrders {
    pub conditional: [u32; 2],
    pub unconditional: [u32; 2],
}

impl Default for GateOrders {
    fn default() -> Self {
        Self {
            conditional: [3, 3],
            unconditional: [4, 4],
        }
    }
}

fn txx(spin: usize) -> Vec<LogicalOp> {
    vec![
        LogicalOp::Electron {
            phase: FRAC_PI_2,
            angle: -FRAC_PI_2,
        },
        LogicalOp::Cx { spin, angle: FRAC_PI_2 },
        LogicalOp::Electron {
            phase: FRAC_PI_2,
            angle: FRAC_PI_2,
        },
    ]
}

fn tyy(spin: usize, phase: f64) -> Vec<LogicalOp> {
    vec![
        LogicalOp::Electron {
            phase,
            angle: FRAC_PI_2,
        },
        LogicalOp::Z {
            spin,
            angle: -FRAC_PI_2,
        },
        LogicalOp::Cx { spin, angle: FRAC_PI_2 },
        LogicalOp::Z { spin, angle: FRAC_PI_2 },
        LogicalOp::Electron {
            phase,
            angle: -FRAC_PI_2,
        },
    ]
}

/// Gate list of the entangling circuit. `phi` is the phase of the electron
/// pulses around the last conditional gate; 0 gives the triplet, π the
/// singlet.
pub fn entanglement_ops(phi: f64) -> Vec<LogicalOp> {
    use LogicalOp::*;
    let mut ops = Vec::new();
    // Swap the electron polarization onto spin 2, then re-pump the electron.
    ops.extend(txx(2));
    ops.extend(tyy(2, 0.0));
    ops.push(Reset);
    // (|0> - i|1>)/√2, then entangle with spin 2.
    ops.push(Electron {
        phase: 0.0,
        angle: FRAC_PI_2,
    });
    ops.push(Cx {
        spin: 2,
        angle: FRAC_PI_2,
    });
    // Swap electron and spin 1 with the phase knob on the last block.
    ops.push(Cx {
        spin: 1,
        angle: FRAC_PI_2,
    });
    ops.extend([
        Z {
            spin: 1,
            angle: -FRAC_PI_2,
        },
        Z { spin: 1, angle: -PI },
        X {
            spin: 1,
            angle: FRAC_PI_2,
        },
        Z { spin: 1, angle: PI },
        Z {
            spin: 1,
            angle: FRAC_PI_2,
        },
    ]);
    ops.extend(txx(1));
    ops.extend(tyy(1, phi));
    ops.push(X {
        spin: 1,
        angle: FRAC_PI_2,
    });
    ops.push(Reset);
    ops
}

/// Register start state: electron in ms = 0, both nuclei unpolarized.
pub fn initial_register_state() -> DensityMatrix {
    DensityMatrix::basis(2, 0).kron(&DensityMatrix::maximally_mixed(4))
}

/// Runs logical ops with exact target gates and nothing on spectators.
pub fn run_ideal(ops: &[LogicalOp], rho: &DensityMatrix) -> DensityMatrix {
    let mut rho = rho.clone();
    for op in ops {
        rho = match *op {
            LogicalOp::Reset => reset_electron(&rho),
            LogicalOp::Electron { phase, angle } => rho.evolve(&electron_rotation(phase, angle)),
            LogicalOp::Cx { spin, angle } => rho.evolve(&ideal_conditional(spin, angle, 1.0)),
            LogicalOp::X { spin, angle } => rho.evolve(&ideal_unconditional_x(spin, angle, 1.0)),
            LogicalOp::Z { spin, angle } => rho.evolve(&nuclear_op(&Operator::rz(angle), spin)),
        };
    }
    rho
}

/// A compiled circuit plus the nuclear frame to undo at readout.
#[derive(Clone, Debug)]
pub struct CircuitProgram {
    pub sequence: PulseSequence,
    /// Residual Z phase of each nucleus, removed virtually at readout.
    pub readout_frame: [f64; 2],
    pub ledger: PhaseLedger,
    pub gates: Vec<CompiledGate>,
}

impl CircuitProgram {
    pub fn duration_us(&self) -> f64 {
        self.sequence.total_duration_us()
    }

    /// Rotation that maps the physical nuclear state to the logical frame.
    pub fn readout_correction(&self) -> Operator {
        Operator::rz(-self.readout_frame[0]).kron(&Operator::rz(-self.readout_frame[1]))
    }

    /// Propagates `rho` (8-dim) under `sys` and returns the nuclear state in
    /// the logical frame.
    pub fn run(&self, sys: &NvSystem, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let action = sequence_propagator(&self.sequence, sys)?;
        let out = action.apply(rho);
        let rn = DensityMatrix::from_matrix_unchecked(partial_trace_first(out.matrix(), 2, 4));
        Ok(rn.evolve(&self.readout_correction()))
    }
}

/// Compiles logical ops against a nominal system with phase tracking.
pub struct CircuitCompiler<'a> {
    sys: &'a NvSystem,
    pub options: CompileOptions,
    pub orders: GateOrders,
    /// Insert physical Z gates before X-type gates to cancel tracked phase.
    pub compensate: bool,
    ledger: PhaseLedger,
    sequence: PulseSequence,
    gates: Vec<CompiledGate>,
    cache: HashMap<(GateKind, usize, u64), CompiledGate>,
}

impl<'a> CircuitCompiler<'a> {
    pub fn new(sys: &'a NvSystem) -> Self {
        Self {
            sys,
            options: CompileOptions::default(),
            orders: GateOrders::default(),
            compensate: true,
            ledger: PhaseLedger::new(),
            sequence: PulseSequence::new(),
            gates: Vec::new(),
            cache: HashMap::new(),
        }
    }

    pub fn ledger(&self) -> &PhaseLedger {
        &self.ledger
    }

    fn cached(&mut self, spec: GateSpec) -> Result<CompiledGate> {
        let key = (spec.kind, spec.target, spec.angle.to_bits());
        if let Some(g) = self.cache.get(&key) {
            return Ok(g.clone());
        }
        let g = synthesize_gate(&spec, self.sys, &self.options)?;
        self.cache.insert(key, g.clone());
        Ok(g)
    }

    fn emit_electron(&mut self, phase: f64, angle: f64) {
        self.sequence.push(PulseEvent::ElectronRotation {
            phase: phase + self.ledger.electron,
            angle,
        });
    }

    fn emit_gate(&mut self, g: CompiledGate) {
        self.sequence.extend(&g.sequence);
        self.ledger.absorb(&g.frames);
        self.gates.push(g);
    }

    fn compensate_spin(&mut self, spin: usize) -> Result<()> {
        if !self.compensate {
            return Ok(());
        }
        let before = self.ledger.spin(spin);
        if before.abs() < 1e-9 {
            return Ok(());
        }
        let spec = GateSpec::unconditional_z(spin, -before);
        let g = synthesize_gate(&spec, self.sys, &self.options)?;
        self.emit_gate(g);
        Ok(())
    }

    pub fn push(&mut self, op: LogicalOp) -> Result<()> {
        match op {
            LogicalOp::Reset => {
                self.sequence.push(PulseEvent::Reset);
                self.ledger.reset_electron();
            }
            LogicalOp::Electron { phase, angle } => self.emit_electron(phase, angle),
            LogicalOp::Z { spin, angle } => self.ledger.virtual_z(spin, angle),
            LogicalOp::Cx { spin, angle } => {
                self.compensate_spin(spin)?;
                let k = self.orders.conditional[spin - 1];
                let g = self.cached(GateSpec::conditional_x(spin, angle, k))?;
                if g.orientation < 0.0 {
                    // Swapping the branches reverses the rotation sense.
                    self.emit_electron(0.0, PI);
                    self.emit_gate(g);
                    self.emit_electron(0.0, -PI);
                } else {
                    self.emit_gate(g);
                }
            }
            LogicalOp::X { spin, angle } => {
                let k = self.orders.unconditional[spin - 1];
                let g = self.cached(GateSpec::unconditional_x(spin, angle, k))?;
                // A reversed rotation is an x rotation conjugated by Z(π),
                // which costs only a frame change.
                let flip = g.orientation < 0.0;
                if flip {
                    self.ledger.shift_spin(spin, PI);
                }
                self.compensate_spin(spin)?;
                self.emit_gate(g);
                if flip {
                    self.ledger.shift_spin(spin, -PI);
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> CircuitProgram {
        CircuitProgram {
            sequence: self.sequence,
            readout_frame: self.ledger.spins,
            ledger: self.ledger,
            gates: self.gates,
        }
    }
}

pub fn compile_circuit(ops: &[LogicalOp], sys: &NvSystem, compensate: bool) -> Result<CircuitProgram> {
    let mut c = CircuitCompiler::new(sys);
    c.compensate = compensate;
    for op in ops {
        c.push(*op)?;
    }
    Ok(c.finish())
}

/// Compiled entangling circuit with phase compensation.
pub fn entanglement_circuit(phi: f64, sys: &NvSystem) -> Result<CircuitProgram> {
    compile_circuit(&entanglement_ops(phi), sys, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_core::{partial_trace_electron, state_fidelity, PureState};

    #[test]
    fn ideal_circuit_is_exact() {
        for (phi, target) in [(0.0, PureState::triplet()), (PI, PureState::singlet())] {
            let out = run_ideal(&entanglement_ops(phi), &initial_register_state());
            let rn = partial_trace_electron(&out).unwrap();
            let f = state_fidelity(&target, &rn).unwrap();
            assert!((f - 1.0).abs() < 1e-9, "phi = {phi}: F = {f}");
        }
    }

    #[test]
    fn ideal_circuit_phase_selects_state() {
        let out = run_ideal(&entanglement_ops(0.0), &initial_register_state());
        let rn = partial_trace_electron(&out).unwrap();
        assert!(state_fidelity(&PureState::singlet(), &rn).unwrap() < 1e-9);
    }
}
