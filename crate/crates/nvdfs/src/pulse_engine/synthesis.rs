//! Gate synthesis from the hyperfine parameters, and the phase ledger.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{decoupling_block, events_unitary, nuclear_op, PulseEvent, PulseSequence};
use crate::error::{Error, Result};
use crate::numerics::{brent_min, brent_root, linspace};
use crate::nv_model::{branch_coefficients, resonance_tau_seed, Branch, FieldConfig, HyperfineParams, NvSystem};
use crate::spin_core::{axis_angle, qubit_propagator, wrap_angle, CMatrix, Operator, C64};

/// Net rotation of one nucleus over `τ - π - 2τ - π - τ` with the electron
/// starting in `branch`. Returns `(axis, angle)` with angle in `[0, 2π]`.
pub fn unit_rotation(tau_us: f64, p: &HyperfineParams, f: &FieldConfig, branch: Branch) -> ([f64; 3], f64) {
    axis_angle(&unit_matrix(tau_us, p, f.omega_l(), branch))
}

fn unit_matrix(tau_us: f64, p: &HyperfineParams, omega_l: f64, branch: Branch) -> CMatrix {
    let t = tau_us * 1e-3;
    let (az, ax) = branch_coefficients(branch, p, omega_l);
    let (bz, bx) = branch_coefficients(branch.partner(), p, omega_l);
    let outer = qubit_propagator(ax, 0.0, az, t);
    let inner = qubit_propagator(bx, 0.0, bz, 2.0 * t);
    &outer * inner * &outer
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `n0 . n1` of the two branch rotation axes.
pub fn axis_overlap(tau_us: f64, p: &HyperfineParams, f: &FieldConfig) -> f64 {
    let (n0, _) = unit_rotation(tau_us, p, f, Branch::Zero);
    let (n1, _) = unit_rotation(tau_us, p, f, Branch::MinusOne);
    dot(&n0, &n1)
}

/// Nuclear rotation per π pulse, folded into `[0, π/2]`.
pub fn per_pulse_angle(tau_us: f64, p: &HyperfineParams, f: &FieldConfig) -> f64 {
    let (_, a) = unit_rotation(tau_us, p, f, Branch::Zero);
    a.min(2.0 * PI - a) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    ConditionalX,
    UnconditionalX,
    UnconditionalZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    /// 1 or 2.
    pub target: usize,
    pub kind: GateKind,
    pub angle: f64,
    /// Resonance order.
    pub k: u32,
}

impl GateSpec {
    pub fn conditional_x(target: usize, angle: f64, k: u32) -> Self {
        Self {
            target,
            kind: GateKind::ConditionalX,
            angle,
            k,
        }
    }

    pub fn unconditional_x(target: usize, angle: f64, k: u32) -> Self {
        Self {
            target,
            kind: GateKind::UnconditionalX,
            angle,
            k,
        }
    }

    pub fn unconditional_z(target: usize, angle: f64) -> Self {
        Self {
            target,
            kind: GateKind::UnconditionalZ,
            angle,
            k: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.target != 1 && self.target != 2 {
            return Err(Error::InvalidArgument(format!("target {}", self.target)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("resonance order 0".into()));
        }
        if !self.angle.is_finite() {
            return Err(Error::InvalidArgument("non-finite angle".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Allowed relative error of `N * angle_per_pulse` against the target.
    pub angle_tolerance: f64,
    /// Spectator collision threshold on `|n0 . n1 + 1|`.
    pub guard_band: f64,
    /// How many higher orders to try after a collision.
    pub max_order_retries: u32,
    /// Pulse count of the decoupled Z gate.
    pub z_pulses: u32,
    /// Upper end of the Z-gate spacing search, μs.
    pub z_tau_max_us: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            angle_tolerance: 0.06,
            guard_band: 0.05,
            max_order_retries: 4,
            z_pulses: 4,
            z_tau_max_us: 0.3,
        }
    }
}

/// Refines the pulse spacing of an X-type gate near its first-order seed.
pub fn solve_resonance(spec: &GateSpec, p: &HyperfineParams, f: &FieldConfig) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        GateKind::ConditionalX => solve_conditional(spec.k, p, f),
        GateKind::UnconditionalX => solve_unconditional(spec.k, p, f),
        GateKind::UnconditionalZ => Err(Error::InvalidArgument(
            "Z gates are solved against the full register".into(),
        )),
    }
}

fn solve_conditional(k: u32, p: &HyperfineParams, f: &FieldConfig) -> Result<f64> {
    if p.a_perp == 0.0 {
        return Err(Error::SynthesisFailure(format!(
            "{}: no transverse coupling, branches never anti-align",
            p.label
        )));
    }
    let seed = resonance_tau_seed(k, p, f)?;
    let grid = linspace(0.9 * seed, 1.1 * seed, 801);
    let vals: Vec<f64> = grid.iter().map(|&t| axis_overlap(t, p, f)).collect();
    let i = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    let (tau, d) = brent_min(|t| axis_overlap(t, p, f), lo, hi, 1e-13);
    if d > -1.0 + 1e-8 {
        return Err(Error::SynthesisFailure(format!(
            "{}: order {k} has no anti-aligned point within 10% of {seed:.4} us (best n0.n1 = {d:.6})",
            p.label
        )));
    }
    Ok(tau)
}

fn solve_unconditional(k: u32, p: &HyperfineParams, f: &FieldConfig) -> Result<f64> {
    let seed = k as f64 / (2.0 * (f.omega_l() + p.a_par / 2.0)) * 1e3;
    let axis_z = |t: f64| unit_rotation(t, p, f, Branch::Zero).0[2];
    let grid = linspace(0.95 * seed, 1.05 * seed, 801);
    let vals: Vec<f64> = grid.iter().map(|&t| axis_z(t)).collect();
    let mut best: Option<f64> = None;
    for i in 0..grid.len() - 1 {
        if vals[i] * vals[i + 1] <= 0.0 {
            if let Some(r) = brent_root(axis_z, grid[i], grid[i + 1], 1e-14) {
                let (n0, _) = unit_rotation(r, p, f, Branch::Zero);
                if n0[0].abs() > 0.9 {
                    let closer = best.is_none_or(|b| (r - seed).abs() < (b - seed).abs());
                    if closer {
                        best = Some(r);
                    }
                }
            }
        }
    }
    best.ok_or_else(|| Error::SynthesisFailure(format!("{}: no unconditional x rotation near {seed:.4} us", p.label)))
}

/// Smallest pulse count whose rotation matches `target` within `tol`.
pub fn pick_pulse_count(per_pulse: f64, target: f64, tol: f64) -> Result<u32> {
    if !(per_pulse > 0.0) {
        return Err(Error::SynthesisFailure("zero rotation per pulse".into()));
    }
    let target = target.abs();
    let lo = ((1.0 - tol) * target / per_pulse).ceil().max(1.0) as u32;
    let n = lo;
    if ((n as f64 * per_pulse) - target).abs() <= tol * target {
        Ok(n)
    } else {
        Err(Error::SynthesisFailure(format!(
            "angle {target:.4} unreachable: {per_pulse:.5} rad per pulse"
        )))
    }
}

/// Electron and nuclear Z frames `(χ, γ1, γ2)` that best explain `k` as a
/// product of Z rotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frames {
    pub electron: f64,
    pub spins: [f64; 2],
}

impl Frames {
    pub fn operator(&self) -> Operator {
        Operator::rz(self.electron)
            .kron(&Operator::rz(self.spins[0]))
            .kron(&Operator::rz(self.spins[1]))
    }
}

fn circular_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let s: C64 = xs.map(|x| C64::from_polar(1.0, x)).sum();
    s.arg()
}

/// Fits Z frames to the diagonal phases of an 8x8 matrix.
pub fn fit_frames(k: &Operator) -> Frames {
    let d: Vec<f64> = (0..8).map(|i| k.matrix()[(i, i)].arg()).collect();
    let at = |e: usize, a: usize, b: usize| d[4 * e + 2 * a + b];
    let pairs = |f: &dyn Fn(usize, usize) -> f64| {
        circular_mean((0..2).flat_map(|x| (0..2).map(move |y| (x, y))).map(|(x, y)| f(x, y)))
    };
    Frames {
        electron: pairs(&|a, b| at(1, a, b) - at(0, a, b)),
        spins: [
            pairs(&|e, b| at(e, 1, b) - at(e, 0, b)),
            pairs(&|e, a| at(e, a, 1) - at(e, a, 0)),
        ],
    }
}

/// `|tr(D† K)| / 8` with the fitted frame operator `D`.
pub fn frame_overlap(k: &Operator, frames: &Frames) -> f64 {
    (frames.operator().adjoint() * k).trace().norm() / 8.0
}

/// Ideal conditional rotation: `Rx(sθ)` on the target for ms = 0 and
/// `Rx(-sθ)` for ms = -1.
pub fn ideal_conditional(target: usize, angle: f64, orientation: f64) -> Operator {
    let p0 = Operator::projector(0).kron(&Operator::identity(4));
    let p1 = Operator::projector(1).kron(&Operator::identity(4));
    let r0 = nuclear_op(&Operator::rx(orientation * angle), target);
    let r1 = nuclear_op(&Operator::rx(-orientation * angle), target);
    (p0 * r0).add(&(p1 * r1))
}

pub fn ideal_unconditional_x(target: usize, angle: f64, orientation: f64) -> Operator {
    nuclear_op(&Operator::rx(orientation * angle), target)
}

/// Phase bookkeeping: `physical - intended` Z phase of each subsystem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseLedger {
    pub electron: f64,
    pub spins: [f64; 2],
}

impl PhaseLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn spin(&self, index: usize) -> f64 {
        self.spins[index - 1]
    }

    pub fn absorb(&mut self, f: &Frames) {
        self.electron = wrap_angle(self.electron + f.electron);
        for j in 0..2 {
            self.spins[j] = wrap_angle(self.spins[j] + f.spins[j]);
        }
    }

    /// An intended Z rotation on a nucleus, applied as a frame change.
    pub fn virtual_z(&mut self, spin: usize, angle: f64) {
        self.spins[spin - 1] = wrap_angle(self.spins[spin - 1] - angle);
    }

    pub fn shift_spin(&mut self, spin: usize, angle: f64) {
        self.spins[spin - 1] = wrap_angle(self.spins[spin - 1] + angle);
    }

    pub fn reset_electron(&mut self) {
        self.electron = 0.0;
    }
}

/// A gate compiled against a nominal system.
#[derive(Clone, Debug)]
pub struct CompiledGate {
    pub spec: GateSpec,
    /// Resonance order actually used after collision retries.
    pub order: u32,
    pub tau_us: f64,
    pub n_pulses: u32,
    pub sequence: PulseSequence,
    /// Nominal 8x8 propagator.
    pub unitary: Operator,
    /// Sign of the realized x rotation relative to the request.
    pub orientation: f64,
    /// Z frames left behind, relative to the oriented ideal gate.
    pub frames: Frames,
    /// Overlap with the ideal gate after removing the frames.
    pub overlap: f64,
}

impl CompiledGate {
    pub fn duration_us(&self) -> f64 {
        self.sequence.total_duration_us()
    }

    /// Ideal counterpart with the realized orientation.
    pub fn ideal(&self) -> Operator {
        let s = &self.spec;
        match s.kind {
            GateKind::ConditionalX => ideal_conditional(s.target, s.angle, self.orientation),
            GateKind::UnconditionalX => ideal_unconditional_x(s.target, s.angle, self.orientation),
            GateKind::UnconditionalZ => Operator::identity(8),
        }
    }
}

fn spectator_collision(spec: &GateSpec, tau: f64, sys: &NvSystem, guard: f64) -> Option<usize> {
    let spectator = 3 - spec.target;
    let p = &sys.spins[spectator - 1];
    let d = axis_overlap(tau, p, &sys.field);
    ((d + 1.0).abs() < guard).then_some(spectator)
}

fn oriented(m: Operator, ideal: impl Fn(f64) -> Operator) -> (f64, Frames, f64, Operator) {
    let mut best: Option<(f64, Frames, f64)> = None;
    for s in [1.0, -1.0] {
        let k = &m * &ideal(s).adjoint();
        let fr = fit_frames(&k);
        let ov = frame_overlap(&k, &fr);
        if best.is_none_or(|b| ov > b.2) {
            best = Some((s, fr, ov));
        }
    }
    let (s, fr, ov) = best.unwrap();
    (s, fr, ov, m)
}

/// Synthesizes a gate without touching any ledger.
pub fn synthesize_gate(spec: &GateSpec, sys: &NvSystem, opts: &CompileOptions) -> Result<CompiledGate> {
    spec.validate()?;
    if spec.angle == 0.0 {
        return Ok(CompiledGate {
            spec: *spec,
            order: spec.k,
            tau_us: 0.0,
            n_pulses: 0,
            sequence: PulseSequence::new(),
            unitary: Operator::identity(8),
            orientation: 1.0,
            frames: Frames::default(),
            overlap: 1.0,
        });
    }
    match spec.kind {
        GateKind::UnconditionalZ => synthesize_z(spec, sys, opts),
        _ => synthesize_x(spec, sys, opts),
    }
}

fn synthesize_x(spec: &GateSpec, sys: &NvSystem, opts: &CompileOptions) -> Result<CompiledGate> {
    let p = &sys.spins[spec.target - 1];
    let mut last_err = None;
    for order in spec.k..=spec.k + opts.max_order_retries {
        let trial = GateSpec { k: order, ..*spec };
        let tau = solve_resonance(&trial, p, &sys.field)?;
        if let Some(spectator) = spectator_collision(spec, tau, sys, opts.guard_band) {
            last_err = Some(Error::CrosstalkCollision { spectator, tau_us: tau });
            continue;
        }
        let n = pick_pulse_count(per_pulse_angle(tau, p, &sys.field), spec.angle, opts.angle_tolerance)?;
        let sequence = decoupling_block(tau, n);
        let m = events_unitary(&sequence.events, sys)?;
        let (orientation, frames, overlap, unitary) = match spec.kind {
            GateKind::ConditionalX => oriented(m, |s| ideal_conditional(spec.target, spec.angle, s)),
            _ => oriented(m, |s| ideal_unconditional_x(spec.target, spec.angle, s)),
        };
        return Ok(CompiledGate {
            spec: *spec,
            order,
            tau_us: tau,
            n_pulses: n,
            sequence,
            unitary,
            orientation,
            frames,
            overlap,
        });
    }
    Err(last_err.unwrap())
}

/// Target-spin Z frame produced by a decoupled block at spacing τ.
fn z_block_phase(tau: f64, n: u32, target: usize, sys: &NvSystem) -> f64 {
    let seq = decoupling_block(tau, n);
    let m = events_unitary(&seq.events, sys).expect("reset-free block");
    fit_frames(&m).spins[target - 1]
}

fn synthesize_z(spec: &GateSpec, sys: &NvSystem, opts: &CompileOptions) -> Result<CompiledGate> {
    let target = wrap_angle(spec.angle);
    if target.abs() < 1e-12 {
        return synthesize_gate(&GateSpec { angle: 0.0, ..*spec }, sys, opts);
    }
    let n = opts.z_pulses;
    let g = |t: f64| wrap_angle(z_block_phase(t, n, spec.target, sys) - target);
    let grid = linspace(1e-4, opts.z_tau_max_us, 601);
    let vals: Vec<f64> = grid.iter().map(|&t| g(t)).collect();
    let mut tau = None;
    for i in 0..grid.len() - 1 {
        let (a, b) = (vals[i], vals[i + 1]);
        if a <= 0.0 && b > 0.0 && (b - a) < PI {
            tau = brent_root(g, grid[i], grid[i + 1], 1e-14);
            break;
        }
    }
    let tau = tau.ok_or_else(|| {
        Error::SynthesisFailure(format!(
            "Z({:.4}) on spin {}: no spacing below {} us",
            spec.angle, spec.target, opts.z_tau_max_us
        ))
    })?;
    let sequence = decoupling_block(tau, n);
    let unitary = events_unitary(&sequence.events, sys)?;
    let frames = fit_frames(&unitary);
    let overlap = frame_overlap(&unitary, &frames);
    Ok(CompiledGate {
        spec: *spec,
        order: spec.k,
        tau_us: tau,
        n_pulses: n,
        sequence,
        unitary,
        orientation: 1.0,
        frames,
        overlap,
    })
}

/// Synthesizes a gate and records the Z phases it leaves on every
/// subsystem in `ledger`.
pub fn compile_gate(
    spec: &GateSpec,
    sys: &NvSystem,
    ledger: &mut PhaseLedger,
    opts: &CompileOptions,
) -> Result<CompiledGate> {
    let g = synthesize_gate(spec, sys, opts)?;
    ledger.absorb(&g.frames);
    Ok(g)
}

/// Physical Z gate that cancels the accumulated phase of `spin`; updates the
/// ledger, which afterwards reads zero for that spin.
pub fn ledger_compensation(
    ledger: &mut PhaseLedger,
    spin: usize,
    sys: &NvSystem,
    opts: &CompileOptions,
) -> Result<Vec<PulseEvent>> {
    let f = wrap_angle(ledger.spin(spin));
    if f.abs() < 1e-9 {
        return Ok(vec![]);
    }
    let g = compile_gate(&GateSpec::unconditional_z(spin, -f), sys, ledger, opts)?;
    ledger.spins[spin - 1] = wrap_angle(ledger.spins[spin - 1]);
    Ok(g.sequence.events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sys() -> NvSystem {
        NvSystem::default_register()
    }

    #[test]
    fn no_coupling_no_conditionality() {
        let p = HyperfineParams::new(0.0, 0.0, "x").unwrap();
        let s = sys();
        let (n0, a0) = unit_rotation(1.3, &p, &s.field, Branch::Zero);
        let (n1, a1) = unit_rotation(1.3, &p, &s.field, Branch::MinusOne);
        assert_abs_diff_eq!(n0[2].abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dot(&n0, &n1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a0, a1, epsilon = 1e-12);
    }

    #[test]
    fn spin1_conditional_resonance() {
        let s = sys();
        let spec = GateSpec::conditional_x(1, PI / 2.0, 3);
        let tau = solve_resonance(&spec, &s.spins[0], &s.field).unwrap();
        let seed = resonance_tau_seed(3, &s.spins[0], &s.field).unwrap();
        assert!((tau / seed - 1.0).abs() < 0.03);
        assert!(axis_overlap(tau, &s.spins[0], &s.field) <= -1.0 + 1e-8);
    }

    #[test]
    fn no_transverse_coupling_fails() {
        let s = sys();
        let p = HyperfineParams::new(-77.02, 0.0, "x").unwrap();
        let spec = GateSpec::conditional_x(1, PI / 2.0, 3);
        assert!(matches!(
            solve_resonance(&spec, &p, &s.field),
            Err(Error::SynthesisFailure(_))
        ));
    }

    #[test]
    fn pulse_count_rule() {
        assert_eq!(pick_pulse_count(0.2257, PI / 2.0, 0.02).unwrap(), 7);
        assert_eq!(pick_pulse_count(0.0865, PI / 2.0, 0.02).unwrap(), 18);
        assert!(pick_pulse_count(0.1861, PI / 2.0, 0.02).is_err());
        assert_eq!(pick_pulse_count(0.1861, PI / 2.0, 0.06).unwrap(), 8);
    }

    #[test]
    fn zero_angle_is_empty() {
        let s = sys();
        let mut ledger = PhaseLedger::new();
        let g = compile_gate(
            &GateSpec::conditional_x(1, 0.0, 3),
            &s,
            &mut ledger,
            &CompileOptions::default(),
        )
        .unwrap();
        assert!(g.sequence.is_empty());
        assert_eq!(ledger, PhaseLedger::new());
    }

    #[test]
    fn fit_frames_recovers_pure_z() {
        let f = Frames {
            electron: 0.4,
            spins: [-1.1, 2.9],
        };
        let k = f.operator();
        let g = fit_frames(&k);
        assert_abs_diff_eq!(g.electron, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(g.spins[0], -1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.spins[1], 2.9, epsilon = 1e-12);
        assert_abs_diff_eq!(frame_overlap(&k, &g), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn compensation_zeroes_entry() {
        let s = sys();
        let mut ledger = PhaseLedger::new();
        ledger.spins = [PI / 2.0, 0.3];
        let ev = ledger_compensation(&mut ledger, 1, &s, &CompileOptions::default()).unwrap();
        assert!(!ev.is_empty());
        assert!(ledger.spin(1).abs() < 1e-6);
        let mut zero = PhaseLedger::new();
        assert!(ledger_compensation(&mut zero, 2, &s, &CompileOptions::default())
            .unwrap()
            .is_empty());
    }
}
