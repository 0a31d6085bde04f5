//! Hyperfine physics of the NV register.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse_engine::unit_rotation;
use crate::spin_core::Operator;

/// 13C gyromagnetic ratio in kHz/G.
pub const GAMMA_C13: f64 = 1.0705;

/// Electron spin projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Zero,
    MinusOne,
    PlusOne,
}

impl Branch {
    pub fn ms(self) -> i32 {
        match self {
            Branch::Zero => 0,
            Branch::MinusOne => -1,
            Branch::PlusOne => 1,
        }
    }

    pub fn from_ms(ms: i32) -> Result<Self> {
        match ms {
            0 => Ok(Branch::Zero),
            -1 => Ok(Branch::MinusOne),
            1 => Ok(Branch::PlusOne),
            _ => Err(Error::InvalidArgument(format!("ms = {ms}"))),
        }
    }

    /// The branch the electron toggles into under a π pulse.
    pub fn partner(self) -> Self {
        match self {
            Branch::Zero => Branch::MinusOne,
            _ => Branch::Zero,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperfineParams {
    /// A_par in kHz, signed.
    pub a_par: f64,
    /// A_perp in kHz, non-negative.
    pub a_perp: f64,
    pub label: String,
}

impl HyperfineParams {
    pub fn new(a_par: f64, a_perp: f64, label: impl Into<String>) -> Result<Self> {
        if a_perp < 0.0 || !a_perp.is_finite() || !a_par.is_finite() {
            return Err(Error::InvalidArgument(format!("hyperfine ({a_par}, {a_perp})")));
        }
        Ok(Self {
            a_par,
            a_perp,
            label: label.into(),
        })
    }

    /// True when the weak-coupling formulas are questionable.
    pub fn strongly_coupled(&self, field: &FieldConfig) -> bool {
        self.a_par.abs() > field.omega_l() / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Gauss.
    pub b_z: f64,
    /// kHz/G.
    pub gamma_c13: f64,
}

impl FieldConfig {
    pub fn new(b_z: f64, gamma_c13: f64) -> Result<Self> {
        if !(b_z > 0.0) || !(gamma_c13 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "field b_z = {b_z}, gamma = {gamma_c13}"
            )));
        }
        Ok(Self { b_z, gamma_c13 })
    }

    /// Larmor frequency in kHz.
    pub fn omega_l(&self) -> f64 {
        self.gamma_c13 * self.b_z
    }

    /// Same config with the field shifted by `delta_b` Gauss.
    pub fn shifted(&self, delta_b: f64) -> Self {
        Self {
            b_z: self.b_z + delta_b,
            gamma_c13: self.gamma_c13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvSystem {
    pub field: FieldConfig,
    pub spins: [HyperfineParams; 2],
    /// Electron T1 in ms.
    pub t1_electron: f64,
}

impl NvSystem {
    pub fn new(field: FieldConfig, spins: [HyperfineParams; 2], t1_electron: f64) -> Result<Self> {
        if spins[0].label == spins[1].label {
            return Err(Error::InvalidArgument("duplicate spin labels".into()));
        }
        if !(t1_electron > 0.0) {
            return Err(Error::InvalidArgument(format!("t1 = {t1_electron}")));
        }
        Ok(Self {
            field,
            spins,
            t1_electron,
        })
    }

    /// The two-spin register at 480 G with the calibrated couplings.
    pub fn default_register() -> Self {
        Self {
            field: FieldConfig {
                b_z: 480.0,
                gamma_c13: GAMMA_C13,
            },
            spins: [
                HyperfineParams {
                    a_par: -77.02,
                    a_perp: 114.5,
                    label: "spin1".into(),
                },
                HyperfineParams {
                    a_par: 71.03,
                    a_perp: 58.7,
                    label: "spin2".into(),
                },
            ],
            t1_electron: 2.5,
        }
    }

    /// Hyperfine parameters by 1-based spin index.
    pub fn spin(&self, index: usize) -> Result<&HyperfineParams> {
        match index {
            1 | 2 => Ok(&self.spins[index - 1]),
            _ => Err(Error::InvalidArgument(format!("spin index {index}"))),
        }
    }

    pub fn with_field_offset(&self, delta_b: f64) -> Self {
        Self {
            field: self.field.shifted(delta_b),
            ..self.clone()
        }
    }
}

/// `(hz, hx)` such that the branch Hamiltonian is `hz Iz + hx Ix`.
pub fn branch_coefficients(branch: Branch, p: &HyperfineParams, omega_l: f64) -> (f64, f64) {
    match branch {
        Branch::Zero => (omega_l, 0.0),
        Branch::MinusOne => (omega_l + p.a_par, p.a_perp),
        Branch::PlusOne => (omega_l - p.a_par, -p.a_perp),
    }
}

/// Nuclear Hamiltonian (kHz) conditioned on the electron branch.
pub fn branch_hamiltonian(ms: i32, p: &HyperfineParams, f: &FieldConfig) -> Result<Operator> {
    let branch = Branch::from_ms(ms)?;
    let (hz, hx) = branch_coefficients(branch, p, f.omega_l());
    Ok(Operator::spin_z().scale(hz).add(&Operator::spin_x().scale(hx)))
}

/// Nuclear transition frequencies in each electron branch, kHz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrFrequencies {
    pub omega_0: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
}

impl OdmrFrequencies {
    pub fn for_branch(&self, b: Branch) -> f64 {
        match b {
            Branch::Zero => self.omega_0,
            Branch::PlusOne => self.omega_plus,
            Branch::MinusOne => self.omega_minus,
        }
    }
}

pub fn odmr_frequencies(p: &HyperfineParams, f: &FieldConfig) -> OdmrFrequencies {
    let wl = f.omega_l();
    OdmrFrequencies {
        omega_0: wl,
        omega_plus: ((p.a_par - wl).powi(2) + p.a_perp.powi(2)).sqrt(),
        omega_minus: ((p.a_par + wl).powi(2) + p.a_perp.powi(2)).sqrt(),
    }
}

/// Recovers `(a_par, a_perp)` from measured line centers.
pub fn invert_odmr(freqs: &OdmrFrequencies) -> Result<(f64, f64)> {
    let wl = freqs.omega_0;
    if !(wl > 0.0) {
        return Err(Error::InvalidArgument(format!("omega_0 = {wl}")));
    }
    let wp2 = freqs.omega_plus.powi(2);
    let wm2 = freqs.omega_minus.powi(2);
    let a_par = (wm2 - wp2) / (4.0 * wl);
    let perp2 = (wp2 + wm2) / 2.0 - a_par * a_par - wl * wl;
    Ok((a_par, perp2.max(0.0).sqrt()))
}

/// First-order resonance spacing for order `k`, in μs.
pub fn resonance_tau_seed(k: u32, p: &HyperfineParams, f: &FieldConfig) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("resonance order must be >= 1".into()));
    }
    let denom = 2.0 * (2.0 * f.omega_l() + p.a_par);
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive resonance denominator {denom}"
        )));
    }
    Ok((2 * k - 1) as f64 / denom * 1e3)
}

/// Probability that electron coherence survives `n_pulses` π pulses at
/// spacing τ, from the exact branch rotations of the unit cell.
pub fn analytic_coherence(n_pulses: u32, tau_us: f64, p: &HyperfineParams, f: &FieldConfig) -> Result<f64> {
    if n_pulses == 0 || !n_pulses.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "pulse count {n_pulses} must be even and positive"
        )));
    }
    if !(tau_us > 0.0) {
        return Err(Error::InvalidArgument(format!("tau = {tau_us}")));
    }
    let (n0, phi) = unit_rotation(tau_us, p, f, Branch::Zero);
    let (n1, _) = unit_rotation(tau_us, p, f, Branch::MinusOne);
    let dot: f64 = n0.iter().zip(&n1).map(|(a, b)| a * b).sum();
    let half = 0.5 * (n_pulses / 2) as f64 * phi;
    let m = 1.0 - (1.0 - dot) * half.sin().powi(2);
    Ok(((m + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Transverse mixing ratio of the ms = -1 quantization axis.
pub fn mixing_ratio(p: &HyperfineParams, f: &FieldConfig) -> f64 {
    p.a_perp / ((p.a_par + f.omega_l()).powi(2) + p.a_perp.powi(2)).sqrt()
}

/// Coherence on resonance in the weak-coupling limit.
pub fn resonant_coherence(n_pulses: u32, p: &HyperfineParams, f: &FieldConfig) -> f64 {
    ((n_pulses as f64 * mixing_ratio(p, f)).cos() + 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn splitting(op: &Operator) -> f64 {
        let e = crate::spin_core::DensityMatrix::from_matrix_unchecked(op.matrix().clone()).eigenvalues();
        e[1] - e[0]
    }

    #[test]
    fn larmor_at_480() {
        let sys = NvSystem::default_register();
        assert_abs_diff_eq!(sys.field.omega_l(), 513.84, epsilon = 1e-9);
    }

    #[test]
    fn splittings_match_odmr() {
        let sys = NvSystem::default_register();
        for p in &sys.spins {
            let w = odmr_frequencies(p, &sys.field);
            for (ms, expect) in [(0, w.omega_0), (-1, w.omega_minus), (1, w.omega_plus)] {
                let h = branch_hamiltonian(ms, p, &sys.field).unwrap();
                assert_abs_diff_eq!(splitting(&h), expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn spin1_minus_line() {
        let sys = NvSystem::default_register();
        let w = odmr_frequencies(&sys.spins[0], &sys.field);
        let expect = ((513.84f64 - 77.02).powi(2) + 114.5f64.powi(2)).sqrt();
        assert_abs_diff_eq!(w.omega_minus, expect, epsilon = 1e-12);
        assert!((w.omega_minus - 451.5).abs() < 0.2);
    }

    #[test]
    fn zero_hyperfine_degenerate() {
        let p = HyperfineParams::new(0.0, 0.0, "x").unwrap();
        let f = FieldConfig::new(480.0, GAMMA_C13).unwrap();
        let w = odmr_frequencies(&p, &f);
        assert_eq!(w.omega_plus, w.omega_0);
        assert_eq!(w.omega_minus, w.omega_0);
        let h0 = branch_hamiltonian(0, &p, &f).unwrap();
        let h1 = branch_hamiltonian(-1, &p, &f).unwrap();
        assert!(h0.max_abs_diff(&h1) < 1e-15);
    }

    #[test]
    fn invalid_ms() {
        let sys = NvSystem::default_register();
        assert!(branch_hamiltonian(2, &sys.spins[0], &sys.field).is_err());
    }

    #[test]
    fn inversion_roundtrip() {
        let sys = NvSystem::default_register();
        for p in &sys.spins {
            let (a, b) = invert_odmr(&odmr_frequencies(p, &sys.field)).unwrap();
            assert_abs_diff_eq!(a, p.a_par, epsilon = 1e-9);
            assert_abs_diff_eq!(b, p.a_perp, epsilon = 1e-9);
        }
    }

    #[test]
    fn seed_values() {
        let sys = NvSystem::default_register();
        let t = resonance_tau_seed(3, &sys.spins[0], &sys.field).unwrap();
        assert_abs_diff_eq!(t, 5.0 / (2.0 * (2.0 * 513.84 - 77.02)) * 1e3, epsilon = 1e-12);
        assert!((t - 2.63).abs() < 0.01);
        let p = HyperfineParams::new(0.0, 10.0, "x").unwrap();
        let t1 = resonance_tau_seed(1, &p, &sys.field).unwrap();
        assert_abs_diff_eq!(t1, 1e3 / (4.0 * 513.84), epsilon = 1e-12);
        assert!(resonance_tau_seed(0, &p, &sys.field).is_err());
        let bad = HyperfineParams::new(-2000.0, 10.0, "x").unwrap();
        assert!(resonance_tau_seed(1, &bad, &sys.field).is_err());
    }

    #[test]
    fn coherence_without_coupling_is_one() {
        let p = HyperfineParams::new(0.0, 0.0, "x").unwrap();
        let f = FieldConfig::new(480.0, GAMMA_C13).unwrap();
        let tau = 1e3 / (2.0 * f.omega_l());
        assert_abs_diff_eq!(analytic_coherence(16, tau, &p, &f).unwrap(), 1.0, epsilon = 1e-12);
        assert!(analytic_coherence(3, tau, &p, &f).is_err());
    }

    #[test]
    fn resonant_formula_value() {
        let sys = NvSystem::default_register();
        let mx = mixing_ratio(&sys.spins[0], &sys.field);
        assert!((mx - 0.2536).abs() < 1e-3);
        let p = resonant_coherence(16, &sys.spins[0], &sys.field);
        assert!((p - 0.195).abs() < 0.005);
    }
}
