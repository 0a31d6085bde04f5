//! Charge and spin initialization errors and the nuclear init/readout
//! fidelity they imply.
//!
//! The chain init → swap → reset → swap is tracked as population algebra
//! over state labels, with weights kept as exact polynomials in the four
//! populations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_core::DensityMatrix;

/// Electron populations after optical pumping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPopulations {
    /// ms = 0.
    pub p1: f64,
    /// Mixture of ms = 0 and ms = -1.
    pub p2: f64,
    /// ms = +1.
    pub p3: f64,
    /// NV0 charge state.
    pub p4: f64,
}

impl InitPopulations {
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Result<Self> {
        let p = Self { p1, p2, p3, p4 };
        if p.as_array().iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("negative population in {p:?}")));
        }
        if (p1 + p2 + p3 + p4 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "populations sum to {}",
                p1 + p2 + p3 + p4
            )));
        }
        Ok(p)
    }

    pub fn perfect() -> Self {
        Self {
            p1: 1.0,
            p2: 0.0,
            p3: 0.0,
            p4: 0.0,
        }
    }

    /// Default error budget, giving a single-spin fidelity of 0.9.
    pub fn typical() -> Self {
        Self {
            p1: 0.7,
            p2: 0.1,
            p3: 0.1,
            p4: 0.1,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p1, self.p2, self.p3, self.p4]
    }

    fn spin_sum(&self) -> f64 {
        self.p1 + self.p2 + self.p3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioFlag {
    /// Re-pumping redraws the charge state.
    NoMemory,
    /// Re-pumping keeps the charge state.
    ChargePreserving,
}

/// Electron labels: 0 and 1 are ms = 0 and ms = -1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElectronLabel {
    Zero,
    One,
    Mixed,
    PlusOne,
    Charge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NuclearLabel {
    Zero,
    One,
    Mixed,
}

/// Polynomial in (p1, p2, p3, p4) with integer coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Poly(BTreeMap<[u32; 4], i64>);

impl Poly {
    pub fn constant(c: i64) -> Self {
        let mut m = BTreeMap::new();
        if c != 0 {
            m.insert([0; 4], c);
        }
        Poly(m)
    }

    /// The single variable p_{i+1}.
    pub fn var(i: usize) -> Self {
        let mut e = [0; 4];
        e[i] = 1;
        Poly(BTreeMap::from([(e, 1)]))
    }

    pub fn sum_of(vars: &[usize]) -> Self {
        vars.iter().fold(Poly::default(), |a, &i| a.add(&Poly::var(i)))
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut m = self.0.clone();
        for (e, c) in &other.0 {
            let v = m.entry(*e).or_insert(0);
            *v += c;
            if *v == 0 {
                m.remove(e);
            }
        }
        Poly(m)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (ea, ca) in &self.0 {
            for (eb, cb) in &other.0 {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2], ea[3] + eb[3]];
                out = out.add(&Poly(BTreeMap::from([(e, ca * cb)])));
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Poly {
        (0..k).fold(Poly::constant(1), |a, _| a.mul(self))
    }

    pub fn eval(&self, p: &InitPopulations) -> f64 {
        let x = p.as_array();
        self.0
            .iter()
            .map(|(e, &c)| c as f64 * (0..4).map(|i| x[i].powi(e[i] as i32)).product::<f64>())
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_nonnegative_coefficients(&self) -> bool {
        self.0.values().all(|&c| c >= 0)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (e, c) in &self.0 {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            let mono: Vec<String> = (0..4)
                .filter(|&i| e[i] > 0)
                .map(|i| {
                    if e[i] == 1 {
                        format!("p{}", i + 1)
                    } else {
                        format!("p{}^{}", i + 1, e[i])
                    }
                })
                .collect();
            match (mono.is_empty(), *c) {
                (true, c) => write!(f, "{c}")?,
                (false, 1) => f.write_str(&mono.join("·"))?,
                (false, c) => write!(f, "{c}·{}", mono.join("·"))?,
            }
        }
        Ok(())
    }
}

/// `num / (p1+p2+p3)^den`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Weight {
    pub num: Poly,
    pub den: u32,
}

impl Weight {
    fn with_den(&self, den: u32) -> Poly {
        self.num.mul(&Poly::sum_of(&[0, 1, 2]).pow(den - self.den))
    }

    pub fn eval(&self, p: &InitPopulations) -> f64 {
        self.num.eval(p) / p.spin_sum().powi(self.den as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTerm {
    pub electron: ElectronLabel,
    pub nuclear: NuclearLabel,
    pub weight: Weight,
}

/// Population table after the full chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub scenario: ScenarioFlag,
    pub terms: Vec<ChainTerm>,
}

impl ChainState {
    pub fn weight(&self, e: ElectronLabel, n: NuclearLabel) -> Option<&Weight> {
        self.terms
            .iter()
            .find(|t| t.electron == e && t.nuclear == n)
            .map(|t| &t.weight)
    }

    /// Sum of weights, brought to the common denominator. Equals
    /// `(p1+p2+p3+p4)^d · S^k` when the chain conserves probability.
    pub fn total_numerator(&self) -> (Poly, u32) {
        let den = self.terms.iter().map(|t| t.weight.den).max().unwrap_or(0);
        let num = self
            .terms
            .iter()
            .fold(Poly::default(), |a, t| a.add(&t.weight.with_den(den)));
        (num, den)
    }

    /// Probability of a bright (ms = 0) electron at readout.
    pub fn bright_population(&self, p: &InitPopulations) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let w = t.weight.eval(p);
                match t.electron {
                    ElectronLabel::Zero => w,
                    ElectronLabel::Mixed => 0.5 * w,
                    _ => 0.0,
                }
            })
            .sum()
    }
}

type Table = BTreeMap<(ElectronLabel, NuclearLabel), (Poly, u32)>;

fn insert(t: &mut Table, key: (ElectronLabel, NuclearLabel), w: Poly, den: u32) {
    match t.remove(&key) {
        None => {
            t.insert(key, (w, den));
        }
        Some((w0, d0)) => {
            let d = d0.max(den);
            let s = Poly::sum_of(&[0, 1, 2]);
            let sum = w0.mul(&s.pow(d - d0)).add(&w.mul(&s.pow(d - den)));
            t.insert(key, (sum, d));
        }
    }
}

fn pump_draw() -> Vec<(ElectronLabel, Poly)> {
    vec![
        (ElectronLabel::Zero, Poly::var(0)),
        (ElectronLabel::Mixed, Poly::var(1)),
        (ElectronLabel::PlusOne, Poly::var(2)),
        (ElectronLabel::Charge, Poly::var(3)),
    ]
}

fn swap(t: &Table) -> Table {
    use ElectronLabel as E;
    use NuclearLabel as N;
    let mut out = Table::new();
    for (&(e, n), (w, d)) in t {
        // Only the ms = 0 / -1 manifold takes part in the swap.
        let e_qubit = match e {
            E::Zero => Some(N::Zero),
            E::One => Some(N::One),
            E::Mixed => Some(N::Mixed),
            _ => None,
        };
        let key = match e_qubit {
            Some(new_n) => {
                let new_e = match n {
                    N::Zero => E::Zero,
                    N::One => E::One,
                    N::Mixed => E::Mixed,
                };
                (new_e, new_n)
            }
            None => (e, n),
        };
        insert(&mut out, key, w.clone(), *d);
    }
    out
}

fn repump(t: &Table, scenario: ScenarioFlag) -> Table {
    let mut out = Table::new();
    for (&(e, n), (w, d)) in t {
        match scenario {
            ScenarioFlag::NoMemory => {
                for (e2, q) in pump_draw() {
                    insert(&mut out, (e2, n), w.mul(&q), *d);
                }
            }
            ScenarioFlag::ChargePreserving => {
                if e == ElectronLabel::Charge {
                    insert(&mut out, (e, n), w.clone(), *d);
                } else {
                    for (e2, q) in pump_draw().into_iter().take(3) {
                        insert(&mut out, (e2, n), w.mul(&q), d + 1);
                    }
                }
            }
        }
    }
    out
}

fn flip_nuclear(t: &Table) -> Table {
    let mut out = Table::new();
    for (&(e, n), (w, d)) in t {
        let n2 = match n {
            NuclearLabel::Zero => NuclearLabel::One,
            NuclearLabel::One => NuclearLabel::Zero,
            NuclearLabel::Mixed => NuclearLabel::Mixed,
        };
        insert(&mut out, (e, n2), w.clone(), *d);
    }
    out
}

fn run_chain(scenario: ScenarioFlag, flip: bool) -> ChainState {
    let mut t = Table::new();
    for (e, q) in pump_draw() {
        insert(&mut t, (e, NuclearLabel::Mixed), q, 0);
    }
    let t = swap(&t);
    let t = repump(&t, scenario);
    let t = if flip { flip_nuclear(&t) } else { t };
    let t = swap(&t);
    ChainState {
        scenario,
        terms: t
            .into_iter()
            .filter(|(_, (w, _))| !w.is_zero())
            .map(|((electron, nuclear), (num, den))| ChainTerm {
                electron,
                nuclear,
                weight: Weight { num, den },
            })
            .collect(),
    }
}

/// Symbolic state after init → swap → re-pump → swap.
pub fn chain_state(scenario: ScenarioFlag) -> ChainState {
    run_chain(scenario, false)
}

/// Same chain with the nucleus flipped before the readout swap.
pub fn chain_state_flipped(scenario: ScenarioFlag) -> ChainState {
    run_chain(scenario, true)
}

/// Readout contrast of a nuclear spin polarized through the chain,
/// normalized to the bare electron contrast `p1`.
pub fn chain_contrast(p: &InitPopulations, scenario: ScenarioFlag) -> Result<f64> {
    if p.p1 <= 0.0 {
        return Err(Error::InvalidArgument("p1 must be positive".into()));
    }
    if scenario == ScenarioFlag::ChargePreserving && p.spin_sum() <= 0.0 {
        return Err(Error::InvalidArgument("p1 + p2 + p3 must be positive".into()));
    }
    let a = chain_state(scenario).bright_population(p);
    let b = chain_state_flipped(scenario).bright_population(p);
    Ok((a - b) / p.p1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityBounds {
    pub contrast_max: f64,
    pub f_no_memory: f64,
    pub f_charge_preserving: f64,
}

pub fn fidelity_bounds(p: &InitPopulations) -> Result<FidelityBounds> {
    let s = p.spin_sum();
    if s <= 0.0 {
        return Err(Error::InvalidArgument("p1 + p2 + p3 must be positive".into()));
    }
    let c = p.p1 + p.p2;
    Ok(FidelityBounds {
        contrast_max: c,
        f_no_memory: 0.5 + c / 2.0,
        f_charge_preserving: 0.5 + c / (2.0 * s),
    })
}

/// `p1 + p2` implied by a measured no-memory fidelity.
pub fn invert_no_memory(f: f64) -> Result<f64> {
    if !(0.5..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!("fidelity {f} outside [0.5, 1]")));
    }
    Ok(2.0 * f - 1.0)
}

/// Probability that both pumping steps of the pair preparation succeed.
pub fn preparation_weight(p: &InitPopulations, scenario: ScenarioFlag) -> f64 {
    match scenario {
        ScenarioFlag::NoMemory => p.p1 * p.p1,
        ScenarioFlag::ChargePreserving => {
            let s = p.spin_sum();
            if s > 0.0 {
                p.p1 * p.p1 / s
            } else {
                0.0
            }
        }
    }
}

/// Mixes the ideal two-spin output with the fully mixed state produced by
/// failed initialization.
pub fn apply_init_error(rho: &DensityMatrix, p: &InitPopulations, scenario: ScenarioFlag) -> DensityMatrix {
    let w = preparation_weight(p, scenario);
    if w >= 1.0 {
        return rho.clone();
    }
    rho.mix(&DensityMatrix::maximally_mixed(rho.dim()), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ElectronLabel as E;
    use NuclearLabel as N;

    fn p(a: f64, b: f64, c: f64, d: f64) -> InitPopulations {
        InitPopulations::new(a, b, c, d).unwrap()
    }

    #[test]
    fn populations_validated() {
        assert!(InitPopulations::new(0.5, 0.5, 0.1, -0.1).is_err());
        assert!(InitPopulations::new(0.5, 0.4, 0.0, 0.0).is_err());
        assert!(InitPopulations::new(0.25, 0.25, 0.25, 0.25).is_ok());
    }

    #[test]
    fn bounds_example() {
        let b = fidelity_bounds(&p(0.8, 0.0, 0.1, 0.1)).unwrap();
        assert!((b.contrast_max - 0.8).abs() < 1e-15);
        assert!((b.f_no_memory - 0.9).abs() < 1e-15);
        assert!((b.f_charge_preserving - (0.5 + 0.8 / 1.8)).abs() < 1e-15);
        let b = fidelity_bounds(&InitPopulations::perfect()).unwrap();
        assert_eq!((b.contrast_max, b.f_no_memory, b.f_charge_preserving), (1.0, 1.0, 1.0));
        assert!(fidelity_bounds(&p(0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn perfect_chain_is_pure() {
        for s in [ScenarioFlag::NoMemory, ScenarioFlag::ChargePreserving] {
            let c = chain_state(s);
            let pp = InitPopulations::perfect();
            let w = c.weight(E::Zero, N::Zero).unwrap().eval(&pp);
            assert!((w - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn charge_state_is_absorbing() {
        let c = chain_state(ScenarioFlag::ChargePreserving);
        let w = c.weight(E::Charge, N::Mixed).unwrap().eval(&p(0.0, 0.0, 0.0, 1.0));
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_memory_matches_population_equation() {
        // Term by term against the closed form
        // p1(p1 ρ0 + (1-p1) ρm)⊗ρ0 + p2(p1 ρ0 + (1-p1) ρm)⊗ρm
        //   + p3 ρs⊗(p1 ρ0 + (1-p1) ρm) + p4 ρc⊗(p1 ρ0 + (1-p1) ρm).
        let c = chain_state(ScenarioFlag::NoMemory);
        let x = p(0.61, 0.17, 0.13, 0.09);
        let q = 1.0 - x.p1;
        let expect = [
            (E::Zero, N::Zero, x.p1 * x.p1),
            (E::Mixed, N::Zero, x.p1 * q),
            (E::Zero, N::Mixed, x.p2 * x.p1),
            (E::Mixed, N::Mixed, x.p2 * q),
            (E::PlusOne, N::Zero, x.p3 * x.p1),
            (E::PlusOne, N::Mixed, x.p3 * q),
            (E::Charge, N::Zero, x.p4 * x.p1),
            (E::Charge, N::Mixed, x.p4 * q),
        ];
        for (e, n, w) in expect {
            let got = c.weight(e, n).map(|w| w.eval(&x)).unwrap_or(0.0);
            assert!((got - w).abs() < 1e-14, "{e:?} {n:?}: {got} vs {w}");
        }
        assert_eq!(c.weight(E::Zero, N::Zero).unwrap().num, Poly::var(0).pow(2));
    }

    #[test]
    fn weights_are_normalized_polynomials() {
        let all = Poly::sum_of(&[0, 1, 2, 3]);
        let s = Poly::sum_of(&[0, 1, 2]);
        let c = chain_state(ScenarioFlag::NoMemory);
        let (num, den) = c.total_numerator();
        assert_eq!(den, 0);
        assert_eq!(num, all.pow(2));
        let c = chain_state(ScenarioFlag::ChargePreserving);
        let (num, den) = c.total_numerator();
        assert_eq!(den, 1);
        assert_eq!(num, all.mul(&s));
        for s in [ScenarioFlag::NoMemory, ScenarioFlag::ChargePreserving] {
            assert!(chain_state(s)
                .terms
                .iter()
                .all(|t| t.weight.num.has_nonnegative_coefficients()));
        }
    }

    #[test]
    fn chain_contrast_matches_closed_forms() {
        let x = p(0.61, 0.17, 0.13, 0.09);
        let b = fidelity_bounds(&x).unwrap();
        let c0 = chain_contrast(&x, ScenarioFlag::NoMemory).unwrap();
        let c1 = chain_contrast(&x, ScenarioFlag::ChargePreserving).unwrap();
        assert!((c0 - b.contrast_max).abs() < 1e-14);
        assert!((0.5 + c1 / 2.0 - b.f_charge_preserving).abs() < 1e-14);
    }

    #[test]
    fn init_error_mixes_toward_identity() {
        let rho = DensityMatrix::from_pure(&crate::spin_core::PureState::singlet());
        let same = apply_init_error(&rho, &InitPopulations::perfect(), ScenarioFlag::NoMemory);
        assert!((same.matrix() - rho.matrix()).norm() < 1e-15);
        let out = apply_init_error(&rho, &InitPopulations::typical(), ScenarioFlag::NoMemory);
        assert!((out.trace().re - 1.0).abs() < 1e-14);
        let f = crate::spin_core::state_fidelity(&crate::spin_core::PureState::singlet(), &out).unwrap();
        assert!((f - (0.49 + 0.51 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn poly_display() {
        let q = Poly::var(0).pow(2).add(&Poly::var(1).mul(&Poly::constant(3)));
        assert_eq!(q.to_string(), "3·p2 + p1^2");
    }
}
