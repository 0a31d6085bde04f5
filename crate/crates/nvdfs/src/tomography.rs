//! Two-qubit state tomography with maximum-likelihood reconstruction.

use std::collections::VecDeque;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::stream_rng;
use crate::spin_core::{c, state_fidelity, CMatrix, CVector, DensityMatrix, PureState, ONE, ZERO};

const PURPOSE_COUNTS: u64 = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    I,
    X,
    Y,
    Z,
}

impl Basis {
    fn letter(self) -> char {
        match self {
            Basis::I => 'I',
            Basis::X => 'X',
            Basis::Y => 'Y',
            Basis::Z => 'Z',
        }
    }

    fn from_letter(ch: char) -> Option<Self> {
        match ch {
            'I' => Some(Basis::I),
            'X' => Some(Basis::X),
            'Y' => Some(Basis::Y),
            'Z' => Some(Basis::Z),
            _ => None,
        }
    }

    /// Eigenvector for outcome `bit` (0 is the +1 eigenvalue).
    fn eigvec(self, bit: usize) -> CVector {
        let s = FRAC_1_SQRT_2;
        let sign = if bit == 0 { 1.0 } else { -1.0 };
        match self {
            Basis::X => CVector::from_vec(vec![c(s, 0.0), c(sign * s, 0.0)]),
            Basis::Y => CVector::from_vec(vec![c(s, 0.0), c(0.0, sign * s)]),
            Basis::Z | Basis::I => {
                if bit == 0 {
                    CVector::from_vec(vec![ONE, ZERO])
                } else {
                    CVector::from_vec(vec![ZERO, ONE])
                }
            }
        }
    }

    fn projector(self, bit: usize) -> CMatrix {
        if self == Basis::I {
            return CMatrix::identity(2, 2);
        }
        let v = self.eigvec(bit);
        &v * v.adjoint()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub b1: Basis,
    pub b2: Basis,
}

impl MeasurementSetting {
    pub fn is_correlation(&self) -> bool {
        self.b1 != Basis::I && self.b2 != Basis::I
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.b1.letter(), self.b2.letter())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut it = s.chars();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("setting {s:?}")));
        };
        match (Basis::from_letter(a), Basis::from_letter(b)) {
            (Some(b1), Some(b2)) if !(b1 == Basis::I && b2 == Basis::I) => Ok(Self { b1, b2 }),
            _ => Err(Error::Parse(format!("setting {s:?}"))),
        }
    }

    pub fn n_outcomes(&self) -> usize {
        if self.is_correlation() {
            4
        } else {
            2
        }
    }

    /// Outcome labels: `"0"`/`"1"` for one spin, `"00"`…`"11"` for pairs.
    pub fn outcome_labels(&self) -> Vec<&'static str> {
        if self.is_correlation() {
            vec!["00", "01", "10", "11"]
        } else {
            vec!["0", "1"]
        }
    }

    /// Projectors on the two-spin space, in outcome order.
    pub fn projectors(&self) -> Vec<CMatrix> {
        if self.is_correlation() {
            (0..4)
                .map(|k| self.b1.projector(k >> 1).kronecker(&self.b2.projector(k & 1)))
                .collect()
        } else {
            (0..2)
                .map(|k| {
                    let (p1, p2) = if self.b1 == Basis::I {
                        (CMatrix::identity(2, 2), self.b2.projector(k))
                    } else {
                        (self.b1.projector(k), CMatrix::identity(2, 2))
                    };
                    p1.kronecker(&p2)
                })
                .collect()
        }
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// XI, YI, ZI, IX, IY, IZ, then the nine correlations in XX … ZZ order.
pub fn measurement_settings() -> Vec<MeasurementSetting> {
    use Basis::*;
    let mut v = Vec::with_capacity(15);
    for b in [X, Y, Z] {
        v.push(MeasurementSetting { b1: b, b2: I });
    }
    for b in [X, Y, Z] {
        v.push(MeasurementSetting { b1: I, b2: b });
    }
    for b1 in [X, Y, Z] {
        for b2 in [X, Y, Z] {
            v.push(MeasurementSetting { b1, b2 });
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsRecord {
    pub setting: MeasurementSetting,
    pub shots: u64,
    /// Tallies in `setting.outcome_labels()` order.
    pub counts: Vec<u64>,
    pub seed: u64,
}

impl CountsRecord {
    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.setting.n_outcomes() {
            return Err(Error::InvalidArgument(format!(
                "{}: {} tallies",
                self.setting,
                self.counts.len()
            )));
        }
        if self.counts.iter().sum::<u64>() != self.shots || self.shots == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}: tallies do not sum to {} shots",
                self.setting, self.shots
            )));
        }
        Ok(())
    }

    /// Empirical outcome frequencies.
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|&n| n as f64 / self.shots as f64).collect()
    }
}

/// Born-rule probabilities of each outcome.
pub fn outcome_probabilities(rho: &DensityMatrix, setting: &MeasurementSetting) -> Vec<f64> {
    setting
        .projectors()
        .iter()
        .map(|p| (p * rho.matrix()).trace().re.max(0.0))
        .collect()
}

/// Multinomial sample of `shots` outcomes, deterministic in `seed`.
pub fn simulate_counts(
    rho: &DensityMatrix,
    setting: &MeasurementSetting,
    shots: u64,
    seed: u64,
) -> Result<CountsRecord> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be positive".into()));
    }
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: rho.dim(),
        });
    }
    rho.validate(1e-8, 1e-7)?;
    let probs = outcome_probabilities(rho, setting);
    let index = measurement_settings().iter().position(|s| s == setting).unwrap_or(15) as u64;
    let mut rng = stream_rng(seed, index, PURPOSE_COUNTS);
    let mut left = shots;
    let mut mass = 1.0;
    let mut counts = Vec::with_capacity(probs.len());
    for (k, &p) in probs.iter().enumerate() {
        let n = if k + 1 == probs.len() {
            left
        } else if left == 0 || mass <= 0.0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("valid binomial").sample(&mut rng)
        };
        counts.push(n);
        left -= n;
        mass -= p;
    }
    Ok(CountsRecord {
        setting: *setting,
        shots,
        counts,
        seed,
    })
}

/// Counts for all 15 settings.
pub fn simulate_all(rho: &DensityMatrix, shots: u64, seed: u64) -> Result<Vec<CountsRecord>> {
    measurement_settings()
        .iter()
        .map(|s| simulate_counts(rho, s, shots, seed))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct ReconstructionJson {
    rho: Vec<[f64; 2]>,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
}

impl ReconstructionResult {
    /// Row-major `[re, im]` pairs plus likelihood and convergence flag.
    pub fn to_json(&self) -> Result<String> {
        let m = self.rho.matrix();
        let rho = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| [m[(i, j)].re, m[(i, j)].im])
            .collect();
        Ok(serde_json::to_string_pretty(&ReconstructionJson {
            rho,
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ReconstructionJson = serde_json::from_str(s)?;
        if j.rho.len() != 16 {
            return Err(Error::Parse(format!("{} matrix entries", j.rho.len())));
        }
        let m = CMatrix::from_row_iterator(4, 4, j.rho.iter().map(|p| c(p[0], p[1])));
        Ok(Self {
            rho: DensityMatrix::new(m)?,
            log_likelihood: j.log_likelihood,
            iterations: j.iterations,
            converged: j.converged,
        })
    }
}

/// Lower-triangular `T` from 16 reals: 4 diagonal, then 6 complex entries.
fn t_from_params(x: &[f64]) -> CMatrix {
    let mut t = CMatrix::zeros(4, 4);
    for i in 0..4 {
        t[(i, i)] = c(x[i], 0.0);
    }
    let mut k = 4;
    for i in 1..4 {
        for j in 0..i {
            t[(i, j)] = c(x[k], x[k + 1]);
            k += 2;
        }
    }
    t
}

struct Likelihood {
    projectors: Vec<CMatrix>,
    counts: Vec<f64>,
    total: f64,
}

impl Likelihood {
    fn new(records: &[CountsRecord]) -> Self {
        let mut projectors = Vec::new();
        let mut counts = Vec::new();
        for r in records {
            for (p, &n) in r.setting.projectors().into_iter().zip(&r.counts) {
                projectors.push(p);
                counts.push(n as f64);
            }
        }
        let total = records.iter().map(|r| r.shots as f64).sum();
        Self {
            projectors,
            counts,
            total,
        }
    }

    /// Negative log-likelihood and its gradient.
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let t = t_from_params(x);
        let a = t.adjoint() * &t;
        let tr = a.trace().re;
        let mut nll = self.total * tr.ln();
        let mut m = CMatrix::identity(4, 4).map(|z| z * (self.total / tr));
        for (p, &n) in self.projectors.iter().zip(&self.counts) {
            if n == 0.0 {
                continue;
            }
            let q = (p * &a).trace().re.max(1e-300);
            nll -= n * q.ln();
            m -= p.map(|z| z * (n / q));
        }
        let mt = m * t.adjoint();
        let mut g = vec![0.0; 16];
        for i in 0..4 {
            g[i] = 2.0 * mt[(i, i)].re;
        }
        let mut k = 4;
        for i in 1..4 {
            for j in 0..i {
                g[k] = 2.0 * mt[(j, i)].re;
                g[k + 1] = -2.0 * mt[(j, i)].im;
                k += 2;
            }
        }
        (nll, g)
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum-likelihood estimate over physical states `T†T / tr(T†T)`.
pub fn mle_reconstruct(records: &[CountsRecord]) -> Result<ReconstructionResult> {
    let settings = measurement_settings();
    for s in &settings {
        if !records.iter().any(|r| r.setting == *s) {
            return Err(Error::InvalidArgument(format!("missing setting {s}")));
        }
    }
    for r in records {
        r.validate()?;
    }
    let lik = Likelihood::new(records);
    let mut x = vec![0.0; 16];
    x[..4].fill(0.5);
    let (mut f, mut g) = lik.eval(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    const MEM: usize = 8;
    const MAX_ITER: usize = 10_000;
    while iterations < MAX_ITER {
        iterations += 1;
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y) in history.iter().rev() {
            let rho = 1.0 / dotv(y, s);
            let a = rho * dotv(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let Some((s, y)) = history.back() {
            let gamma = dotv(s, y) / dotv(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = dotv(&g, &g).sqrt().max(1e-300);
            q.iter_mut().for_each(|v| *v /= gn);
        }
        for ((s, y), (a, rho)) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dotv(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dotv(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dotv(&g, &d);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            let (fn_, gn) = lik.eval(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            converged = true;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dotv(&s, &y) > 1e-300 {
            history.push_back((s, y));
            if history.len() > MEM {
                history.pop_front();
            }
        }
        let rel = (f - fn_).abs() / f.abs().max(1e-300);
        x = xn;
        f = fn_;
        g = gn;
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    let t = t_from_params(&x);
    let a = t.adjoint() * &t;
    let tr = a.trace().re;
    let rho = a.map(|z| z / tr);
    let rho = (&rho + rho.adjoint()).map(|z| z * 0.5);
    Ok(ReconstructionResult {
        rho: DensityMatrix::from_matrix_unchecked(rho),
        log_likelihood: -f,
        iterations,
        converged,
    })
}

pub fn fidelity_report(result: &ReconstructionResult, target: &PureState) -> Result<f64> {
    state_fidelity(target, &result.rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_layout() {
        let s = measurement_settings();
        assert_eq!(s.len(), 15);
        let labels: Vec<String> = s.iter().map(|x| x.label()).collect();
        assert_eq!(labels[..6], ["XI", "YI", "ZI", "IX", "IY", "IZ"]);
        assert_eq!(labels[14], "ZZ");
        assert!(!labels.contains(&"II".to_string()));
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 15);
        assert_eq!(s.iter().filter(|x| x.is_correlation()).count(), 9);
    }

    #[test]
    fn parse_roundtrip() {
        for s in measurement_settings() {
            assert_eq!(MeasurementSetting::parse(&s.label()).unwrap(), s);
        }
        assert!(MeasurementSetting::parse("II").is_err());
        assert!(MeasurementSetting::parse("XQ").is_err());
    }

    #[test]
    fn projectors_resolve_identity() {
        for s in measurement_settings() {
            let sum: CMatrix = s.projectors().iter().fold(CMatrix::zeros(4, 4), |a, p| a + p);
            assert!((sum - CMatrix::identity(4, 4)).norm() < 1e-14);
        }
    }

    #[test]
    fn singlet_is_anticorrelated() {
        let rho = DensityMatrix::from_pure(&PureState::singlet());
        for s in measurement_settings()
            .iter()
            .filter(|s| s.is_correlation() && s.b1 == s.b2)
        {
            let r = simulate_counts(&rho, s, 1000, 4).unwrap();
            assert_eq!(r.counts[0] + r.counts[3], 0, "{s}");
        }
    }

    #[test]
    fn counts_sum_and_determinism() {
        let rho = DensityMatrix::maximally_mixed(4);
        let s = MeasurementSetting::parse("XY").unwrap();
        let a = simulate_counts(&rho, &s, 10_000, 1).unwrap();
        let b = simulate_counts(&rho, &s, 10_000, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.iter().sum::<u64>(), 10_000);
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for &n in &a.counts {
            assert!((n as f64 - 2500.0).abs() < 5.0 * sigma);
        }
        assert!(simulate_counts(&rho, &s, 0, 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let rho = DensityMatrix::from_pure(&PureState::triplet()).mix(&DensityMatrix::maximally_mixed(4), 0.7);
        let recs = simulate_all(&rho, 500, 2).unwrap();
        let lik = Likelihood::new(&recs);
        let x: Vec<f64> = (0..16).map(|i| 0.3 + 0.05 * i as f64).collect();
        let (_, g) = lik.eval(&x);
        for i in 0..16 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (lik.eval(&xp).0 - lik.eval(&xm).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-4 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn missing_setting_rejected() {
        let rho = DensityMatrix::maximally_mixed(4);
        let mut recs = simulate_all(&rho, 100, 1).unwrap();
        recs.pop();
        assert!(mle_reconstruct(&recs).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let rho = DensityMatrix::from_pure(&PureState::singlet());
        let r = ReconstructionResult {
            rho,
            log_likelihood: -12.5,
            iterations: 7,
            converged: true,
        };
        let back = ReconstructionResult::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
