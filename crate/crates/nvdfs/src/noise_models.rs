//! Stochastic physics: static field offsets, colored rf drive, electron T1.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nv_model::{Branch, NvSystem};
use crate::spin_core::{qubit_propagator, CMatrix, DensityMatrix, PureState, C64};

/// Independent random stream for `(seed, index, purpose)`.
///
/// Streams depend only on these three numbers, so ensembles give identical
/// results for any thread count or evaluation order.
pub fn stream_rng(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(index);
    r
}

pub const PURPOSE_FIELD: u64 = 1;
pub const PURPOSE_RF: u64 = 2;
pub const PURPOSE_T1: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFieldNoise {
    /// Standard deviation in Gauss.
    pub sigma_b: f64,
    /// kHz/G.
    pub gamma_c13: f64,
}

impl StaticFieldNoise {
    pub fn new(sigma_b: f64, gamma_c13: f64) -> Result<Self> {
        if !(sigma_b >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_b = {sigma_b}")));
        }
        Ok(Self { sigma_b, gamma_c13 })
    }

    /// Field offset in Gauss.
    pub fn sample_gauss<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * self.sigma_b
    }
}

/// Larmor offset in kHz, identical for both nuclei.
pub fn sample_static_field(noise: &StaticFieldNoise, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0, PURPOSE_FIELD);
    noise.sample_gauss(&mut rng) * noise.gamma_c13
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfNoiseSpec {
    /// Correlation decay rate R in kHz (1/ms).
    pub correlation_rate: f64,
    /// Half-width of the synthesized band, kHz.
    pub bandwidth: f64,
    /// Frequency step, kHz.
    pub delta_omega: f64,
    /// Drive strength multiplier, kHz.
    pub amplitude_scale: f64,
}

impl Default for RfNoiseSpec {
    fn default() -> Self {
        Self {
            correlation_rate: 8.0,
            bandwidth: 10.0,
            delta_omega: 1.0,
            amplitude_scale: 1.0,
        }
    }
}

impl RfNoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_omega > 0.0)
            || !(self.bandwidth >= self.delta_omega)
            || !(self.correlation_rate > 0.0)
            || !(self.amplitude_scale >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("rf noise spec {self:?}")));
        }
        Ok(())
    }

    pub fn n_max(&self) -> i64 {
        (self.bandwidth / self.delta_omega).round() as i64
    }

    /// `(n, w_n)` for every spectral line, amplitude included.
    pub fn components(&self) -> Vec<(i64, f64)> {
        let (dw, r) = (self.delta_omega, self.correlation_rate);
        (-self.n_max()..=self.n_max())
            .map(|n| {
                let x = 2.0 * PI * n as f64 * dw;
                (n, self.amplitude_scale * (2.0 * dw * r / (x * x + r * r)).sqrt())
            })
            .collect()
    }

    /// Ensemble autocorrelation `<Ω*(t) Ω(t + τ)>` implied by the weights.
    pub fn autocorrelation(&self, tau_ms: f64) -> C64 {
        self.components()
            .iter()
            .map(|&(n, w)| C64::from_polar(w * w, 2.0 * PI * n as f64 * self.delta_omega * tau_ms))
            .sum()
    }
}

/// Running phasors of one rf realization.
#[derive(Clone, Debug)]
pub struct RfPhasors {
    terms: Vec<C64>,
    freqs: Vec<f64>,
}

impl RfPhasors {
    pub fn new<R: Rng>(spec: &RfNoiseSpec, rng: &mut R) -> Self {
        let comps = spec.components();
        let mut terms = Vec::with_capacity(comps.len());
        let mut freqs = Vec::with_capacity(comps.len());
        for (n, w) in comps {
            let theta: f64 = rng.random::<f64>() * 2.0 * PI;
            terms.push(C64::from_polar(w, theta));
            freqs.push(2.0 * PI * n as f64 * spec.delta_omega);
        }
        Self { terms, freqs }
    }

    /// `Ω(t)` with t in ms.
    pub fn value(&self, t_ms: f64) -> C64 {
        self.terms
            .iter()
            .zip(&self.freqs)
            .map(|(z, &f)| z * C64::from_polar(1.0, f * t_ms))
            .sum()
    }

    /// Iterator over `Ω(t0 + k dt)`, k = 0, 1, ….
    pub fn samples(&self, t0_ms: f64, dt_ms: f64) -> RfSamples {
        RfSamples {
            current: self
                .terms
                .iter()
                .zip(&self.freqs)
                .map(|(z, &f)| z * C64::from_polar(1.0, f * t0_ms))
                .collect(),
            step: self.freqs.iter().map(|&f| C64::from_polar(1.0, f * dt_ms)).collect(),
        }
    }
}

pub struct RfSamples {
    current: Vec<C64>,
    step: Vec<C64>,
}

impl Iterator for RfSamples {
    type Item = C64;
    fn next(&mut self) -> Option<C64> {
        let v = self.current.iter().sum();
        for (z, s) in self.current.iter_mut().zip(&self.step) {
            *z *= s;
        }
        Some(v)
    }
}

/// Sampled complex envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct RfWaveform {
    pub dt_us: f64,
    pub samples: Vec<C64>,
}

impl RfWaveform {
    pub fn times_us(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|k| k as f64 * self.dt_us)
    }
}

/// Envelope sampled every `dt_us` over `duration_us`, deterministic in `seed`.
pub fn synth_rf_noise(spec: &RfNoiseSpec, duration_us: f64, dt_us: f64, seed: u64) -> Result<RfWaveform> {
    spec.validate()?;
    if !(duration_us > 0.0) || !(dt_us > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_us} us, step {dt_us} us"
        )));
    }
    let mut rng = stream_rng(seed, 0, PURPOSE_RF);
    let ph = RfPhasors::new(spec, &mut rng);
    let n = (duration_us / dt_us).floor() as usize + 1;
    Ok(RfWaveform {
        dt_us,
        samples: ph.samples(0.0, dt_us * 1e-3).take(n).collect(),
    })
}

/// Electron relaxation as a jump process over {0, -1, +1}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct T1Process {
    /// ms; infinite disables relaxation.
    pub t1: f64,
    pub initial: Branch,
}

impl T1Process {
    pub fn new(t1: f64, initial: Branch) -> Result<Self> {
        if !(t1 > 0.0) {
            return Err(Error::InvalidArgument(format!("t1 = {t1}")));
        }
        Ok(Self { t1, initial })
    }

    pub fn disabled() -> Self {
        Self {
            t1: f64::INFINITY,
            initial: Branch::Zero,
        }
    }

    pub fn sample<R: Rng>(&self, duration_ms: f64, rng: &mut R) -> Vec<(f64, Branch)> {
        let mut jumps = Vec::new();
        if !self.t1.is_finite() {
            return jumps;
        }
        let wait = Exp::new(1.0 / self.t1).expect("positive rate");
        let mut t = 0.0;
        let mut b = self.initial;
        loop {
            t += wait.sample(rng);
            if t > duration_ms {
                break;
            }
            let others: [Branch; 2] = match b {
                Branch::Zero => [Branch::MinusOne, Branch::PlusOne],
                Branch::MinusOne => [Branch::Zero, Branch::PlusOne],
                Branch::PlusOne => [Branch::Zero, Branch::MinusOne],
            };
            b = others[rng.random_range(0..2)];
            jumps.push((t, b));
        }
        jumps
    }
}

/// Jump times and destination branches, deterministic in `seed`.
pub fn t1_trajectory(proc: &T1Process, duration_ms: f64, seed: u64) -> Result<Vec<(f64, Branch)>> {
    if !(duration_ms >= 0.0) {
        return Err(Error::InvalidArgument(format!("duration {duration_ms}")));
    }
    let mut rng = stream_rng(seed, 0, PURPOSE_T1);
    Ok(proc.sample(duration_ms, &mut rng))
}

/// Noise sources active during storage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSet {
    pub field: Option<StaticFieldNoise>,
    pub rf: Option<RfNoiseSpec>,
    pub t1: bool,
}

/// Timing of the storage window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageTiming {
    /// Step for rf-on segments, μs.
    pub dt_us: f64,
    /// rf is switched on this long after the start and off this long before
    /// the end, μs.
    pub rf_guard_us: f64,
}

impl Default for StorageTiming {
    fn default() -> Self {
        Self {
            dt_us: 0.5,
            rf_guard_us: 5.0,
        }
    }
}

/// One trajectory's randomness.
#[derive(Clone, Debug)]
pub struct NoiseRealization {
    /// Collective Larmor offset, kHz.
    pub field_offset: f64,
    pub rf: Option<RfPhasors>,
    pub jumps: Vec<(f64, Branch)>,
    pub seed: u64,
    pub index: u64,
}

impl NoiseRealization {
    pub fn sample(noises: &NoiseSet, sys: &NvSystem, duration_ms: f64, seed: u64, index: u64) -> Self {
        let field_offset = noises.field.map_or(0.0, |f| {
            let mut r = stream_rng(seed, index, PURPOSE_FIELD);
            f.sample_gauss(&mut r) * f.gamma_c13
        });
        let rf = noises.rf.map(|s| {
            let mut r = stream_rng(seed, index, PURPOSE_RF);
            RfPhasors::new(&s, &mut r)
        });
        let jumps = if noises.t1 {
            let mut r = stream_rng(seed, index, PURPOSE_T1);
            T1Process {
                t1: sys.t1_electron,
                initial: Branch::Zero,
            }
            .sample(duration_ms, &mut r)
        } else {
            Vec::new()
        };
        Self {
            field_offset,
            rf,
            jumps,
            seed,
            index,
        }
    }
}

/// Evolves a pair of single-spin propagators in the frame rotating at ωL,
/// keeping only the secular hyperfine term.
struct PairEvolver<'a> {
    sys: &'a NvSystem,
    u: [CMatrix; 2],
    t_ms: f64,
    branch: Branch,
    next_jump: usize,
    offset: f64,
}

impl<'a> PairEvolver<'a> {
    fn new(sys: &'a NvSystem, offset: f64) -> Self {
        Self {
            sys,
            u: [CMatrix::identity(2, 2), CMatrix::identity(2, 2)],
            t_ms: 0.0,
            branch: Branch::Zero,
            next_jump: 0,
            offset,
        }
    }

    fn hz(&self, j: usize) -> f64 {
        self.offset - self.branch.ms() as f64 * self.sys.spins[j].a_par
    }

    /// Evolves to `t_end` under a constant drive, crossing jumps exactly.
    fn advance(&mut self, t_end: f64, drive: C64, jumps: &[(f64, Branch)]) {
        while self.t_ms < t_end {
            let stop = match jumps.get(self.next_jump) {
                Some(&(tj, _)) if tj < t_end => tj,
                _ => t_end,
            };
            let dt = stop - self.t_ms;
            if dt > 0.0 {
                for j in 0..2 {
                    let step = qubit_propagator(drive.re, drive.im, self.hz(j), dt);
                    self.u[j] = step * &self.u[j];
                }
            }
            self.t_ms = stop;
            if stop < t_end || jumps.get(self.next_jump).is_some_and(|&(tj, _)| tj == stop) {
                if let Some(&(_, b)) = jumps.get(self.next_jump) {
                    self.branch = b;
                    self.next_jump += 1;
                }
            }
        }
    }

    fn apply(&self, rho0: &CMatrix) -> CMatrix {
        let u = self.u[0].kronecker(&self.u[1]);
        &u * rho0 * u.adjoint()
    }
}

/// Final states of one trajectory at each time in `times_ms` (ascending).
fn trajectory_states(
    rho0: &CMatrix,
    times_ms: &[f64],
    sys: &NvSystem,
    real: &NoiseRealization,
    timing: &StorageTiming,
) -> Vec<CMatrix> {
    let guard = timing.rf_guard_us * 1e-3;
    let dt = timing.dt_us * 1e-3;
    let mut main = PairEvolver::new(sys, real.field_offset);
    let mut out = Vec::with_capacity(times_ms.len());
    let mut samples = real.rf.as_ref().map(|r| r.samples(guard + 0.5 * dt, dt));
    let mut cell_end = guard;
    let mut cell_drive = C64::new(0.0, 0.0);
    for &t in times_ms {
        let rf_end = t - guard;
        match samples.as_mut() {
            Some(s) if rf_end > guard => {
                if main.t_ms < guard {
                    main.advance(guard, C64::new(0.0, 0.0), &real.jumps);
                }
                while main.t_ms < rf_end {
                    if main.t_ms >= cell_end - 1e-15 {
                        cell_drive = s.next().unwrap();
                        cell_end += dt;
                    }
                    let stop = cell_end.min(rf_end);
                    main.advance(stop, cell_drive, &real.jumps);
                }
                let mut tail = PairEvolver {
                    sys,
                    u: main.u.clone(),
                    t_ms: main.t_ms,
                    branch: main.branch,
                    next_jump: main.next_jump,
                    offset: main.offset,
                };
                tail.advance(t, C64::new(0.0, 0.0), &real.jumps);
                out.push(tail.apply(rho0));
            }
            _ => {
                let mut tail = PairEvolver {
                    sys,
                    u: main.u.clone(),
                    t_ms: main.t_ms,
                    branch: main.branch,
                    next_jump: main.next_jump,
                    offset: main.offset,
                };
                tail.advance(t, C64::new(0.0, 0.0), &real.jumps);
                out.push(tail.apply(rho0));
            }
        }
    }
    out
}

fn trajectory_batch(
    rho0: &DensityMatrix,
    times_ms: &[f64],
    sys: &NvSystem,
    noises: &NoiseSet,
    timing: &StorageTiming,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<Vec<CMatrix>>> {
    if n_traj < 1 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    if rho0.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: rho0.dim(),
        });
    }
    if times_ms.windows(2).any(|w| w[1] <= w[0]) || times_ms.iter().any(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("storage times must increase".into()));
    }
    if let Some(rf) = &noises.rf {
        rf.validate()?;
        if timing.dt_us > 1e3 / (20.0 * rf.bandwidth) {
            return Err(Error::InvalidArgument(format!(
                "step {} us does not resolve a {} kHz band",
                timing.dt_us, rf.bandwidth
            )));
        }
    }
    let t_max = times_ms.last().copied().unwrap_or(0.0);
    Ok((0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let real = NoiseRealization::sample(noises, sys, t_max, seed, i);
            trajectory_states(rho0.matrix(), times_ms, sys, &real, timing)
        })
        .collect())
}

/// Trajectory-averaged nuclear states at each storage time, all times
/// sharing the same trajectories.
pub fn storage_curve(
    rho0: &DensityMatrix,
    times_ms: &[f64],
    sys: &NvSystem,
    noises: &NoiseSet,
    timing: &StorageTiming,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<DensityMatrix>> {
    let per_traj = trajectory_batch(rho0, times_ms, sys, noises, timing, n_traj, seed)?;
    let mut acc = vec![CMatrix::zeros(4, 4); times_ms.len()];
    for states in &per_traj {
        for (a, s) in acc.iter_mut().zip(states) {
            *a += s;
        }
    }
    let norm = 1.0 / n_traj as f64;
    Ok(acc
        .into_iter()
        .map(|m| DensityMatrix::from_matrix_unchecked(m.map(|z| z * norm)))
        .collect())
}

/// Mean fidelity with `target` at each storage time and its standard error
/// over trajectories.
#[allow(clippy::too_many_arguments)]
pub fn storage_fidelity(
    rho0: &DensityMatrix,
    target: &PureState,
    times_ms: &[f64],
    sys: &NvSystem,
    noises: &NoiseSet,
    timing: &StorageTiming,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if target.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: target.dim(),
        });
    }
    let per_traj = trajectory_batch(rho0, times_ms, sys, noises, timing, n_traj, seed)?;
    let psi = target.amplitudes();
    let n = n_traj as f64;
    Ok((0..times_ms.len())
        .map(|k| {
            let f: Vec<f64> = per_traj
                .iter()
                .map(|st| (psi.adjoint() * &st[k] * psi)[(0, 0)].re)
                .collect();
            let mean = f.iter().sum::<f64>() / n;
            let var = if n_traj > 1 {
                f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (mean, (var / n).sqrt())
        })
        .collect())
}

/// Trajectory-averaged nuclear state after storage time `t_ms`.
pub fn storage_channel(
    rho0: &DensityMatrix,
    t_ms: f64,
    sys: &NvSystem,
    noises: &NoiseSet,
    n_traj: usize,
    seed: u64,
) -> Result<DensityMatrix> {
    let mut v = storage_curve(rho0, &[t_ms], sys, noises, &StorageTiming::default(), n_traj, seed)?;
    Ok(v.pop().unwrap())
}
