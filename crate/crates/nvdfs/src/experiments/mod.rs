//! Scripted experiments: ODMR calibration, gate repetition, entanglement
//! with tomography, and storage of the nuclear pair under noise.

mod fit;

pub use fit::*;

use std::f64::consts::{FRAC_PI_2, PI};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::{
    storage_fidelity, stream_rng, NoiseSet, RfNoiseSpec, StaticFieldNoise, StorageTiming, PURPOSE_FIELD,
};
use crate::numerics::geomspace;
use crate::nv_model::{invert_odmr, odmr_frequencies, Branch, NvSystem, OdmrFrequencies};
use crate::pulse_engine::{
    compile_circuit, entanglement_circuit, entanglement_ops, initial_register_state, run_ideal, CircuitProgram,
    LogicalOp,
};
use crate::readout_model::{apply_init_error, InitPopulations, ScenarioFlag};
use crate::spin_core::{
    partial_trace_electron, reduce_nuclear, state_fidelity, DensityMatrix, Operator, PureState, C64,
};
use crate::tomography::{mle_reconstruct, simulate_all, ReconstructionResult};

const PURPOSE_ODMR: u64 = 21;
const PURPOSE_REPETITION: u64 = 22;

/// Settings shared by all experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: NvSystem,
    /// Quasi-static field jitter during gates and storage.
    pub field_jitter: bool,
    /// Standard deviation of the jitter, G.
    pub field_sigma_g: f64,
    pub rf: RfNoiseSpec,
    /// Electron T1 jumps during storage.
    pub t1: bool,
    pub init_error: bool,
    pub init: InitPopulations,
    pub scenario: ScenarioFlag,
    /// Shots per measurement setting; 0 uses exact expectations.
    pub shots: u64,
    /// Shots per setting for tomography during storage; 0 uses exact
    /// expectations.
    pub storage_shots: u64,
    pub trajectories: usize,
    pub seed: u64,
    /// Storage times, ms.
    pub times_ms: Vec<f64>,
    pub timing: StorageTiming,
    /// Duration of the rf π pulse in the ODMR scan, ms.
    pub odmr_pulse_ms: f64,
    /// ODMR grid step and half-span, kHz.
    pub odmr_step_khz: f64,
    pub odmr_span_khz: f64,
    pub repetitions: u32,
}

/// Storage times: zero, then 8 log-spaced points up to 4 ms.
pub fn default_storage_times() -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend(geomspace(0.05, 4.0, 8));
    t
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: NvSystem::default_register(),
            field_jitter: true,
            field_sigma_g: 0.15,
            rf: RfNoiseSpec {
                amplitude_scale: DEFAULT_RF_AMPLITUDE,
                ..RfNoiseSpec::default()
            },
            t1: true,
            init_error: true,
            init: InitPopulations::typical(),
            scenario: ScenarioFlag::NoMemory,
            shots: 1_000_000,
            storage_shots: 0,
            trajectories: 1000,
            seed: 1,
            times_ms: default_storage_times(),
            timing: StorageTiming::default(),
            odmr_pulse_ms: 0.6,
            odmr_step_khz: 0.05,
            odmr_span_khz: 2.0,
            repetitions: 10,
        }
    }
}

/// rf amplitude scale found by `calibrate_rf_amplitude` with the default
/// configuration.
pub const DEFAULT_RF_AMPLITUDE: f64 = 0.5;

impl ExperimentConfig {
    /// Same configuration with every noise source and error switched off.
    pub fn noiseless() -> Self {
        Self {
            field_jitter: false,
            t1: false,
            init_error: false,
            shots: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories < 1 {
            return Err(Error::Config("trajectories must be at least 1".into()));
        }
        if self.times_ms.windows(2).any(|w| w[1] <= w[0]) || self.times_ms.iter().any(|&t| t < 0.0) {
            return Err(Error::Config("storage times must be nonnegative and increasing".into()));
        }
        if !(self.field_sigma_g >= 0.0) {
            return Err(Error::Config("field sigma must be nonnegative".into()));
        }
        if !(self.odmr_pulse_ms > 0.0 && self.odmr_step_khz > 0.0 && self.odmr_span_khz > 0.0) {
            return Err(Error::Config("ODMR pulse, step and span must be positive".into()));
        }
        if self.repetitions < 4 {
            return Err(Error::Config("need at least 4 repetitions".into()));
        }
        self.rf.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn field_noise(&self) -> Option<StaticFieldNoise> {
        (self.field_jitter && self.field_sigma_g > 0.0).then_some(StaticFieldNoise {
            sigma_b: self.field_sigma_g,
            gamma_c13: self.system.field.gamma_c13,
        })
    }

    /// Field offsets (G) for each jitter trajectory, or a single zero.
    fn field_offsets(&self) -> Vec<f64> {
        match self.field_noise() {
            None => vec![0.0],
            Some(n) => (0..self.trajectories as u64)
                .map(|i| n.sample_gauss(&mut stream_rng(self.seed, i, PURPOSE_FIELD)))
                .collect(),
        }
    }
}

fn binomial_estimate(p: f64, shots: u64, seed: u64, index: u64, purpose: u64) -> f64 {
    if shots == 0 {
        return p;
    }
    let mut rng = stream_rng(seed, index, purpose);
    Binomial::new(shots, p.clamp(0.0, 1.0))
        .expect("valid binomial")
        .sample(&mut rng) as f64
        / shots as f64
}

// ---------------------------------------------------------------- ODMR

/// Flip probability of a rectangular pulse that is a π pulse on resonance.
pub fn rabi_lineshape(detuning_khz: f64, pulse_ms: f64) -> f64 {
    let omega = 1.0 / (2.0 * pulse_ms);
    let w2 = omega * omega + detuning_khz * detuning_khz;
    omega * omega / w2 * (PI * pulse_ms * w2.sqrt()).sin().powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdmrScan {
    pub spin: usize,
    pub ms: i32,
    pub freqs_khz: Vec<f64>,
    pub signal: Vec<f64>,
    pub fit: DecayFit,
    pub center_khz: f64,
}

/// Grid centered on the line expected from `sys`.
pub fn default_odmr_grid(spin: usize, branch: Branch, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let p = cfg.system.spin(spin)?;
    let f0 = odmr_frequencies(p, &cfg.system.field).for_branch(branch);
    let n = (cfg.odmr_span_khz / cfg.odmr_step_khz).round() as i64;
    Ok((-n..=n).map(|i| f0 + i as f64 * cfg.odmr_step_khz).collect())
}

/// Scans the rf frequency across the nuclear line of `spin` with the
/// electron held in `branch`, and fits a Gaussian to the central lobe.
pub fn run_odmr_scan(spin: usize, branch: Branch, grid: &[f64], cfg: &ExperimentConfig) -> Result<OdmrScan> {
    if grid.len() < 5 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "scan grid must be increasing with at least 5 points".into(),
        ));
    }
    let p = cfg.system.spin(spin)?;
    let f_res = odmr_frequencies(p, &cfg.system.field).for_branch(branch);
    let purpose = PURPOSE_ODMR + 8 * spin as u64 + (branch.ms() + 1) as u64;
    let signal: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let prob = rabi_lineshape(f - f_res, cfg.odmr_pulse_ms);
            binomial_estimate(prob, cfg.shots, cfg.seed, i as u64, purpose)
        })
        .collect();
    let imax = signal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    if imax == 0 || imax + 1 == grid.len() {
        return Err(Error::InvalidArgument(format!(
            "scan {:.3}..{:.3} kHz does not bracket the line",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    // Central lobe: first zeros sit near 1.4 kHz for a 0.6 ms pulse.
    let half_width = 0.85 * (1.0 / cfg.odmr_pulse_ms.powi(2) - 0.25 / cfg.odmr_pulse_ms.powi(2)).sqrt();
    let lobe: Vec<(f64, f64)> = grid
        .iter()
        .zip(&signal)
        .filter(|(&f, _)| (f - grid[imax]).abs() <= half_width)
        .map(|(&f, &s)| (f, s))
        .collect();
    let fit = fit_decay(&lobe, FitModel::GaussianPeak)?;
    let center_khz = fit.center().unwrap();
    Ok(OdmrScan {
        spin,
        ms: branch.ms(),
        freqs_khz: grid.to_vec(),
        signal,
        fit,
        center_khz,
    })
}

/// Three scans (ms = 0, +1, -1) and the hyperfine pair they imply.
pub fn calibrate_hyperfine(spin: usize, cfg: &ExperimentConfig) -> Result<(OdmrFrequencies, (f64, f64))> {
    let mut centers = [0.0; 3];
    for (k, b) in [Branch::Zero, Branch::PlusOne, Branch::MinusOne]
        .into_iter()
        .enumerate()
    {
        let grid = default_odmr_grid(spin, b, cfg)?;
        centers[k] = run_odmr_scan(spin, b, &grid, cfg)?.center_khz;
    }
    let freqs = OdmrFrequencies {
        omega_0: centers[0],
        omega_plus: centers[1],
        omega_minus: centers[2],
    };
    Ok((freqs, invert_odmr(&freqs)?))
}

// ------------------------------------------------------- gate repetition

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub spin: usize,
    pub ms: i32,
    pub n: Vec<u32>,
    /// Target-spin Y expectation after n gates.
    pub y: Vec<f64>,
    pub fit: DecayFit,
}

fn electron_index(branch: Branch) -> Result<usize> {
    match branch {
        Branch::Zero => Ok(0),
        Branch::MinusOne => Ok(1),
        Branch::PlusOne => Err(Error::InvalidArgument("electron qubit spans ms = 0 and -1".into())),
    }
}

fn polarized_register(electron: usize, spin: usize) -> DensityMatrix {
    let e = DensityMatrix::basis(2, electron);
    let up = DensityMatrix::basis(2, 0);
    let mixed = DensityMatrix::maximally_mixed(2);
    if spin == 1 {
        e.kron(&up).kron(&mixed)
    } else {
        e.kron(&mixed).kron(&up)
    }
}

/// Averages the logical-frame nuclear state of `program` over field jitter.
fn run_with_jitter(program: &CircuitProgram, rho: &DensityMatrix, cfg: &ExperimentConfig) -> Result<DensityMatrix> {
    let offsets = cfg.field_offsets();
    let mut acc = crate::spin_core::CMatrix::zeros(4, 4);
    for &db in &offsets {
        let out = program.run(&cfg.system.with_field_offset(db), rho)?;
        acc += out.matrix();
    }
    let n = offsets.len() as f64;
    Ok(DensityMatrix::from_matrix_unchecked(acc.map(|z| z / C64::new(n, 0.0))))
}

/// Applies the conditional X(π/2) gate on `spin` n = 1..N times with the
/// electron in `branch` and measures the target on Y.
pub fn run_gate_repetition(spin: usize, branch: Branch, cfg: &ExperimentConfig) -> Result<RepetitionResult> {
    cfg.system.spin(spin)?;
    let e = electron_index(branch)?;
    let rho = polarized_register(e, spin);
    let mut n = Vec::new();
    let mut y = Vec::new();
    for k in 1..=cfg.repetitions {
        let ops = vec![LogicalOp::Cx { spin, angle: FRAC_PI_2 }; k as usize];
        let program = compile_circuit(&ops, &cfg.system, true)?;
        let rn = run_with_jitter(&program, &rho, cfg)?;
        let r = reduce_nuclear(&rn, spin)?;
        let exact = r.expectation(&Operator::sigma_y()).re;
        let p_plus = binomial_estimate(
            (1.0 + exact) / 2.0,
            cfg.shots,
            cfg.seed,
            k as u64,
            PURPOSE_REPETITION + e as u64,
        );
        n.push(k);
        y.push(2.0 * p_plus - 1.0);
    }
    let pts: Vec<(f64, f64)> = n.iter().zip(&y).map(|(&k, &v)| (k as f64, v)).collect();
    let fit = fit_decay(&pts, FitModel::SinusoidLinearEnvelope)?;
    Ok(RepetitionResult {
        spin,
        ms: branch.ms(),
        n,
        y,
        fit,
    })
}

// ----------------------------------------------------------- entanglement

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoredState {
    Singlet,
    Triplet,
}

impl StoredState {
    pub fn phi(self) -> f64 {
        match self {
            StoredState::Singlet => PI,
            StoredState::Triplet => 0.0,
        }
    }

    pub fn target(self) -> PureState {
        match self {
            StoredState::Singlet => PureState::singlet(),
            StoredState::Triplet => PureState::triplet(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StoredState::Singlet => "S",
            StoredState::Triplet => "T",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "S" | "s" | "singlet" => Ok(StoredState::Singlet),
            "T" | "t" | "triplet" => Ok(StoredState::Triplet),
            _ => Err(Error::Parse(format!("state {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntanglementResult {
    pub phi: f64,
    pub duration_us: f64,
    /// Exact gates, no crosstalk.
    pub fidelity_ideal: f64,
    /// Compiled gates at the nominal field.
    pub fidelity_compiled: f64,
    /// Compiled gates averaged over field jitter (equal to the compiled
    /// value when jitter is off).
    pub fidelity_jitter: f64,
    /// After initialization error, the state handed to tomography.
    pub fidelity_final: f64,
    pub rho: DensityMatrix,
    pub tomography: Option<(ReconstructionResult, f64)>,
}

/// Prepares the pair with phase `phi` and characterizes the result.
pub fn run_entanglement(phi: f64, cfg: &ExperimentConfig) -> Result<EntanglementResult> {
    let target = if (wrap_pi(phi)).abs() < 1e-12 {
        PureState::triplet()
    } else {
        PureState::singlet()
    };
    let rho0 = initial_register_state();
    let ideal = partial_trace_electron(&run_ideal(&entanglement_ops(phi), &rho0))?;
    let program = entanglement_circuit(phi, &cfg.system)?;
    let compiled = program.run(&cfg.system, &rho0)?;
    let jittered = run_with_jitter(&program, &rho0, cfg)?;
    let rho = if cfg.init_error {
        apply_init_error(&jittered, &cfg.init, cfg.scenario)
    } else {
        jittered.clone()
    };
    let tomography = if cfg.shots > 0 {
        let rec = mle_reconstruct(&simulate_all(&rho, cfg.shots, cfg.seed)?)?;
        let f = state_fidelity(&target, &rec.rho)?;
        Some((rec, f))
    } else {
        None
    };
    Ok(EntanglementResult {
        phi,
        duration_us: program.duration_us(),
        fidelity_ideal: state_fidelity(&target, &ideal)?,
        fidelity_compiled: state_fidelity(&target, &compiled)?,
        fidelity_jitter: state_fidelity(&target, &jittered)?,
        fidelity_final: state_fidelity(&target, &rho)?,
        rho,
        tomography,
    })
}

fn wrap_pi(x: f64) -> f64 {
    crate::spin_core::wrap_angle(x)
}

/// Nuclear pair state handed to storage: compiled circuit at the nominal
/// field, then initialization error if enabled.
pub fn prepare_state(state: StoredState, cfg: &ExperimentConfig) -> Result<DensityMatrix> {
    let program = entanglement_circuit(state.phi(), &cfg.system)?;
    let rho = program.run(&cfg.system, &initial_register_state())?;
    Ok(if cfg.init_error {
        apply_init_error(&rho, &cfg.init, cfg.scenario)
    } else {
        rho
    })
}

// ---------------------------------------------------------------- storage

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    DephasingOnly,
    GeneralCollective,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::DephasingOnly => "dephasing",
            NoiseMode::GeneralCollective => "general",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dephasing" | "dephasing-only" => Ok(NoiseMode::DephasingOnly),
            "general" | "general-collective" => Ok(NoiseMode::GeneralCollective),
            _ => Err(Error::Parse(format!("noise mode {s:?}"))),
        }
    }
}

pub fn noise_set(mode: NoiseMode, cfg: &ExperimentConfig) -> NoiseSet {
    NoiseSet {
        field: cfg.field_noise(),
        rf: (mode == NoiseMode::GeneralCollective).then_some(cfg.rf),
        t1: cfg.t1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageResult {
    pub state: StoredState,
    pub mode: NoiseMode,
    pub times_ms: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
}

/// Fidelity of a stored pair versus storage time and its decay fit.
pub fn run_storage_experiment(state: StoredState, mode: NoiseMode, cfg: &ExperimentConfig) -> Result<StorageResult> {
    cfg.validate()?;
    let rho0 = prepare_state(state, cfg)?;
    storage_from_state(&rho0, state, mode, cfg)
}

/// Storage stage alone, starting from a prepared nuclear state.
pub fn storage_from_state(
    rho0: &DensityMatrix,
    state: StoredState,
    mode: NoiseMode,
    cfg: &ExperimentConfig,
) -> Result<StorageResult> {
    let target = state.target();
    let noises = noise_set(mode, cfg);
    let stats = storage_fidelity(
        rho0,
        &target,
        &cfg.times_ms,
        &cfg.system,
        &noises,
        &cfg.timing,
        cfg.trajectories,
        cfg.seed,
    )?;
    let mut fidelity: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let stderr: Vec<f64> = stats.iter().map(|s| s.1).collect();
    if cfg.storage_shots > 0 {
        let states = crate::noise_models::storage_curve(
            rho0,
            &cfg.times_ms,
            &cfg.system,
            &noises,
            &cfg.timing,
            cfg.trajectories,
            cfg.seed,
        )?;
        for (k, rho) in states.iter().enumerate() {
            let rec = mle_reconstruct(&simulate_all(rho, cfg.storage_shots, cfg.seed.wrapping_add(k as u64))?)?;
            fidelity[k] = state_fidelity(&target, &rec.rho)?;
        }
    }
    let pts: Vec<(f64, f64)> = cfg.times_ms.iter().copied().zip(fidelity.iter().copied()).collect();
    let (fit, fit_error) = match fit_decay(&pts, FitModel::ExpWithFloor) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(StorageResult {
        state,
        mode,
        times_ms: cfg.times_ms.clone(),
        fidelity,
        stderr,
        fit,
        fit_error,
    })
}

// ------------------------------------------------------- rf calibration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub amplitude_scale: f64,
    pub t_est_ms: f64,
    /// `(amplitude_scale, fitted T_est)` for every evaluation.
    pub history: Vec<(f64, f64)>,
}

/// Finds an rf amplitude scale for which the triplet decays with a time in
/// `band_ms` under general collective noise. Bracketing by factors of 4,
/// then bisection in log amplitude.
pub fn calibrate_rf_amplitude(cfg: &ExperimentConfig, band_ms: (f64, f64)) -> Result<Calibration> {
    cfg.validate()?;
    let (lo_t, hi_t) = band_ms;
    if !(0.0 < lo_t && lo_t < hi_t) {
        return Err(Error::InvalidArgument(format!("band {band_ms:?}")));
    }
    let rho0 = prepare_state(StoredState::Triplet, cfg)?;
    let mut history = Vec::new();
    let eval = |a: f64, history: &mut Vec<(f64, f64)>| -> Result<f64> {
        let mut c = cfg.clone();
        c.rf.amplitude_scale = a;
        let r = storage_from_state(&rho0, StoredState::Triplet, NoiseMode::GeneralCollective, &c)?;
        // A failed fit at strong drive means the decay was too fast to see.
        let t = r.fit.and_then(|f| f.t_est()).unwrap_or(0.0);
        history.push((a, t));
        Ok(t)
    };
    let inside = |t: f64| (lo_t..=hi_t).contains(&t);
    let mut a = cfg.rf.amplitude_scale.max(1e-6);
    let mut t = eval(a, &mut history)?;
    let (mut a_lo, mut a_hi);
    if inside(t) {
        return Ok(Calibration {
            amplitude_scale: a,
            t_est_ms: t,
            history,
        });
    }
    // T_est falls as the amplitude grows.
    if t > hi_t {
        a_lo = a;
        loop {
            a *= 4.0;
            t = eval(a, &mut history)?;
            if t <= hi_t {
                break;
            }
            a_lo = a;
            if history.len() > 20 {
                return Err(Error::FitFailure("rf calibration did not bracket".into()));
            }
        }
        a_hi = a;
    } else {
        a_hi = a;
        loop {
            a /= 4.0;
            t = eval(a, &mut history)?;
            if t >= lo_t {
                break;
            }
            a_hi = a;
            if history.len() > 20 {
                return Err(Error::FitFailure("rf calibration did not bracket".into()));
            }
        }
        a_lo = a;
    }
    while !inside(t) {
        if history.len() > 40 {
            return Err(Error::FitFailure("rf calibration did not converge".into()));
        }
        a = (a_lo * a_hi).sqrt();
        t = eval(a, &mut history)?;
        if t > hi_t {
            a_lo = a;
        } else if t < lo_t {
            a_hi = a;
        }
    }
    Ok(Calibration {
        amplitude_scale: a,
        t_est_ms: t,
        history,
    })
}
