//! Command-line entry point: config loading, dispatch and result files.

pub mod config;
pub mod output;

pub use config::ConfigMap;
pub use output::{emit_results, read_csv, write_atomic, CsvTable, RunManifest};

use std::f64::consts::{FRAC_PI_2, PI};
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    calibrate_rf_amplitude, default_odmr_grid, run_entanglement, run_gate_repetition, run_odmr_scan,
    run_storage_experiment, DecayFit, ExperimentConfig, NoiseMode, StoredState,
};
use crate::nv_model::{odmr_frequencies, Branch};
use crate::pulse_engine::{synthesize_gate, CompileOptions, GateSpec};
use crate::spin_core::state_fidelity;
use crate::tomography::{mle_reconstruct, simulate_all};

/// Environment variable naming the output directory.
pub const OUT_DIR_ENV: &str = "NVDFS_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FIT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "nvdfs", version, about = "NV-center two-nucleus register simulator")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $NVDFS_OUT_DIR or ./nvdfs-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scan one nuclear line and fit its center.
    Odmr {
        #[arg(long)]
        spin: usize,
        #[arg(long, allow_hyphen_values = true)]
        ms: i32,
    },
    /// Compile the register's gate set and run the repetition test.
    GateCheck {
        #[arg(long)]
        spin: Option<usize>,
    },
    /// Run the entangling circuit and report fidelities.
    Entangle {
        /// Phase of the last electron pulses: `pi` gives the singlet, `0`
        /// the triplet.
        #[arg(long, default_value = "pi", allow_hyphen_values = true)]
        phi: String,
    },
    /// Store a prepared pair under noise and fit the decay.
    Store {
        #[arg(long, default_value = "S")]
        state: String,
        #[arg(long, default_value = "general")]
        noise: String,
    },
    /// Simulate tomography counts of a prepared pair and reconstruct it.
    Tomo {
        #[arg(long, default_value = "S")]
        state: String,
    },
    /// Find the rf amplitude giving the target triplet decay time.
    CalibrateNoise {
        #[arg(long, default_value_t = 0.30)]
        lo_ms: f64,
        #[arg(long, default_value_t = 0.42)]
        hi_ms: f64,
    },
}

/// Parses `pi`, `-pi`, `pi/2` and plain numbers.
pub fn parse_angle(s: &str) -> Result<f64> {
    let t = s.trim().to_ascii_lowercase();
    let (sign, body) = match t.strip_prefix('-') {
        Some(b) => (-1.0, b),
        None => (1.0, t.as_str()),
    };
    let v = match body {
        "pi" => PI,
        "pi/2" => FRAC_PI_2,
        _ => body.parse::<f64>().map_err(|_| Error::Parse(format!("angle {s:?}")))?,
    };
    Ok(sign * v)
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn f(x: f64) -> String {
    x.to_string()
}

fn fit_json(fit: &DecayFit) -> Value {
    let names = fit.model.param_names();
    let mut m = serde_json::Map::new();
    for (k, n) in names.iter().enumerate() {
        m.insert(n.to_string(), json!(fit.params[k]));
        m.insert(format!("{n}_sigma"), json!(fit.sigmas[k]));
    }
    m.insert("model".into(), json!(fit.model));
    m.insert("residual".into(), json!(fit.residual));
    m.insert("degenerate".into(), json!(fit.degenerate));
    Value::Object(m)
}

/// What a command produced.
struct Outcome {
    stem: String,
    tables: Vec<(String, CsvTable)>,
    extra: Vec<(String, Vec<u8>)>,
    fitted: Value,
    /// Fit failure reported after the data were written.
    fit_failure: Option<String>,
    summary: Vec<String>,
}

impl Outcome {
    fn new(stem: impl Into<String>) -> Self {
        Self {
            stem: stem.into(),
            tables: Vec::new(),
            extra: Vec::new(),
            fitted: Value::Null,
            fit_failure: None,
            summary: Vec::new(),
        }
    }
}

fn cmd_odmr(spin: usize, ms: i32, cfg: &ExperimentConfig) -> Result<Outcome> {
    let branch = Branch::from_ms(ms)?;
    let grid = default_odmr_grid(spin, branch, cfg)?;
    let scan = run_odmr_scan(spin, branch, &grid, cfg)?;
    let expected = odmr_frequencies(cfg.system.spin(spin)?, &cfg.system.field).for_branch(branch);
    let mut out = Outcome::new(format!("odmr_spin{spin}_ms{ms}"));
    let rows = scan
        .freqs_khz
        .iter()
        .zip(&scan.signal)
        .map(|(&x, &p)| {
            let se = if cfg.shots > 0 {
                (p * (1.0 - p) / cfg.shots as f64).sqrt()
            } else {
                0.0
            };
            vec![f(x), f(p), f(se)]
        })
        .collect();
    out.tables.push((
        String::new(),
        CsvTable::new(&["freq_khz", "probability", "stderr"], rows),
    ));
    out.fitted = json!({
        "center_khz": scan.center_khz,
        "expected_khz": expected,
        "fit": fit_json(&scan.fit),
    });
    out.summary.push(format!(
        "spin {spin}, ms = {ms}: center {:.4} kHz (expected {:.4})",
        scan.center_khz, expected
    ));
    Ok(out)
}

fn cmd_gate_check(spin: Option<usize>, cfg: &ExperimentConfig) -> Result<Outcome> {
    let spins: Vec<usize> = match spin {
        Some(s) => {
            cfg.system.spin(s)?;
            vec![s]
        }
        None => vec![1, 2],
    };
    let opts = CompileOptions::default();
    let mut gate_rows = Vec::new();
    let mut rep_rows = Vec::new();
    let mut fitted = serde_json::Map::new();
    let mut summary = Vec::new();
    for &s in &spins {
        let mut specs = vec![("cx", GateSpec::conditional_x(s, FRAC_PI_2, 3))];
        if s == 1 {
            specs.push(("x", GateSpec::unconditional_x(s, FRAC_PI_2, 4)));
        }
        specs.push(("z", GateSpec::unconditional_z(s, FRAC_PI_2)));
        for (name, spec) in specs {
            let g = synthesize_gate(&spec, &cfg.system, &opts)?;
            summary.push(format!(
                "spin {s} {name}: k = {}, tau = {:.4} us, N = {}, overlap {:.4}",
                g.order, g.tau_us, g.n_pulses, g.overlap
            ));
            gate_rows.push(vec![
                s.to_string(),
                name.to_string(),
                g.order.to_string(),
                f(g.tau_us),
                g.n_pulses.to_string(),
                f(g.duration_us()),
                f(g.overlap),
            ]);
        }
        for branch in [Branch::Zero, Branch::MinusOne] {
            let r = run_gate_repetition(s, branch, cfg)?;
            for (n, y) in r.n.iter().zip(&r.y) {
                let se = if cfg.shots > 0 {
                    ((1.0 - y * y) / cfg.shots as f64).max(0.0).sqrt()
                } else {
                    0.0
                };
                rep_rows.push(vec![
                    s.to_string(),
                    branch.ms().to_string(),
                    n.to_string(),
                    f(*y),
                    f(se),
                ]);
            }
            let (b, sb) = r.fit.b().unwrap();
            summary.push(format!("spin {s}, ms = {}: b = {b:.4} ± {sb:.4}", branch.ms()));
            fitted.insert(format!("spin{s}_ms{}", branch.ms()), fit_json(&r.fit));
        }
    }
    let mut out = Outcome::new(match spin {
        Some(s) => format!("gate_check_spin{s}"),
        None => "gate_check".into(),
    });
    out.tables.push((
        "gates".into(),
        CsvTable::new(
            &["spin", "gate", "order", "tau_us", "n_pulses", "duration_us", "overlap"],
            gate_rows,
        ),
    ));
    out.tables.push((
        "repetition".into(),
        CsvTable::new(&["spin", "ms", "n", "y_expectation", "stderr"], rep_rows),
    ));
    out.fitted = Value::Object(fitted);
    out.summary = summary;
    Ok(out)
}

fn cmd_entangle(phi: f64, cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = run_entanglement(phi, cfg)?;
    let mut out = Outcome::new("entangle");
    let mut rows = vec![
        vec!["ideal".to_string(), f(r.fidelity_ideal)],
        vec!["compiled".to_string(), f(r.fidelity_compiled)],
        vec!["jitter".to_string(), f(r.fidelity_jitter)],
        vec!["final".to_string(), f(r.fidelity_final)],
    ];
    if let Some((_, ft)) = &r.tomography {
        rows.push(vec!["tomography".to_string(), f(*ft)]);
    }
    out.tables
        .push((String::new(), CsvTable::new(&["stage", "fidelity"], rows)));
    let m = r.rho.matrix();
    let rho_rows = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| vec![i.to_string(), j.to_string(), f(m[(i, j)].re), f(m[(i, j)].im)])
        .collect();
    out.tables
        .push(("rho".into(), CsvTable::new(&["row", "col", "re", "im"], rho_rows)));
    // The headline number is the last stage that was simulated.
    let fidelity = r.tomography.as_ref().map_or(r.fidelity_final, |t| t.1);
    out.fitted = json!({
        "phi": phi,
        "fidelity": fidelity,
        "fidelity_ideal": r.fidelity_ideal,
        "fidelity_compiled": r.fidelity_compiled,
        "fidelity_jitter": r.fidelity_jitter,
        "fidelity_final": r.fidelity_final,
        "duration_us": r.duration_us,
    });
    out.summary.push(format!(
        "phi = {phi:.4}: F ideal {:.4}, compiled {:.4}, jitter {:.4}, final {:.4}, reported {:.4}",
        r.fidelity_ideal, r.fidelity_compiled, r.fidelity_jitter, r.fidelity_final, fidelity
    ));
    Ok(out)
}

fn cmd_store(state: StoredState, mode: NoiseMode, cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = run_storage_experiment(state, mode, cfg)?;
    let mut out = Outcome::new(format!("store_{}_{}", state.label(), mode.label()));
    let rows = r
        .times_ms
        .iter()
        .zip(&r.fidelity)
        .zip(&r.stderr)
        .map(|((&t, &fi), &se)| vec![f(t), f(fi), f(se)])
        .collect();
    out.tables
        .push((String::new(), CsvTable::new(&["time_ms", "fidelity", "stderr"], rows)));
    match (&r.fit, &r.fit_error) {
        (Some(fit), _) => {
            out.fitted = fit_json(fit);
            out.summary.push(format!(
                "{} / {}: T_est = {:.4} ms, floor {:.4}",
                state.label(),
                mode.label(),
                fit.t_est().unwrap(),
                fit.floor().unwrap()
            ));
        }
        (None, err) => {
            let msg = err.clone().unwrap_or_default();
            out.fitted = json!({ "fit_error": msg });
            out.fit_failure = Some(msg);
        }
    }
    Ok(out)
}

fn cmd_tomo(state: StoredState, cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.shots == 0 {
        return Err(Error::Config("tomography needs run.shots > 0".into()));
    }
    let mut c = cfg.clone();
    c.shots = 0;
    let prepared = run_entanglement(state.phi(), &c)?;
    let records = simulate_all(&prepared.rho, cfg.shots, cfg.seed)?;
    let rec = mle_reconstruct(&records)?;
    let fid = state_fidelity(&state.target(), &rec.rho)?;
    let mut out = Outcome::new(format!("tomo_{}", state.label()));
    let mut rows = Vec::new();
    for r in &records {
        for (label, n) in r.setting.outcome_labels().iter().zip(&r.counts) {
            rows.push(vec![
                r.setting.label(),
                label.to_string(),
                n.to_string(),
                r.shots.to_string(),
                r.seed.to_string(),
            ]);
        }
    }
    out.tables.push((
        "counts".into(),
        CsvTable::new(&["setting", "outcome", "count", "shots", "seed"], rows),
    ));
    out.extra
        .push(("reconstruction.json".into(), rec.to_json()?.into_bytes()));
    out.fitted = json!({
        "fidelity": fid,
        "fidelity_exact": prepared.fidelity_final,
        "log_likelihood": rec.log_likelihood,
        "iterations": rec.iterations,
        "converged": rec.converged,
    });
    out.summary.push(format!(
        "{}: reconstructed F = {fid:.4} (exact {:.4}), {} iterations",
        state.label(),
        prepared.fidelity_final,
        rec.iterations
    ));
    Ok(out)
}

fn cmd_calibrate(lo: f64, hi: f64, cfg: &ExperimentConfig) -> Result<Outcome> {
    let c = calibrate_rf_amplitude(cfg, (lo, hi))?;
    let mut out = Outcome::new("calibrate_noise");
    let rows = c.history.iter().map(|&(a, t)| vec![f(a), f(t)]).collect();
    out.tables
        .push((String::new(), CsvTable::new(&["amplitude_scale", "t_est_ms"], rows)));
    out.fitted = json!({ "amplitude_scale": c.amplitude_scale, "t_est_ms": c.t_est_ms });
    out.summary.push(format!(
        "noise.rf_amplitude_scale = {} (T_est = {:.4} ms)",
        c.amplitude_scale, c.t_est_ms
    ));
    Ok(out)
}

fn load_config(cli: &Cli) -> Result<ConfigMap> {
    let mut map = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ConfigMap::parse(&text)?
        }
        None => ConfigMap::defaults(),
    };
    for s in &cli.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {s:?}: expected key=value")))?;
        map.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        map.set("run.seed", seed.to_string())?;
    }
    map.to_experiment()?;
    Ok(map)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nvdfs-out"))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingKeys(_) => EXIT_CONFIG,
        Error::FitFailure(_) => EXIT_FIT,
        _ => EXIT_USAGE,
    }
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig) -> Result<Outcome> {
    match &cli.command {
        Command::Odmr { spin, ms } => cmd_odmr(*spin, *ms, cfg),
        Command::GateCheck { spin } => cmd_gate_check(*spin, cfg),
        Command::Entangle { phi } => cmd_entangle(parse_angle(phi)?, cfg),
        Command::Store { state, noise } => cmd_store(StoredState::parse(state)?, NoiseMode::parse(noise)?, cfg),
        Command::Tomo { state } => cmd_tomo(StoredState::parse(state)?, cfg),
        Command::CalibrateNoise { lo_ms, hi_ms } => cmd_calibrate(*lo_ms, *hi_ms, cfg),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Odmr { .. } => "odmr",
        Command::GateCheck { .. } => "gate-check",
        Command::Entangle { .. } => "entangle",
        Command::Store { .. } => "store",
        Command::Tomo { .. } => "tomo",
        Command::CalibrateNoise { .. } => "calibrate-noise",
    }
}

/// Runs one command and returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let started = now_ms();
    let map = match load_config(&cli) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("config error: {e}");
            return exit_code(&e);
        }
    };
    let cfg = map.to_experiment().expect("validated in load_config");
    let outcome = match dispatch(&cli, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let mut manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config_hash: map.hash(),
        config: map.entries().clone(),
        seed: cfg.seed,
        started_unix_ms: started,
        finished_unix_ms: 0,
        outputs: Vec::new(),
        fitted: outcome.fitted.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let dir = out_dir(&cli);
    if let Err(e) = emit_results(
        &dir,
        &outcome.stem,
        &outcome.tables,
        &outcome.extra,
        &mut manifest,
        now_ms,
    ) {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("wrote {} files to {}", manifest.outputs.len() + 1, dir.display());
    if let Some(msg) = outcome.fit_failure {
        eprintln!("fit failed: {msg}");
        return EXIT_FIT;
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("-pi").unwrap(), -PI);
        assert_eq!(parse_angle("0").unwrap(), 0.0);
        assert_eq!(parse_angle("pi/2").unwrap(), FRAC_PI_2);
        assert!(parse_angle("tau").is_err());
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(run_command(["nvdfs", "frobnicate"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_command(["nvdfs", "--help"]), EXIT_OK);
    }
}
