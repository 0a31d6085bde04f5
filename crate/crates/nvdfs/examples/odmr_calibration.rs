//! Recover the hyperfine couplings of both nuclei from three simulated
//! ODMR scans each, with shot noise.
//!
//! ```bash
//! cargo run --release --example odmr_calibration
//! ```

use nvdfs::experiments::{calibrate_hyperfine, ExperimentConfig};

fn main() -> nvdfs::Result<()> {
    let cfg = ExperimentConfig {
        shots: 1_000_000,
        ..ExperimentConfig::default()
    };
    for spin in [1, 2] {
        let truth = cfg.system.spin(spin)?;
        let (lines, (a_par, a_perp)) = calibrate_hyperfine(spin, &cfg)?;
        println!(
            "spin {spin}: lines {:.3} / {:.3} / {:.3} kHz",
            lines.omega_0, lines.omega_plus, lines.omega_minus
        );
        println!(
            "  A_par  = {a_par:8.3} kHz (true {:8.3})\n  A_perp = {a_perp:8.3} kHz (true {:8.3})",
            truth.a_par, truth.a_perp
        );
    }
    Ok(())
}
