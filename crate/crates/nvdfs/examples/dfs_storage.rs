//! Store the singlet and triplet under dephasing only and under general
//! collective noise, and fit the decay of each.
//!
//! ```bash
//! cargo run --release --example dfs_storage
//! ```

use nvdfs::experiments::{run_storage_experiment, ExperimentConfig, NoiseMode, StoredState};

fn main() -> nvdfs::Result<()> {
    let cfg = ExperimentConfig {
        trajectories: 300,
        ..ExperimentConfig::default()
    };
    for mode in [NoiseMode::DephasingOnly, NoiseMode::GeneralCollective] {
        println!("{} noise", mode.label());
        for state in [StoredState::Singlet, StoredState::Triplet] {
            let r = run_storage_experiment(state, mode, &cfg)?;
            let curve: Vec<String> = r.fidelity.iter().map(|f| format!("{f:.3}")).collect();
            match &r.fit {
                Some(fit) => println!(
                    "  |{}>  T_est = {:.3} ms  floor {:.3}   F: {}",
                    state.label(),
                    fit.t_est().unwrap(),
                    fit.floor().unwrap(),
                    curve.join(" ")
                ),
                None => println!("  |{}>  fit failed: {:?}", state.label(), r.fit_error),
            }
        }
    }
    Ok(())
}
