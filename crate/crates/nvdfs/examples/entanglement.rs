//! Prepare the singlet and triplet of the two nuclei and see where the
//! fidelity goes: crosstalk of the compiled gates, field jitter, and
//! initialization error.
//!
//! ```bash
//! cargo run --release --example entanglement
//! ```

use nvdfs::experiments::{run_entanglement, ExperimentConfig, StoredState};

fn main() -> nvdfs::Result<()> {
    let cfg = ExperimentConfig::default();
    for state in [StoredState::Singlet, StoredState::Triplet] {
        let r = run_entanglement(state.phi(), &cfg)?;
        println!("|{}>  ({:.1} us of pulses)", state.label(), r.duration_us);
        println!("  exact gates       {:.4}", r.fidelity_ideal);
        println!("  compiled gates    {:.4}", r.fidelity_compiled);
        println!("  + field jitter    {:.4}", r.fidelity_jitter);
        println!("  + init error      {:.4}", r.fidelity_final);
        if let Some((rec, f)) = &r.tomography {
            println!("  tomography        {f:.4}  ({} iterations)", rec.iterations);
        }
    }
    Ok(())
}
