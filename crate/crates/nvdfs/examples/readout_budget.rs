//! Initialization and readout fidelity of a nuclear spin for a given
//! charge and spin pumping budget, in both re-pumping scenarios.
//!
//! ```bash
//! cargo run --example readout_budget
//! ```

use nvdfs::readout_model::{chain_contrast, chain_state, fidelity_bounds, InitPopulations, ScenarioFlag};

fn main() -> nvdfs::Result<()> {
    let p = InitPopulations::typical();
    for scenario in [ScenarioFlag::NoMemory, ScenarioFlag::ChargePreserving] {
        println!("{scenario:?}");
        for t in &chain_state(scenario).terms {
            let den = if t.weight.den > 0 {
                format!(" / S^{}", t.weight.den)
            } else {
                String::new()
            };
            println!("  {:?} x {:?}: {}{den}", t.electron, t.nuclear, t.weight.num);
        }
        println!("  contrast {:.4}", chain_contrast(&p, scenario)?);
    }
    let b = fidelity_bounds(&p)?;
    println!(
        "C_max {:.3}, F no-memory {:.3}, F charge-preserving {:.3}",
        b.contrast_max, b.f_no_memory, b.f_charge_preserving
    );
    Ok(())
}
