//! Reconstruct a noisy singlet from simulated counts at increasing shot
//! numbers.
//!
//! ```bash
//! cargo run --release --example tomography
//! ```

use nvdfs::spin_core::{state_fidelity, DensityMatrix, PureState};
use nvdfs::tomography::{mle_reconstruct, simulate_all};

fn main() -> nvdfs::Result<()> {
    let singlet = PureState::singlet();
    let rho = DensityMatrix::from_pure(&singlet).mix(&DensityMatrix::maximally_mixed(4), 0.8);
    println!("true fidelity {:.4}", state_fidelity(&singlet, &rho)?);
    for shots in [1_000, 100_000, 1_000_000] {
        let rec = mle_reconstruct(&simulate_all(&rho, shots, 42)?)?;
        println!(
            "{shots:>8} shots: F = {:.4}, min eigenvalue {:+.2e}, {} iterations",
            state_fidelity(&singlet, &rec.rho)?,
            rec.rho.min_eigenvalue(),
            rec.iterations
        );
    }
    Ok(())
}
