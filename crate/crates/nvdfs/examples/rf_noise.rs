//! Synthesize the colored rf noise and compare its ensemble
//! autocorrelation with the target exponential.
//!
//! ```bash
//! cargo run --release --example rf_noise
//! ```

use nvdfs::noise_models::{synth_rf_noise, RfNoiseSpec};

fn main() -> nvdfs::Result<()> {
    let spec = RfNoiseSpec::default();
    let dt_us = 10.0;
    let lags = 26;
    let seeds = 2000;
    let mut acc = vec![0.0; lags];
    for seed in 0..seeds {
        let w = synth_rf_noise(&spec, dt_us * lags as f64, dt_us, seed)?;
        for (k, a) in acc.iter_mut().enumerate() {
            *a += (w.samples[k] * w.samples[0].conj()).re;
        }
    }
    println!("{:>8} {:>10} {:>10}", "lag(us)", "ensemble", "exp(-R t)");
    for (k, a) in acc.iter().enumerate().step_by(5) {
        let t_ms = k as f64 * dt_us * 1e-3;
        println!(
            "{:>8.0} {:>10.4} {:>10.4}",
            k as f64 * dt_us,
            a / seeds as f64,
            (-spec.correlation_rate * t_ms).exp()
        );
    }
    Ok(())
}
