//! Compile the register's gate set from the hyperfine parameters and
//! check a conditional gate by repeating it.
//!
//! ```bash
//! cargo run --release --example gate_synthesis
//! ```

use std::f64::consts::FRAC_PI_2;

use nvdfs::experiments::{run_gate_repetition, ExperimentConfig};
use nvdfs::nv_model::{Branch, NvSystem};
use nvdfs::pulse_engine::{synthesize_gate, CompileOptions, GateSpec};

fn main() -> nvdfs::Result<()> {
    let sys = NvSystem::default_register();
    let opts = CompileOptions::default();
    let specs = [
        ("spin1 Rx^e(pi/2)", GateSpec::conditional_x(1, FRAC_PI_2, 3)),
        ("spin1 Rx(pi/2)", GateSpec::unconditional_x(1, FRAC_PI_2, 4)),
        ("spin1 Rz(pi/2)", GateSpec::unconditional_z(1, FRAC_PI_2)),
        ("spin2 Rx^e(pi/2)", GateSpec::conditional_x(2, FRAC_PI_2, 3)),
        ("spin2 Rz(pi/2)", GateSpec::unconditional_z(2, FRAC_PI_2)),
    ];
    println!(
        "{:<18} {:>3} {:>9} {:>4} {:>10} {:>8}",
        "gate", "k", "tau(us)", "N", "total(us)", "overlap"
    );
    for (name, spec) in specs {
        let g = synthesize_gate(&spec, &sys, &opts)?;
        println!(
            "{name:<18} {:>3} {:>9.4} {:>4} {:>10.2} {:>8.4}",
            g.order,
            g.tau_us,
            g.n_pulses,
            g.duration_us(),
            g.overlap
        );
    }

    let cfg = ExperimentConfig::noiseless();
    for branch in [Branch::Zero, Branch::MinusOne] {
        let r = run_gate_repetition(1, branch, &cfg)?;
        let (b, sb) = r.fit.b().unwrap();
        let ys: Vec<String> = r.y.iter().map(|y| format!("{y:+.3}")).collect();
        println!("\nms = {:>2}: <Y> = [{}]", branch.ms(), ys.join(", "));
        println!("         amplitude {:+.4}, b = {b:.4} ± {sb:.4}", r.fit.params[0]);
    }
    Ok(())
}
