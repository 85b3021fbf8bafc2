//! Cost of solving the full-information strategy with wrong parameters.
//!
//! Usage: `cargo run --release --example misspecification -- [n_paths] [seed]`

use fadmm::experiments::{misspecification_rows, MISSPEC_PARAMS};
use fadmm::solvers::DEFAULT_N_GRID;
use fadmm::ModelParams;

fn main() -> fadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_paths: usize = args.next().map_or(20_000, |a| a.parse().expect("n_paths"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));
    let rows = misspecification_rows(&ModelParams::baseline(), &MISSPEC_PARAMS, n_paths, 1000, seed, DEFAULT_N_GRID)?;
    println!("{:<15} {:>6} {:>9} {:>10} {:>8}", "parameter", "true", "believed", "loss %", "t");
    for r in rows {
        println!(
            "{:<15} {:>6.3} {:>9.3} {:>10.4} {:>8.2}{}",
            r.param,
            r.true_value,
            r.believed_value,
            r.loss_pct,
            r.t_stat.unwrap_or(f64::NAN),
            if r.significant_1pct { " *" } else { "" }
        );
    }
    Ok(())
}
