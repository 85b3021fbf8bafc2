//! Baseline Monte Carlo of the three strategies on common random numbers.
//!
//! Usage: `cargo run --release --example monte_carlo -- [n_paths] [seed]`

use std::time::Instant;

use fadmm::sim::{monte_carlo, Strategy};
use fadmm::solvers::DEFAULT_N_GRID;
use fadmm::{Mark, ModelParams};

fn main() -> fadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_paths: usize = args.next().map_or(20_000, |a| a.parse().expect("n_paths"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));

    let p = ModelParams::baseline();
    let strategies = Strategy::standard_trio(&p, DEFAULT_N_GRID, Mark::Mid)?;
    let start = Instant::now();
    let res = monte_carlo(&p, &strategies, n_paths, 1000, seed, Mark::Mid)?;
    println!("{n_paths} paths in {:.1?}", start.elapsed());
    for s in &res.stats {
        println!(
            "{:>4}: mean {:.3} (sd {:.3}, se {:.4}), fills ask/bid {:.2}/{:.2}, informed share {:.3}",
            s.label,
            s.mean,
            s.stdev.unwrap_or(f64::NAN),
            s.se.unwrap_or(f64::NAN),
            s.mean_fills_ask,
            s.mean_fills_bid,
            s.mean_informed_fills / (s.mean_informed_fills + s.mean_uninformed_fills),
        );
    }
    let (fi_pi, pi_cjp) = (res.paired(0, 2), res.paired(2, 1));
    println!(
        "paired FI-PI {:.4} (se {:.4}), PI-CJP {:.4} (se {:.4})",
        fi_pi.mean,
        fi_pi.se.unwrap_or(f64::NAN),
        pi_cjp.mean,
        pi_cjp.se.unwrap_or(f64::NAN)
    );
    Ok(())
}
