//! Closed-form quotes of the three strategies and how they move with the fad.
//!
//! Usage: `cargo run --release --example quotes -- [q_weight] [gamma]`

use fadmm::filters::solve_variance_curve;
use fadmm::solvers::{self, DEFAULT_N_GRID};
use fadmm::ModelParams;

fn main() -> fadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let q_weight: f64 = args.next().map_or(0.6, |a| a.parse().expect("q_weight"));
    let gamma: f64 = args.next().map_or(1.0, |a| a.parse().expect("gamma"));
    let mut p = ModelParams::baseline().with_q_weight(q_weight);
    p.gamma = gamma;
    let p = p.recalibrated(30.0)?;
    println!("psi calibrated to {:.4}", p.psi_informed);

    let fi = solvers::solve_fi_coefficients(&p, DEFAULT_N_GRID)?;
    let v = solve_variance_curve(&p, DEFAULT_N_GRID)?;
    let pi = solvers::solve_pi_coefficients(&p, &v, DEFAULT_N_GRID)?;
    let cjp = solvers::solve_cjp_coefficients(&p, DEFAULT_N_GRID)?;
    let row = fi.at(0.0)?;
    println!(
        "t=0: A {:.5}, b1 {:.5}, spread 2/k - 2A = {:.5}",
        row.a,
        row.b1,
        2.0 / p.k_decay - 2.0 * row.a
    );

    println!("{:>3} {:>6} | {:>15} | {:>15} | {:>15}", "q", "u", "FI ask/bid", "PI ask/bid", "CJP ask/bid");
    for q in [-3, 0, 3] {
        for u in [-0.5, 0.0, 0.5] {
            let cell = |c| -> fadmm::Result<String> {
                let x = solvers::quote(c, &p, 0.0, q, u)?;
                Ok(format!("{:.4}/{:.4}", x.delta_a, x.delta_b))
            };
            println!("{q:>3} {u:>6.2} | {:>15} | {:>15} | {:>15}", cell(&fi)?, cell(&pi)?, cell(&cjp)?);
        }
    }
    Ok(())
}
