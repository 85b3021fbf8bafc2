//! Finite-difference HJB solve compared with the closed-form quotes.
//!
//! Usage: `cargo run --release --example hjb_fd -- [u_max] [n_t] [n_u]`

use std::time::Instant;

use fadmm::hjb_fd::{compare_with_closed_form, max_gap, solve_hjb_fd, GridSpec};
use fadmm::solvers::{solve_fi_coefficients, StrategyKind, DEFAULT_N_GRID};
use fadmm::ModelParams;

fn main() -> fadmm::Result<()> {
    let p = ModelParams::baseline();
    let mut spec = GridSpec::default_for(&p);
    let mut args = std::env::args().skip(1);
    if let Some(u) = args.next() {
        spec.u_max = u.parse().expect("u_max");
    }
    if let Some(n) = args.next() {
        spec.n_t = n.parse().expect("n_t");
    }
    if let Some(n) = args.next() {
        spec.n_u = n.parse().expect("n_u");
    }

    let start = Instant::now();
    let grid = solve_hjb_fd(&p, StrategyKind::Fi, &spec)?;
    println!("solved {spec:?} in {:.1?}", start.elapsed());

    let coeffs = solve_fi_coefficients(&p, DEFAULT_N_GRID)?;
    let u_lim = spec.u_max.min(1.5);
    let us: Vec<f64> = (-6..=6).map(|i| u_lim * i as f64 / 6.0).collect();
    for qmax in [1, 3, 5] {
        let qs: Vec<i64> = (-qmax..=qmax).collect();
        let rows = compare_with_closed_form(&grid, &coeffs, &p, &[0.0, 0.5, 0.9], &qs, &us)?;
        println!("|q| <= {qmax}, |u| <= {u_lim:.3}: max displacement gap {:.5}", max_gap(&rows));
    }
    for u in [0.0, 0.5, 1.0, 1.5] {
        if u > spec.u_max {
            continue;
        }
        let rows = compare_with_closed_form(&grid, &coeffs, &p, &[0.0, 0.5], &[-5, 0, 5], &[u, -u])?;
        println!("|u| = {u}: gap {:.5}", max_gap(&rows));
    }
    Ok(())
}
