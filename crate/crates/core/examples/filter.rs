//! Kalman-Bucy filtering of the fad from mid prices, checked against a
//! bootstrap particle filter.
//!
//! Usage: `cargo run --release --example filter -- [q_weight] [seed]`

use fadmm::filters::{self, FilterState};
use fadmm::sim::{simulate_path, Strategy};
use fadmm::solvers::DEFAULT_N_GRID;
use fadmm::ModelParams;

fn main() -> fadmm::Result<()> {
    let mut args = std::env::args().skip(1);
    let q_weight: f64 = args.next().map_or(0.6, |a| a.parse().expect("q_weight"));
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let p = ModelParams::baseline().with_q_weight(q_weight).recalibrated(30.0)?;
    let n_steps = 1000;
    let dt = p.horizon / n_steps as f64;

    let v = filters::solve_variance_curve(&p, DEFAULT_N_GRID)?;
    println!(
        "conditional variance: P(T) = {:.5}, stationary {:.5}, unconditional {:.5}",
        v.value(p.horizon)?,
        filters::stationary_variance(p.q_weight, p.p_weight, p.eta),
        1.0 / (2.0 * p.eta)
    );

    // the simulator records the filter alongside the true fad
    let path = simulate_path(&p, &Strategy::pi(&p, DEFAULT_N_GRID)?, n_steps, seed, 0)?;
    let u_hat = path.u_hat.as_ref().expect("filtered strategy");
    let rmse = |xs: &[f64]| {
        (xs.iter().zip(&path.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    println!("rmse of U_hat against U: {:.4} (zero guess: {:.4})", rmse(u_hat), rmse(&vec![0.0; u_hat.len()]));

    // re-run the filter step by step and against a particle filter
    let mut state = FilterState::initial();
    let mut kalman = vec![0.0];
    for w in path.s.windows(2) {
        state = filters::kalman_step(state, w[1] - w[0], dt, &p, &v)?;
        kalman.push(state.u_hat);
    }
    let pf = filters::particle_filter_oracle(&path.s, dt, &p, 2000, seed)?;
    let gap = kalman.iter().zip(&pf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |Kalman - particle filter| = {gap:.4} with 2000 particles");
    for n in (0..=n_steps).step_by(200) {
        println!("t {:.1}: U {:+.4}  U_hat {:+.4}  particle {:+.4}", path.times[n], path.u[n], kalman[n], pf[n]);
    }
    Ok(())
}
