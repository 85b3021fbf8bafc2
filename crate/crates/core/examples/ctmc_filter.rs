//! Filtering a finite-state fad from order arrivals alone.
//!
//! Usage: `cargo run --release --example ctmc_filter -- [seed]`

use fadmm::filters::{self, CtmcFilter};
use fadmm::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fadmm::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(3, |a| a.parse().expect("seed"));
    // a strong fad channel makes the arrivals informative
    let mut p = ModelParams::baseline().with_q_weight(1.0);
    p.gamma = 5.0;
    let p = p.recalibrated(30.0)?;
    let states = vec![-0.3, 0.3];
    let generator = vec![vec![-2.0, 2.0], vec![2.0, -2.0]];
    let mut f = CtmcFilter::new(&p, states.clone(), generator, vec![1.0, 1.0])?;
    println!("ask rates per state {:?}, bid rates {:?}", f.lambda_a, f.lambda_b);

    let n = 10_000;
    let dt = p.horizon / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = 0usize;
    let mut hits = 0usize;
    for i in 1..=n {
        let dm_a = rng.random::<f64>() < f.lambda_a[state] * dt;
        let dm_b = rng.random::<f64>() < f.lambda_b[state] * dt;
        f = filters::ctmc_filter_step(&f, dt, dm_a, dm_b)?;
        if rng.random::<f64>() < 2.0 * dt {
            state = 1 - state;
        }
        let post = filters::ctmc_posteriors(&f);
        let guess = usize::from(post.pi[1] > 0.5);
        hits += usize::from(guess == state);
        if i % 1000 == 0 {
            println!(
                "t {:.1}: true {:+.1}, P(high) {:.3}, u_hat {:+.3}, ask/bid rate {:.2}/{:.2}",
                i as f64 * dt,
                states[state],
                post.pi[1],
                post.u_hat,
                post.lambda_hat_a,
                post.lambda_hat_b
            );
        }
    }
    println!("state classified correctly {:.1}% of steps", 100.0 * hits as f64 / n as f64);
    Ok(())
}
