//! Estimating the fad.
//!
//! [`kalman_step`] is the Kalman-Bucy filter of the fad from mid-price
//! increments; its conditional variance is deterministic and solved once by
//! [`solve_variance_curve`]. [`particle_filter_oracle`] is an independent
//! bootstrap filter for the same posterior. [`CtmcFilter`] is the filter of a
//! finite-state fad from market-order arrivals.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{domain, numeric, Error, Result};
use crate::model::ModelParams;
use crate::numerics;
use crate::solvers::VarianceCurve;

/// Posterior mean and variance of the fad at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub u_hat: f64,
    pub p_hat: f64,
}

impl FilterState {
    /// The fad starts at zero and is known to do so.
    pub fn initial() -> Self {
        Self {
            t: 0.0,
            u_hat: 0.0,
            p_hat: 0.0,
        }
    }
}

/// Right-hand side of the variance Riccati equation,
/// `-η² q² P² - P (2η - 2η q²) + p²`.
pub fn variance_rhs(p_hat: f64, q: f64, p: f64, eta: f64) -> f64 {
    -eta * eta * q * q * p_hat * p_hat - p_hat * (2.0 * eta - 2.0 * eta * q * q) + p * p
}

/// The same right-hand side before simplification with `p² + q² = 1`:
/// `-2ηP (1 + q x) + (1 + x q)² + (x p)²` with `x = P η q - q`.
pub fn variance_rhs_expanded(p_hat: f64, q: f64, p: f64, eta: f64) -> f64 {
    let x = p_hat * eta * q - q;
    -2.0 * eta * p_hat * (1.0 + q * x) + (1.0 + x * q).powi(2) + (x * p).powi(2)
}

/// Stationary conditional variance, the nonnegative root of the Riccati
/// right-hand side (for `q > 0`).
pub fn stationary_variance(q: f64, p: f64, eta: f64) -> f64 {
    if q == 0.0 {
        return 1.0 / (2.0 * eta);
    }
    p * (1.0 - p) / (eta * q * q)
}

/// Solves the variance Riccati equation forward from `P̂(0) = 0` on a uniform
/// grid, checking the expanded form of the right-hand side at every node.
pub fn solve_variance_curve(p: &ModelParams, n_grid: usize) -> Result<VarianceCurve> {
    if n_grid < 2 {
        return domain(format!("n_grid = {n_grid}, need at least 2"));
    }
    let (q, pw, eta) = (p.q_weight, p.p_weight, p.eta);
    let grid = numerics::uniform_grid(p.horizon, n_grid);
    let ys = numerics::rk4_forward(&grid, [0.0], |_, y| [variance_rhs(y[0], q, pw, eta)])?;
    let mut p_hat = Vec::with_capacity(n_grid);
    let mut dp_hat = Vec::with_capacity(n_grid);
    for (i, y) in ys.iter().enumerate() {
        let v = y[0].max(0.0);
        let d = variance_rhs(v, q, pw, eta);
        let d2 = variance_rhs_expanded(v, q, pw, eta);
        if (d - d2).abs() > 1e-10 * (1.0 + d.abs()) {
            return numeric(format!(
                "variance Riccati forms disagree at node {i}: {d} vs {d2}"
            ));
        }
        p_hat.push(v);
        dp_hat.push(d);
    }
    Ok(VarianceCurve {
        time_grid: grid,
        p_hat,
        dp_hat,
    })
}

/// One Euler step of the Kalman-Bucy filter given the mid-price increment `ds`
/// over `[t, t + dt]`.
pub fn kalman_step(
    state: FilterState,
    ds: f64,
    dt: f64,
    p: &ModelParams,
    variance: &VarianceCurve,
) -> Result<FilterState> {
    if !(dt > 0.0) {
        return domain(format!("dt = {dt} must be positive"));
    }
    let u_hat = kalman_update(state.u_hat, state.p_hat, ds, dt, p);
    Ok(FilterState {
        t: state.t + dt,
        u_hat,
        p_hat: variance.value(state.t + dt)?,
    })
}

/// Posterior-mean update shared with the simulator.
#[inline]
pub(crate) fn kalman_update(u_hat: f64, p_hat: f64, ds: f64, dt: f64, p: &ModelParams) -> f64 {
    let innovation = ds - (p.mu - p.eta * p.fad_scale() * u_hat) * dt;
    let gain = (p.q_weight - p.eta * p.q_weight * p_hat) / p.sigma;
    u_hat - p.eta * u_hat * dt + gain * innovation
}

/// `E[exp(a U_t) | prices]` under the Gaussian posterior `N(u_hat, p_hat)`.
pub fn posterior_exp_moment(a: f64, state: &FilterState) -> f64 {
    (a * state.u_hat + 0.5 * a * a * state.p_hat).exp()
}

/// Bootstrap particle filter of the fad on the Euler-discretised model.
///
/// `prices` holds the mid-price at `0, dt, 2dt, ...`; the result holds the
/// posterior mean at the same times.
pub fn particle_filter_oracle(
    prices: &[f64],
    dt: f64,
    p: &ModelParams,
    n_particles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_particles < 100 {
        return domain(format!("n_particles = {n_particles}, need at least 100"));
    }
    if !(dt > 0.0) {
        return domain(format!("dt = {dt} must be positive"));
    }
    let obs_sd = p.sigma * p.p_weight * dt.sqrt();
    if obs_sd == 0.0 {
        return domain("particle filter needs a nonzero martingale loading");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sq = p.fad_scale();
    let sqrt_dt = dt.sqrt();
    let mut particles = vec![0.0; n_particles];
    let mut next = vec![0.0; n_particles];
    let mut log_w = vec![0.0; n_particles];
    let mut means = Vec::with_capacity(prices.len());
    means.push(0.0);
    for (step, w) in prices.windows(2).enumerate() {
        let ds = w[1] - w[0];
        for (i, u) in particles.iter().enumerate() {
            let db: f64 = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            let mean = (p.mu - sq * p.eta * u) * dt + sq * db;
            let z = (ds - mean) / obs_sd;
            log_w[i] = -0.5 * z * z;
            next[i] = u - p.eta * u * dt + db;
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return numeric(format!("particle weights degenerate at step {step}"));
        }
        let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total = numerics::pairwise_sum(&weights);
        if !(total > 0.0) || !total.is_finite() {
            return numeric(format!("particle weights degenerate at step {step}"));
        }
        let weighted: Vec<f64> = weights.iter().zip(&next).map(|(w, u)| w * u).collect();
        means.push(numerics::pairwise_sum(&weighted) / total);
        systematic_resample(&weights, total, &next, &mut particles, rng.random());
    }
    Ok(means)
}

fn systematic_resample(weights: &[f64], total: f64, from: &[f64], to: &mut [f64], offset: f64) {
    let n = to.len();
    let step = total / n as f64;
    let mut target = offset * step;
    let mut cumulative = weights[0];
    let mut j = 0;
    for slot in to.iter_mut() {
        while cumulative < target && j + 1 < weights.len() {
            j += 1;
            cumulative += weights[j];
        }
        *slot = from[j];
        target += step;
    }
}

/// One row of a filter-path export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterPathRow {
    pub t: f64,
    pub u_true: f64,
    pub u_hat: f64,
    pub p_hat: f64,
}

/// Writes `t,u_true,u_hat,p_hat`.
pub fn write_filter_csv<W: Write>(out: W, rows: &[FilterPathRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Filter of a fad taking finitely many levels, driven by market-order
/// arrivals on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcFilter {
    pub states: Vec<f64>,
    /// Row-major `J x J` generator; rows sum to zero.
    pub generator: Vec<Vec<f64>>,
    /// Unnormalised posterior weights.
    pub delta: Vec<f64>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
}

impl CtmcFilter {
    /// Builds the filter with arrival rates
    /// `λa_j = φ + ψ exp(-γ max(q σ θ_j, S⁻))`, `λb_j = φ + ψ exp(γ min(q σ θ_j, S⁺))`.
    pub fn new(
        p: &ModelParams,
        states: Vec<f64>,
        generator: Vec<Vec<f64>>,
        prior: Vec<f64>,
    ) -> Result<Self> {
        let lambda_a = states
            .iter()
            .map(|&th| p.phi_uninformed + p.informed_ask_factor(th))
            .collect();
        let lambda_b = states
            .iter()
            .map(|&th| p.phi_uninformed + p.informed_bid_factor(th))
            .collect();
        Self::with_rates(states, generator, prior, lambda_a, lambda_b)
    }

    /// Builds the filter from explicit per-state arrival rates.
    pub fn with_rates(
        states: Vec<f64>,
        generator: Vec<Vec<f64>>,
        prior: Vec<f64>,
        lambda_a: Vec<f64>,
        lambda_b: Vec<f64>,
    ) -> Result<Self> {
        let j = states.len();
        if j == 0 {
            return domain("CTMC filter needs at least one state");
        }
        if generator.len() != j || generator.iter().any(|r| r.len() != j) {
            return domain(format!("generator must be {j} x {j}"));
        }
        if prior.len() != j || lambda_a.len() != j || lambda_b.len() != j {
            return domain("prior and rate vectors must have one entry per state");
        }
        for (r, row) in generator.iter().enumerate() {
            let scale: f64 = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if row.iter().sum::<f64>().abs() > 1e-12 * scale {
                return domain(format!("generator row {r} does not sum to zero"));
            }
            if row.iter().enumerate().any(|(c, &v)| c != r && v < 0.0) {
                return domain(format!("generator row {r} has a negative off-diagonal rate"));
            }
        }
        if prior.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return domain("prior weights must be positive");
        }
        if lambda_a.iter().chain(&lambda_b).any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return domain("arrival rates must be finite and nonnegative");
        }
        let mut f = Self {
            states,
            generator,
            delta: prior,
            lambda_a,
            lambda_b,
        };
        normalize(&mut f.delta);
        Ok(f)
    }
}

fn normalize(delta: &mut [f64]) {
    let total = numerics::pairwise_sum(delta);
    for d in delta.iter_mut() {
        *d /= total;
    }
}

/// Advances the weights over `dt` given whether an ask (`dm_a`) and a bid
/// (`dm_b`) market order arrived during the step.
///
/// The likelihood enters multiplicatively, `exp(-(λa - 1 + λb - 1) dt) λa^{dMa}
/// λb^{dMb}`, followed by the generator mixing and a renormalisation.
pub fn ctmc_filter_step(f: &CtmcFilter, dt: f64, dm_a: bool, dm_b: bool) -> Result<CtmcFilter> {
    if !(dt > 0.0) {
        return domain(format!("dt = {dt} must be positive"));
    }
    let j = f.states.len();
    let mut next = vec![0.0; j];
    for (col, out) in next.iter_mut().enumerate() {
        let (la, lb) = (f.lambda_a[col], f.lambda_b[col]);
        let mut w = f.delta[col] * (-(la - 1.0 + lb - 1.0) * dt).exp();
        if dm_a {
            w *= la;
        }
        if dm_b {
            w *= lb;
        }
        let mix: Vec<f64> = (0..j).map(|i| f.delta[i] * f.generator[i][col]).collect();
        *out = w + dt * numerics::pairwise_sum(&mix);
    }
    if let Some(i) = next.iter().position(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::Numeric(format!(
            "CTMC weight {i} became {} after a step of {dt}; use a smaller dt",
            next[i]
        )));
    }
    normalize(&mut next);
    Ok(CtmcFilter {
        delta: next,
        ..f.clone()
    })
}

/// Posterior summaries of a [`CtmcFilter`].
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPosterior {
    pub pi: Vec<f64>,
    pub u_hat: f64,
    pub lambda_hat_a: f64,
    pub lambda_hat_b: f64,
}

pub fn ctmc_posteriors(f: &CtmcFilter) -> CtmcPosterior {
    let total = numerics::pairwise_sum(&f.delta);
    let pi: Vec<f64> = f.delta.iter().map(|d| d / total).collect();
    let dot = |xs: &[f64]| {
        let terms: Vec<f64> = xs.iter().zip(&pi).map(|(x, p)| x * p).collect();
        numerics::pairwise_sum(&terms)
    };
    CtmcPosterior {
        u_hat: dot(&f.states),
        lambda_hat_a: dot(&f.lambda_a),
        lambda_hat_b: dot(&f.lambda_b),
        pi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_curve_vanishes_when_prices_reveal_the_fad() {
        let p = ModelParams::baseline().with_q_weight(1.0);
        let v = solve_variance_curve(&p, 101).unwrap();
        assert!(v.p_hat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn variance_curve_is_unconditional_without_fad_loading() {
        let p = ModelParams::baseline().with_q_weight(0.0);
        let v = solve_variance_curve(&p, 2001).unwrap();
        for (t, ph) in v.time_grid.iter().zip(&v.p_hat) {
            let exact = (1.0 - (-2.0 * p.eta * t).exp()) / (2.0 * p.eta);
            assert!((ph - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_curve_rises_to_its_stationary_level() {
        let p = ModelParams::baseline();
        let v = solve_variance_curve(&p, 2001).unwrap();
        assert!(v.p_hat.windows(2).all(|w| w[1] >= w[0]));
        let star = stationary_variance(p.q_weight, p.p_weight, p.eta);
        assert!(variance_rhs(star, p.q_weight, p.p_weight, p.eta).abs() < 1e-12);
        assert!((v.p_hat.last().unwrap() - star).abs() < 1e-6);
        for (t, ph) in v.time_grid.iter().zip(&v.p_hat) {
            assert!(*ph <= (1.0 - (-2.0 * p.eta * t).exp()) / (2.0 * p.eta) + 1e-9);
        }
    }

    #[test]
    fn variance_hermite_interpolation_is_accurate() {
        let p = ModelParams::baseline();
        let coarse = solve_variance_curve(&p, 201).unwrap();
        let fine = solve_variance_curve(&p, 4001).unwrap();
        for i in 0..200 {
            let t = (i as f64 + 0.37) / 200.0;
            let gap = coarse.value(t).unwrap() - fine.value(t).unwrap();
            assert!(gap.abs() < 1e-7, "t = {t}, gap = {gap}");
        }
    }

    #[test]
    fn zero_innovation_keeps_zero_estimate() {
        let p = ModelParams::baseline();
        let v = solve_variance_curve(&p, 101).unwrap();
        let s = kalman_step(FilterState::initial(), p.mu * 0.01, 0.01, &p, &v).unwrap();
        assert_eq!(s.u_hat, 0.0);
        assert_eq!(s.p_hat, v.value(0.01).unwrap());
    }

    #[test]
    fn filter_ignores_prices_without_fad_loading() {
        let p = ModelParams::baseline().with_q_weight(0.0);
        let v = solve_variance_curve(&p, 101).unwrap();
        let st = FilterState {
            t: 0.2,
            u_hat: 0.7,
            p_hat: v.value(0.2).unwrap(),
        };
        let s = kalman_step(st, 3.0, 0.01, &p, &v).unwrap();
        assert!((s.u_hat - 0.7 * (1.0 - p.eta * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn kalman_step_rejects_nonpositive_dt() {
        let p = ModelParams::baseline();
        let v = solve_variance_curve(&p, 11).unwrap();
        assert!(matches!(
            kalman_step(FilterState::initial(), 0.0, 0.0, &p, &v),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kalman_mean_is_linear_in_innovations() {
        let p = ModelParams::baseline();
        let v = solve_variance_curve(&p, 1001).unwrap();
        let dt = 1e-3;
        let incs: Vec<f64> = (0..500).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.01).collect();
        let run = |scale: f64| {
            let mut s = FilterState::initial();
            for &d in &incs {
                s = kalman_step(s, scale * d, dt, &p, &v).unwrap();
            }
            s.u_hat
        };
        assert!((run(2.0) - 2.0 * run(1.0)).abs() < 1e-12);
    }

    #[test]
    fn particle_filter_is_deterministic_and_flat_without_loading() {
        let p = ModelParams::baseline().with_q_weight(0.0);
        let prices: Vec<f64> = (0..200).map(|i| 100.0 + (i as f64 * 0.1).sin()).collect();
        let a = particle_filter_oracle(&prices, 1e-3, &p, 500, 3).unwrap();
        let b = particle_filter_oracle(&prices, 1e-3, &p, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| m.abs() < 0.1));
    }

    fn two_state(p: &ModelParams) -> CtmcFilter {
        CtmcFilter::new(
            p,
            vec![-0.3, 0.3],
            vec![vec![-2.0, 2.0], vec![2.0, -2.0]],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn single_state_posterior_is_trivial() {
        let p = ModelParams::baseline();
        let mut f = CtmcFilter::new(&p, vec![0.4], vec![vec![0.0]], vec![3.0]).unwrap();
        for i in 0..100 {
            f = ctmc_filter_step(&f, 1e-3, i % 7 == 0, i % 5 == 0).unwrap();
            assert_eq!(ctmc_posteriors(&f).pi, vec![1.0]);
        }
    }

    #[test]
    fn uninformative_arrivals_keep_the_prior() {
        let mut f = CtmcFilter::with_rates(
            vec![-1.0, 0.0, 1.0],
            vec![vec![0.0; 3]; 3],
            vec![0.2, 0.3, 0.5],
            vec![12.0; 3],
            vec![9.0; 3],
        )
        .unwrap();
        for i in 0..500 {
            f = ctmc_filter_step(&f, 1e-3, i % 13 == 0, i % 17 == 0).unwrap();
        }
        let pi = ctmc_posteriors(&f).pi;
        for (a, b) in pi.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_summaries() {
        let p = ModelParams::baseline();
        let f = two_state(&p);
        let post = ctmc_posteriors(&f);
        assert_eq!(post.u_hat, 0.0);
        let lo = f.lambda_a.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.lambda_a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(post.lambda_hat_a >= lo && post.lambda_hat_a <= hi);
        let degenerate = CtmcFilter {
            delta: vec![0.0, 1.0],
            ..f.clone()
        };
        assert_eq!(ctmc_posteriors(&degenerate).lambda_hat_a, f.lambda_a[1]);
    }

    #[test]
    fn ask_arrivals_favour_low_fad_states() {
        // ask flow is heavier when the fad is negative (asks look cheap)
        let p = ModelParams::baseline();
        let mut f = two_state(&p);
        for _ in 0..20 {
            f = ctmc_filter_step(&f, 1e-3, true, false).unwrap();
        }
        assert!(ctmc_posteriors(&f).u_hat < 0.0);
    }

    #[test]
    fn generator_validation() {
        let p = ModelParams::baseline();
        let bad = CtmcFilter::new(&p, vec![0.0, 1.0], vec![vec![-1.0, 2.0], vec![1.0, -1.0]], vec![1.0, 1.0]);
        assert!(bad.is_err());
    }

    #[test]
    fn filter_csv_has_documented_header() {
        let mut buf = Vec::new();
        write_filter_csv(
            &mut buf,
            &[FilterPathRow {
                t: 0.0,
                u_true: 0.0,
                u_hat: 0.0,
                p_hat: 0.0,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,u_true,u_hat,p_hat\n"));
    }
}
