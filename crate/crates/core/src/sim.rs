//! Path simulation and Monte Carlo.
//!
//! All strategies passed to [`monte_carlo`] trade on the same simulated market:
//! per path they share the fad and price noise and the fill uniforms, so their
//! performance differences are paired. Each path draws from its own
//! ChaCha8 streams keyed by `(seed, path index, channel)`, so results do not
//! depend on the number of worker threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::filters;
use crate::model::{self, Mark, ModelParams, Quote};
use crate::numerics;
use crate::solvers::{self, CoefRow, StrategyCoefficients, StrategyKind, VarianceCurve};

/// What the strategy observes when quoting.
#[derive(Debug, Clone)]
pub enum Information {
    /// The fad itself.
    Fad,
    /// The Kalman-Bucy filter of the fad from prices.
    Filtered(Arc<VarianceCurve>),
    /// Neither fad nor filter.
    Blind,
}

#[derive(Debug, Clone)]
pub enum QuoteRule {
    ClosedForm(Arc<StrategyCoefficients>),
    Constant { delta_a: f64, delta_b: f64 },
}

/// A quoting strategy together with the model it believes in.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub label: String,
    pub rule: QuoteRule,
    pub info: Information,
    /// Parameters the strategy uses for floors, inventory bounds and filtering.
    pub believed: ModelParams,
}

impl Strategy {
    pub fn fi(p: &ModelParams, n_grid: usize) -> Result<Self> {
        Self::fi_marked(p, n_grid, Mark::Mid)
    }

    pub fn fi_marked(p: &ModelParams, n_grid: usize, mark: Mark) -> Result<Self> {
        let c = solvers::solve_fi_coefficients_marked(p, n_grid, mark)?;
        Ok(Self {
            label: "FI".into(),
            rule: QuoteRule::ClosedForm(Arc::new(c)),
            info: Information::Fad,
            believed: p.clone(),
        })
    }

    pub fn pi(p: &ModelParams, n_grid: usize) -> Result<Self> {
        Self::pi_marked(p, n_grid, Mark::Mid)
    }

    pub fn pi_marked(p: &ModelParams, n_grid: usize, mark: Mark) -> Result<Self> {
        let v = filters::solve_variance_curve(p, n_grid)?;
        let c = solvers::solve_pi_coefficients_marked(p, &v, n_grid, mark)?;
        Ok(Self {
            label: "PI".into(),
            rule: QuoteRule::ClosedForm(Arc::new(c)),
            info: Information::Filtered(Arc::new(v)),
            believed: p.clone(),
        })
    }

    pub fn cjp(p: &ModelParams, n_grid: usize) -> Result<Self> {
        let c = solvers::solve_cjp_coefficients(p, n_grid)?;
        Ok(Self {
            label: "CJP".into(),
            rule: QuoteRule::ClosedForm(Arc::new(c)),
            info: Information::Blind,
            believed: p.clone(),
        })
    }

    /// The three strategies compared throughout: full information, partial
    /// information and fad-blind.
    pub fn standard_trio(p: &ModelParams, n_grid: usize, mark: Mark) -> Result<Vec<Self>> {
        Ok(vec![
            Self::fi_marked(p, n_grid, mark)?,
            Self::cjp(p, n_grid)?,
            Self::pi_marked(p, n_grid, mark)?,
        ])
    }

    /// Fixed displacements on both sides.
    pub fn constant(p: &ModelParams, delta_a: f64, delta_b: f64) -> Result<Self> {
        if delta_a < p.delta_floor_ask || delta_b < p.delta_floor_bid {
            return Err(Error::Config("constant displacements below the floors".into()));
        }
        Ok(Self {
            label: format!("const({delta_a},{delta_b})"),
            rule: QuoteRule::Constant { delta_a, delta_b },
            info: Information::Blind,
            believed: p.clone(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn check_against(&self, p: &ModelParams) -> Result<()> {
        if let QuoteRule::ClosedForm(c) = &self.rule {
            if (c.horizon() - p.horizon).abs() > 1e-12 * p.horizon {
                return Err(Error::Config(format!(
                    "strategy {} solved on horizon {}, market horizon is {}",
                    self.label,
                    c.horizon(),
                    p.horizon
                )));
            }
            let expected = match self.info {
                Information::Fad => StrategyKind::Fi,
                Information::Filtered(_) => StrategyKind::Pi,
                Information::Blind => StrategyKind::Cjp,
            };
            if c.kind != expected {
                return Err(Error::Config(format!(
                    "strategy {}: {:?} coefficients with {:?} information",
                    self.label, c.kind, self.info
                )));
            }
        }
        if let Information::Filtered(v) = &self.info {
            if (v.horizon() - p.horizon).abs() > 1e-12 * p.horizon {
                return Err(Error::Config("variance curve does not cover the horizon".into()));
            }
        }
        if self.believed.q_min != p.q_min || self.believed.q_max != p.q_max {
            return Err(Error::Config(format!(
                "strategy {} assumes inventory bounds different from the market's",
                self.label
            )));
        }
        Ok(())
    }
}

/// Full-information strategy solved under `p_believed`, to be run in a market
/// governed by `p_true`.
pub fn misspecified_quote_source(p_true: &ModelParams, p_believed: &ModelParams) -> Result<Strategy> {
    p_true.validate()?;
    Ok(Strategy::fi(p_believed, solvers::DEFAULT_N_GRID)?.with_label("FI-misspecified"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ask,
    Bid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FillEvent {
    pub t: f64,
    pub side: Side,
    pub displacement: f64,
    pub price: f64,
    pub informed: bool,
}

/// One simulated trajectory. `q[n]` and `x[n]` are the inventory and cash
/// after the trades of step `n`, held on `[t_n, t_{n+1})`; the last entry is
/// the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<i64>,
    pub x: Vec<f64>,
    pub fills: Vec<FillEvent>,
    /// Filtered fad when the strategy quotes from the filter.
    pub u_hat: Option<Vec<f64>>,
    pub q0: i64,
    pub x0: f64,
    pub seed: u64,
    pub path_index: u64,
}

impl PathRecord {
    pub(crate) fn check_complete(&self, horizon: f64) -> Result<()> {
        let n = self.times.len();
        let complete = n >= 2
            && [self.u.len(), self.s.len(), self.q.len(), self.x.len()]
                .iter()
                .all(|&l| l == n)
            && (self.times[n - 1] - horizon).abs() <= 1e-9 * horizon.max(1.0);
        if complete {
            Ok(())
        } else {
            Err(Error::State("path does not reach the horizon".into()))
        }
    }

    /// Replays the fills from `(q0, x0)` and returns terminal `(Q, X)`.
    pub fn replay_fills(&self) -> (i64, f64) {
        let mut q = self.q0;
        let mut x = self.x0;
        for f in &self.fills {
            match f.side {
                Side::Ask => {
                    q -= 1;
                    x += f.price;
                }
                Side::Bid => {
                    q += 1;
                    x -= f.price;
                }
            }
        }
        (q, x)
    }
}

/// Performance summary across paths for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McStats {
    pub label: String,
    pub n_paths: usize,
    pub mean: f64,
    pub stdev: Option<f64>,
    pub se: Option<f64>,
    pub mean_fills_ask: f64,
    pub mean_fills_bid: f64,
    pub mean_informed_fills: f64,
    pub mean_uninformed_fills: f64,
    /// Fraction of steps that started at an inventory bound.
    pub bound_hit_rate: f64,
    /// Number of steps where `λ dt` exceeded one and the fill probability was clamped.
    pub clamp_count: u64,
}

/// Mean, deviation and standard error of per-path differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedStats {
    pub mean: f64,
    pub stdev: Option<f64>,
    pub se: Option<f64>,
}

impl PairedStats {
    /// `mean / se`, when defined.
    pub fn t_stat(&self) -> Option<f64> {
        self.se.filter(|&s| s > 0.0).map(|s| self.mean / s)
    }
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> PairedStats {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, stdev) = numerics::mean_and_stdev(&d);
    PairedStats {
        mean,
        stdev,
        se: stdev.map(|s| s / (d.len() as f64).sqrt()),
    }
}

/// Output of [`monte_carlo`]: summary per strategy and the per-path
/// performances (same path order for every strategy).
#[derive(Debug, Clone)]
pub struct McResult {
    pub stats: Vec<McStats>,
    pub performance: Vec<Vec<f64>>,
}

impl McResult {
    pub fn paired(&self, i: usize, j: usize) -> PairedStats {
        paired_difference(&self.performance[i], &self.performance[j])
    }
}

/// Per-path summary of one strategy.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PathOutcome {
    pub perf_mid: f64,
    pub perf_fundamental: f64,
    pub fills_ask: u32,
    pub fills_bid: u32,
    pub informed: u32,
    pub uninformed: u32,
    pub bound_steps: u32,
    pub clamps: u32,
}

impl PathOutcome {
    pub fn performance(&self, mark: Mark) -> f64 {
        match mark {
            Mark::Mid => self.perf_mid,
            Mark::Fundamental => self.perf_fundamental,
        }
    }
}

/// Strategy with its coefficients evaluated on the simulation grid.
struct Prepared<'a> {
    strategy: &'a Strategy,
    rows: Vec<CoefRow>,
    p_hat: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(strategy: &'a Strategy, times: &[f64]) -> Result<Self> {
        let rows = match &strategy.rule {
            QuoteRule::ClosedForm(c) => times.iter().map(|&t| c.at(t)).collect::<Result<_>>()?,
            QuoteRule::Constant { .. } => vec![],
        };
        let p_hat = match &strategy.info {
            Information::Filtered(v) => times.iter().map(|&t| v.value(t)).collect::<Result<_>>()?,
            _ => vec![],
        };
        Ok(Self {
            strategy,
            rows,
            p_hat,
        })
    }

    #[inline]
    fn quote(&self, step: usize, q: i64, signal: f64) -> Quote {
        let b = &self.strategy.believed;
        match self.strategy.rule {
            QuoteRule::ClosedForm(_) => solvers::quote_from_row(&self.rows[step], b, q, signal),
            QuoteRule::Constant { delta_a, delta_b } => Quote {
                delta_a,
                delta_b,
                ask_active: q > b.q_min,
                bid_active: q < b.q_max,
            },
        }
    }
}

/// Mutable per-strategy state along one path.
#[derive(Clone)]
struct Book {
    q: i64,
    x: f64,
    u_hat: f64,
    sum_q2: i64,
    out: PathOutcome,
}

/// Random streams of one path: Gaussians on one channel, fill uniforms on
/// another.
fn path_rngs(seed: u64, path: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut gauss = ChaCha8Rng::seed_from_u64(seed);
    gauss.set_stream(2 * path);
    let mut unif = ChaCha8Rng::seed_from_u64(seed);
    unif.set_stream(2 * path + 1);
    (gauss, unif)
}

/// Simulates one path for every strategy in lockstep. When `record` is set,
/// returns a full [`PathRecord`] per strategy.
fn simulate_lockstep(
    p: &ModelParams,
    prepared: &[Prepared],
    times: &[f64],
    seed: u64,
    path: u64,
    record: bool,
) -> (Vec<PathOutcome>, Vec<PathRecord>) {
    let n_steps = times.len() - 1;
    let dt = p.horizon / n_steps as f64;
    let decay = (-p.eta * dt).exp();
    let ou_sd = ((1.0 - (-2.0 * p.eta * dt).exp()) / (2.0 * p.eta)).sqrt();
    let sqrt_dt = dt.sqrt();
    let (mut gauss, mut unif) = path_rngs(seed, path);

    let mut books = vec![
        Book {
            q: p.q0,
            x: p.x0,
            u_hat: 0.0,
            sum_q2: 0,
            out: PathOutcome::default(),
        };
        prepared.len()
    ];
    let mut records: Vec<PathRecord> = if record {
        prepared
            .iter()
            .map(|pr| PathRecord {
                times: times.to_vec(),
                u: Vec::with_capacity(n_steps + 1),
                s: Vec::with_capacity(n_steps + 1),
                q: Vec::with_capacity(n_steps + 1),
                x: Vec::with_capacity(n_steps + 1),
                fills: vec![],
                u_hat: matches!(pr.strategy.info, Information::Filtered(_))
                    .then(|| Vec::with_capacity(n_steps + 1)),
                q0: p.q0,
                x0: p.x0,
                seed,
                path_index: path,
            })
            .collect()
    } else {
        vec![]
    };

    let (mut u, mut z) = (0.0f64, 0.0f64);
    let mut s = p.s0;
    for n in 0..n_steps {
        let t = times[n];
        let fa = p.informed_ask_factor(u);
        let fb = p.informed_bid_factor(u);
        let ua: f64 = unif.random();
        let ub: f64 = unif.random();
        for (k, (pr, book)) in prepared.iter().zip(books.iter_mut()).enumerate() {
            let signal = match pr.strategy.info {
                Information::Fad => u,
                Information::Filtered(_) => book.u_hat,
                Information::Blind => 0.0,
            };
            if record {
                let r = &mut records[k];
                r.u.push(u);
                r.s.push(s);
                if let Some(h) = r.u_hat.as_mut() {
                    h.push(book.u_hat);
                }
            }
            if book.q <= p.q_min || book.q >= p.q_max {
                book.out.bound_steps += 1;
            }
            let quote = pr.quote(n, book.q, signal);
            let mut dq = 0;
            if quote.ask_active && book.q > p.q_min {
                let e = (-p.k_decay * quote.delta_a).exp();
                if let Some(informed) =
                    fill(p.phi_uninformed * e, fa * e, dt, ua, &mut book.out.clamps)
                {
                    let price = s + quote.delta_a;
                    book.x += price;
                    dq -= 1;
                    book.out.fills_ask += 1;
                    tally(&mut book.out, informed);
                    if record {
                        records[k].fills.push(FillEvent {
                            t,
                            side: Side::Ask,
                            displacement: quote.delta_a,
                            price,
                            informed,
                        });
                    }
                }
            }
            if quote.bid_active && book.q < p.q_max {
                let e = (-p.k_decay * quote.delta_b).exp();
                if let Some(informed) =
                    fill(p.phi_uninformed * e, fb * e, dt, ub, &mut book.out.clamps)
                {
                    let price = s - quote.delta_b;
                    book.x -= price;
                    dq += 1;
                    book.out.fills_bid += 1;
                    tally(&mut book.out, informed);
                    if record {
                        records[k].fills.push(FillEvent {
                            t,
                            side: Side::Bid,
                            displacement: quote.delta_b,
                            price,
                            informed,
                        });
                    }
                }
            }
            book.q += dq;
            book.sum_q2 += book.q * book.q;
            if record {
                records[k].q.push(book.q);
                records[k].x.push(book.x);
            }
        }

        let zeta_u: f64 = gauss.sample(StandardNormal);
        let zeta_z: f64 = gauss.sample(StandardNormal);
        u = u * decay + ou_sd * zeta_u;
        z += sqrt_dt * zeta_z;
        let s_next = p.s0 + p.mu * times[n + 1] + p.sigma * (p.p_weight * z + p.q_weight * u);
        for (pr, book) in prepared.iter().zip(books.iter_mut()) {
            if let Information::Filtered(_) = pr.strategy.info {
                book.u_hat =
                    filters::kalman_update(book.u_hat, pr.p_hat[n], s_next - s, dt, &pr.strategy.believed);
            }
        }
        s = s_next;
    }

    let outcomes = books
        .iter_mut()
        .enumerate()
        .map(|(k, book)| {
            let int_q2 = book.sum_q2 as f64 * dt;
            let mut o = book.out;
            o.perf_mid = model::payoff(p, book.x, book.q, s, u, int_q2, Mark::Mid);
            o.perf_fundamental = model::payoff(p, book.x, book.q, s, u, int_q2, Mark::Fundamental);
            if record {
                let r = &mut records[k];
                r.u.push(u);
                r.s.push(s);
                if let Some(h) = r.u_hat.as_mut() {
                    h.push(book.u_hat);
                }
            }
            o
        })
        .collect();
    for (r, book) in records.iter_mut().zip(&books) {
        r.q.push(book.q);
        r.x.push(book.x);
    }
    (outcomes, records)
}

/// Bernoulli fill with probability `min((λu + λi) dt, 1)`. The same uniform
/// decides whether the fill came from an uninformed (`u < λu dt`) or informed
/// trader. Returns `Some(informed)` on a fill.
#[inline]
fn fill(lambda_u: f64, lambda_i: f64, dt: f64, uniform: f64, clamps: &mut u32) -> Option<bool> {
    let prob = (lambda_u + lambda_i) * dt;
    if prob > 1.0 {
        *clamps += 1;
    }
    (uniform < prob).then(|| uniform >= lambda_u * dt)
}

#[inline]
fn tally(out: &mut PathOutcome, informed: bool) {
    if informed {
        out.informed += 1;
    } else {
        out.uninformed += 1;
    }
}

fn check_inputs(p: &ModelParams, strategies: &[Strategy], n_steps: usize) -> Result<()> {
    p.validate()?;
    if n_steps < 1 {
        return domain("n_steps must be at least 1");
    }
    for s in strategies {
        s.check_against(p)?;
    }
    Ok(())
}

/// Simulates one path under `strategy`. Deterministic in `(seed, path_index)`.
pub fn simulate_path(
    p: &ModelParams,
    strategy: &Strategy,
    n_steps: usize,
    seed: u64,
    path_index: u64,
) -> Result<PathRecord> {
    let mut all = simulate_paths_lockstep(p, std::slice::from_ref(strategy), n_steps, seed, path_index)?;
    Ok(all.remove(0))
}

/// Simulates one path for several strategies on common random numbers.
pub fn simulate_paths_lockstep(
    p: &ModelParams,
    strategies: &[Strategy],
    n_steps: usize,
    seed: u64,
    path_index: u64,
) -> Result<Vec<PathRecord>> {
    check_inputs(p, strategies, n_steps)?;
    let times = numerics::uniform_grid(p.horizon, n_steps + 1);
    let prepared: Vec<Prepared> = strategies
        .iter()
        .map(|s| Prepared::new(s, &times))
        .collect::<Result<_>>()?;
    Ok(simulate_lockstep(p, &prepared, &times, seed, path_index, true).1)
}

/// Runs `n_paths` paths of every strategy on common random numbers and
/// aggregates performance under `mark`.
pub fn monte_carlo(
    p: &ModelParams,
    strategies: &[Strategy],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    mark: Mark,
) -> Result<McResult> {
    if n_paths < 1 {
        return domain("n_paths must be at least 1");
    }
    let outcomes = path_outcomes(p, strategies, n_paths, n_steps, seed)?;
    Ok(aggregate(strategies, &outcomes, n_steps, mark))
}

pub(crate) fn path_outcomes(
    p: &ModelParams,
    strategies: &[Strategy],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Vec<PathOutcome>>> {
    check_inputs(p, strategies, n_steps)?;
    let times = numerics::uniform_grid(p.horizon, n_steps + 1);
    let prepared: Vec<Prepared> = strategies
        .iter()
        .map(|s| Prepared::new(s, &times))
        .collect::<Result<_>>()?;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_lockstep(p, &prepared, &times, seed, i, false).0)
        .collect())
}

pub(crate) fn aggregate(
    strategies: &[Strategy],
    outcomes: &[Vec<PathOutcome>],
    n_steps: usize,
    mark: Mark,
) -> McResult {
    let n = outcomes.len();
    let mut stats = Vec::with_capacity(strategies.len());
    let mut performance = Vec::with_capacity(strategies.len());
    for (k, s) in strategies.iter().enumerate() {
        let col = |f: &dyn Fn(&PathOutcome) -> f64| -> f64 {
            let v: Vec<f64> = outcomes.iter().map(|o| f(&o[k])).collect();
            numerics::pairwise_sum(&v) / n as f64
        };
        let perf: Vec<f64> = outcomes.iter().map(|o| o[k].performance(mark)).collect();
        let (mean, stdev) = numerics::mean_and_stdev(&perf);
        stats.push(McStats {
            label: s.label.clone(),
            n_paths: n,
            mean,
            stdev,
            se: stdev.map(|sd| sd / (n as f64).sqrt()),
            mean_fills_ask: col(&|o| o.fills_ask as f64),
            mean_fills_bid: col(&|o| o.fills_bid as f64),
            mean_informed_fills: col(&|o| o.informed as f64),
            mean_uninformed_fills: col(&|o| o.uninformed as f64),
            bound_hit_rate: col(&|o| o.bound_steps as f64) / n_steps as f64,
            clamp_count: outcomes.iter().map(|o| o[k].clamps as u64).sum(),
        });
        performance.push(perf);
    }
    McResult { stats, performance }
}

/// Sample correlation of two equally long series (`None` if either is constant).
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, _) = numerics::mean_and_stdev(a);
    let (mb, _) = numerics::mean_and_stdev(b);
    let xy: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let xx: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let yy: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let den = (numerics::pairwise_sum(&xx) * numerics::pairwise_sum(&yy)).sqrt();
    (den > 0.0).then(|| numerics::pairwise_sum(&xy) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn no_order_flow_means_no_fills() {
        let p = ModelParams {
            phi_uninformed: 0.0,
            psi_informed: 0.0,
            ..small()
        };
        let s = Strategy::constant(&p, 0.1, 0.1).unwrap();
        let r = simulate_path(&p, &s, 200, 1, 0).unwrap();
        assert!(r.fills.is_empty());
        assert_eq!(*r.q.last().unwrap(), p.q0);
        assert_eq!(*r.x.last().unwrap(), 0.0);
        assert_eq!(model::performance(&r, &p, Mark::Mid).unwrap(), 0.0);
    }

    #[test]
    fn constant_inventory_pays_only_penalties() {
        let p = ModelParams {
            phi_uninformed: 0.0,
            psi_informed: 0.0,
            q0: 1,
            mu: 0.0,
            sigma: 1e-300,
            ..small()
        };
        let s = Strategy::constant(&p, 0.1, 0.1).unwrap();
        let r = simulate_path(&p, &s, 100, 1, 0).unwrap();
        let perf = model::performance(&r, &p, Mark::Mid).unwrap();
        assert!((perf - (100.0 - 0.001 - 0.1)).abs() < 1e-9);
    }

    #[test]
    fn identical_seed_gives_identical_paths() {
        let p = small();
        let s = Strategy::fi(&p, 1001).unwrap();
        let a = simulate_path(&p, &s, 300, 9, 4).unwrap();
        let b = simulate_path(&p, &s, 300, 9, 4).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&p, &s, 300, 9, 5).unwrap();
        assert_ne!(a.s, c.s);
    }

    #[test]
    fn accounting_replays_from_fills() {
        let p = small();
        let s = Strategy::pi(&p, 1001).unwrap();
        let r = simulate_path(&p, &s, 1000, 3, 0).unwrap();
        let (q, x) = r.replay_fills();
        assert_eq!(q, *r.q.last().unwrap());
        assert_eq!(x, *r.x.last().unwrap());
        assert!(r.u_hat.as_ref().unwrap().len() == r.times.len());
    }

    #[test]
    fn recorded_and_summary_performance_agree() {
        let p = small();
        let strategies = Strategy::standard_trio(&p, 1001, Mark::Mid).unwrap();
        let recs = simulate_paths_lockstep(&p, &strategies, 500, 11, 2).unwrap();
        let times = numerics::uniform_grid(p.horizon, 501);
        let prepared: Vec<Prepared> = strategies.iter().map(|s| Prepared::new(s, &times).unwrap()).collect();
        let (outs, _) = simulate_lockstep(&p, &prepared, &times, 11, 2, false);
        for (r, o) in recs.iter().zip(&outs) {
            let perf = model::performance(r, &p, Mark::Mid).unwrap();
            assert!((perf - o.perf_mid).abs() < 1e-9);
            let fund = model::performance(r, &p, Mark::Fundamental).unwrap();
            assert!((fund - o.perf_fundamental).abs() < 1e-9);
        }
    }

    #[test]
    fn monte_carlo_is_independent_of_thread_count() {
        let p = small();
        let strategies = Strategy::standard_trio(&p, 1001, Mark::Mid).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo(&p, &strategies, 40, 200, 5, Mark::Mid).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.performance, b.performance);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn single_path_has_no_deviation() {
        let p = small();
        let s = [Strategy::fi(&p, 101).unwrap()];
        let r = monte_carlo(&p, &s, 1, 50, 1, Mark::Mid).unwrap();
        assert!(r.stats[0].stdev.is_none() && r.stats[0].se.is_none());
    }

    #[test]
    fn mismatched_strategy_is_a_config_error() {
        let p = small();
        let other = ModelParams {
            horizon: 2.0,
            ..small()
        };
        let s = [Strategy::fi(&other, 101).unwrap()];
        assert!(matches!(
            monte_carlo(&p, &s, 1, 10, 1, Mark::Mid),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn correlation_basics() {
        assert!((correlation(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(correlation(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
