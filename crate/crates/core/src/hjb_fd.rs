//! Finite-difference solver of the full nonlinear HJB equation, used to check
//! the quadratic approximation behind the closed-form quotes.
//!
//! For each inventory level the equation in `(t, u)` reads
//!
//! ```text
//! 0 = ∂t V - η u ∂u V + ½ d(t) ∂uu V - φ q² + q (μ - σ q η u) + H_a + H_b
//! ```
//!
//! with `d = 1` under full information and `d = (q - P̂ q η)²` for the filtered
//! fad. `H_a = Λa(u) e^{-k δ*} (δ* + V(q-1) - V(q))` at the optimal
//! `δ* = max(1/k - V(q-1) + V(q), floor)`, and similarly on the bid.
//!
//! Backward stepping is IMEX: diffusion and upwinded drift implicit (one
//! tridiagonal solve per inventory level), the Hamiltonian and source
//! explicit from the previous time level. At `±u_max` the second derivative is
//! set to zero.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{domain, numeric, Error, Result};
use crate::filters;
use crate::model::{ModelParams, Quote};
use crate::numerics;
use crate::solvers::{self, StrategyCoefficients, StrategyKind};

/// Bit set in [`ValueGrid::floor_flags`] when the ask floor binds.
pub const ASK_FLOOR: u8 = 1;
/// Bit set when the bid floor binds.
pub const BID_FLOOR: u8 = 2;

/// Discretisation of `[0, T] x [-u_max, u_max]`. Inventory levels run over the
/// parameter bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_t: usize,
    pub n_u: usize,
    pub u_max: f64,
    /// Number of stored time levels (including both ends).
    pub n_snapshots: usize,
}

impl GridSpec {
    /// 4000 time steps, 201 fad nodes over four stationary standard deviations.
    pub fn default_for(p: &ModelParams) -> Self {
        Self {
            n_t: 4000,
            n_u: 201,
            u_max: 4.0 * (1.0 / (2.0 * p.eta)).sqrt(),
            n_snapshots: 101,
        }
    }

    /// Halves both steps.
    pub fn refined(&self) -> Self {
        Self {
            n_t: 2 * self.n_t,
            n_u: 2 * self.n_u - 1,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_t < 1 || self.n_u < 3 || self.n_snapshots < 2 {
            return domain("grid needs n_t >= 1, n_u >= 3 and at least two snapshots");
        }
        if !(self.u_max > 0.0) || !self.u_max.is_finite() {
            return domain(format!("u_max = {} must be positive", self.u_max));
        }
        Ok(())
    }
}

/// Value function on stored time levels: `values[(ti * n_q + qi) * n_u + ui]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub kind: StrategyKind,
    pub t_nodes: Vec<f64>,
    pub u_nodes: Vec<f64>,
    pub q_levels: Vec<i64>,
    pub values: Vec<f64>,
    /// [`ASK_FLOOR`] / [`BID_FLOOR`] bits per node.
    pub floor_flags: Vec<u8>,
}

impl ValueGrid {
    fn index(&self, ti: usize, qi: usize, ui: usize) -> usize {
        (ti * self.q_levels.len() + qi) * self.u_nodes.len() + ui
    }

    pub fn at(&self, ti: usize, q: i64, ui: usize) -> f64 {
        let qi = (q - self.q_levels[0]) as usize;
        self.values[self.index(ti, qi, ui)]
    }

    /// `V(t, q, u)` by bilinear interpolation in `(t, u)`.
    pub fn value(&self, t: f64, q: i64, u: f64) -> Result<f64> {
        let (q_lo, q_hi) = (self.q_levels[0], *self.q_levels.last().unwrap());
        if q < q_lo || q > q_hi {
            return domain(format!("q = {q} outside [{q_lo}, {q_hi}]"));
        }
        let (ti, wt) = bracket(&self.t_nodes, t, "t")?;
        let (ui, wu) = bracket(&self.u_nodes, u, "u")?;
        let qi = (q - q_lo) as usize;
        let v = |ti, ui| self.values[self.index(ti, qi, ui)];
        let lo = v(ti, ui) + wu * (v(ti, ui + 1) - v(ti, ui));
        let hi = v(ti + 1, ui) + wu * (v(ti + 1, ui + 1) - v(ti + 1, ui));
        Ok(lo + wt * (hi - lo))
    }

    pub fn horizon(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }
}

/// Index of the lower bracketing node and the interpolation weight.
fn bracket(nodes: &[f64], x: f64, name: &str) -> Result<(usize, f64)> {
    let (lo, hi) = (nodes[0], *nodes.last().unwrap());
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    if !(x >= lo - slack && x <= hi + slack) {
        return domain(format!("{name} = {x} outside grid [{lo}, {hi}]"));
    }
    let x = x.clamp(lo, hi);
    let i = nodes.partition_point(|&n| n <= x).clamp(1, nodes.len() - 1) - 1;
    let w = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
    Ok((i, w.clamp(0.0, 1.0)))
}

/// Optimal displacement and Hamiltonian for one side: intensity scale `lam`,
/// value jump `jump = V(q∓1) - V(q)`.
#[inline]
fn side(lam: f64, k: f64, jump: f64, floor: f64) -> (f64, f64, bool) {
    let free = 1.0 / k - jump;
    if free >= floor {
        // e^{-k δ*} (δ* + jump) = e^{-1 + k jump} / k
        (free, lam * (-1.0 + k * jump).exp() / k, false)
    } else {
        (floor, lam * (-k * floor).exp() * (floor + jump), true)
    }
}

/// Solves the HJB equation backward from `V(T) = -α q²`.
pub fn solve_hjb_fd(p: &ModelParams, kind: StrategyKind, spec: &GridSpec) -> Result<ValueGrid> {
    p.validate()?;
    spec.validate()?;
    let diffusion: Box<dyn Fn(f64) -> f64 + Sync> = match kind {
        StrategyKind::Fi => Box::new(|_| 1.0),
        StrategyKind::Pi => {
            let v = filters::solve_variance_curve(p, spec.n_t + 1)?;
            let p2 = p.clone();
            Box::new(move |t| v.filter_diffusion(&p2, t).unwrap_or(f64::NAN))
        }
        StrategyKind::Cjp => {
            return Err(Error::Config("the finite-difference solver covers FI and PI".into()))
        }
    };

    let n_u = spec.n_u;
    let h = 2.0 * spec.u_max / (n_u - 1) as f64;
    let u_nodes: Vec<f64> = (0..n_u)
        .map(|i| if i == n_u - 1 { spec.u_max } else { -spec.u_max + i as f64 * h })
        .collect();
    let q_levels: Vec<i64> = (p.q_min..=p.q_max).collect();
    let n_q = q_levels.len();
    let dt = p.horizon / spec.n_t as f64;
    let k = p.k_decay;

    // u-only factors, fixed over time
    let lam_a: Vec<f64> = u_nodes
        .iter()
        .map(|&u| p.phi_uninformed + p.informed_ask_factor(u))
        .collect();
    let lam_b: Vec<f64> = u_nodes
        .iter()
        .map(|&u| p.phi_uninformed + p.informed_bid_factor(u))
        .collect();
    let drift_src: Vec<f64> = u_nodes
        .iter()
        .map(|&u| p.mu - p.fad_scale() * p.eta * u)
        .collect();

    let stride = (spec.n_t / (spec.n_snapshots - 1)).max(1);
    let mut snaps: Vec<(f64, Vec<f64>, Vec<u8>)> = Vec::new();

    let mut cur: Vec<f64> = q_levels
        .iter()
        .flat_map(|&q| std::iter::repeat_n(-p.term_penalty * (q * q) as f64, n_u))
        .collect();
    let mut flags = vec![0u8; n_q * n_u];
    snaps.push((p.horizon, cur.clone(), flags.clone()));

    let mut next = vec![0.0; n_q * n_u];
    for step in (0..spec.n_t).rev() {
        let t = if step == 0 { 0.0 } else { step as f64 * dt };
        let d = diffusion(t);
        if !d.is_finite() {
            return numeric(format!("diffusion coefficient not finite at t = {t}"));
        }
        let diff = 0.5 * d * dt / (h * h);
        let prev = &cur;
        next.par_chunks_mut(n_u)
            .zip(flags.par_chunks_mut(n_u))
            .enumerate()
            .for_each(|(qi, (row, flag))| {
                let q = q_levels[qi];
                let qf = q as f64;
                let here = &prev[qi * n_u..(qi + 1) * n_u];
                let mut lower = vec![0.0; n_u];
                let mut diag = vec![0.0; n_u];
                let mut upper = vec![0.0; n_u];
                for i in 0..n_u {
                    let mut ham = 0.0;
                    let mut f = 0u8;
                    if q > p.q_min {
                        let jump = prev[(qi - 1) * n_u + i] - here[i];
                        let (_, hval, floored) = side(lam_a[i], k, jump, p.delta_floor_ask);
                        ham += hval;
                        if floored {
                            f |= ASK_FLOOR;
                        }
                    }
                    if q < p.q_max {
                        let jump = prev[(qi + 1) * n_u + i] - here[i];
                        let (_, hval, floored) = side(lam_b[i], k, jump, p.delta_floor_bid);
                        ham += hval;
                        if floored {
                            f |= BID_FLOOR;
                        }
                    }
                    flag[i] = f;
                    row[i] = here[i] + dt * (ham - p.run_penalty * qf * qf + qf * drift_src[i]);

                    let adv = -p.eta * u_nodes[i] * dt / h;
                    let (mut lo, mut di, mut up) = (0.0, 1.0, 0.0);
                    if adv > 0.0 {
                        di += adv;
                        up -= adv;
                    } else {
                        di -= adv;
                        lo += adv;
                    }
                    if i > 0 && i < n_u - 1 {
                        di += 2.0 * diff;
                        lo -= diff;
                        up -= diff;
                    }
                    lower[i] = lo;
                    diag[i] = di;
                    upper[i] = up;
                }
                let mut scratch = vec![0.0; n_u];
                numerics::solve_tridiagonal(&lower, &diag, &upper, row, &mut scratch);
            });
        std::mem::swap(&mut cur, &mut next);
        if let Some(bad) = cur.iter().position(|v| !(v.abs() <= 1e9)) {
            return numeric(format!(
                "value blew up to {} at t = {t} (node {bad}); increase n_t",
                cur[bad]
            ));
        }
        if step % stride == 0 {
            snaps.push((t, cur.clone(), flags.clone()));
        }
    }
    snaps.reverse();
    let t_nodes = snaps.iter().map(|s| s.0).collect();
    let mut values = Vec::with_capacity(snaps.len() * n_q * n_u);
    let mut floor_flags = Vec::with_capacity(snaps.len() * n_q * n_u);
    for (_, v, f) in snaps {
        values.extend(v);
        floor_flags.extend(f);
    }
    Ok(ValueGrid {
        kind,
        t_nodes,
        u_nodes,
        q_levels,
        values,
        floor_flags,
    })
}

/// Feedback quotes from the value grid.
pub fn fd_quotes(grid: &ValueGrid, p: &ModelParams, t: f64, q: i64, u: f64) -> Result<Quote> {
    let v = grid.value(t, q, u)?;
    let ask_active = q > p.q_min && q > grid.q_levels[0];
    let bid_active = q < p.q_max && q < *grid.q_levels.last().unwrap();
    let k = p.k_decay;
    let delta_a = if ask_active {
        (1.0 / k - grid.value(t, q - 1, u)? + v).max(p.delta_floor_ask)
    } else {
        f64::NAN
    };
    let delta_b = if bid_active {
        (1.0 / k - grid.value(t, q + 1, u)? + v).max(p.delta_floor_bid)
    } else {
        f64::NAN
    };
    Ok(Quote {
        delta_a,
        delta_b,
        ask_active,
        bid_active,
    })
}

/// One row of the finite-difference vs closed-form comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub q: i64,
    pub u: f64,
    pub v: f64,
    pub delta_a_fd: f64,
    pub delta_a_cf: f64,
    pub delta_b_fd: f64,
    pub delta_b_cf: f64,
}

/// Compares feedback and closed-form quotes on the product of the given
/// points. Only sides active at every compared level enter the rows' gaps.
pub fn compare_with_closed_form(
    grid: &ValueGrid,
    coeffs: &StrategyCoefficients,
    p: &ModelParams,
    ts: &[f64],
    qs: &[i64],
    us: &[f64],
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(ts.len() * qs.len() * us.len());
    for &t in ts {
        for &q in qs {
            for &u in us {
                let fd = fd_quotes(grid, p, t, q, u)?;
                let cf = solvers::quote(coeffs, p, t, q, u)?;
                rows.push(ComparisonRow {
                    t,
                    q,
                    u,
                    v: grid.value(t, q, u)?,
                    delta_a_fd: fd.delta_a,
                    delta_a_cf: cf.delta_a,
                    delta_b_fd: fd.delta_b,
                    delta_b_cf: cf.delta_b,
                });
            }
        }
    }
    Ok(rows)
}

/// Largest absolute displacement gap over the rows (NaN sides skipped).
pub fn max_gap(rows: &[ComparisonRow]) -> f64 {
    rows.iter()
        .flat_map(|r| [r.delta_a_fd - r.delta_a_cf, r.delta_b_fd - r.delta_b_cf])
        .filter(|g| g.is_finite())
        .fold(0.0, |m, g| m.max(g.abs()))
}

/// Writes `t,q,u,v,delta_a_fd,delta_a_cf,delta_b_fd,delta_b_cf`.
pub fn write_comparison_csv<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GridSpec {
        GridSpec {
            n_t: 400,
            n_u: 41,
            u_max: 1.0,
            n_snapshots: 11,
        }
    }

    fn narrow(p: ModelParams) -> ModelParams {
        ModelParams {
            q_min: -6,
            q_max: 6,
            ..p
        }
    }

    #[test]
    fn terminal_condition_is_exact() {
        let p = narrow(ModelParams::baseline());
        let g = solve_hjb_fd(&p, StrategyKind::Fi, &small_spec()).unwrap();
        let last = g.t_nodes.len() - 1;
        assert_eq!(g.t_nodes[last], p.horizon);
        for &q in &g.q_levels {
            for ui in 0..g.u_nodes.len() {
                assert_eq!(g.at(last, q, ui), -p.term_penalty * (q * q) as f64);
            }
        }
        assert_eq!(g.t_nodes[0], 0.0);
        assert_eq!(g.t_nodes.len(), 11);
    }

    #[test]
    fn inventory_bounds_switch_quotes_off() {
        let p = narrow(ModelParams::baseline());
        let g = solve_hjb_fd(&p, StrategyKind::Fi, &small_spec()).unwrap();
        let lo = fd_quotes(&g, &p, 0.5, p.q_min, 0.0).unwrap();
        assert!(!lo.ask_active && lo.bid_active);
        let hi = fd_quotes(&g, &p, 0.5, p.q_max, 0.0).unwrap();
        assert!(hi.ask_active && !hi.bid_active);
        assert!(fd_quotes(&g, &p, 0.5, 0, 3.0).is_err());
    }

    #[test]
    fn symmetric_at_zero_fad_and_inventory() {
        let p = narrow(ModelParams::baseline());
        let g = solve_hjb_fd(&p, StrategyKind::Fi, &small_spec()).unwrap();
        let q = fd_quotes(&g, &p, 0.0, 0, 0.0).unwrap();
        assert!((q.delta_a - q.delta_b).abs() < 1e-6);
    }

    #[test]
    fn larger_terminal_penalty_lowers_the_value() {
        let p = narrow(ModelParams::baseline());
        let heavier = ModelParams {
            term_penalty: 0.01,
            ..p.clone()
        };
        let a = solve_hjb_fd(&p, StrategyKind::Fi, &small_spec()).unwrap();
        let b = solve_hjb_fd(&heavier, StrategyKind::Fi, &small_spec()).unwrap();
        for i in 0..10 {
            let idx = (i * 7919) % a.values.len();
            assert!(b.values[idx] <= a.values[idx] + 1e-12);
        }
    }

    #[test]
    fn binding_floors_are_flagged() {
        let p = narrow(ModelParams {
            delta_floor_ask: 1.02,
            delta_floor_bid: 1.02,
            ..ModelParams::baseline()
        });
        let g = solve_hjb_fd(&p, StrategyKind::Fi, &small_spec()).unwrap();
        assert!(g.floor_flags.iter().any(|&f| f & ASK_FLOOR != 0));
        assert!(g.floor_flags.iter().any(|&f| f & BID_FLOOR != 0));
        let q = fd_quotes(&g, &p, 0.0, -3, 0.0).unwrap();
        assert!(q.delta_a >= 1.02);
    }

    #[test]
    fn cjp_is_not_a_finite_difference_kind() {
        let p = narrow(ModelParams::baseline());
        assert!(matches!(
            solve_hjb_fd(&p, StrategyKind::Cjp, &small_spec()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comparison_csv_header() {
        let mut buf = Vec::new();
        write_comparison_csv(
            &mut buf,
            &[ComparisonRow {
                t: 0.0,
                q: 0,
                u: 0.0,
                v: 0.0,
                delta_a_fd: 1.0,
                delta_a_cf: 1.0,
                delta_b_fd: 1.0,
                delta_b_cf: 1.0,
            }],
        )
        .unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,q,u,v,delta_a_fd,delta_a_cf,delta_b_fd,delta_b_cf\n"));
    }
}
