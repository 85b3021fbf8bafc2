//! Second-order approximation of the market maker's HJB equation.
//!
//! The value function is approximated by `V(t,q,u) = q² A(t) + q B(t,u) + C(t,u)`
//! with `B = b0 + u b1` and `C = c0 + u c1 + u² c2`. `A` has a closed form; the
//! remaining coefficients solve linear ODEs integrated backward with RK4.
//!
//! Partial-information coefficients are integrated in their native sign
//! convention (`V = -q² A - q B - C`, `A(T) = α`) and negated on output, so all
//! stored coefficients read the same way.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{self, Mark, ModelParams, Quote};
use crate::numerics;

pub const DEFAULT_N_GRID: usize = 2001;

const E_INV: f64 = 0.367_879_441_171_442_33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StrategyKind {
    Fi,
    Pi,
    Cjp,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Fi => "FI",
            StrategyKind::Pi => "PI",
            StrategyKind::Cjp => "CJP",
        }
    }
}

/// Coefficients at a single time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefRow {
    pub a: f64,
    pub b0: f64,
    pub b1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl CoefRow {
    fn lerp(lo: &CoefRow, hi: &CoefRow, w: f64) -> CoefRow {
        let f = |x: f64, y: f64| x + w * (y - x);
        CoefRow {
            a: f(lo.a, hi.a),
            b0: f(lo.b0, hi.b0),
            b1: f(lo.b1, hi.b1),
            c0: f(lo.c0, hi.c0),
            c1: f(lo.c1, hi.c1),
            c2: f(lo.c2, hi.c2),
        }
    }

    /// `V(t,q,u)` of the quadratic ansatz.
    pub fn value(&self, q: i64, u: f64) -> f64 {
        let q = q as f64;
        q * q * self.a + q * (self.b0 + u * self.b1) + self.c0 + u * (self.c1 + u * self.c2)
    }

    /// Unfloored displacements `(δa, δb)` from the difference identities
    /// `V(q) - V(q-1) = A(2q-1) + B` and `V(q) - V(q+1) = -A(2q+1) - B`.
    #[inline]
    pub fn raw_displacements(&self, k: f64, q: i64, u: f64) -> (f64, f64) {
        let qf = q as f64;
        let b = self.b0 + u * self.b1;
        (
            1.0 / k + self.a * (2.0 * qf - 1.0) + b,
            1.0 / k - self.a * (2.0 * qf + 1.0) - b,
        )
    }
}

/// Solved coefficient curves on a uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCoefficients {
    pub kind: StrategyKind,
    pub time_grid: Vec<f64>,
    pub a: Vec<f64>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl StrategyCoefficients {
    fn from_rows(kind: StrategyKind, grid: Vec<f64>, rows: impl Iterator<Item = CoefRow>) -> Self {
        let mut out = Self {
            kind,
            time_grid: grid,
            a: vec![],
            b0: vec![],
            b1: vec![],
            c0: vec![],
            c1: vec![],
            c2: vec![],
        };
        for r in rows {
            out.a.push(r.a);
            out.b0.push(r.b0);
            out.b1.push(r.b1);
            out.c0.push(r.c0);
            out.c1.push(r.c1);
            out.c2.push(r.c2);
        }
        out
    }

    pub fn horizon(&self) -> f64 {
        *self.time_grid.last().expect("non-empty grid")
    }

    pub fn row(&self, i: usize) -> CoefRow {
        CoefRow {
            a: self.a[i],
            b0: self.b0[i],
            b1: self.b1[i],
            c0: self.c0[i],
            c1: self.c1[i],
            c2: self.c2[i],
        }
    }

    /// Coefficients at time `t`, linearly interpolated between grid nodes.
    pub fn at(&self, t: f64) -> Result<CoefRow> {
        let horizon = self.horizon();
        let slack = 1e-12 * horizon;
        if !(t >= -slack && t <= horizon + slack) {
            return domain(format!("t = {t} outside [0, {horizon}]"));
        }
        let n = self.time_grid.len();
        let x = (t.clamp(0.0, horizon) / horizon) * (n - 1) as f64;
        let i = (x.floor() as usize).min(n - 2);
        let w = (x - i as f64).clamp(0.0, 1.0);
        if w == 0.0 {
            return Ok(self.row(i));
        }
        Ok(CoefRow::lerp(&self.row(i), &self.row(i + 1), w))
    }

    /// Writes `t,a,b0,b1,c0,c1,c2`, one row per grid node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "a", "b0", "b1", "c0", "c1", "c2"])?;
        for (i, t) in self.time_grid.iter().enumerate() {
            let r = self.row(i);
            w.write_record(
                [*t, r.a, r.b0, r.b1, r.c0, r.c1, r.c2].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Conditional variance of the filtered fad on a uniform grid, with its time
/// derivative for cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    pub time_grid: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub dp_hat: Vec<f64>,
}

impl VarianceCurve {
    pub fn horizon(&self) -> f64 {
        *self.time_grid.last().expect("non-empty grid")
    }

    /// `P̂(t)` by cubic Hermite interpolation (fourth-order accurate, so the
    /// partial-information ODE solve keeps its RK4 order).
    pub fn value(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        let slack = 1e-12 * horizon;
        if !(t >= -slack && t <= horizon + slack) {
            return domain(format!("t = {t} outside variance curve [0, {horizon}]"));
        }
        let n = self.time_grid.len();
        let h = horizon / (n - 1) as f64;
        let x = t.clamp(0.0, horizon) / h;
        let i = (x.floor() as usize).min(n - 2);
        let s = (x - i as f64).clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(self.p_hat[i]);
        }
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(h00 * self.p_hat[i]
            + h10 * h * self.dp_hat[i]
            + h01 * self.p_hat[i + 1]
            + h11 * h * self.dp_hat[i + 1])
    }

    /// Diffusion coefficient `(q - P̂ q η)²` of the filtered fad.
    pub fn filter_diffusion(&self, p: &ModelParams, t: f64) -> Result<f64> {
        let x2 = p.q_weight - self.value(t)? * p.q_weight * p.eta;
        Ok(x2 * x2)
    }
}

/// Intensity scale of the Riccati equation, `4 (φ + ψ) e^{-1} k`.
pub fn kappa_ric(p: &ModelParams) -> f64 {
    4.0 * (p.phi_uninformed + p.psi_informed) * E_INV * p.k_decay
}

/// Closed-form solution of `A' = φ_run - κ A²`, `A(T) = -α`.
pub fn riccati_a_closed_form(p: &ModelParams, t: f64) -> Result<f64> {
    if p.run_penalty < 0.0 || !p.run_penalty.is_finite() {
        return domain(format!("run_penalty = {} must be finite and >= 0", p.run_penalty));
    }
    let slack = 1e-12 * p.horizon;
    if !(t >= -slack && t <= p.horizon + slack) {
        return domain(format!("t = {t} outside [0, {}]", p.horizon));
    }
    let tau = (p.horizon - t).max(0.0);
    let alpha = p.term_penalty;
    if tau == 0.0 {
        return Ok(-alpha);
    }
    let kappa = kappa_ric(p);
    if kappa == 0.0 {
        // no order flow: A' = φ_run
        return Ok(-alpha - p.run_penalty * tau);
    }
    if p.run_penalty == 0.0 {
        return Ok(-alpha / (1.0 + kappa * alpha * tau));
    }
    let (sp, sk) = (p.run_penalty.sqrt(), kappa.sqrt());
    let gap = sp - sk * alpha;
    if gap.abs() <= 1e-12 * sp.max(sk * alpha) {
        return Ok(-alpha);
    }
    let beta = (sp + sk * alpha) / gap;
    // (1 - e^{r τ} β) / (1 + e^{r τ} β) rewritten with e^{-r τ} to avoid overflow
    let decay = (-2.0 * (p.run_penalty * kappa).sqrt() * tau).exp();
    Ok(sp / sk * (decay - beta) / (decay + beta))
}

/// Full-information coefficients with the terminal inventory marked at the mid.
pub fn solve_fi_coefficients(p: &ModelParams, n_grid: usize) -> Result<StrategyCoefficients> {
    solve_fi_coefficients_marked(p, n_grid, Mark::Mid)
}

/// Full-information coefficients. Marking at the fundamental price shifts the
/// terminal condition to `B(T,u) = -σ q u`.
pub fn solve_fi_coefficients_marked(
    p: &ModelParams,
    n_grid: usize,
    mark: Mark,
) -> Result<StrategyCoefficients> {
    check_grid(n_grid)?;
    p.validate()?;
    let grid = numerics::uniform_grid(p.horizon, n_grid);
    let sys = LinearSystem::new(p);
    let b1_terminal = match mark {
        Mark::Mid => 0.0,
        Mark::Fundamental => -p.fad_scale(),
    };
    let terminal = [0.0, b1_terminal, 0.0, 0.0, 0.0];
    // A is smooth and known in closed form at every RK4 stage
    let ys = numerics::rk4_backward(&grid, terminal, |t, y| {
        let a = riccati_a_closed_form(p, t).unwrap_or(f64::NAN);
        sys.fi_rhs(t, a, 1.0, y)
    })?;
    let a: Vec<f64> = grid
        .iter()
        .map(|&t| riccati_a_closed_form(p, t))
        .collect::<Result<_>>()?;
    let rows = ys.iter().zip(&a).map(|(y, &a)| CoefRow {
        a,
        b0: y[0],
        b1: y[1],
        c0: y[2],
        c1: y[3],
        c2: y[4],
    });
    Ok(StrategyCoefficients::from_rows(StrategyKind::Fi, grid, rows))
}

/// Partial-information coefficients, integrated in the native sign convention
/// (including `A` itself, by RK4) and negated on output.
pub fn solve_pi_coefficients(
    p: &ModelParams,
    variance: &VarianceCurve,
    n_grid: usize,
) -> Result<StrategyCoefficients> {
    solve_pi_coefficients_marked(p, variance, n_grid, Mark::Mid)
}

pub fn solve_pi_coefficients_marked(
    p: &ModelParams,
    variance: &VarianceCurve,
    n_grid: usize,
    mark: Mark,
) -> Result<StrategyCoefficients> {
    check_grid(n_grid)?;
    p.validate()?;
    if (variance.horizon() - p.horizon).abs() > 1e-12 * p.horizon {
        return domain(format!(
            "variance curve covers [0, {}], horizon is {}",
            variance.horizon(),
            p.horizon
        ));
    }
    let grid = numerics::uniform_grid(p.horizon, n_grid);
    let sys = LinearSystem::new(p);
    let b1_terminal = match mark {
        Mark::Mid => 0.0,
        Mark::Fundamental => p.fad_scale(),
    };
    let terminal = [p.term_penalty, 0.0, b1_terminal, 0.0, 0.0, 0.0];
    let ys = numerics::rk4_backward(&grid, terminal, |t, y| {
        let d = variance.filter_diffusion(p, t).unwrap_or(f64::NAN);
        sys.pi_native_rhs(y, d)
    })?;
    let rows = ys.iter().map(|y| CoefRow {
        a: -y[0],
        b0: -y[1],
        b1: -y[2],
        c0: -y[3],
        c1: -y[4],
        c2: -y[5],
    });
    Ok(StrategyCoefficients::from_rows(StrategyKind::Pi, grid, rows))
}

/// Parameters seen by the fad-blind strategy: no fad channel and a single
/// intensity scale matching the expected arrivals of the full market.
pub fn cjp_params(p: &ModelParams) -> Result<ModelParams> {
    let kappa = model::kappa_cjp(p)?;
    let mut blind = p.clone().with_q_weight(0.0);
    blind.gamma = 0.0;
    blind.phi_uninformed = kappa;
    blind.psi_informed = 0.0;
    Ok(blind)
}

/// Fad-blind coefficients; quotes depend on `(t, q)` only.
pub fn solve_cjp_coefficients(p: &ModelParams, n_grid: usize) -> Result<StrategyCoefficients> {
    let mut c = solve_fi_coefficients(&cjp_params(p)?, n_grid)?;
    c.kind = StrategyKind::Cjp;
    Ok(c)
}

/// Closed-form quote at `(t, q, u)`; `u` is the fad for FI, its filter for PI
/// and ignored for CJP.
pub fn quote(
    coeffs: &StrategyCoefficients,
    p: &ModelParams,
    t: f64,
    q: i64,
    u: f64,
) -> Result<Quote> {
    let row = coeffs.at(t)?;
    let u = if coeffs.kind == StrategyKind::Cjp { 0.0 } else { u };
    Ok(quote_from_row(&row, p, q, u))
}

#[inline]
pub(crate) fn quote_from_row(row: &CoefRow, p: &ModelParams, q: i64, u: f64) -> Quote {
    let (da, db) = row.raw_displacements(p.k_decay, q, u);
    Quote {
        delta_a: da.max(p.delta_floor_ask),
        delta_b: db.max(p.delta_floor_bid),
        ask_active: q > p.q_min,
        bid_active: q < p.q_max,
    }
}

fn check_grid(n_grid: usize) -> Result<()> {
    if n_grid < 2 {
        return domain(format!("n_grid = {n_grid}, need at least 2"));
    }
    Ok(())
}

/// Right-hand side of the full coefficient system `(A, b0, b1, c0, c1, c2)`
/// at state `y` and fad diffusion `d`, evaluated twice: in the
/// full-information form, and through the partial-information form at `-y`
/// with its output negated. The two agree identically.
pub fn coefficient_rhs_forms(p: &ModelParams, y: [f64; 6], d: f64) -> ([f64; 6], [f64; 6]) {
    let sys = LinearSystem::new(p);
    let a = y[0];
    let da = p.run_penalty - kappa_ric(p) * a * a;
    let [db0, db1, dc0, dc1, dc2] = sys.fi_rhs(0.0, a, d, &[y[1], y[2], y[3], y[4], y[5]]);
    let native = sys.pi_native_rhs(&y.map(|v| -v), d);
    ([da, db0, db1, dc0, dc1, dc2], native.map(|v| -v))
}

/// Constants of the linear coefficient ODEs.
struct LinearSystem {
    mu: f64,
    eta: f64,
    k: f64,
    run_penalty: f64,
    /// `σ q`
    sq: f64,
    /// `(φ + ψ) e^{-1}`
    ke: f64,
    /// `ψ q σ γ e^{-1}`
    ge: f64,
}

impl LinearSystem {
    fn new(p: &ModelParams) -> Self {
        Self {
            mu: p.mu,
            eta: p.eta,
            k: p.k_decay,
            run_penalty: p.run_penalty,
            sq: p.fad_scale(),
            ke: (p.phi_uninformed + p.psi_informed) * E_INV,
            ge: p.psi_informed * p.fad_scale() * p.gamma * E_INV,
        }
    }

    /// `d/dt (b0, b1, c0, c1, c2)` in the full-information sign convention;
    /// `d` is the diffusion coefficient of the fad seen by the strategy.
    fn fi_rhs(&self, _t: f64, a: f64, d: f64, y: &[f64; 5]) -> [f64; 5] {
        let [b0, b1, _c0, c1, c2] = *y;
        let (k, ke, ge, eta) = (self.k, self.ke, self.ge, self.eta);
        let db0 = -self.mu - 4.0 * k * ke * a * b0;
        let db1 = eta * self.sq + eta * b1 - 4.0 * k * ke * a * b1 - 4.0 * ge * a - 4.0 * k * ge * a * a;
        let dc0 = -d * c2 - ke / k * (2.0 + 2.0 * k * a + k * k * (a * a + b0 * b0));
        let dc1 = eta * c1 - 2.0 * ge * b0 - 2.0 * k * ke * b0 * b1 - 2.0 * k * ge * a * b0;
        let dc2 = 2.0 * eta * c2 - k * ke * b1 * b1 - 2.0 * k * ge * a * b1 - 2.0 * ge * b1;
        [db0, db1, dc0, dc1, dc2]
    }

    /// `d/dt (A, b0, b1, c0, c1, c2)` in the partial-information sign
    /// convention, with `d = x2²`.
    fn pi_native_rhs(&self, y: &[f64; 6], d: f64) -> [f64; 6] {
        let [a, b0, b1, _c0, c1, c2] = *y;
        let (k, ke, ge, eta) = (self.k, self.ke, self.ge, self.eta);
        let da = -self.run_penalty + 4.0 * ke * k * a * a;
        let db0 = self.mu + 4.0 * ke * k * b0 * a;
        let db1 = eta * b1 - eta * self.sq + ge * (-4.0 * a + 4.0 * k * a * a) + 4.0 * ke * k * b1 * a;
        let dc0 = -d * c2 + ke / k * (2.0 - 2.0 * k * a + k * k * (a * a + b0 * b0));
        let dc1 = eta * c1 - 2.0 * ge * b0 + 2.0 * ge * k * b0 * a + 2.0 * ke * k * b0 * b1;
        let dc2 = 2.0 * eta * c2 - 2.0 * ge * b1 + 2.0 * ge * a * k * b1 + ke * k * b1 * b1;
        [da, db0, db1, dc0, dc1, dc2]
    }
}
