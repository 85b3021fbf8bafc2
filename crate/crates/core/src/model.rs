//! Model parameters, arrival intensities, payoff functionals and the
//! calibration of the informed baseline intensity.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics;
use crate::sim::PathRecord;

/// Tolerance on `p_weight² + q_weight² = 1`.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Expected number of market arrivals per side used by the calibration rule.
pub const DEFAULT_TARGET_ARRIVALS: f64 = 30.0;

/// All market and model constants.
///
/// `phi_uninformed` and `psi_informed` are the baseline intensities of the
/// uninformed and informed traders; `run_penalty` is the running inventory
/// penalty of the payoff and `term_penalty` the terminal one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub q_weight: f64,
    pub p_weight: f64,
    pub eta: f64,
    pub k_decay: f64,
    pub gamma: f64,
    pub phi_uninformed: f64,
    pub psi_informed: f64,
    pub run_penalty: f64,
    pub term_penalty: f64,
    pub horizon: f64,
    pub cap_lo: f64,
    pub cap_hi: f64,
    pub q_min: i64,
    pub q_max: i64,
    pub delta_floor_ask: f64,
    pub delta_floor_bid: f64,
    pub s0: f64,
    pub q0: i64,
    pub x0: f64,
}

/// Every field optional, so a config file may override any subset of the
/// baseline. Unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ParamsPatch {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub q_weight: Option<f64>,
    pub p_weight: Option<f64>,
    pub eta: Option<f64>,
    pub k_decay: Option<f64>,
    pub gamma: Option<f64>,
    pub phi_uninformed: Option<f64>,
    pub psi_informed: Option<f64>,
    pub run_penalty: Option<f64>,
    pub term_penalty: Option<f64>,
    pub horizon: Option<f64>,
    pub cap_lo: Option<f64>,
    pub cap_hi: Option<f64>,
    pub q_min: Option<i64>,
    pub q_max: Option<i64>,
    pub delta_floor_ask: Option<f64>,
    pub delta_floor_bid: Option<f64>,
    pub s0: Option<f64>,
    pub q0: Option<i64>,
    pub x0: Option<f64>,
}

impl ParamsPatch {
    /// Applies the patch on top of `base`. When `q_weight` is given without
    /// `p_weight`, the latter is completed to `sqrt(1 - q²)`; when
    /// `psi_informed` is absent it is recalibrated to the default target.
    pub(crate) fn apply(self, base: &ModelParams) -> Result<ModelParams> {
        let mut p = base.clone();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        set!(
            mu, sigma, eta, k_decay, gamma, phi_uninformed, run_penalty, term_penalty, horizon,
            cap_lo, cap_hi, q_min, q_max, delta_floor_ask, delta_floor_bid, s0, q0, x0
        );
        if let Some(q) = self.q_weight {
            p.q_weight = q;
            p.p_weight = self.p_weight.unwrap_or_else(|| (1.0 - q * q).max(0.0).sqrt());
        } else if let Some(pw) = self.p_weight {
            p.p_weight = pw;
        }
        match self.psi_informed {
            Some(psi) => p.psi_informed = psi,
            None => p.psi_informed = calibrate_psi(&p, DEFAULT_TARGET_ARRIVALS)?,
        }
        p.validate()?;
        Ok(p)
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::baseline()
    }
}

impl ModelParams {
    /// Baseline market: `sigma = 1`, `eta = 10`, `k = gamma = 1`, fad loading
    /// 0.6, 15 uninformed arrivals per unit time and the informed intensity
    /// calibrated to 30 expected arrivals per side.
    pub fn baseline() -> Self {
        let mut p = Self {
            mu: 0.0,
            sigma: 1.0,
            q_weight: 0.6,
            p_weight: 0.8,
            eta: 10.0,
            k_decay: 1.0,
            gamma: 1.0,
            phi_uninformed: 15.0,
            psi_informed: 0.0,
            run_penalty: 0.1,
            term_penalty: 0.001,
            horizon: 1.0,
            cap_lo: f64::NEG_INFINITY,
            cap_hi: f64::INFINITY,
            q_min: -20,
            q_max: 20,
            delta_floor_ask: f64::NEG_INFINITY,
            delta_floor_bid: f64::NEG_INFINITY,
            s0: 100.0,
            q0: 0,
            x0: 0.0,
        };
        p.psi_informed =
            calibrate_psi(&p, DEFAULT_TARGET_ARRIVALS).expect("baseline calibration is valid");
        p
    }

    /// Sets the fad loading and completes the martingale loading.
    pub fn with_q_weight(mut self, q: f64) -> Self {
        self.q_weight = q;
        self.p_weight = (1.0 - q * q).max(0.0).sqrt();
        self
    }

    /// Recalibrates `psi_informed` so that expected arrivals per side equal
    /// `target`.
    pub fn recalibrated(mut self, target: f64) -> Result<Self> {
        self.psi_informed = calibrate_psi(&self, target)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("q_weight", self.q_weight),
            ("p_weight", self.p_weight),
            ("eta", self.eta),
            ("k_decay", self.k_decay),
            ("gamma", self.gamma),
            ("phi_uninformed", self.phi_uninformed),
            ("psi_informed", self.psi_informed),
            ("run_penalty", self.run_penalty),
            ("term_penalty", self.term_penalty),
            ("horizon", self.horizon),
            ("s0", self.s0),
            ("x0", self.x0),
        ];
        for (name, v) in reals {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.q_weight) || !(0.0..=1.0).contains(&self.p_weight) {
            return bad("fad and martingale loadings must lie in [0, 1]".into());
        }
        let norm = self.p_weight * self.p_weight + self.q_weight * self.q_weight;
        if (norm - 1.0).abs() > WEIGHT_TOL {
            return bad(format!("p_weight² + q_weight² = {norm}, expected 1"));
        }
        if self.sigma <= 0.0 || self.eta <= 0.0 || self.horizon <= 0.0 || self.k_decay <= 0.0 {
            return bad("sigma, eta, k_decay and horizon must be positive".into());
        }
        if self.gamma < 0.0
            || self.phi_uninformed < 0.0
            || self.psi_informed < 0.0
            || self.run_penalty < 0.0
            || self.term_penalty < 0.0
        {
            return bad("intensities and penalties must be nonnegative".into());
        }
        if self.cap_lo.is_nan() || self.cap_hi.is_nan() || self.cap_lo > 0.0 || self.cap_hi < 0.0 {
            return bad("caps must satisfy cap_lo <= 0 <= cap_hi".into());
        }
        if self.delta_floor_ask.is_nan() || self.delta_floor_bid.is_nan() {
            return bad("displacement floors must not be NaN".into());
        }
        if self.q_min >= 0 || self.q_max <= 0 {
            return bad("inventory bounds must satisfy q_min < 0 < q_max".into());
        }
        if self.q0 < self.q_min || self.q0 > self.q_max {
            return bad(format!("q0 = {} outside [{}, {}]", self.q0, self.q_min, self.q_max));
        }
        Ok(())
    }

    /// Scale of the fad in prices, `sigma * q_weight`.
    #[inline]
    pub fn fad_scale(&self) -> f64 {
        self.sigma * self.q_weight
    }

    /// Informed ask factor `psi * exp(-gamma * max(sigma q u, cap_lo))`.
    #[inline]
    pub fn informed_ask_factor(&self, u: f64) -> f64 {
        self.psi_informed * (-self.gamma * (self.fad_scale() * u).max(self.cap_lo)).exp()
    }

    /// Informed bid factor `psi * exp(gamma * min(sigma q u, cap_hi))`.
    #[inline]
    pub fn informed_bid_factor(&self, u: f64) -> f64 {
        self.psi_informed * (self.gamma * (self.fad_scale() * u).min(self.cap_hi)).exp()
    }

    /// Reads a flat `key = value` file; missing keys take baseline values.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let patch: ParamsPatch =
            toml::from_str(text).map_err(|e| Error::Config(format!("parameter file: {e}")))?;
        patch.apply(&Self::baseline())
    }

    /// Writes every field as a flat `key = value` line.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat struct of numbers serializes")
    }
}

/// Instantaneous state of the market maker's problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub t: f64,
    pub s: f64,
    pub u: f64,
    pub q: i64,
    pub x: f64,
}

/// Posted displacements around the mid-price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub delta_a: f64,
    pub delta_b: f64,
    pub ask_active: bool,
    pub bid_active: bool,
}

/// Price used to mark the terminal inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    #[default]
    Mid,
    Fundamental,
}

fn check_finite(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !v.is_finite() {
            return domain(format!("{name} must be finite, got {v}"));
        }
    }
    Ok(())
}

/// Ask arrival intensity for displacement `delta_a` at fad `u` and inventory `q`.
pub fn intensity_ask(p: &ModelParams, u: f64, q: i64, delta_a: f64) -> Result<f64> {
    check_finite(&[("u", u), ("delta_a", delta_a)])?;
    if delta_a < p.delta_floor_ask {
        return domain(format!("delta_a = {delta_a} below floor {}", p.delta_floor_ask));
    }
    if q <= p.q_min {
        return Ok(0.0);
    }
    let decay = (-p.k_decay * delta_a).exp();
    Ok(p.phi_uninformed * decay + p.informed_ask_factor(u) * decay)
}

/// Bid arrival intensity, mirror of [`intensity_ask`].
pub fn intensity_bid(p: &ModelParams, u: f64, q: i64, delta_b: f64) -> Result<f64> {
    check_finite(&[("u", u), ("delta_b", delta_b)])?;
    if delta_b < p.delta_floor_bid {
        return domain(format!("delta_b = {delta_b} below floor {}", p.delta_floor_bid));
    }
    if q >= p.q_max {
        return Ok(0.0);
    }
    let decay = (-p.k_decay * delta_b).exp();
    Ok(p.phi_uninformed * decay + p.informed_bid_factor(u) * decay)
}

/// Mid-price purged of the fad component.
#[inline]
pub fn fundamental_price(s: f64, u: f64, p: &ModelParams) -> f64 {
    s - p.fad_scale() * u
}

/// `∫ Q_u² du` for a piecewise-constant inventory: `q[i]` holds on
/// `[times[i], times[i+1])`.
pub fn inventory_square_integral(times: &[f64], q: &[i64]) -> f64 {
    let terms: Vec<f64> = times
        .windows(2)
        .zip(q)
        .map(|(w, &qi)| (qi * qi) as f64 * (w[1] - w[0]))
        .collect();
    numerics::pairwise_sum(&terms)
}

/// Terminal payoff given the realised path summary.
pub(crate) fn payoff(
    p: &ModelParams,
    x_t: f64,
    q_t: i64,
    s_t: f64,
    u_t: f64,
    int_q2: f64,
    mark: Mark,
) -> f64 {
    let price = match mark {
        Mark::Mid => s_t,
        Mark::Fundamental => fundamental_price(s_t, u_t, p),
    };
    let q = q_t as f64;
    x_t + q * price - p.term_penalty * q * q - p.run_penalty * int_q2
}

/// Realised performance `X_T + Q_T·mark − α Q_T² − φ ∫ Q² du` of a complete path.
pub fn performance(path: &PathRecord, p: &ModelParams, mark: Mark) -> Result<f64> {
    path.check_complete(p.horizon)?;
    let n = path.times.len() - 1;
    let int_q2 = inventory_square_integral(&path.times, &path.q[..n]);
    Ok(payoff(p, path.x[n], path.q[n], path.s[n], path.u[n], int_q2, mark))
}

/// `E[exp(a U_t)]` for the fad started at zero: the moment of a centred
/// Gaussian with variance `(1 - e^{-2 eta t}) / (2 eta)`.
pub fn expected_exp_fad(a: f64, t: f64, eta: f64) -> f64 {
    (a * a * (1.0 - (-2.0 * eta * t).exp()) / (4.0 * eta)).exp()
}

/// `∫_0^T E[exp(gamma sigma q U_t)] dt`. Equals `T` exactly when the fad
/// channel is switched off.
pub fn fad_moment_integral(p: &ModelParams) -> Result<f64> {
    let a = p.gamma * p.fad_scale();
    if a == 0.0 {
        return Ok(p.horizon);
    }
    numerics::integrate(|t| expected_exp_fad(a, t, p.eta), 0.0, p.horizon, 1e-10)
}

/// Informed baseline intensity giving `target` expected arrivals per side at
/// zero displacement over the horizon.
///
/// `target == phi T` yields `psi = 0` (no informed traders).
pub fn calibrate_psi(p: &ModelParams, target: f64) -> Result<f64> {
    let uninformed = p.phi_uninformed * p.horizon;
    if !(target >= uninformed) {
        return domain(format!(
            "target arrivals {target} below uninformed arrivals {uninformed}: no nonnegative psi"
        ));
    }
    Ok((target - uninformed) / fad_moment_integral(p)?)
}

/// Intensity scale of the fad-blind strategy: same expected arrivals as the
/// full-information market.
pub fn kappa_cjp(p: &ModelParams) -> Result<f64> {
    Ok(p.phi_uninformed + p.psi_informed / p.horizon * fad_moment_integral(p)?)
}
