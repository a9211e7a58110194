//! Market model: exogenous parameters, the trading grid, one-step dynamics
//! of stock / income / index / wealth, and the derived constants every
//! closed-form expression is built from.
//!
//! Randomness is driven by three symmetric ±1 shocks per step. One step of
//! the four processes, starting from `(S, I, B, X)`:
//!
//! ```text
//! S' = S (1 + mu1 h + sigma1 sqrt(h) eps_s)
//! I' = I + exp(k t_{n+1}) |mu2 h + sigma2 sqrt(h) eps_i|
//! B' = B (1 + mu3 h + sigma3 sqrt(h) (a31 eps_s + a32 eps_i + a33 eps_b))
//! X' = X + pi (mu1 h + sigma1 sqrt(h) eps_s)
//! ```
//!
//! The income increment earned over `[t_n, t_{n+1}]` is scaled by the
//! landing time `t_{n+1}`, so that over `n` remaining steps the growth
//! factors are exactly `exp(k t_s)` for `s = N-n+1 ..= N`. Terminal wealth
//! is `W = X_N + I_N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategies::StrategyVector;

/// All exogenous model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Stock drift per unit time.
    pub mu1: f64,
    /// Stock volatility per square-root time.
    pub sigma1: f64,
    /// Income drift per unit time.
    pub mu2: f64,
    /// Income volatility per square-root time.
    pub sigma2: f64,
    /// Income growth exponent per unit time.
    pub k: f64,
    /// Index drift per unit time.
    pub mu3: f64,
    /// Index volatility per square-root time.
    pub sigma3: f64,
    /// Index loading on the stock shock.
    pub a31: f64,
    /// Index loading on the income shock.
    pub a32: f64,
    /// Coefficient of absolute risk aversion.
    pub gamma: f64,
    /// Correlation bound: admissible strategies satisfy corr(W, B) <= -delta.
    pub delta: f64,
    /// Initial investment wealth.
    pub x0: f64,
    /// Initial income level.
    pub i0: f64,
    /// Initial index level.
    pub b0: f64,
}

impl MarketParams {
    /// Market price of risk `theta = mu1 / sigma1`.
    pub fn theta(&self) -> f64 {
        self.mu1 / self.sigma1
    }

    /// Idiosyncratic index loading `a33 = sqrt(1 - a31^2 - a32^2)`.
    pub fn a33(&self) -> f64 {
        (1.0 - self.a31 * self.a31 - self.a32 * self.a32).max(0.0).sqrt()
    }

    /// Checks every documented invariant against the configured grid,
    /// naming the violated one on failure.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let err = |name: &'static str, reason: String| Error::InvalidParameter { name, reason };
        if !(self.sigma1 > 0.0) {
            return Err(err("sigma1", format!("must be > 0, got {}", self.sigma1)));
        }
        if !(self.sigma3 > 0.0) {
            return Err(err("sigma3", format!("must be > 0, got {}", self.sigma3)));
        }
        if !(self.gamma > 0.0) {
            return Err(err("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.b0 > 0.0) {
            return Err(err("b0", format!("must be > 0, got {}", self.b0)));
        }
        if !(self.a31 > 0.0) {
            return Err(err("a31", format!("must be > 0, got {}", self.a31)));
        }
        if !(self.a32 > 0.0) {
            return Err(err("a32", format!("must be > 0, got {}", self.a32)));
        }
        if self.a31 * self.a31 + self.a32 * self.a32 > 1.0 + 1e-12 {
            return Err(err(
                "a31",
                format!(
                    "a31^2 + a32^2 = {} must not exceed 1",
                    self.a31 * self.a31 + self.a32 * self.a32
                ),
            ));
        }
        let h = grid.h();
        let sh = grid.sqrt_h();
        if !(1.0 + self.mu3 * h > 0.0) {
            return Err(err("mu3", format!("index positivity needs 1 + mu3 h > 0, got {}", 1.0 + self.mu3 * h)));
        }
        if !(1.0 + self.mu1 * h - self.sigma1 * sh > 0.0) || !(1.0 + self.mu1 * h + self.sigma1 * sh > 0.0) {
            return Err(err(
                "mu1",
                format!(
                    "stock positivity needs 1 + mu1 h +/- sigma1 sqrt(h) > 0, got {} and {}",
                    1.0 + self.mu1 * h - self.sigma1 * sh,
                    1.0 + self.mu1 * h + self.sigma1 * sh
                ),
            ));
        }
        let theta_sh = self.theta() * sh;
        if !(theta_sh.abs() < 1.0) {
            return Err(err(
                "theta_sqrt_h",
                format!("|theta sqrt(h)| = {} must be < 1", theta_sh.abs()),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(err("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Equally spaced trading dates `t_n = n h` for `n = 0 ..= N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    h: f64,
    sqrt_h: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, h: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "n_steps",
                reason: "must be at least 1".into(),
            });
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: format!("must be positive and finite, got {h}"),
            });
        }
        Ok(Self { n_steps, h, sqrt_h: h.sqrt() })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn sqrt_h(&self) -> f64 {
        self.sqrt_h
    }

    /// Trading date `t_n = n h`.
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    /// Horizon `T = N h`.
    pub fn horizon(&self) -> f64 {
        self.t(self.n_steps)
    }
}

/// Constants derived from the raw parameters, shared by every formula.
#[derive(Debug, Clone, Copy)]
pub struct DerivedConstants {
    /// Market price of risk `mu1 / sigma1`.
    pub theta: f64,
    /// One-step index growth mean `1 + h mu3`.
    pub mu3_tilde: f64,
    /// `sigma3 sqrt(h) / mu3_tilde`.
    pub theta3: f64,
    /// `sqrt(1 - a31^2 - a32^2)`.
    pub a33: f64,
    /// Half-sum income scale `(|mu2 h + sigma2 sqrt(h)| + |mu2 h - sigma2 sqrt(h)|) / 2`,
    /// the per-step mean of the raw income increment.
    pub m_sum: f64,
    /// Half-difference income scale `(|mu2 h + sigma2 sqrt(h)| - |mu2 h - sigma2 sqrt(h)|) / 2`,
    /// the per-step covariance of the raw increment with its shock.
    pub m_diff: f64,
    /// `theta3 sigma1 a31 sqrt(h)`.
    pub b1: f64,
    sigma1_sq_h: f64,
    theta3_sq: f64,
}

impl DerivedConstants {
    /// `k1^2(n) = [(1 + theta3^2)^n - 1] sigma1^2 h` for `n` remaining steps.
    pub fn k1_sq(&self, n_remaining: usize) -> f64 {
        ((1.0 + self.theta3_sq).powi(n_remaining as i32) - 1.0) * self.sigma1_sq_h
    }

    pub fn k1(&self, n_remaining: usize) -> f64 {
        self.k1_sq(n_remaining).sqrt()
    }

    /// `(1 + theta3^2)^n - 1`, the variance growth factor shared by
    /// `k1_sq` and the strategy aggregates.
    pub fn variance_growth(&self, n_remaining: usize) -> f64 {
        (1.0 + self.theta3_sq).powi(n_remaining as i32) - 1.0
    }
}

/// Computes [`DerivedConstants`], validating the raw parameters first.
pub fn derive_constants(params: &MarketParams, grid: &TimeGrid) -> Result<DerivedConstants> {
    params.validate(grid)?;
    let h = grid.h();
    let sh = grid.sqrt_h();
    let mu3_tilde = 1.0 + h * params.mu3;
    let theta3 = params.sigma3 * sh / mu3_tilde;
    let up = (params.mu2 * h + params.sigma2 * sh).abs();
    let down = (params.mu2 * h - params.sigma2 * sh).abs();
    Ok(DerivedConstants {
        theta: params.theta(),
        mu3_tilde,
        theta3,
        a33: params.a33(),
        m_sum: 0.5 * (up + down),
        m_diff: 0.5 * (up - down),
        b1: theta3 * params.sigma1 * params.a31 * sh,
        sigma1_sq_h: params.sigma1 * params.sigma1 * h,
        theta3_sq: theta3 * theta3,
    })
}

/// One ±1 shock triple, in the order (stock, income, index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShockVector {
    pub eps_s: f64,
    pub eps_i: f64,
    pub eps_b: f64,
}

impl ShockVector {
    /// Builds a shock triple, rejecting anything that is not exactly ±1.
    pub fn new(eps_s: f64, eps_i: f64, eps_b: f64) -> Result<Self> {
        for (name, v) in [("eps_s", eps_s), ("eps_i", eps_i), ("eps_b", eps_b)] {
            if v != 1.0 && v != -1.0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("shock must be exactly +1 or -1, got {v}"),
                });
            }
        }
        Ok(Self { eps_s, eps_i, eps_b })
    }

    /// Decodes bits 0..=2 as (eps_s, eps_i, eps_b); a set bit maps to +1.
    pub fn from_bits(bits: u8) -> Self {
        let sign = |b: bool| if b { 1.0 } else { -1.0 };
        Self {
            eps_s: sign(bits & 1 != 0),
            eps_i: sign(bits & 2 != 0),
            eps_b: sign(bits & 4 != 0),
        }
    }

    pub fn all_up() -> Self {
        Self { eps_s: 1.0, eps_i: 1.0, eps_b: 1.0 }
    }

    pub fn all_down() -> Self {
        Self { eps_s: -1.0, eps_i: -1.0, eps_b: -1.0 }
    }
}

/// The four process levels at one trading date.
///
/// The stock level is bookkeeping only: neither terminal wealth nor the
/// index depends on it, so paths start it at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub s: f64,
    pub i: f64,
    pub b: f64,
    pub x: f64,
}

impl MarketState {
    pub fn initial(params: &MarketParams) -> Self {
        Self { s: 1.0, i: params.i0, b: params.b0, x: params.x0 }
    }
}

/// Advances all four processes one step from date `t_n` given the shock
/// triple and the invested amount `pi`.
///
/// The Monte Carlo engine and the enumeration oracle both go through this
/// function, so their paths agree bit for bit.
pub fn step(
    params: &MarketParams,
    grid: &TimeGrid,
    state: MarketState,
    shock: ShockVector,
    pi: f64,
    n: usize,
) -> MarketState {
    debug_assert!(n < grid.n_steps());
    let h = grid.h();
    let sh = grid.sqrt_h();
    let stock_move = params.mu1 * h + params.sigma1 * sh * shock.eps_s;
    let index_shock = params.a31 * shock.eps_s + params.a32 * shock.eps_i + params.a33() * shock.eps_b;
    let income_inc = (params.k * grid.t(n + 1)).exp() * (params.mu2 * h + params.sigma2 * sh * shock.eps_i).abs();
    MarketState {
        s: state.s + state.s * stock_move,
        i: state.i + income_inc,
        b: state.b + state.b * (params.mu3 * h + params.sigma3 * sh * index_shock),
        x: state.x + pi * stock_move,
    }
}

/// One realization of all four processes over the whole grid.
#[derive(Debug, Clone)]
pub struct ScenarioPath {
    pub shocks: Vec<ShockVector>,
    /// Stock levels, length N + 1.
    pub s: Vec<f64>,
    /// Income levels, length N + 1.
    pub i: Vec<f64>,
    /// Index levels, length N + 1.
    pub b: Vec<f64>,
    /// Investment wealth, length N + 1.
    pub x: Vec<f64>,
    /// Terminal wealth `x[N] + i[N]`.
    pub w: f64,
}

/// Runs the strategy through the supplied shock sequence.
pub fn simulate_path(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
    shocks: &[ShockVector],
) -> Result<ScenarioPath> {
    let n = grid.n_steps();
    if strategy.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: strategy.len() });
    }
    if shocks.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: shocks.len() });
    }
    let mut s = Vec::with_capacity(n + 1);
    let mut i = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n + 1);
    let mut state = MarketState::initial(params);
    s.push(state.s);
    i.push(state.i);
    b.push(state.b);
    x.push(state.x);
    for (idx, (&shock, &pi)) in shocks.iter().zip(strategy.amounts()).enumerate() {
        state = step(params, grid, state, shock, pi, idx);
        s.push(state.s);
        i.push(state.i);
        b.push(state.b);
        x.push(state.x);
    }
    Ok(ScenarioPath { shocks: shocks.to_vec(), s, i, b, x, w: state.x + state.i })
}
