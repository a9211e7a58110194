//! Closed-form strategy computation: the unconstrained level, the
//! constrained subgame-perfect backward induction with its quadratic cap,
//! the constrained precommitment solution, and the conditional-correlation
//! aggregates they rest on.
//!
//! With `n` steps remaining and the future amounts `pi_{N-n+1} .. pi_{N-1}`
//! already fixed, the correlation between terminal wealth and the index is
//!
//! ```text
//! corr = (b1 pi + b2) / sqrt(k1^2(n) pi^2 + k2^2)
//! ```
//!
//! where `b2` and `k2^2` aggregate the income stream and the future
//! amounts. The constraint `corr <= -delta` is equivalent to `pi` lying at
//! or below the left root of an upward quadratic, which is the cap applied
//! at every backward-induction step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive_constants, DerivedConstants, MarketParams, TimeGrid};

/// Provenance label of a strategy vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Unconstrained subgame perfect: the constant unconstrained level.
    #[serde(rename = "UnSGP")]
    UnSgp,
    /// Constrained subgame perfect (backward induction under the cap).
    #[serde(rename = "CSGP")]
    Csgp,
    /// Constrained precommitment (time-0 deterministic optimum).
    #[serde(rename = "CPC")]
    Cpc,
    Custom,
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StrategyKind::UnSgp => "UnSGP",
            StrategyKind::Csgp => "CSGP",
            StrategyKind::Cpc => "CPC",
            StrategyKind::Custom => "Custom",
        };
        f.write_str(s)
    }
}

/// A deterministic invested amount per trading date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyVector {
    amounts: Vec<f64>,
    kind: StrategyKind,
}

impl StrategyVector {
    pub fn new(amounts: Vec<f64>, kind: StrategyKind) -> Result<Self> {
        if amounts.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "amounts",
                reason: "strategy entries must be finite".into(),
            });
        }
        Ok(Self { amounts, kind })
    }

    pub fn amounts(&self) -> &[f64] {
        &self.amounts
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }
}

/// The unconstrained per-step optimum
/// `(1 / (2 gamma sigma1 sqrt(h))) ln((1 + theta sqrt(h)) / (1 - theta sqrt(h)))`.
///
/// This is also every entry of both the subgame perfect and the
/// precommitment strategy once the correlation constraint is dropped.
pub fn pi_bar(params: &MarketParams, grid: &TimeGrid) -> Result<f64> {
    let theta_sh = params.theta() * grid.sqrt_h();
    if !(theta_sh.abs() < 1.0) {
        return Err(Error::InvalidParameter {
            name: "theta_sqrt_h",
            reason: format!("|theta sqrt(h)| = {} must be < 1", theta_sh.abs()),
        });
    }
    if !(params.gamma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must be > 0, got {}", params.gamma),
        });
    }
    Ok(((1.0 + theta_sh) / (1.0 - theta_sh)).ln() / (2.0 * params.gamma * params.sigma1 * grid.sqrt_h()))
}

/// Income / future-strategy aggregates entering the conditional correlation
/// with `n_remaining` steps to go.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationAggregates {
    /// Covariance-side aggregate `b2`.
    pub b2: f64,
    /// Variance-side aggregate `k2^2`.
    pub k2_sq: f64,
    pub n_remaining: usize,
}

/// Computes the aggregates for the decision at `t_{N-n}`, given the already
/// fixed amounts for `t_{N-n+1} .. t_{N-1}` (forward order).
///
/// Income growth factors use the landing-time convention: the increment
/// earned over `[t_{s-1}, t_s]` carries `exp(k t_s)`.
pub fn aggregates_for_step(
    params: &MarketParams,
    grid: &TimeGrid,
    future_tail: &[f64],
    n_remaining: usize,
) -> Result<CorrelationAggregates> {
    let n_steps = grid.n_steps();
    if n_remaining == 0 || n_remaining > n_steps {
        return Err(Error::InvalidParameter {
            name: "n_remaining",
            reason: format!("must lie in 1..={n_steps}, got {n_remaining}"),
        });
    }
    if future_tail.len() != n_remaining - 1 {
        return Err(Error::LengthMismatch { expected: n_remaining - 1, actual: future_tail.len() });
    }
    let c = derive_constants(params, grid)?;
    let sh = grid.sqrt_h();
    let mut sum_e = 0.0;
    let mut sum_e2 = 0.0;
    for s in (n_steps - n_remaining + 1)..=n_steps {
        let e = (params.k * grid.t(s)).exp();
        sum_e += e;
        sum_e2 += e * e;
    }
    let tail_sum: f64 = future_tail.iter().sum();
    let tail_sq_sum: f64 = future_tail.iter().map(|p| p * p).sum();
    let b2 = c.theta3 * (c.m_diff * params.a32 * sum_e + params.sigma1 * params.a31 * sh * tail_sum);
    let k2_sq = c.variance_growth(n_remaining)
        * (c.m_diff * c.m_diff * sum_e2 + params.sigma1 * params.sigma1 * grid.h() * tail_sq_sum);
    Ok(CorrelationAggregates { b2, k2_sq, n_remaining })
}

/// Conditional correlation of terminal wealth and the index for the amount
/// `pi_now` invested at the current step.
pub fn conditional_correlation(
    params: &MarketParams,
    grid: &TimeGrid,
    pi_now: f64,
    aggregates: &CorrelationAggregates,
) -> Result<f64> {
    let c = derive_constants(params, grid)?;
    let var = c.k1_sq(aggregates.n_remaining) * pi_now * pi_now + aggregates.k2_sq;
    if var <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((c.b1 * pi_now + aggregates.b2) / var.sqrt())
}

/// The quadratic whose left root caps the invested amount.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticCap {
    /// `b1^2 - k1^2(n) delta^2`; positive below the admissibility bound.
    pub lead: f64,
    /// `2 b1 b2`.
    pub mid: f64,
    /// `b2^2 - delta^2 k2^2`.
    pub constant: f64,
    pub r_left: f64,
    pub r_right: f64,
}

impl QuadraticCap {
    /// Evaluates `lead x^2 + mid x + constant`.
    pub fn eval(&self, x: f64) -> f64 {
        (self.lead * x + self.mid) * x + self.constant
    }
}

fn quadratic_cap_with_delta(
    consts: &DerivedConstants,
    delta: f64,
    aggregates: &CorrelationAggregates,
) -> Result<QuadraticCap> {
    let n = aggregates.n_remaining;
    let lead = consts.b1 * consts.b1 - consts.k1_sq(n) * delta * delta;
    if lead.abs() < 1e-14 {
        return Err(Error::DegenerateLead);
    }
    if lead < 0.0 {
        return Err(Error::InadmissibleDelta { delta, bound: consts.b1 / consts.k1(n) });
    }
    let mid = 2.0 * consts.b1 * aggregates.b2;
    let constant = aggregates.b2 * aggregates.b2 - delta * delta * aggregates.k2_sq;
    // Q(-b2/b1) = -delta^2 (k1^2 b2^2 / b1^2 + k2^2) <= 0, so with lead > 0
    // the discriminant is nonnegative up to roundoff.
    let disc = (mid * mid - 4.0 * lead * constant).max(0.0);
    let sq = disc.sqrt();
    let (r_left, r_right) = if sq == 0.0 {
        let r = -mid / (2.0 * lead);
        (r, r)
    } else if mid >= 0.0 {
        let q = -0.5 * (mid + sq);
        let (a, b) = (q / lead, constant / q);
        (a.min(b), a.max(b))
    } else {
        let q = 0.5 * (sq - mid);
        let (a, b) = (constant / q, q / lead);
        (a.min(b), a.max(b))
    };
    Ok(QuadraticCap { lead, mid, constant, r_left, r_right })
}

/// Builds the cap quadratic for the current step using `params.delta`.
pub fn quadratic_cap(
    params: &MarketParams,
    grid: &TimeGrid,
    aggregates: &CorrelationAggregates,
) -> Result<QuadraticCap> {
    let c = derive_constants(params, grid)?;
    quadratic_cap_with_delta(&c, params.delta, aggregates)
}

/// The invested-amount cap: the left root of the step's quadratic.
pub fn csgp_cap(
    params: &MarketParams,
    grid: &TimeGrid,
    aggregates: &CorrelationAggregates,
) -> Result<f64> {
    Ok(quadratic_cap(params, grid, aggregates)?.r_left)
}

/// Largest admissible correlation bound for the full horizon,
/// `b1 / k1(N)`. For N = 1 this equals `a31`.
pub fn admissibility_bound(params: &MarketParams, grid: &TimeGrid) -> Result<f64> {
    let c = derive_constants(params, grid)?;
    Ok(c.b1 / c.k1(grid.n_steps()))
}

fn check_admissible(params: &MarketParams, grid: &TimeGrid, delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("must be > 0, got {delta}"),
        });
    }
    let bound = admissibility_bound(params, grid)?;
    if delta >= bound {
        return Err(Error::InadmissibleDelta { delta, bound });
    }
    Ok(())
}

/// The unconstrained subgame perfect strategy: the constant unconstrained
/// level at every date.
pub fn unconstrained(params: &MarketParams, grid: &TimeGrid) -> Result<StrategyVector> {
    params.validate(grid)?;
    let level = pi_bar(params, grid)?;
    StrategyVector::new(vec![level; grid.n_steps()], StrategyKind::UnSgp)
}

/// Constrained subgame perfect strategy by backward induction with
/// `params.delta` as the correlation bound.
pub fn csgp(params: &MarketParams, grid: &TimeGrid) -> Result<StrategyVector> {
    csgp_with_bound(params, grid, Some(params.delta))
}

/// Backward induction with an explicit bound; `None` disables the
/// constraint, in which case every entry equals the unconstrained level.
pub fn csgp_with_bound(
    params: &MarketParams,
    grid: &TimeGrid,
    bound: Option<f64>,
) -> Result<StrategyVector> {
    params.validate(grid)?;
    let level = pi_bar(params, grid)?;
    let n_steps = grid.n_steps();
    let delta = match bound {
        None => return StrategyVector::new(vec![level; n_steps], StrategyKind::Csgp),
        Some(d) => d,
    };
    check_admissible(params, grid, delta)?;
    let consts = derive_constants(params, grid)?;
    let mut amounts = vec![0.0; n_steps];
    for n_remaining in 1..=n_steps {
        let idx = n_steps - n_remaining;
        let agg = aggregates_for_step(params, grid, &amounts[idx + 1..], n_remaining)?;
        let cap = quadratic_cap_with_delta(&consts, delta, &agg)?.r_left;
        amounts[idx] = level.min(cap);
    }
    StrategyVector::new(amounts, StrategyKind::Csgp)
}

/// Intermediates of the equal-weight precommitment solution.
#[derive(Debug, Clone, Copy)]
pub struct CpcIntermediates {
    /// `1 - delta^2 k1^2(N) / b1^2`, in (0, 1) for admissible delta.
    pub a: f64,
    /// `b2 / b1` with the income-only `b2`.
    pub c: f64,
    /// `k2^2 delta^2 / b1^2` with the income-only `k2^2`.
    pub eta_sq: f64,
    /// `-c / (a + N - 1)`, the center of the equal-weight solutions.
    pub b_shift: f64,
}

fn cpc_intermediates_with_delta(
    params: &MarketParams,
    grid: &TimeGrid,
    delta: f64,
) -> Result<CpcIntermediates> {
    let c = derive_constants(params, grid)?;
    let n_steps = grid.n_steps();
    let mut sum_e = 0.0;
    let mut sum_e2 = 0.0;
    for s in 1..=n_steps {
        let e = (params.k * grid.t(s)).exp();
        sum_e += e;
        sum_e2 += e * e;
    }
    let b2_income = c.theta3 * c.m_diff * params.a32 * sum_e;
    let k2_sq_income = c.variance_growth(n_steps) * c.m_diff * c.m_diff * sum_e2;
    let b1_sq = c.b1 * c.b1;
    let a = 1.0 - delta * delta * c.k1_sq(n_steps) / b1_sq;
    let cc = b2_income / c.b1;
    let eta_sq = k2_sq_income * delta * delta / b1_sq;
    Ok(CpcIntermediates { a, c: cc, eta_sq, b_shift: -cc / (a + n_steps as f64 - 1.0) })
}

/// Intermediates for `params.delta`.
pub fn cpc_intermediates(params: &MarketParams, grid: &TimeGrid) -> Result<CpcIntermediates> {
    check_admissible(params, grid, params.delta)?;
    cpc_intermediates_with_delta(params, grid, params.delta)
}

/// Constrained precommitment strategy: the time-0 deterministic optimum,
/// equal across all dates.
pub fn cpc(params: &MarketParams, grid: &TimeGrid) -> Result<StrategyVector> {
    cpc_with_bound(params, grid, Some(params.delta))
}

/// Precommitment with an explicit bound; `None` disables the constraint.
pub fn cpc_with_bound(
    params: &MarketParams,
    grid: &TimeGrid,
    bound: Option<f64>,
) -> Result<StrategyVector> {
    params.validate(grid)?;
    let level = pi_bar(params, grid)?;
    let n_steps = grid.n_steps();
    let delta = match bound {
        None => return StrategyVector::new(vec![level; n_steps], StrategyKind::Cpc),
        Some(d) => d,
    };
    check_admissible(params, grid, delta)?;
    let im = cpc_intermediates_with_delta(params, grid, delta)?;
    let n_f = n_steps as f64;
    let denom = im.a + n_f - 1.0;
    let inner = im.c * im.c * (1.0 - im.a) / (n_f * denom * denom) + im.eta_sq / (n_f * denom);
    if inner <= 0.0 {
        // No income randomness: the boundary solution degenerates and the
        // correlation is undefined at the candidate.
        return Err(Error::DegenerateVariance);
    }
    // The feasible equal-weight boundary solution sits below b_shift; the
    // branch with the positive square root violates the linear side of the
    // constraint.
    let capped = im.b_shift - inner.sqrt();
    StrategyVector::new(vec![level.min(capped); n_steps], StrategyKind::Cpc)
}

/// Correlation of terminal wealth and index seen from time 0 for a
/// deterministic strategy: the step-`N` conditional correlation with the
/// tail amounts absorbed into the aggregates.
pub fn unconditional_correlation(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
) -> Result<f64> {
    let n_steps = grid.n_steps();
    if strategy.len() != n_steps {
        return Err(Error::LengthMismatch { expected: n_steps, actual: strategy.len() });
    }
    let agg = aggregates_for_step(params, grid, &strategy.amounts()[1..], n_steps)?;
    conditional_correlation(params, grid, strategy.amounts()[0], &agg)
}

fn single_period_cap_scaled(
    params: &MarketParams,
    grid: &TimeGrid,
    income_scale: f64,
) -> Result<f64> {
    params.validate(grid)?;
    let delta = params.delta;
    if delta >= params.a31 {
        return Err(Error::InadmissibleDelta { delta, bound: params.a31 });
    }
    let a31 = params.a31;
    let a32 = params.a32;
    let denom = params.sigma1 * grid.sqrt_h() * (a31 * a31 - delta * delta);
    Ok(income_scale * (-a31 * a32 - delta * (a31 * a31 + a32 * a32 - delta * delta).sqrt()) / denom)
}

/// Single-period cap with the half-difference income scale; identical to
/// the step cap at one remaining step.
pub fn single_period_cap_half_diff(params: &MarketParams, grid: &TimeGrid) -> Result<f64> {
    let c = derive_constants(params, grid)?;
    let scale = c.m_diff * (params.k * grid.horizon()).exp();
    single_period_cap_scaled(params, grid, scale)
}

/// Single-period cap evaluated with the half-sum income scale instead.
///
/// Kept for comparison only: the half-sum scale overstates the income
/// shock covariance, so the correlation at this cap does not reach
/// `-delta`. Never used by the backward induction.
pub fn single_period_cap_half_sum(params: &MarketParams, grid: &TimeGrid) -> Result<f64> {
    let c = derive_constants(params, grid)?;
    let scale = c.m_sum * (params.k * grid.horizon()).exp();
    single_period_cap_scaled(params, grid, scale)
}
