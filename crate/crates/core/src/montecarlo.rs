//! Large-sample simulation of strategies: expected terminal utility, the
//! 5th-percentile wealth risk measure, and the sample correlation of
//! terminal wealth with the index.
//!
//! Shocks come from a counter-based generator keyed by
//! (seed, path index, step index, process tag), so every path's stream is
//! independent of execution order and worker count. Results are combined
//! by deterministic pairwise reduction, which makes a report a pure
//! function of (seed, n_sim) and byte-stable across thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{step, MarketParams, MarketState, ShockVector, TimeGrid};
use crate::numeric::{avalanche, mean, pairwise_sum};
use crate::strategies::StrategyVector;

/// Simulation size, seed and parallel work unit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_sim: usize,
    #[serde(default)]
    pub seed: u64,
    pub chunk_size: usize,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::InvalidParameter { name: "n_sim", reason: "must be at least 1".into() });
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidParameter { name: "chunk_size", reason: "must be at least 1".into() });
        }
        Ok(())
    }
}

/// Monte Carlo estimates for one strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Mean of `-exp(-gamma W)` over the simulated paths.
    pub expected_utility: f64,
    pub utility_stderr: f64,
    /// 5th percentile of terminal wealth.
    pub p05: f64,
    /// `(x0 + i0) - p05`: initial endowment minus the percentile.
    pub risk_shortfall: f64,
    /// Pearson correlation of terminal wealth and index;
    /// `None` when either sample variance vanishes.
    pub sample_correlation: Option<f64>,
    pub n_sim: usize,
    pub seed: u64,
}

/// Counter-based ±1 shock stream: value = f(seed, path, step, tag) with a
/// full-avalanche mix, no sequential state.
#[derive(Debug, Clone, Copy)]
pub struct ShockSource {
    seed: u64,
}

impl ShockSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    #[inline]
    fn sign(&self, path: u64, step_index: u32, tag: u32) -> f64 {
        let keyed = avalanche(self.seed.wrapping_add(path.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let counter = ((step_index as u64) << 2 | tag as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let bits = avalanche(keyed.wrapping_add(counter));
        if bits >> 63 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// The shock triple for one (path, step).
    #[inline]
    pub fn shock(&self, path: u64, step_index: usize) -> ShockVector {
        let s = step_index as u32;
        ShockVector {
            eps_s: self.sign(path, s, 0),
            eps_i: self.sign(path, s, 1),
            eps_b: self.sign(path, s, 2),
        }
    }
}

/// Runs `n_sim` independent paths of the strategy and estimates utility,
/// percentile risk and sample correlation.
pub fn run(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
    config: &SimulationConfig,
) -> Result<EstimateReport> {
    config.validate()?;
    let n_steps = grid.n_steps();
    if strategy.len() != n_steps {
        return Err(Error::LengthMismatch { expected: n_steps, actual: strategy.len() });
    }
    let n = config.n_sim;
    let source = ShockSource::new(config.seed);
    let amounts = strategy.amounts();
    let mut wealth = vec![0.0f64; n];
    let mut index = vec![0.0f64; n];
    wealth
        .par_chunks_mut(config.chunk_size)
        .zip(index.par_chunks_mut(config.chunk_size))
        .enumerate()
        .for_each(|(chunk_idx, (wc, bc))| {
            let base = chunk_idx * config.chunk_size;
            for j in 0..wc.len() {
                let path = (base + j) as u64;
                let mut state = MarketState::initial(params);
                for (s, &amount) in amounts.iter().enumerate() {
                    state = step(params, grid, state, source.shock(path, s), amount, s);
                }
                wc[j] = state.x + state.i;
                bc[j] = state.b;
            }
        });

    let utilities: Vec<f64> = wealth.iter().map(|&w| -(-params.gamma * w).exp()).collect();
    let expected_utility = mean(&utilities);
    let utility_stderr = if n > 1 {
        let centered: Vec<f64> =
            utilities.iter().map(|u| (u - expected_utility) * (u - expected_utility)).collect();
        (pairwise_sum(&centered) / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    let p05 = percentile(&wealth, 0.05)?;
    let sample_correlation = sample_corr(&wealth, &index);
    Ok(EstimateReport {
        expected_utility,
        utility_stderr,
        p05,
        risk_shortfall: (params.x0 + params.i0) - p05,
        sample_correlation,
        n_sim: n,
        seed: config.seed,
    })
}

fn sample_corr(w: &[f64], b: &[f64]) -> Option<f64> {
    let mw = mean(w);
    let mb = mean(b);
    let n = w.len() as f64;
    let cw: Vec<f64> = w.iter().map(|v| v - mw).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let var_w = pairwise_sum(&cw.iter().map(|v| v * v).collect::<Vec<_>>()) / n;
    let var_b = pairwise_sum(&cb.iter().map(|v| v * v).collect::<Vec<_>>()) / n;
    // Variances at roundoff scale mean a constant sample: no correlation.
    if var_w <= 1e-24 * (1.0 + mw * mw) || var_b <= 1e-24 * (1.0 + mb * mb) {
        return None;
    }
    let cov = pairwise_sum(&cw.iter().zip(&cb).map(|(x, y)| x * y).collect::<Vec<_>>()) / n;
    Some(cov / (var_w.sqrt() * var_b.sqrt()))
}

/// Linear-interpolation order statistic: with sorted samples
/// `x_1 ..= x_m` and rank `r = (m - 1) p + 1`, returns
/// `x_floor(r) + frac(r) (x_ceil(r) - x_floor(r))`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("percentile fraction must lie in (0, 1), got {p}"),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = (sorted.len() as f64 - 1.0) * p; // zero-based
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Signed relative change `(current - base) / |base|`.
///
/// Applied to expected utility, an improvement of a negative utility comes
/// out positive; applied to risk, growth comes out positive.
pub fn relative_change(current: f64, base: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::ZeroBase);
    }
    Ok((current - base) / base.abs())
}
