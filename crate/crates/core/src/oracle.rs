//! Brute-force ground truth at desk scale: exact expectations and
//! correlations by exhaustive enumeration of the ±1 shock paths, and
//! constrained grid searches that locate every optimum without touching
//! the closed forms they are meant to check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{step, MarketParams, MarketState, ShockVector, TimeGrid};
use crate::numeric::{avalanche, mean, pairwise_sum};
use crate::strategies::{pi_bar, CorrelationAggregates, QuadraticCap, StrategyKind, StrategyVector};

/// Wealth-only enumeration covers 4^N outcomes.
pub const MAX_UTILITY_STEPS: usize = 10;
/// Index-included enumeration covers 8^n outcomes.
pub const MAX_CORRELATION_STEPS: usize = 6;
/// Conditioning at an interior date enumerates prefix and suffix, 8^N total.
pub const MAX_INTERIOR_STEPS: usize = 4;
/// Dimension limit of the precommitment scan.
pub const MAX_CPC_SCAN_STEPS: usize = 3;

/// One enumerated terminal outcome.
#[derive(Debug, Clone, Copy)]
pub struct ExactOutcome {
    pub wealth: f64,
    pub index: f64,
    pub probability: f64,
}

/// The full finite law of (terminal wealth, terminal index).
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    pub outcomes: Vec<ExactOutcome>,
}

impl ExactDistribution {
    pub fn total_probability(&self) -> f64 {
        let probs: Vec<f64> = self.outcomes.iter().map(|o| o.probability).collect();
        pairwise_sum(&probs)
    }
}

fn for_each_joint(n_steps: usize, include_index: bool, mut f: impl FnMut(&[ShockVector])) {
    let bits_per = if include_index { 3 } else { 2 };
    let mask: u64 = (1 << bits_per) - 1;
    let total: u64 = 1u64 << (bits_per * n_steps);
    let mut shocks = vec![ShockVector::all_up(); n_steps];
    for idx in 0..total {
        for (s, slot) in shocks.iter_mut().enumerate() {
            let chunk = ((idx >> (bits_per * s)) & mask) as u8;
            // Without the index, eps_b is pinned to +1: wealth ignores it.
            *slot = ShockVector::from_bits(if include_index { chunk } else { chunk | 4 });
        }
        f(&shocks);
    }
}

fn run_suffix(
    params: &MarketParams,
    grid: &TimeGrid,
    amounts: &[f64],
    start_step: usize,
    start: MarketState,
    shocks: &[ShockVector],
) -> MarketState {
    let mut state = start;
    for (offset, &shock) in shocks.iter().enumerate() {
        let n = start_step + offset;
        state = step(params, grid, state, shock, amounts[n], n);
    }
    state
}

/// Materializes the joint law of (W, B) for a deterministic strategy.
///
/// With `include_index` the probabilities are uniform `1/8^N`; without it
/// the index shock is skipped and they are uniform `1/4^N`.
pub fn exact_distribution(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
    include_index: bool,
) -> Result<ExactDistribution> {
    let n = grid.n_steps();
    if strategy.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: strategy.len() });
    }
    let max = if include_index { MAX_CORRELATION_STEPS } else { MAX_UTILITY_STEPS };
    if n > max {
        return Err(Error::HorizonTooLarge { n_steps: n, max });
    }
    let bits_per = if include_index { 3 } else { 2 };
    let count = 1usize << (bits_per * n);
    let probability = 1.0 / count as f64;
    let mut outcomes = Vec::with_capacity(count);
    let start = MarketState::initial(params);
    for_each_joint(n, include_index, |shocks| {
        let end = run_suffix(params, grid, strategy.amounts(), 0, start, shocks);
        outcomes.push(ExactOutcome { wealth: end.x + end.i, index: end.b, probability });
    });
    Ok(ExactDistribution { outcomes })
}

/// Exact expected terminal utility `E[-exp(-gamma W)]` by enumeration of
/// the (stock, income) shock paths; the index shock integrates out.
pub fn exact_expected_utility(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
) -> Result<f64> {
    let dist = exact_distribution(params, grid, strategy, false)?;
    let utilities: Vec<f64> =
        dist.outcomes.iter().map(|o| -(-params.gamma * o.wealth).exp()).collect();
    Ok(mean(&utilities))
}

fn pearson_uniform(w: &[f64], b: &[f64]) -> Result<f64> {
    let mw = mean(w);
    let mb = mean(b);
    let n = w.len() as f64;
    let cw: Vec<f64> = w.iter().map(|v| v - mw).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let var_w = pairwise_sum(&cw.iter().map(|v| v * v).collect::<Vec<_>>()) / n;
    let var_b = pairwise_sum(&cb.iter().map(|v| v * v).collect::<Vec<_>>()) / n;
    // Variance at roundoff scale means the sample is constant.
    if var_w <= 1e-24 * (1.0 + mw * mw) || var_b <= 1e-24 * (1.0 + mb * mb) {
        return Err(Error::DegenerateVariance);
    }
    let cov =
        pairwise_sum(&cw.iter().zip(&cb).map(|(x, y)| x * y).collect::<Vec<_>>()) / n;
    Ok(cov / (var_w.sqrt() * var_b.sqrt()))
}

fn suffix_correlation(
    params: &MarketParams,
    grid: &TimeGrid,
    amounts: &[f64],
    start_step: usize,
    start: MarketState,
) -> Result<f64> {
    let n_suffix = grid.n_steps() - start_step;
    let count = 1usize << (3 * n_suffix);
    let mut w = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    for_each_joint(n_suffix, true, |shocks| {
        let end = run_suffix(params, grid, amounts, start_step, start, shocks);
        w.push(end.x + end.i);
        b.push(end.b);
    });
    pearson_uniform(&w, &b)
}

/// Exact conditional correlation of (W, B) given the path up to
/// `condition_step`, evaluated at every reachable conditioning state.
///
/// The closed form predicts a state-independent value; enumerating all
/// prefixes lets tests verify exactly that.
pub fn exact_correlation_all_prefixes(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
    condition_step: usize,
) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    if strategy.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: strategy.len() });
    }
    if condition_step >= n {
        return Err(Error::InvalidParameter {
            name: "condition_step",
            reason: format!("must be < n_steps = {n}, got {condition_step}"),
        });
    }
    let max = if condition_step == 0 { MAX_CORRELATION_STEPS } else { MAX_INTERIOR_STEPS };
    if n > max {
        return Err(Error::HorizonTooLarge { n_steps: n, max });
    }
    let start = MarketState::initial(params);
    let mut result = Vec::with_capacity(1 << (3 * condition_step));
    let mut first_err: Option<Error> = None;
    for_each_joint(condition_step, true, |prefix| {
        if first_err.is_some() {
            return;
        }
        let state = run_suffix(params, grid, strategy.amounts(), 0, start, prefix);
        match suffix_correlation(params, grid, strategy.amounts(), condition_step, state) {
            Ok(c) => result.push(c),
            Err(e) => first_err = Some(e),
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Exact conditional correlation at the canonical (first-enumerated)
/// conditioning state; at `condition_step = 0` this is the unconditional
/// correlation.
pub fn exact_correlation(
    params: &MarketParams,
    grid: &TimeGrid,
    strategy: &StrategyVector,
    condition_step: usize,
) -> Result<f64> {
    Ok(exact_correlation_all_prefixes(params, grid, strategy, condition_step)?[0])
}

/// Scan bounds and target spacing for the grid searches.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub resolution: f64,
}

impl GridSpec {
    pub fn new(lower: f64, upper: f64, resolution: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::InvalidParameter {
                name: "grid_bounds",
                reason: format!("lower {lower} must be below upper {upper}"),
            });
        }
        if !(resolution > 0.0) {
            return Err(Error::InvalidParameter {
                name: "resolution",
                reason: format!("must be > 0, got {resolution}"),
            });
        }
        Ok(Self { lower, upper, resolution })
    }

    /// Default bounds: five wealth units either side of the unconstrained
    /// level.
    pub fn around_unconstrained(
        params: &MarketParams,
        grid: &TimeGrid,
        resolution: f64,
    ) -> Result<Self> {
        let center = pi_bar(params, grid)?;
        Self::new(center - 5.0, center + 5.0, resolution)
    }
}

fn scan_stage(
    lo: f64,
    hi: f64,
    step_size: f64,
    eval: &mut impl FnMut(f64) -> Option<f64>,
) -> Option<(f64, f64)> {
    let count = ((hi - lo) / step_size).ceil().max(1.0) as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=count {
        let x = (lo + i as f64 * step_size).min(hi);
        if let Some(v) = eval(x) {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((x, v));
            }
        }
    }
    best
}

/// Coarse scan plus two local refinements down to the target resolution.
fn argmax_cascade(spec: &GridSpec, mut eval: impl FnMut(f64) -> Option<f64>) -> Result<f64> {
    let span = spec.upper - spec.lower;
    let direct = span / spec.resolution <= 2048.0;
    let stages: Vec<f64> = if direct {
        vec![spec.resolution]
    } else {
        vec![
            (spec.resolution * 100.0).min(span / 16.0),
            spec.resolution * 10.0,
            spec.resolution,
        ]
    };
    let mut window: Option<(f64, f64)> = None; // (center, half width)
    let mut best_x = f64::NAN;
    for &step_size in &stages {
        let (lo, hi) = match window {
            None => (spec.lower, spec.upper),
            Some((c, w)) => ((c - w).max(spec.lower), (c + w).min(spec.upper)),
        };
        match scan_stage(lo, hi, step_size, &mut eval) {
            Some((x, _)) => {
                best_x = x;
                window = Some((x, 2.0 * step_size));
            }
            None => return Err(Error::EmptyFeasibleSet),
        }
    }
    Ok(best_x)
}

/// Maximizes the exact conditional expected utility of the decision at
/// `t_{N - n_remaining}` over grid points whose exact enumerated
/// correlation satisfies the constraint, holding the future amounts fixed.
///
/// The conditioning state only shifts and scales the objective, so the
/// scan runs from the canonical initial state.
pub fn grid_search_single(
    params: &MarketParams,
    grid: &TimeGrid,
    future_tail: &[f64],
    n_remaining: usize,
    spec: &GridSpec,
) -> Result<f64> {
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
    if n_remaining > MAX_CORRELATION_STEPS {
        return Err(Error::HorizonTooLarge { n_steps: n_remaining, max: MAX_CORRELATION_STEPS });
    }
    let start_step = n_steps - n_remaining;
    let start = MarketState::initial(params);
    let mut amounts = vec![0.0; n_steps];
    amounts[start_step + 1..].copy_from_slice(future_tail);
    let wealth_count = 1usize << (2 * n_remaining);
    let mut utilities = Vec::with_capacity(wealth_count);
    let delta = params.delta;
    let gamma = params.gamma;
    let mut eval = |pi: f64| -> Option<f64> {
        amounts[start_step] = pi;
        let corr = suffix_correlation(params, grid, &amounts, start_step, start).ok()?;
        if corr > -delta {
            return None;
        }
        utilities.clear();
        for_each_joint(n_remaining, false, |shocks| {
            let end = run_suffix(params, grid, &amounts, start_step, start, shocks);
            utilities.push(-(-gamma * (end.x + end.i)).exp());
        });
        Some(mean(&utilities))
    };
    argmax_cascade(spec, &mut eval)
}

fn argmax_cascade_nd(
    n_dims: usize,
    spec: &GridSpec,
    mut eval: impl FnMut(&[f64]) -> Option<f64>,
) -> Result<Vec<f64>> {
    let span = spec.upper - spec.lower;
    let per_dim_cap = match n_dims {
        1 => 2048.0,
        2 => 256.0,
        _ => 64.0,
    };
    let coarse = (spec.resolution * 100.0).max(span / per_dim_cap);
    let stages: Vec<f64> = if coarse <= spec.resolution {
        vec![spec.resolution]
    } else {
        let mut s = vec![coarse];
        if spec.resolution * 10.0 < coarse {
            s.push(spec.resolution * 10.0);
        }
        s.push(spec.resolution);
        s
    };
    let mut window: Option<(Vec<f64>, f64)> = None;
    let mut best_x: Vec<f64> = Vec::new();
    for &step_size in &stages {
        let boxes: Vec<(f64, f64)> = match &window {
            None => vec![(spec.lower, spec.upper); n_dims],
            Some((center, w)) => center
                .iter()
                .map(|c| ((c - w).max(spec.lower), (c + w).min(spec.upper)))
                .collect(),
        };
        let counts: Vec<usize> = boxes
            .iter()
            .map(|(lo, hi)| ((hi - lo) / step_size).ceil().max(1.0) as usize)
            .collect();
        let mut idx = vec![0usize; n_dims];
        let mut point = vec![0.0; n_dims];
        let mut best: Option<(Vec<f64>, f64)> = None;
        loop {
            for d in 0..n_dims {
                point[d] = (boxes[d].0 + idx[d] as f64 * step_size).min(boxes[d].1);
            }
            if let Some(v) = eval(&point) {
                if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                    best = Some((point.clone(), v));
                }
            }
            // Odometer increment.
            let mut d = 0;
            loop {
                if d == n_dims {
                    break;
                }
                idx[d] += 1;
                if idx[d] <= counts[d] {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n_dims {
                break;
            }
        }
        match best {
            Some((x, _)) => {
                best_x = x.clone();
                window = Some((x, 2.0 * step_size));
            }
            None => return Err(Error::EmptyFeasibleSet),
        }
    }
    Ok(best_x)
}

/// Scans deterministic strategy vectors for the precommitment optimum
/// under the exact time-0 correlation constraint.
pub fn grid_search_cpc(
    params: &MarketParams,
    grid: &TimeGrid,
    spec: &GridSpec,
) -> Result<StrategyVector> {
    grid_search_cpc_with_bound(params, grid, spec, Some(params.delta))
}

/// Precommitment scan with an explicit bound; `None` disables the
/// constraint.
pub fn grid_search_cpc_with_bound(
    params: &MarketParams,
    grid: &TimeGrid,
    spec: &GridSpec,
    bound: Option<f64>,
) -> Result<StrategyVector> {
    let n = grid.n_steps();
    if n > MAX_CPC_SCAN_STEPS {
        return Err(Error::HorizonTooLarge { n_steps: n, max: MAX_CPC_SCAN_STEPS });
    }
    let start = MarketState::initial(params);
    let gamma = params.gamma;
    let wealth_count = 1usize << (2 * n);
    let mut utilities = Vec::with_capacity(wealth_count);
    let mut eval = |amounts: &[f64]| -> Option<f64> {
        if let Some(delta) = bound {
            let corr = suffix_correlation(params, grid, amounts, 0, start).ok()?;
            if corr > -delta {
                return None;
            }
        }
        utilities.clear();
        for_each_joint(n, false, |shocks| {
            let end = run_suffix(params, grid, amounts, 0, start, shocks);
            utilities.push(-(-gamma * (end.x + end.i)).exp());
        });
        Some(mean(&utilities))
    };
    let best = argmax_cascade_nd(n, spec, &mut eval)?;
    StrategyVector::new(best, StrategyKind::Custom)
}

/// Scans the exact one-step expected utility with no constraint: the
/// independent check of the unconstrained level. Runs on a one-step grid
/// (the per-step objective is the same at every date).
pub fn grid_search_unconstrained(
    params: &MarketParams,
    grid: &TimeGrid,
    spec: &GridSpec,
) -> Result<f64> {
    let one = TimeGrid::new(1, grid.h())?;
    let start = MarketState::initial(params);
    let gamma = params.gamma;
    let mut utilities = Vec::with_capacity(4);
    argmax_cascade(spec, |pi| {
        let amounts = [pi];
        utilities.clear();
        for_each_joint(1, false, |shocks| {
            let end = run_suffix(params, &one, &amounts, 0, start, shocks);
            utilities.push(-(-gamma * (end.x + end.i)).exp());
        });
        Some(mean(&utilities))
    })
}

/// Rebuilds the whole backward induction by nested grid search: each
/// step's optimum is located by scanning the exact conditional problem
/// with the future pinned to the already-scanned entries.
pub fn oracle_csgp(
    params: &MarketParams,
    grid: &TimeGrid,
    spec: &GridSpec,
) -> Result<StrategyVector> {
    let n = grid.n_steps();
    let mut future: Vec<f64> = Vec::with_capacity(n);
    for n_remaining in 1..=n {
        let entry = grid_search_single(params, grid, &future, n_remaining, spec)?;
        future.insert(0, entry);
    }
    StrategyVector::new(future, StrategyKind::Custom)
}

/// Outcome of the root-ordering check on one quadratic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RootOrderingReport {
    pub r_left: f64,
    pub r_right: f64,
    /// `-b2 / b1`, the point the constraint's linear side pins down.
    pub pivot: f64,
    pub q_at_pivot: f64,
    pub ok: bool,
}

/// Confirms `r_left <= -b2/b1 <= r_right` and `Q(-b2/b1) <= 0`.
pub fn verify_root_ordering(
    params: &MarketParams,
    grid: &TimeGrid,
    aggregates: &CorrelationAggregates,
) -> Result<RootOrderingReport> {
    let quad: QuadraticCap = crate::strategies::quadratic_cap(params, grid, aggregates)?;
    let c = crate::model::derive_constants(params, grid)?;
    let pivot = -aggregates.b2 / c.b1;
    let q_at_pivot = quad.eval(pivot);
    let scale = 1.0 + pivot.abs() + quad.r_left.abs() + quad.r_right.abs();
    let tol = 1e-12 * scale;
    let ok = quad.r_left <= pivot + tol && pivot <= quad.r_right + tol && q_at_pivot <= tol;
    Ok(RootOrderingReport { r_left: quad.r_left, r_right: quad.r_right, pivot, q_at_pivot, ok })
}

/// Deterministic sampler of valid, admissible parameter sets for the
/// randomized batteries.
pub struct AdmissibleSampler {
    state: u64,
}

impl AdmissibleSampler {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        avalanche(self.state)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
        lo + u * (hi - lo)
    }

    /// Draws a parameter set satisfying every model invariant with
    /// `delta` strictly inside the admissibility bound for the grid.
    pub fn draw(&mut self, n_steps: usize, h: f64) -> (MarketParams, TimeGrid) {
        let grid = TimeGrid::new(n_steps, h).expect("valid grid");
        loop {
            let a31 = self.uniform(0.25, 0.90);
            let a32 = self.uniform(0.05, 0.95) * (1.0 - a31 * a31).sqrt();
            let mut params = MarketParams {
                mu1: self.uniform(-0.08, 0.08),
                sigma1: self.uniform(0.15, 0.50),
                mu2: self.uniform(-0.05, 0.05),
                sigma2: self.uniform(0.02, 0.20),
                k: self.uniform(-0.10, 0.10),
                mu3: self.uniform(0.0, 0.08),
                sigma3: self.uniform(0.10, 0.40),
                a31,
                a32,
                gamma: self.uniform(0.2, 2.0),
                delta: 0.01,
                x0: 1.0,
                i0: 1.0,
                b0: 1.0,
            };
            if params.validate(&grid).is_err() {
                continue;
            }
            let bound = match crate::strategies::admissibility_bound(&params, &grid) {
                Ok(b) => b,
                Err(_) => continue,
            };
            params.delta = self.uniform(0.05, 0.95) * bound;
            if params.delta <= 1e-6 || params.validate(&grid).is_err() {
                continue;
            }
            return (params, grid);
        }
    }

    pub fn draw_amounts(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }
}

/// One named pass/fail line of the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> VerificationOutcome {
    VerificationOutcome { name: name.to_string(), passed, detail }
}

/// Runs the oracle battery: closed forms against enumeration, root
/// ordering on random draws, grid-search reconstructions of every
/// strategy, moment identities, and a Monte Carlo consistency check.
///
/// Pure and deterministic for fixed inputs; failures are carried in the
/// report rather than raised.
pub fn verification_report(
    params: &MarketParams,
    grid: &TimeGrid,
    n_sim: usize,
    seed: u64,
) -> Vec<VerificationOutcome> {
    use crate::strategies::{
        aggregates_for_step, conditional_correlation, cpc, csgp, unconditional_correlation,
    };
    let mut out = Vec::new();

    // Closed-form conditional correlation vs exact enumeration on random
    // admissible parameter sets, every conditioning step and prefix state.
    {
        let mut sampler = AdmissibleSampler::new(seed.wrapping_add(1));
        let mut max_err: f64 = 0.0;
        let mut checked = 0usize;
        let mut failure = None;
        'outer: for _ in 0..40 {
            let n = 1 + (sampler.next_u64() % 3) as usize;
            let h = 0.5 + sampler.uniform(0.0, 1.0);
            let (p, g) = sampler.draw(n, h);
            let amounts = sampler.draw_amounts(n, -2.0, 2.0);
            let strategy = match StrategyVector::new(amounts, StrategyKind::Custom) {
                Ok(s) => s,
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            };
            for m in 0..n {
                let step_result = (|| -> Result<()> {
                    let agg = aggregates_for_step(&p, &g, &strategy.amounts()[m + 1..], n - m)?;
                    let closed = conditional_correlation(&p, &g, strategy.amounts()[m], &agg)?;
                    for enumerated in exact_correlation_all_prefixes(&p, &g, &strategy, m)? {
                        max_err = max_err.max((enumerated - closed).abs());
                        checked += 1;
                    }
                    Ok(())
                })();
                if let Err(e) = step_result {
                    failure = Some(e.to_string());
                    break 'outer;
                }
            }
        }
        let passed = failure.is_none() && max_err < 1e-10;
        let detail = match failure {
            Some(e) => format!("error: {e}"),
            None => format!("{checked} comparisons, max |closed - enumerated| = {max_err:.3e}"),
        };
        out.push(outcome("correlation-closed-form-vs-enumeration", passed, detail));
    }

    // Root ordering of the cap quadratic on random draws, both b2 signs.
    {
        let mut sampler = AdmissibleSampler::new(seed.wrapping_add(2));
        let mut ok = true;
        let mut first_bad = String::new();
        for i in 0..10_000 {
            let n = 1 + (sampler.next_u64() % 6) as usize;
            let (p, g) = sampler.draw(n, 1.0);
            let tail = sampler.draw_amounts(n - 1, -2.0, 2.0);
            let agg = match crate::strategies::aggregates_for_step(&p, &g, &tail, n) {
                Ok(a) => a,
                Err(_) => continue,
            };
            let flipped = CorrelationAggregates { b2: -agg.b2, ..agg };
            for variant in [agg, flipped] {
                match verify_root_ordering(&p, &g, &variant) {
                    Ok(rep) if rep.ok => {}
                    Ok(rep) => {
                        ok = false;
                        if first_bad.is_empty() {
                            first_bad = format!("draw {i}: {rep:?}");
                        }
                    }
                    Err(e) => {
                        ok = false;
                        if first_bad.is_empty() {
                            first_bad = format!("draw {i}: {e}");
                        }
                    }
                }
            }
        }
        let detail = if ok { "10000 draws, both b2 signs".to_string() } else { first_bad };
        out.push(outcome("root-ordering", ok, detail));
    }

    // Enumerated conditional correlation sits at -delta wherever the cap
    // binds along the backward induction.
    {
        let n = grid.n_steps().min(MAX_INTERIOR_STEPS);
        let small = TimeGrid::new(n, grid.h()).expect("valid grid");
        let result = (|| -> Result<f64> {
            let s = csgp(params, &small)?;
            let level = crate::strategies::pi_bar(params, &small)?;
            let mut worst: f64 = 0.0;
            for m in 0..n {
                if s.amounts()[m] < level {
                    for rho in exact_correlation_all_prefixes(params, &small, &s, m)? {
                        worst = worst.max((rho + params.delta).abs());
                    }
                }
            }
            Ok(worst)
        })();
        match result {
            Ok(worst) => out.push(outcome(
                "binding-cap-enumeration",
                worst < 1e-8,
                format!("N = {n}, max |corr + delta| = {worst:.3e} over binding steps"),
            )),
            Err(e) => out.push(outcome("binding-cap-enumeration", false, e.to_string())),
        }
    }

    // Backward induction against its nested grid-search reconstruction.
    {
        let result = (|| -> Result<(f64, f64)> {
            let g2 = TimeGrid::new(2, grid.h())?;
            let spec = GridSpec::around_unconstrained(params, &g2, 1e-4)?;
            let scanned = oracle_csgp(params, &g2, &spec)?;
            let closed = csgp(params, &g2)?;
            let d0 = (scanned.amounts()[0] - closed.amounts()[0]).abs();
            let d1 = (scanned.amounts()[1] - closed.amounts()[1]).abs();
            Ok((d0, d1))
        })();
        match result {
            Ok((d0, d1)) => out.push(outcome(
                "csgp-vs-nested-grid-search",
                d0 <= 1.01e-4 && d1 <= 1.01e-4,
                format!("N = 2, resolution 1e-4, |diff| = ({d0:.2e}, {d1:.2e})"),
            )),
            Err(e) => out.push(outcome("csgp-vs-nested-grid-search", false, e.to_string())),
        }
    }

    // Precommitment closed form against the two-dimensional scan.
    {
        let result = (|| -> Result<f64> {
            let g2 = TimeGrid::new(2, grid.h())?;
            let spec = GridSpec::around_unconstrained(params, &g2, 1e-3)?;
            let scanned = grid_search_cpc(params, &g2, &spec)?;
            let closed = cpc(params, &g2)?;
            let d = (0..2)
                .map(|i| (scanned.amounts()[i] - closed.amounts()[i]).abs())
                .fold(0.0f64, f64::max);
            Ok(d)
        })();
        match result {
            Ok(d) => out.push(outcome(
                "cpc-vs-grid-search",
                d <= 1.51e-3,
                format!("N = 2, resolution 1e-3, max |diff| = {d:.2e}"),
            )),
            Err(e) => out.push(outcome("cpc-vs-grid-search", false, e.to_string())),
        }
    }

    // Unconstrained level against a plain scan of the exact one-step
    // objective.
    {
        let result = (|| -> Result<(f64, f64)> {
            let g1 = TimeGrid::new(1, grid.h())?;
            let level = crate::strategies::pi_bar(params, &g1)?;
            let spec = GridSpec::around_unconstrained(params, &g1, 1e-6)?;
            let scanned = grid_search_unconstrained(params, &g1, &spec)?;
            Ok((scanned, level))
        })();
        match result {
            Ok((scanned, level)) => out.push(outcome(
                "unconstrained-level-vs-grid-search",
                (scanned - level).abs() <= 1.01e-6,
                format!("scan = {scanned:.9}, closed form = {level:.9}"),
            )),
            Err(e) => out.push(outcome("unconstrained-level-vs-grid-search", false, e.to_string())),
        }
    }

    // Enumerated index / income moments against their closed forms.
    {
        let n = grid.n_steps().min(MAX_INTERIOR_STEPS);
        let small = TimeGrid::new(n, grid.h()).expect("valid grid");
        let result = (|| -> Result<f64> {
            let zero = StrategyVector::new(vec![0.0; n], StrategyKind::Custom)?;
            let dist = exact_distribution(params, &small, &zero, true)?;
            let consts = crate::model::derive_constants(params, &small)?;
            let b: Vec<f64> = dist.outcomes.iter().map(|o| o.index).collect();
            let mb = mean(&b);
            let mut worst = (mb - params.b0 * consts.mu3_tilde.powi(n as i32)).abs();
            let var_b = mean(&b.iter().map(|v| (v - mb) * (v - mb)).collect::<Vec<_>>());
            let mu3t_sq = consts.mu3_tilde * consts.mu3_tilde;
            let s3h = params.sigma3 * params.sigma3 * small.h();
            let var_b_closed =
                params.b0 * params.b0 * ((mu3t_sq + s3h).powi(n as i32) - mu3t_sq.powi(n as i32));
            worst = worst.max((var_b - var_b_closed).abs());
            let w: Vec<f64> = dist.outcomes.iter().map(|o| o.wealth).collect();
            let mw = mean(&w);
            let var_i = mean(&w.iter().map(|v| (v - mw) * (v - mw)).collect::<Vec<_>>());
            let var_i_closed: f64 = consts.m_diff
                * consts.m_diff
                * (1..=n).map(|s| (2.0 * params.k * small.t(s)).exp()).sum::<f64>();
            worst = worst.max((var_i - var_i_closed).abs());
            Ok(worst)
        })();
        match result {
            Ok(worst) => out.push(outcome(
                "moment-identities",
                worst < 1e-10,
                format!("N = {n}, max abs deviation = {worst:.3e}"),
            )),
            Err(e) => out.push(outcome("moment-identities", false, e.to_string())),
        }
    }

    // Monte Carlo estimate against the enumerated expectation.
    {
        let result = (|| -> Result<(f64, f64, f64)> {
            let g2 = TimeGrid::new(2, grid.h())?;
            let s = csgp(params, &g2)?;
            let exact = exact_expected_utility(params, &g2, &s)?;
            let cfg = crate::montecarlo::SimulationConfig {
                n_sim,
                seed,
                chunk_size: 65_536,
            };
            let rep = crate::montecarlo::run(params, &g2, &s, &cfg)?;
            Ok((rep.expected_utility, exact, rep.utility_stderr))
        })();
        match result {
            Ok((mc, exact, se)) => out.push(outcome(
                "monte-carlo-vs-enumeration",
                (mc - exact).abs() < 4.0 * se,
                format!("mc = {mc:.6}, exact = {exact:.6}, stderr = {se:.2e}"),
            )),
            Err(e) => out.push(outcome("monte-carlo-vs-enumeration", false, e.to_string())),
        }
    }

    // Sampled terminal correlation of the constrained strategy sits at the
    // bound.
    {
        let result = (|| -> Result<(f64, f64)> {
            let s = csgp(params, grid)?;
            let cfg = crate::montecarlo::SimulationConfig { n_sim, seed, chunk_size: 65_536 };
            let rep = crate::montecarlo::run(params, grid, &s, &cfg)?;
            let rho = rep.sample_correlation.ok_or(Error::DegenerateVariance)?;
            let rho_closed = unconditional_correlation(params, grid, &s)?;
            Ok((rho, rho_closed))
        })();
        let tol = (5.0 / (n_sim as f64).sqrt()).max(0.005);
        match result {
            Ok((rho, rho_closed)) => out.push(outcome(
                "binding-cap-monte-carlo",
                (rho - rho_closed).abs() < tol,
                format!("sample corr = {rho:.5}, closed form = {rho_closed:.5}, tol = {tol:.4}"),
            )),
            Err(e) => out.push(outcome("binding-cap-monte-carlo", false, e.to_string())),
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::{
        aggregates_for_step, conditional_correlation, csgp, cpc,
        single_period_cap_half_diff, single_period_cap_half_sum, unconditional_correlation,
    };

    fn reference_params() -> MarketParams {
        MarketParams {
            mu1: 0.07,
            sigma1: 0.30,
            mu2: 0.03,
            sigma2: 0.10,
            k: 0.0,
            mu3: 0.05,
            sigma3: 0.25,
            a31: 0.6,
            a32: 0.6,
            gamma: 0.5,
            delta: 0.09,
            x0: 1.0,
            i0: 1.0,
            b0: 1.0,
        }
    }

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n, 1.0).unwrap()
    }

    fn zero_strategy(n: usize) -> StrategyVector {
        StrategyVector::new(vec![0.0; n], StrategyKind::Custom).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = reference_params();
        let g = grid(3);
        let s = zero_strategy(3);
        let wealth_only = exact_distribution(&p, &g, &s, false).unwrap();
        assert_eq!(wealth_only.outcomes.len(), 64);
        assert!(close(wealth_only.total_probability(), 1.0, 1e-12));
        let joint = exact_distribution(&p, &g, &s, true).unwrap();
        assert_eq!(joint.outcomes.len(), 512);
        assert!(close(joint.total_probability(), 1.0, 1e-12));
    }

    #[test]
    fn expected_utility_two_point_closed_form() {
        let p = reference_params();
        let g = grid(1);
        let eu = exact_expected_utility(&p, &g, &zero_strategy(1)).unwrap();
        // W is 2.13 or 2.07 with probability 1/2 each.
        let expected = -0.5 * ((-0.5f64 * 2.13).exp() + (-0.5f64 * 2.07).exp());
        assert!(close(eu, expected, 1e-15));
        assert!(close(eu, -0.3499771, 1e-7));
    }

    #[test]
    fn expected_utility_low_risk_aversion_spot() {
        let mut p = reference_params();
        p.gamma = 0.25;
        let g = grid(1);
        let eu = exact_expected_utility(&p, &g, &zero_strategy(1)).unwrap();
        let expected = -0.5 * ((-0.25f64 * 2.13).exp() + (-0.25f64 * 2.07).exp());
        assert!(close(eu, expected, 1e-15));
        assert!(close(eu, -0.5915720, 1e-7));
        // More risk aversion pushes exponential utility further from zero.
        let eu_base = exact_expected_utility(&reference_params(), &g, &zero_strategy(1)).unwrap();
        assert!(eu < eu_base);
    }

    #[test]
    fn expected_utility_rejects_large_horizon() {
        let p = reference_params();
        let g = grid(11);
        assert!(matches!(
            exact_expected_utility(&p, &g, &zero_strategy(11)),
            Err(Error::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn index_moment_identities() {
        // Enumerated moments of B and I against their closed forms,
        // including income growth (k != 0).
        let mut p = reference_params();
        p.k = 0.1;
        let g = grid(4);
        let dist = exact_distribution(&p, &g, &zero_strategy(4), true).unwrap();
        let b: Vec<f64> = dist.outcomes.iter().map(|o| o.index).collect();
        let mb = mean(&b);
        let mu3t: f64 = 1.05;
        assert!(close(mb, mu3t.powi(4), 1e-10));
        let var_b = {
            let c: Vec<f64> = b.iter().map(|v| (v - mb) * (v - mb)).collect();
            mean(&c)
        };
        let expected_var_b = (mu3t * mu3t + 0.0625).powi(4) - mu3t.powi(8);
        assert!(close(var_b, expected_var_b, 1e-10));

        let wealth: Vec<f64> = dist.outcomes.iter().map(|o| o.wealth).collect();
        let mw = mean(&wealth);
        let var_income = {
            let c: Vec<f64> = wealth.iter().map(|v| (v - mw) * (v - mw)).collect();
            mean(&c)
        };
        // Strategy is zero, so wealth variance is income variance:
        // m_diff^2 sum_s exp(2 k t_s).
        let m_diff = 0.03;
        let expected: f64 =
            (1..=4).map(|s| (2.0f64 * 0.1 * s as f64).exp()).sum::<f64>() * m_diff * m_diff;
        assert!(close(var_income, expected, 1e-10));
    }

    #[test]
    fn enumerated_correlation_limits() {
        let p = reference_params();
        let g = grid(1);
        let rho = exact_correlation(&p, &g, &zero_strategy(1), 0).unwrap();
        assert!(close(rho, 0.6, 1e-12));
    }

    #[test]
    fn enumerated_correlation_against_closed_form_battery() {
        let mut sampler = AdmissibleSampler::new(7);
        for _ in 0..20 {
            let n = 1 + (sampler.next_u64() % 3) as usize;
            let h = 0.5 + sampler.uniform(0.0, 1.0);
            let (p, g) = sampler.draw(n, h);
            let amounts = sampler.draw_amounts(n, -2.0, 2.0);
            let strategy = StrategyVector::new(amounts, StrategyKind::Custom).unwrap();
            for m in 0..n {
                let n_remaining = n - m;
                let agg =
                    aggregates_for_step(&p, &g, &strategy.amounts()[m + 1..], n_remaining).unwrap();
                let closed =
                    conditional_correlation(&p, &g, strategy.amounts()[m], &agg).unwrap();
                for enumerated in
                    exact_correlation_all_prefixes(&p, &g, &strategy, m).unwrap()
                {
                    assert!(
                        close(enumerated, closed, 1e-10),
                        "n={n} m={m}: enumerated={enumerated} closed={closed}"
                    );
                }
            }
        }
    }

    #[test]
    fn correlation_horizon_guards() {
        let p = reference_params();
        assert!(matches!(
            exact_correlation(&p, &grid(7), &zero_strategy(7), 0),
            Err(Error::HorizonTooLarge { .. })
        ));
        assert!(matches!(
            exact_correlation(&p, &grid(5), &zero_strategy(5), 1),
            Err(Error::HorizonTooLarge { .. })
        ));
        let mut deterministic = reference_params();
        deterministic.mu2 = 0.1;
        deterministic.sigma2 = 0.0; // deterministic income: no wealth randomness at pi = 0
        assert!(matches!(
            exact_correlation(&deterministic, &grid(1), &zero_strategy(1), 0),
            Err(Error::DegenerateVariance)
        ));
    }

    #[test]
    fn cap_bisection_on_enumerated_correlation() {
        // Bisect the enumerated correlation itself to find where it crosses
        // -delta, then compare with the closed-form cap.
        let p = reference_params();
        let g = grid(1);
        let cap = single_period_cap_half_diff(&p, &g).unwrap();
        let corr_at = |pi: f64| {
            let s = StrategyVector::new(vec![pi], StrategyKind::Custom).unwrap();
            exact_correlation(&p, &g, &s, 0).unwrap()
        };
        let (mut lo, mut hi) = (-1.0, 0.0);
        assert!(corr_at(lo) < -p.delta && corr_at(hi) > -p.delta);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if corr_at(mid) <= -p.delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(close(lo, cap, 1e-9), "bisected={lo} closed={cap}");
        // The half-sum variant misses the crossing point by a wide margin.
        let half_sum = single_period_cap_half_sum(&p, &g).unwrap();
        assert!((half_sum - lo).abs() > 0.1);
        assert!(close(corr_at(cap), -0.09, 1e-10));
    }

    #[test]
    fn csgp_binding_correlation_enumerated() {
        let p = reference_params();
        let g = grid(2);
        let s = csgp(&p, &g).unwrap();
        let rho0 = exact_correlation(&p, &g, &s, 0).unwrap();
        assert!(rho0 <= -0.09 + 1e-9);
        assert!(close(rho0, -0.09, 1e-6));
        for interior in exact_correlation_all_prefixes(&p, &g, &s, 1).unwrap() {
            assert!(close(interior, -0.09, 1e-9));
        }
    }

    #[test]
    fn grid_search_single_finds_the_cap() {
        let p = reference_params();
        let g = grid(1);
        let spec = GridSpec::new(-5.0, 5.0, 1e-4).unwrap();
        let found = grid_search_single(&p, &g, &[], 1, &spec).unwrap();
        let cap = single_period_cap_half_diff(&p, &g).unwrap();
        assert!(close(found, cap, 1.0001e-4), "found={found} cap={cap}");
    }

    #[test]
    fn grid_search_single_interior_optimum() {
        let mut p = reference_params();
        p.mu1 = -0.20;
        let g = grid(1);
        let level = pi_bar(&p, &g).unwrap();
        let spec = GridSpec::around_unconstrained(&p, &g, 1e-4).unwrap();
        let found = grid_search_single(&p, &g, &[], 1, &spec).unwrap();
        assert!(close(found, level, 1.0001e-4), "found={found} level={level}");
    }

    #[test]
    fn grid_search_single_empty_feasible_set() {
        let mut p = reference_params();
        p.delta = 0.65; // beyond a31: nothing satisfies the constraint
        let g = grid(1);
        let spec = GridSpec::new(-5.0, 5.0, 1e-3).unwrap();
        assert!(matches!(
            grid_search_single(&p, &g, &[], 1, &spec),
            Err(Error::EmptyFeasibleSet)
        ));
    }

    #[test]
    fn grid_search_cpc_two_periods() {
        let p = reference_params();
        let g = grid(2);
        let spec = GridSpec::around_unconstrained(&p, &g, 1e-3).unwrap();
        let found = grid_search_cpc(&p, &g, &spec).unwrap();
        let closed = cpc(&p, &g).unwrap();
        for i in 0..2 {
            assert!(
                close(found.amounts()[i], closed.amounts()[i], 1.5e-3),
                "i={i} found={} closed={}",
                found.amounts()[i],
                closed.amounts()[i]
            );
        }
        // Components agree within resolution.
        assert!(close(found.amounts()[0], found.amounts()[1], 2e-3));
    }

    #[test]
    fn grid_search_cpc_one_period_reduces_to_single() {
        let p = reference_params();
        let g = grid(1);
        let spec = GridSpec::new(-5.0, 5.0, 1e-3).unwrap();
        let nd = grid_search_cpc(&p, &g, &spec).unwrap();
        let single = grid_search_single(&p, &g, &[], 1, &spec).unwrap();
        assert!(close(nd.amounts()[0], single, 1e-12));
    }

    #[test]
    fn grid_search_cpc_unconstrained_limit() {
        let p = reference_params();
        let g = grid(2);
        let level = pi_bar(&p, &g).unwrap();
        let spec = GridSpec::around_unconstrained(&p, &g, 1e-3).unwrap();
        let found = grid_search_cpc_with_bound(&p, &g, &spec, None).unwrap();
        for i in 0..2 {
            assert!(close(found.amounts()[i], level, 1.5e-3));
        }
    }

    #[test]
    fn grid_search_cpc_horizon_guard() {
        let p = reference_params();
        let g = grid(4);
        let spec = GridSpec::new(-5.0, 5.0, 1e-2).unwrap();
        assert!(matches!(
            grid_search_cpc(&p, &g, &spec),
            Err(Error::HorizonTooLarge { .. })
        ));
    }

    #[test]
    fn root_ordering_cases() {
        let p = reference_params();
        let g = grid(2);
        for n_remaining in [1usize, 2] {
            let tail: Vec<f64> = if n_remaining == 2 { vec![-0.1238] } else { vec![] };
            let agg = aggregates_for_step(&p, &g, &tail, n_remaining).unwrap();
            let report = verify_root_ordering(&p, &g, &agg).unwrap();
            assert!(report.ok, "{report:?}");
            // Synthetic sign flip of b2 exercises the other case.
            let flipped = CorrelationAggregates {
                b2: -agg.b2,
                k2_sq: agg.k2_sq,
                n_remaining,
            };
            let report = verify_root_ordering(&p, &g, &flipped).unwrap();
            assert!(report.ok, "{report:?}");
        }
        // Near the admissibility bound the quadratic flattens but the
        // ordering still holds.
        let mut tight = p;
        let bound = crate::strategies::admissibility_bound(&tight, &g).unwrap();
        tight.delta = 0.99 * bound;
        let agg = aggregates_for_step(&tight, &g, &[-0.5], 2).unwrap();
        let report = verify_root_ordering(&tight, &g, &agg).unwrap();
        assert!(report.ok, "{report:?}");
    }

    #[test]
    fn tighter_constraint_never_improves_exact_utility() {
        // Constraint-set nesting: raising delta cannot raise the exact
        // expected utility of the backward-induction strategy.
        let g = grid(2);
        let mut prev = f64::INFINITY;
        for i in 1..=40 {
            let mut p = reference_params();
            p.delta = 0.01 * i as f64;
            let s = csgp(&p, &g).unwrap();
            let eu = exact_expected_utility(&p, &g, &s).unwrap();
            assert!(eu <= prev + 1e-14, "delta={}: {eu} > {prev}", p.delta);
            prev = eu;
        }
    }

    #[test]
    fn unconditional_correlation_matches_enumeration_for_csgp() {
        let p = reference_params();
        let g = grid(3);
        let s = csgp(&p, &g).unwrap();
        let closed = unconditional_correlation(&p, &g, &s).unwrap();
        let enumerated = exact_correlation(&p, &g, &s, 0).unwrap();
        assert!(close(closed, enumerated, 1e-10));
    }
}
