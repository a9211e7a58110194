//! Experiment configuration, sweep execution and CSV/JSON emission.
//!
//! A sweep varies one of `delta`, `n_steps` or `sigma13` (which sets
//! `sigma1 = sigma3`), recomputes the configured strategies at every
//! value, runs the Monte Carlo estimator, and emits one row per
//! (value, strategy). Inadmissible or invalid points become skip rows
//! that name the reason instead of aborting the sweep.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketParams, TimeGrid};
use crate::montecarlo::{self, SimulationConfig};
use crate::strategies::{self, StrategyKind, StrategyVector};

/// Grid settings as they appear in config files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_steps: usize,
    pub h: f64,
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.n_steps, self.h)
    }
}

/// The variable a sweep iterates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Delta,
    NSteps,
    /// Sets `sigma1 = sigma3` to the sweep value.
    Sigma13,
}

impl std::fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepVariable::Delta => "delta",
            SweepVariable::NSteps => "n_steps",
            SweepVariable::Sigma13 => "sigma13",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// One experiment: market, grid, simulation size, sweep and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub market: MarketParams,
    pub grid: GridConfig,
    pub simulation: SimulationConfig,
    pub sweep: SweepSpec,
    pub strategies: Vec<StrategyKind>,
    pub output: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        if self.strategies.contains(&StrategyKind::Custom) {
            return Err(Error::Config("strategies must be a subset of UnSGP/CSGP/CPC".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep.values must not be empty".into()));
        }
        if self.sweep.variable == SweepVariable::NSteps {
            for &v in &self.sweep.values {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "n_steps sweep values must be positive integers, got {v}"
                    )));
                }
            }
        }
        self.grid.build()?;
        self.simulation.validate()?;
        Ok(())
    }
}

/// Reference configuration mirroring the simulation-study parameter set;
/// used as the built-in default for `verify` and as a documented example.
pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig {
        market: MarketParams {
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
        },
        grid: GridConfig { n_steps: 8, h: 1.0 },
        simulation: SimulationConfig { n_sim: 1_000_000, seed: 0, chunk_size: 65_536 },
        sweep: SweepSpec {
            variable: SweepVariable::Delta,
            values: vec![0.01, 0.05, 0.10],
        },
        strategies: vec![StrategyKind::UnSgp, StrategyKind::Csgp, StrategyKind::Cpc],
        output: PathBuf::from("sweep.csv"),
        format: OutputFormat::Csv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Skipped,
}

/// One emitted data point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub sweep_variable: SweepVariable,
    pub sweep_value: f64,
    pub strategy: StrategyKind,
    pub status: RowStatus,
    pub is_base: bool,
    pub entries: Vec<f64>,
    pub expected_utility: Option<f64>,
    pub utility_stderr: Option<f64>,
    pub p05: Option<f64>,
    pub risk_shortfall: Option<f64>,
    pub sample_correlation: Option<f64>,
    /// Time-0 correlation of the unconstrained strategy's wealth with the
    /// index; populated on sigma13 sweeps (the sweep's x-axis quantity).
    pub rho_unconstrained: Option<f64>,
    pub utility_rel_change: Option<f64>,
    pub risk_rel_change: Option<f64>,
    pub note: String,
}

impl SweepRow {
    fn skipped(variable: SweepVariable, value: f64, strategy: StrategyKind, note: String) -> Self {
        SweepRow {
            sweep_variable: variable,
            sweep_value: value,
            strategy,
            status: RowStatus::Skipped,
            is_base: false,
            entries: Vec::new(),
            expected_utility: None,
            utility_stderr: None,
            p05: None,
            risk_shortfall: None,
            sample_correlation: None,
            rho_unconstrained: None,
            utility_rel_change: None,
            risk_rel_change: None,
            note: sanitize(&note),
        }
    }
}

fn sanitize(note: &str) -> String {
    note.replace([',', '\n'], ";")
}

fn strategy_rank(kind: StrategyKind) -> u8 {
    match kind {
        StrategyKind::UnSgp => 0,
        StrategyKind::Csgp => 1,
        StrategyKind::Cpc => 2,
        StrategyKind::Custom => 3,
    }
}

fn apply_sweep_value(
    config: &ExperimentConfig,
    value: f64,
) -> Result<(MarketParams, TimeGrid)> {
    let mut params = config.market;
    let mut grid_cfg = config.grid;
    match config.sweep.variable {
        SweepVariable::Delta => params.delta = value,
        SweepVariable::NSteps => grid_cfg.n_steps = value as usize,
        SweepVariable::Sigma13 => {
            params.sigma1 = value;
            params.sigma3 = value;
        }
    }
    let grid = grid_cfg.build()?;
    params.validate(&grid)?;
    Ok((params, grid))
}

fn build_strategy(
    kind: StrategyKind,
    params: &MarketParams,
    grid: &TimeGrid,
) -> Result<StrategyVector> {
    match kind {
        StrategyKind::UnSgp => strategies::unconstrained(params, grid),
        StrategyKind::Csgp => strategies::csgp(params, grid),
        StrategyKind::Cpc => strategies::cpc(params, grid),
        StrategyKind::Custom => Err(Error::Config("custom strategies cannot be swept".into())),
    }
}

/// Runs the configured sweep: one row per (value, strategy), sorted by
/// (value, strategy), with relative changes against each strategy's row at
/// the smallest admissible value.
pub fn run_config(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let variable = config.sweep.variable;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &value in &config.sweep.values {
        let (params, grid) = match apply_sweep_value(config, value) {
            Ok(pg) => pg,
            Err(e) => {
                for &kind in &config.strategies {
                    rows.push(SweepRow::skipped(variable, value, kind, e.to_string()));
                }
                continue;
            }
        };
        // The sigma sweep's x-axis: correlation of the unconstrained
        // strategy's terminal wealth with the index.
        let rho_unconstrained = if variable == SweepVariable::Sigma13 {
            strategies::unconstrained(&params, &grid)
                .and_then(|s| strategies::unconditional_correlation(&params, &grid, &s))
                .ok()
        } else {
            None
        };
        for &kind in &config.strategies {
            let strategy = match build_strategy(kind, &params, &grid) {
                Ok(s) => s,
                Err(Error::InadmissibleDelta { delta, bound }) => {
                    rows.push(SweepRow::skipped(
                        variable,
                        value,
                        kind,
                        format!(
                            "inadmissible delta {delta:.6}: bound b1/k1_N = {bound:.6} at N = {}",
                            grid.n_steps()
                        ),
                    ));
                    continue;
                }
                Err(e) => {
                    rows.push(SweepRow::skipped(variable, value, kind, e.to_string()));
                    continue;
                }
            };
            let report = montecarlo::run(&params, &grid, &strategy, &config.simulation)?;
            rows.push(SweepRow {
                sweep_variable: variable,
                sweep_value: value,
                strategy: kind,
                status: RowStatus::Ok,
                is_base: false,
                entries: strategy.amounts().to_vec(),
                expected_utility: Some(report.expected_utility),
                utility_stderr: Some(report.utility_stderr),
                p05: Some(report.p05),
                risk_shortfall: Some(report.risk_shortfall),
                sample_correlation: report.sample_correlation,
                rho_unconstrained,
                utility_rel_change: None,
                risk_rel_change: None,
                note: String::new(),
            });
        }
    }
    if rows.iter().all(|r| r.status == RowStatus::Skipped) {
        return Err(Error::AllValuesInadmissible);
    }
    rows.sort_by(|a, b| {
        a.sweep_value
            .total_cmp(&b.sweep_value)
            .then_with(|| strategy_rank(a.strategy).cmp(&strategy_rank(b.strategy)))
    });
    // Relative changes against each strategy's row at the smallest
    // admissible sweep value.
    for &kind in &config.strategies {
        let base = rows
            .iter()
            .position(|r| r.strategy == kind && r.status == RowStatus::Ok);
        let Some(base_idx) = base else { continue };
        let base_utility = rows[base_idx].expected_utility.unwrap();
        let base_risk = rows[base_idx].risk_shortfall.unwrap();
        rows[base_idx].is_base = true;
        for row in rows.iter_mut().filter(|r| r.strategy == kind && r.status == RowStatus::Ok) {
            row.utility_rel_change =
                montecarlo::relative_change(row.expected_utility.unwrap(), base_utility).ok();
            row.risk_rel_change =
                montecarlo::relative_change(row.risk_shortfall.unwrap(), base_risk).ok();
        }
    }
    Ok(rows)
}

/// `run_config` restricted to the sigma13 sweep.
pub fn sigma_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    if config.sweep.variable != SweepVariable::Sigma13 {
        return Err(Error::Config("sigma_sweep requires sweep.variable = sigma13".into()));
    }
    run_config(config)
}

/// Nine significant digits, locale-free.
fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub const CSV_HEADER: &str = "sweep_variable,sweep_value,strategy,status,is_base,entries,\
expected_utility,utility_stderr,p05,risk_shortfall,sample_correlation,rho_unconstrained,\
utility_rel_change,risk_rel_change,note";

/// Renders rows in the fixed column order. Entries are joined with ';'
/// inside one cell.
pub fn render_csv(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let entries = r.entries.iter().map(|&e| fmt_sig(e)).collect::<Vec<_>>().join(";");
        let status = match r.status {
            RowStatus::Ok => "ok",
            RowStatus::Skipped => "skipped",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sweep_variable,
            fmt_sig(r.sweep_value),
            r.strategy,
            status,
            r.is_base,
            entries,
            fmt_opt(r.expected_utility),
            fmt_opt(r.utility_stderr),
            fmt_opt(r.p05),
            fmt_opt(r.risk_shortfall),
            fmt_opt(r.sample_correlation),
            fmt_opt(r.rho_unconstrained),
            fmt_opt(r.utility_rel_change),
            fmt_opt(r.risk_rel_change),
            r.note
        )
        .expect("write to string");
    }
    Ok(out)
}

/// Renders rows as a JSON array (full float precision, round-trippable).
pub fn render_json(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    Ok(text)
}

/// Writes rows to `path` in the requested format.
pub fn emit(rows: &[SweepRow], format: OutputFormat, path: &Path) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => render_csv(rows)?,
        OutputFormat::Json => render_json(rows)?,
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
