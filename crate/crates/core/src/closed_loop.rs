//! Receding-horizon simulation: solve, implement the first control, advance
//! the plant, repeat.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsening::{coarsen, grid, grid_leading_singletons, project, CoarseGrid, Prior, Strategy};
use crate::error::{Error, Result};
pub use crate::hvac::Scenario;
use crate::lp::{Basis, LpSolver, PrimalDualSolution, Start};
use crate::model::{CompactLp, StageSpec};
use crate::output::{csv_error, fmt12};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Full,
    Equal,
    Fts,
    Diffusing,
}

impl Scheme {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Scheme::Full => None,
            Scheme::Equal => Some(Strategy::Equal),
            Scheme::Fts => Some(Strategy::FullThenSparse),
            Scheme::Diffusing => Some(Strategy::Diffusing),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scheme::Full),
            "equal" => Ok(Scheme::Equal),
            "fts" => Ok(Scheme::Fts),
            "diffusing" => Ok(Scheme::Diffusing),
            _ => Err(Error::InvalidConfig(format!("unknown scheme `{s}`"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Full => "full",
            Scheme::Equal => "equal",
            Scheme::Fts => "fts",
            Scheme::Diffusing => "diffusing",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorPolicy {
    #[default]
    Zero,
    /// The previous step's projected primal-dual pair, shifted by one stage.
    ShiftedPrevious,
}

/// Multiplicative Gaussian error on the predicted algebraic data `w` of
/// stages `2..N`; the current stage is always exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastNoise {
    pub relative_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub scheme: Scheme,
    /// Coarse stage count; ignored by `Scheme::Full`.
    pub k: usize,
    /// Keep stages 1 and 2 as singleton blocks.
    #[serde(default = "default_true")]
    pub guard: bool,
    #[serde(default)]
    pub prior: PriorPolicy,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default)]
    pub forecast_noise: Option<ForecastNoise>,
}

fn default_true() -> bool {
    true
}

impl ControllerConfig {
    pub fn new(scheme: Scheme, k: usize) -> Self {
        ControllerConfig {
            scheme,
            k,
            guard: true,
            prior: PriorPolicy::Zero,
            warm_start: true,
            forecast_noise: None,
        }
    }

    pub fn full() -> Self {
        Self::new(Scheme::Full, 0)
    }

    pub fn label(&self) -> String {
        let mut l = match self.scheme {
            Scheme::Full => "full".into(),
            s => format!("{s}-K{}", self.k),
        };
        if self.scheme != Scheme::Full && self.prior == PriorPolicy::ShiftedPrevious {
            l.push_str("-shifted");
        }
        l
    }

    /// The coarse grid used for horizon `n`, or `None` for full resolution.
    pub fn grid(&self, n: usize) -> Result<Option<CoarseGrid>> {
        let Some(strategy) = self.scheme.strategy() else {
            return Ok(None);
        };
        // Stage 2 is kept exact too, so the successor state respects its bounds.
        let g = if self.guard && self.k >= 3 {
            grid_leading_singletons(strategy, n, self.k, 2)?
        } else {
            grid(strategy, n, self.k)?
        };
        Ok(Some(g))
    }
}

/// `x⁺ = A x + B u + v⁺`, with `A, B` of the current stage.
pub fn step_plant(x: &DVector<f64>, u: &DVector<f64>, stage: &StageSpec, v_next: &DVector<f64>) -> Result<DVector<f64>> {
    let d = stage.dims();
    if x.len() != d.nx || u.len() != d.nu || v_next.len() != d.nx {
        return Err(Error::DimensionMismatch("plant step".into()));
    }
    Ok(&stage.a * x + &stage.b * u + v_next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub cost_step: f64,
    pub cost_cum: f64,
    pub solve_ms: f64,
    /// Optimal objective of the problem solved at this step.
    pub objective: f64,
    pub iterations: usize,
    /// Largest violation of the original first-stage rows by `z′₁`.
    pub stage1_violation: f64,
    /// The shifted prior gave an infeasible coarse problem and the zero prior was used.
    #[serde(default)]
    pub prior_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub scenario: u64,
    pub config: ControllerConfig,
    pub horizon: usize,
    pub steps: Vec<StepRecord>,
}

impl ClosedLoopTrace {
    pub fn total_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cost_cum)
    }

    pub fn total_solve_ms(&self) -> f64 {
        self.steps.iter().map(|s| s.solve_ms).sum()
    }

    pub fn mean_solve_ms(&self) -> f64 {
        self.total_solve_ms() / self.steps.len().max(1) as f64
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    /// Columns `step,cost_step,cost_cum,solve_ms,x1..,u1..`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let (nx, nu) = self.steps.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
        let mut header = vec!["step".to_string(), "cost_step".into(), "cost_cum".into(), "solve_ms".into()];
        header.extend((1..=nx).map(|k| format!("x{k}")));
        header.extend((1..=nu).map(|k| format!("u{k}")));
        w.write_record(&header).map_err(csv_error)?;
        for s in &self.steps {
            let mut rec = vec![
                (s.step + 1).to_string(),
                fmt12(s.cost_step),
                fmt12(s.cost_cum),
                fmt12(s.solve_ms),
            ];
            rec.extend(s.x.iter().chain(&s.u).map(|v| fmt12(*v)));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn stage1_violation(lp: &CompactLp, z: &[f64]) -> f64 {
    let z1 = &z[..lp.n()];
    let g = lp.diag(0);
    (0..lp.m())
        .map(|r| {
            let lhs: f64 = (0..lp.n()).map(|j| g[(r, j)] * z1[j]).sum();
            (lp.d()[r] - lhs).max(0.0)
        })
        .fold(0.0, f64::max)
}

fn perturb_forecast(problem: &mut [StageSpec], noise: &ForecastNoise, step: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    rng.set_stream(step as u64);
    let dist = Normal::new(0.0, noise.relative_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for s in problem.iter_mut().skip(1) {
        for w in s.w.iter_mut() {
            *w = (*w * (1.0 + dist.sample(&mut rng))).max(0.0);
        }
    }
    Ok(())
}

/// Simulate `n_sim` steps with an `horizon`-stage controller.
pub fn run_closed_loop(scenario: &Scenario, cfg: &ControllerConfig, horizon: usize, n_sim: usize) -> Result<ClosedLoopTrace> {
    if n_sim == 0 {
        return Err(Error::InvalidConfig("n_sim must be at least 1".into()));
    }
    if scenario.len() < n_sim + horizon {
        return Err(Error::InvalidConfig(format!(
            "scenario has {} stages, need n_sim + horizon = {}",
            scenario.len(),
            n_sim + horizon
        )));
    }
    let grid = cfg.grid(horizon)?;
    let identity = grid.as_ref().is_none_or(|g| g.is_identity());
    let dims = scenario.dims();
    let (nx, n, m) = (dims.nx, dims.n(), dims.m());

    let mut solver = LpSolver::new();
    let mut x = scenario.x0.clone();
    let mut prev_basis: Option<Basis> = None;
    let mut prev_pair: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut cost_cum = 0.0;
    let mut steps = Vec::with_capacity(n_sim);
    for t in 0..n_sim {
        let with_step = |e: Error| match e {
            Error::Infeasible => Error::StepInfeasible { step: t + 1 },
            e => Error::Step { step: t + 1, source: Box::new(e) },
        };
        let mut window = scenario.window(t, horizon, &x).map_err(with_step)?.into_stages();
        if let Some(noise) = &cfg.forecast_noise {
            perturb_forecast(&mut window, noise, t).map_err(with_step)?;
        }
        let lp = crate::model::MpcProblem::new(window).map_err(with_step)?.to_compact();
        let start = match (&prev_basis, cfg.warm_start) {
            (Some(b), true) if identity => Start::Rows(b.shifted(m, lp.n_stages(), 1)),
            (Some(b), true) => Start::Rows(b.rows().to_vec()),
            _ => Start::Cold,
        };

        let mut fallback = false;
        let clock = Instant::now();
        let iters_before = solver.total_iterations;
        let (z, lambda, sol): (Vec<f64>, Vec<f64>, PrimalDualSolution) = match &grid {
            None => {
                let sol = solver.solve_from(&lp, &start).map_err(with_step)?;
                (sol.z.clone(), sol.lambda.clone(), sol)
            }
            Some(g) => {
                let shifted = match (cfg.prior, &prev_pair) {
                    (PriorPolicy::ShiftedPrevious, Some((z, l))) => Some(
                        Prior {
                            z_o: z.clone(),
                            lambda_o: l.clone(),
                        }
                        .shifted(n, m),
                    ),
                    _ => None,
                };
                let mut attempt = None;
                if let Some(prior) = shifted {
                    // The repeated last stage need not be feasible for the new window.
                    let coarse = coarsen(&lp, g, &prior).map_err(with_step)?;
                    match solver.solve_from(&coarse.lp, &start) {
                        Ok(sol) => attempt = Some((coarse, sol)),
                        Err(Error::Infeasible) => fallback = true,
                        Err(e) => return Err(with_step(e)),
                    }
                }
                let (coarse, sol) = match attempt {
                    Some(a) => a,
                    None => {
                        let coarse = coarsen(&lp, g, &Prior::zero(&lp)).map_err(with_step)?;
                        let sol = solver.solve_from(&coarse.lp, &start).map_err(with_step)?;
                        (coarse, sol)
                    }
                };
                let (z, l) = project(&sol, &coarse.prior, &coarse.ops).map_err(with_step)?;
                (z, l, sol)
            }
        };
        let solve_ms = clock.elapsed().as_secs_f64() * 1e3;

        let u = DVector::from_column_slice(&z[nx..n]);
        let x_next = step_plant(&x, &u, &scenario.stages[t], &scenario.stages[t + 1].v).map_err(with_step)?;
        let realized = &scenario.stages[t];
        let cost_step = realized.q.dot(&x) + realized.r.dot(&u);
        cost_cum += cost_step;
        steps.push(StepRecord {
            step: t,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            x_next: x_next.iter().copied().collect(),
            cost_step,
            cost_cum,
            solve_ms,
            objective: sol.objective,
            iterations: solver.total_iterations - iters_before,
            stage1_violation: stage1_violation(&lp, &z),
            prior_fallback: fallback,
        });
        prev_basis = sol.basis;
        prev_pair = Some((z, lambda));
        x = x_next;
    }
    Ok(ClosedLoopTrace {
        scenario: scenario.id,
        config: cfg.clone(),
        horizon,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: u64,
    pub controller: String,
    pub scheme: Scheme,
    pub k: usize,
    pub cost: f64,
    pub total_solve_s: f64,
    pub mean_step_ms: f64,
    /// `(cost - cost_full)/|cost_full|`, when a full-resolution run is present.
    pub relative_increase: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    /// Fraction of scenarios where diffusing has the lowest cost among coarse schemes.
    pub diffusing_win_rate: Option<f64>,
    pub diffusing_wins: Option<usize>,
}

impl ComparisonReport {
    pub fn rows_for(&self, controller: &str) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.controller == controller).collect()
    }

    /// Mean over scenarios of the relative increase of `controller`.
    pub fn mean_increase(&self, controller: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(controller).iter().filter_map(|r| r.relative_increase).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_step_ms(&self, controller: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(controller).iter().map(|r| r.mean_step_ms).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Run every controller on every scenario. Scenarios run concurrently, the
/// controllers of one scenario sequentially.
pub fn compare_schemes(
    scenarios: &[Scenario],
    cfgs: &[ControllerConfig],
    horizon: usize,
    n_sim: usize,
) -> Result<(ComparisonReport, Vec<ClosedLoopTrace>)> {
    if scenarios.is_empty() {
        return Err(Error::InvalidConfig("no scenarios".into()));
    }
    let per: Vec<Result<Vec<ClosedLoopTrace>>> = scenarios
        .par_iter()
        .map(|s| cfgs.iter().map(|c| run_closed_loop(s, c, horizon, n_sim)).collect())
        .collect();
    let mut traces = Vec::new();
    for p in per {
        traces.extend(p?);
    }
    Ok((report_from_traces(&traces), traces))
}

pub fn report_from_traces(traces: &[ClosedLoopTrace]) -> ComparisonReport {
    let mut rows = Vec::with_capacity(traces.len());
    for t in traces {
        let full = traces
            .iter()
            .find(|o| o.scenario == t.scenario && o.config.scheme == Scheme::Full)
            .map(|o| o.total_cost());
        rows.push(ReportRow {
            scenario: t.scenario,
            controller: t.config.label(),
            scheme: t.config.scheme,
            k: t.config.k,
            cost: t.total_cost(),
            total_solve_s: t.total_solve_ms() / 1e3,
            mean_step_ms: t.mean_solve_ms(),
            relative_increase: full.map(|f| (t.total_cost() - f) / f.abs().max(f64::MIN_POSITIVE)),
        });
    }
    let mut ids: Vec<u64> = rows.iter().map(|r| r.scenario).collect();
    ids.dedup();
    let mut wins = 0;
    let mut contested = 0;
    for id in &ids {
        let coarse: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| r.scenario == *id && r.scheme != Scheme::Full)
            .collect();
        let Some(diff) = coarse.iter().find(|r| r.scheme == Scheme::Diffusing) else {
            continue;
        };
        if coarse.len() < 2 {
            continue;
        }
        contested += 1;
        if coarse.iter().all(|r| r.scheme == Scheme::Diffusing || diff.cost < r.cost) {
            wins += 1;
        }
    }
    ComparisonReport {
        rows,
        diffusing_win_rate: (contested > 0).then(|| wins as f64 / contested as f64),
        diffusing_wins: (contested > 0).then_some(wins),
    }
}
