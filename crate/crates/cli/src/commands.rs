use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use dhmpc::closed_loop::{compare_schemes, ControllerConfig, PriorPolicy, Scheme};
use dhmpc::coarsening::{coarsen, grid, grid_feasibility_guard, project, CoarseGrid, Prior, Strategy};
use dhmpc::eds::{perturbation_experiment, ChannelSigma, PerturbationExperimentSpec};
use dhmpc::hvac::{self, HvacConfig, ProfileSet, Scenario};
use dhmpc::lp::{LpSolver, Start};
use dhmpc::model::{CompactLp, Dims, MpcProblem};
use dhmpc::output::fmt12;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{git_describe, RunManifest};
use crate::{
    usage, BenchArgs, ClosedLoopArgs, CoarsenArgs, Cli, Command, GridArg, HvacArgs, LoopPriorArg, PriorArg,
    SensitivityArgs, SolveArgs,
};

struct Output {
    command: &'static str,
    config: serde_json::Value,
    seed: Option<u64>,
    dir: PathBuf,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    let start = Instant::now();
    let out = match &cli.command {
        Command::Solve(a) => solve(a)?,
        Command::Coarsen(a) => coarsen_cmd(a)?,
        Command::Sensitivity(a) => sensitivity(a)?,
        Command::Closedloop(a) => closed_loop(a)?,
        Command::Bench(a) => bench(a)?,
    };
    let manifest = RunManifest {
        command: out.command.into(),
        argv: argv.iter().skip(1).cloned().collect(),
        config: out.config,
        seed: out.seed,
        git_describe: git_describe(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: out.outputs,
        summary: out.summary,
    };
    manifest.write(&out.dir)?;
    Ok(())
}

fn model_error(e: dhmpc::Error) -> anyhow::Error {
    match e {
        dhmpc::Error::InvalidGrid(_) | dhmpc::Error::InvalidConfig(_) => usage(e.to_string()),
        other => other.into(),
    }
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_problem(path: &Path) -> anyhow::Result<MpcProblem> {
    MpcProblem::read_json(path).with_context(|| format!("reading instance {}", path.display()))
}

/// One row per stage: `stage,x1..,u1..`.
fn write_stage_csv(path: &Path, z: &[f64], dims: Dims) -> anyhow::Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["stage".to_string()];
    header.extend((1..=dims.nx).map(|k| format!("x{k}")));
    header.extend((1..=dims.nu).map(|k| format!("u{k}")));
    writeln!(w, "{}", header.join(","))?;
    for (i, chunk) in z.chunks(dims.n()).enumerate() {
        let vals: Vec<String> = chunk.iter().map(|v| fmt12(*v)).collect();
        writeln!(w, "{},{}", i + 1, vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn max_violation(lp: &CompactLp, z: &[f64]) -> f64 {
    lp.mul_g(z).iter().zip(lp.d()).map(|(g, d)| (d - g).max(0.0)).fold(0.0, f64::max)
}

fn solve(a: &SolveArgs) -> anyhow::Result<Output> {
    let problem = read_problem(&a.instance)?;
    let lp = problem.to_compact();
    let sol = LpSolver::new().solve(&lp)?;
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    ensure_dir(&dir)?;
    write_stage_csv(&a.out, &sol.z, problem.dims())?;
    let name = a.out.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Output {
        command: "solve",
        config: json!({ "instance": a.instance }),
        seed: None,
        dir,
        outputs: vec![name],
        summary: json!({
            "objective": sol.objective,
            "iterations": sol.iterations,
            "stages": problem.horizon(),
        }),
    })
}

fn coarsen_cmd(a: &CoarsenArgs) -> anyhow::Result<Output> {
    let strategy = match (a.grid, a.k) {
        (GridArg::Full, Some(_)) => return Err(usage("--K cannot be combined with --grid full")),
        (GridArg::Full, None) => None,
        (_, None) => return Err(usage("--K is required for a coarse grid")),
        (GridArg::Equal, Some(_)) => Some(Strategy::Equal),
        (GridArg::Fts, Some(_)) => Some(Strategy::FullThenSparse),
        (GridArg::Diffusing, Some(_)) => Some(Strategy::Diffusing),
    };
    let problem = read_problem(&a.instance)?;
    let n_st = problem.horizon();
    let g = match (strategy, a.k) {
        (Some(s), Some(k)) if a.guard => grid_feasibility_guard(s, n_st, k),
        (Some(s), Some(k)) => grid(s, n_st, k),
        _ => Ok(CoarseGrid::identity(n_st)),
    }
    .map_err(model_error)?;

    let lp = problem.to_compact();
    let mut solver = LpSolver::new();
    let (prior, full_objective) = match a.prior {
        PriorArg::Zero => (Prior::zero(&lp), None),
        PriorArg::Exact => {
            let sol = solver.solve(&lp)?;
            (Prior::from_solution(&sol), Some(sol.objective))
        }
    };
    let coarse = coarsen(&lp, &g, &prior)?;
    let csol = solver.solve_from(&coarse.lp, &Start::Point(vec![0.0; coarse.lp.nz()]))?;
    let (z_proj, _) = project(&csol, &prior, &coarse.ops)?;

    ensure_dir(&a.out)?;
    let grid_json = json!({
        "horizon": n_st,
        "K": g.k(),
        "points": g.points(),
        "lens": g.lens(),
    });
    fs::write(a.out.join("grid.json"), serde_json::to_string_pretty(&grid_json)? + "\n")?;
    write_stage_csv(&a.out.join("coarse_solution.csv"), &csol.z, problem.dims())?;
    write_stage_csv(&a.out.join("projected_solution.csv"), &z_proj, problem.dims())?;
    Ok(Output {
        command: "coarsen",
        config: json!({
            "instance": a.instance,
            "grid": format!("{:?}", a.grid).to_lowercase(),
            "K": a.k,
            "guard": a.guard,
            "prior": format!("{:?}", a.prior).to_lowercase(),
        }),
        seed: None,
        dir: a.out.clone(),
        outputs: vec!["grid.json".into(), "coarse_solution.csv".into(), "projected_solution.csv".into()],
        summary: json!({
            "coarse_objective": csol.objective,
            "projected_objective": lp.objective(&z_proj),
            "full_objective": full_objective,
            "projected_max_violation": max_violation(&lp, &z_proj),
        }),
    })
}

fn hvac_config(h: &HvacArgs, seed: u64) -> anyhow::Result<HvacConfig> {
    let mut cfg = match (&h.config, h.tou) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        (None, true) => HvacConfig::time_of_use(),
        (None, false) => HvacConfig::default(),
    };
    cfg.seed = seed;
    if let Some(n) = h.horizon {
        cfg.horizon = n;
    }
    if let Some(n) = h.nsim {
        cfg.n_sim = n;
    }
    cfg.validate().map_err(model_error)?;
    Ok(cfg)
}

/// Profiles for `cfg`: the supplied CSV, or synthetic ones covering `n_sim + horizon` steps.
fn hvac_profiles(h: &HvacArgs, cfg: &HvacConfig) -> anyhow::Result<ProfileSet> {
    let need = cfg.n_sim + cfg.horizon;
    match &h.profiles {
        None => Ok(hvac::synthetic_profiles(cfg, need)),
        Some(p) => {
            let prof = hvac::load_profiles(p).with_context(|| format!("reading profiles {}", p.display()))?;
            if prof.len() < need {
                anyhow::bail!("profiles cover {} steps, need horizon + nsim = {need}", prof.len());
            }
            Ok(prof)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ExperimentFile {
    windows: Vec<(usize, usize)>,
    channels: Vec<ChannelSigma>,
    samples: usize,
    seed: u64,
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| usage(format!("bad {what} `{t}`"))))
        .collect()
}

fn parse_windows(s: &str) -> anyhow::Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (lo, hi) = t.split_once('-').ok_or_else(|| usage(format!("bad window `{t}`")))?;
            let lo = lo.trim().parse().map_err(|_| usage(format!("bad window `{t}`")))?;
            let hi = hi.trim().parse().map_err(|_| usage(format!("bad window `{t}`")))?;
            Ok((lo, hi))
        })
        .collect()
}

fn experiment_plan(a: &SensitivityArgs, n_st: usize) -> anyhow::Result<ExperimentFile> {
    if let Some(p) = &a.experiment {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return serde_json::from_str(&text).map_err(|e| usage(format!("experiment spec {}: {e}", p.display())));
    }
    let windows = match &a.windows {
        Some(w) => parse_windows(w)?,
        None => {
            let q = n_st / 4;
            if q == 0 {
                return Err(usage("horizon too short for four default windows"));
            }
            (0..4).map(|k| (k * q + 1, (k + 1) * q)).collect()
        }
    };
    let channels = parse_list::<usize>(&a.channels, "channel")?
        .into_iter()
        .map(|channel| ChannelSigma { channel, sigma: a.sigma })
        .collect();
    Ok(ExperimentFile {
        windows,
        channels,
        samples: a.samples,
        seed: a.experiment_seed,
    })
}

fn sensitivity(a: &SensitivityArgs) -> anyhow::Result<Output> {
    let (problem, instance_cfg) = match &a.instance {
        Some(p) => (read_problem(p)?, json!({ "instance": p })),
        None => {
            let cfg = hvac_config(&a.hvac, a.seed)?;
            let (problem, _) = hvac::generate_instance(&cfg)?;
            (problem, json!({ "bench": "hvac", "hvac": cfg }))
        }
    };
    let lp = problem.to_compact();
    let dims = problem.dims();
    let plan = experiment_plan(a, problem.horizon())?;
    let stages: Vec<usize> = parse_list(&a.sample_stages, "stage")?;
    if stages.iter().any(|&s| s == 0 || s > problem.horizon()) {
        return Err(usage("--sample-stages outside the horizon"));
    }

    let mut results = Vec::with_capacity(plan.windows.len());
    for &window in &plan.windows {
        let spec = PerturbationExperimentSpec {
            window,
            channels: plan.channels.clone(),
            samples: plan.samples,
            seed: plan.seed,
        };
        results.push(perturbation_experiment(&lp, dims, &spec).map_err(model_error)?);
    }

    ensure_dir(&a.out)?;
    let n = dims.n();
    let mut w = create(&a.out.join("samples.csv"))?;
    writeln!(w, "sample_id,window,stage,component,value")?;
    for (wi, r) in results.iter().enumerate() {
        for s in &r.samples {
            for &st in &stages {
                for c in 0..n {
                    let k = (st - 1) * n + c;
                    writeln!(w, "{},{},{},{},{}", s.id, wi + 1, st, c + 1, fmt12(s.z[k] - r.reference[k]))?;
                }
            }
        }
    }
    w.flush()?;

    let mut w = create(&a.out.join("dispersion.csv"))?;
    writeln!(w, "window,window_start,window_end,stage,mean_norm")?;
    for (wi, r) in results.iter().enumerate() {
        for (i, v) in r.stage_dispersion().iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", wi + 1, r.window.0, r.window.1, i + 1, fmt12(*v))?;
        }
    }
    w.flush()?;

    let first: Vec<f64> = results.iter().map(|r| r.first_stage_dispersion()).collect();
    let decreasing = first.windows(2).all(|p| p[1] < p[0]);
    let windows: Vec<_> = results
        .iter()
        .zip(&first)
        .map(|(r, f)| json!({ "window": r.window, "first_stage_dispersion": f, "used": r.samples.len(), "discarded": r.discarded }))
        .collect();
    let summary = json!({ "windows": windows, "strictly_decreasing": decreasing });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;

    Ok(Output {
        command: "sensitivity",
        config: json!({ "problem": instance_cfg, "experiment": plan, "sample_stages": stages }),
        seed: Some(plan.seed),
        dir: a.out.clone(),
        outputs: vec!["samples.csv".into(), "dispersion.csv".into(), "summary.json".into()],
        summary,
    })
}

fn controller_configs(a: &ClosedLoopArgs) -> anyhow::Result<Vec<ControllerConfig>> {
    let schemes: Vec<Scheme> = parse_list(&a.schemes, "scheme")?;
    if schemes.is_empty() {
        return Err(usage("--schemes is empty"));
    }
    Ok(schemes
        .into_iter()
        .map(|s| match s {
            Scheme::Full => ControllerConfig::full(),
            s => ControllerConfig {
                guard: !a.no_guard,
                prior: match a.prior {
                    LoopPriorArg::Zero => PriorPolicy::Zero,
                    LoopPriorArg::Shifted => PriorPolicy::ShiftedPrevious,
                },
                ..ControllerConfig::new(s, a.k)
            },
        })
        .collect())
}

fn closed_loop(a: &ClosedLoopArgs) -> anyhow::Result<Output> {
    let cfgs = controller_configs(a)?;
    if a.scenarios == 0 {
        return Err(usage("--scenarios must be positive"));
    }
    if a.hvac.profiles.is_some() && a.scenarios != 1 {
        return Err(usage("--profiles supplies exactly one scenario"));
    }
    let base = hvac_config(&a.hvac, a.seed)?;
    let mut scenarios: Vec<Scenario> = Vec::with_capacity(a.scenarios);
    for j in 0..a.scenarios as u64 {
        let cfg = HvacConfig { seed: a.seed + j, ..base.clone() };
        let prof = hvac_profiles(&a.hvac, &cfg)?;
        scenarios.push(hvac::instance_from_profiles(&cfg, &prof)?.1);
    }
    let (report, traces) = compare_schemes(&scenarios, &cfgs, base.horizon, base.n_sim)?;

    ensure_dir(&a.out)?;
    let mut outputs = vec!["report.json".to_string()];
    if a.traces {
        ensure_dir(&a.out.join("traces"))?;
        for t in &traces {
            let name = format!("traces/scenario{}_{}.csv", t.scenario, t.config.label());
            t.write_csv(a.out.join(&name))?;
            outputs.push(name);
        }
    }
    let mut labels: Vec<String> = Vec::new();
    for c in &cfgs {
        let l = c.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let aggregates: Vec<_> = labels
        .iter()
        .map(|l| {
            let rows = report.rows_for(l);
            let mean_cost = rows.iter().map(|r| r.cost).sum::<f64>() / rows.len() as f64;
            json!({
                "controller": l,
                "mean_cost": mean_cost,
                "mean_relative_increase": report.mean_increase(l),
                "mean_step_ms": report.mean_step_ms(l),
            })
        })
        .collect();
    let doc = json!({ "aggregates": aggregates, "report": report });
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&doc)? + "\n")?;

    Ok(Output {
        command: "closedloop",
        config: json!({
            "bench": "hvac",
            "hvac": base,
            "controllers": cfgs,
            "scenarios": a.scenarios,
            "profiles": a.hvac.profiles,
        }),
        seed: Some(a.seed),
        dir: a.out.clone(),
        outputs,
        summary: json!({
            "aggregates": aggregates,
            "diffusing_wins": report.diffusing_wins,
            "diffusing_win_rate": report.diffusing_win_rate,
        }),
    })
}

fn bench(a: &BenchArgs) -> anyhow::Result<Output> {
    let cfg = hvac_config(&a.hvac, a.seed)?;
    let prof = hvac_profiles(&a.hvac, &cfg)?;
    let (problem, _) = hvac::instance_from_profiles(&cfg, &prof)?;
    ensure_dir(&a.out)?;
    problem.write_json(a.out.join("instance.json"))?;
    hvac::write_profiles(a.out.join("profiles.csv"), &prof)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    Ok(Output {
        command: "bench",
        config: json!({ "bench": "hvac", "hvac": cfg, "profiles": a.hvac.profiles }),
        seed: Some(a.seed),
        dir: a.out.clone(),
        outputs: vec!["instance.json".into(), "profiles.csv".into(), "config.json".into()],
        summary: json!({ "stages": problem.horizon(), "profile_steps": prof.len() }),
    })
}
