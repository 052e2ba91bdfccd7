//! The experiments behind each subcommand. Every command returns the files
//! it wrote so the caller can hash them into a manifest.

use crate::config::{ExperimentConfig, InitialAges, Kind, ModelBlock};
use crate::error::CliError;
use msq_core::dists::{holder_check, renewal_function, DistSpec, ServiceDistribution};
use msq_core::fluid::{classify_regime, solve_fluid, FluidInit, FluidPath, Nu0};
use msq_core::limitsim::{simulate_limit, LimitGrid, LimitModel, LimitPath, Nu0Hat, TestFunction};
use msq_core::microsim::{simulate, InitialCondition, PathRecord, SimConfig};
use msq_core::rng::substream;
use msq_core::scalestats::TestReport;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// What a command produced.
pub struct Artifacts {
    /// The output directory, or the single output file.
    pub location: PathBuf,
    pub is_dir: bool,
    pub files: Vec<PathBuf>,
    pub seeds: Vec<u64>,
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    body(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summaries always serialize");
    write_file(path, |w| writeln!(w, "{text}"))
}

/// Prints to stdout, ignoring a reader that went away (e.g. `| head`).
pub fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("reports always serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg
        .run
        .out
        .clone()
        .ok_or_else(|| CliError::Schema("at `run.out`: an output directory is required (or pass --out)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

// ---------------------------------------------------------------- dists

#[derive(Serialize)]
struct GridRow {
    x: f64,
    sf: f64,
    density: f64,
    hazard: f64,
    cum_hazard: f64,
}

fn dist_report(spec: &DistSpec, horizon: f64, dt: f64) -> Result<serde_json::Value, CliError> {
    let d = ServiceDistribution::from_spec(spec)?;
    let x_end = d.support_end().min(10.0);
    let xs: Vec<f64> = (0..=40).map(|i| x_end * i as f64 / 40.0).collect();
    let rows: Vec<GridRow> = xs
        .iter()
        .map(|&x| GridRow { x, sf: d.sf(x), density: d.density(x), hazard: d.hazard(x), cum_hazard: d.cum_hazard(x) })
        .collect();
    let renewal = renewal_function(&d, horizon, dt)?;
    let stride = ((horizon / dt / 50.0).round() as usize).max(1);
    let renewal_rows: Vec<(f64, f64)> =
        renewal.values.iter().enumerate().step_by(stride).map(|(k, v)| (k as f64 * dt, *v)).collect();
    let holder_x: Vec<f64> = (0..=20).map(|i| d.support_end().min(5.0) * i as f64 / 21.0).collect();
    let holder_y: Vec<f64> = (0..=200).map(|i| 3.0 * i as f64 / 200.0).collect();
    Ok(json!({
        "spec": spec,
        "name": d.name(),
        "mean": d.mean(),
        "support_end": d.support_end(),
        "bounded_hazard": d.has_bounded_hazard(),
        "grid": rows,
        "renewal": { "dt": dt, "horizon": horizon, "values": renewal_rows },
        "holder": holder_check(&d, &holder_x, &holder_y),
    }))
}

/// Hazard, renewal and Hölder reports for one service law, or for every
/// built-in law when none is given.
pub fn dists_check(cfg: &ExperimentConfig) -> Result<Option<Artifacts>, CliError> {
    cfg.check_numerics()?;
    let out = cfg.run.out.as_deref();
    let specs = match cfg.model.as_ref().map(|m| m.service.clone()) {
        Some(s) => vec![s],
        None => msq_core::dists::builtin_specs(),
    };
    let reports =
        specs.iter().map(|s| dist_report(s, cfg.numerics.horizon, cfg.numerics.dt)).collect::<Result<Vec<_>, _>>()?;
    let value = if reports.len() == 1 { reports.into_iter().next().unwrap() } else { json!(reports) };
    match out {
        Some(path) => {
            write_json(path, &value)?;
            Ok(Some(Artifacts { location: path.into(), is_dir: false, files: vec![path.into()], seeds: vec![] }))
        }
        None => {
            print_json(&value);
            Ok(None)
        }
    }
}

// ---------------------------------------------------------------- sim

fn sim_config(
    model: &ModelBlock,
    service: &Arc<ServiceDistribution>,
    n: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SimConfig, CliError> {
    let init = &model.initial;
    if !(init.x0 >= 0.0 && init.x0.is_finite()) {
        return Err(CliError::Schema(format!("at `model.initial.x0`: must be nonnegative, got {}", init.x0)));
    }
    let x0 = (init.x0 * n as f64).round() as usize;
    let mut sc = SimConfig::new(n, model.arrival.clone(), service.clone(), cfg.numerics.horizon);
    sc.initial = match init.ages {
        InitialAges::Stationary => InitialCondition::stationary(service, n, x0, &mut substream(seed, 0, 3)),
        InitialAges::Fresh => {
            InitialCondition { x0, initial_ages: vec![0.0; x0.min(n)], residual_sampling: init.residual_sampling }
        }
    };
    sc.initial.residual_sampling = init.residual_sampling;
    sc.seed = seed;
    sc.snapshot_times = cfg.run.snapshot_times.clone();
    sc.record_events = false;
    sc.validate()?;
    Ok(sc)
}

#[derive(Serialize)]
struct SnapshotSummary {
    time: f64,
    in_service: usize,
    mean_age: Option<f64>,
}

#[derive(Serialize)]
struct ReplicateSummary {
    n: usize,
    seed: u64,
    file: String,
    event_times: usize,
    final_e: u64,
    final_d: u64,
    final_k: u64,
    final_x: u64,
    final_in_service: u64,
    snapshots: Vec<SnapshotSummary>,
}

fn summarize(p: &PathRecord, seed: u64, file: String) -> ReplicateSummary {
    let c = p.states.last().expect("paths have an initial state").counters;
    let snapshots = p
        .snapshots
        .iter()
        .map(|s| SnapshotSummary {
            time: s.time,
            in_service: s.ages.len(),
            mean_age: (!s.ages.is_empty()).then(|| s.ages.iter().sum::<f64>() / s.ages.len() as f64),
        })
        .collect();
    ReplicateSummary {
        n: p.n,
        seed,
        file,
        event_times: p.states.len(),
        final_e: c.e,
        final_d: c.d,
        final_k: c.k,
        final_x: c.x,
        final_in_service: c.in_service,
        snapshots,
    }
}

pub fn sim_run(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    cfg.expect_kind(Kind::Sim)?;
    cfg.check_numerics()?;
    let model = cfg.model()?;
    let service = cfg.service()?;
    let seeds = cfg.seeds()?;
    if model.n.is_empty() || model.n.contains(&0) {
        return Err(CliError::Schema("at `model.n`: need at least one positive server count".into()));
    }
    let jobs: Vec<(usize, u64)> = model.n.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    // reject a bad configuration before any output is written
    let configs = jobs.iter().map(|&(n, s)| sim_config(model, &service, n, cfg, s)).collect::<Result<Vec<_>, _>>()?;
    let dir = out_dir(cfg)?;

    let results: Vec<(ReplicateSummary, Vec<PathBuf>)> = configs
        .par_iter()
        .zip(&jobs)
        .map(|(sc, &(n, seed))| -> Result<_, CliError> {
            let p = simulate(sc)?;
            let name = format!("sim_N{n}_seed{seed}.csv");
            let csv = dir.join(&name);
            write_file(&csv, |w| p.write_csv(w))?;
            let mut files = vec![csv];
            if !p.snapshots.is_empty() {
                let snap = dir.join(format!("snapshots_N{n}_seed{seed}.csv"));
                write_file(&snap, |w| {
                    writeln!(w, "time,age")?;
                    for s in &p.snapshots {
                        for a in &s.ages {
                            writeln!(w, "{:?},{:?}", s.time, a)?;
                        }
                    }
                    Ok(())
                })?;
                files.push(snap);
            }
            Ok((summarize(&p, seed, name), files))
        })
        .collect::<Result<_, _>>()?;

    let mut files = vec![];
    let mut replicates = vec![];
    for (s, f) in results {
        replicates.push(s);
        files.extend(f);
    }
    let summary = dir.join("summary.json");
    write_json(&summary, &json!({ "horizon": cfg.numerics.horizon, "replicates": replicates }))?;
    files.push(summary);
    Ok(Artifacts { location: dir, is_dir: true, files, seeds })
}

// ---------------------------------------------------------------- fluid

fn fluid_path(cfg: &ExperimentConfig, service: Arc<ServiceDistribution>) -> Result<FluidPath, CliError> {
    let model = cfg.model()?;
    let x0 = model.initial.x0;
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(CliError::Schema(format!("at `model.initial.x0`: must be nonnegative, got {x0}")));
    }
    let nu0 = match model.initial.ages {
        InitialAges::Stationary => Nu0::Invariant { mass: x0.min(1.0) },
        InitialAges::Fresh if x0 == 0.0 => Nu0::Zero,
        InitialAges::Fresh => {
            return Err(CliError::Schema(
                "at `model.initial.ages`: the fluid model needs an age density, use `stationary`".into(),
            ))
        }
    };
    let init = FluidInit::new(&model.arrival, x0, nu0);
    Ok(solve_fluid(&init, service, cfg.numerics.horizon, cfg.numerics.fluid_step())?)
}

pub fn fluid_solve(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    cfg.expect_kind(Kind::Fluid)?;
    cfg.check_numerics()?;
    let path = fluid_path(cfg, cfg.service()?)?;
    let out = cfg
        .run
        .out
        .clone()
        .ok_or_else(|| CliError::Schema("at `run.out`: an output file is required (or pass --out)".into()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_file(&out, |w| path.write_csv(w))?;
    let regime = classify_regime(&path, cfg.numerics.horizon, cfg.numerics.regime_tolerance);
    eprintln!("fluid regime over [0, {}]: {regime:?}", cfg.numerics.horizon);
    Ok(Artifacts { location: out.clone(), is_dir: false, files: vec![out], seeds: vec![] })
}

// ---------------------------------------------------------------- limit

#[derive(Serialize)]
struct EnsembleMoments {
    time: f64,
    columns: Vec<String>,
    means: Vec<f64>,
    variances: Vec<f64>,
    covariances: Vec<Vec<f64>>,
}

fn columns(lp: &LimitPath, n: usize) -> Vec<f64> {
    let mut v = vec![lp.ehat[n], lp.mhat1[n], lp.hhat1[n], lp.khat[n], lp.xhat[n], lp.vhat[n]];
    v.extend(lp.nuhat.values().map(|s| s[n]));
    v
}

fn moments(paths: &[LimitPath], n: usize) -> EnsembleMoments {
    let mut names: Vec<String> = ["Ehat", "Mhat1", "Hhat1", "Khat", "Xhat", "vhat"].map(String::from).to_vec();
    names.extend(paths[0].nuhat.keys().map(|k| format!("nuhat_{k}")));
    let rows: Vec<Vec<f64>> = paths.iter().map(|p| columns(p, n)).collect();
    let m = names.len();
    let count = rows.len() as f64;
    let means: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / count).collect();
    let denom = (count - 1.0).max(1.0);
    let covariances: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m).map(|j| rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / denom).collect()
        })
        .collect();
    let variances = (0..m).map(|i| covariances[i][i]).collect();
    EnsembleMoments { time: paths[0].times[n], columns: names, means, variances, covariances }
}

pub fn limit_run(cfg: &ExperimentConfig) -> Result<Artifacts, CliError> {
    cfg.expect_kind(Kind::Limit)?;
    cfg.check_numerics()?;
    let model = cfg.model()?;
    let service = cfg.service()?;
    let seeds = cfg.seeds()?;
    if cfg.run.paths == 0 {
        return Err(CliError::Schema("at `run.paths`: need at least one path".into()));
    }
    let tests = cfg
        .run
        .test_functions
        .iter()
        .map(|name| {
            TestFunction::named(name, &service).ok_or_else(|| {
                CliError::Schema(format!(
                    "at `run.test_functions`: unknown `{name}` (expected one, hazard, survival or exp_decay)"
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let num = &cfg.numerics;
    let fluid = fluid_path(cfg, service)?;
    let grid = match num.x_max {
        Some(x_max) => LimitGrid::new(num.dt, num.horizon, x_max)?,
        None => LimitGrid::for_fluid(&fluid, num.dt, num.horizon)?,
    };
    let limit_model = LimitModel::new(Arc::new(fluid), grid)?;
    let init = &model.initial;
    let nu0 = if init.diffusion_atoms.is_empty() { Nu0Hat::Zero } else { Nu0Hat::Atoms(init.diffusion_atoms.clone()) };
    let dir = out_dir(cfg)?;

    let jobs: Vec<(u64, u64)> = seeds.iter().flat_map(|&s| (0..cfg.run.paths).map(move |p| (s, p))).collect();
    let results: Vec<(LimitPath, PathBuf)> = jobs
        .par_iter()
        .map(|&(seed, p)| -> Result<_, CliError> {
            let (lp, _) = simulate_limit(
                &limit_model,
                &model.arrival,
                init.diffusion_x0,
                &nu0,
                &tests,
                seed,
                p,
                cfg.run.noise_off,
            )?;
            let file = dir.join(format!("limit_seed{seed}_path{p}.csv"));
            write_file(&file, |w| lp.write_csv(w))?;
            Ok((lp, file))
        })
        .collect::<Result<_, _>>()?;
    let (paths, mut files): (Vec<LimitPath>, Vec<PathBuf>) = results.into_iter().unzip();

    let times = if cfg.run.snapshot_times.is_empty() { vec![num.horizon] } else { cfg.run.snapshot_times.clone() };
    let last = paths[0].times.len() - 1;
    let summary: Vec<EnsembleMoments> =
        times.iter().map(|t| moments(&paths, ((t / num.dt).round() as usize).min(last))).collect();
    let file = dir.join("summary.json");
    write_json(
        &file,
        &json!({
            "regime": paths[0].regime,
            "paths": paths.len(),
            "dt": num.dt,
            "x_max": grid.x_max,
            "noise_off": cfg.run.noise_off,
            "moments": summary,
        }),
    )?;
    files.push(file);
    Ok(Artifacts { location: dir, is_dir: true, files, seeds })
}

// ---------------------------------------------------------------- verify

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Check {
    Identities,
    Martingale,
    Representation,
    Flln,
    Fluid,
    Fclt,
    Insensitivity,
    Moments,
    Lipschitz,
    Sae,
}

impl Check {
    pub fn label(self) -> &'static str {
        match self {
            Check::Identities => "identities",
            Check::Martingale => "martingale",
            Check::Representation => "representation",
            Check::Flln => "flln",
            Check::Fluid => "fluid",
            Check::Fclt => "fclt",
            Check::Insensitivity => "insensitivity",
            Check::Moments => "moments",
            Check::Lipschitz => "lipschitz",
            Check::Sae => "sae",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        <Check as clap::ValueEnum>::from_str(s, false).ok()
    }
}

/// Applies `--seed` to the chosen check and returns the seed it will use.
pub fn seed_check(cfg: &mut ExperimentConfig, check: Check, seed: Option<u64>) -> Option<u64> {
    let v = &mut cfg.verify;
    let slot = match check {
        Check::Identities => &mut v.identities.seed,
        Check::Martingale => &mut v.martingale.seed,
        Check::Representation => &mut v.representation.seed,
        Check::Flln => &mut v.flln.seed,
        Check::Fluid => return None,
        Check::Fclt => &mut v.fclt.seed,
        Check::Insensitivity => &mut v.insensitivity.seed,
        Check::Moments => &mut v.moments.seed,
        Check::Lipschitz => &mut v.lipschitz.seed,
        Check::Sae => &mut v.sae.seed,
    };
    if let Some(s) = seed {
        *slot = s;
    }
    Some(*slot)
}

pub fn verify(cfg: &ExperimentConfig, check: Check) -> Result<(Vec<TestReport>, Option<Artifacts>), CliError> {
    cfg.expect_kind(Kind::Verify)?;
    let v = &cfg.verify;
    let reports = match check {
        Check::Identities => v.identities.run(),
        Check::Martingale => v.martingale.run(),
        Check::Representation => v.representation.run(),
        Check::Flln => v.flln.run(),
        Check::Fluid => v.fluid.run(),
        Check::Fclt => v.fclt.run(),
        Check::Insensitivity => v.insensitivity.run(),
        Check::Moments => v.moments.run(),
        Check::Lipschitz => v.lipschitz.run(),
        Check::Sae => v.sae.run(),
    }?;
    let artifacts = match &cfg.run.out {
        Some(_) => {
            let dir = out_dir(cfg)?;
            let file = dir.join(format!("{}_reports.json", check.label()));
            write_json(&file, &reports)?;
            let mut c = cfg.clone();
            let seeds = seed_check(&mut c, check, None).into_iter().collect();
            Some(Artifacts { location: dir, is_dir: true, files: vec![file], seeds })
        }
        None => None,
    };
    Ok((reports, artifacts))
}
