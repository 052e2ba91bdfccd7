//! `msq`: run many-server queue experiments from a JSON config.
//!
//! Exit status: 0 success, 1 a verification statistic failed (or a rerun
//! did not reproduce its manifest), 2 bad configuration, 3 numerical
//! failure, 4 i/o failure.

mod commands;
mod config;
mod error;
mod manifest;

use clap::{Args, Parser, Subcommand};
use commands::{Artifacts, Check};
use config::{parse_seeds, ExperimentConfig, Kind, ModelBlock};
use error::CliError;
use manifest::{config_hash, hash_outputs, manifest_path, Manifest};
use msq_core::dists::DistSpec;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "msq", version, about = "Many-server queue laboratory: simulation, fluid and diffusion limits")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Service-law diagnostics.
    Dists {
        #[command(subcommand)]
        action: DistsAction,
    },
    /// Discrete-event simulation of the N-server system.
    Sim {
        #[command(subcommand)]
        action: SimAction,
    },
    /// Deterministic fluid model.
    Fluid {
        #[command(subcommand)]
        action: FluidAction,
    },
    /// Diffusion-limit paths.
    Limit {
        #[command(subcommand)]
        action: LimitAction,
    },
    /// Run one statistical check and exit 1 if any statistic fails.
    Verify {
        #[arg(value_enum)]
        check: Check,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Rerun an experiment from its manifest and compare the artifacts.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Write the new artifacts here instead of the original location.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DistsAction {
    /// Print hazard, renewal-function and Hölder reports as JSON.
    Check {
        /// Distribution as inline JSON or a path to a JSON file.
        #[arg(long)]
        dist: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Subcommand)]
enum SimAction {
    Run(RunArgs),
}

#[derive(Subcommand)]
enum FluidAction {
    Solve(RunArgs),
}

#[derive(Subcommand)]
enum LimitAction {
    Run(RunArgs),
}

#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

fn parse_seed_list(text: &str) -> Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// A single seed; replaces the configured seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list: `0..R`, `0..=R` or comma separated.
    #[arg(long, value_parser = parse_seed_list)]
    seeds: Option<SeedList>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Limit paths per seed.
    #[arg(long)]
    paths: Option<u64>,
    /// Suppress all noise in limit runs (deterministic test mode).
    #[arg(long)]
    noise_off: bool,
}

fn load(args: &RunArgs, kind: Kind, required: bool) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if required => return Err(CliError::Schema("--config is required for this command".into())),
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(s) = args.seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(SeedList(s)) = &args.seeds {
        cfg.run.seeds = s.clone();
    }
    if let Some(o) = &args.out {
        cfg.run.out = Some(o.clone());
    }
    if let Some(p) = args.paths {
        cfg.run.paths = p;
    }
    cfg.run.noise_off |= args.noise_off;
    Ok(cfg)
}

fn parse_dist(text: &str) -> Result<DistSpec, CliError> {
    let (body, origin) = if text.trim_start().starts_with('{') {
        (text.to_string(), "--dist".to_string())
    } else {
        let body = std::fs::read_to_string(text).map_err(|e| CliError::Schema(format!("cannot read {text}: {e}")))?;
        (body, text.to_string())
    };
    let de = &mut serde_json::Deserializer::from_str(&body);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Schema(format!("{origin}: at `{}`: {}", e.path(), e.inner())))
}

fn write_manifest(
    command: &[&str],
    cfg: &ExperimentConfig,
    art: &Artifacts,
    started: Instant,
) -> Result<PathBuf, CliError> {
    let (config, config_sha256) = config_hash(cfg);
    let base = if art.is_dir {
        art.location.clone()
    } else {
        art.location.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.iter().map(|s| s.to_string()).collect(),
        config_sha256,
        config,
        seeds: art.seeds.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs: hash_outputs(&base, &art.files)?,
    };
    let path = manifest_path(&art.location, art.is_dir);
    m.write(&path)?;
    Ok(path)
}

/// Runs one command on a resolved config; returns the artifacts and whether
/// every verification statistic passed.
fn dispatch(command: &[&str], cfg: &ExperimentConfig) -> Result<(Option<Artifacts>, bool), CliError> {
    match command {
        ["dists", "check"] => {
            let art = commands::dists_check(cfg)?;
            Ok((art, true))
        }
        ["sim", "run"] => Ok((Some(commands::sim_run(cfg)?), true)),
        ["fluid", "solve"] => Ok((Some(commands::fluid_solve(cfg)?), true)),
        ["limit", "run"] => Ok((Some(commands::limit_run(cfg)?), true)),
        ["verify", name] => {
            let check = Check::from_label(name).ok_or_else(|| CliError::Schema(format!("unknown check `{name}`")))?;
            let (reports, art) = commands::verify(cfg, check)?;
            for r in &reports {
                eprintln!("{}", r.line());
            }
            commands::print_json(&reports);
            let passed = reports.iter().all(|r| r.pass);
            Ok((art, passed))
        }
        other => Err(CliError::Schema(format!("unknown command {other:?}"))),
    }
}

fn run_command(command: &[&str], cfg: ExperimentConfig) -> Result<bool, CliError> {
    let started = Instant::now();
    let (art, passed) = dispatch(command, &cfg)?;
    if let Some(art) = art {
        let m = write_manifest(command, &cfg, &art, started)?;
        eprintln!("wrote {} artifact(s); manifest {}", art.files.len(), m.display());
    }
    Ok(passed)
}

fn rerun(manifest: &Path, out: Option<PathBuf>) -> Result<bool, CliError> {
    let old = Manifest::load(manifest)?;
    let mut cfg = old.experiment()?;
    if let Some(o) = out {
        cfg.run.out = Some(o);
    }
    let words: Vec<&str> = old.command.iter().map(String::as_str).collect();
    let started = Instant::now();
    let (art, _) = dispatch(&words, &cfg)?;
    let Some(art) = art else {
        return Err(CliError::Schema("the manifest's run wrote no artifacts".into()));
    };
    let new_manifest = write_manifest(&words, &cfg, &art, started)?;
    let new = Manifest::load(&new_manifest)?;
    let mut same = new.outputs.len() == old.outputs.len();
    for (name, hash) in &old.outputs {
        match new.outputs.get(name) {
            Some(h) if h == hash => {}
            Some(_) => {
                eprintln!("differs: {name}");
                same = false;
            }
            None => {
                eprintln!("missing: {name}");
                same = false;
            }
        }
    }
    if same {
        eprintln!("reproduced all {} artifact(s)", old.outputs.len());
    }
    Ok(same)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("cannot start {j} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Dists { action: DistsAction::Check { dist, args } } => (|| {
            let spec = dist.as_deref().map(parse_dist).transpose()?;
            let mut cfg = load(&args, Kind::Dists, false)?;
            cfg.expect_kind(Kind::Dists)?;
            // recorded in the config so a rerun sees the same law
            if let Some(spec) = spec {
                match &mut cfg.model {
                    Some(m) => m.service = spec,
                    None => cfg.model = Some(ModelBlock::with_service(spec)),
                }
            }
            run_command(&["dists", "check"], cfg)
        })(),
        Command::Sim { action: SimAction::Run(args) } => {
            load(&args, Kind::Sim, true).and_then(|cfg| run_command(&["sim", "run"], cfg))
        }
        Command::Fluid { action: FluidAction::Solve(args) } => {
            load(&args, Kind::Fluid, true).and_then(|cfg| run_command(&["fluid", "solve"], cfg))
        }
        Command::Limit { action: LimitAction::Run(args) } => {
            load(&args, Kind::Limit, true).and_then(|cfg| run_command(&["limit", "run"], cfg))
        }
        Command::Verify { check, args } => load(&args, Kind::Verify, false).and_then(|mut cfg| {
            commands::seed_check(&mut cfg, check, args.seed);
            run_command(&["verify", check.label()], cfg)
        }),
        Command::Rerun { manifest, out } => rerun(&manifest, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("msq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
