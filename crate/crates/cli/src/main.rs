use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddvel_cli::archive::Archive;
use ddvel_cli::pipeline::{self, ControllerKind, Run};
use ddvel_cli::{report, verify, CliError, CliResult, RunConfig};
use log::{info, warn};

/// Data-driven velocity-form control of the unbalanced disc.
#[derive(Debug, Parser)]
#[command(name = "ddvel", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; built-in defaults without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of scheduling parameters; 0 designs an LTI gain.
    #[arg(long, global = true)]
    np: Option<usize>,
    /// SDP backend: `clarabel` or `projection`.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Write the assembled programs and solutions as text to the output directory.
    #[arg(long, global = true)]
    emit_problem: bool,
    /// Read the data dictionary from this CSV instead of simulating it.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate open-loop data, write data.csv and report PE.
    Collect,
    /// Synthesize controllers and write one JSON archive each.
    Synth {
        /// `velocity`, `direct-lpv`, `lti` or `all`.
        #[arg(long, default_value = "velocity")]
        controller: String,
    },
    /// Run the configured scenarios for one archive.
    Simulate {
        #[arg(long)]
        archive: PathBuf,
    },
    /// Run the scenarios for several archives side by side.
    Compare {
        /// Defaults to the three archives in the output directory.
        #[arg(long = "archive")]
        archives: Vec<PathBuf>,
    },
    /// Run the invariant suite, including re-verification of any archives.
    Verify {
        #[arg(long = "archive")]
        archives: Vec<PathBuf>,
    },
}

fn config(g: &Global) -> CliResult<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &g.data {
        cfg.data.file = Some(d.clone());
    }
    if let Some(b) = &g.backend {
        cfg.solver.backend = b.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(cfg)
}

fn kinds(name: &str) -> CliResult<Vec<ControllerKind>> {
    if name == "all" {
        return Ok(ControllerKind::ALL.to_vec());
    }
    ControllerKind::parse(name)
        .map(|k| vec![k])
        .ok_or_else(|| CliError::Config(format!("unknown controller `{name}`")))
}

fn collect(g: &Global) -> CliResult<()> {
    let cfg = config(g)?;
    let d = pipeline::collect(&cfg)?;
    let path = cfg.out.join("data.csv");
    d.save(&path)?;
    println!("wrote {} ({} samples)", path.display(), d.len());
    for kind in [ControllerKind::Velocity, ControllerKind::DirectLpv] {
        let mut variants = vec![("plant state", true)];
        if cfg.design(kind).alpha.is_some() {
            variants.push(("with integrator", false));
        }
        for (label, plant_only) in variants {
            let line = match pipeline::pe_report(&cfg, &d, kind, g.np, plant_only) {
                Ok(pe) => format!("rank {}/{} PE {}", pe.rank, pe.required, if pe.is_pe { "yes" } else { "no" }),
                Err(e) => format!("PE no ({e})"),
            };
            println!("{:<11} {:<16} {line}", kind.name(), label);
        }
    }
    Ok(())
}

fn synth(g: &Global, controller: &str) -> CliResult<()> {
    let cfg = config(g)?;
    let d = pipeline::collect(&cfg)?;
    let backend = pipeline::backend(&cfg, None)?;
    let emit = g.emit_problem.then_some(cfg.out.as_path());
    for kind in kinds(controller)? {
        let a = pipeline::synthesize(&cfg, &d, kind, g.np, backend.as_ref(), emit)?;
        let path = pipeline::archive_path(&cfg.out, kind);
        a.save(&path)?;
        let failed = a.verification.iter().filter(|c| !c.passed).count();
        println!(
            "{:<11} {} n_p={} rank {}/{} checks {}/{} passed -> {}",
            kind.name(),
            a.diagnostics.status,
            a.n_p,
            a.pe_rank,
            a.pe_required,
            a.verification.len() - failed,
            a.verification.len(),
            path.display()
        );
        if failed > 0 {
            return Err(CliError::Infeasible(format!("{}: {failed} verification checks failed", kind.name())));
        }
    }
    Ok(())
}

fn load_archives(paths: &[PathBuf], out: &Path) -> CliResult<Vec<Archive>> {
    let defaults: Vec<PathBuf>;
    let paths = if paths.is_empty() {
        defaults = ControllerKind::ALL.iter().map(|&k| pipeline::archive_path(out, k)).collect();
        &defaults
    } else {
        paths
    };
    paths
        .iter()
        .map(|p| {
            if p.exists() {
                Archive::load(p)
            } else {
                Err(CliError::Config(format!("archive {} not found (run `ddvel synth` first)", p.display())))
            }
        })
        .collect()
}

fn run_and_report(cfg: &RunConfig, archives: &[Archive]) -> CliResult<()> {
    if cfg.scenarios.is_empty() {
        warn!("no scenarios configured; nothing to simulate");
        println!("no scenarios configured; nothing to simulate");
        return Ok(());
    }
    let runs = pipeline::run_all(cfg, archives)?;
    let paths = report::write_all(&cfg.out, &runs)?;
    info!("wrote {} files to {}", paths.len(), cfg.out.display());
    print!("{}", report::summary_text(&runs));
    let diverged: Vec<&Run> = runs.iter().filter(|r| r.unexpected_divergence()).collect();
    if !diverged.is_empty() {
        let names: Vec<String> = diverged.iter().map(|r| format!("{}/{}", r.scenario, r.controller)).collect();
        return Err(CliError::Divergence(format!("unexpected divergence: {}", names.join(", "))));
    }
    Ok(())
}

fn verify_cmd(g: &Global, archives: &[PathBuf]) -> CliResult<bool> {
    let cfg = config(g)?;
    let d = pipeline::collect(&cfg)?;
    let archives = if archives.is_empty() { vec![] } else { load_archives(archives, &cfg.out)? };
    let lines = verify::run(&cfg, &d, &archives)?;
    for l in &lines {
        println!("{}", l.render());
    }
    Ok(lines.iter().all(|l| l.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Collect => collect(g),
        Command::Synth { controller } => synth(g, controller),
        Command::Simulate { archive } => {
            config(g).and_then(|cfg| run_and_report(&cfg, &load_archives(std::slice::from_ref(archive), &cfg.out)?))
        }
        Command::Compare { archives } => config(g).and_then(|cfg| run_and_report(&cfg, &load_archives(archives, &cfg.out)?)),
        Command::Verify { archives } => match verify_cmd(g, archives) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: invariant suite reported failures");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
