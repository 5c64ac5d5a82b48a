//! Summary tables, trajectory files and a gnuplot script for a comparison.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ddvel::dictionary::format_float;

use crate::error::{CliError, CliResult};
use crate::pipeline::Run;

pub fn trajectory_path(out: &Path, run: &Run) -> PathBuf {
    out.join(format!("traj_{}_{}.csv", run.scenario, run.controller))
}

pub fn write_trajectory(out: &Path, run: &Run) -> CliResult<PathBuf> {
    let path = trajectory_path(out, run);
    let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    run.trajectory.write_csv(BufWriter::new(f))?;
    Ok(path)
}

fn opt_step(s: Option<usize>) -> String {
    s.map_or_else(String::new, |k| k.to_string())
}

pub fn summary_csv(runs: &[Run]) -> String {
    let mut s = String::from(
        "scenario,controller,outcome,expected,final_error,settling_step,max_abs_state,input_energy,fallback_steps,p_outside_steps\n",
    );
    for r in runs {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.controller,
            m.outcome.as_str(),
            r.expected.as_deref().unwrap_or(""),
            format_float(m.final_error),
            opt_step(m.settling_step),
            format_float(m.max_abs_state),
            format_float(m.input_energy),
            m.fallback_steps,
            m.p_outside_steps
        );
    }
    s
}

/// Aligned plain-text version of the summary for the terminal.
pub fn summary_text(runs: &[Run]) -> String {
    let mut s = format!(
        "{:<12} {:<11} {:<12} {:<12} {:>12} {:>8} {:>12}\n",
        "scenario", "controller", "outcome", "expected", "final_err", "settle", "max|x|"
    );
    for r in runs {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<12} {:<11} {:<12} {:<12} {:>12.3e} {:>8} {:>12.3e}",
            r.scenario,
            r.controller,
            m.outcome.as_str(),
            r.expected.as_deref().unwrap_or("-"),
            m.final_error,
            m.settling_step.map_or("-".to_string(), |k| k.to_string()),
            m.max_abs_state
        );
    }
    s
}

/// One panel per scenario with the angle of every controller and the
/// reference.
pub fn gnuplot_script(runs: &[Run]) -> String {
    let mut scenarios: Vec<&str> = Vec::new();
    for r in runs {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut s = String::from("set datafile separator ','\nset key autotitle columnheader\nset xlabel 't [s]'\nset ylabel 'theta [rad]'\n");
    let _ = writeln!(s, "set multiplot layout {},1", scenarios.len().max(1));
    for sc in &scenarios {
        let _ = writeln!(s, "set title '{sc}'");
        let mut plots: Vec<String> = runs
            .iter()
            .filter(|r| r.scenario == *sc)
            .map(|r| format!("'traj_{}_{}.csv' using \"t\":\"x1\" with lines title '{}'", r.scenario, r.controller, r.controller))
            .collect();
        if let Some(r) = runs.iter().find(|r| r.scenario == *sc) {
            plots.push(format!("'traj_{}_{}.csv' using \"t\":\"ref\" with lines dashtype 2 title 'reference'", r.scenario, r.controller));
        }
        let _ = writeln!(s, "plot [:] [-4:4] {}", plots.join(", \\\n     "));
    }
    s.push_str("unset multiplot\n");
    s
}

/// Everything under `out`; returns the written paths.
pub fn write_all(out: &Path, runs: &[Run]) -> CliResult<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in runs {
        paths.push(write_trajectory(out, r)?);
    }
    for (name, text) in [
        ("summary.csv", summary_csv(runs)),
        ("summary.txt", summary_text(runs)),
        ("plot.gp", gnuplot_script(runs)),
    ] {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
