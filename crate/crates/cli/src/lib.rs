//! Command-line front end: resolves configurations, runs the engines and
//! audits, and writes data files with a manifest for exact reruns.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use args::{Cli, Command, RerunArgs};
use commands::RunReport;
use config::{CommandKind, RunConfig};
use error::{CliError, CliResult};
use output::Manifest;

pub fn run(cli: Cli) -> CliResult<RunReport> {
    let (kind, a) = match cli.command {
        Command::Trajectory(a) => (CommandKind::Trajectory, a),
        Command::Ensemble(a) => (CommandKind::Ensemble, a),
        Command::PovmAudit(a) => (CommandKind::PovmAudit, a),
        Command::SchemeCheck(a) => (CommandKind::SchemeCheck, a),
        Command::SchemeSample(a) => (CommandKind::SchemeSample, a),
        Command::SteadyScan(a) => (CommandKind::SteadyScan, a),
        Command::Rerun(r) => return rerun(&r),
    };
    commands::execute(&RunConfig::resolve(kind, &a)?)
}

fn rerun(r: &RerunArgs) -> CliResult<RunReport> {
    let manifest = Manifest::load(&r.manifest)?;
    let mut cfg = manifest.config.clone();
    if let Some(out) = &r.out {
        cfg.out = out.clone();
    }
    let mut report = commands::execute(&cfg)?;
    if r.verify && report.failure.is_none() {
        let recorded: Vec<&str> = manifest.outputs.iter().map(|f| f.sha256.as_str()).collect();
        // The new manifest is the last file written and is not compared.
        let fresh: Vec<&str> = report.files[..report.files.len() - 1].iter().map(|f| f.sha256.as_str()).collect();
        if recorded != fresh {
            let differing: Vec<PathBuf> = report.files.iter().zip(&manifest.outputs).filter(|(a, b)| a.sha256 != b.sha256).map(|(a, _)| a.path.clone()).collect();
            report.failure = Some(CliError::Numerical(format!(
                "rerun differs from manifest ({} vs {} files; differing: {differing:?}; recorded on {} v{}, now {} v{})",
                recorded.len(),
                fresh.len(),
                manifest.platform,
                manifest.core_version,
                output::platform(),
                gendyne_core::VERSION
            )));
        }
    }
    Ok(report)
}
