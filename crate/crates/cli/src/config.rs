use std::path::{Path, PathBuf};

use gendyne_core::fock;
use gendyne_core::povm::Unravelling;
use gendyne_core::sme::{Engine, InitialState, SmeConfig, Stepper, DEFAULT_MAX_DT};
use serde::{Deserialize, Serialize};

use crate::args::{EngineArg, Format, RunArgs, StepperArg};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Trajectory,
    Ensemble,
    PovmAudit,
    SchemeCheck,
    SchemeSample,
    SteadyScan,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Trajectory => "trajectory",
            CommandKind::Ensemble => "ensemble",
            CommandKind::PovmAudit => "povm-audit",
            CommandKind::SchemeCheck => "scheme-check",
            CommandKind::SchemeSample => "scheme-sample",
            CommandKind::SteadyScan => "steady-scan",
        }
    }
}

/// Fully resolved parameters of one run; this is what the manifest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub upsilon: Vec<f64>,
    pub n_bath: f64,
    pub dt: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub dim: usize,
    pub seed: u64,
    pub engine: Engine,
    pub stepper: Stepper,
    pub substeps: usize,
    pub init: InitialState,
    pub burn_in: f64,
    pub sample_every: usize,
    pub thetas: Vec<[f64; 2]>,
    pub format: Format,
    pub out: PathBuf,
}

const SCAN_UPSILON: [f64; 5] = [-0.9, -0.5, 0.0, 0.5, 0.9];
const AUDIT_THETAS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, -0.5], [-1.5, 1.0]];

impl RunConfig {
    /// Fills unset flags with per-command defaults and validates the result.
    pub fn resolve(command: CommandKind, a: &RunArgs) -> CliResult<Self> {
        use CommandKind::*;
        let upsilon = if a.upsilon.is_empty() {
            match command {
                SteadyScan => SCAN_UPSILON.to_vec(),
                _ => vec![0.0],
            }
        } else {
            a.upsilon.clone()
        };
        let t_final = a.t_final.unwrap_or(match command {
            Ensemble => 2.0,
            SteadyScan => 8.0,
            _ => 1.0,
        });
        let dt = a.dt.unwrap_or(1e-3);
        let n_steps = if dt > 0.0 { (t_final / dt).round().max(1.0) as usize } else { 1 };
        let format = a.format.unwrap_or(match command {
            PovmAudit | SchemeCheck => Format::Json,
            _ => Format::Csv,
        });
        let thetas = if a.theta.is_empty() {
            AUDIT_THETAS.to_vec()
        } else {
            a.theta.iter().map(|s| parse_pair(s)).collect::<CliResult<_>>()?
        };
        let cfg = Self {
            command,
            upsilon,
            n_bath: a.n_bath.unwrap_or(1.0),
            dt,
            t_final,
            n_traj: a.n_traj.unwrap_or(match command {
                Trajectory => 1,
                SteadyScan => 8,
                SchemeSample => 10_000,
                _ => 64,
            }),
            dim: a.dim.unwrap_or(match command {
                PovmAudit => 15,
                SchemeCheck => 40,
                _ => 30,
            }),
            seed: a.seed.unwrap_or(1),
            engine: match a.engine.unwrap_or(EngineArg::Both) {
                EngineArg::Fock => Engine::Fock,
                EngineArg::Gaussian => Engine::Gaussian,
                EngineArg::Both => Engine::Both,
            },
            stepper: match a.stepper.unwrap_or(StepperArg::Kraus) {
                StepperArg::Euler => Stepper::Euler,
                StepperArg::Kraus => Stepper::Kraus,
                StepperArg::Milstein => Stepper::Milstein,
            },
            substeps: a.substeps.unwrap_or(1),
            init: parse_init(a.init.as_deref().unwrap_or("coherent:1,0"))?,
            burn_in: a.burn_in.unwrap_or(t_final / 2.0),
            sample_every: a.sample_every.unwrap_or((n_steps / 200).max(1)),
            thetas,
            format,
            out: a
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{}.{}", command.name(), format.extension()))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.upsilon.is_empty() {
            return bad("at least one --upsilon is required".into());
        }
        if self.command != CommandKind::SteadyScan && self.upsilon.len() != 1 {
            return bad(format!("{} takes a single --upsilon", self.command.name()));
        }
        for &u in &self.upsilon {
            Unravelling::new(u, self.n_bath)?;
        }
        if !(self.dt > 0.0 && self.dt <= DEFAULT_MAX_DT) {
            return bad(format!("--dt must lie in (0, {DEFAULT_MAX_DT}] (got {})", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("--t-final must be positive and finite (got {})", self.t_final));
        }
        if self.n_traj == 0 {
            return bad("--n-traj must be at least 1".into());
        }
        if !(2..=fock::MAX_DIM).contains(&self.dim) {
            return bad(format!("--dim must lie in [2, {}] (got {})", fock::MAX_DIM, self.dim));
        }
        if self.substeps == 0 || self.sample_every == 0 {
            return bad("--substeps and --sample-every must be at least 1".into());
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_final) {
            return bad(format!("--burn-in must lie in [0, t_final) (got {})", self.burn_in));
        }
        if self.thetas.iter().flatten().any(|x| !x.is_finite()) {
            return bad("--theta values must be finite".into());
        }
        if self.engine.runs_gaussian() && matches!(self.init, InitialState::Fock { .. }) && self.uses_sme() {
            return bad("a Fock initial state needs --engine fock".into());
        }
        Ok(())
    }

    fn uses_sme(&self) -> bool {
        matches!(self.command, CommandKind::Trajectory | CommandKind::Ensemble | CommandKind::SteadyScan)
    }

    pub fn upsilon(&self) -> f64 {
        self.upsilon[0]
    }

    pub fn sme_config(&self, upsilon: f64) -> CliResult<SmeConfig> {
        let mut cfg = SmeConfig::with_t_final(Unravelling::new(upsilon, self.n_bath)?, self.dt, self.t_final, self.dim, self.seed, self.engine)?;
        cfg.stepper = self.stepper;
        cfg.fock_substeps = self.substeps;
        Ok(cfg)
    }

    /// `out` with its extension replaced by `suffix`, e.g. `run.csv` → `run.manifest.json`.
    pub fn companion(&self, suffix: &str) -> PathBuf {
        companion(&self.out, suffix)
    }
}

pub fn companion(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn parse_pair(s: &str) -> CliResult<[f64; 2]> {
    let bad = || CliError::Config(format!("expected two comma-separated numbers, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

pub fn parse_init(s: &str) -> CliResult<InitialState> {
    let bad = || CliError::Config(format!("unknown initial state {s:?} (vacuum, thermal:N, coherent:RE,IM, fock:N)"));
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "vacuum" if arg.is_empty() => Ok(InitialState::Thermal { n: 0.0 }),
        "thermal" => {
            let n: f64 = arg.parse().map_err(|_| bad())?;
            if !(n >= 0.0 && n.is_finite()) {
                return Err(bad());
            }
            Ok(InitialState::Thermal { n })
        }
        "coherent" => {
            let [re, im] = parse_pair(arg)?;
            Ok(InitialState::Coherent { re, im })
        }
        "fock" => Ok(InitialState::Fock { n: arg.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_replaces_extension() {
        assert_eq!(companion(Path::new("d/run.csv"), "manifest.json"), PathBuf::from("d/run.manifest.json"));
        assert_eq!(companion(Path::new("run"), "fock.csv"), PathBuf::from("run.fock.csv"));
    }

    #[test]
    fn init_strings() {
        assert_eq!(parse_init("vacuum").unwrap(), InitialState::Thermal { n: 0.0 });
        assert_eq!(parse_init("coherent:1,-0.5").unwrap(), InitialState::Coherent { re: 1.0, im: -0.5 });
        assert_eq!(parse_init("fock:3").unwrap(), InitialState::Fock { n: 3 });
        assert!(parse_init("thermal:-1").is_err());
        assert!(parse_init("squeezed").is_err());
    }

    #[test]
    fn scan_defaults_and_guards() {
        let cfg = RunConfig::resolve(CommandKind::SteadyScan, &RunArgs::default()).unwrap();
        assert_eq!(cfg.upsilon, SCAN_UPSILON.to_vec());
        let args = RunArgs {
            upsilon: vec![1.5],
            ..RunArgs::default()
        };
        assert!(matches!(RunConfig::resolve(CommandKind::PovmAudit, &args), Err(CliError::Config(_))));
        let args = RunArgs {
            upsilon: vec![0.1, 0.2],
            ..RunArgs::default()
        };
        assert!(RunConfig::resolve(CommandKind::Trajectory, &args).is_err());
    }
}
