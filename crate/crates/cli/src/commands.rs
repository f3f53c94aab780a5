//! Subcommand dispatch.

use clap::ValueEnum;

use crate::acceptance;
use crate::context::{CliError, Run};
use crate::output::{ReportBundle, Section};
use crate::sections as s;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Critical,
    SweepEps,
    Branch,
    Gap,
    Resolvent,
    Decay,
    Energy,
    Periodic,
    StokesCheck,
    Acceptance,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Critical => "critical",
            Command::SweepEps => "sweep-eps",
            Command::Branch => "branch",
            Command::Gap => "gap",
            Command::Resolvent => "resolvent",
            Command::Decay => "decay",
            Command::Energy => "energy",
            Command::Periodic => "periodic",
            Command::StokesCheck => "stokes-check",
            Command::Acceptance => "acceptance",
        }
    }
}

fn sections(run: &Run, parts: &[fn(&Run) -> Result<Section, CliError>]) -> Result<Section, CliError> {
    let mut out = Section::default();
    for f in parts {
        out.merge(f(run)?);
    }
    Ok(out)
}

/// Run one subcommand and collect its report. Nothing is written.
pub fn run(cmd: Command, run: &Run) -> Result<ReportBundle, CliError> {
    let body = match cmd {
        Command::Critical => sections(
            run,
            &[s::threshold_oracle, s::classical_limit, s::transversality, s::structure],
        )?,
        Command::SweepEps => s::rates(run)?,
        Command::Branch => s::branch(run)?,
        Command::Gap => s::gap(run)?,
        Command::Resolvent => sections(run, &[s::probes, s::poles])?,
        Command::Decay => s::decay(run)?,
        Command::Energy => s::energy(run)?,
        Command::Periodic => sections(run, &[s::periodic_solvability, s::poles, s::omega_uniformity])?,
        Command::StokesCheck => s::stokes(run)?,
        Command::Acceptance => acceptance::run_all(run)?.into_section(),
    };
    Ok(ReportBundle {
        command: cmd.name().to_string(),
        config: serde_json::to_value(&run.cfg).expect("serializable config"),
        body,
    })
}
