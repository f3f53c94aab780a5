//! The acceptance suite: one named check per criterion.

use crate::commands::{self, Command};
use crate::context::{CliError, Run};
use crate::output::{Check, Section, Table};
use crate::sections as s;

type Part = fn(&Run) -> Result<Section, CliError>;

pub const CRITERIA: [(&str, &[Part]); 12] = [
    ("threshold oracle", &[s::threshold_oracle]),
    ("classical limit", &[s::classical_limit]),
    ("singular-limit rates", &[s::rates]),
    ("transversality", &[s::transversality]),
    ("structure identities", &[s::structure]),
    ("uniform gap and decay", &[s::gap, s::decay]),
    ("periodic solvability", &[s::periodic_solvability]),
    ("semisimplicity", &[s::poles]),
    ("uniform omega-solvability", &[s::omega_uniformity]),
    ("energy machinery", &[s::energy]),
    ("resolvent probes", &[s::probes]),
    ("Stokes", &[s::stokes]),
];

pub const DETERMINISM: &str = "determinism";

/// Subcommands re-run for the determinism criterion.
pub const DETERMINISM_COMMANDS: [Command; 6] = [
    Command::Critical,
    Command::SweepEps,
    Command::Branch,
    Command::Gap,
    Command::Resolvent,
    Command::StokesCheck,
];

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    /// Sub-checks, or the error that stopped the criterion.
    pub checks: Vec<Check>,
    pub error: Option<String>,
}

impl Criterion {
    pub fn line(&self) -> String {
        let why = match (&self.error, self.passed) {
            (Some(e), _) => format!("error: {e}"),
            (None, true) => format!("{} checks", self.checks.len()),
            (None, false) => self
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{} ({})", c.name, c.detail))
                .collect::<Vec<_>>()
                .join("; "),
        };
        format!(
            "criterion {:2} {:<28} {}  {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            why
        )
    }
}

pub struct AcceptanceReport {
    pub criteria: Vec<Criterion>,
    pub sections: Section,
}

impl AcceptanceReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// One check per criterion, with every sub-check in a detail table.
    pub fn into_section(self) -> Section {
        let mut sec = self.sections;
        let mut detail = Table::new("acceptance_detail", &["criterion", "check", "passed", "value", "limit"]);
        for c in &self.criteria {
            for k in &c.checks {
                detail.push(vec![
                    c.id.into(),
                    k.name.as_str().into(),
                    k.passed.into(),
                    k.value.into(),
                    k.limit.into(),
                ]);
            }
        }
        sec.tables.push(detail);
        sec.checks = self
            .criteria
            .iter()
            .map(|c| {
                let line = c.line();
                let detail = line.split_once(if c.passed { "PASS" } else { "FAIL" }).map_or(line.clone(), |x| {
                    x.1.trim().to_string()
                });
                let mut k = Check::flag(&format!("criterion {} {}", c.id, c.name), c.passed, detail);
                k.value = c.checks.iter().filter(|k| k.passed).count() as f64;
                k.limit = c.checks.len() as f64;
                k
            })
            .collect();
        sec
    }
}

fn evaluate(run: &Run, parts: &[Part]) -> (Section, Option<String>) {
    let mut sec = Section::default();
    for f in parts {
        match f(run) {
            Ok(s) => sec.merge(s),
            Err(e) => return (sec, Some(e.to_string())),
        }
    }
    (sec, None)
}

fn files(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for cmd in DETERMINISM_COMMANDS {
        out.extend(commands::run(cmd, run)?.files());
    }
    Ok(out)
}

/// Two fresh runs of the determinism subcommands; with the parallel
/// feature the second uses a single worker thread.
pub fn determinism(run: &Run) -> Result<Section, CliError> {
    let first = files(&Run::new(run.cfg.clone())?)?;
    let second = single_threaded(|| Run::new(run.cfg.clone()).and_then(|r| files(&r)))?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let same = first.len() == second.len() && differing.is_empty();
    Ok(Section {
        checks: vec![Check::flag(
            "byte-identical outputs",
            same,
            if same {
                format!("{} files identical across two runs", first.len())
            } else {
                format!("differing: {differing:?}")
            },
        )],
        ..Section::default()
    })
}

#[cfg(feature = "parallel")]
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    f()
}

pub fn run_all(run: &Run) -> Result<AcceptanceReport, CliError> {
    let mut criteria = Vec::new();
    let mut sections = Section::default();
    let all = CRITERIA
        .iter()
        .map(|(n, p)| (*n, *p))
        .chain(std::iter::once((DETERMINISM, &[determinism as Part][..])));
    for (i, (name, parts)) in all.enumerate() {
        let (sec, error) = evaluate(run, parts);
        criteria.push(Criterion {
            id: i + 1,
            name: name.to_string(),
            passed: error.is_none() && !sec.checks.is_empty() && sec.passed(),
            checks: sec.checks.clone(),
            error,
        });
        sections.merge(Section { checks: Vec::new(), ..sec });
    }
    Ok(AcceptanceReport { criteria, sections })
}
