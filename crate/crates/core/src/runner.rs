//! Scenario runner: compiles, simulates, reports and writes the artifact
//! manifest. Also runs seeded replicate studies.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analysis::{resample_uniform, stddev_vs_theory, AnalysisError, StdDevSummary, TitrationCurve};
use crate::chem::{self, AcidKind, AcidSpec};
use crate::planner::{compile, Compiled, GrammarProfile, PlannerError};
use crate::protocol::canonical::{self, CodecError};
use crate::report::{csv, generate_report, titration_points, Report, ReportError};
use crate::scenario::{ConfigError, ScenarioConfig};
use crate::sim::{run_compiled, RunOutcome, RunStatus, SimError};
use crate::supervisors::ScenarioKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ENVIRONMENT: i32 = 2;
pub const EXIT_ESCALATED: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("{feedback}")]
    Environment { feedback: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("replicate studies need at least two runs, got {0}")]
    TooFewReplicates(u32),
    #[error("replicate studies need a pH titration scenario")]
    NotATitration,
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Environment { .. } => EXIT_ENVIRONMENT,
            RunError::Report(ReportError::IncompleteRun { .. }) => EXIT_ESCALATED,
            _ => EXIT_CONFIG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Md,
    #[default]
    Both,
}

/// An in-memory run: plan, outcome and (when the run got far enough) the
/// report.
#[derive(Debug, Clone)]
pub struct Executed {
    pub compiled: Compiled,
    pub outcome: RunOutcome,
    pub report: Option<Report>,
}

impl Executed {
    pub fn exit_code(&self) -> i32 {
        match self.outcome.status {
            RunStatus::Accepted => EXIT_OK,
            RunStatus::Escalated { .. } => EXIT_ESCALATED,
        }
    }
}

/// Compiles the instruction and checks the bench.
pub fn plan(config: &ScenarioConfig) -> Result<Compiled, RunError> {
    let inventory = config.inventory()?;
    let compiled = compile(&config.instruction, &GrammarProfile::bundled(), &inventory)?;
    if !compiled.plan.environment_check.satisfied {
        return Err(RunError::Environment {
            feedback: compiled
                .plan
                .environment_check
                .user_feedback
                .clone()
                .unwrap_or_default(),
        });
    }
    Ok(compiled)
}

/// Runs the scenario with `seed` without touching the file system.
pub fn execute(config: &ScenarioConfig, seed: u64) -> Result<Executed, RunError> {
    let compiled = plan(config)?;
    let outcome = run_compiled(config, &compiled, seed)?;
    let report = match generate_report(&outcome, config) {
        Ok(r) => Some(r),
        Err(e) if outcome.accepted() => return Err(e.into()),
        Err(_) => None,
    };
    Ok(Executed {
        compiled,
        outcome,
        report,
    })
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    files.push(path);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Writes a run's artifacts into `dir` and returns the written paths.
pub fn write_artifacts(exec: &Executed, dir: &Path, format: Format) -> Result<Vec<PathBuf>, RunError> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let plan = canonical::encode_pretty(&exec.compiled.plan)?;
    write(dir, "plan.json", &plan, &mut files)?;
    write(dir, "datastore.jsonl", &exec.outcome.datastore.to_jsonl()?, &mut files)?;
    let transitions = canonical::encode_pretty(&exec.outcome.transitions)?;
    write(dir, "transitions.json", &transitions, &mut files)?;
    if let Some(report) = &exec.report {
        if matches!(format, Format::Json | Format::Both) {
            write(dir, "report.json", &report.to_json()?, &mut files)?;
        }
        if matches!(format, Format::Md | Format::Both) {
            write(dir, "report.md", &report.markdown, &mut files)?;
        }
        write(dir, "process.csv", &report.process_csv, &mut files)?;
        for (name, body) in report.chart_files() {
            write(dir, name, &body, &mut files)?;
        }
    }
    Ok(files)
}

/// Compile, simulate, report and write. Returns the exit code and the
/// written files, or an error carrying its own exit code.
pub fn run(config: &ScenarioConfig, seed: Option<u64>, out: &Path, format: Format) -> Result<(Executed, Vec<PathBuf>), RunError> {
    let seed = seed.unwrap_or(config.seed);
    let exec = execute(config, seed)?;
    let files = write_artifacts(&exec, out, format)?;
    Ok((exec, files))
}

/// The analyte of a pH titration scenario.
pub fn analyte_of(config: &ScenarioConfig, compiled: &Compiled) -> Result<(AcidSpec, f64), RunError> {
    if compiled.kind != ScenarioKind::PhTitration {
        return Err(RunError::NotATitration);
    }
    let p = &compiled.plan.parsed_instruction.initial_conditions.parameters;
    let get = |k: &str| p.get(k).map(|q| q.value).ok_or(RunError::NotATitration);
    Ok((
        AcidSpec {
            name: compiled.plan.parsed_instruction.initial_conditions.chemical_system.clone(),
            kind: if config.chemistry.pka.is_empty() {
                AcidKind::Strong
            } else {
                AcidKind::Weak
            },
            pka: config.chemistry.pka.clone(),
            concentration: get("concentration")?,
            volume: get("volume")? * 1e-3,
        },
        get("titrant_concentration")?,
    ))
}

#[derive(Debug, Clone)]
pub struct ReplicateStudy {
    pub runs: Vec<Executed>,
    pub summary: StdDevSummary,
    pub equivalence_volumes: Vec<f64>,
}

/// Std-dev of replicate curves against the noiseless theory curve.
pub fn replicate_summary(
    config: &ScenarioConfig,
    runs: &[Executed],
) -> Result<(StdDevSummary, Vec<f64>), RunError> {
    let first = runs.first().ok_or(RunError::TooFewReplicates(0))?;
    let (analyte, titrant) = analyte_of(config, &first.compiled)?;
    let step = config.analysis.resample_step;
    let mut curves = Vec::new();
    for r in runs {
        let c = resample_uniform(&TitrationCurve::new(titration_points(&r.outcome.datastore)), step)?;
        curves.push(c);
    }
    let n = curves.iter().map(|c| c.points.len()).min().unwrap_or(0);
    for c in &mut curves {
        c.points.truncate(n);
    }
    let grid: Vec<f64> = curves[0].volumes();
    let theory = chem::titration_curve(&analyte, titrant, &grid)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let v_eq = chem::equivalence_volumes_ml(&analyte, titrant);
    let summary = stddev_vs_theory(&curves, &theory, &v_eq, config.analysis.stddev_half_width)?;
    Ok((summary, v_eq))
}

/// Runs seeds `base..base+n` and summarises their spread.
pub fn replicate(config: &ScenarioConfig, n: u32, base_seed: u64) -> Result<ReplicateStudy, RunError> {
    if n < 2 {
        return Err(RunError::TooFewReplicates(n));
    }
    let runs = (0..n as u64)
        .map(|i| execute(config, base_seed + i))
        .collect::<Result<Vec<_>, _>>()?;
    let (summary, equivalence_volumes) = replicate_summary(config, &runs)?;
    Ok(ReplicateStudy {
        runs,
        summary,
        equivalence_volumes,
    })
}

/// Writes every replicate into `out/replicate_<seed>/` plus `stddev.csv`
/// and `stddev_summary.json` at the top.
pub fn write_replicates(study: &ReplicateStudy, out: &Path, format: Format) -> Result<Vec<PathBuf>, RunError> {
    create_dir(out)?;
    let mut files = Vec::new();
    for r in &study.runs {
        let dir = out.join(format!("replicate_{}", r.outcome.seed));
        files.extend(write_artifacts(r, &dir, format)?);
    }
    let s = &study.summary;
    write(out, "stddev.csv", &csv("V_mL,sigma_pH", &s.series), &mut files)?;
    let summary = json!({
        "seeds": study.runs.iter().map(|r| r.outcome.seed).collect::<Vec<_>>(),
        "equivalence_volumes_ml": study.equivalence_volumes,
        "plateau_min": s.plateau_min,
        "plateau_median": s.plateau_median,
        "plateau_mean": s.plateau_mean,
        "plateau_max": s.plateau_max,
        "transition_max": s.transition_max,
        "transition_max_volume_ml": s.transition_max_volume,
        "exit_codes": study.runs.iter().map(Executed::exit_code).collect::<Vec<_>>(),
    });
    write(out, "stddev_summary.json", &canonical::encode_pretty(&summary)?, &mut files)?;
    Ok(files)
}
