use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use labloop::runner::{self, Format, EXIT_CONFIG};
use labloop::scenario::ScenarioConfig;

/// Run a simulated closed-loop lab experiment from a scenario file.
#[derive(Debug, Parser)]
#[command(name = "labloop", version)]
struct Cli {
    /// Scenario TOML file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Seed override; the scenario's seed is used otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of seeded replicates (at least 2 when given).
    #[arg(long)]
    replicates: Option<u32>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Enable a named fault from the scenario (repeatable).
    #[arg(long)]
    fault: Vec<String>,
}

fn load(cli: &Cli) -> Result<ScenarioConfig, String> {
    let path = PathBuf::from(&cli.scenario);
    let mut config = if path.exists() {
        ScenarioConfig::load(&path).map_err(|e| e.to_string())?
    } else {
        ScenarioConfig::bundled(&cli.scenario)
            .ok_or_else(|| format!("no scenario file or bundled scenario named `{}`", cli.scenario))?
    };
    for f in &cli.fault {
        config.enable_fault(f).map_err(|e| e.to_string())?;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let seed = cli.seed.unwrap_or(config.seed);

    if let Some(n) = cli.replicates {
        let study = runner::replicate(&config, n, seed).and_then(|s| {
            let files = runner::write_replicates(&s, &cli.out, cli.format)?;
            Ok((s, files))
        });
        return match study {
            Ok((s, files)) => {
                let sum = &s.summary;
                println!(
                    "{} replicates from seed {seed}: plateau sigma {:.4}..{:.4} (median {:.4}), transition max {:.4} at {:.2} mL",
                    s.runs.len(),
                    sum.plateau_min,
                    sum.plateau_max,
                    sum.plateau_median,
                    sum.transition_max,
                    sum.transition_max_volume
                );
                println!("wrote {} files to {}", files.len(), cli.out.display());
                let code = s.runs.iter().map(|r| r.exit_code()).max().unwrap_or(0);
                ExitCode::from(code as u8)
            }
            Err(e) => {
                if let runner::RunError::Environment { feedback } = &e {
                    println!("{feedback}");
                } else {
                    eprintln!("error: {e}");
                }
                ExitCode::from(e.exit_code() as u8)
            }
        };
    }

    match runner::run(&config, Some(seed), &cli.out, cli.format) {
        Ok((exec, files)) => {
            match &exec.outcome.status {
                labloop::sim::RunStatus::Accepted => {
                    println!(
                        "{} (seed {seed}) reached {} after {:.1} s",
                        config.name, exec.outcome.final_state, exec.outcome.duration_s
                    );
                }
                labloop::sim::RunStatus::Escalated { code, detail } => {
                    println!("{} (seed {seed}) escalated: {code}: {detail}", config.name);
                }
            }
            println!("wrote {} files to {}", files.len(), cli.out.display());
            ExitCode::from(exec.exit_code() as u8)
        }
        Err(e) => {
            if let runner::RunError::Environment { feedback } = &e {
                println!("{feedback}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
