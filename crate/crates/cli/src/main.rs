use clap::{Parser, Subcommand};
use splitfield_cli::config::{ExperimentConfig, CONFIG_SCHEMA};
use splitfield_cli::experiments::{run_experiment, selftest_battery, RunOutcome};
use splitfield_cli::report::canonical_json;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "splitfield",
    version,
    about = "Experiments on splittable random fields, driven by JSON configs"
)]
struct Cli {
    /// Override the seed from the config (selftest default: 42).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a JSON config file.
    Run { config: PathBuf },
    /// Print the accepted config schema.
    Schema,
    /// Run the built-in battery with a fixed seed and write its reports.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let result = match cli.cmd {
        Cmd::Run { config } => cmd_run(&config, cli.seed, cli.out.as_deref()),
        Cmd::Schema => {
            print!("{CONFIG_SCHEMA}");
            Ok(true)
        }
        Cmd::Selftest => cmd_selftest(cli.seed, cli.out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<bool, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = Some(o.display().to_string());
    }
    let outcome = run_experiment(&cfg).map_err(|e| format!("{}: {e}", path.display()))?;
    let dir = PathBuf::from(cfg.out.as_deref().unwrap_or("reports"));
    write_outcome(&dir, &outcome)?;
    println!("{}", outcome.summary);
    Ok(outcome.pass)
}

fn cmd_selftest(seed: Option<u64>, out: Option<&Path>) -> Result<bool, String> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("selftest-out"));
    let mut all_pass = true;
    for cfg in selftest_battery(seed.unwrap_or(42)) {
        let outcome =
            run_experiment(&cfg).map_err(|e| format!("selftest {}: {e}", cfg.experiment))?;
        write_outcome(&dir, &outcome)?;
        println!("{}", outcome.summary);
        all_pass &= outcome.pass;
    }
    println!("selftest: {}", if all_pass { "pass" } else { "fail" });
    Ok(all_pass)
}

fn write_outcome(dir: &Path, outcome: &RunOutcome) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let json_path = dir.join(format!("{}.json", outcome.experiment));
    fs::write(&json_path, canonical_json(&outcome.json))
        .map_err(|e| format!("cannot write {}: {e}", json_path.display()))?;
    let csv_path = dir.join(format!("{}.csv", outcome.experiment));
    fs::write(&csv_path, outcome.csv.render())
        .map_err(|e| format!("cannot write {}: {e}", csv_path.display()))?;
    Ok(())
}
