use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ssl_lab::error::{EXIT_FAILURE, EXIT_USAGE};
use ssl_lab::plot::{emit_plot, PlotStyle};
use ssl_lab::report::report_theory_vs_sim;
use ssl_lab::{registry, runner, ExperimentKind, LabError};

#[derive(Debug, Parser)]
#[command(name = "ssl-lab", version, about = "Run JEPA/MAE learning-dynamics experiments")]
struct Cli {
    /// Root directory for run outputs; each run goes to `<DIR>/<name>`.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Replace every seed list in the config with this single seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment from a config file or a bundled name.
    Run { config: String },
    /// Tabulate theory against simulation for finished runs.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Expected experiment kind (defaults to that of the first run).
        #[arg(long)]
        kind: Option<String>,
        /// Write the Markdown table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a CSV artifact as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
        /// Output path (defaults to the CSV path with an `.svg` extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled experiments.
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<LabError>().map_or(EXIT_FAILURE, LabError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(LabError::Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Run { config } => {
            let config = registry::resolve(&config)?;
            let opts = runner::RunOptions { output_root: cli.output_dir, seed_override: cli.seed_override };
            let a = runner::run(&config, &opts)?;
            println!("{} ({}) -> {}", a.metadata.name, a.metadata.kind, a.dir.display());
            for (file, n) in &a.metadata.records {
                println!("  {file}: {n} rows");
            }
            for f in a.svg_files.iter().chain(&a.other_files) {
                println!("  {}", f.file_name().unwrap_or_default().to_string_lossy());
            }
            println!("  {}", runner::METADATA_FILE);
        }
        Command::Report { run_dirs, kind, out } => {
            let kind = kind
                .map(|k| ExperimentKind::parse(&k).ok_or_else(|| LabError::Usage(format!("unknown experiment kind `{k}`"))))
                .transpose()?;
            let report = report_theory_vs_sim(&run_dirs, kind)?;
            let md = report.to_markdown();
            match out {
                Some(path) => std::fs::write(&path, md).map_err(|e| LabError::io(&path, e))?,
                None => print!("{md}"),
            }
        }
        Command::Plot { csv, log_x, log_y, title, out } => {
            let path = emit_plot(&csv, &PlotStyle { log_x, log_y, title }, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::ListExperiments => {
            for c in registry::all()? {
                println!("{:<22} {:<20} {}", c.name, c.kind(), c.description.unwrap_or_default());
            }
        }
    }
    Ok(())
}
