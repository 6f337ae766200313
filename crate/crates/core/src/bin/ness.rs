use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ness::harness::{self, RunConfig};
use ness::tasks::{self, SuiteKind, SuiteSpec};
use ness::{Error, Result};

#[derive(Parser)]
#[command(name = "ness", version, about = "Continual learning with null-space adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic suite in the ness-suite v1 format.
    GenTasks {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        interference: Option<f64>,
    },
    /// Run several configs on one suite and write comparison.csv.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute ACC and BWT from stored accuracy matrices.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn print_report(r: &harness::RunReport) {
    let bwt = r
        .bwt
        .map_or("n/a".to_string(), |b| format!("{:.2} ± {:.2}", b.mean, b.std));
    println!(
        "{}: ACC {:.2} ± {:.2}, BWT {}, {} seed(s) in {:.1}s",
        r.label,
        r.acc.mean,
        r.acc.std,
        bwt,
        r.seeds.len(),
        r.wall_clock_seconds
    );
    for f in &r.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let report = harness::run_suite(&cfg)?;
            harness::emit_reports(&report, &out)?;
            print_report(&report);
        }
        Command::GenTasks {
            suite,
            seed,
            out,
            tasks: t,
            dim,
            classes,
            samples,
            interference,
        } => {
            let kind: SuiteKind = suite.parse()?;
            if kind == SuiteKind::File {
                return Err(Error::Config("gen-tasks needs a synthetic suite kind".into()));
            }
            let mut spec = SuiteSpec::preset(kind, seed);
            spec.tasks = t.unwrap_or(spec.tasks);
            spec.dim = dim.unwrap_or(spec.dim);
            spec.classes = classes.unwrap_or(spec.classes);
            spec.samples = samples.unwrap_or(spec.samples);
            spec.interference = interference.unwrap_or(spec.interference);
            let data = tasks::generate(&spec)?;
            tasks::write_suite_file(&out, &data)?;
        }
        Command::Compare { configs, out } => {
            let cfgs = configs.iter().map(|p| RunConfig::load(p)).collect::<Result<Vec<_>>>()?;
            let reports = harness::compare(&cfgs)?;
            let path = harness::emit_comparison(&reports, &out)?;
            for r in &reports {
                print_report(r);
            }
            println!("wrote {}", path.display());
        }
        Command::Report { input } => {
            let stored = harness::read_report_dir(&input)?;
            print!("{}", stored.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let part = s.to_string();
                if !msg.contains(&part) {
                    msg.push_str(": ");
                    msg.push_str(&part);
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
