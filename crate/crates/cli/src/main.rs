use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use socsit_core::harness::{
    compare_partitions, run, sweep, write_metrics_to, HarnessError, OutputFormat, RunOptions, RunSummary, Scenario,
    Source, SweepParam,
};
use socsit_core::metrics::series_summary;
use socsit_core::trace::load_ground_truth;

#[derive(Parser)]
#[command(name = "socsit", version, about = "Simulate and score distributed social situation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic scenario end to end.
    Simulate(RunArgs),
    /// Run the pipeline on a recorded trace.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        /// Trace CSV; overrides the scenario's source.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Ground-truth CSV matching `--trace`.
        #[arg(long, requires = "trace")]
        ground_truth: Option<PathBuf>,
    },
    /// Repeat a scenario over values of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// moving_group_ratio, n_agents, loss or noise.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Score a partition file against ground truth.
    Metrics {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        protocol: PathBuf,
        /// Write per-frame scores here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Also write every delivered message.
    #[arg(long)]
    log_deliveries: bool,
    /// Gzip the message logs.
    #[arg(long)]
    gzip: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Jsonl => OutputFormat::Jsonl,
        }
    }
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, HarnessError> {
        let mut s = match &self.config {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(s)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            format: self.format.into(),
            log_deliveries: self.log_deliveries,
            gzip_logs: self.gzip,
        }
    }
}

fn print_summary(s: &RunSummary) {
    println!("samples={}", s.samples);
    println!("rand={:.4} (sd {:.4})", s.rand_mean, s.rand_std);
    println!("ari={:.4} (sd {:.4})", s.ari_mean, s.ari_std);
    println!("jaccard={:.4} (sd {:.4})", s.jaccard_mean, s.jaccard_std);
    println!("false_positive_pairs={}", s.false_positive_pairs);
    println!("messages={}", s.messages);
    println!("bound_violations={}", s.bound_violations);
}

fn run_one(s: &Scenario, args: &RunArgs) -> Result<(), HarnessError> {
    s.validate()?;
    let r = run(s, &args.options())?;
    print_summary(&r.summary);
    if let Some(dir) = &args.out_dir {
        info!("results written to {}", dir.display());
    }
    Ok(())
}

fn load_truth(path: &Path) -> Result<Vec<socsit_core::trace::GroundTruthFrame>, HarnessError> {
    load_ground_truth(path).map_err(|source| HarnessError::Input {
        path: path.to_owned(),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate(args) => {
            let s = args.scenario()?;
            if s.source != Source::Synthetic {
                return Err(HarnessError::Config("simulate needs a synthetic source; use replay".into()));
            }
            run_one(&s, &args)
        }
        Command::Replay {
            run: args,
            trace,
            ground_truth,
        } => {
            let mut s = args.scenario()?;
            if let Some(trace) = trace {
                s.source = Source::Replay { trace, ground_truth };
            }
            if s.source == Source::Synthetic {
                return Err(HarnessError::Config("replay needs --trace or a replay source".into()));
            }
            run_one(&s, &args)
        }
        Command::Sweep { run: args, param, values } => {
            let s = args.scenario()?;
            let rows = sweep(&s, param, &values, &args.options())?;
            println!("{},seed,ari_mean,jaccard_mean,false_positive_pairs,bound_violations", param.name());
            for r in rows {
                println!(
                    "{},{},{:.4},{:.4},{},{}",
                    r.value,
                    r.seed,
                    r.summary.ari_mean,
                    r.summary.jaccard_mean,
                    r.summary.false_positive_pairs,
                    r.summary.bound_violations
                );
            }
            Ok(())
        }
        Command::Metrics {
            truth,
            protocol,
            out,
            format,
        } => {
            let rows = compare_partitions(&load_truth(&truth)?, &load_truth(&protocol)?)?;
            let scores: Vec<_> = rows.iter().filter_map(|r| r.scores).collect();
            if scores.is_empty() {
                return Err(HarnessError::Runtime("no frames to score".into()));
            }
            for (name, f) in [
                ("rand", (|s: &socsit_core::metrics::FrameScores| s.rand) as fn(&_) -> f64),
                ("ari", |s| s.ari),
                ("jaccard", |s| s.jaccard),
            ] {
                let v: Vec<f64> = scores.iter().map(f).collect();
                let (mean, sd) = series_summary(&v).expect("non-empty");
                println!("{name}={mean:.4} (sd {sd:.4})");
            }
            println!(
                "false_positive_pairs={}",
                scores.iter().map(|s| s.false_positive_pairs).sum::<u64>()
            );
            if let Some(out) = out {
                write_metrics_to(&out, &rows, format.into())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
