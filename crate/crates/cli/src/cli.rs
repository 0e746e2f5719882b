//! Argument parsing and dispatch for the `sac` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sac_core::tasks::Split;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "sac", version, about = "Sparse adaptive connection attention: training, evaluation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (sectioned key = value file).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`; repeatable, applied in order.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let mut ov = self.overrides.clone();
        if let Some(s) = self.seed {
            ov.push(format!("train.seed={s}"));
        }
        RunConfig::load(self.config.as_deref(), &ov)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and write metrics.jsonl, checkpoint.bin and summary.txt.
    Train(Common),
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Decode the edge set for one example and write edges.tsv.
    Edges {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Example index within the split.
        #[arg(long, default_value_t = 0)]
        example: usize,
    },
    /// Attention cost scaling over a list of sequence lengths.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        ns: Vec<usize>,
    },
    /// Gradient, oracle and invariant checks.
    Selftest,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Train(c) => {
            let cfg = c.config()?;
            let o = run::train_command(&cfg, &c.out)?;
            println!("steps={} stopped_early={} test_{:?}={}", o.steps, o.stopped_early, o.metric_name, o.test_metric());
            println!("test: {}", o.test);
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = common.config()?;
            let ev = run::eval_command(&cfg, &checkpoint, split.into(), &common.out)?;
            println!("{ev}");
        }
        Command::Edges {
            common,
            checkpoint,
            split,
            example,
        } => {
            let cfg = common.config()?;
            let es = run::edges_command(&cfg, checkpoint.as_deref(), split.into(), example, &common.out)?;
            println!(
                "wrote {} edges ({} layers) to {}",
                es.total_edges(),
                es.num_layers(),
                run::OutFiles::new(&common.out).edges.display()
            );
        }
        Command::Bench { common, ns } => {
            let cfg = common.config()?;
            let r = run::bench_command(&cfg, &ns, &common.out)?;
            println!("n\tdense_scores\tsparse_scores\tdense_act\tsparse_act");
            for row in &r.rows {
                println!("{}\t{}\t{}\t{}\t{}", row.n, row.dense_scores, row.sparse_scores, row.dense_activations, row.sparse_activations);
            }
            println!("dense ratios {:?}", r.dense_ratios());
            println!("sparse ratios {:?}", r.sparse_ratios());
            println!("sparse activation exponent {:.4}", r.sparse_activation_exponent());
        }
        Command::Selftest => {
            let checks = sac_core::selftest::run_all();
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Ok(3);
            }
        }
    }
    Ok(0)
}
