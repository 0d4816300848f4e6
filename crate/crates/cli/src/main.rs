use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use zephyr::featurize::OcclusionFilter;
use zephyr_cli::{CliError, CliResult, Overrides, Pipeline, PipelineConfig, SplitName};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ArchArg {
    Pointnetpp,
    Pointnet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    Backface,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the procedural object catalog into the models directory.
    GenModels,
    /// Synthesize train (seen objects) and test (unseen objects) scenes.
    GenData,
    /// Generate pose hypotheses for every target.
    Hypo {
        #[arg(long, value_enum, default_value = "both")]
        split: SplitArg,
    },
    /// Train the scorer on the train split.
    Train,
    /// Select one pose per test target.
    Score,
    /// Evaluate estimates: results CSV, summary JSON, overlays.
    Eval,
    /// Run every stage in order.
    All,
}

#[derive(Debug, Parser)]
#[command(name = "zephyr", version, about = "Zero-shot pose hypothesis scoring pipeline")]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    icp: Option<Switch>,
    #[arg(long = "inject-gt", global = true, value_enum)]
    inject_gt: Option<Switch>,
    #[arg(long, global = true, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long = "occlusion-filter", global = true, value_enum)]
    occlusion_filter: Option<FilterArg>,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = PipelineConfig::load(&path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        icp: cli.icp.map(bool::from),
        inject_gt: cli.inject_gt.map(bool::from),
        arch: cli.arch.map(|a| match a {
            ArchArg::Pointnetpp => "pointnetpp".into(),
            ArchArg::Pointnet => "pointnet".into(),
        }),
        occlusion_filter: cli.occlusion_filter.map(|f| match f {
            FilterArg::Backface => OcclusionFilter::Backface,
            FilterArg::None => OcclusionFilter::None,
        }),
    });
    let p = Pipeline::new(cfg)?;
    match cli.command {
        Command::GenModels => {
            p.gen_models()?;
        }
        Command::GenData => p.gen_data()?,
        Command::Hypo { split } => {
            let splits: &[SplitName] = match split {
                SplitArg::Train => &[SplitName::Train],
                SplitArg::Test => &[SplitName::Test],
                SplitArg::Both => &[SplitName::Train, SplitName::Test],
            };
            for &s in splits {
                p.hypo(s)?;
            }
        }
        Command::Train => {
            p.train()?;
        }
        Command::Score => {
            p.score()?;
        }
        Command::Eval => {
            p.eval()?;
        }
        Command::All => {
            p.all()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
