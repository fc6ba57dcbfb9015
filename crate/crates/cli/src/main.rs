//! `synthpost`: generate synthetic social-media corpora from few-shot
//! prompts and report how closely they match the real posts.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synthpost::report::ReportFormat;

use commands::{Analysis, Session};
use config::{Config, ConfigError};

#[derive(Parser, Debug)]
#[command(name = "synthpost", version, about = "Synthetic social-media corpus generation and fidelity reports")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for every output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use offline substitutes for every remote call.
    #[arg(long, global = true)]
    mock_provider: bool,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, validate and optionally sample the real corpus.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        /// jsonl or csv; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
        /// Posts kept per platform.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Generate synthetic corpora for every configured setting.
    Generate(GenerateArgs),
    /// Run one fidelity analysis.
    Analyze {
        #[arg(value_enum)]
        analysis: AnalysisArg,
    },
    /// Render the report from stored analyses.
    Report(ReportArgs),
    /// Ingest, generate, run every analysis and report.
    Pipeline {
        #[command(flatten)]
        generate: GenerateArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Posts per setting.
    #[arg(long)]
    target: Option<usize>,
    /// Comma-separated platforms (default: all in the corpus).
    #[arg(long, value_delimiter = ',')]
    platforms: Option<Vec<String>>,
    /// Comma-separated strategies: agnostic, aware.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many batches.
    #[arg(long)]
    max_batches: Option<u64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Output formats: markdown, csv-bundle, json.
    #[arg(long = "format", value_delimiter = ',')]
    formats: Option<Vec<String>>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AnalysisArg {
    Lexical,
    Sentiment,
    Topics,
    Similarity,
}

impl From<AnalysisArg> for Analysis {
    fn from(a: AnalysisArg) -> Self {
        match a {
            AnalysisArg::Lexical => Analysis::Lexical,
            AnalysisArg::Sentiment => Analysis::Sentiment,
            AnalysisArg::Topics => Analysis::Topics,
            AnalysisArg::Similarity => Analysis::Similarity,
        }
    }
}

fn build_config(global: &Global, command: &Command) -> Result<Config, ConfigError> {
    let mut cfg = match &global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(out) = &global.out {
        cfg.run.out_dir = out.clone();
    }
    if let Some(seed) = global.seed {
        cfg.run.seed = seed;
    }
    cfg.run.mock_provider |= global.mock_provider;
    let (generate, report) = match command {
        Command::Generate(g) => (Some(g), None),
        Command::Report(r) => (None, Some(r)),
        Command::Pipeline { generate, report } => (Some(generate), Some(report)),
        _ => (None, None),
    };
    if let Some(g) = generate {
        if let Some(t) = g.target {
            cfg.generate.target_per_platform = t;
        }
        if let Some(p) = &g.platforms {
            cfg.generate.platforms = p.clone();
        }
        if let Some(s) = &g.strategies {
            cfg.generate.strategies = s.clone();
        }
    }
    if let Some(f) = report.and_then(|r| r.formats.clone()) {
        cfg.run.report_formats = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn formats(cfg: &Config) -> Vec<ReportFormat> {
    cfg.run.report_formats.iter().map(|f| f.parse().expect("validated")).collect()
}

fn run(cli: &Cli, session: &Session) -> anyhow::Result<()> {
    match &cli.command {
        Command::Ingest { input, format, sample } => session.ingest(input.as_deref(), format.as_deref(), *sample),
        Command::Generate(g) => session.generate(g.resume, g.max_batches).map(|_| ()),
        Command::Analyze { analysis } => session.analyze(&[(*analysis).into()]),
        Command::Report(_) => session.report(&formats(&session.cfg)).map(|_| ()),
        Command::Pipeline { generate, .. } => {
            if session.cfg.ingest.input.is_some() {
                session.ingest(None, None, None)?;
            }
            if !session.generate(generate.resume, generate.max_batches)? {
                anyhow::bail!("generation incomplete; not analysing a partial run");
            }
            session.analyze(&Analysis::ALL)?;
            session.report(&formats(&session.cfg)).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cfg = match build_config(&cli.global, &cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &Session { cfg }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
