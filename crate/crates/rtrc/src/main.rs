use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rtrc::config::RunConfig;
use rtrc::pipeline::{self, AnalyzeOptions, ExportFormat, ExportKind, SampleMode, SampleParams};
use rtrc::server;
use rtrc_core::analytics::ThresholdMode;
use rtrc_core::embedding::{EmbeddingProvider, HashedBagProvider, DEFAULT_MAX_TOKENS, HASHED_DIM};
use rtrc_core::triage::{Band, DEFAULT_BETWEEN_BAND, DEFAULT_BETWEEN_N, DEFAULT_K_PER_CODE, DEFAULT_WITHIN_BAND};
use rtrc_core::Round;

#[derive(Parser)]
#[command(name = "rtrc", version, about = "Reasoning-trace disagreement analytics for multi-agent qualitative coding")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the coding discussion over a corpus
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild a run directory from its recorded replies
    Replay {
        #[arg(long)]
        run: PathBuf,
    },
    /// Compute quadrants, validation statistics and distributions
    Analyze {
        /// Run directories; more than one pools comparisons
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        #[arg(long, conflicts_with = "otsu")]
        tau: Option<f64>,
        /// Pick the threshold from the similarity histogram
        #[arg(long)]
        otsu: bool,
        #[arg(long)]
        exclude_degraded: bool,
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Draw triage cases into the run's review queue
    Sample {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Cases per code (within-misalign)
        #[arg(long, default_value_t = DEFAULT_K_PER_CODE)]
        k: usize,
        /// Total cases (between-align)
        #[arg(long, default_value_t = DEFAULT_BETWEEN_N)]
        n: usize,
        /// Similarity band as LOW:HIGH
        #[arg(long, value_parser = parse_band)]
        band: Option<Band>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Codes to leave out of stratification
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Queue one comparison for review by hand
    AddCase {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        segment: String,
        #[arg(long, value_enum, default_value = "round1")]
        round: RoundArg,
    },
    /// Serve the review API (and optionally static UI files)
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = server::DEFAULT_PORT)]
        port: u16,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Export run data
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        what: What,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Defaults to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the offline embedding of a text as hex f64 bit patterns
    #[command(hide = true)]
    Embed {
        #[arg(long)]
        text: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    WithinMisalign,
    BetweenAlign,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundArg {
    Round1,
    Round2,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Comparisons,
    Cases,
    Segments,
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_band(s: &str) -> Result<Band, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Band::new(lo, hi).map_err(|e| e.to_string())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

/// Exit status 1 means the command finished but some segments failed.
fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            if let Err(msg) = cfg.validate() {
                bail!("{}: {msg}", config.display());
            }
            let summary = runtime()?.block_on(pipeline::execute_run(&cfg))?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(partial(summary.partial_failure()))
        }
        Cmd::Replay { run } => {
            let summary = runtime()?.block_on(pipeline::replay(&run))?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(partial(summary.partial_failure()))
        }
        Cmd::Analyze { run, tau, otsu, exclude_degraded, resamples, out } => {
            let threshold = match (tau, otsu) {
                (_, true) => Some(ThresholdMode::Otsu),
                (Some(t), false) => Some(ThresholdMode::Fixed(t)),
                (None, false) => None,
            };
            let opts = AnalyzeOptions {
                threshold,
                exclude_degraded,
                resamples,
                seed: None,
            };
            let report = pipeline::analyze(&run, opts, &out)?;
            println!("tau={:.4} pairs={} degraded={}", report.tau, report.n_pairs, report.n_degraded);
            for c in &report.quadrants.cells {
                let mean = c.mean_cs.map_or("-".to_string(), |m| format!("{m:.3}"));
                println!("  {:<3} n={:<6} {:>5.1}%  mean_cs={mean}", c.quadrant.as_str(), c.count, 100.0 * c.proportion);
            }
            match (&report.validation, &report.validation_error) {
                (Some(v), _) => println!(
                    "  welch t={:.2} df={:.1} p={:.3e} d={:.3} rho={:.3}",
                    v.welch.t, v.welch.df, v.welch.p_value, v.welch.cohens_d, v.rank.rho
                ),
                (None, Some(e)) => println!("  validation unavailable: {e}"),
                (None, None) => {}
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sample { run, mode, k, n, band, seed, exclude, tau } => {
            let params = match mode {
                Mode::WithinMisalign => SampleParams {
                    mode: SampleMode::WithinMisalign,
                    count: k,
                    band: band.unwrap_or(DEFAULT_WITHIN_BAND),
                    seed,
                    exclude,
                    tau,
                },
                Mode::BetweenAlign => SampleParams {
                    mode: SampleMode::BetweenAlign,
                    count: n,
                    band: band.unwrap_or(DEFAULT_BETWEEN_BAND),
                    seed,
                    exclude,
                    tau,
                },
            };
            let drawn = pipeline::sample(&run, &params)?;
            println!("sampled {} cases", drawn.cases.len());
            for s in &drawn.shortfalls {
                eprintln!("shortfall: {} requested {} available {}", s.stratum.as_deref().unwrap_or("all"), s.requested, s.available);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::AddCase { run, segment, round } => {
            let round = match round {
                RoundArg::Round1 => Round::Round1,
                RoundArg::Round2 => Round::Round2,
            };
            println!("{}", pipeline::add_manual_case(&run, &segment, round)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve { run, port, static_dir } => {
            runtime()?.block_on(server::serve(&run, static_dir, port))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Export { run, what, format, out } => {
            let kind = match what {
                What::Comparisons => ExportKind::Comparisons,
                What::Cases => ExportKind::Cases,
                What::Segments => ExportKind::Segments,
                What::Report => ExportKind::Report,
            };
            let format = match format {
                Format::Csv => ExportFormat::Csv,
                Format::Json => ExportFormat::Json,
            };
            let bytes = pipeline::export(&run, kind, format)?;
            match out {
                Some(p) => std::fs::write(&p, bytes).with_context(|| p.display().to_string())?,
                None => std::io::stdout().write_all(&bytes)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Embed { text } => {
            let e = HashedBagProvider::new(HASHED_DIM, DEFAULT_MAX_TOKENS).embed(&text)?;
            let hex: Vec<String> = e.vector.values().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            println!("{}", hex.join(" "));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn partial(failed: bool) -> ExitCode {
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "rtrc=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
