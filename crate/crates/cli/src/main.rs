mod args;
mod commands;
mod record;
mod settings;

use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use commands::Ctx;
use record::RunRecord;
use settings::Settings;

/// Bad flags or settings; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<llsh_core::Error>() {
            return match e {
                llsh_core::Error::InvalidConfig(_) => EXIT_USAGE,
                e if e.is_numeric() => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn command_name(cli: &Cli) -> &'static str {
    use args::{BaselineCommand as B, Command as C, TheoryCommand as T};
    match &cli.command {
        C::Synth(_) => "synth",
        C::Train(_) => "train",
        C::Index(_) => "index",
        C::Score(_) => "score",
        C::Eval(_) => "eval",
        C::Baseline(B::Knn(_)) => "baseline knn",
        C::Baseline(B::Kmeans(_)) => "baseline kmeans",
        C::Cost(_) => "cost",
        C::Theory(T::Curve(_)) => "theory curve",
        C::Theory(T::Mc(_)) => "theory mc",
        C::Stats(_) => "stats",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }),
    )
    .format_timestamp(None)
    .init();

    let start = Instant::now();
    let mut record = RunRecord::new(std::env::args().collect());
    record.command = command_name(&cli).to_string();
    let result = execute(&cli, &mut record);
    record.wall_time_secs = start.elapsed().as_secs_f64();
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            record.error = Some(format!("{e:#}"));
            exit_code(e)
        }
    };
    record.exit_code = code as i32;
    if let Err(e) = record.write(&cli.run_record) {
        log::warn!("could not write run record {}: {e}", cli.run_record.display());
    }
    ExitCode::from(code)
}

fn execute(cli: &Cli, record: &mut RunRecord) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(UsageError("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("cannot start {n} workers: {e}")))?;
    }
    record.workers = rayon::current_num_threads();
    let settings = Settings::resolve(cli.profile, cli.config.as_deref(), cli.seed)?;
    let mut ctx = Ctx {
        settings,
        record: std::mem::take(record),
    };
    let result = commands::run(&mut ctx, &cli.command);
    *record = ctx.record;
    record.settings = serde_json::to_value(&ctx.settings).expect("settings serialize");
    result
}
