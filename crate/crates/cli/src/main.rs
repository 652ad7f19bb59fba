use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use scopeline_cli::{bench, generate, report, run, serve, BenchArgs, CliError, EvalArgs, GenArgs, RunArgs, ServeArgs};

/// Polyp-detection pipeline: blur gate, two detectors, ensemble, evaluation.
#[derive(Debug, Parser)]
#[command(name = "scopeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Run(RunArgs),
    Eval(EvalArgs),
    Bench(BenchArgs),
    GenSynthetic(GenArgs),
    Serve(ServeArgs),
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let out = run::cmd_run(&args)?;
            println!(
                "{} videos, {} frames ({} blurry, {} failed) -> {}",
                out.videos,
                out.frames,
                out.blurry,
                out.failed,
                args.output.display()
            );
        }
        Command::Eval(args) => {
            let metrics = report::cmd_eval(&args)?;
            for (model, m) in &metrics.models {
                let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.2}"));
                println!(
                    "{model}: tp={} fp={} fn={} P={} R={} F1={} F2={}",
                    m.counts.tp,
                    m.counts.fp,
                    m.counts.fn_,
                    pct(m.prf.precision),
                    pct(m.prf.recall),
                    pct(m.prf.f1),
                    pct(m.prf.f2)
                );
            }
        }
        Command::Bench(args) => print!("{}", bench::cmd_bench(&args)?.table()),
        Command::GenSynthetic(args) => {
            let d = generate::gen_synthetic(&args)?;
            println!("{} videos x {} frames -> {}", d.videos, d.frames, args.output.display());
        }
        Command::Serve(args) => serve::cmd_serve(&args)?,
    }
    Ok(())
}

fn init_logging() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCOPELINE_LOG", "warn"))
        .format_timestamp_millis()
        .try_init()
        .context("installing logger")
}

fn main() -> ExitCode {
    if let Err(e) = init_logging() {
        eprintln!("scopeline: {e:#}");
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scopeline: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
