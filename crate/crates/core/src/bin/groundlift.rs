use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use groundlift::experiment::{
    cmd_bench, cmd_lift, cmd_render, cmd_robustness, Experiment, OutputFormat, Overrides,
};
use groundlift::Error;

#[derive(Parser)]
#[command(name = "groundlift", version, about = "Height-based BEV lifting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render ground-truth depth/height maps and histograms.
    Render(Args),
    /// Lift a rendered scene with height and depth bins and pool to BEV.
    Lift(Args),
    /// Extrinsic disturbance study: scatter overlap and localization error.
    Robustness(Args),
    /// Time lift+pool for the height and depth configurations.
    Bench(Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Fixed-order reductions.
    #[arg(long)]
    deterministic: bool,
}

fn run(command: &Command) -> groundlift::Result<Vec<PathBuf>> {
    let (Command::Render(args)
    | Command::Lift(args)
    | Command::Robustness(args)
    | Command::Bench(args)) = command;
    let exp = Experiment::load(&args.config)?.with_overrides(&Overrides {
        seed: args.seed,
        out: args.out.clone(),
        deterministic: args.deterministic,
    })?;
    let format = match args.format {
        Format::Csv => OutputFormat::Csv,
        Format::Json => OutputFormat::Json,
        Format::Bin => OutputFormat::Bin,
    };
    match command {
        Command::Render(_) => cmd_render(&exp, format),
        Command::Lift(_) => cmd_lift(&exp, format),
        Command::Robustness(_) => cmd_robustness(&exp, format),
        Command::Bench(_) => cmd_bench(&exp, format),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
