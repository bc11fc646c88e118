use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use overdet_cli::Mode;

/// Constructs and certifies small overdetermined domains for semilinear
/// elliptic problems.
#[derive(Parser, Debug)]
#[command(name = "overdet", version)]
struct Cli {
    #[command(subcommand)]
    mode: Option<Mode>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: run.out_dir, else the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    match overdet_cli::run(&config, cli.mode, cli.out.as_deref()) {
        Ok(outcome) => {
            if !cli.quiet {
                println!("{}", outcome.summary);
                for f in &outcome.files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
