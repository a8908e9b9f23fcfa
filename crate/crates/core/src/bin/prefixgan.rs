use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use prefixgan::config::TrainConfig;
use prefixgan::experiment::{self, EvalRequest};
use prefixgan::Error;

/// Prefix-discriminator sequence GAN experiments.
#[derive(Parser)]
#[command(name = "prefixgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Field overrides, `--key=value`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Compare the final records of two runs (B relative to A).
    Compare { a: PathBuf, b: PathBuf },
    /// Score a saved generator on a test file.
    Eval {
        #[arg(long)]
        generator: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if err.is_config() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn run(config: PathBuf, overrides: Vec<String>) -> Result<(), Error> {
    let text = std::fs::read_to_string(&config)
        .map_err(|e| prefixgan::Error::Config {
            field: "--config".into(),
            message: format!("{}: {e}", config.display()),
        })?;
    let mut cfg = TrainConfig::from_text(&text)?;
    cfg.apply_overrides(&overrides)?;
    cfg.validate()?;
    let report = experiment::run(&cfg, &text, &overrides)?;
    for row in &report.aggregate {
        let std = row.std.map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}"));
        println!("{:<10} {:>10.4} ± {std} (n={})", row.metric, row.mean, row.n);
    }
    println!("results in {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run { config, overrides } => run(config, overrides),
        Command::Compare { a, b } => experiment::read_finals(&a)
            .and_then(|ta| experiment::read_finals(&b).map(|tb| (ta, tb)))
            .and_then(|(ta, tb)| experiment::compare(&ta, &tb))
            .map(|c| print!("{}", c.to_csv())),
        Command::Eval {
            generator,
            test,
            vocab,
            oracle,
            max_len,
            samples,
            seed,
        } => experiment::eval(&EvalRequest {
            generator,
            test,
            vocab,
            oracle,
            max_len,
            samples,
            seed,
        })
        .map(|rec| print!("{}", experiment::metric_record_csv(&rec))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
