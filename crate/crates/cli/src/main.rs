use std::process::ExitCode;

use nlmf::config::usage_text;
use nlmf::run::configure_threads;
use nlmf::{parse_args, run, ArgsError};

fn main() -> ExitCode {
    let config = match parse_args(std::env::args_os()) {
        Ok(c) => c,
        Err(ArgsError::Clap(e)) => e.exit(),
        Err(ArgsError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", usage_text());
            return ExitCode::from(2);
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(&config) {
        Ok(report) => {
            for line in &report.headline {
                println!("{line}");
            }
            if let Some(err) = &report.manifest.error {
                eprintln!("error: {err}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
