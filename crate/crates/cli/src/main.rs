use std::io::Write;
use std::process::ExitCode;

use clap::Parser as _;
use gtl_cli::{execute, serve_config, Cli, CliError, Command};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("gtl: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Serve(args) => serve(args),
        other => execute(other).and_then(|text| {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(e.to_string()))
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gtl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn serve(args: &gtl_cli::ServeArgs) -> Result<(), CliError> {
    let config = serve_config(args)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime
        .block_on(gtl_service::run(&config, |addr| {
            println!("listening on http://{addr}");
            let _ = std::io::stdout().flush();
        }))
        .map_err(|e| match e {
            gtl_service::ServiceError::Recovery { .. } | gtl_service::ServiceError::Store(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        })
}
