use std::process::ExitCode;

use clap::Parser;
use miniorc::cli::{Cli, Cmd, run};
use miniorc::config::Config;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Cmd::Serve { config } = &cli.command {
        tracing_subscriber::fmt()
            .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
            .init();
        let env = |k: &str| std::env::var(k).ok();
        let config = match Config::load(config.as_deref(), &env) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("CONFIG_ERROR: {e}");
                return ExitCode::from(2);
            }
        };
        let runtime = match tokio::runtime::Runtime::new() {
            Ok(r) => r,
            Err(e) => {
                eprintln!("INTERNAL: {e}");
                return ExitCode::from(5);
            }
        };
        return match runtime.block_on(miniorc::serve(config)) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(5)
            }
        };
    }
    let code = run(&cli, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
