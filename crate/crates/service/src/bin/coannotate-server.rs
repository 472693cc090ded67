use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use coannotate_core::scaffold::ProviderSettings;
use coannotate_service::{serve, ServerConfig};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(version, about = "Serve co-annotation projects over HTTP")]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "COANNOTATE_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// JSON file with bearer tokens and their roles.
    #[arg(long, env = "COANNOTATE_TOKENS")]
    tokens: PathBuf,
    /// Directory holding project logs and snapshots.
    #[arg(long, env = "COANNOTATE_STORE")]
    store: PathBuf,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let provider = match ProviderSettings::from_env() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let config = ServerConfig {
        bind: args.bind,
        token_file: args.tokens,
        storage_dir: args.store,
        provider,
    };
    match serve(config).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
