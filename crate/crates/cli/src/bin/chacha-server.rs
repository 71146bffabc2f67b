use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use chacha_cli::config::Config;
use chacha_cli::server::{router, with_web, AppState, ServerOptions};
use chacha_core::LogStore;
use clap::Parser;
use tracing_subscriber::EnvFilter;

/// Serves the guided-conversation chat API.
#[derive(Parser)]
#[command(name = "chacha-server", version)]
struct Args {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for session logs; created if missing.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// End sessions after this many minutes. Overrides the config file.
    #[arg(long)]
    max_session_minutes: Option<u64>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let config = Config::load(&args.config)?;
    let engine = config.engine()?;
    let store = LogStore::open(&args.data_dir)
        .with_context(|| format!("opening data dir {}", args.data_dir.display()))?;
    let options = ServerOptions {
        max_session_minutes: args.max_session_minutes.or(config.max_session_minutes),
    };
    let state = AppState::open(engine, store, options)?;
    let app = with_web(
        router(state),
        config.allowed_origin.as_deref(),
        config.static_dir.as_deref(),
    )?;
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
