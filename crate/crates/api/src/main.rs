use anyhow::Context;
use clap::Parser;
use std::net::SocketAddr;
use std::path::PathBuf;

/// HTTP service for interactive evaluation and pipeline runs.
#[derive(Debug, Parser)]
#[command(name = "fogforge-api", version)]
struct Args {
    /// Address to serve on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Directory holding projects and runs.
    #[arg(long, default_value = "data")]
    data: PathBuf,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let app = fogforge_api::App::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .with_context(|| format!("binding {}", args.listen))?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, fogforge_api::router(app)).await?;
    Ok(())
}
