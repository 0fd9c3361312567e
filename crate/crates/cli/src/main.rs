use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pearmut_core::campaign::link_url;
use pearmut_core::store::{Store, StoreConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "pearmut", version, about = "Self-hosted human evaluation of model outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a campaign file, store it and print its magic links.
    Add {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Replay all campaigns and serve them.
    Run {
        #[command(flatten)]
        opts: Opts,
    },
    /// Show campaigns and their progress.
    List {
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Opts {
    #[arg(long, env = "PEARMUT_DATA_DIR", default_value = "./pearmut-data")]
    data_dir: PathBuf,
    #[arg(long, env = "PEARMUT_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "PEARMUT_PORT", default_value_t = 8000)]
    port: u16,
}

impl Opts {
    fn base_url(&self, port: u16) -> String {
        format!("http://{}:{}", self.host, port)
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PEARMUT_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Add { file, opts } => add(&file, &opts),
        Command::Run { opts } => run(&opts),
        Command::List { opts } => list(&opts),
    }
}

fn add(file: &PathBuf, opts: &Opts) -> Result<()> {
    let raw = std::fs::read(file).with_context(|| format!("cannot read {}", file.display()))?;
    let store = Store::open(StoreConfig::on_disk(&opts.data_dir))?;
    let added = store.add_campaign(&raw)?;
    let base = opts.base_url(opts.port);
    let mut out = std::io::stdout().lock();
    for a in &added.annotators {
        writeln!(out, "annotator\t{}\t{}", a.user_id, link_url(&base, &a.token))?;
    }
    writeln!(
        out,
        "dashboard\t{}\t{}",
        added.manager.user_id,
        link_url(&base, &added.manager.token)
    )?;
    Ok(())
}

fn list(opts: &Opts) -> Result<()> {
    let store = Store::open_read_only(StoreConfig::on_disk(&opts.data_dir))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "campaign\tassignment\tprotocol\tannotators\tdocuments\tdone\ttotal\tpercent")?;
    for c in store.list() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}",
            c.campaign_id,
            c.assignment.as_str(),
            c.protocol.as_str(),
            c.annotators,
            c.documents,
            c.progress.done,
            c.progress.total,
            c.percent_complete
        )?;
    }
    Ok(())
}

fn run(opts: &Opts) -> Result<()> {
    let store = Arc::new(Store::open(StoreConfig::on_disk(&opts.data_dir))?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((opts.host.as_str(), opts.port))
            .await
            .with_context(|| format!("cannot listen on {}:{}", opts.host, opts.port))?;
        let port = listener.local_addr()?.port();
        let base = opts.base_url(port);
        {
            let mut out = std::io::stdout().lock();
            writeln!(out, "listening\t{base}")?;
            for id in store.campaign_ids() {
                let (_, manager) = store.identities(&id)?;
                writeln!(out, "dashboard\t{id}\t{}", link_url(&base, &manager.token))?;
            }
            out.flush()?;
        }
        tracing::info!(campaigns = store.campaign_ids().len(), %base, "serving");
        pearmut_server::serve(listener, Arc::clone(&store), shutdown_signal()).await?;
        tracing::info!("shut down");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
