use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde_json::json;

use adp_core::pipeline::scenario::{DecisionVariant, ExecutionVariant, SignalVariant};
use adp_core::pipeline::{ConfigError, Pipeline, Scenario};
use adp_server::{app, serve, AppState};

use crate::{RunArgs, ScenarioArgs, EXIT_CONFIG, EXIT_FAILED};

const DEFAULT_LEDGER: &str = "adp-ledger.journal";
const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

/// Loads the scenario and applies flag overrides.
pub(crate) fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, ConfigError> {
    let mut s = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(ticks) = args.ticks {
        s.ticks = ticks;
    }
    for name in &args.adversaries {
        match name.as_str() {
            "cross_channel" => s.agents.signal = SignalVariant::CrossChannel,
            "tool_probe" => s.agents.execution = ExecutionVariant::ToolProbe,
            other => match DecisionVariant::parse(other) {
                Some(v) => s.agents.decision = v,
                None => return Err(ConfigError::Invalid(format!("unknown adversary `{other}`"))),
            },
        }
    }
    s.validate()?;
    Ok(s)
}

fn ledger_path(flag: Option<PathBuf>) -> PathBuf {
    std::env::var_os("ADP_LEDGER")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or(flag)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_LEDGER))
}

pub(crate) fn cmd_run(args: RunArgs) -> u8 {
    let scenario = match load_scenario(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("adp run: {e}");
            return EXIT_CONFIG;
        }
    };
    let ledger = ledger_path(args.ledger.clone());
    let pipeline = match Pipeline::with_journal(scenario, &ledger) {
        Ok(p) => Arc::new(p),
        Err(e) => {
            eprintln!("adp run: {e}");
            return EXIT_CONFIG;
        }
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("adp run: cannot start runtime: {e}");
            return EXIT_FAILED;
        }
    };
    match rt.block_on(drive(pipeline, &args, &ledger)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("adp run: {e:#}");
            EXIT_FAILED
        }
    }
}

async fn drive(pipeline: Arc<Pipeline>, args: &RunArgs, ledger: &std::path::Path) -> anyhow::Result<()> {
    let stop = Arc::new(AtomicBool::new(false));
    let (stop_tx, stop_rx) = tokio::sync::watch::channel(false);
    {
        let stop = stop.clone();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                tracing::info!("interrupted; flushing ledger");
                stop.store(true, Ordering::SeqCst);
                let _ = stop_tx.send(true);
            }
        });
    }

    let server = if args.serve || args.listen.is_some() {
        let addr = args.listen.clone().unwrap_or_else(|| DEFAULT_LISTEN.into());
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("cannot listen on {addr}"))?;
        let local = listener.local_addr()?;
        let router = app(AppState::new(pipeline.clone()), args.ui.clone());
        let mut rx = stop_rx.clone();
        let shutdown = async move {
            let _ = rx.wait_for(|s| *s).await;
        };
        println!("{}", json!({"listening": format!("http://{local}"), "credentials": credentials(&pipeline)}));
        Some(tokio::spawn(serve(listener, router, shutdown)))
    } else {
        None
    };

    let ticks = pipeline.scenario().ticks;
    let runner = pipeline.clone();
    let flag = stop.clone();
    tokio::task::spawn_blocking(move || {
        for _ in 0..ticks {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            runner.step();
        }
    })
    .await
    .map_err(|e| anyhow!("pipeline task failed: {e}"))?;
    pipeline.sync_journal().context("cannot flush ledger journal")?;

    let summary = pipeline.summary();
    println!("{}", json!({"summary": summary, "ledger": ledger.display().to_string()}));

    if let Some(handle) = server {
        if args.serve {
            let mut rx = stop_rx.clone();
            let _ = rx.wait_for(|s| *s).await;
        } else {
            stop.store(true, Ordering::SeqCst);
        }
        handle.abort();
        let _ = handle.await;
        pipeline.sync_journal().context("cannot flush ledger journal")?;
    }
    Ok(())
}

/// Demo credentials, so an operator can drive the approval API and the
/// dashboard against a served run.
fn credentials(p: &Pipeline) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    m.insert("admin".into(), json!(p.admin_token()));
    for (principal, _) in adp_core::pipeline::demo::credentials(p.clients()) {
        if let Some(t) = p.token(&principal.id) {
            m.insert(principal.id, json!(t));
        }
    }
    serde_json::Value::Object(m)
}
