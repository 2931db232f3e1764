use clap::Args;

use adp_core::canonical::canonical_json;

use crate::{EXIT_CONFIG, EXIT_FAILED};

#[derive(Args)]
pub(crate) struct TranscriptArgs {
    /// Base URL of a running `adp run --serve`.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    #[arg(long, env = "ADP_TOKEN")]
    token: String,
    #[arg(long)]
    trace_id: Option<String>,
    #[arg(long)]
    actor: Option<String>,
    #[arg(long)]
    event_kind: Option<String>,
    #[arg(long)]
    seq_from: Option<u64>,
    #[arg(long)]
    seq_to: Option<u64>,
}

impl TranscriptArgs {
    fn query(&self) -> Vec<(&'static str, String)> {
        let mut q = Vec::new();
        if let Some(v) = &self.trace_id {
            q.push(("trace_id", v.clone()));
        }
        if let Some(v) = &self.actor {
            q.push(("actor", v.clone()));
        }
        if let Some(v) = &self.event_kind {
            q.push(("event_kind", v.clone()));
        }
        if let Some(v) = self.seq_from {
            q.push(("seq_from", v.to_string()));
        }
        if let Some(v) = self.seq_to {
            q.push(("seq_to", v.to_string()));
        }
        q
    }
}

/// Prints each granted record as one canonical JSON line.
pub(crate) fn cmd_transcripts(args: TranscriptArgs) -> u8 {
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("adp transcripts: cannot start runtime: {e}");
            return EXIT_FAILED;
        }
    };
    rt.block_on(async {
        let url = format!("{}/transcripts", args.url.trim_end_matches('/'));
        let resp = match reqwest::Client::new().get(&url).bearer_auth(&args.token).query(&args.query()).send().await {
            Ok(r) => r,
            Err(e) => {
                eprintln!("adp transcripts: cannot reach {url}: {e}");
                return EXIT_CONFIG;
            }
        };
        let status = resp.status();
        let body: serde_json::Value = match resp.json().await {
            Ok(v) => v,
            Err(e) => {
                eprintln!("adp transcripts: unreadable response: {e}");
                return EXIT_FAILED;
            }
        };
        if !status.is_success() {
            let msg = body["error"].as_str().unwrap_or("request rejected");
            eprintln!("adp transcripts: {msg} ({status})");
            return EXIT_FAILED;
        }
        for r in body.as_array().into_iter().flatten() {
            println!("{}", canonical_json(r));
        }
        0
    })
}
