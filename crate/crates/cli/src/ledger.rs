use std::path::Path;

use serde_json::json;

use adp_core::canonical::Hash32;
use adp_core::ledger::journal::{read_journal, verify_journal};
use adp_core::ledger::{ChainVerdict, SealedRecord};
use adp_core::par::Execution;
use adp_core::pipeline::Pipeline;

use crate::run::load_scenario;
use crate::{ScenarioArgs, EXIT_CONFIG, EXIT_FAILED};

fn read(path: &Path) -> Result<Vec<u8>, u8> {
    std::fs::read(path).map_err(|e| {
        eprintln!("cannot read ledger `{}`: {e}", path.display());
        EXIT_CONFIG
    })
}

pub(crate) fn cmd_verify(path: &Path) -> u8 {
    let bytes = match read(path) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let verdict = verify_journal(Execution::Auto, &bytes);
    println!("{}", serde_json::to_string(&verdict).expect("verdict serializes"));
    match verdict {
        ChainVerdict::Ok { .. } => 0,
        ChainVerdict::BrokenAt { seq } => {
            eprintln!("chain broken at seq {seq}");
            EXIT_FAILED
        }
    }
}

/// Position of the first differing hash, if the sequences differ.
pub(crate) fn first_divergence(recorded: &[Hash32], replayed: &[Hash32]) -> Option<usize> {
    recorded
        .iter()
        .zip(replayed)
        .position(|(a, b)| a != b)
        .or_else(|| (recorded.len() != replayed.len()).then(|| recorded.len().min(replayed.len())))
}

fn describe(r: Option<&SealedRecord>) -> serde_json::Value {
    match r {
        Some(r) => json!({"event_kind": r.record.event_kind, "actor": r.record.actor, "hash": hex::encode(r.this_hash)}),
        None => serde_json::Value::Null,
    }
}

pub(crate) fn cmd_replay(path: &Path, args: &ScenarioArgs) -> u8 {
    let bytes = match read(path) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let recorded = match read_journal(&bytes) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_FAILED;
        }
    };
    let scenario = match load_scenario(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("adp replay: {e}");
            return EXIT_CONFIG;
        }
    };
    let ticks = scenario.ticks;
    let pipeline = match Pipeline::new(scenario) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("adp replay: {e}");
            return EXIT_CONFIG;
        }
    };
    pipeline.run(ticks);
    let replayed = pipeline.plane().ledger().snapshot();
    let a: Vec<Hash32> = recorded.iter().map(|r| r.this_hash).collect();
    let b: Vec<Hash32> = replayed.iter().map(|r| r.this_hash).collect();
    match first_divergence(&a, &b) {
        None => {
            println!("{}", json!({"replay": "equal", "records": a.len()}));
            0
        }
        Some(i) => {
            println!(
                "{}",
                json!({
                    "replay": "diverged",
                    "recorded_records": a.len(),
                    "replayed_records": b.len(),
                    "first_divergence_seq": i,
                    "recorded": describe(recorded.get(i)),
                    "replayed": describe(replayed.get(i)),
                })
            );
            EXIT_FAILED
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_positions() {
        let h = |b: u8| [b; 32];
        assert_eq!(first_divergence(&[h(1), h(2)], &[h(1), h(2)]), None);
        assert_eq!(first_divergence(&[], &[]), None);
        assert_eq!(first_divergence(&[h(1), h(2)], &[h(1), h(3)]), Some(1));
        assert_eq!(first_divergence(&[h(1)], &[h(1), h(2)]), Some(1));
        assert_eq!(first_divergence(&[h(1), h(2)], &[]), Some(0));
    }
}
