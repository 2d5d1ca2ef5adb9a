//! Freezes a pipeline fixture directory into a replayable transcript.
//!
//!     cargo run -p oodrecover-core --example freeze_fixture -- <env> <dir> [--live]
//!
//! The snapshot is the zero-seed OOD reset unless `<dir>/snapshot.txt`
//! already exists. Without `--live` the replies come from `ood.txt`,
//! `behavior.txt` and `code.txt` in `<dir>`; with `--live` they come from
//! the configured endpoint and are written back to those files.

use std::path::PathBuf;

use oodrecover_core::envs::{make, ResetMode, SceneDocument, SNAPSHOT_TEXT_FILE};
use oodrecover_core::pipeline::{
    run_pipeline, ChatClient, LiveClient, PipelineConfig, ScriptedClient, TRANSCRIPT_FILE,
};

const REPLIES: [&str; 3] = ["ood.txt", "behavior.txt", "code.txt"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (env_name, dir) = match args.as_slice() {
        [e, d, ..] => (e.as_str(), PathBuf::from(d)),
        _ => return Err("usage: freeze_fixture <env> <dir> [--live]".into()),
    };
    let live = args.iter().any(|a| a == "--live");
    let env = make(env_name)?;
    if !dir.join(SNAPSHOT_TEXT_FILE).exists() {
        let s = env.reset(ResetMode::Ood, 0);
        env.render_snapshot(&s.state).save(&dir)?;
    }
    let snapshot = SceneDocument::load(&dir)?;

    let mut cfg = PipelineConfig::default();
    let mut client: Box<dyn ChatClient> = if live {
        let (c, model) = LiveClient::from_env();
        if let Some(m) = model {
            cfg.model = m;
        }
        Box::new(c)
    } else {
        let replies = REPLIES
            .iter()
            .map(|f| std::fs::read_to_string(dir.join(f)))
            .collect::<Result<Vec<_>, _>>()?;
        Box::new(ScriptedClient::new(replies))
    };

    let scratch = tempfile::tempdir()?;
    let result = run_pipeline(client.as_mut(), env.as_ref(), &snapshot, &cfg, scratch.path());
    std::fs::copy(scratch.path().join(TRANSCRIPT_FILE), dir.join(TRANSCRIPT_FILE))?;
    let artifacts = result?;
    if live {
        let replies = [&artifacts.d_ood, &artifacts.d_recovery, &artifacts.raw_code_response];
        for (f, r) in REPLIES.iter().zip(replies) {
            std::fs::write(dir.join(f), format!("{}\n", r.trim_end()))?;
        }
    }
    println!("{} exchanges written to {}", artifacts.transcript.exchanges.len(), dir.join(TRANSCRIPT_FILE).display());
    Ok(())
}
