//! The full command pipeline on a small dataset: synthesize, train a few
//! epochs, evaluate on held-out frames and render explanation figures.
//!
//! cargo run --release --example pipeline -- /tmp/gla-pipeline

use std::path::PathBuf;

use gla::reports::{
    cmd_eval, cmd_explain, cmd_synth, cmd_train, EvalArgs, ExplainArgs, SynthArgs, TrainArgs, CHECKPOINT_FILE, HELD_OUT,
};
use gla::trainer::TrainConfig;

fn main() -> gla::Result<()> {
    let root: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "gla-pipeline".into()).into();
    let data = root.join("data");
    cmd_synth(&SynthArgs { n_empty: 40, n_person: 40, out: data.clone(), ..Default::default() })?;

    let config = TrainConfig { max_epochs: 4, patience: 4, ..Default::default() };
    let run = root.join("run");
    cmd_train(&TrainArgs { manifest: data.join("manifest.json"), out: run.clone(), config })?;

    let ckpt = run.join(CHECKPOINT_FILE);
    cmd_eval(&EvalArgs {
        checkpoint: ckpt.clone(),
        manifest: data.join("manifest.json"),
        splits: HELD_OUT.to_vec(),
        out: Some(run.clone()),
    })?;
    let explained = cmd_explain(&ExplainArgs {
        checkpoint: ckpt,
        manifest: data.join("manifest.json"),
        frame_ids: vec![],
        out: run.join("explain"),
        settings: Default::default(),
    })?;
    println!("rendered {} figures under {}", explained.len(), run.join("explain/figures").display());
    Ok(())
}
