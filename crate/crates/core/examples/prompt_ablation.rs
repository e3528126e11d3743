//! Trains the radar-prompt baseline and the unrelated-prompt ablation on the
//! same small dataset and prints the comparison.
//!
//! cargo run --release --example prompt_ablation -- /tmp/gla-ablation

use std::path::PathBuf;

use gla::reports::{cmd_ablate, cmd_synth, AblateArgs, SynthArgs};
use gla::trainer::TrainConfig;

fn main() -> gla::Result<()> {
    let root: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "gla-ablation".into()).into();
    let data = root.join("data");
    cmd_synth(&SynthArgs { n_empty: 40, n_person: 40, out: data.clone(), ..Default::default() })?;
    let report = cmd_ablate(&AblateArgs {
        manifest: data.join("manifest.json"),
        out: root.join("ablation"),
        config: TrainConfig { max_epochs: 4, patience: 4, ..Default::default() },
        ..Default::default()
    })?;
    println!("{}", report.summary());
    Ok(())
}
