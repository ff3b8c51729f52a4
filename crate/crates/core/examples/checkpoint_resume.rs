//! Interrupts a KSGLD run, resumes it from its checkpoint and compares with an uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use std::path::Path;

use langevin::config::{parse_config, ExperimentConfig};
use langevin::harness::{run_experiment, Trainer};

fn config(dir: &Path) -> anyhow::Result<ExperimentConfig> {
    Ok(parse_config(&format!(
        r#"
seed = 5
output_dir = "{}"

[sampler]
kind = "KSGLD"

[training]
batch_size = 64
epochs = 2

[data.synthetic]
train = 640
test = 200

[model]
widths = [4, 8, 32]

[kfac]
damping = 0.1
cadence = 5
"#,
        dir.display()
    ))?)
}

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("langevin_checkpoint_resume");
    let (a, b) = (root.join("straight"), root.join("resumed"));
    run_experiment(&config(&a)?)?;

    let mut t = Trainer::new(config(&b)?)?;
    t.run_steps(13)?;
    let path = t.checkpoint()?;
    println!("interrupted at step {} ({})", t.state().step, path.display());
    drop(t);
    let s = Trainer::resume(config(&b)?)?.finish()?;
    println!("resumed run finished at step {}", s.steps);

    for f in ["epochs.csv", "losses.csv", "chain.csv", "predictions.csv", "checkpoint.bin"] {
        let same = std::fs::read(a.join(f))? == std::fs::read(b.join(f))?;
        println!("{f:<16} identical: {same}");
    }
    Ok(())
}
