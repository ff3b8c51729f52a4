//! Maximum predicted probability on out-of-distribution images for SGD and SGLD.
//!
//! cargo run --release --example ood_confidence

use langevin::config::parse_config;
use langevin::eval::{ood_max_prob, OOD_BINS};
use langevin::harness::{run_experiment, RunArtifacts};

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("langevin_ood_confidence");
    for kind in ["SGD", "SGLD"] {
        let dir = root.join(kind);
        let config = parse_config(&format!(
            r#"
seed = 3
output_dir = "{}"

[sampler]
kind = "{kind}"
schedule = {{ form = "polynomial", a = 5e-5, b = 1000.0, gamma = 0.55 }}

[training]
batch_size = 128
epochs = 3

[data.synthetic]
train = 2000
test = 300
ood = 500

[model]
widths = [4, 8, 32]

[snapshots]
every = 4

[eval]
adversarial = false
"#,
            dir.display()
        ))?;
        run_experiment(&config)?;
        let run = RunArtifacts::open(&dir)?;
        let ood = run.ood.as_ref().expect("configured OOD set");
        let h = ood_max_prob(&run.net, &run.ensemble()?, ood)?;
        let coarse: Vec<usize> = h.counts.chunks(OOD_BINS / 5).map(|c| c.iter().sum()).collect();
        println!(
            "{kind:<5} mean {:.4} median {:.4}  counts per 0.2 bin {coarse:?}",
            h.mean, h.median
        );
    }
    Ok(())
}
