//! FGSM against an SGLD snapshot ensemble and its final point model at several budgets.
//!
//! cargo run --release --example fgsm_attack

use langevin::config::parse_config;
use langevin::eval::{adversarial_accuracy, SnapshotEnsemble};
use langevin::harness::{run_experiment, RunArtifacts};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("langevin_fgsm_attack");
    let config = parse_config(&format!(
        r#"
seed = 2
output_dir = "{}"

[sampler]
kind = "SGLD"
schedule = {{ form = "polynomial", a = 5e-5, b = 1000.0, gamma = 0.55 }}

[training]
batch_size = 128
epochs = 3

[data.synthetic]
train = 2000
test = 300

[model]
widths = [4, 8, 32]

[snapshots]
every = 4

[eval]
adversarial = false
ood = false
"#,
        dir.display()
    ))?;
    run_experiment(&config)?;
    let run = RunArtifacts::open(&dir)?;
    let ensemble = run.ensemble()?;
    let point = SnapshotEnsemble::point(run.params().clone());

    println!("epsilon  ensemble ({} snapshots)  point", ensemble.len());
    for eps in [0.0, 0.05, 0.1, 0.25] {
        let e = adversarial_accuracy(&run.net, &ensemble, &run.test, eps)?;
        let p = adversarial_accuracy(&run.net, &point, &run.test, eps)?;
        println!("{eps:<8} {:.4}                  {:.4}", e.adversarial_accuracy, p.adversarial_accuracy);
    }
    Ok(())
}
