//! Per-epoch test accuracy of SGD and SGLD on a truncated training set.
//!
//! cargo run --release --example small_data_overfitting

use langevin::config::parse_config;
use langevin::harness::run_experiment;

fn main() -> anyhow::Result<()> {
    let root = std::env::temp_dir().join("langevin_small_data");
    for kind in ["SGD", "SGLD"] {
        let config = parse_config(&format!(
            r#"
seed = 4
output_dir = "{}"

[sampler]
kind = "{kind}"
schedule = {{ form = "polynomial", a = 2e-4, b = 1000.0, gamma = 0.55 }}

[training]
batch_size = 100
epochs = 15

[data]
truncate = 500

[data.synthetic]
train = 3000
test = 500

[model]
widths = [4, 8, 32]

[snapshots]
every = 5

[eval]
adversarial = false
ood = false
"#,
            root.join(kind).display()
        ))?;
        let s = run_experiment(&config)?;
        let acc: Vec<String> = s.epochs.iter().map(|e| format!("{:.3}", e.test_accuracy)).collect();
        let ens: Vec<String> = s.epochs.iter().map(|e| format!("{:.3}", e.ensemble_accuracy)).collect();
        println!("{kind:<5} point    {}", acc.join(" "));
        println!("{kind:<5} ensemble {}", ens.join(" "));
    }
    Ok(())
}
