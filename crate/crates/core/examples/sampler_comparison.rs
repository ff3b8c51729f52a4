//! Trains all five samplers on synthetic digits and writes the figure CSVs.
//!
//! cargo run --release --example sampler_comparison [output_dir]

use std::path::PathBuf;

use langevin::config::parse_config;
use langevin::harness::run_suite;
use langevin::plots::emit_plots;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("langevin_sampler_comparison"));
    let config = parse_config(&format!(
        r#"
seed = 1
output_dir = "{}"

[sampler]
kind = "SGD"
schedule = {{ form = "polynomial", a = 5e-5, b = 1000.0, gamma = 0.55 }}

[[suite]]
kind = "SGD"
[[suite]]
kind = "FSGD"
[[suite]]
kind = "SGLD"
[[suite]]
kind = "PSGLD"
[[suite]]
kind = "KSGLD"

[training]
batch_size = 128
epochs = 3

[data.synthetic]
train = 2000
test = 500
ood = 500

[model]
widths = [4, 8, 32]

[kfac]
damping = 0.1

[rmsprop]
eps = 0.1

[snapshots]
every = 4

[diagnostics]
stride = 1
"#,
        out.display()
    ))?;

    println!("sampler  test     evaluated  fgsm     ood max-prob  mESS");
    for summary in run_suite(&config) {
        let s = summary?;
        println!(
            "{:<8} {:.4}   {:.4}     {:.4}   {:.4}        {:.1}",
            s.kind.name(),
            s.final_test_accuracy,
            s.eval_accuracy,
            s.adversarial.map_or(f64::NAN, |a| a.adversarial_accuracy),
            s.ood_mean_max_prob.unwrap_or(f64::NAN),
            s.mess.unwrap_or(f64::NAN),
        );
    }
    for f in emit_plots(&out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
