//! Accumulates K-FAC factors over mini-batches and preconditions a gradient with them.
//!
//! cargo run --example kfac_preconditioning

use langevin::data::synthetic;
use langevin::kfac::{KfacConfig, KfacState, KronMode};
use langevin::net::{loss_and_grad, Network};
use langevin::rng::{stream, Purpose};

fn main() -> anyhow::Result<()> {
    let net = Network::reference_scaled(12, 10, [4, 8, 32], 5)?;
    let params = net.init_params(&mut stream(1, Purpose::Init, 0));
    let data = synthetic(256, 10, 12, 2)?;
    let cfg = KfacConfig {
        damping: 1e-2,
        decay: 0.95,
        cadence: 4,
    };
    let mut state = KfacState::new(&net.block_dims(), cfg)?;

    let mut grads = None;
    for (i, chunk) in (0..data.len()).collect::<Vec<_>>().chunks(32).enumerate() {
        let batch = data.subset(chunk);
        let (logits, mut cache) = net.forward(&params, &batch.images)?;
        let (_, dl) = loss_and_grad(&logits, &batch.labels)?;
        grads = Some(net.backward(&params, &mut cache, &dl)?);
        state.update_factors(&cache)?;
        if state.refresh_if_due(KronMode::Inverse)? {
            println!("batch {i}: refreshed inverses");
        }
    }
    state.invert_factors()?;
    state.factor_sqrt()?;

    let g = grads.expect("at least one batch");
    let norm = |v: &langevin::net::NetworkParams| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (mode, label) in [(KronMode::Inverse, "F^-1 g"), (KronMode::InverseSqrt, "F^-1/2 g")] {
        let pg = state.kron_apply(&g, mode)?;
        println!("|g| {:.4e} -> |{label}| {:.4e}", norm(&g), norm(&pg));
    }
    for (i, f) in state.factors().iter().enumerate() {
        println!(
            "layer {i}: A {}x{}, G {}x{}, {} samples",
            f.a().nrows(),
            f.a().ncols(),
            f.g().nrows(),
            f.g().ncols(),
            f.samples()
        );
    }
    Ok(())
}
