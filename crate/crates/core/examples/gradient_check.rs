//! Compares backprop gradients with central finite differences on a reduced reference net.
//!
//! cargo run --example gradient_check

use langevin::data::synthetic;
use langevin::net::{finite_diff_gradient, loss_and_grad, Network};
use langevin::rng::{stream, Purpose};

fn main() -> anyhow::Result<()> {
    let net = Network::reference_scaled(12, 10, [4, 6, 16], 5)?;
    let params = net.init_params(&mut stream(7, Purpose::Init, 0));
    let data = synthetic(8, 10, 12, 3)?;

    let (logits, mut cache) = net.forward(&params, &data.images)?;
    let (loss, dlogits) = loss_and_grad(&logits, &data.labels)?;
    let grads = net.backward(&params, &mut cache, &dlogits)?;
    let fd = finite_diff_gradient(&net, &params, &data.images, &data.labels, 1e-5)?;

    let mut worst: f64 = 0.0;
    for (a, f) in grads.iter().zip(fd.iter()) {
        if a.abs() > 1e-6 {
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()));
        }
    }
    println!("loss {loss:.6}, {} parameters", params.len());
    println!("worst relative error {worst:.3e} over coordinates with |g| > 1e-6");
    Ok(())
}
