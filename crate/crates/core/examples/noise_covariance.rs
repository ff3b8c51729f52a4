//! Empirical covariance of the injected noise for each preconditioner.
//!
//! cargo run --example noise_covariance

use langevin::net::NetworkParams;
use langevin::rng::{stream, Purpose};
use langevin::samplers::{
    noise_covariance_probe, GaussianNoise, Preconditioner, RmspropState, Sampler, SamplerKind, Schedule,
};

fn main() -> anyhow::Result<()> {
    let rate = 0.01;
    let layout = NetworkParams::zeros(&[(2, 2)]);
    let mut rms = RmspropState::new(&layout, 0.9, 1e-2)?;
    let mut g = layout.zeros_like();
    g.iter_mut().enumerate().for_each(|(i, v)| *v = (i + 1) as f64);
    rms.update(&g)?;

    let cases = [
        (SamplerKind::Sgld, Preconditioner::None),
        (SamplerKind::Psgld, Preconditioner::Rmsprop(&rms)),
    ];
    for (i, (kind, precond)) in cases.into_iter().enumerate() {
        let sampler = Sampler::new(kind, Schedule::constant(rate)?)?;
        let mut noise = GaussianNoise(stream(5, Purpose::Custom(i as u32), 0));
        let cov = noise_covariance_probe(&sampler, &layout, precond, rate, 50_000, &mut noise)?;
        println!("{kind} diagonal: {:?}", cov.diagonal().iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>());
    }
    let d = rms.preconditioner();
    println!(
        "PSGLD expected:  {:?}",
        d.iter().map(|x| format!("{:.3e}", rate * x * x)).collect::<Vec<_>>()
    );
    Ok(())
}
