//! SGLD on a one-dimensional Gaussian posterior.
//!
//! With noise multiplier 2 the chain targets the posterior; with 1 its variance halves.
//!
//! cargo run --example langevin_gaussian

use langevin::net::NetworkParams;
use langevin::rng::{stream, Purpose};
use langevin::samplers::{GaussianNoise, Preconditioner, Sampler, SamplerKind, Schedule};

fn main() -> anyhow::Result<()> {
    let (mu, sigma2, rate, steps) = (1.5, 0.5, 5e-3, 400_000u64);
    for kappa in [2.0, 1.0] {
        let sampler = Sampler::new(SamplerKind::Sgld, Schedule::constant(rate)?)?.with_noise_multiplier(kappa)?;
        let mut theta = NetworkParams::zeros(&[(1, 0)]);
        let mut noise = GaussianNoise(stream(11, Purpose::Noise, 0));
        let (mut sum, mut sq, mut k) = (0.0, 0.0, 0.0);
        for t in 0..steps {
            let x = theta.blocks()[0].bias[0];
            let mut ascent = theta.zeros_like();
            ascent.blocks_mut()[0].bias[0] = -(x - mu) / sigma2;
            sampler.step(&mut theta, &ascent, Preconditioner::None, t, &mut noise)?;
            if t >= steps / 10 {
                let x = theta.blocks()[0].bias[0];
                sum += x;
                sq += x * x;
                k += 1.0;
            }
        }
        let mean = sum / k;
        println!(
            "kappa {kappa}: mean {mean:.4} (target {mu}), variance {:.4} (posterior {sigma2})",
            sq / k - mean * mean
        );
    }
    Ok(())
}
