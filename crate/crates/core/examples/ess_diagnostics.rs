//! Effective sample size of AR(1) chains against the analytic value, and their mESS.
//!
//! cargo run --example ess_diagnostics

use langevin::diagnostics::{ess_univariate, mess, Chain};
use langevin::net::NetworkParams;
use langevin::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> anyhow::Result<()> {
    let n = 50_000;
    let rhos = [0.0, 0.5, 0.9, 0.99];
    let mut rng = stream(3, Purpose::Custom(1), 0);
    let series: Vec<Vec<f64>> = rhos
        .iter()
        .map(|&rho| {
            let scale = (1.0f64 - rho * rho).sqrt();
            let mut x: f64 = rng.sample(StandardNormal);
            (0..n)
                .map(|_| {
                    x = rho * x + scale * rng.sample::<f64, _>(StandardNormal);
                    x
                })
                .collect()
        })
        .collect();

    println!("rho      ess   analytic  lag");
    for (rho, s) in rhos.iter().zip(&series) {
        let (ess, lag) = ess_univariate(s)?;
        let want = n as f64 * (1.0 - rho) / (1.0 + rho);
        println!("{rho:<5} {ess:>8.0} {want:>10.0} {lag:>4}");
    }

    let layout = NetworkParams::zeros(&[(rhos.len(), 0)]);
    let mut chain = Chain::new((0..rhos.len()).collect(), 1, layout.len())?;
    let mut p = layout.clone();
    for t in 0..n {
        for (c, s) in series.iter().enumerate() {
            p.blocks_mut()[0].bias[c] = s[t];
        }
        chain.record(&p, t as u64)?;
    }
    let report = mess(&chain)?;
    println!("mESS {:.0} over {} coordinates ({:.4} per draw)", report.mess, report.p(), report.mess / n as f64);
    Ok(())
}
