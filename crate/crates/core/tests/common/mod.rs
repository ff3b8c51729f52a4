#![allow(dead_code)]

use langevin::config::{parse_config, ExperimentConfig};
use langevin::kfac::KfacState;
use langevin::net::NetworkParams;
use nalgebra::DMatrix;
use std::path::Path;

/// Flat index of homogeneous entry `(row, col)` of a block starting at `offset`.
fn flat_index(offset: usize, outputs: usize, fan_in: usize, row: usize, col: usize) -> usize {
    if col < fan_in {
        offset + row * fan_in + col
    } else {
        offset + outputs * fan_in + row
    }
}

/// Dense block-diagonal damped Fisher `⊕ (A + √γ I) ⊗ (G + √γ I)` in flat parameter order.
pub fn dense_fisher(state: &KfacState, layout: &NetworkParams) -> DMatrix<f64> {
    let p = layout.len();
    let s = state.config().damping.sqrt();
    let mut f = DMatrix::zeros(p, p);
    let mut offset = 0;
    for (block, factor) in layout.blocks().iter().zip(state.factors()) {
        let (o, c) = (block.outputs, block.fan_in);
        let a = factor.a() + DMatrix::identity(c + 1, c + 1) * s;
        let g = factor.g() + DMatrix::identity(o, o) * s;
        // column-major vec of the o x (c+1) homogeneous matrix: index j * o + i
        let k = a.kronecker(&g);
        let to_flat = |v: usize| flat_index(offset, o, c, v % o, v / o);
        for u in 0..k.nrows() {
            for v in 0..k.ncols() {
                f[(to_flat(u), to_flat(v))] = k[(u, v)];
            }
        }
        offset += block.len();
    }
    f
}

/// `M^{-1}` and `M^{-1/2}` of a symmetric positive definite matrix.
pub fn spd_inverse_and_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let isq = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    (q * inv * q.transpose(), q * isq * q.transpose())
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = want.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Largest entry-wise deviation of an empirical covariance in units of its Monte-Carlo standard error.
pub fn covariance_z(empirical: &DMatrix<f64>, truth: &DMatrix<f64>, draws: usize) -> f64 {
    let n = draws as f64;
    let mut worst: f64 = 0.0;
    for i in 0..truth.nrows() {
        for j in 0..truth.ncols() {
            let var = (truth[(i, i)] * truth[(j, j)] + truth[(i, j)] * truth[(i, j)]) / n;
            worst = worst.max((empirical[(i, j)] - truth[(i, j)]).abs() / var.sqrt());
        }
    }
    worst
}

/// A small synthetic-data experiment for determinism checks.
pub fn tiny_config(dir: &Path, kind: &str, seed: u64) -> ExperimentConfig {
    parse_config(&format!(
        r#"
seed = {seed}
output_dir = "{}"

[sampler]
kind = "{kind}"
schedule = {{ form = "polynomial", a = 2e-4, b = 10.0, gamma = 0.55 }}

[training]
batch_size = 16
epochs = 3

[data.synthetic]
train = 72
test = 32
ood = 16
classes = 3
side = 8

[model]
widths = [2, 3, 8]
kernel = 3

[kfac]
damping = 0.1
cadence = 3

[rmsprop]
eps = 0.1

[snapshots]
every = 2
burn_in = 0.3

[diagnostics]
stride = 1
tracked = 16
burn_in = 0.3
"#,
        dir.display()
    ))
    .expect("valid config")
}
