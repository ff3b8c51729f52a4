//! The unified Langevin update
//!
//! ```text
//! θ ← θ + λ_t · ∇ log p(θ | data) + G ε,     ε ~ N(0, κ λ_t I)
//! ```
//!
//! The preconditioner `G` only touches the noise. It is `0` for SGD and FSGD,
//! `I` for SGLD, the diagonal RMSprop matrix for pSGLD and the K-FAC inverse
//! (or its square root) for KSGLD. `κ` is the noise-variance multiplier, 1 by
//! default.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfac::{KfacState, KronMode};
use crate::net::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "SGD")]
    Sgd,
    #[serde(rename = "FSGD")]
    Fsgd,
    #[serde(rename = "SGLD")]
    Sgld,
    #[serde(rename = "PSGLD")]
    Psgld,
    #[serde(rename = "KSGLD")]
    Ksgld,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] = [
        SamplerKind::Sgd,
        SamplerKind::Fsgd,
        SamplerKind::Sgld,
        SamplerKind::Psgld,
        SamplerKind::Ksgld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Sgd => "SGD",
            SamplerKind::Fsgd => "FSGD",
            SamplerKind::Sgld => "SGLD",
            SamplerKind::Psgld => "PSGLD",
            SamplerKind::Ksgld => "KSGLD",
        }
    }

    /// Whether the update injects Gaussian noise.
    pub fn is_langevin(self) -> bool {
        matches!(
            self,
            SamplerKind::Sgld | SamplerKind::Psgld | SamplerKind::Ksgld
        )
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sampler kind {s:?}")))
    }
}

/// Learning-rate schedule `λ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant { rate: f64 },
    /// `a (1 + t / b)^(-gamma)`
    Polynomial { a: f64, b: f64, gamma: f64 },
}

impl Schedule {
    pub fn constant(rate: f64) -> Result<Self> {
        let s = Schedule::Constant { rate };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(a: f64, b: f64, gamma: f64) -> Result<Self> {
        let s = Schedule::Polynomial { a, b, gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            Schedule::Polynomial { a, b, gamma }
                if a > 0.0
                    && a.is_finite()
                    && b > 0.0
                    && b.is_finite()
                    && gamma > 0.5
                    && gamma <= 1.0 =>
            {
                Ok(())
            }
            s => Err(Error::InvalidArgument(format!(
                "invalid schedule {s:?}: need rate/a > 0, b > 0, gamma in (0.5, 1]"
            ))),
        }
    }

    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            Schedule::Constant { rate } => rate,
            Schedule::Polynomial { a, b, gamma } => a * (1.0 + t as f64 / b).powf(-gamma),
        }
    }

    /// Initial rate `λ_0`.
    pub fn initial(&self) -> f64 {
        self.rate(0)
    }
}

/// Gradient of the Gaussian log-prior `-τ/2 ‖θ‖²`.
pub fn prior_grad(params: &NetworkParams, precision: f64) -> Gradients {
    let mut g = params.clone();
    g.scale(-precision);
    g
}

pub fn log_prior(params: &NetworkParams, precision: f64) -> f64 {
    -0.5 * precision * params.iter().map(|v| v * v).sum::<f64>()
}

/// Ascent direction of the full-data log posterior from a mini-batch mean-loss gradient.
///
/// The mean-loss gradient is multiplied by `n` (that is, `n / J` times the batch sum).
pub fn posterior_gradient(
    mean_loss_grad: &Gradients,
    params: &NetworkParams,
    dataset_size: usize,
    precision: f64,
) -> Gradients {
    let mut g = prior_grad(params, precision);
    g.axpy(-(dataset_size as f64), mean_loss_grad);
    g
}

/// Running mean of squared gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspropState {
    pub v: NetworkParams,
    pub alpha: f64,
    pub eps: f64,
}

impl RmspropState {
    pub fn new(layout: &NetworkParams, alpha: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rmsprop needs alpha in [0, 1) and eps > 0, got {alpha}, {eps}"
            )));
        }
        Ok(Self {
            v: layout.zeros_like(),
            alpha,
            eps,
        })
    }

    /// `V ← αV + (1 − α) g²`
    pub fn update(&mut self, grads: &Gradients) -> Result<()> {
        if !self.v.same_layout(grads) {
            return Err(Error::InvalidArgument("rmsprop layout mismatch".into()));
        }
        let a = self.alpha;
        for (v, g) in self.v.iter_mut().zip(grads.iter()) {
            *v = a * *v + (1.0 - a) * g * g;
        }
        Ok(())
    }

    /// Diagonal of `G`: `1 / (sqrt(V) + e)`.
    pub fn preconditioner(&self) -> NetworkParams {
        let mut d = self.v.clone();
        d.iter_mut().for_each(|v| *v = 1.0 / (v.sqrt() + self.eps));
        d
    }
}

/// Source of standard normal draws.
pub trait NoiseSource {
    fn fill_standard_normal(&mut self, out: &mut [f64]);
}

/// Draws from any RNG.
#[derive(Debug)]
pub struct GaussianNoise<R>(pub R);

impl<R: Rng> NoiseSource for GaussianNoise<R> {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.0.sample(StandardNormal);
        }
    }
}

/// A noise stream that always yields zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Noise preconditioner state passed to [`Sampler::step`].
#[derive(Debug, Clone, Copy)]
pub enum Preconditioner<'a> {
    None,
    Rmsprop(&'a RmspropState),
    Kfac(&'a KfacState, KronMode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub schedule: Schedule,
    /// Noise variance multiplier `κ`; `ε ~ N(0, κ λ_t I)`.
    pub noise_multiplier: f64,
}

impl Sampler {
    /// FSGD always runs at the schedule's initial rate.
    pub fn new(kind: SamplerKind, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let schedule = match kind {
            SamplerKind::Fsgd => Schedule::Constant {
                rate: schedule.initial(),
            },
            _ => schedule,
        };
        Ok(Self {
            kind,
            schedule,
            noise_multiplier: 1.0,
        })
    }

    pub fn with_noise_multiplier(mut self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise multiplier must be > 0, got {kappa}"
            )));
        }
        self.noise_multiplier = kappa;
        Ok(self)
    }

    pub fn rate(&self, t: u64) -> f64 {
        self.schedule.rate(t)
    }

    /// Draws `G ε` with `ε ~ N(0, κ λ I)`, or `None` when `G = 0`.
    pub fn noise(
        &self,
        layout: &NetworkParams,
        precond: Preconditioner<'_>,
        rate: f64,
        noise: &mut dyn NoiseSource,
    ) -> Result<Option<NetworkParams>> {
        if !self.kind.is_langevin() {
            return Ok(None);
        }
        let mut eps = layout.zeros_like();
        let mut z = vec![0.0; eps.len()];
        noise.fill_standard_normal(&mut z);
        let scale = (self.noise_multiplier * rate).sqrt();
        for (e, z) in eps.iter_mut().zip(&z) {
            *e = scale * z;
        }
        let transformed = match (self.kind, precond) {
            (SamplerKind::Sgld, _) => eps,
            (SamplerKind::Psgld, Preconditioner::Rmsprop(state)) => {
                if !state.v.same_layout(&eps) {
                    return Err(Error::InvalidArgument("rmsprop layout mismatch".into()));
                }
                for (e, v) in eps.iter_mut().zip(state.v.iter()) {
                    *e /= v.sqrt() + state.eps;
                }
                eps
            }
            (SamplerKind::Ksgld, Preconditioner::Kfac(state, mode)) => state.kron_apply(&eps, mode)?,
            (kind, p) => {
                return Err(Error::InvalidArgument(format!(
                    "{kind} cannot use preconditioner {p:?}"
                )))
            }
        };
        Ok(Some(transformed))
    }

    /// One update at step `t`. `ascent` is the log-posterior gradient.
    pub fn step(
        &self,
        params: &mut NetworkParams,
        ascent: &Gradients,
        precond: Preconditioner<'_>,
        t: u64,
        noise: &mut dyn NoiseSource,
    ) -> Result<f64> {
        if !params.same_layout(ascent) {
            return Err(Error::InvalidArgument("gradient layout mismatch".into()));
        }
        let rate = self.rate(t);
        let draw = self.noise(params, precond, rate, noise)?;
        let mut next = params.clone();
        next.axpy(rate, ascent);
        if let Some(d) = draw {
            next.axpy(1.0, &d);
        }
        if !next.all_finite() {
            return Err(Error::NonFinite {
                step: t,
                what: format!("{} update", self.kind),
            });
        }
        *params = next;
        Ok(rate)
    }
}

/// Empirical covariance of `G ε` over `samples` draws (parameter dimension ≤ 50).
pub fn noise_covariance_probe(
    sampler: &Sampler,
    layout: &NetworkParams,
    precond: Preconditioner<'_>,
    rate: f64,
    samples: usize,
    noise: &mut dyn NoiseSource,
) -> Result<DMatrix<f64>> {
    let p = layout.len();
    if p > 50 {
        return Err(Error::InvalidArgument(format!(
            "noise probe supports at most 50 parameters, got {p}"
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("noise probe needs >= 2 samples".into()));
    }
    let mut sum = vec![0.0; p];
    let mut outer = DMatrix::<f64>::zeros(p, p);
    for _ in 0..samples {
        let x = match sampler.noise(layout, precond, rate, noise)? {
            Some(d) => d.to_flat(),
            None => vec![0.0; p],
        };
        for i in 0..p {
            sum[i] += x[i];
            for j in 0..=i {
                outer[(i, j)] += x[i] * x[j];
            }
        }
    }
    let n = samples as f64;
    for i in 0..p {
        for j in 0..=i {
            let c = (outer[(i, j)] - sum[i] * sum[j] / n) / (n - 1.0);
            outer[(i, j)] = c;
            outer[(j, i)] = c;
        }
    }
    Ok(outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn scalar(v: f64) -> NetworkParams {
        let mut p = NetworkParams::zeros(&[(1, 0)]);
        p.blocks_mut()[0].bias[0] = v;
        p
    }

    #[test]
    fn schedules() {
        let c = Schedule::constant(0.01).unwrap();
        assert!((0..1000).all(|t| c.rate(t) == 0.01));
        let p = Schedule::polynomial(0.1, 100.0, 1.0).unwrap();
        assert_eq!(p.rate(0), 0.1);
        assert!((p.rate(100) - 0.05).abs() < 1e-15);
        assert!((1..500).all(|t| p.rate(t) <= p.rate(t - 1) && p.rate(t) > 0.0));
        assert!(Schedule::polynomial(0.1, 100.0, 0.5).is_err());
        assert!(Schedule::polynomial(-0.1, 100.0, 1.0).is_err());
        assert!(Schedule::constant(0.0).is_err());
    }

    #[test]
    fn fsgd_runs_at_constant_rate() {
        let s = Sampler::new(SamplerKind::Fsgd, Schedule::polynomial(0.2, 10.0, 1.0).unwrap()).unwrap();
        assert_eq!(s.rate(0), 0.2);
        assert_eq!(s.rate(10_000), 0.2);
    }

    #[test]
    fn prior_gradient() {
        let mut theta = NetworkParams::zeros(&[(2, 0)]);
        theta.blocks_mut()[0].bias = vec![2.0, -1.0];
        assert!(prior_grad(&theta, 0.0).iter().all(|&v| v == 0.0));
        assert_eq!(prior_grad(&theta, 0.5).blocks()[0].bias, vec![-1.0, 0.5]);
        let fd = crate::net::finite_diff_gradient_fn(&theta, 1e-5, |p| Ok(log_prior(p, 0.5))).unwrap();
        for (a, b) in fd.iter().zip(prior_grad(&theta, 0.5).iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rmsprop_accumulator() {
        let layout = scalar(0.0);
        let mut st = RmspropState::new(&layout, 0.9, 1e-5).unwrap();
        st.update(&scalar(0.0)).unwrap();
        assert_eq!(st.v.blocks()[0].bias[0], 0.0);
        st.update(&scalar(3.0)).unwrap();
        assert!((st.v.blocks()[0].bias[0] - 0.9).abs() < 1e-15);
        for _ in 0..500 {
            st.update(&scalar(3.0)).unwrap();
        }
        assert!((st.v.blocks()[0].bias[0] - 9.0).abs() < 1e-9);
        let d = st.preconditioner().blocks()[0].bias[0];
        assert!((d - 1.0 / (3.0 + 1e-5)).abs() < 1e-9);
    }

    #[test]
    fn sgd_step() {
        let s = Sampler::new(SamplerKind::Sgd, Schedule::constant(0.1).unwrap()).unwrap();
        let mut theta = scalar(1.0);
        s.step(&mut theta, &scalar(2.0), Preconditioner::None, 0, &mut ZeroNoise)
            .unwrap();
        assert!((theta.blocks()[0].bias[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_reduces_every_kind_to_sgd() {
        let layout = NetworkParams::zeros(&[(2, 3)]);
        let mut rng = stream(1, Purpose::Custom(20), 0);
        let mut theta0 = layout.clone();
        theta0.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut grad = layout.clone();
        grad.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let sched = Schedule::polynomial(0.05, 10.0, 0.8).unwrap();
        let mut rms = RmspropState::new(&layout, 0.99, 1e-5).unwrap();
        rms.update(&grad).unwrap();
        let mut kfac = KfacState::from_factors(
            vec![crate::kfac::LayerFactor::with_prior(
                DMatrix::identity(4, 4) * 2.0,
                DMatrix::identity(2, 2),
            )],
            Default::default(),
        );
        kfac.invert_factors().unwrap();
        let run = |kind, pre: Preconditioner<'_>| {
            let s = Sampler::new(kind, sched).unwrap();
            let mut th = theta0.clone();
            for t in 0..5 {
                s.step(&mut th, &grad, pre, t, &mut ZeroNoise).unwrap();
            }
            th
        };
        let sgd = run(SamplerKind::Sgd, Preconditioner::None);
        assert_eq!(run(SamplerKind::Sgld, Preconditioner::None), sgd);
        assert_eq!(run(SamplerKind::Psgld, Preconditioner::Rmsprop(&rms)), sgd);
        assert_eq!(
            run(SamplerKind::Ksgld, Preconditioner::Kfac(&kfac, KronMode::Inverse)),
            sgd
        );
    }

    #[test]
    fn sgld_update_variance_is_rate() {
        let s = Sampler::new(SamplerKind::Sgld, Schedule::constant(0.01).unwrap()).unwrap();
        let mut noise = GaussianNoise(stream(2, Purpose::Noise, 0));
        let zero = scalar(0.0);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for t in 0..n {
            let mut theta = scalar(0.5);
            s.step(&mut theta, &zero, Preconditioner::None, t, &mut noise).unwrap();
            let d = theta.blocks()[0].bias[0] - 0.5;
            sum += d;
            sq += d * d;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((var - 0.01).abs() / 0.01 < 0.05, "variance {var}");
    }

    #[test]
    fn missing_preconditioner_is_rejected() {
        let s = Sampler::new(SamplerKind::Psgld, Schedule::constant(0.1).unwrap()).unwrap();
        let mut theta = scalar(0.0);
        assert!(s
            .step(&mut theta, &scalar(0.0), Preconditioner::None, 0, &mut ZeroNoise)
            .is_err());
        let k = Sampler::new(SamplerKind::Ksgld, Schedule::constant(0.1).unwrap()).unwrap();
        let kfac = KfacState::new(&[(1, 0)], Default::default()).unwrap();
        assert!(matches!(
            k.step(
                &mut theta,
                &scalar(0.0),
                Preconditioner::Kfac(&kfac, KronMode::Inverse),
                0,
                &mut ZeroNoise
            ),
            Err(Error::StaleInverse(_))
        ));
    }

    #[test]
    fn non_finite_update_is_rejected() {
        let s = Sampler::new(SamplerKind::Sgd, Schedule::constant(0.1).unwrap()).unwrap();
        let mut theta = scalar(0.0);
        let err = s
            .step(&mut theta, &scalar(f64::INFINITY), Preconditioner::None, 7, &mut ZeroNoise)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }));
        assert_eq!(theta, scalar(0.0));
    }

    #[test]
    fn seeded_trajectories_are_bit_identical() {
        let s = Sampler::new(SamplerKind::Sgld, Schedule::constant(0.01).unwrap()).unwrap();
        let traj = || {
            let mut theta = NetworkParams::zeros(&[(3, 2)]);
            let grad = theta.zeros_like();
            for t in 0..20 {
                let mut noise = GaussianNoise(stream(9, Purpose::Noise, t));
                s.step(&mut theta, &grad, Preconditioner::None, t, &mut noise).unwrap();
            }
            theta.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(traj(), traj());
    }

    #[test]
    fn probe_rejects_large_layouts() {
        let s = Sampler::new(SamplerKind::Sgld, Schedule::constant(0.1).unwrap()).unwrap();
        let big = NetworkParams::zeros(&[(10, 5)]);
        assert!(noise_covariance_probe(&s, &big, Preconditioner::None, 0.1, 10, &mut ZeroNoise).is_err());
    }

    #[test]
    fn sampler_kind_names_round_trip() {
        for k in SamplerKind::ALL {
            assert_eq!(k.name().parse::<SamplerKind>().unwrap(), k);
        }
        assert!("SGDA".parse::<SamplerKind>().is_err());
    }
}
