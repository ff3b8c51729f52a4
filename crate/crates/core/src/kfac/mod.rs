//! Kronecker-factored curvature blocks.
//!
//! Each parameterized layer keeps running estimates of `A = E[a a^T]` (with a
//! homogeneous 1 appended to `a` for the bias) and `G = E[g g^T]`. The Fisher
//! block is approximated by `A ⊗ G` and never formed densely: products with its
//! inverse are evaluated as `G^{-1} V A^{-1}` on the `outputs x (fan_in + 1)`
//! matrix view `V` of the layer's parameters.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ActivationCache, NetworkParams, ParamBlock};
use crate::tensor::{gemm, MatRef};

/// Tolerance below which a negative eigenvalue of an inverse factor is treated as zero.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfacConfig {
    /// Tikhonov damping `γ`; `sqrt(γ)` is added to the diagonal of each factor.
    pub damping: f64,
    /// Running-average decay of the factor estimates.
    pub decay: f64,
    /// Factor updates between inverse refreshes.
    pub cadence: u64,
}

impl Default for KfacConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            decay: 0.95,
            cadence: 20,
        }
    }
}

impl KfacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0) || !self.damping.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "k-fac damping must be > 0, got {}",
                self.damping
            )));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::InvalidArgument(format!(
                "k-fac decay must be in [0, 1), got {}",
                self.decay
            )));
        }
        if self.cadence == 0 {
            return Err(Error::InvalidArgument("k-fac cadence must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which power of the block-diagonal inverse to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KronMode {
    /// `(A ⊗ G)^{-1}`
    Inverse,
    /// `(A ⊗ G)^{-1/2}`
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFactor {
    pub(crate) a: DMatrix<f64>,
    pub(crate) g: DMatrix<f64>,
    pub(crate) samples: u64,
}

impl LayerFactor {
    pub fn new(fan_in: usize, outputs: usize) -> Self {
        Self {
            a: DMatrix::zeros(fan_in + 1, fan_in + 1),
            g: DMatrix::zeros(outputs, outputs),
            samples: 0,
        }
    }

    /// A factor with given prior estimates, as if already updated once.
    pub fn with_prior(a: DMatrix<f64>, g: DMatrix<f64>) -> Self {
        Self { a, g, samples: 1 }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FactorPair {
    pub(crate) a: DMatrix<f64>,
    pub(crate) g: DMatrix<f64>,
}

/// Per-layer factors and their cached damped inverses.
#[derive(Debug, Clone, PartialEq)]
pub struct KfacState {
    pub(crate) config: KfacConfig,
    pub(crate) factors: Vec<LayerFactor>,
    pub(crate) inverses: Option<Vec<FactorPair>>,
    pub(crate) roots: Option<Vec<FactorPair>>,
    /// Number of factor updates applied so far.
    pub(crate) updates: u64,
    /// Value of `updates` when `inverses` were computed.
    pub(crate) inverted_at: u64,
    /// Value of `updates` when `roots` were computed.
    pub(crate) rooted_at: u64,
}

impl KfacState {
    /// Empty factors for a network with the given `(outputs, fan_in)` blocks.
    pub fn new(dims: &[(usize, usize)], config: KfacConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::from_factors(
            dims.iter().map(|&(o, f)| LayerFactor::new(f, o)).collect(),
            config,
        ))
    }

    pub fn from_factors(factors: Vec<LayerFactor>, config: KfacConfig) -> Self {
        Self {
            config,
            factors,
            inverses: None,
            roots: None,
            updates: 0,
            inverted_at: 0,
            rooted_at: 0,
        }
    }

    pub fn config(&self) -> &KfacConfig {
        &self.config
    }

    pub fn factors(&self) -> &[LayerFactor] {
        &self.factors
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// `(A^{-1}, G^{-1})` of layer `i`, if computed.
    pub fn inverse(&self, i: usize) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.inverses.as_ref().map(|v| (&v[i].a, &v[i].g))
    }

    /// `(A^{-1/2}, G^{-1/2})` of layer `i`, if computed.
    pub fn inverse_sqrt(&self, i: usize) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.roots.as_ref().map(|v| (&v[i].a, &v[i].g))
    }

    /// Factor updates since the last inversion.
    pub fn staleness(&self) -> u64 {
        self.updates - self.inverted_at
    }

    /// True when inverses are missing or older than the refresh cadence.
    pub fn needs_refresh(&self) -> bool {
        self.inverses.is_none() || self.staleness() >= self.config.cadence
    }

    fn check_fresh(&self, mode: KronMode) -> Result<&[FactorPair]> {
        let inv = self
            .inverses
            .as_deref()
            .ok_or_else(|| Error::StaleInverse("inverses never computed".into()))?;
        if self.staleness() > self.config.cadence {
            return Err(Error::StaleInverse(format!(
                "{} updates since inversion, cadence {}",
                self.staleness(),
                self.config.cadence
            )));
        }
        match mode {
            KronMode::Inverse => Ok(inv),
            KronMode::InverseSqrt => match self.roots.as_deref() {
                Some(r) if self.rooted_at == self.inverted_at => Ok(r),
                Some(_) => Err(Error::StaleInverse(
                    "square roots predate the current inverses".into(),
                )),
                None => Err(Error::StaleInverse("square roots never computed".into())),
            },
        }
    }

    /// Folds the batch statistics held in `cache` into the running factors.
    pub fn update_factors(&mut self, cache: &ActivationCache) -> Result<()> {
        let stats = cache.layer_stats();
        if stats.len() != self.factors.len() {
            return Err(Error::Dimension {
                layer: 0,
                message: format!(
                    "cache has {} parameterized layers, k-fac state has {}",
                    stats.len(),
                    self.factors.len()
                ),
            });
        }
        let decay = self.config.decay;
        for (i, (factor, s)) in self.factors.iter_mut().zip(&stats).enumerate() {
            let fan_in = factor.a.nrows() - 1;
            let outputs = factor.g.nrows();
            let grads = s.grads.ok_or_else(|| {
                Error::StaleCache(format!("layer {i}: backward has not filled g"))
            })?;
            if s.rows == 0
                || s.activations.len() != s.rows * fan_in
                || grads.len() != s.rows * outputs
            {
                return Err(Error::Dimension {
                    layer: i,
                    message: format!(
                        "cache rows {} do not match factor sizes {fan_in}+1 / {outputs}",
                        s.rows
                    ),
                });
            }
            let a_new = homogeneous_moment(s.activations, s.rows, fan_in);
            let g_new = second_moment(grads, s.rows, outputs);
            if factor.samples == 0 {
                factor.a = a_new;
                factor.g = g_new;
            } else {
                factor.a = &factor.a * decay + a_new * (1.0 - decay);
                factor.g = &factor.g * decay + g_new * (1.0 - decay);
            }
            symmetrize(&mut factor.a);
            symmetrize(&mut factor.g);
            factor.samples += 1;
        }
        self.updates += 1;
        Ok(())
    }

    /// Caches `(A + sqrt(γ) I)^{-1}` and `(G + sqrt(γ) I)^{-1}` for every layer.
    pub fn invert_factors(&mut self) -> Result<()> {
        let shift = self.config.damping.sqrt();
        let inverses = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                Ok(FactorPair {
                    a: damped_inverse(&f.a, shift, i)?,
                    g: damped_inverse(&f.g, shift, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.inverses = Some(inverses);
        self.roots = None;
        self.inverted_at = self.updates;
        Ok(())
    }

    /// Caches symmetric square roots of the damped inverse factors.
    pub fn factor_sqrt(&mut self) -> Result<()> {
        let inv = self
            .inverses
            .as_ref()
            .ok_or_else(|| Error::StaleInverse("inverses never computed".into()))?;
        let roots = inv
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(FactorPair {
                    a: psd_sqrt(&p.a, i)?,
                    g: psd_sqrt(&p.g, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.roots = Some(roots);
        self.rooted_at = self.inverted_at;
        Ok(())
    }

    /// Refreshes inverses (and roots, for [`KronMode::InverseSqrt`]) when due.
    pub fn refresh_if_due(&mut self, mode: KronMode) -> Result<bool> {
        if !self.needs_refresh() {
            return Ok(false);
        }
        self.invert_factors()?;
        if mode == KronMode::InverseSqrt {
            self.factor_sqrt()?;
        }
        Ok(true)
    }

    /// Applies the block-diagonal inverse (or inverse square root) to `v`.
    pub fn kron_apply(&self, v: &NetworkParams, mode: KronMode) -> Result<NetworkParams> {
        let pairs = self.check_fresh(mode)?;
        if v.blocks().len() != pairs.len() {
            return Err(Error::Dimension {
                layer: 0,
                message: format!(
                    "vector has {} blocks, k-fac state has {}",
                    v.blocks().len(),
                    pairs.len()
                ),
            });
        }
        let blocks = v
            .blocks()
            .iter()
            .zip(pairs)
            .enumerate()
            .map(|(i, (block, pair))| {
                let (outputs, cols) = (block.outputs, block.fan_in + 1);
                if pair.g.nrows() != outputs || pair.a.nrows() != cols {
                    return Err(Error::Dimension {
                        layer: i,
                        message: "vector block does not match factor sizes".into(),
                    });
                }
                let m = block.to_homogeneous();
                let mut gm = vec![0.0; outputs * cols];
                // nalgebra storage is column-major; the factors are symmetric so it
                // doubles as row-major.
                gemm(
                    MatRef::new(pair.g.as_slice(), outputs, outputs),
                    MatRef::new(&m, outputs, cols),
                    0.0,
                    &mut gm,
                );
                let mut out = vec![0.0; outputs * cols];
                gemm(
                    MatRef::new(&gm, outputs, cols),
                    MatRef::new(pair.a.as_slice(), cols, cols),
                    0.0,
                    &mut out,
                );
                Ok(ParamBlock::from_homogeneous(outputs, block.fan_in, &out))
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkParams::from_blocks(blocks)
    }
}

/// `X^T X / rows` for a row-major `rows x cols` matrix.
fn second_moment(x: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = vec![0.0; cols * cols];
    gemm(
        MatRef::new(x, rows, cols).t(),
        MatRef::new(x, rows, cols),
        0.0,
        &mut out,
    );
    let scale = 1.0 / rows as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    let mut m = DMatrix::from_row_slice(cols, cols, &out);
    symmetrize(&mut m);
    m
}

/// Second moment of the rows of `x` with a homogeneous 1 appended to each.
fn homogeneous_moment(x: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(cols + 1, cols + 1);
    let xx = second_moment(x, rows, cols);
    m.view_mut((0, 0), (cols, cols)).copy_from(&xx);
    let mut sums = vec![0.0; cols];
    for r in 0..rows {
        for (s, v) in sums.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *s += v;
        }
    }
    for (j, s) in sums.iter().enumerate() {
        let mean = s / rows as f64;
        m[(j, cols)] = mean;
        m[(cols, j)] = mean;
    }
    m[(cols, cols)] = 1.0;
    m
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn damped_inverse(m: &DMatrix<f64>, shift: f64, layer: usize) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let damped = m + DMatrix::identity(n, n) * shift;
    let mut inv = Cholesky::new(damped)
        .ok_or(Error::Factorization { layer })?
        .inverse();
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(Error::Factorization { layer });
    }
    symmetrize(&mut inv);
    Ok(inv)
}

fn psd_sqrt(m: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_TOLERANCE {
            return Err(Error::NegativeEigenvalue { layer, value: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let mut root = q * DMatrix::from_diagonal(&vals) * q.transpose();
    symmetrize(&mut root);
    Ok(root)
}
