//! Parameter traces and effective sample size.
//!
//! Per-coordinate ESS is `n / (1 + 2 Σ_{k=1..K} ρ_k)` where `K` is the last lag
//! before the first non-positive autocorrelation. The multivariate ESS under a
//! diagonal approximation of the covariance ratio reduces to the geometric mean
//! of the per-coordinate values.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::rng::{stream, Purpose};

/// Recorded values of a fixed subset of parameter coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub(crate) indices: Vec<usize>,
    pub(crate) steps: Vec<u64>,
    pub(crate) series: Vec<Vec<f64>>,
    pub(crate) stride: u64,
    pub(crate) dimension: usize,
}

impl Chain {
    pub fn new(indices: Vec<usize>, stride: u64, dimension: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("record stride must be >= 1".into()));
        }
        let unique: HashSet<_> = indices.iter().collect();
        if unique.len() != indices.len() {
            return Err(Error::InvalidArgument("tracked indices must be unique".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dimension) {
            return Err(Error::InvalidArgument(format!(
                "tracked index {bad} outside parameter dimension {dimension}"
            )));
        }
        let series = vec![Vec::new(); indices.len()];
        Ok(Self {
            indices,
            steps: Vec::new(),
            series,
            stride,
            dimension,
        })
    }

    /// Tracks up to `count` coordinates, an equal share drawn uniformly from each layer block.
    pub fn tracked(layout: &NetworkParams, count: usize, stride: u64, seed: u64) -> Result<Self> {
        let sizes: Vec<usize> = layout.blocks().iter().map(|b| b.len()).collect();
        let mut quota = vec![0usize; sizes.len()];
        let mut remaining = count.min(layout.len());
        // Hand out the budget round-robin so small layers cap out and the rest flows on.
        while remaining > 0 {
            let mut progressed = false;
            for (q, &size) in quota.iter_mut().zip(&sizes) {
                if remaining > 0 && *q < size {
                    *q += 1;
                    remaining -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        let mut rng = stream(seed, Purpose::Tracking, 0);
        let mut indices = Vec::with_capacity(count);
        let mut offset = 0;
        for (&size, &q) in sizes.iter().zip(&quota) {
            let mut picked: Vec<usize> = sample(&mut rng, size, q).into_iter().map(|i| i + offset).collect();
            picked.sort_unstable();
            indices.extend(picked);
            offset += size;
        }
        Self::new(indices, stride, layout.len())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }

    pub fn stride(&self) -> u64 {
        self.stride
    }

    /// Number of recorded samples `n`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_due(&self, step: u64) -> bool {
        step.is_multiple_of(self.stride)
    }

    /// Appends the tracked coordinates of `params` recorded at `step`.
    pub fn record(&mut self, params: &NetworkParams, step: u64) -> Result<()> {
        if !self.is_due(step) {
            return Err(Error::InvalidArgument(format!(
                "step {step} is not a multiple of the record stride {}",
                self.stride
            )));
        }
        if params.len() != self.dimension {
            return Err(Error::InvalidArgument(format!(
                "parameter layout changed: dimension {} != {}",
                params.len(),
                self.dimension
            )));
        }
        let flat = params.to_flat();
        for (s, &i) in self.series.iter_mut().zip(&self.indices) {
            s.push(flat[i]);
        }
        self.steps.push(step);
        Ok(())
    }

    /// The trailing `1 - fraction` of the chain.
    pub fn after_burn_in(&self, fraction: f64) -> Chain {
        let skip = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        Chain {
            indices: self.indices.clone(),
            steps: self.steps[skip..].to_vec(),
            series: self.series.iter().map(|s| s[skip..].to_vec()).collect(),
            stride: self.stride,
            dimension: self.dimension,
        }
    }

    /// Long-format CSV: `step,coordinate,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "coordinate", "value"])?;
        for (t, step) in self.steps.iter().enumerate() {
            for (s, idx) in self.series.iter().zip(&self.indices) {
                w.write_record([step.to_string(), idx.to_string(), format_f64(s[t])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:e}")
}

fn centred(series: &[f64]) -> Result<(Vec<f64>, f64)> {
    if series.is_empty() || series.iter().all(|&v| v == series[0]) {
        return Err(Error::Degenerate("constant trace".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma0 = c.iter().map(|v| v * v).sum::<f64>() / n;
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(Error::Degenerate(format!("trace variance {gamma0}")));
    }
    Ok((c, gamma0))
}

fn lag_autocorr(c: &[f64], gamma0: f64, k: usize) -> f64 {
    let n = c.len();
    let s: f64 = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
    s / n as f64 / gamma0
}

/// Lag-`k` sample autocorrelation with divide-by-`n` autocovariances.
pub fn autocorr(series: &[f64], k: usize) -> Result<f64> {
    if k >= series.len() {
        return Err(Error::InvalidArgument(format!(
            "lag {k} >= series length {}",
            series.len()
        )));
    }
    let (c, gamma0) = centred(series)?;
    Ok(lag_autocorr(&c, gamma0, k))
}

/// `(ess, K)` for one trace, with `K` the truncation lag.
pub fn ess_univariate(series: &[f64]) -> Result<(f64, usize)> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "ess needs at least 10 samples, got {n}"
        )));
    }
    let (c, gamma0) = centred(series)?;
    let mut sum = 0.0;
    let mut lag = 0;
    for k in 1..n {
        let rho = lag_autocorr(&c, gamma0, k);
        if rho <= 0.0 {
            break;
        }
        sum += rho;
        lag = k;
    }
    let ess = (n as f64 / (1.0 + 2.0 * sum)).min(n as f64);
    Ok((ess, lag))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateEss {
    pub coordinate: usize,
    pub ess: f64,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssReport {
    pub n: usize,
    pub coordinates: Vec<CoordinateEss>,
    /// Coordinates whose trace was constant.
    pub excluded: Vec<usize>,
    pub mess: f64,
}

impl EssReport {
    /// Number of coordinates contributing to mESS.
    pub fn p(&self) -> usize {
        self.coordinates.len()
    }

    /// `coordinate,ess,lag` rows followed by one `mESS,<value>,` summary row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coordinate", "ess", "lag"])?;
        for c in &self.coordinates {
            w.write_record([c.coordinate.to_string(), format_f64(c.ess), c.lag.to_string()])?;
        }
        w.write_record(["mESS".to_string(), format_f64(self.mess), String::new()])?;
        w.flush()?;
        Ok(())
    }
}

/// Diagonal-approximation multivariate ESS of `chain`: the geometric mean of the per-coordinate ESS.
pub fn mess(chain: &Chain) -> Result<EssReport> {
    let mut coordinates = Vec::new();
    let mut excluded = Vec::new();
    for (s, &idx) in chain.series.iter().zip(&chain.indices) {
        match ess_univariate(s) {
            Ok((ess, lag)) => coordinates.push(CoordinateEss {
                coordinate: idx,
                ess,
                lag,
            }),
            Err(Error::Degenerate(_)) => excluded.push(idx),
            Err(e) => return Err(e),
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} of {} tracked coordinates have constant traces and are excluded from mESS",
            excluded.len(),
            chain.indices.len()
        );
    }
    if coordinates.is_empty() {
        return Err(Error::Degenerate("every tracked coordinate is constant".into()));
    }
    let mean_log = coordinates.iter().map(|c| c.ess.ln()).sum::<f64>() / coordinates.len() as f64;
    Ok(EssReport {
        n: chain.len(),
        coordinates,
        excluded,
        mess: mean_log.exp(),
    })
}
