//! Posterior-averaged prediction, FGSM attacks and out-of-distribution confidence.

use std::io::Write;

use crate::data::Dataset;
use crate::diagnostics::format_f64;
use crate::error::{Error, Result};
use crate::net::{ActivationCache, Network, NetworkParams};
use crate::tensor::Tensor;

const CHUNK: usize = 32;

/// Number of histogram bins on `[0, 1]` for OOD max probabilities.
pub const OOD_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: NetworkParams,
    pub step: u64,
    pub rate: f64,
}

/// Parameter snapshots whose predictive distributions are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEnsemble {
    snapshots: Vec<Snapshot>,
}

impl SnapshotEnsemble {
    pub fn new(snapshots: Vec<Snapshot>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::InvalidArgument("ensemble needs at least one snapshot".into()))?;
        if let Some(i) = snapshots
            .iter()
            .position(|s| !s.params.same_layout(&first.params))
        {
            return Err(Error::InvalidArgument(format!(
                "snapshot {i} has a different parameter layout"
            )));
        }
        Ok(Self { snapshots })
    }

    /// A one-member ensemble.
    pub fn point(params: NetworkParams) -> Self {
        Self {
            snapshots: vec![Snapshot {
                params,
                step: 0,
                rate: 0.0,
            }],
        }
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Mean of per-snapshot softmax outputs for `images` (`count x ...`).
    pub fn predict_proba(&self, net: &Network, images: &Tensor) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for s in &self.snapshots {
            let p = net.predict_proba(&s.params, images, CHUNK)?;
            match acc.as_mut() {
                None => acc = Some(p),
                Some(a) => a
                    .data_mut()
                    .iter_mut()
                    .zip(p.data())
                    .for_each(|(x, y)| *x += y),
            }
        }
        let mut acc = acc.expect("non-empty ensemble");
        let k = self.snapshots.len() as f64;
        acc.data_mut().iter_mut().for_each(|v| *v /= k);
        Ok(acc)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSummary {
    /// `count x classes` averaged probabilities.
    pub probabilities: Tensor,
    pub predictions: Vec<usize>,
    pub max_prob: Vec<f64>,
    pub labels: Vec<usize>,
    pub accuracy: f64,
}

impl PredictionSummary {
    fn from_probabilities(probabilities: Tensor, labels: &[usize]) -> Self {
        let n = probabilities.rows();
        let mut predictions = Vec::with_capacity(n);
        let mut max_prob = Vec::with_capacity(n);
        for i in 0..n {
            let row = probabilities.row(i);
            let k = argmax(row);
            predictions.push(k);
            max_prob.push(row[k]);
        }
        let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
        Self {
            probabilities,
            predictions,
            max_prob,
            labels: labels.to_vec(),
            accuracy: correct as f64 / n.max(1) as f64,
        }
    }

    /// `example,label,prediction,max_prob`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["example", "label", "prediction", "max_prob"])?;
        for (i, ((l, p), m)) in self
            .labels
            .iter()
            .zip(&self.predictions)
            .zip(&self.max_prob)
            .enumerate()
        {
            w.write_record([i.to_string(), l.to_string(), p.to_string(), format_f64(*m)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn posterior_predict(
    net: &Network,
    ensemble: &SnapshotEnsemble,
    dataset: &Dataset,
) -> Result<PredictionSummary> {
    let probs = ensemble.predict_proba(net, &dataset.images)?;
    Ok(PredictionSummary::from_probabilities(probs, &dataset.labels))
}

/// Gradient of `-log(mean_s p_s(y | x))` with respect to the inputs.
pub fn ensemble_input_gradient(
    net: &Network,
    ensemble: &SnapshotEnsemble,
    images: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    let n = images.rows();
    let classes = net.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            row: labels.iter().position(|&l| l == bad).unwrap_or(0),
            label: bad,
            classes,
        });
    }
    let probs: Vec<Tensor> = ensemble
        .snapshots()
        .iter()
        .map(|s| net.predict_proba(&s.params, images, CHUNK))
        .collect::<Result<_>>()?;
    // ∇ -log p̄_y = Σ_s w_s ∇ ℓ_s with w_s = p_s(y) / Σ_s' p_s'(y).
    let totals: Vec<f64> = (0..n)
        .map(|b| probs.iter().map(|p| p.row(b)[labels[b]]).sum())
        .collect();
    let mut grad = Tensor::zeros(vec![n, net.input_shape().len()]);
    let k = ensemble.len() as f64;
    let mut cache = ActivationCache::default();
    for (s, p) in ensemble.snapshots().iter().zip(&probs) {
        net.forward_with(&s.params, images, &mut cache)?;
        let mut dl = p.clone();
        for (b, row) in dl.data_mut().chunks_mut(classes).enumerate() {
            let w = if totals[b] > 0.0 {
                p.row(b)[labels[b]] / totals[b]
            } else {
                1.0 / k
            };
            row[labels[b]] -= 1.0;
            row.iter_mut().for_each(|v| *v *= w);
        }
        let (_, dx) = net.backward_with_input(&s.params, &mut cache, &dl)?;
        grad.data_mut()
            .iter_mut()
            .zip(dx.data())
            .for_each(|(g, d)| *g += d);
    }
    Ok(grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clip(x + ε sign(∇_x L), 0, 1)` against the ensemble's averaged predictive distribution.
pub fn fgsm_ensemble(
    net: &Network,
    ensemble: &SnapshotEnsemble,
    images: &Tensor,
    labels: &[usize],
    epsilon: f64,
) -> Result<Tensor> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut out = images.clone();
    if epsilon == 0.0 {
        return Ok(out);
    }
    let n = images.rows();
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let sub = images.gather_rows(&idx);
        let g = ensemble_input_gradient(net, ensemble, &sub, &labels[start..end])?;
        let w = images.row_len();
        let dst = &mut out.data_mut()[start * w..end * w];
        for (x, d) in dst.iter_mut().zip(g.data()) {
            *x = (*x + epsilon * sign(*d)).clamp(0.0, 1.0);
        }
        start = end;
    }
    Ok(out)
}

/// Single-model FGSM.
pub fn fgsm(
    net: &Network,
    params: &NetworkParams,
    images: &Tensor,
    labels: &[usize],
    epsilon: f64,
) -> Result<Tensor> {
    fgsm_ensemble(net, &SnapshotEnsemble::point(params.clone()), images, labels, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialResult {
    pub epsilon: f64,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
}

/// Accuracy of the ensemble on FGSM-perturbed inputs.
pub fn adversarial_accuracy(
    net: &Network,
    ensemble: &SnapshotEnsemble,
    dataset: &Dataset,
    epsilon: f64,
) -> Result<AdversarialResult> {
    let clean = posterior_predict(net, ensemble, dataset)?.accuracy;
    let adv_images = fgsm_ensemble(net, ensemble, &dataset.images, &dataset.labels, epsilon)?;
    let probs = ensemble.predict_proba(net, &adv_images)?;
    let adv = PredictionSummary::from_probabilities(probs, &dataset.labels).accuracy;
    Ok(AdversarialResult {
        epsilon,
        clean_accuracy: clean,
        adversarial_accuracy: adv,
    })
}

/// Distribution of the per-example maximum averaged probability.
#[derive(Debug, Clone, PartialEq)]
pub struct OodHistogram {
    pub counts: Vec<usize>,
    pub mean: f64,
    pub median: f64,
    pub max_prob: Vec<f64>,
}

impl OodHistogram {
    pub fn from_max_prob(max_prob: Vec<f64>, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &p in &max_prob {
            let b = ((p * bins as f64).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = max_prob.len();
        let mean = max_prob.iter().sum::<f64>() / n.max(1) as f64;
        let mut sorted = max_prob.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        Self {
            counts,
            mean,
            median,
            max_prob,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `bin_left,bin_right,count`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count"])?;
        let width = 1.0 / self.bins() as f64;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                format!("{}", i as f64 * width),
                format!("{}", (i + 1) as f64 * width),
                c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn ood_max_prob(net: &Network, ensemble: &SnapshotEnsemble, ood: &Dataset) -> Result<OodHistogram> {
    let (h, w) = ood.side();
    if h * w != net.input_shape().len() {
        return Err(Error::InvalidArgument(format!(
            "OOD images are {h}x{w}, model expects {:?}",
            net.input_shape()
        )));
    }
    let probs = ensemble.predict_proba(net, &ood.images)?;
    let max_prob = (0..probs.rows())
        .map(|i| probs.row(i)[argmax(probs.row(i))])
        .collect();
    Ok(OodHistogram::from_max_prob(max_prob, OOD_BINS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::net::{ActShape, LayerSpec};
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn net_2x2(classes: usize) -> Network {
        Network::reference_scaled(4, classes, [2, 2, 4], 3).unwrap()
    }

    fn random_params(net: &Network, seed: u64) -> NetworkParams {
        let mut rng = stream(seed, Purpose::Init, 0);
        net.init_params(&mut rng)
    }

    #[test]
    fn single_snapshot_is_plain_prediction() {
        let net = net_2x2(3);
        let p = random_params(&net, 1);
        let data = synthetic(20, 3, 4, 1).unwrap();
        let e = SnapshotEnsemble::point(p.clone());
        let summary = posterior_predict(&net, &e, &data).unwrap();
        let direct = net.predict_proba(&p, &data.images, 7).unwrap();
        assert_eq!(summary.probabilities, direct);
        let k3 = SnapshotEnsemble::new(vec![e.snapshots()[0].clone(); 3]).unwrap();
        let s3 = posterior_predict(&net, &k3, &data).unwrap();
        for (a, b) in s3.probabilities.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s3.predictions, summary.predictions);
    }

    #[test]
    fn averaging_opposite_models() {
        // dense 1 -> 2 with logits (±50, 0) so softmax is ~(1,0) / (0,1)
        let net = Network::new(ActShape::Flat(1), vec![LayerSpec::dense(1, 2)]).unwrap();
        let mut a = net.zero_params();
        a.blocks_mut()[0].bias = vec![800.0, 0.0];
        let mut b = net.zero_params();
        b.blocks_mut()[0].bias = vec![0.0, 800.0];
        let e = SnapshotEnsemble::new(vec![
            Snapshot { params: a, step: 0, rate: 0.0 },
            Snapshot { params: b, step: 1, rate: 0.0 },
        ])
        .unwrap();
        let p = e.predict_proba(&net, &Tensor::zeros(vec![1, 1])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert_eq!(argmax(p.row(0)), 0);
    }

    #[test]
    fn ensembles_validate_layout() {
        assert!(SnapshotEnsemble::new(vec![]).is_err());
        let s = |d: &[(usize, usize)]| Snapshot {
            params: NetworkParams::zeros(d),
            step: 0,
            rate: 0.0,
        };
        assert!(SnapshotEnsemble::new(vec![s(&[(2, 2)]), s(&[(2, 3)])]).is_err());
    }

    #[test]
    fn random_ensembles_average_to_distributions() {
        let net = net_2x2(4);
        let data = synthetic(15, 4, 4, 2).unwrap();
        let e = SnapshotEnsemble::new(
            (0..4)
                .map(|i| Snapshot {
                    params: random_params(&net, 10 + i),
                    step: i,
                    rate: 0.0,
                })
                .collect(),
        )
        .unwrap();
        let s = posterior_predict(&net, &e, &data).unwrap();
        for i in 0..15 {
            let sum: f64 = s.probabilities.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(s.max_prob[i] >= 0.25 - 1e-12 && s.max_prob[i] <= 1.0);
        }
    }

    #[test]
    fn fgsm_respects_budget_and_range() {
        let net = net_2x2(3);
        let p = random_params(&net, 3);
        let data = synthetic(12, 3, 4, 3).unwrap();
        let same = fgsm(&net, &p, &data.images, &data.labels, 0.0).unwrap();
        assert_eq!(same, data.images);
        for eps in [0.05, 0.25, 2.0] {
            let adv = fgsm(&net, &p, &data.images, &data.labels, eps).unwrap();
            for (a, x) in adv.data().iter().zip(data.images.data()) {
                assert!((0.0..=1.0).contains(a));
                assert!((a - x).abs() <= eps + 1e-12);
            }
        }
        assert!(fgsm(&net, &p, &data.images, &data.labels, -1.0).is_err());
    }

    #[test]
    fn ensemble_gradient_matches_finite_differences() {
        let net = net_2x2(3);
        let e = SnapshotEnsemble::new(
            (0..3)
                .map(|i| Snapshot {
                    params: random_params(&net, 40 + i),
                    step: i,
                    rate: 0.0,
                })
                .collect(),
        )
        .unwrap();
        let mut rng = stream(5, Purpose::Custom(40), 0);
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let labels = [2];
        let g = ensemble_input_gradient(&net, &e, &x, &labels).unwrap();
        let loss = |x: &Tensor| -e.predict_proba(&net, x).unwrap().row(0)[2].ln();
        let h = 1e-6;
        for i in 0..16 {
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut down = x.clone();
            down.data_mut()[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!((g.data()[i] - fd).abs() < 1e-7, "{i}: {} vs {fd}", g.data()[i]);
        }
    }

    #[test]
    fn uniform_model_ood_histogram() {
        let net = net_2x2(10);
        let zero = net.zero_params();
        let data = synthetic(33, 3, 4, 8).unwrap();
        let h = ood_max_prob(&net, &SnapshotEnsemble::point(zero), &data).unwrap();
        assert!(h.max_prob.iter().all(|&p| (p - 0.1).abs() < 1e-15));
        assert_eq!(h.counts.iter().sum::<usize>(), 33);
        assert_eq!(h.bins(), OOD_BINS);
        assert!((h.mean - 0.1).abs() < 1e-15 && (h.median - 0.1).abs() < 1e-15);
        let wrong = synthetic(3, 3, 5, 8).unwrap();
        assert!(ood_max_prob(&net, &SnapshotEnsemble::point(net.zero_params()), &wrong).is_err());
    }

    #[test]
    fn histogram_puts_one_in_last_bin() {
        let h = OodHistogram::from_max_prob(vec![1.0, 0.0, 0.5, 0.999], 50);
        assert_eq!(h.counts[49], 2);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[25], 1);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 51);
    }
}
