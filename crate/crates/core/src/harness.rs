//! Experiment orchestration: the training loop, run outputs and resumption.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{
    config_digest, read_checkpoint, save_checkpoint, write_checkpoint, EpochRow, SamplerState,
    TrainState,
};
use crate::config::{load_config, EnsembleMode, ExperimentConfig};
use crate::data::{self, batch_indices, BatchPlan, Dataset};
use crate::diagnostics::{format_f64, mess, Chain, EssReport};
use crate::error::{Error, Result};
use crate::eval::{
    adversarial_accuracy, ood_max_prob, posterior_predict, AdversarialResult, OodHistogram,
    Snapshot, SnapshotEnsemble,
};
use crate::kfac::KfacState;
use crate::net::{loss_and_grad, ActivationCache, Network, NetworkParams};
use crate::rng::{stream, Purpose};
use crate::samplers::{
    posterior_gradient, GaussianNoise, Preconditioner, RmspropState, Sampler, SamplerKind,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_ECHO_FILE: &str = "config_effective.toml";

/// Train, test and optional OOD data for a configuration.
pub fn load_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    config.check_inputs()?;
    let (train, test, ood) = if let Some(s) = &config.data.synthetic {
        let all = data::synthetic(s.train + s.test, s.classes, s.side, s.data_seed)?;
        let (train, test) = all.split_at(s.train);
        let ood = match s.ood {
            0 => None,
            n => Some(data::synthetic(n, s.classes, s.side, s.ood_seed)?),
        };
        (train, test, ood)
    } else {
        let idx = config.data.idx.as_ref().expect("validated data source");
        let train = Dataset::from_idx_files(
            "train",
            &config.resolve(&idx.train_images),
            &config.resolve(&idx.train_labels),
        )?;
        let test = Dataset::from_idx_files(
            "test",
            &config.resolve(&idx.test_images),
            &config.resolve(&idx.test_labels),
        )?;
        let ood = match &idx.ood_images {
            Some(p) => Some(Dataset::from_idx_images("ood", &config.resolve(p))?),
            None => None,
        };
        (train, test, ood)
    };
    let train = match config.data.truncate {
        Some(n) if n < train.len() => data::truncate(&train, n, config.seed)?,
        _ => train,
    };
    Ok((train, test, ood))
}

pub fn build_network(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Network> {
    let (h, w) = train.side();
    if h != w || test.side() != (h, w) {
        return Err(Error::InvalidArgument(format!(
            "expected square images of one size, got {:?} and {:?}",
            train.side(),
            test.side()
        )));
    }
    let classes = match &config.data.synthetic {
        Some(s) => s.classes,
        None => train.classes().max(test.classes()),
    };
    Network::reference_scaled(h, classes, config.model.widths, config.model.kernel)
}

/// Identifies a configuration independent of where its outputs go.
fn run_digest(config: &ExperimentConfig) -> [u8; 32] {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    config_digest(&c.effective_toml())
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub kind: SamplerKind,
    pub steps: u64,
    pub final_test_accuracy: f64,
    pub eval_accuracy: f64,
    pub adversarial: Option<AdversarialResult>,
    pub ood_mean_max_prob: Option<f64>,
    pub mess: Option<f64>,
    pub epochs: Vec<EpochRow>,
}

pub struct Trainer {
    config: ExperimentConfig,
    net: Network,
    train: Dataset,
    test: Dataset,
    ood: Option<Dataset>,
    sampler: Sampler,
    state: TrainState,
    batches_per_epoch: u64,
    epoch_batches: Option<(u64, Vec<Vec<usize>>)>,
    timing: Vec<(u64, f64)>,
    epoch_started: Instant,
    cache: ActivationCache,
}

impl Trainer {
    /// Loads data, initialises parameters and writes the effective-config echo.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test, ood) = load_datasets(&config)?;
        let net = build_network(&config, &train, &test)?;
        let echo = config.effective_toml();
        log::info!("effective config:\n{echo}");
        fs::create_dir_all(&config.output_dir)?;
        fs::write(config.output_dir.join(CONFIG_ECHO_FILE), &echo)?;

        let s = &config.sampler;
        let sampler = Sampler::new(s.kind, s.schedule)?.with_noise_multiplier(s.noise_multiplier)?;
        let params = net.init_params(&mut stream(config.seed, Purpose::Init, 0));
        let sampler_state = match s.kind {
            SamplerKind::Psgld => SamplerState::Rmsprop(RmspropState::new(
                &params,
                config.rmsprop.alpha,
                config.rmsprop.eps,
            )?),
            SamplerKind::Ksgld => SamplerState::Kfac(KfacState::new(&net.block_dims(), config.kfac)?),
            _ => SamplerState::None,
        };
        let d = &config.diagnostics;
        let chain = Chain::tracked(&params, d.tracked.min(params.len()), d.stride, config.seed)?;
        let batches_per_epoch = BatchPlan::new(config.training.batch_size, config.seed, 0)
            .batches_per_epoch(train.len()) as u64;
        let state = TrainState {
            kind: s.kind,
            seed: config.seed,
            config_digest: run_digest(&config),
            step: 0,
            params,
            sampler: sampler_state,
            epoch_loss_sum: 0.0,
            epoch_loss_count: 0,
            chain,
            snapshots: Vec::new(),
            epochs: Vec::new(),
            losses: Vec::new(),
        };
        log::info!(
            "{}: {} parameters, {} train / {} test examples, {} steps",
            s.kind,
            state.params.len(),
            train.len(),
            test.len(),
            batches_per_epoch * config.training.epochs
        );
        Ok(Self {
            config,
            net,
            train,
            test,
            ood,
            sampler,
            state,
            batches_per_epoch,
            epoch_batches: None,
            timing: Vec::new(),
            epoch_started: Instant::now(),
            cache: ActivationCache::default(),
        })
    }

    /// Continues from `output_dir/checkpoint.bin`.
    pub fn resume(config: ExperimentConfig) -> Result<Self> {
        let path = config.output_dir.join(CHECKPOINT_FILE);
        let state = read_checkpoint(&path)?;
        let mut t = Self::new(config)?;
        t.restore(state)?;
        Ok(t)
    }

    /// Replaces the live state with a checkpointed one from the same configuration.
    pub fn restore(&mut self, state: TrainState) -> Result<()> {
        if state.config_digest != self.state.config_digest
            || state.kind != self.state.kind
            || state.seed != self.state.seed
        {
            return Err(Error::Checkpoint(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        if !state.params.same_layout(&self.state.params) || state.step > self.total_steps() {
            return Err(Error::Checkpoint("checkpoint does not match the model".into()));
        }
        self.state = state;
        self.epoch_started = Instant::now();
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn datasets(&self) -> (&Dataset, &Dataset, Option<&Dataset>) {
        (&self.train, &self.test, self.ood.as_ref())
    }

    pub fn total_steps(&self) -> u64 {
        self.batches_per_epoch * self.config.training.epochs
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        save_checkpoint(&self.state)
    }

    pub fn checkpoint(&self) -> Result<PathBuf> {
        let path = self.config.output_dir.join(CHECKPOINT_FILE);
        write_checkpoint(&path, &self.state)?;
        Ok(path)
    }

    /// Runs up to `n` steps; returns how many were taken.
    pub fn run_steps(&mut self, n: u64) -> Result<u64> {
        let mut done = 0;
        while done < n && !self.is_done() {
            if let Err(e) = self.step() {
                if matches!(e, Error::NonFinite { .. }) {
                    let path = self.checkpoint()?;
                    log::error!("{e}; last finite state saved to {}", path.display());
                }
                return Err(e);
            }
            done += 1;
        }
        Ok(done)
    }

    fn batch(&mut self, epoch: u64, pos: usize) -> Vec<usize> {
        if self.epoch_batches.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let plan = BatchPlan::new(self.config.training.batch_size, self.config.seed, epoch);
            self.epoch_batches = Some((epoch, batch_indices(self.train.len(), &plan)));
        }
        self.epoch_batches.as_ref().expect("cached").1[pos].clone()
    }

    fn step(&mut self) -> Result<()> {
        let t = self.state.step;
        let epoch = t / self.batches_per_epoch;
        let pos = (t % self.batches_per_epoch) as usize;
        let idx = self.batch(epoch, pos);
        let labels: Vec<usize> = idx.iter().map(|&i| self.train.labels[i]).collect();
        let x = self.train.images.gather_rows(&idx);
        let relabel = |e: Error| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { step: t, what },
            e => e,
        };

        let mut cache = std::mem::take(&mut self.cache);
        let logits = self
            .net
            .forward_with(&self.state.params, &x, &mut cache)
            .map_err(relabel)?;
        let (loss, dlogits) = loss_and_grad(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: t,
                what: "training loss".into(),
            });
        }
        let grads = self.net.backward(&self.state.params, &mut cache, &dlogits)?;
        let ascent = posterior_gradient(
            &grads,
            &self.state.params,
            self.train.len(),
            self.config.training.prior_precision,
        );
        let mode = self.config.sampler.ksgld_noise;
        match &mut self.state.sampler {
            SamplerState::Kfac(k) => {
                k.update_factors(&cache)?;
                k.refresh_if_due(mode)?;
            }
            SamplerState::Rmsprop(r) => r.update(&ascent)?,
            SamplerState::None => {}
        }
        self.cache = cache;
        let precond = match &self.state.sampler {
            SamplerState::None => Preconditioner::None,
            SamplerState::Rmsprop(r) => Preconditioner::Rmsprop(r),
            SamplerState::Kfac(k) => Preconditioner::Kfac(k, mode),
        };
        let mut noise = GaussianNoise(stream(self.config.seed, Purpose::Noise, t));
        let mut params = self.state.params.clone();
        let rate = self.sampler.step(&mut params, &ascent, precond, t, &mut noise)?;
        self.state.params = params;

        let s = t + 1;
        self.state.step = s;
        self.state.losses.push((t, loss));
        self.state.epoch_loss_sum += loss;
        self.state.epoch_loss_count += 1;
        if self.state.chain.is_due(s) {
            self.state.chain.record(&self.state.params, s)?;
        }
        let snaps = &self.config.snapshots;
        if s as f64 >= snaps.burn_in * self.total_steps() as f64 && s.is_multiple_of(snaps.every) {
            self.state.snapshots.push(Snapshot {
                params: self.state.params.clone(),
                step: s,
                rate,
            });
            if self.state.snapshots.len() > snaps.max {
                self.state.snapshots.remove(0);
            }
        }
        if pos as u64 + 1 == self.batches_per_epoch {
            self.end_epoch(epoch, rate)?;
        }
        let every = self.config.training.checkpoint_every;
        if every > 0 && s.is_multiple_of(every) && !self.is_done() {
            self.checkpoint()?;
        }
        Ok(())
    }

    fn end_epoch(&mut self, epoch: u64, rate: f64) -> Result<()> {
        let point = SnapshotEnsemble::point(self.state.params.clone());
        let test_accuracy = posterior_predict(&self.net, &point, &self.test)?.accuracy;
        let ensemble_accuracy = if self.state.snapshots.is_empty() {
            f64::NAN
        } else {
            let e = SnapshotEnsemble::new(self.state.snapshots.clone())?;
            posterior_predict(&self.net, &e, &self.test)?.accuracy
        };
        let chain = self.state.chain.after_burn_in(self.config.diagnostics.burn_in);
        let mess_value = if chain.len() >= 10 {
            mess(&chain).map(|r| r.mess).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let row = EpochRow {
            epoch,
            step: self.state.step,
            train_loss: self.state.epoch_loss_sum / self.state.epoch_loss_count.max(1) as f64,
            test_accuracy,
            ensemble_accuracy,
            rate,
            chain_len: chain.len() as u64,
            mess: mess_value,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} test {:.4} ensemble {:.4} lambda {:.3e} mESS {:.2}/{}",
            self.state.kind,
            row.train_loss,
            row.test_accuracy,
            row.ensemble_accuracy,
            rate,
            row.mess,
            row.chain_len
        );
        self.state.epochs.push(row);
        self.state.epoch_loss_sum = 0.0;
        self.state.epoch_loss_count = 0;
        let now = Instant::now();
        self.timing
            .push((epoch, now.duration_since(self.epoch_started).as_secs_f64()));
        self.epoch_started = now;
        self.checkpoint()?;
        Ok(())
    }

    /// Parameters evaluation uses, per the snapshot policy.
    pub fn eval_ensemble(&self) -> Result<SnapshotEnsemble> {
        eval_ensemble(&self.config, &self.state)
    }

    /// Runs to completion and writes all outputs.
    pub fn finish(mut self) -> Result<RunSummary> {
        let remaining = self.total_steps() - self.state.step;
        self.run_steps(remaining)?;
        let dir = self.config.output_dir.clone();
        write_epoch_csvs(&dir, &self.state)?;
        write_timing(&dir, &self.timing)?;
        self.state.chain.write_csv(csv_file(&dir, "chain.csv")?)?;
        let report = final_ess(&self.config, &self.state, &dir)?;

        let ensemble = self.eval_ensemble()?;
        let summary = posterior_predict(&self.net, &ensemble, &self.test)?;
        summary.write_csv(csv_file(&dir, "predictions.csv")?)?;
        let adversarial = if self.config.eval.adversarial {
            let r = adversarial_accuracy(
                &self.net,
                &ensemble,
                &self.test,
                self.config.eval.fgsm_epsilon,
            )?;
            write_adversarial(&dir.join("adversarial.csv"), &r)?;
            Some(r)
        } else {
            None
        };
        let ood_mean = match (&self.ood, self.config.eval.ood) {
            (Some(ood), true) => {
                let h = ood_max_prob(&self.net, &ensemble, ood)?;
                write_ood(&dir, "ood", &h)?;
                Some(h.mean)
            }
            _ => None,
        };
        self.checkpoint()?;
        let final_test_accuracy = self.state.epochs.last().map_or(f64::NAN, |r| r.test_accuracy);
        log::info!(
            "{} done: test {:.4}, evaluated {:.4}, adversarial {:?}, OOD mean max-prob {:?}",
            self.state.kind,
            final_test_accuracy,
            summary.accuracy,
            adversarial.map(|a| a.adversarial_accuracy),
            ood_mean
        );
        Ok(RunSummary {
            dir,
            kind: self.state.kind,
            steps: self.state.step,
            final_test_accuracy,
            eval_accuracy: summary.accuracy,
            adversarial,
            ood_mean_max_prob: ood_mean,
            mess: report.map(|r| r.mess),
            epochs: self.state.epochs.clone(),
        })
    }
}

pub fn eval_ensemble(config: &ExperimentConfig, state: &TrainState) -> Result<SnapshotEnsemble> {
    let use_final = match config.snapshots.mode {
        EnsembleMode::Final => true,
        EnsembleMode::Auto => state.kind == SamplerKind::Sgd,
        EnsembleMode::Snapshots => false,
    };
    if use_final {
        return Ok(SnapshotEnsemble::point(state.params.clone()));
    }
    if state.snapshots.is_empty() {
        log::warn!("no snapshots were captured; evaluating the final parameters");
        return Ok(SnapshotEnsemble::point(state.params.clone()));
    }
    SnapshotEnsemble::new(state.snapshots.clone())
}

fn csv_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

fn write_epoch_csvs(dir: &Path, state: &TrainState) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(dir, "epochs.csv")?);
    w.write_record([
        "epoch",
        "step",
        "train_loss",
        "test_accuracy",
        "ensemble_accuracy",
        "lambda",
    ])?;
    for r in &state.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            format_f64(r.train_loss),
            format_f64(r.test_accuracy),
            format_f64(r.ensemble_accuracy),
            format_f64(r.rate),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(csv_file(dir, "mess.csv")?);
    w.write_record(["epoch", "step", "chain_len", "mess", "mess_over_n"])?;
    for r in &state.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            r.chain_len.to_string(),
            format_f64(r.mess),
            format_f64(r.mess / r.chain_len as f64),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(csv_file(dir, "losses.csv")?);
    w.write_record(["step", "loss"])?;
    for &(s, l) in &state.losses {
        w.write_record([s.to_string(), format_f64(l)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_timing(dir: &Path, timing: &[(u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(csv_file(dir, "timing.csv")?);
    w.write_record(["epoch", "wall_seconds"])?;
    for &(e, s) in timing {
        w.write_record([e.to_string(), format!("{s:.3}")])?;
    }
    w.flush()?;
    Ok(())
}

/// mESS of the post-burn-in chain, written to `ess.csv`.
pub fn final_ess(config: &ExperimentConfig, state: &TrainState, dir: &Path) -> Result<Option<EssReport>> {
    let chain = state.chain.after_burn_in(config.diagnostics.burn_in);
    if chain.len() < 10 {
        log::warn!("chain has {} post-burn-in records; skipping ESS", chain.len());
        return Ok(None);
    }
    match mess(&chain) {
        Ok(r) => {
            r.write_csv(csv_file(dir, "ess.csv")?)?;
            Ok(Some(r))
        }
        Err(e) => {
            log::warn!("ESS unavailable: {e}");
            Ok(None)
        }
    }
}

pub fn write_adversarial(path: &Path, r: &AdversarialResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "clean_accuracy", "adversarial_accuracy"])?;
    w.write_record([
        format_f64(r.epsilon),
        format_f64(r.clean_accuracy),
        format_f64(r.adversarial_accuracy),
    ])?;
    w.flush()?;
    Ok(())
}

/// `<stem>.csv` holds the histogram, `<stem>_summary.csv` the mean and median.
pub fn write_ood(dir: &Path, stem: &str, h: &OodHistogram) -> Result<()> {
    h.write_csv(csv_file(dir, &format!("{stem}.csv"))?)?;
    let mut w = csv::Writer::from_writer(csv_file(dir, &format!("{stem}_summary.csv"))?);
    w.write_record(["count", "mean_max_prob", "median_max_prob"])?;
    w.write_record([
        h.max_prob.len().to_string(),
        format_f64(h.mean),
        format_f64(h.median),
    ])?;
    w.flush()?;
    Ok(())
}

/// Trains one sampler from scratch and writes its run directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    Trainer::new(config.clone())?.finish()
}

/// Trains every suite member in parallel, each in `output_dir/<KIND>`.
pub fn run_suite(config: &ExperimentConfig) -> Vec<Result<RunSummary>> {
    let members: Vec<ExperimentConfig> = if config.suite.is_empty() {
        vec![config.clone()]
    } else {
        config.suite.iter().map(|&s| config.for_sampler(s)).collect()
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = members
            .iter()
            .map(|c| scope.spawn(move || run_experiment(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Checkpoint("worker panicked".into()))))
            .collect()
    })
}

/// A finished (or interrupted) run reloaded from its directory.
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub net: Network,
    pub test: Dataset,
    pub ood: Option<Dataset>,
    pub state: TrainState,
}

impl RunArtifacts {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut config = load_config(&dir.join(CONFIG_ECHO_FILE))?;
        config.output_dir = dir.to_path_buf();
        let state = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        let (train, test, ood) = load_datasets(&config)?;
        let net = build_network(&config, &train, &test)?;
        if !state.params.same_layout(&net.zero_params()) {
            return Err(Error::Checkpoint(format!(
                "checkpoint in {} does not match its configured model",
                dir.display()
            )));
        }
        Ok(Self {
            config,
            net,
            test,
            ood,
            state,
        })
    }

    pub fn ensemble(&self) -> Result<SnapshotEnsemble> {
        eval_ensemble(&self.config, &self.state)
    }

    pub fn params(&self) -> &NetworkParams {
        &self.state.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny(dir: &Path, kind: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"
seed = 5
output_dir = "{}"

[sampler]
kind = "{kind}"
schedule = {{ form = "constant", rate = 2e-4 }}

[training]
batch_size = 16
epochs = 2

[data.synthetic]
train = 64
test = 32
ood = 16
classes = 3
side = 8

[model]
widths = [2, 3, 8]
kernel = 3

[snapshots]
every = 2

[diagnostics]
stride = 1
tracked = 20
"#,
            dir.display()
        ))
        .unwrap()
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn run_writes_every_output() {
        let tmp = tempfile::tempdir().unwrap();
        let s = run_experiment(&tiny(tmp.path(), "SGLD")).unwrap();
        assert_eq!(s.steps, 8);
        for f in [
            "epochs.csv",
            "mess.csv",
            "losses.csv",
            "timing.csv",
            "chain.csv",
            "predictions.csv",
            "adversarial.csv",
            "ood.csv",
            "ood_summary.csv",
            CHECKPOINT_FILE,
            CONFIG_ECHO_FILE,
        ] {
            assert!(tmp.path().join(f).exists(), "{f}");
        }
        assert_eq!(read(tmp.path(), "epochs.csv").lines().count(), 3);
        assert!(read(tmp.path(), CONFIG_ECHO_FILE).contains("prior_precision"));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        for kind in ["PSGLD", "KSGLD"] {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            run_experiment(&tiny(a.path(), kind)).unwrap();
            let mut t = Trainer::new(tiny(b.path(), kind)).unwrap();
            t.run_steps(3).unwrap();
            t.checkpoint().unwrap();
            drop(t);
            Trainer::resume(tiny(b.path(), kind)).unwrap().finish().unwrap();
            for f in ["epochs.csv", "losses.csv", "chain.csv", "predictions.csv", CHECKPOINT_FILE] {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{kind} {f}");
            }
        }
    }

    #[test]
    fn resume_rejects_other_config() {
        let a = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny(a.path(), "SGD")).unwrap();
        t.run_steps(2).unwrap();
        t.checkpoint().unwrap();
        let mut other = tiny(a.path(), "SGD");
        other.seed = 6;
        assert!(matches!(Trainer::resume(other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn divergence_aborts_with_checkpoint() {
        let a = tempfile::tempdir().unwrap();
        let mut c = tiny(a.path(), "SGD");
        c.sampler.schedule = crate::samplers::Schedule::Constant { rate: 1e300 };
        let mut t = Trainer::new(c).unwrap();
        let err = t.run_steps(8).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
        let saved = read_checkpoint(&a.path().join(CHECKPOINT_FILE)).unwrap();
        assert!(saved.params.all_finite());
        assert_eq!(saved.step, t.state().step);
    }

    #[test]
    fn artifacts_reopen() {
        let a = tempfile::tempdir().unwrap();
        run_experiment(&tiny(a.path(), "FSGD")).unwrap();
        let r = RunArtifacts::open(a.path()).unwrap();
        assert_eq!(r.state.step, 8);
        assert!(!r.ensemble().unwrap().is_empty());
    }
}
