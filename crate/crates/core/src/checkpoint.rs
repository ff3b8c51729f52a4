//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u32` section count, then sections of
//! `[tag: 4 bytes][len: u64][payload][checksum: 8 bytes]` where the checksum is
//! the first 8 bytes of SHA-256 over the payload. Integers and floats are
//! little-endian; matrices are stored column-major after their dimensions.

use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::diagnostics::Chain;
use crate::error::{Error, Result};
use crate::eval::Snapshot;
use crate::kfac::{FactorPair, KfacConfig, KfacState, LayerFactor};
use crate::net::{NetworkParams, ParamBlock};
use crate::samplers::{RmspropState, SamplerKind};

pub const MAGIC: &[u8; 8] = b"LGVNCKPT";
pub const VERSION: u32 = 1;

/// Preconditioner state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplerState {
    None,
    Rmsprop(RmspropState),
    Kfac(KfacState),
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// NaN before the first snapshot.
    pub ensemble_accuracy: f64,
    pub rate: f64,
    /// Recorded chain length after burn-in.
    pub chain_len: u64,
    /// NaN when the chain is too short.
    pub mess: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub kind: SamplerKind,
    pub seed: u64,
    /// SHA-256 of the effective configuration.
    pub config_digest: [u8; 32],
    pub step: u64,
    pub params: NetworkParams,
    pub sampler: SamplerState,
    pub epoch_loss_sum: f64,
    pub epoch_loss_count: u64,
    pub chain: Chain,
    pub snapshots: Vec<Snapshot>,
    pub epochs: Vec<EpochRow>,
    /// `(step, minibatch loss)` for every step taken.
    pub losses: Vec<(u64, f64)>,
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn checksum(payload: &[u8]) -> [u8; 8] {
    let d = Sha256::digest(payload);
    d[..8].try_into().expect("8 bytes")
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        m.as_slice().iter().for_each(|&x| self.f64(x));
    }
    fn params(&mut self, p: &NetworkParams) {
        self.usize(p.blocks().len());
        for b in p.blocks() {
            self.usize(b.outputs);
            self.usize(b.fan_in);
            b.weight.iter().for_each(|&x| self.f64(x));
            b.bias.iter().for_each(|&x| self.f64(x));
        }
    }
    fn pairs(&mut self, p: &Option<Vec<FactorPair>>) {
        match p {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                self.usize(v.len());
                for f in v {
                    self.matrix(&f.a);
                    self.matrix(&f.g);
                }
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Self {
            buf,
            pos: 0,
            section,
        }
    }
    fn err(&self, what: &str) -> Error {
        Error::Checkpoint(format!("{} section at byte {}: {what}", self.section, self.pos))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err("unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A length, bounded by the bytes left so corrupt counts cannot allocate wildly.
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size.max(1) as u64) > left {
            return Err(self.err(&format!("length {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64_n(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.len(0)?;
        let c = self.len(0)?;
        let n = r.checked_mul(c).ok_or_else(|| self.err("matrix too large"))?;
        if n * 8 > self.buf.len() - self.pos {
            return Err(self.err("matrix exceeds remaining data"));
        }
        Ok(DMatrix::from_vec(r, c, self.f64_n(n)?))
    }
    fn params(&mut self) -> Result<NetworkParams> {
        let blocks = self.len(16)?;
        let mut v = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            let outputs = self.len(0)?;
            let fan_in = self.len(0)?;
            outputs
                .checked_mul(fan_in + 1)
                .filter(|n| n * 8 <= self.buf.len() - self.pos)
                .ok_or_else(|| self.err("parameter block exceeds remaining data"))?;
            let weight = self.f64_n(outputs * fan_in)?;
            let bias = self.f64_n(outputs)?;
            v.push(ParamBlock {
                outputs,
                fan_in,
                weight,
                bias,
            });
        }
        NetworkParams::from_blocks(v).map_err(|e| self.err(&e.to_string()))
    }
    fn pairs(&mut self) -> Result<Option<Vec<FactorPair>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let n = self.len(32)?;
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    let a = self.matrix()?;
                    let g = self.matrix()?;
                    v.push(FactorPair { a, g });
                }
                Ok(Some(v))
            }
            t => Err(self.err(&format!("bad option tag {t}"))),
        }
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn kind_code(kind: SamplerKind) -> u8 {
    SamplerKind::ALL
        .iter()
        .position(|&k| k == kind)
        .expect("listed kind") as u8
}

fn encode_meta(s: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(kind_code(s.kind));
    w.u64(s.seed);
    w.0.extend_from_slice(&s.config_digest);
    w.u64(s.step);
    w.f64(s.epoch_loss_sum);
    w.u64(s.epoch_loss_count);
    w.0
}

fn encode_sampler(s: &SamplerState) -> Vec<u8> {
    let mut w = Writer::default();
    match s {
        SamplerState::None => w.u8(0),
        SamplerState::Rmsprop(r) => {
            w.u8(1);
            w.f64(r.alpha);
            w.f64(r.eps);
            w.params(&r.v);
        }
        SamplerState::Kfac(k) => {
            w.u8(2);
            w.f64(k.config.damping);
            w.f64(k.config.decay);
            w.u64(k.config.cadence);
            w.usize(k.factors.len());
            for f in &k.factors {
                w.matrix(&f.a);
                w.matrix(&f.g);
                w.u64(f.samples);
            }
            w.pairs(&k.inverses);
            w.pairs(&k.roots);
            w.u64(k.updates);
            w.u64(k.inverted_at);
            w.u64(k.rooted_at);
        }
    }
    w.0
}

fn encode_chain(c: &Chain) -> Vec<u8> {
    let mut w = Writer::default();
    w.u64(c.stride);
    w.usize(c.dimension);
    w.usize(c.indices.len());
    c.indices.iter().for_each(|&i| w.usize(i));
    w.usize(c.steps.len());
    c.steps.iter().for_each(|&s| w.u64(s));
    for s in &c.series {
        s.iter().for_each(|&x| w.f64(x));
    }
    w.0
}

fn encode_snapshots(s: &[Snapshot]) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(s.len());
    for snap in s {
        w.u64(snap.step);
        w.f64(snap.rate);
        w.params(&snap.params);
    }
    w.0
}

fn encode_logs(s: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.usize(s.epochs.len());
    for r in &s.epochs {
        w.u64(r.epoch);
        w.u64(r.step);
        w.f64(r.train_loss);
        w.f64(r.test_accuracy);
        w.f64(r.ensemble_accuracy);
        w.f64(r.rate);
        w.u64(r.chain_len);
        w.f64(r.mess);
    }
    w.usize(s.losses.len());
    for &(step, loss) in &s.losses {
        w.u64(step);
        w.f64(loss);
    }
    w.0
}

const SECTIONS: [&[u8; 4]; 6] = [b"META", b"PARM", b"SMPL", b"CHAN", b"SNAP", b"LOGS"];

pub fn save_checkpoint(state: &TrainState) -> Vec<u8> {
    let payloads = [
        encode_meta(state),
        {
            let mut w = Writer::default();
            w.params(&state.params);
            w.0
        },
        encode_sampler(&state.sampler),
        encode_chain(&state.chain),
        encode_snapshots(&state.snapshots),
        encode_logs(state),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(SECTIONS.len() as u32).to_le_bytes());
    for (tag, p) in SECTIONS.iter().zip(&payloads) {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(p);
        out.extend_from_slice(&checksum(p));
    }
    out
}

fn split_sections(bytes: &[u8]) -> Result<Vec<&[u8]>> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if count != SECTIONS.len() {
        return Err(bad(format!("expected {} sections, found {count}", SECTIONS.len())));
    }
    let mut pos = 16;
    let mut out = Vec::with_capacity(count);
    for tag in SECTIONS {
        let name = String::from_utf8_lossy(tag);
        if bytes.len() < pos + 12 {
            return Err(bad(format!("truncated before section {name}")));
        }
        if &bytes[pos..pos + 4] != tag {
            return Err(bad(format!("expected section {name} at byte {pos}")));
        }
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().expect("8 bytes"));
        pos += 12;
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| pos.checked_add(l))
            .and_then(|e| e.checked_add(8))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("section {name} truncated")))?;
        let payload = &bytes[pos..end - 8];
        if checksum(payload) != bytes[end - 8..end] {
            return Err(bad(format!("checksum mismatch in section {name}")));
        }
        out.push(payload);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let s = split_sections(bytes)?;

    let mut r = Reader::new(s[0], "META");
    let code = r.u8()? as usize;
    let kind = *SamplerKind::ALL
        .get(code)
        .ok_or_else(|| r.err(&format!("unknown sampler code {code}")))?;
    let seed = r.u64()?;
    let config_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let step = r.u64()?;
    let epoch_loss_sum = r.f64()?;
    let epoch_loss_count = r.u64()?;
    r.finish()?;

    let mut r = Reader::new(s[1], "PARM");
    let params = r.params()?;
    r.finish()?;

    let mut r = Reader::new(s[2], "SMPL");
    let sampler = match r.u8()? {
        0 => SamplerState::None,
        1 => {
            let alpha = r.f64()?;
            let eps = r.f64()?;
            let v = r.params()?;
            SamplerState::Rmsprop(RmspropState { v, alpha, eps })
        }
        2 => {
            let config = KfacConfig {
                damping: r.f64()?,
                decay: r.f64()?,
                cadence: r.u64()?,
            };
            let n = r.len(32)?;
            let mut factors = Vec::with_capacity(n);
            for _ in 0..n {
                let a = r.matrix()?;
                let g = r.matrix()?;
                let samples = r.u64()?;
                factors.push(LayerFactor { a, g, samples });
            }
            let inverses = r.pairs()?;
            let roots = r.pairs()?;
            KfacState {
                config,
                factors,
                inverses,
                roots,
                updates: r.u64()?,
                inverted_at: r.u64()?,
                rooted_at: r.u64()?,
            }
            .into()
        }
        t => return Err(r.err(&format!("unknown sampler state tag {t}"))),
    };
    r.finish()?;

    let mut r = Reader::new(s[3], "CHAN");
    let stride = r.u64()?;
    let dimension = usize::try_from(r.u64()?).map_err(|_| r.err("dimension overflows usize"))?;
    let k = r.len(8)?;
    let indices = (0..k).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    if indices.iter().any(|&i| i >= dimension) {
        return Err(r.err("tracked index outside parameter dimension"));
    }
    let m = r.len(8)?;
    let steps = (0..m).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    if k.saturating_mul(m).saturating_mul(8) != r.buf.len() - r.pos {
        return Err(r.err("chain series size mismatch"));
    }
    let series = (0..k).map(|_| r.f64_n(m)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let chain = Chain {
        indices,
        steps,
        series,
        stride,
        dimension,
    };

    let mut r = Reader::new(s[4], "SNAP");
    let n = r.len(16)?;
    let mut snapshots = Vec::with_capacity(n);
    for _ in 0..n {
        let step = r.u64()?;
        let rate = r.f64()?;
        let params = r.params()?;
        snapshots.push(Snapshot { params, step, rate });
    }
    r.finish()?;

    let mut r = Reader::new(s[5], "LOGS");
    let n = r.len(64)?;
    let mut epochs = Vec::with_capacity(n);
    for _ in 0..n {
        epochs.push(EpochRow {
            epoch: r.u64()?,
            step: r.u64()?,
            train_loss: r.f64()?,
            test_accuracy: r.f64()?,
            ensemble_accuracy: r.f64()?,
            rate: r.f64()?,
            chain_len: r.u64()?,
            mess: r.f64()?,
        });
    }
    let n = r.len(16)?;
    let losses = (0..n)
        .map(|_| Ok((r.u64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;

    Ok(TrainState {
        kind,
        seed,
        config_digest,
        step,
        params,
        sampler,
        epoch_loss_sum,
        epoch_loss_count,
        chain,
        snapshots,
        epochs,
        losses,
    })
}

impl From<KfacState> for SamplerState {
    fn from(k: KfacState) -> Self {
        SamplerState::Kfac(k)
    }
}

/// Writes via a temporary file and rename so a crash never leaves a partial checkpoint.
pub fn write_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, save_checkpoint(state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    load_checkpoint(&std::fs::read(path)?)
}
