//! Binary model and checkpoint files.
//!
//! All integers are little-endian `u64` unless noted, all reals
//! little-endian IEEE-754 `f64`, so a save/load cycle is bit-exact.
//!
//! ```text
//! magic      8 bytes  "DMFMODEL"
//! version    u32      1
//! kind       u8       0 = model, 1 = checkpoint
//! snapshot            (see below)
//! -- checkpoint only --
//! epochs_done, best_epoch (u8 flag + u64), best_val (u8 flag + f64),
//! since_best, weight optimizer, boundary optimizer,
//! best snapshot (u8 flag + snapshot)
//! -- always --
//! checksum   u64      FNV-1a of every preceding byte
//!
//! snapshot:  alpha, beta, row branch, column branch,
//!            u8 flag + quantizer (d, levels[d], boundaries[d+1], lambda)
//! branch:    input_dim, n_hidden, hidden[n_hidden], latent_dim,
//!            u8 activation (0 selu, 1 tanh, 2 relu, 3 linear),
//!            then per layer weight[fan_in * fan_out] (row-major), bias[fan_out]
//! optimizer: lr, beta1, beta2, eps, steps, n_buffers,
//!            per buffer len, m[len], v[len]
//! ```

use std::path::Path;

use dmf_core::model::{Branch, Dense};
use dmf_core::optim::Adam;
use dmf_core::train::{Snapshot, TrainerState};
use dmf_core::{Activation, BranchConfig, DmfModel, Quantizer, Scaling, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DMFMODEL";
pub const VERSION: u32 = 1;

const KIND_MODEL: u8 = 0;
const KIND_CHECKPOINT: u8 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
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

    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }

    fn header(&mut self, kind: u8) {
        self.0.extend_from_slice(MAGIC);
        self.0.extend_from_slice(&VERSION.to_le_bytes());
        self.u8(kind);
    }

    fn branch(&mut self, b: &Branch) {
        let c = b.config();
        self.usize(c.input_dim);
        self.usize(c.hidden_dims.len());
        c.hidden_dims.iter().for_each(|&h| self.usize(h));
        self.usize(c.latent_dim);
        self.u8(match c.activation {
            Activation::Selu => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Linear => 3,
        });
        for layer in b.layers() {
            self.f64s(layer.weight().values());
            self.f64s(layer.bias().values());
        }
    }

    fn snapshot(&mut self, s: &Snapshot) {
        let sc = s.model.scaling();
        self.f64(sc.alpha());
        self.f64(sc.beta());
        self.branch(s.model.row_branch());
        self.branch(s.model.col_branch());
        match &s.quantizer {
            None => self.u8(0),
            Some(q) => {
                self.u8(1);
                self.usize(q.num_levels());
                self.f64s(q.levels());
                self.f64s(q.boundaries());
                self.f64(q.lambda());
            }
        }
    }

    fn adam(&mut self, a: &Adam) {
        self.f64(a.lr);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.u64(a.steps());
        self.usize(a.first_moments().len());
        for (m, v) in a.first_moments().iter().zip(a.second_moments()) {
            self.usize(m.len());
            self.f64s(m);
            self.f64s(v);
        }
    }

    fn finish(mut self) -> Vec<u8> {
        let c = checksum(&self.0);
        self.u64(c);
        self.0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.path, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated model file at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count, bounded by the bytes left so corrupt sizes fail cleanly.
    fn len(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(item_bytes.max(1) as u64) > left {
            return Err(self.err(format!("length {} exceeds file size", n)));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(self.err(format!("truncated model file at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.err(format!("bad flag byte {}", v))),
        }
    }

    fn branch(&mut self) -> Result<Branch> {
        let input_dim = self.len(8)?;
        let n_hidden = self.len(8)?;
        let hidden = (0..n_hidden).map(|_| self.len(8)).collect::<Result<Vec<_>>>()?;
        let latent_dim = self.len(8)?;
        let activation = match self.u8()? {
            0 => Activation::Selu,
            1 => Activation::Tanh,
            2 => Activation::Relu,
            3 => Activation::Linear,
            v => return Err(self.err(format!("unknown activation code {}", v))),
        };
        let config = BranchConfig::new(input_dim, hidden, latent_dim, activation);
        config.validate()?;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in config.layer_dims() {
            let w = self.f64s(fan_in.saturating_mul(fan_out))?;
            let b = self.f64s(fan_out)?;
            layers.push(Dense::new(Tensor::matrix(fan_in, fan_out, w)?, Tensor::vector(b)?)?);
        }
        Ok(Branch::from_parts(config, layers)?)
    }

    fn snapshot(&mut self) -> Result<Snapshot> {
        let scaling = Scaling::new(self.f64()?, self.f64()?)?;
        let row = self.branch()?;
        let col = self.branch()?;
        let model = DmfModel::from_parts(row, col, scaling)?;
        let quantizer = if self.flag()? {
            let d = self.len(16)?;
            let levels = self.f64s(d)?;
            let boundaries = self.f64s(d + 1)?;
            let lambda = self.f64()?;
            Some(Quantizer::with_boundaries(levels, boundaries, lambda)?)
        } else {
            None
        };
        Ok(Snapshot { model, quantizer })
    }

    fn adam(&mut self) -> Result<Adam> {
        let lr = self.f64()?;
        let (beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?);
        let steps = self.u64()?;
        let n = self.len(8)?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let len = self.len(16)?;
            m.push(self.f64s(len)?);
            v.push(self.f64s(len)?);
        }
        let mut a = Adam::from_state(lr, steps, m, v)?;
        a.beta1 = beta1;
        a.beta2 = beta2;
        a.eps = eps;
        Ok(a)
    }

    fn opt_u64(&mut self) -> Result<Option<u64>> {
        Ok(if self.flag()? { Some(self.u64()?) } else { None })
    }

    fn opt_f64(&mut self) -> Result<Option<f64>> {
        Ok(if self.flag()? { Some(self.f64()?) } else { None })
    }
}

fn open<'a>(bytes: &'a [u8], path: &'a Path, expect: u8) -> Result<Reader<'a>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, "not a dmf model file (bad magic)"));
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::format(path, "truncated model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported model file version {} (expected {})", version, VERSION)));
    }
    if bytes.len() < 13 + 8 {
        return Err(Error::format(path, "truncated model file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::format(path, "checksum mismatch; file is truncated or corrupt"));
    }
    let kind = body[12];
    if kind != expect {
        let name = |k| if k == KIND_MODEL { "model" } else { "checkpoint" };
        return Err(Error::format(path, format!("expected a {} file, found a {}", name(expect), name(kind))));
    }
    Ok(Reader { bytes: body, pos: 13, path })
}

fn close(r: Reader<'_>) -> Result<()> {
    if r.pos != r.bytes.len() {
        return Err(r.err(format!("{} trailing bytes", r.bytes.len() - r.pos)));
    }
    Ok(())
}

pub fn encode_model(snapshot: &Snapshot) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(KIND_MODEL);
    w.snapshot(snapshot);
    w.finish()
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<Snapshot> {
    let mut r = open(bytes, path, KIND_MODEL)?;
    let s = r.snapshot()?;
    close(r)?;
    Ok(s)
}

pub fn encode_checkpoint(state: &TrainerState) -> Vec<u8> {
    let mut w = Writer::default();
    w.header(KIND_CHECKPOINT);
    w.snapshot(&state.current);
    w.usize(state.epochs_done);
    match state.best_epoch {
        Some(e) => {
            w.u8(1);
            w.usize(e);
        }
        None => w.u8(0),
    }
    match state.best_val {
        Some(v) => {
            w.u8(1);
            w.f64(v);
        }
        None => w.u8(0),
    }
    w.usize(state.since_best);
    w.adam(&state.weight_opt);
    w.adam(&state.boundary_opt);
    match &state.best {
        Some(b) => {
            w.u8(1);
            w.snapshot(b);
        }
        None => w.u8(0),
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainerState> {
    let mut r = open(bytes, path, KIND_CHECKPOINT)?;
    let current = r.snapshot()?;
    let epochs_done = r.u64()? as usize;
    let best_epoch = r.opt_u64()?.map(|e| e as usize);
    let best_val = r.opt_f64()?;
    let since_best = r.u64()? as usize;
    let weight_opt = r.adam()?;
    let boundary_opt = r.adam()?;
    let best = if r.flag()? { Some(r.snapshot()?) } else { None };
    close(r)?;
    Ok(TrainerState { current, best, weight_opt, boundary_opt, epochs_done, best_epoch, best_val, since_best })
}

/// Writes through a temporary file so a crash never leaves half a model.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_model(path: &Path, snapshot: &Snapshot) -> Result<()> {
    write_atomic(path, &encode_model(snapshot))
}

pub fn load_model(path: &Path) -> Result<Snapshot> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn save_checkpoint(path: &Path, state: &TrainerState) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
