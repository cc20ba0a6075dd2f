//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic `CPLCKPT\0`, `u32` version, then length-prefixed UTF-8
//! training config and dictionary descriptor, `u64` step and epoch, the
//! named parameter tensors, and the Adam moments in parameter order. Tensors
//! are `u64` rows, `u64` cols, then `f64` values row-major. The dictionary
//! codes themselves are regenerated from the descriptor.

use std::path::Path;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::projector::ProjectorParams;
use crate::tensor::Tensor;
use crate::trainer::adam::AdamState;
use crate::trainer::backbone::Backbone;
use crate::trainer::config::TrainConfig;
use crate::trainer::Trainer;

pub const MAGIC: &[u8; 8] = b"CPLCKPT\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.rows() as u64);
        self.u64(t.cols() as u64);
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated at byte {} (wanted {k} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v}")))
    }
    fn str(&mut self) -> Result<String> {
        let k = self.len()?;
        String::from_utf8(self.take(k)?.to_vec())
            .map_err(|_| Error::Format("string field is not UTF-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let (r, c) = (self.len()?, self.len()?);
        let count = r
            .checked_mul(c)
            .filter(|&n| n <= self.buf.len() / 8)
            .ok_or_else(|| Error::Format(format!("implausible tensor shape {r}x{c}")))?;
        let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(r, c, data)
    }
}

pub fn to_bytes(t: &Trainer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.str(&t.config.to_text());
    w.str(&t.dictionary.descriptor());
    w.u64(t.step);
    w.u64(t.epoch);
    let params = t.parameters();
    w.u64(params.len() as u64);
    for (name, p) in t.parameter_names().iter().zip(&params) {
        w.str(name);
        w.tensor(p);
    }
    w.u64(t.adam.t);
    for m in &t.adam.m {
        w.tensor(m);
    }
    for v in &t.adam.v {
        w.tensor(v);
    }
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<Trainer> {
    if buf.len() < 12 || &buf[..8] != MAGIC {
        return Err(Error::Format("missing CPLCKPT magic header".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut r = Reader { buf, pos: 12 };
    let config = TrainConfig::from_text(&r.str()?, "checkpoint config")?;
    let dictionary: Dictionary = r.str()?.parse()?;
    let (step, epoch) = (r.u64()?, r.u64()?);
    let count = r.len()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        named.push((r.str()?, r.tensor()?));
    }
    let t_adam = r.u64()?;
    let m = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    let v = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    if count < 6 || count % 2 != 0 {
        return Err(Error::Format(format!("unexpected parameter count {count}")));
    }
    let layers = (count - 4) / 2;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut tensors = named.into_iter();
    for l in 0..layers {
        let (wn, w) = tensors.next().unwrap();
        let (bn, b) = tensors.next().unwrap();
        if wn != format!("backbone.weight{l}") || bn != format!("backbone.bias{l}") {
            return Err(Error::Format(format!("unexpected tensor names {wn}, {bn}")));
        }
        weights.push(w);
        biases.push(b);
    }
    let mut widths = vec![weights[0].rows()];
    widths.extend(weights.iter().map(Tensor::cols));
    let backbone = Backbone {
        widths,
        weights,
        biases,
    };
    let mut proj = |name: &str| -> Result<Tensor> {
        let (n, t) = tensors.next().unwrap();
        if n != format!("projector.{name}") {
            return Err(Error::Format(format!("expected projector.{name}, found {n}")));
        }
        Ok(t)
    };
    let projector = ProjectorParams {
        linear_weight: proj("linear_weight")?,
        linear_bias: proj("linear_bias")?,
        bn_gamma: proj("bn_gamma")?,
        bn_beta: proj("bn_beta")?,
        activation: config.activation,
    };
    let mut adam = AdamState::new(std::iter::empty());
    adam.m = m;
    adam.v = v;
    adam.t = t_adam;
    let trainer = Trainer::from_parts(config, backbone, projector, dictionary, adam, step, epoch)?;
    let shapes_ok = trainer
        .parameters()
        .iter()
        .zip(trainer.adam.m.iter().zip(&trainer.adam.v))
        .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
    if !shapes_ok || trainer.backbone.output_dim() != trainer.config.f {
        return Err(Error::Format("tensor shapes do not match the stored config".into()));
    }
    Ok(trainer)
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
