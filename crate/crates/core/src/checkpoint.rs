//! Binary checkpoint format.
//!
//! Layout: magic, format version, precision tag, the config echoed as
//! `key = value` text, the number of completed epochs, then ordered
//! `(name, shape, little-endian payload)` records for every parameter,
//! followed by the optimizer state (step counter plus first/second moments
//! in the same parameter order). Round trips are byte-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelParams};
use crate::optim::{Radam, RadamHyper};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DRNCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<S: Scalar> {
    pub config: TrainConfig,
    /// Epochs completed; training resumes at this epoch index.
    pub epoch: u64,
    pub params: ModelParams<S>,
    pub optimizer: Option<OptimizerSnapshot<S>>,
}

#[derive(Debug, Clone)]
pub struct OptimizerSnapshot<S: Scalar> {
    pub step: u64,
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
}

impl<S: Scalar> OptimizerSnapshot<S> {
    pub fn of(opt: &Radam<S>) -> Self {
        let (first, second) = opt.moments();
        OptimizerSnapshot {
            step: opt.step_count(),
            first: first.to_vec(),
            second: second.to_vec(),
        }
    }

    pub fn into_optimizer(self, shapes: &[Vec<usize>], hyper: RadamHyper) -> Result<Radam<S>> {
        Radam::restore(shapes, hyper, self.step, self.first, self.second)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, t: &Tensor<S>) {
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint {}",
                self.path.display()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    fn tensor<S: Scalar>(&mut self) -> Result<Tensor<S>> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let width = S::byte_width();
        let bytes = self.take(numel * width)?;
        let data: Vec<S> = bytes.chunks_exact(width).map(S::read_le).collect();
        Tensor::new(shape, data)
    }
}

pub fn save<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(S::PRECISION.tag());

    let config_text = ckpt.config.to_kv_string();
    put_u32(&mut out, config_text.len() as u32);
    out.extend_from_slice(config_text.as_bytes());
    put_u64(&mut out, ckpt.epoch);

    let named = ckpt.params.named_tensors();
    put_u32(&mut out, named.len() as u32);
    for (name, tensor) in &named {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_tensor(&mut out, tensor);
    }

    match &ckpt.optimizer {
        Some(opt) => {
            out.push(1);
            put_u64(&mut out, opt.step);
            for t in opt.first.iter().chain(&opt.second) {
                put_tensor(&mut out, t);
            }
        }
        None => out.push(0),
    }

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read only the precision tag, so callers can dispatch the element type.
pub fn peek_precision(path: &Path) -> Result<Precision> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 13];
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    Precision::from_tag(head[12])
        .ok_or_else(|| Error::Checkpoint(format!("bad precision tag in {}", path.display())))
}

pub fn load<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };

    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} in {}",
            path.display()
        )));
    }
    let tag = r.u8()?;
    if tag != S::PRECISION.tag() {
        return Err(Error::Checkpoint(format!(
            "precision mismatch in {}: file is {}, requested {}",
            path.display(),
            Precision::from_tag(tag).map_or("unknown", Precision::name),
            S::PRECISION.name()
        )));
    }

    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| Error::Checkpoint(format!("bad config text in {}", path.display())))?
        .to_string();
    let config = TrainConfig::from_kv_text(&cfg_text)?;
    let epoch = r.u64()?;

    // Rebuild the parameter structure from the config, then fill by name.
    let mut params = init_params::<S>(&config.model_config(), config.seed)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint(format!("bad name in {}", path.display())))?
            .to_string();
        records.push((name, r.tensor::<S>()?));
    }
    {
        let slots = params.tensors_mut();
        if slots.len() != records.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch in {}: file has {}, model needs {}",
                path.display(),
                records.len(),
                slots.len()
            )));
        }
        for ((name, slot), (rec_name, rec)) in slots.into_iter().zip(records) {
            if name != rec_name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch in {}: expected `{name}`, found `{rec_name}`",
                    path.display()
                )));
            }
            if slot.shape() != rec.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}` in {}",
                    path.display()
                )));
            }
            *slot = rec;
        }
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let mut first = Vec::with_capacity(count);
            for _ in 0..count {
                first.push(r.tensor::<S>()?);
            }
            let mut second = Vec::with_capacity(count);
            for _ in 0..count {
                second.push(r.tensor::<S>()?);
            }
            Some(OptimizerSnapshot { step, first, second })
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "bad optimizer flag {other} in {}",
                path.display()
            )))
        }
    };

    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "trailing bytes in {}",
            path.display()
        )));
    }
    Ok(Checkpoint { config, epoch, params, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.c0 = 4;
        cfg.n_res = 1;
        cfg.crop_size = 32;
        cfg
    }

    #[test]
    fn save_load_save_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let cfg = small_config();
        let params = init_params::<f32>(&cfg.model_config(), 7).unwrap();
        let shapes: Vec<Vec<usize>> =
            params.named_tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let opt = Radam::<f32>::new(&shapes, RadamHyper::default());
        let ckpt = Checkpoint {
            config: cfg,
            epoch: 3,
            params,
            optimizer: Some(OptimizerSnapshot::of(&opt)),
        };
        save(&p1, &ckpt).unwrap();
        let loaded = load::<f32>(&p1).unwrap();
        assert_eq!(loaded.epoch, 3);
        save(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_params_match_saved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let cfg = small_config();
        let params = init_params::<f64>(&cfg.model_config(), 11).unwrap();
        let ckpt = Checkpoint { config: cfg, epoch: 0, params, optimizer: None };
        save(&p, &ckpt).unwrap();
        assert_eq!(peek_precision(&p).unwrap(), Precision::F64);
        let loaded = load::<f64>(&p).unwrap();
        for ((n0, t0), (n1, t1)) in
            ckpt.params.named_tensors().iter().zip(loaded.params.named_tensors().iter())
        {
            assert_eq!(n0, n1);
            assert_eq!(t0, t1);
        }
        // wrong element type is rejected
        assert!(load::<f32>(&p).is_err());
    }
}
