//! Binary checkpoint: `"MDPH"`, u32 version, u64 config length, config
//! JSON, u32 record count, then records of
//! `(u32 name length, name, u8 dtype, u32 rank, u64 dims.., LE values)`.
//!
//! Besides parameters the records hold optimizer moments, renorm running
//! statistics and the step counters. Everything is little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use mdphd_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, Moments};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::hybrid::{HybridConfig, HybridModel};

pub const MAGIC: &[u8; 4] = b"MDPH";
pub const VERSION: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const RENORM_MEAN: &str = "renorm.mean/";
const RENORM_VAR: &str = "renorm.var/";
const STEP: &str = "state/step";
const ADAM_T: &str = "state/adam_t";

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Values {
    fn tag(&self) -> u8 {
        match self {
            Self::F64(_) => 0,
            Self::U64(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F64(v) => v.len(),
            Self::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Values,
}

impl Record {
    fn tensor(name: String, t: &Tensor) -> Self {
        Self {
            name,
            dims: t.shape().to_vec(),
            values: Values::F64(t.data().to_vec()),
        }
    }

    fn vector(name: String, v: &[f64]) -> Self {
        Self {
            name,
            dims: vec![v.len()],
            values: Values::F64(v.to_vec()),
        }
    }

    fn counter(name: &str, v: u64) -> Self {
        Self {
            name: name.into(),
            dims: vec![1],
            values: Values::U64(vec![v]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub fingerprint: String,
    pub model: HybridConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub records: Vec<Record>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            corrupt(format!(
                "file truncated at byte {} (needed {n} more)",
                self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }
}

impl Checkpoint {
    pub fn capture(model: &HybridModel, adam: &Adam, train: &TrainConfig) -> Self {
        let config = model.config();
        let mut records = Vec::new();
        for net in model.networks() {
            for p in net.params().iter() {
                records.push(Record::tensor(format!("{PARAM}{}", p.name()), &p.value));
            }
        }
        for (name, mo) in &adam.moments {
            records.push(Record::tensor(format!("{ADAM_M}{name}"), &mo.m));
            records.push(Record::tensor(format!("{ADAM_V}{name}"), &mo.v));
        }
        for net in model.networks() {
            for r in net.renorm_states() {
                records.push(Record::vector(
                    format!("{RENORM_MEAN}{}", r.name),
                    &r.state.running_mean,
                ));
                records.push(Record::vector(
                    format!("{RENORM_VAR}{}", r.name),
                    &r.state.running_var,
                ));
            }
        }
        records.push(Record::counter(STEP, model.step));
        records.push(Record::counter(ADAM_T, adam.t));
        Self {
            meta: CheckpointMeta {
                fingerprint: config.fingerprint(),
                model: config,
                train: train.clone(),
            },
            records,
        }
    }

    pub fn step(&self) -> Result<u64> {
        self.counter(STEP)
    }

    fn counter(&self, name: &str) -> Result<u64> {
        match self
            .records
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.values)
        {
            Some(Values::U64(v)) if v.len() == 1 => Ok(v[0]),
            _ => Err(corrupt(format!("missing counter `{name}`"))),
        }
    }

    fn tensors(&self) -> Result<BTreeMap<&str, Tensor>> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Values::F64(v) = &r.values {
                let t = Tensor::new(r.dims.clone(), v.clone())
                    .map_err(|e| corrupt(format!("record `{}`: {e}", r.name)))?;
                if out.insert(r.name.as_str(), t).is_some() {
                    return Err(corrupt(format!("duplicate record `{}`", r.name)));
                }
            }
        }
        Ok(out)
    }

    /// Fresh model and optimizer holding the checkpointed state.
    pub fn restore(&self) -> Result<(HybridModel, Adam)> {
        let mut model = HybridModel::new(&self.meta.model, 0)?;
        let mut adam = Adam::new(self.meta.train.adam);
        self.apply(&mut model, &mut adam)?;
        Ok((model, adam))
    }

    /// Loads the state into `model` and `adam`. Everything is validated
    /// before anything is written, so on error both are left untouched.
    pub fn apply(&self, model: &mut HybridModel, adam: &mut Adam) -> Result<()> {
        let own = model.config().fingerprint();
        if own != self.meta.fingerprint {
            return Err(corrupt(format!(
                "config fingerprint mismatch: checkpoint {} vs model {own}",
                self.meta.fingerprint
            )));
        }
        let mut tensors = self.tensors()?;
        let mut take = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .remove(key.as_str())
                .ok_or_else(|| corrupt(format!("missing record `{key}`")))?;
            if t.shape() != shape {
                return Err(corrupt(format!(
                    "record `{key}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };

        let mut params = Vec::new();
        let mut moments = BTreeMap::new();
        let mut renorm = Vec::new();
        for net in model.networks() {
            for p in net.params().iter() {
                params.push(take(format!("{PARAM}{}", p.name()), p.value.shape())?);
            }
            for r in net.renorm_states() {
                let c = [r.state.channels()];
                renorm.push((
                    take(format!("{RENORM_MEAN}{}", r.name), &c)?,
                    take(format!("{RENORM_VAR}{}", r.name), &c)?,
                ));
            }
        }
        for net in model.networks() {
            for p in net.params().iter() {
                let key = format!("{ADAM_M}{}", p.name());
                if self.records.iter().any(|r| r.name == key) {
                    let m = take(key, p.value.shape())?;
                    let v = take(format!("{ADAM_V}{}", p.name()), p.value.shape())?;
                    moments.insert(p.name().to_string(), Moments { m, v });
                }
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(corrupt(format!("unexpected record `{extra}`")));
        }
        let (step, t) = (self.step()?, self.counter(ADAM_T)?);

        let mut params = params.into_iter();
        let mut renorm = renorm.into_iter();
        for net in model.networks_mut() {
            for p in net.params_mut().iter_mut() {
                p.value = params.next().expect("counted above");
                p.grad = p.value.zeros_like();
            }
            for r in net.renorm_states_mut() {
                let (mean, var) = renorm.next().expect("counted above");
                r.state.running_mean = mean.into_data();
                r.state.running_var = var.into_data();
            }
        }
        model.step = step;
        adam.config = self.meta.train.adam;
        adam.t = t;
        adam.moments = moments;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.meta).expect("checkpoint metadata serializes");
        let mut out = Vec::with_capacity(
            64 + config.len()
                + self
                    .records
                    .iter()
                    .map(|r| 8 * r.values.len() + 64)
                    .sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.values.tag());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.values {
                Values::F64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Values::U64(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let n = r.len()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?)
            .map_err(|e| corrupt(format!("bad config blob: {e}")))?;
        let count = r.u32()?;
        let mut records = Vec::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| corrupt("record name is not UTF-8"))?;
            let tag = r.u8()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt("dims overflow"))?;
            let bytes = r.take(len.checked_mul(8).ok_or_else(|| corrupt("dims overflow"))?)?;
            let words = bytes
                .chunks_exact(8)
                .map(|c| c.try_into().expect("8 bytes"));
            let values = match tag {
                0 => Values::F64(words.map(f64::from_le_bytes).collect()),
                1 => Values::U64(words.map(u64::from_le_bytes).collect()),
                t => {
                    return Err(corrupt(format!(
                        "record `{name}` has unknown dtype tag {t}"
                    )))
                }
            };
            records.push(Record { name, dims, values });
        }
        if r.pos != buf.len() {
            return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { meta, records })
    }

    /// Writes to a temporary file first, so an existing checkpoint survives a failed write.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let ctx = || format!("writing checkpoint {}", path.display());
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(ctx(), e))?;
        f.sync_all().map_err(|e| Error::io(ctx(), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
