//! MMRC checkpoint files.
//!
//! ```text
//! "MMRC"  u16 version = 1
//! u64     training step
//! records                       parameters and batch-norm statistics
//! u64     optimizer step
//! records                       first and second moments
//! u32     config length, then UTF-8 `key = value` text
//! ```
//!
//! `records` is a `u32` count followed by, per record, a `u32`-prefixed UTF-8
//! name, a `u32` rank, `u64` dimensions and the `f64` values. Little-endian
//! throughout; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamStore, RunningStats};
use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MMRC";
pub const VERSION: u16 = 1;

const PARAM: &str = "param:";
const BN_MEAN: &str = "bn_mean:";
const BN_VAR: &str = "bn_var:";
const BN_TRACKED: &str = "bn_tracked:";
const MOMENT1: &str = "m:";
const MOMENT2: &str = "v:";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub stats: Vec<(String, RunningStats)>,
    pub opt_step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Resolved run configuration text.
    pub config: String,
}

impl Checkpoint {
    pub fn capture(step: u64, store: &ParamStore, opt: &AdamW, config: String) -> Self {
        Self {
            step,
            params: store
                .params()
                .iter()
                .map(|p| (p.name.clone(), (*p.value).clone()))
                .collect(),
            stats: store.all_stats().to_vec(),
            opt_step: opt.step,
            m: opt.m.clone(),
            v: opt.v.clone(),
            config,
        }
    }

    /// Copy values into a store and optimizer built from the same config.
    pub fn restore(&self, store: &mut ParamStore, opt: &mut AdamW) -> Result<()> {
        if self.params.len() != store.len() || self.stats.len() != store.all_stats().len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters and {} norm layers, model has {} and {}",
                self.params.len(),
                self.stats.len(),
                store.len(),
                store.all_stats().len()
            )));
        }
        for (id, (name, value)) in store.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            if store.get(id).name != *name {
                return Err(Error::Config(format!(
                    "checkpoint parameter `{name}` where the model expects `{}`",
                    store.get(id).name
                )));
            }
            store.set_value(id, value.clone())?;
        }
        for ((name, slot), (want, stats)) in store.all_stats_mut().iter_mut().zip(&self.stats) {
            if name != want || slot.channels() != stats.channels() {
                return Err(Error::Config(format!("checkpoint norm layer `{want}` does not match `{name}`")));
            }
            *slot = stats.clone();
        }
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            if m.shape() != opt.m[i].shape() || v.shape() != opt.v[i].shape() {
                return Err(Error::shape("checkpoint moments", opt.m[i].shape(), m.shape()));
            }
        }
        if self.m.len() != opt.m.len() || self.v.len() != opt.v.len() {
            return Err(Error::Config("checkpoint moments do not match the parameters".into()));
        }
        opt.step = self.opt_step;
        opt.m = self.m.clone();
        opt.v = self.v.clone();
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(self.step);
        let mut records: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (format!("{PARAM}{n}"), t.clone()))
            .collect();
        for (n, s) in &self.stats {
            let c = s.channels();
            records.push((format!("{BN_MEAN}{n}"), Tensor::from_parts(vec![c], s.mean.clone())));
            records.push((format!("{BN_VAR}{n}"), Tensor::from_parts(vec![c], s.var.clone())));
            records.push((format!("{BN_TRACKED}{n}"), Tensor::from_parts(vec![1], vec![s.tracked as f64])));
        }
        w.records(&records);
        w.u64(self.opt_step);
        let names = self.params.iter().map(|(n, _)| n);
        let moments: Vec<(String, Tensor)> = names
            .clone()
            .zip(&self.m)
            .map(|(n, t)| (format!("{MOMENT1}{n}"), t.clone()))
            .chain(names.zip(&self.v).map(|(n, t)| (format!("{MOMENT2}{n}"), t.clone())))
            .collect();
        w.records(&moments);
        w.string(&self.config);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing MMRC magic".into()));
        }
        let mut r = Reader { bytes, at: 4 };
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported MMRC version {version}")));
        }
        let step = r.u64()?;
        let mut params = Vec::new();
        let mut stats: Vec<(String, RunningStats)> = Vec::new();
        for (name, t) in r.records()? {
            if let Some(n) = name.strip_prefix(PARAM) {
                params.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix(BN_MEAN) {
                stats.push((n.to_string(), RunningStats { mean: t.into_data(), var: Vec::new(), tracked: 0 }));
            } else if let Some(n) = name.strip_prefix(BN_VAR) {
                match stats.last_mut() {
                    Some((last, s)) if last == n && t.len() == s.mean.len() => s.var = t.into_data(),
                    _ => return Err(Error::Corrupt(format!("stray record `{name}`"))),
                }
            } else if let Some(n) = name.strip_prefix(BN_TRACKED) {
                match stats.last_mut() {
                    Some((last, s)) if last == n && t.len() == 1 => s.tracked = t.data()[0] as u64,
                    _ => return Err(Error::Corrupt(format!("stray record `{name}`"))),
                }
            } else {
                return Err(Error::Corrupt(format!("unknown record `{name}`")));
            }
        }
        if stats.iter().any(|(_, s)| s.var.len() != s.mean.len()) {
            return Err(Error::Corrupt("incomplete norm statistics".into()));
        }
        let opt_step = r.u64()?;
        let moments = r.records()?;
        if moments.len() != 2 * params.len() {
            return Err(Error::Corrupt(format!(
                "{} moment records for {} parameters",
                moments.len(),
                params.len()
            )));
        }
        let (first, second) = moments.split_at(params.len());
        for (i, (name, _)) in params.iter().enumerate() {
            if first[i].0 != format!("{MOMENT1}{name}") || second[i].0 != format!("{MOMENT2}{name}") {
                return Err(Error::Corrupt(format!("moment records out of order at `{name}`")));
            }
        }
        let config = r.string()?;
        if r.at != bytes.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            step,
            params,
            stats,
            opt_step,
            m: first.iter().map(|(_, t)| t.clone()).collect(),
            v: second.iter().map(|(_, t)| t.clone()).collect(),
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn records(&mut self, records: &[(String, Tensor)]) {
        self.u32(records.len());
        for (name, t) in records {
            self.string(name);
            self.u32(t.rank());
            for &d in t.shape() {
                self.u64(d as u64);
            }
            for &v in t.data() {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }

    fn records(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
                .ok_or_else(|| Error::Corrupt(format!("record `{name}` has impossible shape {shape:?}")))?;
            let data = self
                .take(8 * n)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            out.push((name, Tensor::from_parts(shape, data)));
        }
        Ok(out)
    }
}
