//! Versioned binary checkpoint container.
//!
//! Layout (little-endian): `JDN1`, version u32, parameter count u32, parameter
//! records, optimizer record count u32, optimizer records, epoch u32, seed u64,
//! optimizer step u64, then the training configuration as a length-prefixed
//! (u32) JSON document. A record is name length u16, UTF-8 name, rank u8,
//! dims u32×rank and the f32 values.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::JdNet;
use crate::seed::{derive, Stream};
use crate::tensor::ParamStore;

pub const MAGIC: &[u8; 4] = b"JDN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Vec<Record>,
    pub adam: Vec<Record>,
    pub adam_step: u64,
    /// Number of completed epochs.
    pub epoch: u32,
    pub seed: u64,
    pub config: TrainConfig,
}

fn moment_name(which: char, param: &str) -> String {
    format!("{which}:{param}")
}

impl Checkpoint {
    pub fn capture(store: &ParamStore<f32>, adam: &AdamState<f32>, epoch: u32, config: &TrainConfig) -> Self {
        let params = store
            .entries()
            .iter()
            .map(|e| Record { name: e.name.clone(), dims: e.dims.clone(), values: e.tensor.data().to_vec() })
            .collect();
        let mut moments = Vec::new();
        for (i, e) in store.entries().iter().enumerate().filter(|(_, e)| e.trainable) {
            for (which, src) in [('m', &adam.m[i]), ('v', &adam.v[i])] {
                moments.push(Record { name: moment_name(which, &e.name), dims: e.dims.clone(), values: src.clone() });
            }
        }
        Checkpoint {
            version: VERSION,
            params,
            adam: moments,
            adam_step: adam.t,
            epoch,
            seed: config.seed,
            config: config.clone(),
        }
    }

    /// Rebuilds the network, its parameters and the optimizer state.
    pub fn restore(&self) -> Result<(JdNet, ParamStore<f32>, AdamState<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.config.seed, Stream::Init, 0));
        let (net, mut store) = JdNet::build::<f32, _>(&mut rng, self.config.net.clone())?;
        let by_name = |records: &[Record]| -> HashMap<String, usize> {
            records.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect()
        };
        let params = by_name(&self.params);
        if params.len() != store.len() || self.params.len() != store.len() {
            return Err(self.mismatch(format!(
                "checkpoint holds {} parameters, configured network has {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        let fetch = |map: &HashMap<String, usize>, records: &[Record], name: &str, dims: &[usize]| {
            let r = map.get(name).map(|&i| &records[i]).ok_or_else(|| self.mismatch(format!("missing record `{name}`")))?;
            if r.dims != dims {
                return Err(self.mismatch(format!("record `{name}` has dims {:?}, expected {dims:?}", r.dims)));
            }
            Ok(r.values.clone())
        };
        for &id in &ids {
            let (name, dims) = (store.entry(id).name.clone(), store.entry(id).dims.clone());
            let values = fetch(&params, &self.params, &name, &dims)?;
            store.set_values(id, &values)?;
        }
        let moments = by_name(&self.adam);
        let mut adam = AdamState::new(&store);
        let trainable = store.entries().iter().filter(|e| e.trainable).count();
        if self.adam.len() != 2 * trainable {
            return Err(self.mismatch(format!(
                "checkpoint holds {} optimizer records, expected {}",
                self.adam.len(),
                2 * trainable
            )));
        }
        for (i, e) in store.entries().iter().enumerate().filter(|(_, e)| e.trainable) {
            adam.m[i] = fetch(&moments, &self.adam, &moment_name('m', &e.name), &e.dims)?;
            adam.v[i] = fetch(&moments, &self.adam, &moment_name('v', &e.name), &e.dims)?;
        }
        adam.t = self.adam_step;
        Ok((net, store, adam))
    }

    fn mismatch(&self, reason: String) -> Error {
        Error::Data(format!("checkpoint does not match its configuration: {reason}"))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        for group in [&self.params, &self.adam] {
            out.extend_from_slice(&count_u32(group.len(), "record count")?.to_le_bytes());
            for r in group.iter() {
                write_record(&mut out, r)?;
            }
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        let json = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&count_u32(json.len(), "config length")?.to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4, "magic bytes")?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}, this build reads {VERSION}")));
        }
        let params = r.records("parameter")?;
        let adam = r.records("optimizer")?;
        let epoch = r.u32("epoch")?;
        let seed = r.u64("seed")?;
        let adam_step = r.u64("optimizer step")?;
        let len = r.u32("config length")? as usize;
        let at = r.pos;
        let config = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| r.error_at(at, format!("invalid config: {e}")))?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { version, params, adam, adam_step, epoch, seed, config })
    }

    /// Writes through a temporary sibling file so a failed save never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} does not fit in u32")))
}

fn write_record(out: &mut Vec<u8>, r: &Record) -> Result<()> {
    let name = r.name.as_bytes();
    let len = u16::try_from(name.len())
        .map_err(|_| Error::InvalidArgument(format!("parameter name `{}` is too long", r.name)))?;
    let rank = u8::try_from(r.dims.len())
        .map_err(|_| Error::InvalidArgument(format!("parameter `{}` has too many dims", r.name)))?;
    if r.dims.iter().product::<usize>() != r.values.len() {
        return Err(Error::InvalidArgument(format!("record `{}` dims {:?} do not match its values", r.name, r.dims)));
    }
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name);
    out.push(rank);
    for &d in &r.dims {
        out.extend_from_slice(&count_u32(d, "dimension")?.to_le_bytes());
    }
    for v in &r.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: String) -> Error {
        Error::Checkpoint { offset: offset as u64, reason }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(self.error_at(
                self.pos,
                format!("unexpected end of file reading {what} (need {n} bytes, {left} left)"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn records(&mut self, kind: &str) -> Result<Vec<Record>> {
        let count = self.u32(&format!("{kind} record count"))?;
        let mut out = Vec::new();
        for i in 0..count {
            let start = self.pos;
            let len = u16::from_le_bytes(self.array(&format!("{kind} record {i} name length"))?) as usize;
            let name = std::str::from_utf8(self.take(len, &format!("{kind} record {i} name"))?)
                .map_err(|_| self.error_at(start + 2, format!("{kind} record {i} name is not UTF-8")))?
                .to_string();
            let rank = self.take(1, &format!("rank of `{name}`"))?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u32(&format!("dims of `{name}`"))? as usize);
            }
            let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let bytes = count
                .and_then(|c| c.checked_mul(4))
                .ok_or_else(|| self.error_at(start, format!("dims {dims:?} of `{name}` overflow")))?;
            let raw = self.take(bytes, &format!("values of `{name}`"))?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            out.push(Record { name, dims, values });
        }
        Ok(out)
    }
}
