use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{AdamState, BetaSchedule, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::numerics::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Schedule parameters stored alongside the weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEcho {
    pub kind: BetaSchedule,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleEcho {
    pub fn of(s: &DiffusionSchedule) -> Self {
        let (beta_start, beta_end) = s.beta_bounds();
        ScheduleEcho {
            kind: s.kind(),
            steps: s.steps(),
            beta_start,
            beta_end,
        }
    }

    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.kind, self.steps, self.beta_start, self.beta_end)
    }
}

/// Everything needed to resume training or to sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub schedule: ScheduleEcho,
    pub params: Parameters,
    pub ema: Option<Parameters>,
    pub psi: Option<Parameters>,
    pub adam: Option<AdamState>,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.check_manifest(&self.config)?;
        for table in [&self.ema, &self.psi].into_iter().flatten() {
            table.check_manifest(&self.config)?;
        }
        if let Some(a) = &self.adam {
            a.m.check_manifest(&self.config)?;
            a.v.check_manifest(&self.config)?;
        }
        Ok(())
    }

    /// Fails unless the stored architecture equals `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if self.config.sensor_vocab != expected.sensor_vocab {
            return Err(Error::InvalidArgument(format!(
                "checkpoint sensor vocabulary {:?} does not match configured {:?}",
                self.config.sensor_vocab, expected.sensor_vocab
            )));
        }
        if &self.config != expected {
            return Err(Error::InvalidArgument("checkpoint model config does not match the run config".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut w, CHECKPOINT_VERSION);
        put_bytes(&mut w, serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        put_bytes(&mut w, serde_json::to_string(&self.schedule).expect("schedule serializes").as_bytes());
        put_table(&mut w, &self.params);
        for table in [&self.ema, &self.psi] {
            match table {
                Some(t) => {
                    w.push(1);
                    put_table(&mut w, t);
                }
                None => w.push(0),
            }
        }
        match &self.adam {
            Some(a) => {
                w.push(1);
                put_table(&mut w, &a.m);
                put_table(&mut w, &a.v);
                w.extend_from_slice(&a.step.to_le_bytes());
            }
            None => w.push(0),
        }
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&self.seed.to_le_bytes());
        w
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.bad("missing NGCK header".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig = r.json()?;
        let schedule: ScheduleEcho = r.json()?;
        let params = r.table()?;
        let ema = r.optional(|r| r.table())?;
        let psi = r.optional(|r| r.table())?;
        let adam = r.optional(|r| {
            let m = r.table()?;
            let v = r.table()?;
            let step = r.u64()?;
            Ok(AdamState { m, v, step })
        })?;
        let step = r.u64()?;
        let seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(r.bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ck = Checkpoint {
            config,
            schedule,
            params,
            ema,
            psi,
            adam,
            step,
            seed,
        };
        ck.validate().map_err(|e| Error::Malformed {
            what: "checkpoint",
            path: path.into(),
            detail: e.to_string(),
        })?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.into()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    put_u32(w, b.len() as u32);
    w.extend_from_slice(b);
}

fn put_table(w: &mut Vec<u8>, p: &Parameters) {
    put_u32(w, p.len() as u32);
    for (name, t) in p.iter() {
        put_bytes(w, name.as_bytes());
        let dims = t.shape().0;
        put_u32(w, dims.len() as u32);
        for d in dims {
            put_u32(w, d as u32);
        }
        for v in t.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, detail: String) -> Error {
        Error::Malformed {
            what: "checkpoint",
            path: self.path.into(),
            detail,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        serde_json::from_slice(raw).map_err(|e| self.bad(e.to_string()))
    }

    fn optional<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<Option<T>> {
        match self.take(1)?[0] {
            0 => Ok(None),
            1 => f(self).map(Some),
            b => Err(self.bad(format!("invalid presence flag {b}"))),
        }
    }

    fn table(&mut self) -> Result<Parameters> {
        let count = self.u32()? as usize;
        let mut p = Parameters::new();
        for _ in 0..count {
            let n = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(n)?)
                .map_err(|_| self.bad("parameter name is not UTF-8".into()))?
                .to_owned();
            let rank = self.u32()? as usize;
            if rank != 4 {
                return Err(self.bad(format!("parameter `{name}` has rank {rank}")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = self.u32()? as usize;
            }
            let shape = Shape(dims);
            let raw = self.take(4 * shape.numel())?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            p.insert(name, Tensor::new(shape, data)?);
        }
        Ok(p)
    }
}
