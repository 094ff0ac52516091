//! `SDCK` checkpoint files: metadata strings, named tensors, step and RNG state.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::nn::{Mat, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub rng: RngState,
    /// Config snapshot, checkpoint kind and other text entries.
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Mat)>,
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Checkpoint(msg.into())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], PipelineError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32, PipelineError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, PipelineError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_string(r: &mut impl Read) -> Result<String, PipelineError> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

impl Checkpoint {
    pub fn new(step: u64, rng: RngState) -> Self {
        Checkpoint {
            step,
            rng,
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn meta(&self, key: &str) -> Result<&str, PipelineError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("checkpoint has no {key:?} entry")))
    }

    /// Appends every parameter of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, value) in store.iter() {
            self.tensors.push((format!("{prefix}{name}"), value.clone()));
        }
    }

    /// Copies the tensors named `prefix + name` into `store`; every parameter must be present.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(), PipelineError> {
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            let full = format!("{prefix}{name}");
            let value = self.tensor(&full).ok_or_else(|| bad(format!("missing tensor {full}")))?;
            store
                .set(&name, value.clone())
                .map_err(|e| bad(format!("tensor {full}: {e}")))?;
        }
        Ok(())
    }

    /// `SDCK`, u16 version, u64 step, RNG (32-byte seed, u64 stream, u128 word position),
    /// metadata count and `(key, value)` strings, tensor count and
    /// `(name, u32 rows, u32 cols, f64 values)` records. Integers are little-endian,
    /// strings are u32-length-prefixed UTF-8.
    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_string(w, k)?;
            write_string(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, m) in &self.tensors {
            write_string(w, name)?;
            w.write_all(&(m.rows as u32).to_le_bytes())?;
            w.write_all(&(m.cols as u32).to_le_bytes())?;
            for x in &m.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, PipelineError> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}, not a checkpoint")));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let step = read_u64(r)?;
        let rng = RngState {
            seed: read_array(r)?,
            stream: read_u64(r)?,
            word_pos: u128::from_le_bytes(read_array(r)?),
        };
        let mut ck = Checkpoint::new(step, rng);
        for _ in 0..read_u32(r)? {
            let k = read_string(r)?;
            let v = read_string(r)?;
            ck.meta.insert(k, v);
        }
        for _ in 0..read_u32(r)? {
            let name = read_string(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let len = rows.checked_mul(cols).filter(|&l| l <= 1 << 28).ok_or_else(|| bad(format!("tensor {name} is implausibly large")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(read_array(r)?));
            }
            ck.tensors.push((name, Mat::from_vec(rows, cols, data)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let io = |e| PipelineError::io(path, e);
        // Write-then-rename keeps the previous file intact if writing fails.
        let tmp = path.with_extension("tmp");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(io)?);
        self.write(&mut f).map_err(io)?;
        f.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let f = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(f))
    }
}
