//! Versioned binary checkpoint format.
//!
//! Layout (all little-endian): magic `PFCK`, format version, model config,
//! vocab bytes, iteration, RNG state, then length-prefixed named f32
//! tensors, then optional Adam moments aligned with the tensor order.
//! Round-trips are bit-identical.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelParams, Moments};
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::ndgrad::HostTensor;

const MAGIC: &[u8; 4] = b"PFCK";
const VERSION: u32 = 1;

/// Serializable training-state snapshot of the seeded generator.
#[derive(Debug, Clone, PartialEq, Eq)]
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
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams<f32>,
    pub iteration: u64,
    pub moments: Option<Moments<f32>>,
    pub rng: RngState,
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, ckpt).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    };
    r.checkpoint()
}

fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let c = &ckpt.config;
    for v in [
        c.seq_len,
        c.noise_dim,
        c.layer_dim,
        c.n_res_blocks,
        c.vocab_size,
        c.kernel_width,
        c.batch_size,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&c.res_scale.to_le_bytes())?;

    let chars = ckpt.vocab.chars();
    w.write_all(&(chars.len() as u32).to_le_bytes())?;
    w.write_all(chars)?;

    w.write_all(&ckpt.iteration.to_le_bytes())?;
    w.write_all(&ckpt.rng.seed)?;
    w.write_all(&ckpt.rng.stream.to_le_bytes())?;
    w.write_all(&ckpt.rng.word_pos.to_le_bytes())?;

    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, t) in ckpt.params.tensors() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_f32s(w, &t.data)?;
    }

    match &ckpt.moments {
        None => w.write_all(&[0u8])?,
        Some(m) => {
            w.write_all(&[1u8])?;
            for (mi, vi) in m.m.iter().zip(&m.v) {
                write_f32s(w, mi)?;
                write_f32s(w, vi)?;
            }
        }
    }
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

struct Reader<R> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("{}: truncated or corrupt checkpoint", self.path))
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn checkpoint(&mut self) -> Result<Checkpoint> {
        let magic = self.bytes(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic {magic:02x?}, not a checkpoint file",
                self.path
            )));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version {version}",
                self.path
            )));
        }
        let seq_len = self.u32()? as usize;
        let noise_dim = self.u32()? as usize;
        let layer_dim = self.u32()? as usize;
        let n_res_blocks = self.u32()? as usize;
        let vocab_size = self.u32()? as usize;
        let kernel_width = self.u32()? as usize;
        let batch_size = self.u32()? as usize;
        let res_scale = f64::from_le_bytes(self.bytes(8)?.try_into().unwrap());
        let config = ModelConfig {
            seq_len,
            noise_dim,
            layer_dim,
            n_res_blocks,
            vocab_size,
            kernel_width,
            res_scale,
            batch_size,
        };
        config.validate().map_err(|e| {
            Error::Format(format!("{}: invalid config in checkpoint: {e}", self.path))
        })?;

        let n_chars = self.u32()? as usize;
        let chars = self.bytes(n_chars)?;
        let vocab = Vocab::from_bytes(chars.iter().copied());
        if vocab.len() != vocab_size || vocab.chars().len() != n_chars {
            return Err(Error::Format(format!(
                "{}: vocab bytes disagree with declared vocab_size",
                self.path
            )));
        }

        let iteration = self.u64()?;
        let seed: [u8; 32] = self.bytes(32)?.try_into().unwrap();
        let stream = self.u64()?;
        let word_pos = u128::from_le_bytes(self.bytes(16)?.try_into().unwrap());
        let rng = RngState {
            seed,
            stream,
            word_pos,
        };

        let n_tensors = self.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = self.u32()? as usize;
            let name = String::from_utf8(self.bytes(name_len)?).map_err(|_| {
                Error::Format(format!("{}: non-utf8 tensor name", self.path))
            })?;
            let ndim = self.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let data = self.f32s(numel)?;
            tensors.push((name, HostTensor { shape, data }));
        }
        let params = ModelParams::from_tensors(tensors);

        let flag = self.bytes(1)?[0];
        let moments = match flag {
            0 => None,
            1 => {
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                let sizes: Vec<usize> = params.tensors().map(|(_, t)| t.numel()).collect();
                for n in sizes {
                    m.push(self.f32s(n)?);
                    v.push(self.f32s(n)?);
                }
                Some(Moments { m, v })
            }
            other => {
                return Err(Error::Format(format!(
                    "{}: bad moments flag {other}",
                    self.path
                )))
            }
        };

        Ok(Checkpoint {
            config,
            vocab,
            params,
            iteration,
            moments,
            rng,
        })
    }
}
