//! Versioned binary checkpoints: named f64 tensors, a verbatim config echo,
//! an optional tokenizer vocabulary, and the training step counter. Floats
//! are stored as exact little-endian bit patterns, so save/load/forward is
//! bit-stable. Writes go to a temp file renamed into place.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"SPGIMCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config_text: String,
    pub vocab: Option<Vec<String>>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(step: u64, config_text: String, vocab: Option<Vec<String>>, params: ParamStore) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            step,
            config_text,
            vocab,
            params,
        }
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&ckpt.version.to_le_bytes())?;
        f.write_all(&ckpt.step.to_le_bytes())?;
        f.write_all(&ckpt.params.seed().to_le_bytes())?;

        let cfg = ckpt.config_text.as_bytes();
        f.write_all(&(cfg.len() as u32).to_le_bytes())?;
        f.write_all(cfg)?;

        match &ckpt.vocab {
            Some(words) => {
                f.write_all(&(words.len() as u32).to_le_bytes())?;
                for w in words {
                    let b = w.as_bytes();
                    f.write_all(&(b.len() as u16).to_le_bytes())?;
                    f.write_all(b)?;
                }
            }
            None => f.write_all(&0u32.to_le_bytes())?,
        }

        f.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
        for (name, value) in ckpt.params.iter() {
            let nb = name.as_bytes();
            f.write_all(&(nb.len() as u16).to_le_bytes())?;
            f.write_all(nb)?;
            let shape = value.shape();
            f.write_all(&[shape.len() as u8])?;
            for &d in shape {
                f.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in value.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)
        .map_err(|_| Error::CheckpointFormat("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {magic:?}, not a checkpoint"
        )));
    }
    let version = read_u32(&mut f)?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {version}"
        )));
    }
    let step = read_u64(&mut f)?;
    let seed = read_u64(&mut f)?;

    let cfg_len = read_u32(&mut f)? as usize;
    let mut cfg = vec![0u8; cfg_len];
    f.read_exact(&mut cfg)?;
    let config_text = String::from_utf8(cfg)
        .map_err(|e| Error::CheckpointFormat(format!("config not UTF-8: {e}")))?;

    let vocab_len = read_u32(&mut f)? as usize;
    let vocab = if vocab_len > 0 {
        let mut words = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let wl = read_u16(&mut f)? as usize;
            let mut wb = vec![0u8; wl];
            f.read_exact(&mut wb)?;
            words.push(
                String::from_utf8(wb)
                    .map_err(|e| Error::CheckpointFormat(format!("vocab word not UTF-8: {e}")))?,
            );
        }
        Some(words)
    } else {
        None
    };

    let n_params = read_u32(&mut f)? as usize;
    let mut params = ParamStore::new(seed);
    for _ in 0..n_params {
        let nl = read_u16(&mut f)? as usize;
        let mut nb = vec![0u8; nl];
        f.read_exact(&mut nb)?;
        let name = String::from_utf8(nb)
            .map_err(|e| Error::CheckpointFormat(format!("tensor name not UTF-8: {e}")))?;
        let mut ndim = [0u8; 1];
        f.read_exact(&mut ndim)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u64(&mut f)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            f.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::CheckpointFormat(format!("tensor {name}: {e}")))?;
        params.insert(name, arr);
    }
    Ok(Checkpoint {
        version,
        step,
        config_text,
        vocab,
        params,
    })
}

fn read_u16(f: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    f.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
