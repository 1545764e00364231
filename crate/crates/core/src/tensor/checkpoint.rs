//! Checkpoint container.
//!
//! ```text
//! magic       8 bytes  "LGCKPT1\0"
//! header_len  u32 LE
//! header      JSON: {"dtype", "meta", "params": [{"name", "shape"}], "adam"}
//! values      every parameter in header order, little-endian dtype
//! adam m, v   when "adam" is non-null: first moments, then second moments,
//!             in the same order and layout as the values
//! ```
//!
//! `meta` is free-form; trainers store the model config, seed and step.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Adam, AdamConfig, ParamStore, Real, Tensor};

const MAGIC: &[u8; 8] = b"LGCKPT1\0";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint holds {found} values, expected {expected}")]
    DType {
        expected: &'static str,
        found: String,
    },
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
    adam: Option<AdamEntry>,
}

pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub params: ParamStore<T>,
    pub adam: Option<Adam<T>>,
}

pub fn save_checkpoint<T: Real>(
    w: &mut impl Write,
    meta: &serde_json::Value,
    params: &ParamStore<T>,
    adam: Option<&Adam<T>>,
) -> io::Result<()> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        meta: meta.clone(),
        params: params
            .ids()
            .map(|id| ParamEntry {
                name: params.name(id).to_string(),
                shape: params.get(id).shape().to_vec(),
            })
            .collect(),
        adam: adam.map(|a| AdamEntry {
            config: a.config,
            step: a.step,
        }),
    };
    let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for id in params.ids() {
        params
            .get(id)
            .data()
            .iter()
            .for_each(|&x| x.write_le(&mut buf));
    }
    if let Some(a) = adam {
        for moments in [&a.m, &a.v] {
            for m in moments {
                m.iter().for_each(|&x| x.write_le(&mut buf));
            }
        }
    }
    w.write_all(&buf)
}

fn read_values<T: Real>(r: &mut impl Read, n: usize) -> io::Result<Vec<T>> {
    let mut bytes = vec![0u8; n * T::BYTES];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

pub fn load_checkpoint<T: Real>(r: &mut impl Read) -> Result<Checkpoint<T>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::DType {
            expected: T::DTYPE,
            found: header.dtype,
        });
    }
    let mut params = ParamStore::new();
    for p in &header.params {
        let n = p.shape.iter().product();
        let t = Tensor::from_vec(&p.shape, read_values(r, n)?).expect("length from shape");
        params.add(p.name.clone(), t);
    }
    let adam = match header.adam {
        None => None,
        Some(a) => {
            let mut opt = Adam::new(a.config, &params);
            opt.step = a.step;
            for i in 0..params.len() {
                opt.m[i] = read_values(r, opt.m[i].len())?;
            }
            for i in 0..params.len() {
                opt.v[i] = read_values(r, opt.v[i].len())?;
            }
            Some(opt)
        }
    };
    Ok(Checkpoint {
        meta: header.meta,
        params,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_with_optimizer_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        store.add("emb", Tensor::randn(&[4, 3], 1.0, &mut rng));
        store.add("bias", Tensor::randn(&[3], 1.0, &mut rng));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let g0 = vec![0.5f32; 12];
        let g1 = vec![-1.0f32; 3];
        adam.step(&mut store, &[Some(&g0), Some(&g1)]);
        let meta = serde_json::json!({"seed": 7, "step": 1});

        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &meta, &store, Some(&adam)).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let header_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(buf.len(), 12 + header_len + 15 * 4 * 3);

        let ck: Checkpoint<f32> = load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.params, store);
        assert_eq!(ck.adam.unwrap(), adam);
    }

    #[test]
    fn dtype_and_magic_checked() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2]));
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &serde_json::Value::Null, &store, None).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&mut buf.as_slice()),
            Err(CheckpointError::DType { .. })
        ));
        buf[0] = b'X';
        assert!(matches!(
            load_checkpoint::<f32>(&mut buf.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
    }
}
