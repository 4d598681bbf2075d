//! Versioned binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "DCCMAPF\0"
//! version    u32
//! step       u64      learner steps taken
//! meta       u32 count, then (string key, string value) pairs
//! params     table
//! target     u8 flag, then table when 1
//! optimizer  u8 flag, then lr, beta1, beta2, eps (f32), step (u64),
//!            first then second moments, one run of f32 per parameter
//! ```
//! A table is `u32 count` followed by entries of
//! `string name, u32 ndim, u32 dims[ndim], f32 values[product(dims)]`.
//! Strings are `u32 byte length` + UTF-8. All integers and floats are
//! little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::optim::Adam;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DCCMAPF\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
    pub target: Option<ParamStore>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        put_u32(w, self.meta.len())?;
        for (k, v) in &self.meta {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        put_table(w, &self.params)?;
        w.write_all(&[self.target.is_some() as u8])?;
        if let Some(t) = &self.target {
            put_table(w, t)?;
        }
        w.write_all(&[self.optimizer.is_some() as u8])?;
        if let Some(opt) = &self.optimizer {
            for x in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&opt.step.to_le_bytes())?;
            for buf in opt.m.iter().chain(&opt.v) {
                put_f32s(w, buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let step = get_u64(r)?;
        let n_meta = get_u32(r)?;
        let mut meta = Vec::with_capacity(n_meta.min(1024) as usize);
        for _ in 0..n_meta {
            meta.push((get_str(r)?, get_str(r)?));
        }
        let params = get_table(r)?;
        let target = if get_u8(r)? == 1 {
            Some(get_table(r)?)
        } else {
            None
        };
        let optimizer = if get_u8(r)? == 1 {
            let (lr, beta1, beta2, eps) = (get_f32(r)?, get_f32(r)?, get_f32(r)?, get_f32(r)?);
            let opt_step = get_u64(r)?;
            let lens: Vec<usize> = params.iter().map(|(_, _, t)| t.len()).collect();
            let m = lens
                .iter()
                .map(|&n| get_f32s(r, n))
                .collect::<Result<Vec<_>>>()?;
            let v = lens
                .iter()
                .map(|&n| get_f32s(r, n))
                .collect::<Result<Vec<_>>>()?;
            Some(Adam {
                lr,
                beta1,
                beta2,
                eps,
                step: opt_step,
                m,
                v,
            })
        } else {
            None
        };
        if let Some(t) = &target {
            let same = t.len() == params.len()
                && t.iter()
                    .zip(params.iter())
                    .all(|(a, b)| a.1 == b.1 && a.2.shape() == b.2.shape());
            if !same {
                return Err(Error::Checkpoint(
                    "target table does not match parameter table".into(),
                ));
            }
        }
        Ok(Self {
            step,
            meta,
            params,
            target,
            optimizer,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    /// Writes through a temporary file so a failed save never leaves a
    /// partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

fn put_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, xs: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn put_table(w: &mut impl Write, store: &ParamStore) -> Result<()> {
    put_u32(w, store.len())?;
    for (_, name, t) in store.iter() {
        put_str(w, name)?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        put_f32s(w, t.data())?;
    }
    Ok(())
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 28 {
        return Err(Error::Checkpoint(format!(
            "string length {n} is implausible"
        )));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut b = vec![0u8; n * 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn get_table(r: &mut impl Read) -> Result<ParamStore> {
    let n = get_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = get_str(r)?;
        let ndim = get_u32(r)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has {ndim} dimensions"
            )));
        }
        let dims = (0..ndim)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        if count == 0 || count > 1 << 28 {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {dims:?}"
            )));
        }
        let values = get_f32s(r, count)?;
        store.add(name, Tensor::new(dims, values)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamGrads;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add(
            "a.w",
            Tensor::from_slice(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 1e-7, -0.25]).unwrap(),
        );
        params.add("a.b", Tensor::vector(vec![0.5, 0.125, -8.0]));
        let mut opt = Adam::new(&params, 1e-4);
        let mut grads = ParamGrads::zeros_like(&params);
        grads.get_mut(crate::nn::ParamId(0)).unwrap()[1] = 0.3;
        let mut stepped = params.clone();
        opt.step(&mut stepped, &mut grads).unwrap();
        Checkpoint {
            step: 42,
            meta: vec![
                ("engine".into(), "test".into()),
                ("config".into(), "[a]\nx = 1\n".into()),
            ],
            params: stepped,
            target: Some(params),
            optimizer: Some(opt),
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = sample().to_bytes();
        let cut = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(
            Checkpoint::read_from(&mut cut.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(&mut bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn values_are_little_endian_f32() {
        let mut params = ParamStore::new();
        params.add("p", Tensor::vector(vec![1.0]));
        let ck = Checkpoint {
            step: 0,
            meta: vec![],
            params,
            target: None,
            optimizer: None,
        };
        let bytes = ck.to_bytes();
        // magic, version, step, meta count, table count, name, ndim, dim, value, two flags
        let value_at = 8 + 4 + 8 + 4 + 4 + (4 + 1) + 4 + 4;
        assert_eq!(&bytes[value_at..value_at + 4], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), value_at + 4 + 2);
    }
}
