//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PDFU"
//! version u32                      (currently 1)
//! record* {
//!     name_len u32
//!     name     [u8; name_len]      (UTF-8)
//!     dtype    u8                  (0 = f32, 1 = f64, 2 = u64)
//!     ndim     u32
//!     dims     [u64; ndim]
//!     data     raw little-endian elements, prod(dims) of them
//! }
//! ```
//!
//! Records run to end-of-file. Parameter tensors, persistent buffers,
//! optimizer moments and u64 metadata all share this one record shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{Dtype, Real};

pub const MAGIC: &[u8; 4] = b"PDFU";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Record {
    pub fn from_reals<R: Real>(name: &str, shape: &[usize], data: &[R]) -> Record {
        let mut bytes = Vec::with_capacity(data.len() * R::DTYPE.byte_width());
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes_vec());
        }
        Record {
            name: name.to_string(),
            dtype: R::DTYPE,
            shape: shape.to_vec(),
            bytes,
        }
    }

    pub fn from_u64(name: &str, value: u64) -> Record {
        Record {
            name: name.to_string(),
            dtype: Dtype::U64,
            shape: vec![1],
            bytes: value.to_le_bytes().to_vec(),
        }
    }

    pub fn as_u64(&self) -> Result<u64> {
        if self.dtype != Dtype::U64 || self.bytes.len() != 8 {
            return Err(Error::Checkpoint(format!(
                "record `{}` is not a u64 scalar",
                self.name
            )));
        }
        Ok(u64::from_le_bytes(self.bytes[..8].try_into().unwrap()))
    }

    /// Decode as the requested real type, converting between f32/f64 when the
    /// stored dtype differs.
    pub fn to_reals<R: Real>(&self) -> Result<Vec<R>> {
        let width = self.dtype.byte_width();
        if self.bytes.len() % width != 0 {
            return Err(Error::Checkpoint(format!(
                "record `{}` has ragged payload",
                self.name
            )));
        }
        match self.dtype {
            Dtype::F32 => Ok(self
                .bytes
                .chunks_exact(4)
                .map(|c| R::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()),
            Dtype::F64 => Ok(self
                .bytes
                .chunks_exact(8)
                .map(|c| R::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()),
            Dtype::U64 => Err(Error::Checkpoint(format!(
                "record `{}` holds u64 metadata, not reals",
                self.name
            ))),
        }
    }
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[r.dtype.tag()])?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for &d in &r.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let n: usize = r.shape.iter().product();
        if n * r.dtype.byte_width() != r.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "record `{}`: dims {:?} disagree with payload of {} bytes",
                r.name,
                r.shape,
                r.bytes.len()
            )));
        }
        w.write_all(&r.bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }

    let mut records = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("non-UTF8 record name".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let dtype = Dtype::from_tag(tag[0])
            .ok_or_else(|| Error::Checkpoint(format!("record `{name}`: bad dtype {}", tag[0])))?;
        let mut nd4 = [0u8; 4];
        r.read_exact(&mut nd4)?;
        let ndim = u32::from_le_bytes(nd4) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut d8 = [0u8; 8];
            r.read_exact(&mut d8)?;
            shape.push(u64::from_le_bytes(d8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * dtype.byte_width()];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Checkpoint(format!("record `{name}`: truncated payload"))
        })?;
        records.push(Record {
            name,
            dtype,
            shape,
            bytes,
        });
    }
    Ok(records)
}
