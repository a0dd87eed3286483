//! Binary tensor file used for checkpoints and pretrained tables.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "HIRETNSR"
//! version  u32      currently 1
//! n_meta   u32
//!   key    u32 byte length + UTF-8
//!   value  u32 byte length + UTF-8
//! n_tensor u32
//!   name   u32 byte length + UTF-8
//!   rank   u32 (0, 1 or 2)
//!   dims   rank x u64
//!   data   product(dims) x f64 (IEEE-754 bits, row-major)
//! ```
//!
//! Entries are written in key order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 8] = b"HIRETNSR";
pub const FORMAT_VERSION: u32 = 1;

/// String metadata plus named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Format(msg.into())
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, TensorError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("invalid UTF-8 string"))
}

impl TensorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a tensor file"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut file = TensorFile::default();
        for _ in 0..read_u32(r)? {
            let k = read_str(r)?;
            let v = read_str(r)?;
            file.meta.insert(k, v);
        }
        for _ in 0..read_u32(r)? {
            let name = read_str(r)?;
            let rank = read_u32(r)? as usize;
            if rank > 2 {
                return Err(bad(format!("tensor {name} has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            file.tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let mut f = io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.tensors
            .get(name)
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            values in proptest::collection::vec(any::<f64>(), 0..24),
            key in "[a-z.]{1,12}",
            note in ".{0,20}",
        ) {
            let mut file = TensorFile::default();
            file.meta.insert(key.clone(), note);
            file.tensors.insert(key.clone(), Tensor::vector(values.clone()));
            file.tensors.insert("s".into(), Tensor::scalar(1.5));
            let back = TensorFile::read_from(&mut file.to_bytes().as_slice()).unwrap();
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.tensor(&key).unwrap()), bits(file.tensor(&key).unwrap()));
            prop_assert_eq!(back.meta, file.meta);
        }
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(TensorFile::read_from(&mut &b"NOTATENSORFILE.."[..]).is_err());
    }

    #[test]
    fn matrix_shape_survives() {
        let mut file = TensorFile::default();
        file.tensors
            .insert("m".into(), Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        let back = TensorFile::read_from(&mut file.to_bytes().as_slice()).unwrap();
        assert_eq!(back, file);
    }
}
