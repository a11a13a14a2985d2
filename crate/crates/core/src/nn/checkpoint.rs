//! Binary checkpoint format.
//!
//! ```text
//! magic      "UFCK"
//! version    u32
//! widths     u32 count, then count x u64
//! activation u8
//! arch seed  u64
//! tensors    u32 count, then per tensor:
//!            u32 name length, name bytes (UTF-8), u64 rows, u64 cols,
//!            rows*cols x f64
//! ```
//!
//! All integers and floats are little-endian. Floats are stored bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Activation, MlpArchitecture};
use super::params::ParamSet;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UFCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(arch: &MlpArchitecture, params: &ParamSet) -> Result<Vec<u8>> {
    arch.check_params(params)?;
    let mut out = Vec::with_capacity(64 + params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.layer_widths.len() as u32).to_le_bytes());
    for &w in &arch.layer_widths {
        out.extend_from_slice(&(w as u64).to_le_bytes());
    }
    out.push(arch.activation.id());
    out.extend_from_slice(&arch.seed.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(MlpArchitecture, ParamSet)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let nw = c.u32()? as usize;
    let widths = (0..nw)
        .map(|_| c.u64().map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let act_id = c.u8()?;
    let activation =
        Activation::from_id(act_id).ok_or_else(|| Error::Format(format!("unknown activation id {act_id}")))?;
    let seed = c.u64()?;
    let arch = MlpArchitecture::new(widths, activation, seed).map_err(|e| Error::Format(e.to_string()))?;

    let nt = c.u32()? as usize;
    let mut entries = Vec::with_capacity(nt);
    for _ in 0..nt {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        if count > (bytes.len() - c.pos) / 8 {
            return Err(Error::Format(format!("tensor `{name}` exceeds file length")));
        }
        let values = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor2D::new(rows, cols, values).map_err(|e| Error::Format(e.to_string()))?;
        entries.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let params = ParamSet::new(entries).map_err(|e| Error::Format(e.to_string()))?;
    arch.check_params(&params)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((arch, params))
}

pub fn save(path: &Path, arch: &MlpArchitecture, params: &ParamSet) -> Result<()> {
    let bytes = encode(arch, params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(MlpArchitecture, ParamSet)> {
    let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let arch = MlpArchitecture::new(vec![2, 1], Activation::Tanh, 9).unwrap();
        let bytes = encode(&arch, &arch.init_params()).unwrap();
        assert_eq!(&bytes[..4], b"UFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes[28], 1); // activation id after two u64 widths
    }

    #[test]
    fn corrupted_inputs_fail() {
        let arch = MlpArchitecture::new(vec![3, 4, 2], Activation::Relu, 1).unwrap();
        let bytes = encode(&arch, &arch.init_params()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load(Path::new("/definitely/not/here.ufck")).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..6, scale in -1e6f64..1e6) {
            let arch = MlpArchitecture::new(vec![3, hidden, 2], Activation::Relu, seed).unwrap();
            let mut params = arch.init_params();
            params.scale(scale);
            let bytes = encode(&arch, &params).unwrap();
            let (arch2, params2) = decode(&bytes).unwrap();
            prop_assert_eq!(&arch, &arch2);
            let a: Vec<u64> = params.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = params2.flatten().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode(&arch2, &params2).unwrap(), bytes);
        }
    }
}
