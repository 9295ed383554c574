//! Binary checkpoints of a parameter set.
//!
//! Layout (little-endian): magic `HZFO`, `u32` version, `u32` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u8` role, `u32` rank,
//! `u64` dims, `f64` data.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Role};

pub const MAGIC: &[u8; 4] = b"HZFO";
pub const VERSION: u32 = 1;

/// One tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for t in params.iter() {
        let name = t.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[t.role().as_u8()])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<StoredTensor>> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| Error::Format("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("name is not UTF-8".into()))?;
        let role_byte = read_array::<1, _>(&mut r)?[0];
        let role = Role::from_u8(role_byte).ok_or_else(|| Error::Format(format!("bad role byte {role_byte}")))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(StoredTensor { name, role, shape, data });
    }
    Ok(out)
}

/// Overwrite values and roles of `params` from a checkpoint with the same
/// tensors in the same order.
pub fn load_into<R: Read>(params: &mut ParamSet, r: R) -> Result<()> {
    let stored = read_checkpoint(r)?;
    if stored.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model has {}",
            stored.len(),
            params.len()
        )));
    }
    for (s, t) in stored.iter().zip(params.iter()) {
        if s.name != t.name() || s.shape != t.shape() {
            return Err(Error::Format(format!("checkpoint tensor {} {:?} does not match {} {:?}", s.name, s.shape, t.name(), t.shape())));
        }
    }
    for (i, s) in stored.into_iter().enumerate() {
        let t = params.tensor_mut(i);
        t.data_mut().copy_from_slice(&s.data);
        t.set_role(s.role);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamTensor;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new(vec![
            ParamTensor::new("w", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 4.0], 0).unwrap(),
            ParamTensor::new("b", vec![2], vec![0.5, 0.25], 0).unwrap(),
        ])
        .unwrap();
        p.set_role("b", Role::Zo).unwrap();
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"HZFO");
        let mut q = sample();
        q.set_all_roles(Role::Fo);
        q.tensor_mut(0).data_mut().fill(0.0);
        load_into(&mut q, buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(buf[16], b'w');
        assert_eq!(buf[17], Role::Fo.as_u8());
        // 4 + 4 + 4 + (4 + 1 + 1 + 4 + 16 + 32) + (4 + 1 + 1 + 4 + 8 + 16)
        assert_eq!(buf.len(), 12 + 58 + 34);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let mut wrong = ParamSet::new(vec![ParamTensor::zeros("v", vec![4], 0)]).unwrap();
        assert!(load_into(&mut wrong, buf.as_slice()).is_err());
    }
}
