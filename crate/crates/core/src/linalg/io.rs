//! DTNS1 binary tensor records.
//!
//! Layout: the five bytes `DTNS1`, one `u8` rank, `rank` little-endian `u32`
//! dimensions, then the little-endian `f64` payload in row-major order.
//! A file may hold several records back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Tensor;

pub const MAGIC: &[u8; 5] = b"DTNS1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.rank())
        .map_err(|_| Error::Format(format!("rank {} does not fit in u8", t.rank())))?;
    w.write_all(MAGIC)?;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} does not fit in u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record, or `None` at a clean end of stream.
pub fn read_tensor_opt<R: Read>(r: &mut R) -> Result<Option<Tensor>> {
    let mut magic = [0u8; 5];
    match r.read_exact(&mut magic[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut magic[1..]).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(truncated)?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Format("payload too large".into()))?];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data).map(Some)
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    read_tensor_opt(r)?.ok_or_else(|| Error::Format("unexpected end of file".into()))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated DTNS1 record".into())
    } else {
        e.into()
    }
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[&Tensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tensors {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(t) = read_tensor_opt(&mut r)? {
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_byte_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"DTNS1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_tensor(&mut &b"DTNS2\x00"[..]), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&mut &b"DTNS1\x01\x02\x00"[..]), Err(Error::Format(_))));
        assert!(matches!(read_tensor(&mut &b""[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            shape in prop::collection::vec(0usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len)
                .map(|i| f64::from_bits((seed.wrapping_mul(i as u64 + 1) >> 2) | 0x3000_0000_0000_0000) - 1e-300)
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            write_tensor(&mut buf, &t).unwrap();
            let mut r = &buf[..];
            let a = read_tensor(&mut r).unwrap();
            let b = read_tensor(&mut r).unwrap();
            prop_assert!(read_tensor_opt(&mut r).unwrap().is_none());
            prop_assert_eq!(a.shape(), t.shape());
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&t));
            prop_assert_eq!(bits(&b), bits(&t));
        }
    }
}
