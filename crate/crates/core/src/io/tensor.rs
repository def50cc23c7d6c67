use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"GXTN";
pub const TENSOR_VERSION: u16 = 1;

/// Element encoding of a tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            _ => Err(Error::format(
                "GXTN dtype",
                format!("unknown dtype code {c}"),
            )),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A dense little-endian tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub dtype: DType,
    pub data: Vec<f64>,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, dtype: DType, data: Vec<f64>) -> Result<Self> {
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::invalid(format!(
                "tensor dims {dims:?} exceed the format limits"
            )));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "tensor dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, dtype, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, DType::F32, data)
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, DType::F64, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(8 + 4 * self.dims.len() + self.data.len() * self.dtype.width());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            match self.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "GXTN");
        if r.take(4, "magic")? != TENSOR_MAGIC {
            return Err(Error::format("GXTN magic", "not a GXTN tensor file"));
        }
        let version = r.u16("version")?;
        if version != TENSOR_VERSION {
            return Err(Error::format(
                "GXTN version",
                format!("unsupported version {version}"),
            ));
        }
        let dtype = DType::from_code(r.u8("dtype")?)?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("GXTN dims", "element count overflows"))?;
        let expected = count
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::format("GXTN dims", "payload size overflows"))?;
        if r.remaining() != expected {
            return Err(Error::format(
                "GXTN payload",
                format!(
                    "dims {dims:?} need {expected} bytes, found {}",
                    r.remaining()
                ),
            ));
        }
        let payload = r.take(expected, "payload")?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self { dims, dtype, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?).map_err(|e| with_path(e, path))
    }

    /// Fails unless the dims equal `expected`.
    pub fn expect_dims(&self, what: &str, expected: &[usize]) -> Result<()> {
        if self.dims != expected {
            return Err(Error::format(
                what,
                format!("expected dims {expected:?}, found {:?}", self.dims),
            ));
        }
        Ok(())
    }
}

pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { field, message } => Error::Format {
            field,
            message: format!("{message} ({})", path.display()),
        },
        other => other,
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            format,
        }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                format!("{} {field}", self.format),
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, field: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = TensorFile::f32(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[0..4], b"GXTN");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 1);
        assert_eq!(b[7], 2);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 16 + 8);
    }

    #[test]
    fn rejects_bad_files() {
        let good = TensorFile::f64(vec![3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(TensorFile::from_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("GXTN"));
        let err = TensorFile::from_bytes(&good[..good.len() - 1])
            .unwrap_err()
            .to_string();
        assert!(err.contains("payload"), "{err}");
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(TensorFile::from_bytes(&v2)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let mut dt = good.clone();
        dt[6] = 9;
        assert!(TensorFile::from_bytes(&dt).is_err());
        assert!(TensorFile::from_bytes(&good[..5]).is_err());
        assert!(TensorFile::f32(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.gxtn");
        let t = TensorFile::f64(vec![2, 0, 3], vec![]).unwrap();
        t.write(&p).unwrap();
        assert_eq!(TensorFile::read(&p).unwrap(), t);
    }

    proptest! {
        #[test]
        fn f32_round_trip_is_bit_exact(v in prop::collection::vec(any::<f32>(), 0..64)) {
            let data: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let t = TensorFile::f32(vec![data.len()], data).unwrap();
            let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
            let bits = |t: &TensorFile| t.data.iter().map(|x| (*x as f32).to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&t));
            prop_assert_eq!(back.to_bytes(), t.to_bytes());
        }

        #[test]
        fn f64_round_trip_is_bit_exact(v in prop::collection::vec(any::<f64>(), 0..64)) {
            let t = TensorFile::f64(vec![v.len()], v.clone()).unwrap();
            let back = TensorFile::from_bytes(&t.to_bytes()).unwrap();
            let bits: Vec<u64> = back.data.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits, v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
