//! CLTN binary tensor container.
//!
//! Layout: magic `CLTN`, version byte `0x01`, dtype byte (0 = f32, 1 = f64),
//! rank byte, `rank` dims as little-endian `u32`, then the row-major
//! little-endian payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tensor::{DType, Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"CLTN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CltnValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// An array of any rank as stored in a CLTN file.
#[derive(Debug, Clone, PartialEq)]
pub struct CltnArray {
    pub dims: Vec<usize>,
    pub values: CltnValues,
}

impl CltnArray {
    pub fn new<T: Scalar>(dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::format(
                "CLTN",
                format!("dims {:?} do not match {} values", dims, values.len()),
            ));
        }
        let values = match T::DTYPE {
            DType::F32 => CltnValues::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => CltnValues::F64(values.iter().map(|v| v.as_f64()).collect()),
        };
        Ok(CltnArray { dims, values })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        CltnArray::new(t.shape().dims().to_vec(), t.data().to_vec())
            .expect("tensor length matches its shape")
    }

    pub fn dtype(&self) -> DType {
        match self.values {
            CltnValues::F32(_) => DType::F32,
            CltnValues::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            CltnValues::F32(v) => v.len(),
            CltnValues::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values converted to `T`.
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        match &self.values {
            CltnValues::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            CltnValues::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
        }
    }

    /// Interprets the array as a rank-4 tensor, left-padding the dims with 1s.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dims.len() > 4 {
            return Err(Error::format(
                "CLTN",
                format!("rank {} does not fit a 4-d tensor", self.dims.len()),
            ));
        }
        let mut d = [1usize; 4];
        d[4 - self.dims.len()..].copy_from_slice(&self.dims);
        Tensor::from_vec(Shape::new(d[0], d[1], d[2], d[3]), self.to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + dtype.size() * self.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.values {
            CltnValues::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            CltnValues::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let truncated = |_| Error::format("CLTN", "truncated header");
        let mut header = [0u8; 7];
        r.read_exact(&mut header).map_err(truncated)?;
        if &header[..4] != MAGIC {
            return Err(Error::format("CLTN", "bad magic"));
        }
        if header[4] != VERSION {
            return Err(Error::format("CLTN", format!("unsupported version {}", header[4])));
        }
        let dtype = DType::from_code(header[5])
            .ok_or_else(|| Error::format("CLTN", format!("unknown dtype code {}", header[5])))?;
        let rank = header[6] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(truncated)?;
            dims.push(u32::from_le_bytes(b) as usize);
        }
        let count: usize = dims.iter().product();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != count * dtype.size() {
            return Err(Error::format(
                "CLTN",
                format!(
                    "payload has {} bytes, expected {} for dims {:?}",
                    payload.len(),
                    count * dtype.size(),
                    dims
                ),
            ));
        }
        let values = match dtype {
            DType::F32 => CltnValues::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => CltnValues::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(CltnArray { dims, values })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
