//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "IATM" | u32 version | u32 meta_len | meta (UTF-8)
//! u32 layer_count | layer descriptors
//! per layer: parameter blobs, each u32 count + count x f32
//!            (batch norm additionally stores running mean and variance)
//! u32 CRC32 of every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Layer, Linear};
use crate::network::Sequential;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"IATM";
const VERSION: u32 = 1;

/// A trained network plus free-form metadata (typically the architecture
/// hyperparameters that produced it).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: String,
    pub network: Sequential<f32>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {} does not fit u32", v)))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_blob(buf: &mut Vec<u8>, values: &[f32]) -> Result<()> {
    put_u32(buf, values.len())?;
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut buf, self.metadata.len())?;
        buf.extend_from_slice(self.metadata.as_bytes());
        let layers = self.network.layers();
        put_u32(&mut buf, layers.len())?;
        for layer in layers {
            match layer {
                Layer::Conv2d(c) => {
                    buf.push(1);
                    for v in [c.in_channels, c.out_channels, c.kernel, c.stride, c.padding] {
                        put_u32(&mut buf, v)?;
                    }
                }
                Layer::BatchNorm2d(bn) => {
                    buf.push(2);
                    put_u32(&mut buf, bn.channels)?;
                    buf.extend_from_slice(&bn.eps.to_le_bytes());
                    buf.extend_from_slice(&bn.momentum.to_le_bytes());
                }
                Layer::Relu => buf.push(3),
                Layer::MaxPool2d { kernel, stride } => {
                    buf.push(4);
                    put_u32(&mut buf, *kernel)?;
                    put_u32(&mut buf, *stride)?;
                }
                Layer::GlobalAvgPool => buf.push(5),
                Layer::Linear(l) => {
                    buf.push(6);
                    put_u32(&mut buf, l.in_features)?;
                    put_u32(&mut buf, l.out_features)?;
                }
                Layer::Dropout { rate } => {
                    buf.push(7);
                    buf.extend_from_slice(&rate.to_le_bytes());
                }
            }
        }
        for layer in layers {
            for p in layer.params() {
                put_blob(&mut buf, p.data())?;
            }
            if let Layer::BatchNorm2d(bn) = layer {
                put_blob(&mut buf, &bn.running_mean)?;
                put_blob(&mut buf, &bn.running_var)?;
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Checkpoint(format!("file truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an IATM checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", version)));
        }
        let meta_len = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut layers: Vec<Layer<f32>> = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let tag = r.take(1)?[0];
            let layer = match tag {
                1 => {
                    let (i, o, k, s, p) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                    Layer::Conv2d(Conv2d {
                        in_channels: i,
                        out_channels: o,
                        kernel: k,
                        stride: s,
                        padding: p,
                        weight: Tensor::zeros(vec![o, i, k, k]),
                        bias: Tensor::zeros(vec![o]),
                    })
                }
                2 => {
                    let ch = r.usize()?;
                    let mut bn = BatchNorm2d::new(ch);
                    bn.eps = r.f64()?;
                    bn.momentum = r.f64()?;
                    Layer::BatchNorm2d(bn)
                }
                3 => Layer::Relu,
                4 => Layer::MaxPool2d {
                    kernel: r.usize()?,
                    stride: r.usize()?,
                },
                5 => Layer::GlobalAvgPool,
                6 => {
                    let (i, o) = (r.usize()?, r.usize()?);
                    Layer::Linear(Linear {
                        in_features: i,
                        out_features: o,
                        weight: Tensor::zeros(vec![o, i]),
                        bias: Tensor::zeros(vec![o]),
                    })
                }
                7 => Layer::Dropout { rate: r.f64()? },
                other => return Err(Error::Checkpoint(format!("unknown layer tag {}", other))),
            };
            layers.push(layer);
        }
        for layer in layers.iter_mut() {
            for p in layer.params_mut() {
                let values = r.blob(p.len())?;
                p.data_mut().copy_from_slice(&values);
            }
            if let Layer::BatchNorm2d(bn) = layer {
                bn.running_mean = r.blob(bn.channels)?;
                bn.running_var = r.blob(bn.channels)?;
            }
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            metadata,
            network: Sequential::new(layers),
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self, expected: usize) -> Result<Vec<f32>> {
        let n = self.usize()?;
        if n != expected {
            return Err(Error::Checkpoint(format!("blob has {} values, layer needs {}", n, expected)));
        }
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(&ckpt.to_bytes()?)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
