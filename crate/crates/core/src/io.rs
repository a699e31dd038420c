//! Binary file formats: `NDX1` matrices and the named-tensor checkpoint container.
//!
//! `NDX1`: magic `NDX1`, `u32` rank, `rank` x `u32` dims, then row-major `f64`
//! values; all little-endian.
//!
//! Checkpoint: magic `ESCK`, `u32` version, `u32` descriptor length and the
//! UTF-8 descriptor text, `u32` entry count, entries of (`u32` name length,
//! name, `u32` rank, dims, `u64` value offset), then all values as
//! little-endian `f64` in entry order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::Tensor;
use crate::signal::RawRecording;

const NDX_MAGIC: &[u8; 4] = b"NDX1";
const CKPT_MAGIC: &[u8; 4] = b"ESCK";
const CKPT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(self.pos, "size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::parse(self.pos - 4, format!("implausible rank {rank}")));
        }
        (0..rank).map(|_| self.u32("dimension").map(|d| d as usize)).collect()
    }
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
}

pub fn encode_ndx(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + 8 * t.len());
    out.extend_from_slice(NDX_MAGIC);
    put_shape(&mut out, t.shape());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_ndx(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != NDX_MAGIC {
        return Err(Error::parse(0, "bad magic, expected NDX1"));
    }
    let shape = r.shape()?;
    let n: usize = shape.iter().product();
    let data = r.f64s(n, "values")?;
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after matrix"));
    }
    Tensor::from_vec(&shape, data)
}

pub fn write_ndx(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_ndx(t))?;
    Ok(())
}

pub fn read_ndx(path: &Path) -> Result<Tensor> {
    decode_ndx(&fs::read(path)?)
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn write_sidecars(path: &Path, names: &[String], rate: f64) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(sidecar(path, ".names"), text)?;
    fs::write(sidecar(path, ".rate"), format!("{rate}\n"))?;
    Ok(())
}

fn read_sidecars(path: &Path) -> Result<(Vec<String>, f64)> {
    let names = fs::read_to_string(sidecar(path, ".names"))?
        .lines()
        .map(str::to_string)
        .collect();
    let rate_text = fs::read_to_string(sidecar(path, ".rate"))?;
    let rate = rate_text
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(0, format!("rate sidecar: {e}")))?;
    Ok((names, rate))
}

/// Writes `[T x D]` frames plus `.names` (one per line) and `.rate` sidecars.
pub fn write_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    let t = Tensor::from_rows(f.frames())?;
    let t = if f.is_empty() { Tensor::zeros(&[0, f.dim()]) } else { t };
    write_ndx(path, &t)?;
    write_sidecars(path, f.names(), f.frame_rate_hz())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let t = read_ndx(path)?;
    let (names, rate) = read_sidecars(path)?;
    FeatureSequence::new(t.to_rows(), rate, names)
}

/// Writes `[channels x samples]` with channel labels and sample rate sidecars.
pub fn write_recording(path: &Path, r: &RawRecording) -> Result<()> {
    let t = Tensor::matrix(
        r.n_channels(),
        r.n_samples(),
        r.samples().iter().flatten().copied().collect(),
    )?;
    write_ndx(path, &t)?;
    write_sidecars(path, r.channel_labels(), r.sample_rate_hz())
}

pub fn read_recording(path: &Path) -> Result<RawRecording> {
    let t = read_ndx(path)?;
    let (names, rate) = read_sidecars(path)?;
    RawRecording::new(t.to_rows(), rate, names)
}

/// Named tensors with a text descriptor (topology and scalar metadata).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(descriptor: impl Into<String>) -> Self {
        Self {
            descriptor: descriptor.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Lookup {
            kind: "checkpoint tensor",
            name: name.to_string(),
        })
    }

    /// Value of a `key=value` descriptor line.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.descriptor.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_shape(&mut out, t.shape());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != CKPT_MAGIC {
            return Err(Error::parse(0, "bad magic, expected ESCK"));
        }
        let version = r.u32("version")?;
        if version != CKPT_VERSION {
            return Err(Error::parse(4, format!("unsupported checkpoint version {version}")));
        }
        let dlen = r.u32("descriptor length")? as usize;
        let at = r.pos;
        let descriptor = std::str::from_utf8(r.take(dlen, "descriptor")?)
            .map_err(|e| Error::parse(at, format!("descriptor is not UTF-8: {e}")))?
            .to_string();
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(nlen, "name")?)
                .map_err(|e| Error::parse(at, format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let shape = r.shape()?;
            let offset = r.u64("offset")?;
            entries.push((name, shape, offset, r.pos));
        }
        let data_start = r.pos;
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset, at) in entries {
            if offset != expected {
                return Err(Error::parse(at - 8, format!("tensor {name}: offset {offset}, expected {expected}")));
            }
            let n: usize = shape.iter().product();
            let data = r.f64s(n, &format!("tensor {name}"))?;
            expected += n as u64;
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(r.pos, format!("trailing bytes after data section starting at {data_start}")));
        }
        Ok(Self { descriptor, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
