//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`, all values little-endian `f32`):
//!
//! ```text
//! "SVCK" | version | model-name | entry-count | entry*
//! entry      = name | ndim | dim* | value*
//! model-name = len | utf8 bytes
//! name       = len | utf8 bytes
//! ```
//!
//! Entry names are the layer names of the network (`conv_0.weight`,
//! `res_1.conv_a.bn.running_mean`, `tr_conv3d_4.bias`, ...). Optimizer state
//! is stored as additional entries under the `adam.` prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SVCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(model: impl Into<String>) -> Self {
        Checkpoint {
            model: model.into(),
            entries: Vec::new(),
        }
    }

    /// Snapshot of every parameter and buffer of `module`.
    pub fn from_module<T: Scalar>(model: impl Into<String>, module: &impl Module<T>) -> Self {
        let mut ck = Checkpoint::new(model);
        for s in module.state() {
            let values = s.tensor.data().iter().map(|v| v.to_f64c() as f32).collect();
            ck.push(s.name, s.tensor.shape().to_vec(), values);
        }
        ck
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) {
        self.entries.push(Entry {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Copies stored values into `module`. Every module tensor must be present
    /// with the same shape; unrelated entries are ignored.
    pub fn load_into<T: Scalar>(
        &self,
        expected_model: &str,
        module: &impl Module<T>,
    ) -> Result<()> {
        if self.model != expected_model {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds model `{}`, expected `{expected_model}`",
                self.model
            )));
        }
        for s in module.state() {
            let e = self
                .get(&s.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", s.name)))?;
            if e.shape != s.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    s.name,
                    e.shape,
                    s.tensor.shape()
                )));
            }
            let mut dst = s.tensor.data_mut();
            for (d, &v) in dst.iter_mut().zip(&e.values) {
                *d = T::from_f64c(v as f64);
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(w, &self.model)?;
        write_u32(w, self.entries.len())?;
        for e in &self.entries {
            write_str(w, &e.name)?;
            write_u32(w, e.shape.len())?;
            for &d in &e.shape {
                write_u32(w, d)?;
            }
            for v in &e.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let model = read_str(r)?;
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            read_exact(r, &mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(Entry {
                name,
                shape,
                values,
            });
        }
        Ok(Checkpoint { model, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write-then-rename so an interrupted save never clobbers a good file.
        let tmp = path.with_extension("svck.tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "implausible string length {len}"
        )));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("invalid utf-8 name: {e}")))
}
