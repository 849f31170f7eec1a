//! Model files: magic `PTNM`, u32 version, u32 length + JSON header holding
//! the network spec and metadata, then one `PTNT` block per parameter tensor
//! (weights, then bias) in layer order. All integers little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelMeta, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{read_ptnt, write_ptnt};

pub const MODEL_MAGIC: &[u8; 4] = b"PTNM";
pub const MODEL_VERSION: u32 = 1;
const MAX_HEADER: usize = 16 << 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    #[serde(default)]
    meta: ModelMeta,
}

impl Model {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
        })?;
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for p in self.params() {
            write_ptnt(out, &p.weights)?;
            write_ptnt(out, &p.bias)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut cursor = bytes;
        let model = Model::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model",
                cursor.len()
            )));
        }
        Ok(model)
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Model> {
        let mut word = [0u8; 4];
        read_exact(input, &mut word)?;
        if &word != MODEL_MAGIC {
            return Err(Error::Format(format!("bad model magic {word:?}")));
        }
        read_exact(input, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        read_exact(input, &mut word)?;
        let len = u32::from_le_bytes(word) as usize;
        if len > MAX_HEADER {
            return Err(Error::Format(format!(
                "model header of {len} bytes is too large"
            )));
        }
        let mut header = vec![0u8; len];
        read_exact(input, &mut header)?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("model header: {e}")))?;

        let mut model = Model::zeroed(header.spec).map_err(|e| match e {
            Error::Build { layer, reason } => {
                Error::Format(format!("model spec invalid at layer {layer}: {reason}"))
            }
            other => other,
        })?;
        model.meta = header.meta;
        for p in model.params_mut() {
            for dst in [&mut p.weights, &mut p.bias] {
                let t = read_ptnt(input)?;
                if t.shape() != dst.shape() {
                    return Err(Error::Format(format!(
                        "parameter block {:?} does not match expected {:?}",
                        t.shape(),
                        dst.shape()
                    )));
                }
                *dst = t;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&std::fs::read(path)?)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated model file".into())
        } else {
            Error::Io(e)
        }
    })
}
