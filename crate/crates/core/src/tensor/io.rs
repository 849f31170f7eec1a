//! `PTNT` binary tensor blocks: magic, u32 rank, u32 dims, then the
//! little-endian f32 payload.

use std::io::{self, Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const PTNT_MAGIC: &[u8; 4] = b"PTNT";
const MAX_RANK: u32 = 8;
/// Upper bound on elements accepted from a file (1 GiB of payload).
const MAX_ELEMENTS: usize = 1 << 28;
const READ_CHUNK: usize = 1 << 14;

pub fn write_ptnt<W: Write>(out: &mut W, tensor: &Tensor) -> Result<()> {
    out.write_all(PTNT_MAGIC)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| Error::dim(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(tensor.len() * 4);
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(eof_as_format)?;
    Ok(u32::from_le_bytes(b))
}

fn eof_as_format(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated PTNT block".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_ptnt<R: Read>(input: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(eof_as_format)?;
    if &magic != PTNT_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(input)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!(
            "tensor rank {rank} outside 1..={MAX_RANK}"
        )));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut len = 1usize;
    for _ in 0..rank {
        let d = read_u32(input)? as usize;
        if d == 0 {
            return Err(Error::Format("zero-sized tensor dimension".into()));
        }
        len = len
            .checked_mul(d)
            .filter(|&l| l <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Format(format!("tensor too large: {shape:?} x {d}")))?;
        shape.push(d);
    }

    // Grow as bytes arrive so a lying header cannot force a huge allocation.
    let mut data = Vec::with_capacity(len.min(READ_CHUNK));
    let mut buf = vec![0u8; READ_CHUNK * 4];
    while data.len() < len {
        let take = (len - data.len()).min(READ_CHUNK);
        let bytes = &mut buf[..take * 4];
        input.read_exact(bytes).map_err(eof_as_format)?;
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    Tensor::from_vec(&shape, data)
}

impl Tensor {
    pub fn to_ptnt_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + 4 * self.len());
        write_ptnt(&mut out, self).expect("writing to a Vec cannot fail");
        out
    }

    /// Decodes exactly one block; trailing bytes are an error.
    pub fn from_ptnt_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut cursor = bytes;
        let t = read_ptnt(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor block",
                cursor.len()
            )));
        }
        Ok(t)
    }

    pub fn save_ptnt(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        write_ptnt(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_ptnt(path: impl AsRef<std::path::Path>) -> Result<Tensor> {
        Tensor::from_ptnt_bytes(&std::fs::read(path)?)
    }
}
