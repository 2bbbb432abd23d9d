//! Flat binary weight checkpoints.
//!
//! Layout: the magic string `FBRW1`, then one record per parameter:
//! name length (u32 LE), name bytes (UTF-8), shape rank (u32 LE), extents
//! (u64 LE each), then the values as little-endian 64-bit floats. Records
//! repeat until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FbrError, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 5] = b"FBRW1";

pub fn save(path: &Path, params: &[(String, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, tensor) in params {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| FbrError::Config("checkpoint too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(FbrError::Config(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut params = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| FbrError::Config("non-UTF8 parameter name".into()))?;
        r.read_exact(&mut len4)?;
        let rank = u32::from_le_bytes(len4) as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut len8 = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut len8)?;
            shape.push(u64::from_le_bytes(len8) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut len8)?;
            data.push(f64::from_le_bytes(len8));
        }
        params.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(params)
}
