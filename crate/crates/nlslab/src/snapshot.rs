//! Field snapshot files.
//!
//! Format "NLSFLD1": the ASCII magic `NLSFLD1\n`, a 4-byte little-endian
//! header length, a UTF-8 JSON header `{dimension, kind, side_lengths,
//! grid_points, time_stamp}`, then the row-major values as interleaved
//! little-endian f64 pairs (re, im).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{DomainKind, DomainSpec, Field};

const MAGIC: &[u8; 8] = b"NLSFLD1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    dimension: usize,
    kind: DomainKind,
    side_lengths: Vec<f64>,
    grid_points: Vec<usize>,
    time_stamp: f64,
}

pub fn write_field<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let header = Header {
        dimension: field.domain.dimension,
        kind: field.domain.kind,
        side_lengths: field.domain.side_lengths.clone(),
        grid_points: field.domain.grid_points.clone(),
        time_stamp: field.time_stamp,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    let mut buf = Vec::with_capacity(field.values.len() * 16);
    for v in field.values.iter() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::SnapshotFormat("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let domain = DomainSpec::new(header.kind, header.side_lengths, header.grid_points)?;
    if domain.dimension != header.dimension {
        return Err(Error::SnapshotFormat("dimension disagrees with axes".into()));
    }
    let total = domain.num_points();
    let mut data = vec![0u8; total * 16];
    r.read_exact(&mut data)?;
    let mut values = Vec::with_capacity(total);
    for chunk in data.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
        values.push(Complex64::new(re, im));
    }
    Ok(Field {
        values: ArrayD::from_shape_vec(IxDyn(domain.shape()), values)
            .map_err(|e| Error::SnapshotFormat(e.to_string()))?,
        domain,
        time_stamp: header.time_stamp,
    })
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    let mut buf = Vec::new();
    write_field(&mut buf, field)?;
    // write-temp-then-rename keeps partial files out of output directories
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<Field> {
    let data = std::fs::read(path)?;
    read_field(&data[..])
}
