//! Little-endian primitives shared by the M3GS / M3PB / M3FT containers.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{format_err, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Longest accepted length-prefixed name, in bytes.
const MAX_NAME_LEN: u32 = 1 << 16;

fn map_eof(err: io::Error, what: &str) -> Error {
    if err.kind() == io::ErrorKind::UnexpectedEof {
        format_err(format!("truncated file while reading {what}"))
    } else {
        Error::Io(err)
    }
}

pub fn write_header<W: Write>(w: &mut W, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(|e| map_eof(e, "magic"))?;
    if &found != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|e| map_eof(e, what))
}

pub fn read_f32<R: Read>(r: &mut R, what: &str) -> Result<f32> {
    r.read_f32::<LittleEndian>().map_err(|e| map_eof(e, what))
}

pub fn read_f32_into<R: Read>(r: &mut R, dst: &mut [f32], what: &str) -> Result<()> {
    r.read_f32_into::<LittleEndian>(dst).map_err(|e| map_eof(e, what))
}

pub fn read_f32_vec<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<f32>> {
    let mut v = vec![0f32; len];
    read_f32_into(r, &mut v, what)?;
    Ok(v)
}

pub fn write_f32_slice<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_f32::<LittleEndian>(v)?;
    Ok(())
}

/// u32 byte length followed by UTF-8 bytes.
pub fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    write_u32(w, to_u32(name.len(), "name length")?)?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

pub fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r, "name length")?;
    if len > MAX_NAME_LEN {
        return Err(format_err(format!("name length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(|e| map_eof(e, "name"))?;
    String::from_utf8(buf).map_err(|_| format_err("name is not valid UTF-8"))
}

pub fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Dimension(format!("{what} {v} does not fit in u32")))
}

/// Fails unless the reader is exhausted.
pub fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(format_err("trailing bytes after payload")),
    }
}

/// Checked product used when sizing buffers from header fields.
pub fn checked_len(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize).ok_or_else(|| format_err("header dimensions overflow")))
}
