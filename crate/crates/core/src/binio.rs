//! Little-endian primitives shared by the dataset and model file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("unexpected end of file"),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r)?))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    Ok(f32::from_le_bytes(read_array(r)?))
}

/// Reads a `u32` length prefix followed by that many bytes of UTF-8 text.
pub fn read_prefixed_str<R: Read>(r: &mut R, limit: usize) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > limit {
        return Err(Error::format(format!(
            "text block of {len} bytes exceeds limit"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("truncated text block"))?;
    String::from_utf8(buf).map_err(|_| Error::format("text block is not UTF-8"))
}

pub fn write_prefixed_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = read_array(r)?;
    if &got != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}
