//! Little-endian primitives shared by the binary file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn put_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn take<R: Read, const N: usize>(r: &mut R, context: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated { context }
        } else {
            Error::from(e)
        }
    })?;
    Ok(buf)
}

pub(crate) fn get_u16<R: Read>(r: &mut R, context: &'static str) -> Result<u16> {
    Ok(u16::from_le_bytes(take::<R, 2>(r, context)?))
}

pub(crate) fn get_u32<R: Read>(r: &mut R, context: &'static str) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<R, 4>(r, context)?))
}

pub(crate) fn get_f32<R: Read>(r: &mut R, context: &'static str) -> Result<f32> {
    Ok(f32::from_le_bytes(take::<R, 4>(r, context)?))
}

pub(crate) fn get_f32_vec<R: Read>(
    r: &mut R,
    len: usize,
    context: &'static str,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(get_f32(r, context)?);
    }
    Ok(out)
}

pub(crate) fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    context: &'static str,
) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated { context }
        } else {
            Error::from(e)
        }
    })
}
