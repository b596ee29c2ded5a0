//! Binary block format: magic `SBK1`, then little-endian `u32` tag, target,
//! source, `u64` rows, cols, followed by the values in row-major order.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{KernelBlock, OperatorTag};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SBK1";

pub fn write_block<W: Write>(mut w: W, block: &KernelBlock) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [block.tag.code(), block.target as u32, block.source as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let (rows, cols) = block.matrix.shape();
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 8);
    for r in 0..rows {
        for c in 0..cols {
            buf.extend_from_slice(&block.matrix[(r, c)].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_block<R: Read>(mut r: R) -> Result<KernelBlock> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Parse("not a kernel block".into()));
    }
    let code = u32::from_le_bytes(read_array(&mut r)?);
    let tag = OperatorTag::from_code(code).ok_or_else(|| Error::Parse(format!("unknown operator tag {code}")))?;
    let target = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let source = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut data = vec![0u8; rows * cols * 8];
    r.read_exact(&mut data)?;
    let matrix = DMatrix::from_fn(rows, cols, |i, j| {
        let o = 8 * (i * cols + j);
        f64::from_le_bytes(data[o..o + 8].try_into().unwrap())
    });
    Ok(KernelBlock {
        tag,
        target,
        source,
        matrix,
    })
}
