//! On-disk cache of kernel blocks, keyed by the meshes of a surface pair and
//! the quadrature settings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::bem_ops::{coupled_pairs, pair_blocks, read_block, write_block, KernelBlock, OperatorSet, QuadratureOptions};
use crate::error::Result;
use crate::geometry::NestedModel;

fn fnv(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x0100_0000_01b3);
    }
}

fn pair_path(dir: &Path, model: &NestedModel, i: usize, j: usize, opts: &QuadratureOptions) -> PathBuf {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    fnv(&mut h, &model.surfaces[i].content_hash().to_le_bytes());
    fnv(&mut h, &model.surfaces[j].content_hash().to_le_bytes());
    fnv(&mut h, &[(i == j) as u8]);
    fnv(&mut h, format!("{opts:?}").as_bytes());
    dir.join(format!("pair-{h:016x}.sbk"))
}

fn load(path: &Path, i: usize, j: usize) -> Result<Vec<KernelBlock>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    (0..u32::from_le_bytes(count))
        .map(|_| {
            // stored with indices (0, 1); relabel to the requested pair
            let mut b = read_block(&mut r)?;
            b.target = if b.target == 0 { i } else { j };
            b.source = if b.source == 0 { i } else { j };
            Ok(b)
        })
        .collect()
}

fn store(path: &Path, blocks: &[KernelBlock], i: usize) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&(blocks.len() as u32).to_le_bytes())?;
        for b in blocks {
            let mut local = b.clone();
            local.target = usize::from(b.target != i);
            local.source = usize::from(b.source != i);
            write_block(&mut w, &local)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Like [`OperatorSet::assemble`], reading and writing pair files in `dir`.
/// Unreadable cache files are recomputed.
pub fn assemble_cached(model: &NestedModel, opts: &QuadratureOptions, dir: &Path) -> Result<OperatorSet> {
    std::fs::create_dir_all(dir)?;
    let mut all = Vec::new();
    for (i, j) in coupled_pairs(model.num_surfaces()) {
        let path = pair_path(dir, model, i, j, opts);
        let blocks = match load(&path, i, j) {
            Ok(b) => b,
            Err(_) => {
                let b = pair_blocks(model, i, j, opts)?;
                store(&path, &b, i)?;
                b
            }
        };
        all.extend(blocks);
    }
    Ok(OperatorSet::from_blocks(all))
}
