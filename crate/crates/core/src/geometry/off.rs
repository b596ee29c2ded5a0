//! ASCII OFF reader and writer for triangle meshes.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{Point, TriangleMesh};
use crate::error::{Error, Result};

pub fn write_off<W: Write>(mesh: &TriangleMesh, mut out: W) -> Result<()> {
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", mesh.num_vertices(), mesh.num_triangles())?;
    for v in &mesh.vertices {
        // 17 significant digits
        writeln!(out, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z)?;
    }
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_off<R: BufRead>(input: R) -> Result<TriangleMesh> {
    let mut tokens = Vec::new();
    for line in input.lines() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let mut it = tokens.into_iter();
    match it.next().as_deref() {
        Some("OFF") => {}
        other => return Err(Error::Parse(format!("expected OFF header, found {other:?}"))),
    }
    let next_usize = |what: &str, it: &mut std::vec::IntoIter<String>| -> Result<usize> {
        it.next()
            .ok_or_else(|| Error::Parse(format!("unexpected end of file reading {what}")))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
    };
    let nv = next_usize("vertex count", &mut it)?;
    let nf = next_usize("face count", &mut it)?;
    let _ne = next_usize("edge count", &mut it)?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let mut xyz = [0.0; 3];
        for c in xyz.iter_mut() {
            *c = it
                .next()
                .ok_or_else(|| Error::Parse(format!("missing coordinate for vertex {i}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("vertex {i}: {e}")))?;
        }
        vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for f in 0..nf {
        let k = next_usize("face arity", &mut it)?;
        if k != 3 {
            return Err(Error::Parse(format!("face {f} has {k} vertices; only triangles are supported")));
        }
        let mut tri = [0usize; 3];
        for idx in tri.iter_mut() {
            *idx = next_usize("face index", &mut it)?;
            if *idx >= nv {
                return Err(Error::Parse(format!("face {f} references vertex {idx}")));
            }
        }
        triangles.push(tri);
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

pub fn save_off(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_off(mesh, std::io::BufWriter::new(file))
}

pub fn load_off(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    read_off(std::io::BufReader::new(file))
}
