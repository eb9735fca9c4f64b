use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::IoError;
use crate::model::{quat_from_wxyz, Aabb, Gaussian, Hierarchy, HierarchyNode, SH_COEFFS};

pub const HIERARCHY_MAGIC: [u8; 4] = *b"H3DG";
pub const HIERARCHY_VERSION: u32 = 1;
/// 3 u32 links + 65 f32 attributes.
pub const NODE_RECORD_BYTES: usize = 3 * 4 + (6 + 3 + 3 + 4 + 1 + 48) * 4;

const NONE: u32 = u32::MAX;

fn index(v: usize) -> Result<u32, IoError> {
    u32::try_from(v)
        .ok()
        .filter(|&v| v != NONE)
        .ok_or_else(|| IoError::InvalidData(format!("node index {v} does not fit the format")))
}

pub fn write_hierarchy_to(w: impl Write, h: &Hierarchy) -> Result<(), IoError> {
    let mut w = BufWriter::new(w);
    w.write_all(&HIERARCHY_MAGIC)?;
    w.write_u32::<LittleEndian>(HIERARCHY_VERSION)?;
    w.write_u64::<LittleEndian>(h.len() as u64)?;
    w.write_u32::<LittleEndian>(h.sh_degree)?;
    for n in &h.nodes {
        w.write_u32::<LittleEndian>(n.parent.map(index).transpose()?.unwrap_or(NONE))?;
        w.write_u32::<LittleEndian>(if n.is_leaf() { NONE } else { index(n.first_child)? })?;
        w.write_u32::<LittleEndian>(index(n.child_count)?)?;
        let g = &n.gaussian;
        let floats = n
            .bounds
            .min
            .iter()
            .chain(n.bounds.max.iter())
            .chain(g.mean.iter())
            .chain(g.scale.iter())
            .copied()
            .chain(g.quat_wxyz())
            .chain(std::iter::once(g.falloff))
            .chain(g.sh.iter().flatten().copied());
        for v in floats {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_hierarchy(path: impl AsRef<Path>, h: &Hierarchy) -> Result<(), IoError> {
    write_hierarchy_to(File::create(path)?, h)
}

pub fn read_hierarchy_from(r: impl Read) -> Result<Hierarchy, IoError> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    let header = |e: std::io::Error| IoError::MalformedHeader(format!("hierarchy header: {e}"));
    r.read_exact(&mut magic).map_err(header)?;
    if magic != HIERARCHY_MAGIC {
        return Err(IoError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(header)?;
    if version != HIERARCHY_VERSION {
        return Err(IoError::MalformedHeader(format!("unsupported version {version}")));
    }
    let count = r.read_u64::<LittleEndian>().map_err(header)? as usize;
    let sh_degree = r.read_u32::<LittleEndian>().map_err(header)?;
    if sh_degree > 3 {
        return Err(IoError::UnsupportedShDegree(sh_degree as usize));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if Some(body.len()) != count.checked_mul(NODE_RECORD_BYTES) {
        return Err(IoError::TruncatedRecord(format!(
            "{count} nodes need {} bytes, found {}",
            count.saturating_mul(NODE_RECORD_BYTES),
            body.len()
        )));
    }
    let mut nodes = Vec::with_capacity(count);
    for mut rec in body.chunks_exact(NODE_RECORD_BYTES) {
        let parent = rec.read_u32::<LittleEndian>()?;
        let first = rec.read_u32::<LittleEndian>()?;
        let child_count = rec.read_u32::<LittleEndian>()? as usize;
        let mut f = [0f64; 65];
        for v in &mut f {
            *v = rec.read_f32::<LittleEndian>()? as f64;
        }
        let v3 = |o: usize| Vector3::new(f[o], f[o + 1], f[o + 2]);
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for (k, c) in sh.iter_mut().enumerate() {
            c.copy_from_slice(&f[17 + 3 * k..20 + 3 * k]);
        }
        if child_count > 0 && first == NONE {
            return Err(IoError::InvalidData("interior node without first child".into()));
        }
        nodes.push(HierarchyNode {
            gaussian: Gaussian {
                mean: v3(6),
                scale: v3(9),
                rotation: quat_from_wxyz([f[12], f[13], f[14], f[15]]),
                falloff: f[16],
                sh,
            },
            bounds: Aabb { min: v3(0), max: v3(3) },
            parent: (parent != NONE).then_some(parent as usize),
            first_child: if child_count == 0 { 0 } else { first as usize },
            child_count,
        });
    }
    let h = Hierarchy { nodes, sh_degree };
    h.validate().map_err(|e| IoError::InvalidData(e.to_string()))?;
    Ok(h)
}

pub fn read_hierarchy(path: impl AsRef<Path>) -> Result<Hierarchy, IoError> {
    read_hierarchy_from(File::open(path)?)
}
