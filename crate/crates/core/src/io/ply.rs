use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::Vector3;

use super::IoError;
use crate::model::{quat_from_wxyz, Gaussian, SH_COEFFS};

/// Scalar property types of the binary point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => LittleEndian::read_i16(b) as f64,
            Self::U16 => LittleEndian::read_u16(b) as f64,
            Self::I32 => LittleEndian::read_i32(b) as f64,
            Self::U32 => LittleEndian::read_u32(b) as f64,
            Self::F32 => LittleEndian::read_f32(b) as f64,
            Self::F64 => LittleEndian::read_f64(b),
        }
    }
}

/// Properties the splat reader does not interpret, kept byte-for-byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtraProperties {
    pub names: Vec<(String, PlyType)>,
    /// `record_size() * count` bytes, record-major.
    pub data: Vec<u8>,
}

impl ExtraProperties {
    pub fn record_size(&self) -> usize {
        self.names.iter().map(|(_, t)| t.size()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatFile {
    pub gaussians: Vec<Gaussian>,
    pub extra: ExtraProperties,
}

struct Header {
    count: usize,
    props: Vec<(String, PlyType)>,
}

fn parse_header(r: &mut impl BufRead) -> Result<Header, IoError> {
    let bad = |m: &str| IoError::MalformedHeader(m.to_string());
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<(), IoError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(())
    };
    next(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(bad("missing 'ply' magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut format_ok = false;
    let mut in_vertex = false;
    loop {
        next(&mut line)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => return Err(IoError::MalformedHeader(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(bad("duplicate vertex element"));
                }
                count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", name, _] => return Err(IoError::MalformedHeader(format!("unexpected element {name}"))),
            ["property", "list", ..] => return Err(bad("list properties are not supported")),
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(bad("property before vertex element"));
                }
                let t = PlyType::parse(ty).ok_or_else(|| IoError::MalformedHeader(format!("unknown type {ty}")))?;
                props.push((name.to_string(), t));
            }
            _ => return Err(IoError::MalformedHeader(format!("unexpected line {:?}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(bad("missing format line"));
    }
    Ok(Header {
        count: count.ok_or_else(|| bad("missing vertex element"))?,
        props,
    })
}

/// Column of each interpreted field, or `None`.
struct Layout {
    offsets: Vec<usize>,
    types: Vec<PlyType>,
    stride: usize,
    xyz: [usize; 3],
    dc: [usize; 3],
    rest: Vec<usize>,
    opacity: usize,
    scale: [usize; 3],
    rot: [usize; 4],
    extra: Vec<usize>,
}

fn layout(props: &[(String, PlyType)]) -> Result<Layout, IoError> {
    let find = |name: &str| {
        props
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| IoError::MalformedHeader(format!("missing property {name}")))
    };
    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, t) in props {
        offsets.push(stride);
        stride += t.size();
    }
    let rest_count = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    if rest_count > 45 {
        return Err(IoError::UnsupportedShDegree(rest_count));
    }
    if ![0, 9, 24, 45].contains(&rest_count) {
        return Err(IoError::TruncatedRecord(format!(
            "{rest_count} f_rest properties do not form whole SH bands"
        )));
    }
    let rest = (0..rest_count)
        .map(|k| find(&format!("f_rest_{k}")))
        .collect::<Result<Vec<_>, _>>()?;
    let l = Layout {
        xyz: [find("x")?, find("y")?, find("z")?],
        dc: [find("f_dc_0")?, find("f_dc_1")?, find("f_dc_2")?],
        rest,
        opacity: find("opacity")?,
        scale: [find("scale_0")?, find("scale_1")?, find("scale_2")?],
        rot: [find("rot_0")?, find("rot_1")?, find("rot_2")?, find("rot_3")?],
        offsets,
        types: props.iter().map(|p| p.1).collect(),
        stride,
        extra: Vec::new(),
    };
    let known: Vec<usize> = l
        .xyz
        .iter()
        .chain(&l.dc)
        .chain(&l.rest)
        .chain(std::iter::once(&l.opacity))
        .chain(&l.scale)
        .chain(&l.rot)
        .copied()
        .collect();
    let extra = (0..props.len()).filter(|i| !known.contains(i)).collect();
    Ok(Layout { extra, ..l })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn read_splats_from(r: impl Read) -> Result<SplatFile, IoError> {
    let mut r = BufReader::new(r);
    let header = parse_header(&mut r)?;
    let l = layout(&header.props)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let want = l.stride * header.count;
    if body.len() != want {
        return Err(IoError::TruncatedRecord(format!(
            "{} vertices of {} bytes need {want} bytes, file has {}",
            header.count,
            l.stride,
            body.len()
        )));
    }
    let per_channel = l.rest.len() / 3;
    let mut out = SplatFile {
        gaussians: Vec::with_capacity(header.count),
        extra: ExtraProperties {
            names: l.extra.iter().map(|&i| header.props[i].clone()).collect(),
            data: Vec::new(),
        },
    };
    for (idx, rec) in body.chunks_exact(l.stride.max(1)).enumerate().take(header.count) {
        let f = |i: usize| l.types[i].read(&rec[l.offsets[i]..]);
        let mut sh = [[0.0; 3]; SH_COEFFS];
        for c in 0..3 {
            sh[0][c] = f(l.dc[c]);
            for k in 1..=per_channel {
                sh[k][c] = f(l.rest[c * per_channel + k - 1]);
            }
        }
        let q = [f(l.rot[0]), f(l.rot[1]), f(l.rot[2]), f(l.rot[3])];
        if !(q.iter().map(|v| v * v).sum::<f64>() > 0.0) {
            return Err(IoError::InvalidData(format!("vertex {idx}: zero rotation")));
        }
        let g = Gaussian {
            mean: Vector3::new(f(l.xyz[0]), f(l.xyz[1]), f(l.xyz[2])),
            scale: Vector3::new(f(l.scale[0]).exp(), f(l.scale[1]).exp(), f(l.scale[2]).exp()),
            rotation: quat_from_wxyz(q),
            falloff: sigmoid(f(l.opacity)),
            sh,
        };
        g.validate()
            .map_err(|e| IoError::InvalidData(format!("vertex {idx}: {e}")))?;
        out.gaussians.push(g);
        for &i in &l.extra {
            out.extra.data.extend_from_slice(&rec[l.offsets[i]..l.offsets[i] + l.types[i].size()]);
        }
    }
    Ok(out)
}

pub fn read_splat_file(path: impl AsRef<Path>) -> Result<SplatFile, IoError> {
    read_splats_from(File::open(path)?)
}

pub fn read_splats(path: impl AsRef<Path>) -> Result<Vec<Gaussian>, IoError> {
    Ok(read_splat_file(path)?.gaussians)
}

/// Write degree-3 records; `extra` must hold one record per Gaussian (or be empty).
pub fn write_splats_to(w: impl Write, file: &SplatFile) -> Result<(), IoError> {
    let n = file.gaussians.len();
    let extra_size = file.extra.record_size();
    if extra_size * n != file.extra.data.len() {
        return Err(IoError::InvalidData(format!(
            "extra properties hold {} bytes, expected {}",
            file.extra.data.len(),
            extra_size * n
        )));
    }
    let mut w = BufWriter::new(w);
    writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {n}")?;
    for name in ["x", "y", "z"] {
        writeln!(w, "property float {name}")?;
    }
    for (name, t) in &file.extra.names {
        writeln!(w, "property {} {name}", t.name())?;
    }
    for k in 0..3 {
        writeln!(w, "property float f_dc_{k}")?;
    }
    for k in 0..45 {
        writeln!(w, "property float f_rest_{k}")?;
    }
    writeln!(w, "property float opacity")?;
    for k in 0..3 {
        writeln!(w, "property float scale_{k}")?;
    }
    for k in 0..4 {
        writeln!(w, "property float rot_{k}")?;
    }
    writeln!(w, "end_header")?;
    for (i, g) in file.gaussians.iter().enumerate() {
        if !(0.0..=1.0).contains(&g.falloff) {
            return Err(IoError::InvalidData(format!("falloff {} of splat {i} is not an opacity", g.falloff)));
        }
        let mut put = |v: f64| w.write_f32::<LittleEndian>(v as f32);
        for k in 0..3 {
            put(g.mean[k])?;
        }
        w.write_all(&file.extra.data[i * extra_size..(i + 1) * extra_size])?;
        let mut put = |v: f64| w.write_f32::<LittleEndian>(v as f32);
        for c in 0..3 {
            put(g.sh[0][c])?;
        }
        for c in 0..3 {
            for k in 1..SH_COEFFS {
                put(g.sh[k][c])?;
            }
        }
        put(logit(g.falloff))?;
        for k in 0..3 {
            put(g.scale[k].ln())?;
        }
        for v in g.quat_wxyz() {
            put(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_splat_file(path: impl AsRef<Path>, file: &SplatFile) -> Result<(), IoError> {
    write_splats_to(File::create(path)?, file)
}

pub fn write_splats(path: impl AsRef<Path>, gaussians: &[Gaussian]) -> Result<(), IoError> {
    write_splat_file(
        path,
        &SplatFile {
            gaussians: gaussians.to_vec(),
            extra: ExtraProperties::default(),
        },
    )
}
