use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::IoError;
use crate::frame::{Image, Plane};

/// 8-bit RGB PNG; values are clamped to [0, 1].
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<(), IoError> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flatten()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| IoError::InvalidData("pixel count does not match size".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image, IoError> {
    let buf = image::open(path)?.to_rgb8();
    let (w, h) = buf.dimensions();
    let mut img = Image::new(w as usize, h as usize);
    for (dst, px) in img.pixels.iter_mut().zip(buf.pixels()) {
        *dst = px.0.map(|v| v as f64 / 255.0);
    }
    Ok(img)
}

/// Raw dump: u32 width, u32 height, then each plane as row-major f32.
pub fn write_planes(path: impl AsRef<Path>, planes: &[&Plane]) -> Result<(), IoError> {
    let (w, h) = planes.first().map_or((0, 0), |p| (p.width, p.height));
    if planes.iter().any(|p| (p.width, p.height) != (w, h)) {
        return Err(IoError::InvalidData("planes differ in size".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_u32::<LittleEndian>(w as u32)?;
    out.write_u32::<LittleEndian>(h as u32)?;
    for p in planes {
        for &v in &p.data {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_planes(path: impl AsRef<Path>) -> Result<Vec<Plane>, IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(IoError::MalformedHeader("plane dump shorter than its header".into()));
    }
    let w = LittleEndian::read_u32(&bytes[0..4]) as usize;
    let h = LittleEndian::read_u32(&bytes[4..8]) as usize;
    let body = &bytes[8..];
    let plane_bytes = w * h * 4;
    if plane_bytes == 0 || body.len() % plane_bytes != 0 {
        return Err(IoError::TruncatedRecord(format!(
            "{} bytes is not a whole number of {w}x{h} planes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(plane_bytes)
        .map(|c| Plane {
            width: w,
            height: h,
            data: c.chunks_exact(4).map(|b| LittleEndian::read_f32(b) as f64).collect(),
        })
        .collect())
}
