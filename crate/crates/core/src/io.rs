//! Bit-exact file formats: the "MRT1" tensor container and binary
//! portable pixmaps (P5 gray / P6 RGB, maxval 255) for images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"MRT1";

/// Writes a tensor: magic "MRT1", u32-le rank, rank u32-le dims, then the
/// row-major f32-le payload.
pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(TENSOR_MAGIC).map_err(io_err)?;
    let rank = u32::try_from(t.rank())
        .map_err(|_| Error::InvalidArgument("tensor rank exceeds u32".into()))?;
    w.write_all(&rank.to_le_bytes()).map_err(io_err)?;
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes()).map_err(io_err)?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(name.clone(), e))?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(&name, "missing magic bytes"))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::format(&name, "bad magic bytes"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| Error::format(&name, "truncated header"))?;
    let rank = u32::from_le_bytes(buf4) as usize;
    if rank == 0 {
        return Err(Error::format(&name, "rank 0 tensor"));
    }
    if rank > 32 {
        return Err(Error::format(&name, "rank exceeds 32"));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        r.read_exact(&mut buf4)
            .map_err(|_| Error::format(&name, "truncated dims"))?;
        let d = u32::from_le_bytes(buf4) as usize;
        if d == 0 {
            return Err(Error::format(&name, "zero dimension"));
        }
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::format(&name, "dimension product overflow"))?;
        shape.push(d);
    }
    if numel > (1usize << 31) {
        return Err(Error::format(&name, "payload too large"));
    }
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(&name, "truncated payload"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(&name, e))? != 0 {
        return Err(Error::format(&name, "trailing bytes after payload"));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Writes an image as binary PNM: P5 for 1 channel, P6 for 3.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut w =
        BufWriter::new(File::create(path).map_err(|e| Error::io(name.clone(), e))?);
    let tag = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "unsupported channel count {c}"
            )))
        }
    };
    let header = format!("{tag}\n{} {}\n255\n", img.width(), img.height());
    w.write_all(header.as_bytes())
        .map_err(|e| Error::io(&name, e))?;
    w.write_all(&img.to_levels()).map_err(|e| Error::io(&name, e))?;
    w.flush().map_err(|e| Error::io(&name, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::io(name.clone(), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(name.clone(), e))?;

    let mut pos = 0usize;
    let channels = match (bytes.first(), bytes.get(1)) {
        (Some(b'P'), Some(b'5')) => 1,
        (Some(b'P'), Some(b'6')) => 3,
        _ => return Err(Error::format(&name, "not a P5/P6 pixmap")),
    };
    pos += 2;

    // Header tokens: width, height, maxval. Whitespace-separated, '#' comments.
    let mut tokens = Vec::with_capacity(3);
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(&name, "truncated header"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format(&name, "non-ascii header"))?;
        let value: usize = tok
            .parse()
            .map_err(|_| Error::format(&name, format!("bad header token {tok:?}")))?;
        tokens.push(value);
    }
    // Single whitespace byte after maxval, then raster data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(&name, "missing raster separator"));
    }
    pos += 1;

    let (width, height, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval != 255 {
        return Err(Error::format(&name, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(&name, "zero image dimension"));
    }
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(Error::format(
            &name,
            format!("expected {expected} raster bytes, got {}", raster.len()),
        ));
    }
    Image::from_levels(height, width, channels, raster)
}
