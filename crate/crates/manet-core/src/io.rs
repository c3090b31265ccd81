//! On-disk formats: the MANT tensor container, MANC checkpoint bundles,
//! PGM/PNG images, and plain-text key=value configs with their sidecars.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, Role};
use crate::tensor::{Dtype, Scalar, Shape, Tensor};

pub const MANT_MAGIC: &[u8; 4] = b"MANT";
pub const MANC_MAGIC: &[u8; 4] = b"MANC";
pub const FORMAT_VERSION: u32 = 1;

/// Guard against allocating for a corrupt header.
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
pub enum MantData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// One tensor as stored on disk: explicit extents, little-endian row-major
/// payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Mant {
    pub dims: Vec<u32>,
    pub data: MantData,
}

/// Scalar slices to payload and back. Within one dtype these casts are
/// exact bit round-trips for finite values, the only ones tensors hold.
fn to_mant_data<T: Scalar>(data: &[T]) -> MantData {
    match T::DTYPE {
        Dtype::F32 => MantData::F32(data.iter().map(|v| v.as_f64() as f32).collect()),
        Dtype::F64 => MantData::F64(data.iter().map(|v| v.as_f64()).collect()),
    }
}

fn from_mant_data<T: Scalar>(d: &MantData) -> Vec<T> {
    match d {
        MantData::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
        MantData::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
    }
}

impl Mant {
    pub fn new(dims: Vec<u32>, data: MantData) -> Result<Mant> {
        if dims.is_empty() || dims.len() > 8 {
            return Err(Error::Format(format!(
                "tensor rank must be 1..=8, got {}",
                dims.len()
            )));
        }
        let count = dims.iter().map(|&d| d as u64).product::<u64>();
        let len = match &data {
            MantData::F32(v) => v.len(),
            MantData::F64(v) => v.len(),
        };
        if count != len as u64 {
            return Err(Error::Format(format!(
                "extents {dims:?} describe {count} elements but payload has {len}"
            )));
        }
        Ok(Mant { dims, data })
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            MantData::F32(_) => Dtype::F32,
            MantData::F64(_) => Dtype::F64,
        }
    }

    /// Store a tensor with its full NCHW extents.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Mant {
        let s = t.shape();
        let dims = vec![s.n as u32, s.c as u32, s.h as u32, s.w as u32];
        Mant { dims, data: to_mant_data(t.data()) }
    }

    /// Store a tensor under reduced extents, validating the element count;
    /// kernels go out as 2-D and maps as 3-D.
    pub fn from_tensor_with_dims<T: Scalar>(t: &Tensor<T>, dims: Vec<u32>) -> Result<Mant> {
        Mant::new(dims, to_mant_data(t.data()))
    }

    /// Interpret as an NCHW tensor, right-aligning lower-rank extents:
    /// `[h, w]` becomes `1 x 1 x h x w`, `[c, h, w]` becomes `1 x c x h x w`.
    /// The stored dtype must match `T`; checkpoints are precision-exact.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype() != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor stored as {} but {} requested",
                self.dtype(),
                T::DTYPE
            )));
        }
        if self.dims.len() > 4 {
            return Err(Error::Format(format!(
                "cannot view rank-{} tensor as NCHW",
                self.dims.len()
            )));
        }
        let mut ext = [1usize; 4];
        let offset = 4 - self.dims.len();
        for (i, &d) in self.dims.iter().enumerate() {
            ext[offset + i] = d as usize;
        }
        let shape = Shape::new(ext[0], ext[1], ext[2], ext[3]);
        Tensor::from_vec(shape, from_mant_data(&self.data))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Serialize one tensor container into a byte stream.
pub fn encode_mant(m: &Mant, out: &mut Vec<u8>) {
    out.extend_from_slice(MANT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(m.dtype().tag());
    out.push(m.dims.len() as u8);
    for &d in &m.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &m.data {
        MantData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        MantData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

/// Parse one tensor container from a byte stream, consuming exactly its
/// bytes so containers can be embedded back to back.
pub fn decode_mant(r: &mut impl Read) -> Result<Mant> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "tensor header")?;
    if &magic != MANT_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let version = read_u32(r, "tensor version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported tensor version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut b = [0u8; 2];
    read_exact(r, &mut b, "tensor dtype/rank")?;
    let dtype = Dtype::from_tag(b[0])?;
    let ndim = b[1] as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!("tensor rank must be 1..=8, got {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(read_u32(r, "tensor extent")?);
    }
    let count = dims.iter().map(|&d| d as u64).product::<u64>();
    if count > MAX_ELEMENTS {
        return Err(Error::Format(format!("implausible tensor size {count}")));
    }
    let count = count as usize;
    let mut payload = vec![0u8; count * dtype.size_bytes()];
    read_exact(r, &mut payload, "tensor payload")?;
    let data = match dtype {
        Dtype::F32 => MantData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => MantData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Mant::new(dims, data)
}

pub fn write_mant(path: impl AsRef<Path>, m: &Mant) -> Result<()> {
    let mut bytes = Vec::new();
    encode_mant(m, &mut bytes);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_mant(path: impl AsRef<Path>) -> Result<Mant> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let m = decode_mant(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor payload",
            cursor.len()
        )));
    }
    Ok(m)
}

/// Write a named-tensor bundle.
pub fn write_checkpoint(path: impl AsRef<Path>, entries: &[(String, Mant)]) -> Result<()> {
    for (i, (name, _)) in entries.iter().enumerate() {
        if name.len() > u16::MAX as usize {
            return Err(Error::Argument(format!("entry name too long: {name}")));
        }
        if entries[..i].iter().any(|(other, _)| other == name) {
            return Err(Error::Argument(format!("duplicate checkpoint entry {name}")));
        }
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MANC_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, m) in entries {
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let mut bytes = Vec::new();
        encode_mant(m, &mut bytes);
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Mant)>> {
    let bytes = fs::read(path)?;
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "checkpoint header")?;
    if &magic != MANC_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r, "checkpoint version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = read_u32(&mut r, "checkpoint count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let mut b = [0u8; 2];
        read_exact(&mut r, &mut b, "entry name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b) as usize];
        read_exact(&mut r, &mut name, "entry name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        if entries.iter().any(|(other, _): &(String, _)| *other == name) {
            return Err(Error::Format(format!("duplicate checkpoint entry {name}")));
        }
        let m = decode_mant(&mut r)?;
        entries.push((name, m));
    }
    if !r.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last checkpoint entry",
            r.len()
        )));
    }
    Ok(entries)
}

/// Write a grayscale image as binary 8-bit PGM.
pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::Argument(
            "PGM is grayscale; convert with to_luminance first".into(),
        ));
    }
    let (h, w) = img.extent();
    let mut out = Vec::with_capacity(h * w + 32);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    out.extend_from_slice(&img.to_bytes());
    fs::write(path, out)?;
    Ok(())
}

/// One whitespace-delimited PGM header token, skipping `#` comments.
fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Format("malformed PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| Error::Format("malformed PGM header".into()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let mut pos = 2;
    let w = pgm_token(&bytes, &mut pos)? as usize;
    let h = pgm_token(&bytes, &mut pos)? as usize;
    let maxval = pgm_token(&bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of 8-bit range")));
    }
    // Exactly one whitespace byte separates header and raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("malformed PGM header".into()));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != h * w {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {}",
            raster.len(),
            h * w
        )));
    }
    let data = raster.iter().map(|&b| b as f64 / maxval as f64).collect();
    Image::new(1, h, w, Role::Hr, data)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let (h, w) = img.extent();
    let err = |e: image::ImageError| Error::Format(format!("png encode: {e}"));
    match img.channels() {
        1 => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, img.to_bytes())
                .expect("extent matches buffer");
            buf.save(path).map_err(err)
        }
        _ => {
            let planar = img.to_bytes();
            let plane = h * w;
            let mut interleaved = Vec::with_capacity(3 * plane);
            for p in 0..plane {
                interleaved.push(planar[p]);
                interleaved.push(planar[plane + p]);
                interleaved.push(planar[2 * plane + p]);
            }
            let buf = image::RgbImage::from_raw(w as u32, h as u32, interleaved)
                .expect("extent matches buffer");
            buf.save(path).map_err(err)
        }
    }
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let dynimg =
        image::open(path.as_ref()).map_err(|e| Error::Format(format!("png decode: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        image::DynamicImage::ImageLuma8(g) => Image::from_bytes(1, h, w, Role::Hr, g.as_raw()),
        other => {
            let rgb = other.to_rgb8();
            let mut planar = vec![0u8; 3 * h * w];
            for (p, px) in rgb.pixels().enumerate() {
                planar[p] = px.0[0];
                planar[h * w + p] = px.0[1];
                planar[2 * h * w + p] = px.0[2];
            }
            Image::from_bytes(3, h, w, Role::Hr, &planar)
        }
    }
}

/// Dispatch on extension: `.pgm` or `.png`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    match image_format(path.as_ref())? {
        ImageFormat::Pgm => read_pgm(path),
        ImageFormat::Png => read_png(path),
    }
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    match image_format(path.as_ref())? {
        ImageFormat::Pgm => write_pgm(path, img),
        ImageFormat::Png => write_png(path, img),
    }
}

enum ImageFormat {
    Pgm,
    Png,
}

fn image_format(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => Ok(ImageFormat::Pgm),
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(ImageFormat::Png),
        _ => Err(Error::Format(format!(
            "unsupported image extension on {}",
            path.display()
        ))),
    }
}

/// Parse a plain-text config: `key = value` lines, `#` comments, order
/// preserved.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!(
                "line {}: expected key=value, got {line:?}",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_kv(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    parse_kv(&fs::read_to_string(path)?)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn write_kv(path: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    fs::write(path, format_kv(pairs))?;
    Ok(())
}

pub fn kv_get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

/// Every artifact gets a `<path>.cfg` neighbor recording how to regenerate
/// it.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".cfg");
    artifact.with_file_name(name)
}

pub fn write_sidecar(artifact: impl AsRef<Path>, pairs: &[(String, String)]) -> Result<()> {
    write_kv(sidecar_path(artifact.as_ref()), pairs)
}
