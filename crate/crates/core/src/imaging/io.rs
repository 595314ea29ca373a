//! PGM (P5), PPM (P6) and PFM (Pf/PF) readers and writers.
//!
//! 8-bit samples map to `[0, 1]` by dividing by the header's maxval. PFM
//! rasters are stored bottom row first; the sign of the scale line selects the
//! byte order (negative = little-endian).

use std::fs;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// A decoded PFM file, keeping the header fields needed to re-encode it.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub image: ImageBuffer,
    pub endianness: Endianness,
    /// Absolute value of the scale line.
    pub scale: f32,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            offset: start,
            message: "header token is not ASCII".into(),
        })
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.skip_space_and_comments();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            offset: start,
            message: format!("invalid {what} '{tok}'"),
        })
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end_header(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err("missing whitespace after header")),
        }
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                message: format!("truncated raster: expected {len} bytes, found {have}"),
            });
        }
        Ok(&self.bytes[self.pos..self.pos + len])
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads any supported format, dispatching on the magic number.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    match bytes.get(..2) {
        Some(b"P5") | Some(b"P6") => decode_pnm(&bytes, path),
        Some(b"Pf") | Some(b"PF") => Ok(decode_pfm(&bytes, path)?.image),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "unrecognized magic number".into(),
        }),
    }
}

/// Reads an 8-bit binary PGM or PPM.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    decode_pnm(&read_bytes(path)?, path)
}

pub(crate) fn decode_pnm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let channels = match cur.token()? {
        "P5" => 1,
        "P6" => 3,
        m => {
            cur.pos = 0;
            return Err(cur.err(format!("expected P5 or P6, found '{m}'")));
        }
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    let maxval: u32 = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(cur.err(format!("only 8-bit maxval is supported, got {maxval}")));
    }
    cur.end_header()?;
    let raw = cur.payload(width * height * channels)?;
    let scale = maxval as f64;
    ImageBuffer::new(
        width,
        height,
        channels,
        raw.iter().map(|&b| b as f64 / scale).collect(),
    )
}

/// Reads a PFM file.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<PfmImage> {
    let path = path.as_ref();
    decode_pfm(&read_bytes(path)?, path)
}

pub(crate) fn decode_pfm(bytes: &[u8], path: &Path) -> Result<PfmImage> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let channels = match cur.token()? {
        "Pf" => 1,
        "PF" => 3,
        m => {
            cur.pos = 0;
            return Err(cur.err(format!("expected Pf or PF, found '{m}'")));
        }
    };
    let width: usize = cur.number("width")?;
    let height: usize = cur.number("height")?;
    let scale_at = cur.pos;
    let scale: f32 = cur.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        cur.pos = scale_at;
        return Err(cur.err("scale must be non-zero and finite"));
    }
    cur.end_header()?;
    let endianness = if scale < 0.0 {
        Endianness::Little
    } else {
        Endianness::Big
    };
    let raw = cur.payload(width * height * channels * 4)?;
    let mut data = vec![0.0; width * height * channels];
    let row_len = width * channels;
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            let v = match endianness {
                Endianness::Little => f32::from_le_bytes(b),
                Endianness::Big => f32::from_be_bytes(b),
            };
            if !v.is_finite() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: cur.pos + (file_row * row_len + i) * 4,
                    message: "non-finite sample".into(),
                });
            }
            data[y * row_len + i] = v as f64;
        }
    }
    Ok(PfmImage {
        image: ImageBuffer::new(width, height, channels, data)?,
        endianness,
        scale: scale.abs(),
    })
}

/// Encodes a 1- or 3-channel raster as PFM with scale magnitude 1.
pub fn encode_pfm(img: &ImageBuffer, endianness: Endianness) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "Pf",
        3 => "PF",
        k => return Err(Error::ShapeMismatch(format!("PFM stores 1 or 3 channels, got {k}"))),
    };
    let scale = match endianness {
        Endianness::Little => "-1.0",
        Endianness::Big => "1.0",
    };
    let mut out = format!("{magic}\n{} {}\n{scale}\n", img.width(), img.height()).into_bytes();
    let row_len = img.width() * img.channels();
    for y in (0..img.height()).rev() {
        for &v in &img.data()[y * row_len..(y + 1) * row_len] {
            let v = v as f32;
            out.extend_from_slice(&match endianness {
                Endianness::Little => v.to_le_bytes(),
                Endianness::Big => v.to_be_bytes(),
            });
        }
    }
    Ok(out)
}

fn encode_pnm(img: &ImageBuffer, magic: &str) -> Vec<u8> {
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Writes through a sibling temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_pfm(path: impl AsRef<Path>, img: &ImageBuffer, endianness: Endianness) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pfm(img, endianness)?)
}

/// Writes a single-channel raster as 8-bit PGM (values clamped to `[0, 1]`).
pub fn write_pgm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let gray = img.to_gray();
    write_atomic(path.as_ref(), &encode_pnm(&gray, "P5"))
}

/// Writes a 3-channel raster as 8-bit PPM.
pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "PPM needs 3 channels, got {}",
            img.channels()
        )));
    }
    write_atomic(path.as_ref(), &encode_pnm(img, "P6"))
}
