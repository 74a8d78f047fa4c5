//! Binary netpbm images: P6 color (8-bit) and P5 grayscale (8- or 16-bit).
//! These are the only raster formats the pipeline reads or writes; they are
//! trivial to inspect and carry no compression to get in the way of
//! bit-exact comparisons.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    /// Row-major; 3 channels for color, 1 for grayscale.
    pub pixels: Vec<T>,
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3, "pixel buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height, "pixel buffer size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, gray: &[u16]) -> Result<()> {
    assert_eq!(gray.len(), width * height, "pixel buffer size");
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(gray.len() * 2);
    for v in gray {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_ppm(path: &Path) -> Result<Image<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut p = Parser::new(path, &bytes);
    p.expect_magic(b"P6")?;
    let width = p.number()? as usize;
    let height = p.number()? as usize;
    let maxval = p.number()?;
    if maxval != 255 {
        return Err(p.fail(format!("expected maxval 255, got {maxval}")));
    }
    p.single_whitespace()?;
    let pixels = p.raster(width * height * 3)?;
    Ok(Image {
        width,
        height,
        pixels,
    })
}

pub fn read_pgm8(path: &Path) -> Result<Image<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut p = Parser::new(path, &bytes);
    p.expect_magic(b"P5")?;
    let width = p.number()? as usize;
    let height = p.number()? as usize;
    let maxval = p.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(p.fail(format!("expected 8-bit maxval, got {maxval}")));
    }
    p.single_whitespace()?;
    let pixels = p.raster(width * height)?;
    Ok(Image {
        width,
        height,
        pixels,
    })
}

/// Header parser over an in-memory netpbm file, tracking the byte offset so
/// malformed input can be reported precisely.
struct Parser<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Parser {
            path,
            bytes,
            pos: 0,
        }
    }

    fn fail(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message,
        }
    }

    fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.bytes.len() < magic.len() || &self.bytes[..magic.len()] != magic {
            return Err(self.fail(format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        self.pos = magic.len();
        Ok(())
    }

    /// Skips whitespace and `#` comments, then reads a decimal integer.
    fn number(&mut self) -> Result<u32> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.fail("expected decimal integer".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ascii")
            .parse::<u32>()
            .map_err(|e| self.fail(format!("integer out of range: {e}")))
    }

    /// Exactly one whitespace byte separates the header from the raster.
    fn single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.fail("expected single whitespace before raster".into())),
        }
    }

    fn raster(&mut self, len: usize) -> Result<Vec<u8>> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            self.pos = self.bytes.len();
            return Err(self.fail(format!(
                "raster truncated: need {len} bytes, have {}",
                self.bytes.len().saturating_sub(end - len)
            )));
        }
        Ok(self.bytes[self.pos..end].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn ppm_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        write_ppm(&path, 3, 2, &rgb).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, rgb);
    }

    #[test]
    fn pgm8_round_trip_with_comment() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x00\x40\x80\xff").unwrap();
        let img = read_pgm8(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![0, 0x40, 0x80, 0xff]);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        fs::write(&path, b"P5\n2 2\n255\n\x00\x01").unwrap();
        match read_pgm8(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 13),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, b"P2\n2 2\n255\n").unwrap();
        assert!(matches!(
            read_pgm8(&path).unwrap_err(),
            Error::Format { offset: 0, .. }
        ));
    }

    #[test]
    fn pgm16_big_endian_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img16.pgm");
        write_pgm16(&path, 2, 1, &[0x0102, 0xfffe]).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0x01, 0x02, 0xff, 0xfe]);
    }
}
