//! 8-bit grayscale frames and the binary PGM (P5) format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntensityFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl IntensityFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "frame buffer has {} pixels, expected {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(IntensityFrame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        IntensityFrame {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &IntensityFrame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = pgm_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(Error::invalid(format!("unsupported PGM magic `{magic}`")));
        }
        let width: usize = pgm_number(bytes, &mut pos)?;
        let height: usize = pgm_number(bytes, &mut pos)?;
        let maxval: usize = pgm_number(bytes, &mut pos)?;
        if maxval != 255 {
            return Err(Error::invalid(format!("only 8-bit PGM is supported (maxval {maxval})")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::invalid("PGM raster is truncated"))?;
        IntensityFrame::new(width, height, raster.to_vec())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::invalid("PGM header is truncated"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::invalid("PGM header is not ASCII"))
}

fn pgm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pgm_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::invalid(format!("bad PGM header field `{tok}`")))
}

/// One entry of a frame list file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub timestamp: f64,
    pub path: PathBuf,
}

/// Parses `timestamp filename` lines; relative filenames resolve against `base`.
pub fn parse_frame_list(text: &str, base: &Path) -> Result<Vec<FrameEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(ts), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `timestamp filename`".into(),
            });
        };
        let timestamp: f64 = ts.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("bad timestamp `{ts}`"),
        })?;
        let p = Path::new(name);
        let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        out.push(FrameEntry { timestamp, path });
    }
    Ok(out)
}

pub fn read_frame_list(path: impl AsRef<Path>) -> Result<Vec<FrameEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_frame_list(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let f = IntensityFrame::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        assert_eq!(IntensityFrame::from_pgm(&f.to_pgm()).unwrap(), f);
    }

    #[test]
    fn pgm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let f = IntensityFrame::from_pgm(&bytes).unwrap();
        assert_eq!(f.pixels(), &[7, 9]);
    }

    #[test]
    fn truncated_pgm_is_rejected() {
        let bytes = b"P5\n4 4\n255\n\x01\x02".to_vec();
        assert!(IntensityFrame::from_pgm(&bytes).is_err());
        assert!(IntensityFrame::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }

    #[test]
    fn frame_list_resolves_relative_paths() {
        let list = parse_frame_list("0.0 a.pgm\n\n0.04 /abs/b.pgm\n", Path::new("/data")).unwrap();
        assert_eq!(list[0].path, PathBuf::from("/data/a.pgm"));
        assert_eq!(list[1].path, PathBuf::from("/abs/b.pgm"));
        assert_eq!(list[1].timestamp, 0.04);
        assert!(parse_frame_list("0.0\n", Path::new(".")).is_err());
    }
}
