use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::linalg::DenseMatrix;

/// An 8-bit image with 1 (grayscale) or 3 (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "Image::new",
                width * height * channels,
                data.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, 3, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.height, self.width).expect("dimensions checked at construction")
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, value: &[u8]) {
        let i = (row * self.width + col) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(value);
    }

    /// Pixels as rows of an `N × channels` matrix scaled to `[0, 1]`.
    pub fn to_features(&self) -> DenseMatrix<f32> {
        DenseMatrix::from_fn(self.width * self.height, self.channels, |p, c| {
            f32::from(self.data[p * self.channels + c]) / 255.0
        })
    }

    /// Grayscale image from values in `[0, 1]`, rounded to the nearest level.
    pub fn from_gray(shape: GridShape, values: &[f32]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(shape.width(), shape.height(), 1, data)
    }
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PNM",
        reason: reason.into(),
    }
}

/// Reads whitespace-separated header tokens, skipping `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|&b| b != b'\n' && b != b'\r')
                {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(format!("header ends before the {what}")));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token(what)?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("{what} is not a decimal number")))
    }
}

/// Parses a binary P5 or P6 file with maxval 255.
pub fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match h.token("magic number")? {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(format_err(format!(
                "unsupported magic `{}`; expected P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(format_err("zero width or height"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(format_err("missing whitespace after maxval")),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| format_err("image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            format: "PNM",
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(format_err(format!(
            "{} bytes follow the {expected}-byte payload",
            payload.len() - expected
        )));
    }
    Image::new(width, height, channels, payload.to_vec())
}

/// Canonical encoding: `P5`/`P6`, single newlines between header fields.
pub fn write_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}
