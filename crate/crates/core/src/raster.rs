//! 8-bit RGB rasters with binary PPM (P6) and optional PNG I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Interleaved RGB image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let pixels = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!(
                    "{width}x{height} RGB needs {} bytes, got {}",
                    width * height * 3,
                    pixels.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
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

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Copies out a `w`×`h` window; the window must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop out of bounds"
        );
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = 3 * (y * self.width + x0);
            pixels.extend_from_slice(&self.pixels[start..start + 3 * w]);
        }
        Self {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        let mut pos = 0;
        let mut fields = [0usize; 3];
        if bytes.get(..2) != Some(b"P6") {
            return Err(bad("not a binary PPM (P6)"));
        }
        pos += 2;
        for field in &mut fields {
            // whitespace and comments before each header number
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("malformed PPM header"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(bad("only 8-bit PPM (maxval 255) is supported"));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(bad("malformed PPM header"));
        }
        pos += 1;
        let data = bytes
            .get(pos..pos + width * height * 3)
            .ok_or_else(|| bad("truncated PPM pixel data"))?;
        Self::from_raw(width, height, data.to_vec())
    }

    #[cfg(feature = "png")]
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        Ok(out)
    }

    #[cfg(feature = "png")]
    pub fn from_png(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::format(origin, format!("png: {e}"));
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| bad(&e))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| bad(&"image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| bad(&e))?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        let pixels = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0]])
                .collect(),
            png::ColorType::Indexed => return Err(bad(&"unexpanded palette image")),
        };
        Self::from_raw(w, h, pixels)
    }

    /// Reads a PPM or (with the `png` feature) PNG file, sniffing the magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"\x89PNG") {
            #[cfg(feature = "png")]
            return Self::from_png(&bytes, path);
            #[cfg(not(feature = "png"))]
            return Err(Error::format(path, "PNG support is disabled in this build"));
        }
        Self::from_ppm(&bytes, path)
    }

    /// Writes PPM, or PNG when the extension is `.png`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            #[cfg(feature = "png")]
            {
                self.to_png()?
            }
            #[cfg(not(feature = "png"))]
            return Err(Error::InvalidArgument(
                "PNG support is disabled in this build".into(),
            ));
        } else {
            self.to_ppm()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
