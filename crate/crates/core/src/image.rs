//! 8-bit RGB raster plus the binary PPM (P6) codec used for corpus storage.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("invalid PPM data: {0}")]
    InvalidPpm(String),
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("image must be at least 1x1")]
    Empty,
    #[error("cannot decode image: {0}")]
    Decode(String),
}

/// Row-major, interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Nearest-neighbour resample to `width` x `height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                out.put(x, y, self.get(sx, sy));
            }
        }
        out
    }

    /// Box-filter downsample: each output pixel is the rounded mean of the
    /// source block `[floor(x*W/w), floor((x+1)*W/w))` (at least one pixel wide).
    pub fn box_downsample(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::new(width, height);
        for y in 0..height {
            let y0 = y * self.height / height;
            let y1 = ((y + 1) * self.height / height).max(y0 + 1);
            for x in 0..width {
                let x0 = x * self.width / width;
                let x1 = ((x + 1) * self.width / width).max(x0 + 1);
                let mut acc = [0u32; 3];
                for sy in y0..y1 {
                    for sx in x0..x1 {
                        let p = self.get(sx, sy);
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as u32;
                out.put(
                    x,
                    y,
                    [
                        ((acc[0] + n / 2) / n) as u8,
                        ((acc[1] + n / 2) / n) as u8,
                        ((acc[2] + n / 2) / n) as u8,
                    ],
                );
            }
        }
        out
    }

    /// Pixel intensities scaled to [0, 1], HWC order.
    pub fn to_unit_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64 / 255.0).collect()
    }

    /// Decodes PNG or any PNM variant; other formats are rejected.
    /// Alpha is dropped and 16-bit samples are reduced to 8 bits.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let format = image::guess_format(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
            return Err(ImageError::Decode(format!("unsupported format {format:?}")));
        }
        let decoded = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| ImageError::Decode(e.to_string()))?
            .into_rgb8();
        let (w, h) = decoded.dimensions();
        RgbImage::from_raw(w as usize, h as usize, decoded.into_raw())
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions")
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::InvalidPpm("truncated header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
                ImageError::InvalidPpm("non-ascii header".into())
            })?);
        }
        if fields[0] != "P6" {
            return Err(ImageError::InvalidPpm(format!("magic {:?}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::InvalidPpm(format!("bad header number {s:?}")))
        };
        let width = parse(fields[1])?;
        let height = parse(fields[2])?;
        let maxval = parse(fields[3])?;
        if maxval != 255 {
            return Err(ImageError::InvalidPpm(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates header and raster
        if pos >= bytes.len() {
            return Err(ImageError::InvalidPpm("missing raster".into()));
        }
        pos += 1;
        let raster = &bytes[pos..];
        let expected = width * height * 3;
        if raster.len() < expected {
            return Err(ImageError::InvalidPpm(format!(
                "raster has {} bytes, expected {expected}",
                raster.len()
            )));
        }
        RgbImage::from_raw(width, height, raster[..expected].to_vec())
    }
}
