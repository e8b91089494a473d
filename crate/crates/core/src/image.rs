//! 8-bit grayscale PNG encoding and decoding.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("png decode: {0}")]
    Decode(String),
    #[error("png encode: {0}")]
    Encode(String),
    #[error("image is empty")]
    Empty,
    #[error("pixel buffer of {len} bytes does not match {width}x{height}")]
    BufferSize {
        width: usize,
        height: usize,
        len: usize,
    },
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferSize {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Nearest-neighbour resample to `width x height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                pixels.push(self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| ImageError::Encode(e.to_string()))?;
            w.write_image_data(&self.pixels)
                .map_err(|e| ImageError::Encode(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes any PNG colour type to luma. Alpha is composited over white.
    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec
            .read_info()
            .map_err(|e| ImageError::Decode(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::Decode("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| ImageError::Decode(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let buf = &buf[..info.buffer_size()];
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &buf[y * info.line_size..];
            for x in 0..w {
                let p = &row[x * channels..(x + 1) * channels];
                let (luma, alpha) = match channels {
                    1 => (f32::from(p[0]), 255.0),
                    2 => (f32::from(p[0]), f32::from(p[1])),
                    3 => (luma(p), 255.0),
                    _ => (luma(p), f32::from(p[3])),
                };
                let a = alpha / 255.0;
                pixels.push((luma * a + 255.0 * (1.0 - a)).round().clamp(0.0, 255.0) as u8);
            }
        }
        Self::new(w, h, pixels)
    }
}

fn luma(p: &[u8]) -> f32 {
    0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2])
}
