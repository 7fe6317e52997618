//! 8-bit interleaved rasters and lossless PNG I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster must be at least 1x1, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("sample buffer holds {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("window {window}px at ({x}, {y}) exceeds {width}x{height} raster")]
    OutOfBounds {
        x: usize,
        y: usize,
        window: usize,
        width: usize,
        height: usize,
    },
    #[error("image codec error for {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major, channel-interleaved 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(RasterError::Channels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(RasterError::Length {
                expected,
                actual: data.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, RasterError> {
        Raster::new(width, height, channels, vec![value; width * height * channels])
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

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Exact square sub-raster with top-left corner at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, window: usize) -> Result<Raster, RasterError> {
        if window == 0 || x + window > self.width || y + window > self.height {
            return Err(RasterError::OutOfBounds {
                x,
                y,
                window,
                width: self.width,
                height: self.height,
            });
        }
        let row_len = window * self.channels;
        let mut data = Vec::with_capacity(window * row_len);
        for row in y..y + window {
            let start = (row * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Raster {
            width: window,
            height: window,
            channels: self.channels,
            data,
        })
    }

    /// Copies `src` into `self` with its top-left corner at `(x, y)`, clipping
    /// anything that falls outside.
    pub fn paste(&mut self, src: &Raster, x: usize, y: usize) {
        assert_eq!(src.channels, self.channels, "channel mismatch");
        for sy in 0..src.height {
            let ty = y + sy;
            if ty >= self.height {
                break;
            }
            for sx in 0..src.width {
                let tx = x + sx;
                if tx >= self.width {
                    break;
                }
                self.pixel_mut(tx, ty).copy_from_slice(src.pixel(sx, sy));
            }
        }
    }

    pub fn load_png(path: &Path) -> Result<Raster, RasterError> {
        let codec = |source| RasterError::Codec {
            path: path.display().to_string(),
            source,
        };
        let img = image::open(path).map_err(codec)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(g) => Raster::new(w, h, 1, g.into_raw()),
            other => Raster::new(w, h, 3, other.into_rgb8().into_raw()),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let codec = |source| RasterError::Codec {
            path: path.display().to_string(),
            source,
        };
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            GrayImage::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction")
                .save(path)
        } else {
            RgbImage::from_raw(w, h, self.data.clone())
                .expect("buffer length checked at construction")
                .save(path)
        };
        result.map_err(codec)
    }
}
