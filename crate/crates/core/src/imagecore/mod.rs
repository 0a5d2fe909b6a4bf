//! Image representations and the preprocessing / augmentation pipeline.

mod augment;
mod jitter;
mod rng;
mod transform;

pub use augment::{augment, augment_raster, eval_transform, AugmentDraw, AugmentPolicy};
pub use jitter::{color_jitter, luma};
pub use rng::{derive_seed, SeededRng};
pub use transform::{horizontal_flip, normalize_channels, resize_bilinear, rotate, to_unit_tensor};

use std::io::Cursor;

/// ImageNet channel statistics used by the pretrained backbones.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("invalid dimensions {width}x{height} for {len} samples")]
    InvalidDimensions { width: usize, height: usize, len: usize },
    #[error("standard deviation of channel {0} is zero")]
    ZeroStd(usize),
    #[error("failed to encode image: {0}")]
    Encode(String),
}

/// 8-bit RGB image, row-major, interleaved (HWC).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != width * height * Self::CHANNELS {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with one RGB colour.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        Self::CHANNELS
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every sample (all channels).
    pub fn map_samples(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// PNG encoding of the image (RGB8).
    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| ImageError::Encode("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Binary PPM (P6) encoding.
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Float tensor in CHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Converts a unit-range 3-channel tensor back to bytes, rounding and clamping.
    pub fn to_raster(&self) -> RasterImage {
        assert_eq!(self.channels, 3, "raster conversion needs 3 channels");
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(n * 3);
        for i in 0..n {
            for c in 0..3 {
                let v = (self.data[c * n + i] * 255.0).round().clamp(0.0, 255.0);
                data.push(v as u8);
            }
        }
        RasterImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Decodes PNG or binary PPM bytes into an RGB image; grey and alpha inputs are
/// converted (grey replicated to three channels, alpha dropped).
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    const PNG_SIG: &[u8] = b"\x89PNG\r\n\x1a\n";
    let looks_like_png = !bytes.is_empty() && bytes.len() < PNG_SIG.len() && PNG_SIG.starts_with(bytes);
    if looks_like_png {
        return Err(ImageError::CorruptData("truncated PNG signature".into()));
    }
    let format = image::guess_format(bytes).map_err(|_| ImageError::UnsupportedFormat)?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(ImageError::UnsupportedFormat);
    }
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(_) => ImageError::UnsupportedFormat,
        other => ImageError::CorruptData(other.to_string()),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::new(w as usize, h as usize, rgb.into_raw())
}

/// Reads and decodes an image file.
pub fn read_image(path: &std::path::Path) -> Result<RasterImage, ReadImageError> {
    let bytes = std::fs::read(path).map_err(|source| ReadImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image(&bytes).map_err(|source| ReadImageError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ReadImageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: std::path::PathBuf,
        source: ImageError,
    },
}
