//! Encoded image attachments.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use image::{GenericImageView, ImageFormat};

/// Longest side, in pixels, sent to a provider.
pub const MAX_UPLOAD_SIDE: u32 = 2048;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("failed to read image {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format (expected JPEG, PNG or WebP)")]
    Unsupported,
    #[error("image could not be decoded: {0}")]
    Undecodable(String),
    #[error("invalid base64 image data: {0}")]
    Base64(#[from] base64::DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediaType {
    Jpeg,
    Png,
    Webp,
}

impl MediaType {
    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Jpeg => "image/jpeg",
            MediaType::Png => "image/png",
            MediaType::Webp => "image/webp",
        }
    }

    fn from_format(format: ImageFormat) -> Option<Self> {
        match format {
            ImageFormat::Jpeg => Some(MediaType::Jpeg),
            ImageFormat::Png => Some(MediaType::Png),
            ImageFormat::WebP => Some(MediaType::Webp),
            _ => None,
        }
    }

    /// Sniffs the container from magic bytes.
    pub fn sniff(bytes: &[u8]) -> Result<Self, ImageError> {
        image::guess_format(bytes)
            .ok()
            .and_then(Self::from_format)
            .ok_or(ImageError::Unsupported)
    }
}

/// Raw image bytes tagged with their media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    media_type: MediaType,
    bytes: Vec<u8>,
}

impl ImagePayload {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, ImageError> {
        let media_type = MediaType::sniff(&bytes)?;
        Ok(Self { media_type, bytes })
    }

    pub fn from_file(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    pub fn from_base64(data: &str) -> Result<Self, ImageError> {
        Self::from_bytes(STANDARD.decode(data)?)
    }

    pub fn media_type(&self) -> MediaType {
        self.media_type
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(&self.bytes)
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.media_type.mime(),
            self.to_base64()
        )
    }

    pub fn dimensions(&self) -> Result<(u32, u32), ImageError> {
        let format = match self.media_type {
            MediaType::Jpeg => ImageFormat::Jpeg,
            MediaType::Png => ImageFormat::Png,
            MediaType::Webp => ImageFormat::WebP,
        };
        let reader = image::ImageReader::with_format(Cursor::new(&self.bytes), format);
        reader
            .into_dimensions()
            .map_err(|e| ImageError::Undecodable(e.to_string()))
    }

    /// Returns a payload whose longest side is at most `max_side`.
    ///
    /// Images already within the limit are returned unchanged (no
    /// re-encoding); larger ones are downscaled and re-encoded as PNG.
    pub fn fit_within(&self, max_side: u32) -> Result<ImagePayload, ImageError> {
        let (w, h) = self.dimensions()?;
        if w.max(h) <= max_side {
            return Ok(self.clone());
        }
        let decoded = image::load_from_memory(&self.bytes)
            .map_err(|e| ImageError::Undecodable(e.to_string()))?;
        let resized = decoded.resize(max_side, max_side, image::imageops::FilterType::Triangle);
        debug_assert!(resized.dimensions().0.max(resized.dimensions().1) <= max_side);
        let mut out = Vec::new();
        resized
            .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
            .map_err(|e| ImageError::Undecodable(e.to_string()))?;
        Ok(ImagePayload {
            media_type: MediaType::Png,
            bytes: out,
        })
    }
}

/// Encodes a solid-colour PNG; handy for fixtures.
pub fn solid_png(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    let img = image::RgbImage::from_pixel(width, height, image::Rgb(rgb));
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out
}
