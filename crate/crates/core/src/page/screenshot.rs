use std::fmt;
use std::sync::Arc;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, ImageFormat, Rgba, RgbaImage};
use sha2::{Digest, Sha256};

use super::{PageError, Viewport};

/// An RGBA raster. Cheap to clone.
#[derive(Clone, PartialEq, Eq)]
pub struct Screenshot {
    img: Arc<RgbaImage>,
}

impl fmt::Debug for Screenshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Screenshot({}x{})", self.width(), self.height())
    }
}

impl Screenshot {
    pub fn new(img: RgbaImage) -> Self {
        Self { img: Arc::new(img) }
    }

    pub fn blank(width: u32, height: u32, color: [u8; 4]) -> Self {
        Self::new(RgbaImage::from_pixel(width, height, Rgba(color)))
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, PageError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| PageError::Image(e.to_string()))?;
        Ok(Self::new(img.to_rgba8()))
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Sub)
            .write_image(self.img.as_raw(), self.width(), self.height(), image::ExtendedColorType::Rgba8)
            .expect("PNG encoding into memory does not fail");
        buf
    }

    pub fn width(&self) -> u32 {
        self.img.width()
    }

    pub fn height(&self) -> u32 {
        self.img.height()
    }

    pub fn image(&self) -> &RgbaImage {
        &self.img
    }

    pub fn into_image(self) -> RgbaImage {
        Arc::try_unwrap(self.img).unwrap_or_else(|a| (*a).clone())
    }

    /// SHA-256 over dimensions and raw pixels; independent of PNG encoding.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width().to_le_bytes());
        h.update(self.height().to_le_bytes());
        h.update(self.img.as_raw());
        hex::encode(h.finalize())
    }

    /// The viewport-sized window of a full-page render starting at `scroll_y`.
    /// Regions past the bottom or right edge are filled white.
    pub fn viewport_crop(&self, scroll_y: u32, vp: Viewport) -> Screenshot {
        let mut out = RgbaImage::from_pixel(vp.width, vp.height, Rgba([255, 255, 255, 255]));
        let w = vp.width.min(self.width());
        for y in 0..vp.height {
            let sy = scroll_y + y;
            if sy >= self.height() {
                break;
            }
            for x in 0..w {
                out.put_pixel(x, y, *self.img.get_pixel(x, sy));
            }
        }
        Screenshot::new(out)
    }
}
