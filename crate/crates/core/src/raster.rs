//! Image references handed to policies and the zoom tool.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{ImageFormat, RgbImage};

#[derive(Debug, Clone)]
enum Source {
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

/// A query image or a crop derived from one.
///
/// File-backed references are decoded lazily, so a batch can be described
/// before any pixels are read.
#[derive(Debug, Clone)]
pub struct ImageRef {
    id: String,
    source: Source,
}

impl ImageRef {
    pub fn from_path(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self { id: id.into(), source: Source::File(path.into()) }
    }

    pub fn from_rgb(id: impl Into<String>, image: RgbImage) -> Self {
        Self { id: id.into(), source: Source::Memory(Arc::new(image)) }
    }

    /// A flat grey image; handy for scripted runs where pixels never matter.
    pub fn blank(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self::from_rgb(id, RgbImage::from_pixel(width, height, image::Rgb([128, 128, 128])))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            Source::File(p) => Some(p),
            Source::Memory(_) => None,
        }
    }

    pub fn load(&self) -> Result<Arc<RgbImage>, image::ImageError> {
        match &self.source {
            Source::Memory(img) => Ok(Arc::clone(img)),
            Source::File(p) => Ok(Arc::new(image::open(p)?.to_rgb8())),
        }
    }

    /// PNG-encoded pixels, for attaching to chat requests.
    pub fn to_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let img = self.load()?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
