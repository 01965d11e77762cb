//! RGB image container shared by the renderer, losses, metrics and IO.

use crate::error::{Error, Result};

/// An RGB image with channel values in `[0, 1]`, stored row-major,
/// pixel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::Config(format!(
                "image {height}×{width} needs {} values, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    /// Builds an image from a per-pixel `(row, col) -> rgb` function.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let k = (row * self.width + col) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    /// Copies the `size × size` window whose top-left corner is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, size: usize) -> Image {
        Image::from_fn(size, size, |r, c| self.pixel(row0 + r, col0 + c))
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::ImageDims {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }
}

/// Training images sharing one size; position in the set is the code index.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    images: Vec<Image>,
}

impl ImageSet {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::Config("an image set needs at least one image".into()));
        };
        for img in &images[1..] {
            first.check_same_dims(img)?;
        }
        Ok(Self { images })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn get(&self, n: usize) -> &Image {
        &self.images[n]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    pub fn into_images(self) -> Vec<Image> {
        self.images
    }
}
