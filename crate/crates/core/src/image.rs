//! Grayscale pixel buffer and tensor conversions.

use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

/// 2-D grayscale image, row-major f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != height * width {
            return Err(Error::shape(
                "image",
                format!("{height}x{width} needs {} pixels, got {}", height * width, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("image pixel {i}") });
        }
        Ok(Image { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Image {
        Image { height, width, data: vec![0.0; height * width] }
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    /// As a [1, 1, H, W] tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(vec![1, 1, self.height, self.width], self.data.clone())
    }

    /// First image plane of a [B, 1, H, W] tensor (batch index `b`).
    pub fn from_tensor(t: &Tensor, b: usize) -> Result<Image> {
        let (bsz, c, h, w) = t.dims4()?;
        if c != 1 || b >= bsz {
            return Err(Error::shape(
                "image",
                format!("expected [B,1,H,W] with b < {bsz}, got {:?} b={b}", t.shape()),
            ));
        }
        Ok(Image { height: h, width: w, data: t.data()[b * h * w..][..h * w].to_vec() })
    }

    /// Clamp all pixels into [0, 1].
    pub fn clamped01(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Stack images into a [B, 1, H, W] batch tensor.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::arg("batch_tensor", "empty batch"));
    }
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height, img.width) != (h, w) {
            return Err(Error::shape(
                "batch_tensor",
                format!("mixed image sizes {}x{} vs {h}x{w}", img.height, img.width),
            ));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}
