use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Interleaved row-major raster: `data[(y * width + x) * channels + c]`.
///
/// The same type carries sRGB images, color-space representations and
/// intermediate maps; which one it is follows from context.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PlanarImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract(
                "PlanarImage::new",
                format!("empty raster {height}x{width}x{channels}"),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(
                "PlanarImage::new",
                format!(
                    "{height}x{width}x{channels} needs {} values, got {}",
                    height * width * channels,
                    data.len()
                ),
            ));
        }
        Ok(PlanarImage {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, pixel: &[f64]) -> Result<Self> {
        let data = pixel.repeat(height * width);
        Self::new(height, width, pixel.len(), data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                if px.len() != channels {
                    return Err(Error::contract("PlanarImage::from_fn", "pixel width"));
                }
                data.extend_from_slice(&px);
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_shape(&self, other: &PlanarImage) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn require_channels(&self, op: &'static str, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::contract(
                op,
                format!("expected {channels} channels, got {}", self.channels),
            ));
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, op: &'static str, other: &PlanarImage) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                op,
                &[self.height, self.width, self.channels],
                &[other.height, other.width, other.channels],
            ));
        }
        Ok(())
    }

    /// Applies `f` to every pixel, producing an image with `out_channels`.
    pub fn map_pixels(&self, out_channels: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut data = vec![0.0; self.pixel_count() * out_channels];
        for (src, dst) in self.pixels().zip(data.chunks_exact_mut(out_channels)) {
            f(src, dst);
        }
        PlanarImage {
            height: self.height,
            width: self.width,
            channels: out_channels,
            data,
        }
    }

    /// Tokens-by-channels view `[H*W, C]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.pixel_count(), self.channels], self.data.clone())
            .expect("image tensor shape")
    }

    pub fn from_tensor(height: usize, width: usize, t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != height * width {
            return Err(Error::shape("PlanarImage::from_tensor", &[height * width], shape));
        }
        Self::new(height, width, shape[1], t.data().to_vec())
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn max_abs_diff(&self, other: &PlanarImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
