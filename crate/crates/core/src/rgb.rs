use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `H×W×3` float image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid(format!(
                "{}×{} image needs {} values, got {}",
                width,
                height,
                width as usize * height as usize * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = RgbImage::new(width, height);
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let (w, h) = (self.width as usize, self.height as usize);
        for y in 0..height as usize {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f32;
            for x in 0..width as usize {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f32;
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| self.data[(yy * w + xx) * 3 + c];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    out.data[(y * width as usize + x) * 3 + c] = top * (1.0 - ty) + bottom * ty;
                }
            }
        }
        out
    }

    /// Size after scaling each side by `factor`, floored, at least 1.
    pub fn scaled_size(&self, factor: f32) -> (u32, u32) {
        let s = |v: u32| ((v as f32 * factor).floor() as u32).max(1);
        (s(self.width), s(self.height))
    }
}

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`.
pub fn psnr(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x.clamp(0.0, 1.0) - y.clamp(0.0, 1.0)) as f64;
            d * d
        })
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        return f32::INFINITY;
    }
    (10.0 * (1.0 / mse).log10()) as f32
}
