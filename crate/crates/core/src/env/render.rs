use super::Observation;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Mutable grayscale raster used while drawing a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Canvas {
    pub fn new(height: usize, width: usize, fill: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![fill; height * width],
        }
    }

    /// Gaussian-alpha blob of `value` centred at pixel coordinates `(px, py)`.
    /// Coordinates outside the raster are clamped to the border.
    pub fn blob(&mut self, px: f64, py: f64, sigma: f64, value: f64) {
        let px = px.clamp(0.0, (self.width - 1) as f64);
        let py = py.clamp(0.0, (self.height - 1) as f64);
        let reach = (3.0 * sigma).ceil() as isize;
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        for y in (cy - reach)..=(cy + reach) {
            if y < 0 || y >= self.height as isize {
                continue;
            }
            for x in (cx - reach)..=(cx + reach) {
                if x < 0 || x >= self.width as isize {
                    continue;
                }
                let r2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let alpha = (-r2 / (2.0 * sigma * sigma)).exp();
                let p = &mut self.pixels[y as usize * self.width + x as usize];
                *p = *p * (1.0 - alpha) + value * alpha;
            }
        }
    }

    pub fn into_observation(self) -> Observation {
        let pixels = self.pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Observation::new(self.height, self.width, pixels).expect("clamped pixels")
    }
}

/// Area-average resampling to `target_h x target_w`; a `[C, H, W]` source is
/// first averaged over channels. `[H, W]` sources are accepted as single-channel.
pub fn downsample(image: &Tensor, target_h: usize, target_w: usize) -> Result<Observation> {
    let (c, h, w) = match *image.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "downsample expects [H, W] or [C, H, W], got {:?}",
                image.shape()
            )))
        }
    };
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::InvalidConfig(format!(
            "cannot downsample {h}x{w} to {target_h}x{target_w}"
        )));
    }
    let plane = h * w;
    let gray: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|ch| image.data()[ch * plane + i]).sum::<f64>() / c as f64)
        .collect();
    if target_h == h && target_w == w {
        return Observation::new(h, w, gray.into_iter().map(|p| p.clamp(0.0, 1.0)).collect());
    }
    let sy = h as f64 / target_h as f64;
    let sx = w as f64 / target_w as f64;
    let mut out = vec![0.0; target_h * target_w];
    for ty in 0..target_h {
        let (y0, y1) = (ty as f64 * sy, (ty + 1) as f64 * sy);
        for tx in 0..target_w {
            let (x0, x1) = (tx as f64 * sx, (tx + 1) as f64 * sx);
            let mut acc = 0.0;
            for y in (y0.floor() as usize)..(y1.ceil() as usize).min(h) {
                let wy = (y1.min((y + 1) as f64) - y0.max(y as f64)).max(0.0);
                for x in (x0.floor() as usize)..(x1.ceil() as usize).min(w) {
                    let wx = (x1.min((x + 1) as f64) - x0.max(x as f64)).max(0.0);
                    acc += wy * wx * gray[y * w + x];
                }
            }
            out[ty * target_w + tx] = (acc / (sy * sx)).clamp(0.0, 1.0);
        }
    }
    Observation::new(target_h, target_w, out)
}
