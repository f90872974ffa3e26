//! Dense row-major H×W×C maps used for images, depth, flow and render channels.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, channels, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y, 0);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.idx(x, y, 0);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_extent(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Bilinear sample of all channels at a continuous pixel position.
    /// Pixel centers sit at integer coordinates; positions outside
    /// `[0, W-1] × [0, H-1]` return `None`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Vec<f64>> {
        let (taps, _) = self.bilinear_taps(x, y)?;
        let mut out = vec![0.0; self.channels];
        for (i, w) in taps {
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.data[i * self.channels + c];
            }
        }
        Some(out)
    }

    /// Returns the four (pixel index, weight) taps and the integer corner.
    pub fn bilinear_taps(&self, x: f64, y: f64) -> Option<([(usize, f64); 4], (usize, usize))> {
        if !(x.is_finite() && y.is_finite()) {
            return None;
        }
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        if x < 0.0 || y < 0.0 || x > xmax || y > ymax {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let w = self.width;
        Some((
            [
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ],
            (x0, y0),
        ))
    }
}

/// Binary H×W mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn not(&self) -> Mask {
        Mask { width: self.width, height: self.height, data: self.data.iter().map(|b| !b).collect() }
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// 4-neighbour dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..r {
            let prev = cur.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    if prev.get(x, y) {
                        continue;
                    }
                    let hit = (x > 0 && prev.get(x - 1, y))
                        || (x + 1 < self.width && prev.get(x + 1, y))
                        || (y > 0 && prev.get(x, y - 1))
                        || (y + 1 < self.height && prev.get(x, y + 1));
                    if hit {
                        cur.set(x, y, true);
                    }
                }
            }
        }
        cur
    }
}
