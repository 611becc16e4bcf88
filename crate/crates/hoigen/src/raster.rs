//! In-memory rasters: RGB images on the 1/255 grid, binary masks, and the
//! geometry helpers shared by the renderer, the data builders and the
//! evaluation metrics.
//!
//! Images hold f32 in [0, 1] but every value written by the renderer is an
//! exact multiple of 1/255, so PNG round-trips are bit-stable.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image io failed for {path}: {source}")]
    Io {
        path: String,
        source: image::ImageError,
    },
    #[error("expected {expected} raster at {path}, found {found}")]
    Format {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("empty mask")]
    EmptyMask,
    #[error("box {0:?} out of bounds for {1}x{2} image or degenerate")]
    BadBox(BoxPx, usize, usize),
}

/// RGB color with components in [0, 1].
pub type Rgb = [f32; 3];

/// Snap a color component onto the 1/255 grid the renderer emits.
pub fn quantize(c: f32) -> f32 {
    (c.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub fn quantize_rgb(c: Rgb) -> Rgb {
    [quantize(c[0]), quantize(c[1]), quantize(c[2])]
}

/// L-infinity distance between two colors.
pub fn linf(a: Rgb, b: Rgb) -> f32 {
    (a[0] - b[0])
        .abs()
        .max((a[1] - b[1]).abs())
        .max((a[2] - b[2]).abs())
}

/// Rec.601 luma.
pub fn luma(c: Rgb) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Inclusive pixel box (x0, y0, x1, y1); x1/y1 are the last covered column/row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BoxPx {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoxPx {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }
    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
    pub fn valid_for(&self, w: usize, h: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && (self.x1 as usize) < w && (self.y1 as usize) < h
    }
    /// Grow by `d` pixels on every side, clamped to the canvas.
    pub fn dilate(&self, d: u32, w: usize, h: usize) -> BoxPx {
        BoxPx {
            x0: self.x0.saturating_sub(d),
            y0: self.y0.saturating_sub(d),
            x1: (self.x1 + d).min(w as u32 - 1),
            y1: (self.y1 + d).min(h as u32 - 1),
        }
    }
}

/// Dense RGB raster, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>, // h*w*3
}

impl ImageRgb {
    pub fn filled(w: usize, h: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&color);
        }
        ImageRgb { w, h, data }
    }

    pub fn zeros(w: usize, h: usize) -> Self {
        ImageRgb {
            w,
            h,
            data: vec![0.0; w * h * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.w + x) * 3;
        self.data[i] = c[0];
        self.data[i + 1] = c[1];
        self.data[i + 2] = c[2];
    }

    /// Crop to an inclusive box.
    pub fn crop(&self, b: BoxPx) -> ImageRgb {
        let mut out = ImageRgb::zeros(b.width() as usize, b.height() as usize);
        for y in 0..out.h {
            for x in 0..out.w {
                out.put(x, y, self.get(b.x0 as usize + x, b.y0 as usize + y));
            }
        }
        out
    }

    /// Bilinear resize (align-corners-false convention).
    pub fn resize_bilinear(&self, w: usize, h: usize) -> ImageRgb {
        let mut out = ImageRgb::zeros(w, h);
        let sx = self.w as f32 / w as f32;
        let sy = self.h as f32 / h as f32;
        for y in 0..h {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, self.h as f32 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, self.w as f32 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let tx = fx - x0 as f32;
                let mut c = [0.0f32; 3];
                for k in 0..3 {
                    let a = self.get(x0, y0)[k] * (1.0 - tx) + self.get(x1, y0)[k] * tx;
                    let b = self.get(x0, y1)[k] * (1.0 - tx) + self.get(x1, y1)[k] * tx;
                    c[k] = a * (1.0 - ty) + b * ty;
                }
                out.put(x, y, c);
            }
        }
        out
    }

    /// 2x2 box-average downsample; both dimensions must be even.
    pub fn downsample2(&self) -> ImageRgb {
        assert!(self.w % 2 == 0 && self.h % 2 == 0);
        let mut out = ImageRgb::zeros(self.w / 2, self.h / 2);
        for y in 0..out.h {
            for x in 0..out.w {
                let mut c = [0.0f32; 3];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let p = self.get(2 * x + dx, 2 * y + dy);
                        for k in 0..3 {
                            c[k] += p[k] * 0.25;
                        }
                    }
                }
                out.put(x, y, c);
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let mut buf = image::RgbImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                let c = self.get(x, y);
                buf.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                    ]),
                );
            }
        }
        buf.save(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<ImageRgb, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Io {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageRgb::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let p = img.get_pixel(x as u32, y as u32);
                out.put(
                    x,
                    y,
                    [
                        p[0] as f32 / 255.0,
                        p[1] as f32 / 255.0,
                        p[2] as f32 / 255.0,
                    ],
                );
            }
        }
        Ok(out)
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub w: usize,
    pub h: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn zeros(w: usize, h: usize) -> Self {
        Mask {
            w,
            h,
            data: vec![false; w * h],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Tight bounding box, or None when empty.
    pub fn bbox(&self) -> Option<BoxPx> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            None
        } else {
            Some(BoxPx {
                x0: x0 as u32,
                y0: y0 as u32,
                x1: x1 as u32,
                y1: y1 as u32,
            })
        }
    }

    /// Pixel-mass centroid (x, y), or None when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            None
        } else {
            Some((sx / n as f64, sy / n as f64))
        }
    }

    pub fn intersect_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a || **b)
            .count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!((self.w, self.h), (other.w, other.h));
        Mask {
            w: self.w,
            h: self.h,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Chebyshev dilation by `r` pixels.
    pub fn dilate(&self, r: usize) -> Mask {
        let mut out = Mask::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(x, y) {
                    let x0 = x.saturating_sub(r);
                    let y0 = y.saturating_sub(r);
                    let x1 = (x + r).min(self.w - 1);
                    let y1 = (y + r).min(self.h - 1);
                    for yy in y0..=y1 {
                        for xx in x0..=x1 {
                            out.set(xx, yy, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Minimum Chebyshev distance between the two masks' pixels, searching up
    /// to `max_r`. 0 means overlap, 1 means 8-adjacency. None when farther
    /// than `max_r` or either mask is empty.
    pub fn chebyshev_distance(&self, other: &Mask, max_r: usize) -> Option<usize> {
        if self.is_empty() || other.is_empty() {
            return None;
        }
        if self.intersect_count(other) > 0 {
            return Some(0);
        }
        let mut grown = self.clone();
        for r in 1..=max_r {
            grown = grown.dilate(1);
            if grown.intersect_count(other) > 0 {
                return Some(r);
            }
        }
        None
    }

    /// 2x2 OR-pool downsample; dimensions must be even.
    pub fn downsample2_or(&self) -> Mask {
        assert!(self.w % 2 == 0 && self.h % 2 == 0);
        let mut out = Mask::zeros(self.w / 2, self.h / 2);
        for y in 0..out.h {
            for x in 0..out.w {
                let v = self.get(2 * x, 2 * y)
                    || self.get(2 * x + 1, 2 * y)
                    || self.get(2 * x, 2 * y + 1)
                    || self.get(2 * x + 1, 2 * y + 1);
                out.set(x, y, v);
            }
        }
        out
    }

    /// Nearest-neighbor upsample to (w, h); w/h must be multiples of self.w/self.h.
    pub fn upsample_nearest(&self, w: usize, h: usize) -> Mask {
        assert!(w % self.w == 0 && h % self.h == 0);
        let (fx, fy) = (w / self.w, h / self.h);
        let mut out = Mask::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, self.get(x / fx, y / fy));
            }
        }
        out
    }

    /// Keep only the largest 4-connected component; empty mask stays empty.
    pub fn largest_component(&self) -> Mask {
        let mut label = vec![u32::MAX; self.w * self.h];
        let mut sizes: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(x, y) && label[y * self.w + x] == u32::MAX {
                    let id = sizes.len() as u32;
                    let mut size = 0usize;
                    stack.push((x, y));
                    label[y * self.w + x] = id;
                    while let Some((cx, cy)) = stack.pop() {
                        size += 1;
                        let neigh = [
                            (cx.wrapping_sub(1), cy),
                            (cx + 1, cy),
                            (cx, cy.wrapping_sub(1)),
                            (cx, cy + 1),
                        ];
                        for (nx, ny) in neigh {
                            if nx < self.w
                                && ny < self.h
                                && self.get(nx, ny)
                                && label[ny * self.w + nx] == u32::MAX
                            {
                                label[ny * self.w + nx] = id;
                                stack.push((nx, ny));
                            }
                        }
                    }
                    sizes.push(size);
                }
            }
        }
        if sizes.is_empty() {
            return self.clone();
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (**s, usize::MAX - i))
            .map(|(i, _)| i as u32)
            .unwrap();
        let mut out = Mask::zeros(self.w, self.h);
        for i in 0..label.len() {
            out.data[i] = label[i] == best;
        }
        out
    }

    /// Store a (human, object) mask pair as one RGB png: R = first, G = second.
    pub fn save_pair_png(a: &Mask, b: &Mask, path: &Path) -> Result<(), RasterError> {
        assert_eq!((a.w, a.h), (b.w, b.h));
        let mut img = ImageRgb::zeros(a.w, a.h);
        for y in 0..a.h {
            for x in 0..a.w {
                img.put(
                    x,
                    y,
                    [
                        if a.get(x, y) { 1.0 } else { 0.0 },
                        if b.get(x, y) { 1.0 } else { 0.0 },
                        0.0,
                    ],
                );
            }
        }
        img.save_png(path)
    }

    pub fn load_pair_png(path: &Path) -> Result<(Mask, Mask), RasterError> {
        let img = ImageRgb::load_png(path)?;
        let mut a = Mask::zeros(img.w, img.h);
        let mut b = Mask::zeros(img.w, img.h);
        for y in 0..img.h {
            for x in 0..img.w {
                let c = img.get(x, y);
                a.set(x, y, c[0] > 0.5);
                b.set(x, y, c[1] > 0.5);
            }
        }
        Ok((a, b))
    }
}

/// Single-channel float plane (gradient maps, luma planes).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(w: usize, h: usize) -> Self {
        Plane {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    /// Bilinear resample to (w, h).
    pub fn resize_bilinear(&self, w: usize, h: usize) -> Plane {
        let mut out = Plane::zeros(w, h);
        let sx = self.w as f32 / w as f32;
        let sy = self.h as f32 / h as f32;
        for y in 0..h {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, self.h as f32 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, self.w as f32 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let tx = fx - x0 as f32;
                let a = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let b = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                out.put(x, y, a * (1.0 - ty) + b * ty);
            }
        }
        out
    }
}

/// Intersection-over-union of two masks. Empty-vs-anything is defined as 0.
pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let u = a.union_count(b);
    if u == 0 {
        return 0.0;
    }
    a.intersect_count(b) as f64 / u as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_idempotent_on_grid() {
        for k in 0..=255u32 {
            let v = k as f32 / 255.0;
            assert_eq!(quantize(v), v);
        }
    }

    #[test]
    fn png_roundtrip_bit_exact_on_grid() {
        let dir = std::env::temp_dir().join("hoigen_raster_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut img = ImageRgb::zeros(8, 6);
        for y in 0..6 {
            for x in 0..8 {
                img.put(
                    x,
                    y,
                    [
                        quantize(x as f32 / 7.0),
                        quantize(y as f32 / 5.0),
                        quantize(0.3),
                    ],
                );
            }
        }
        let p = dir.join("rt.png");
        img.save_png(&p).unwrap();
        let back = ImageRgb::load_png(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let mut a = Mask::zeros(4, 4);
        a.set(0, 0, true);
        a.set(1, 0, true);
        let mut b = Mask::zeros(4, 4);
        b.set(3, 3, true);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b), 0.0);
        assert_eq!(iou(&Mask::zeros(4, 4), &Mask::zeros(4, 4)), 0.0);
    }

    #[test]
    fn chebyshev_distance_adjacency() {
        let mut a = Mask::zeros(8, 8);
        a.set(2, 2, true);
        let mut b = Mask::zeros(8, 8);
        b.set(3, 3, true); // diagonal neighbor
        assert_eq!(a.chebyshev_distance(&b, 4), Some(1));
        let mut c = Mask::zeros(8, 8);
        c.set(6, 2, true);
        assert_eq!(a.chebyshev_distance(&c, 4), Some(4));
        assert_eq!(a.chebyshev_distance(&c, 3), None);
    }

    #[test]
    fn largest_component_selects_biggest() {
        let mut m = Mask::zeros(8, 8);
        m.set(0, 0, true);
        for x in 3..7 {
            m.set(x, 4, true);
        }
        let lc = m.largest_component();
        assert_eq!(lc.count(), 4);
        assert!(!lc.get(0, 0));
        assert!(lc.get(4, 4));
    }
}
