//! Undistortion, focus-driven blur, Canny edges, and mask gating.

use super::EdgeError;
use crate::camera::CameraIntrinsics;
use crate::imaging::{gaussian_blur, sobel, Image};
use nalgebra::Point2;

/// Resamples a distorted image onto the pinhole image plane.
pub fn undistort(image: &Image, k: &CameraIntrinsics) -> Image {
    if k.distortion.is_zero() {
        return image.clone();
    }
    Image::from_fn(image.width, image.height, |x, y| {
        // clamping replicates the border instead of inventing a dark rim
        let d = k.distort_pixel(Point2::new(x as f64, y as f64));
        let (w, h) = ((image.width - 1) as f64, (image.height - 1) as f64);
        image.sample(d.x.clamp(0.0, w), d.y.clamp(0.0, h)).unwrap_or(0.0)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurResult {
    pub image: Image,
    pub kernel: usize,
    /// The input already met the target (or was uniform); no blur applied.
    pub already_below: bool,
}

/// Smallest odd Gaussian kernel whose output has global intensity variance
/// at most `target_focus`, growing from 1 up to `max_kernel`.
pub fn adaptive_blur(image: &Image, target_focus: f64, max_kernel: usize) -> BlurResult {
    if image.variance() <= target_focus {
        return BlurResult {
            image: image.clone(),
            kernel: 1,
            already_below: true,
        };
    }
    let mut k = 3;
    loop {
        let out = gaussian_blur(image, k);
        if out.variance() <= target_focus || k + 2 > max_kernel {
            return BlurResult {
                image: out,
                kernel: k,
                already_below: false,
            };
        }
        k += 2;
    }
}

/// Otsu threshold of a set of non-negative values (256 bins over the range).
pub fn otsu_threshold(values: &[f32]) -> f32 {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return 0.0;
    }
    let bins = 256usize;
    let mut hist = vec![0u64; bins];
    for &v in values {
        let b = ((v / max) * (bins - 1) as f32).round() as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t as f32 + 0.5) / (bins - 1) as f32 * max
}

/// Binary edge map with gradient information at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f32>,
    /// Gradient direction [rad].
    pub direction: Vec<f32>,
    pub edge: Vec<bool>,
    pub low: f32,
    pub high: f32,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.edge.iter().filter(|e| **e).count()
    }

    /// Edge pixel coordinates with their gradient direction.
    pub fn pixels(&self) -> Vec<(usize, usize, f32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if self.edge[i] {
                    out.push((x, y, self.direction[i]));
                }
            }
        }
        out
    }
}

/// Canny detector on an already smoothed image. Without explicit thresholds,
/// high is the Otsu threshold of the gradient magnitude and low is 0.4 high.
pub fn canny(image: &Image, thresholds: Option<(f32, f32)>) -> EdgeMap {
    let (w, h) = image.dims();
    let (gx, gy) = sobel(image);
    let magnitude: Vec<f32> = gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect();
    let direction: Vec<f32> = gx.data.iter().zip(&gy.data).map(|(a, b)| b.atan2(*a)).collect();
    let (low, high) = thresholds.unwrap_or_else(|| {
        let high = otsu_threshold(&magnitude);
        (0.4 * high, high)
    });

    let mut strong = vec![0u8; w * h];
    if w >= 3 && h >= 3 && high > 0.0 {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let m = magnitude[i];
                if m < low || m == 0.0 {
                    continue;
                }
                // quantized gradient direction for non-maximum suppression
                let a = direction[i].to_degrees().rem_euclid(180.0);
                let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&a) {
                    (1, 0)
                } else if a < 67.5 {
                    (1, 1)
                } else if a < 112.5 {
                    (0, 1)
                } else {
                    (-1, 1)
                };
                let n1 = magnitude[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let n2 = magnitude[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
                // ties resolved towards the forward neighbour to keep one-pixel edges
                if m > n1 && m >= n2 {
                    strong[i] = if m >= high { 2 } else { 1 };
                }
            }
        }
    }
    // hysteresis: weak pixels connected to strong ones survive
    let mut edge = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| strong[i] == 2).collect();
    for &i in &stack {
        edge[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && strong[j] == 1 {
                    edge[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    EdgeMap {
        width: w,
        height: h,
        magnitude,
        direction,
        edge,
        low,
        high,
    }
}

/// Connected components (8-neighbourhood) of a binary mask, as pixel lists.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        label[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !label[j] {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Pixels kept by a presegmentation mask: the largest component plus every
/// component whose centroid lies within `axis_tol` pixels of the largest
/// component's principal axis.
pub fn select_mask(mask: &Image, axis_tol: f64) -> Vec<bool> {
    let (w, h) = mask.dims();
    let bin: Vec<bool> = mask.data.iter().map(|v| *v > 0.0).collect();
    let comps = components(&bin, w, h);
    let mut keep = vec![false; w * h];
    let Some(largest) = comps.iter().max_by_key(|c| c.len()) else {
        return keep;
    };
    let centroid = |c: &[usize]| {
        let n = c.len() as f64;
        let (sx, sy) = c.iter().fold((0.0, 0.0), |(a, b), &i| (a + (i % w) as f64, b + (i / w) as f64));
        (sx / n, sy / n)
    };
    let (cx, cy) = centroid(largest);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &i in largest {
        let dx = (i % w) as f64 - cx;
        let dy = (i / w) as f64 - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = angle.sin_cos();
    for comp in &comps {
        let (px, py) = centroid(comp);
        let off = (-(px - cx) * s + (py - cy) * c).abs();
        if std::ptr::eq(comp, largest) || off <= axis_tol {
            for &i in comp {
                keep[i] = true;
            }
        }
    }
    keep
}

/// Zeroes edge pixels outside the selected mask region.
pub fn apply_mask(edges: &EdgeMap, mask: &Image, axis_tol: f64) -> Result<EdgeMap, EdgeError> {
    if mask.dims() != (edges.width, edges.height) {
        return Err(EdgeError::DimensionMismatch {
            expected: (edges.width, edges.height),
            got: mask.dims(),
        });
    }
    let keep = select_mask(mask, axis_tol);
    let mut out = edges.clone();
    for (e, k) in out.edge.iter_mut().zip(&keep) {
        *e &= *k;
    }
    Ok(out)
}
