//! Grayscale float images, PGM I/O, and the basic filters shared by the
//! renderer and the detectors.

use std::path::Path;

/// Row-major single-channel image with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample; `None` outside the image.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let a = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let b = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(a * (1.0 - fy) + b * fy)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Global intensity variance.
    pub fn variance(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let m = self.mean();
        self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.data.len() as f64
    }

    pub fn from_gray(img: &image::GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_gray(&self) -> image::GrayImage {
        let raw = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches")
    }

    /// Rounds to 8-bit levels, as an image written to disk would be.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v.round().clamp(0.0, 255.0)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, image::ImageError> {
        Ok(Self::from_gray(&image::open(path)?.into_luma8()))
    }

    /// Writes an 8-bit binary PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(
                self.to_gray().as_raw(),
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::L8,
            )
    }

    /// Half-resolution image by 2x2 averaging.
    pub fn downsample(&self) -> Self {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        Self::from_fn(w, h, |x, y| {
            let (x0, y0) = (2 * x, 2 * y);
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1)) * 0.25
        })
    }
}

/// Normalized 1D Gaussian kernel of odd size `k`; sigma follows the usual
/// `0.3 ((k - 1) / 2 - 1) + 0.8` rule.
pub fn gaussian_kernel(k: usize) -> Vec<f32> {
    let k = k.max(1) | 1;
    if k == 1 {
        return vec![1.0];
    }
    let sigma = 0.3 * ((k as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (k / 2) as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| (v / s) as f32).collect()
}

/// Separable convolution with clamped borders.
pub fn convolve_separable(img: &Image, kx: &[f32], ky: &[f32]) -> Image {
    let (w, h) = img.dims();
    let hx = (kx.len() / 2) as isize;
    let hy = (ky.len() / 2) as isize;
    let mut tmp = Image::new(w, h, 0.0);
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in kx.iter().enumerate() {
                let xx = (x as isize + i as isize - hx).clamp(0, w as isize - 1) as usize;
                s += kv * row[xx];
            }
            tmp.data[y * w + x] = s;
        }
    }
    let mut out = Image::new(w, h, 0.0);
    for y in 0..h {
        for (i, kv) in ky.iter().enumerate() {
            let yy = (y as isize + i as isize - hy).clamp(0, h as isize - 1) as usize;
            let src = &tmp.data[yy * w..(yy + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src[x];
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Image, k: usize) -> Image {
    if k <= 1 {
        return img.clone();
    }
    let kernel = gaussian_kernel(k);
    convolve_separable(img, &kernel, &kernel)
}

/// Horizontal box blur of `length` pixels (linear motion blur).
pub fn motion_blur(img: &Image, length: usize) -> Image {
    if length <= 1 {
        return img.clone();
    }
    let kernel = vec![1.0 / length as f32; length];
    convolve_separable(img, &kernel, &[1.0])
}

/// Sobel gradients `(gx, gy)`; border pixels get zero gradient.
pub fn sobel(img: &Image) -> (Image, Image) {
    let (w, h) = img.dims();
    let mut gx = Image::new(w, h, 0.0);
    let mut gy = Image::new(w, h, 0.0);
    if w < 3 || h < 3 {
        return (gx, gy);
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            let sx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
            let sy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
            gx.set(x, y, sx);
            gy.set(x, y, sy);
        }
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized() {
        for k in [1, 3, 5, 9, 15] {
            let g = gaussian_kernel(k);
            assert_eq!(g.len(), k);
            assert!((g.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_keeps_constant_image() {
        let img = Image::new(20, 10, 77.0);
        let b = gaussian_blur(&img, 7);
        assert!(b.data.iter().all(|v| (v - 77.0).abs() < 1e-3));
    }

    #[test]
    fn bilinear_sample() {
        let img = Image::from_fn(4, 4, |x, _| x as f32 * 10.0);
        assert_eq!(img.sample(1.5, 2.0), Some(15.0));
        assert_eq!(img.sample(3.0, 3.0), Some(30.0));
        assert_eq!(img.sample(-0.1, 0.0), None);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, |x, y| (x * 30 + y) as f32);
        let path = dir.path().join("a.pgm");
        img.save_pgm(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }

    #[test]
    fn sobel_on_ramp() {
        let img = Image::from_fn(8, 8, |x, _| x as f32);
        let (gx, gy) = sobel(&img);
        assert_eq!(gx.get(3, 3), 8.0);
        assert_eq!(gy.get(3, 3), 0.0);
    }
}
