use std::path::Path;

use super::{DataError, Result};

/// Channel-major (`C x H x W`) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(DataError::InvalidImage(format!("empty shape {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(DataError::InvalidImage(format!(
                "{channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width]).expect("valid fill")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Writes a pixel, clamping into `[0, 1]`.
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Decodes a PNG or PPM file to RGB.
    pub fn open(path: &Path) -> std::result::Result<Self, String> {
        let rgb = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = f32::from(px[c]) / 255.0;
            }
        }
        Self::new(3, h, w, data).map_err(|e| e.to_string())
    }

    /// Encodes as 8-bit RGB (or grayscale for one channel); the format
    /// follows the file extension.
    pub fn save(&self, path: &Path) -> std::result::Result<(), String> {
        let (w, h) = (self.width as u32, self.height as u32);
        let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        let res = match self.channels {
            1 => image::GrayImage::from_fn(w, h, |x, y| image::Luma([q(self.get(0, y as usize, x as usize))])).save(path),
            3 => image::RgbImage::from_fn(w, h, |x, y| {
                image::Rgb([0, 1, 2].map(|c| q(self.get(c, y as usize, x as usize))))
            })
            .save(path),
            c => return Err(format!("cannot encode {c}-channel image")),
        };
        res.map_err(|e| e.to_string())
    }
}

/// Bilinear resampling with half-pixel centers; edges are clamped.
pub fn resize(img: &Image, height: usize, width: usize) -> Image {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..width).map(|x| axis(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(img.channels * height * width);
    for c in 0..img.channels {
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, img.height);
            for &(x0, x1, fx) in &xs {
                let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
                let bot = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
                data.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Image { channels: img.channels, height, width, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range_and_bad_length() {
        assert!(Image::new(1, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn checkerboard_to_single_pixel_averages() {
        let img = Image::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize(&img, 1, 1);
        assert!((out.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize(&img, 2, 3), img);
    }

    #[test]
    fn upsample_interpolates_linearly() {
        // 1x2 -> 1x4: source coords -0.25, 0.25, 0.75, 1.25 (clamped).
        let img = Image::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let out = resize(&img, 1, 4);
        let want = [0.0, 0.25, 0.75, 1.0];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{:?}", out.data());
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<f32> = (0..48).map(|i| (i * 5) as f32 / 255.0).collect();
        let img = Image::new(3, 4, 4, data).unwrap();
        img.save(&path).unwrap();
        let back = Image::open(&path).unwrap();
        assert_eq!(back.shape(), [3, 4, 4]);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let ppm = dir.path().join("a.ppm");
        img.save(&ppm).unwrap();
        assert_eq!(Image::open(&ppm).unwrap(), back);
    }

    proptest! {
        #[test]
        fn constant_images_stay_constant(v in 0.0f32..=1.0, h in 1usize..12, w in 1usize..12, th in 1usize..20, tw in 1usize..20) {
            let out = resize(&Image::filled(3, h, w, v), th, tw);
            prop_assert_eq!(out.shape(), [3, th, tw]);
            prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-6));
        }

        #[test]
        fn resize_stays_in_range(seed in any::<u64>(), th in 1usize..20, tw in 1usize..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..3 * 7 * 5).map(|_| rng.random_range(0.0f32..=1.0)).collect();
            let out = resize(&Image::new(3, 7, 5, data).unwrap(), th, tw);
            prop_assert!(out.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
