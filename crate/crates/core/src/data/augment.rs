//! Training-time augmentation: rotation, flips and random erasing. Each op
//! fires independently with its own probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Image, Sample};

/// Per-op application probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub rotate: f64,
    pub hflip: f64,
    pub vflip: f64,
    pub erase: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { rotate: 0.5, hflip: 0.5, vflip: 0.5, erase: 0.25 }
    }
}

impl AugmentPolicy {
    pub fn off() -> Self {
        Self { rotate: 0.0, hflip: 0.0, vflip: 0.0, erase: 0.0 }
    }

    pub fn is_off(&self) -> bool {
        *self == Self::off()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

pub const ERASE_AREA: (f64, f64) = (0.02, 0.2);
pub const ERASE_ASPECT: (f64, f64) = (0.3, 3.3);
const ERASE_ATTEMPTS: usize = 10;

/// Applies `policy` to a copy of `sample`. `fill` is the per-channel value
/// written by random erasing.
pub fn augment<R: Rng>(sample: &Sample, policy: &AugmentPolicy, fill: &[f32], rng: &mut R) -> Sample {
    let mut img = sample.image.clone();
    if rng.random_bool(policy.rotate.clamp(0.0, 1.0)) {
        img = rotate(&img, rng.random_range(-180.0..=180.0));
    }
    if rng.random_bool(policy.hflip.clamp(0.0, 1.0)) {
        img = hflip(&img);
    }
    if rng.random_bool(policy.vflip.clamp(0.0, 1.0)) {
        img = vflip(&img);
    }
    if rng.random_bool(policy.erase.clamp(0.0, 1.0)) {
        if let Some(rect) = sample_erase_rect(img.height(), img.width(), rng) {
            erase(&mut img, rect, fill);
        }
    }
    Sample { image: img, ..sample.clone() }
}

fn remap(img: &Image, f: impl Fn(usize, usize) -> (usize, usize)) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut data = Vec::with_capacity(img.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = f(y, x);
                data.push(img.get(ch, sy, sx));
            }
        }
    }
    Image::new(c, h, w, data).expect("same shape")
}

pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    remap(img, |y, x| (y, w - 1 - x))
}

pub fn vflip(img: &Image) -> Image {
    let h = img.height();
    remap(img, |y, x| (h - 1 - y, x))
}

/// Mirrors a continuous coordinate into `[0, n - 1]` (reflection about the
/// edge pixel centers).
fn reflect(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let r = v.rem_euclid(period);
    if r > (n - 1) as f64 {
        period - r
    } else {
        r
    }
}

/// Rotates counter-clockwise by `degrees` about the image center, sampling
/// bilinearly with reflect padding.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut data = vec![0.0f32; img.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            // Inverse map: output pixel -> source location.
            let sx = reflect(cos * dx - sin * dy + cx, w);
            let sy = reflect(sin * dx + cos * dy + cy, h);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let top = img.get(ch, y0, x0) * (1.0 - fx) + img.get(ch, y0, x1) * fx;
                let bot = img.get(ch, y1, x0) * (1.0 - fx) + img.get(ch, y1, x1) * fx;
                data[(ch * h + y) * w + x] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(c, h, w, data).expect("same shape")
}

/// Rectangle covering `area_fraction` of an `h x w` image with the given
/// height/width ratio at a random position, or `None` if it does not fit.
pub fn erase_rect_for<R: Rng>(h: usize, w: usize, area_fraction: f64, aspect: f64, rng: &mut R) -> Option<Rect> {
    let area = area_fraction * (h * w) as f64;
    let eh = (area * aspect).sqrt().round() as usize;
    let ew = (area / aspect).sqrt().round() as usize;
    if eh == 0 || ew == 0 || eh >= h || ew >= w {
        return None;
    }
    Some(Rect { top: rng.random_range(0..=h - eh), left: rng.random_range(0..=w - ew), height: eh, width: ew })
}

/// Draws an erase rectangle with area fraction in `ERASE_AREA` and aspect in
/// `ERASE_ASPECT`, retrying a few times when the shape does not fit.
pub fn sample_erase_rect<R: Rng>(h: usize, w: usize, rng: &mut R) -> Option<Rect> {
    (0..ERASE_ATTEMPTS).find_map(|_| {
        let f = rng.random_range(ERASE_AREA.0..=ERASE_AREA.1);
        let aspect = rng.random_range(ERASE_ASPECT.0..=ERASE_ASPECT.1);
        erase_rect_for(h, w, f, aspect, rng)
    })
}

pub fn erase(img: &mut Image, rect: Rect, fill: &[f32]) {
    for ch in 0..img.channels() {
        let v = fill.get(ch).copied().unwrap_or(0.0);
        for y in rect.top..rect.top + rect.height {
            for x in rect.left..rect.left + rect.width {
                img.set(ch, y, x, v);
            }
        }
    }
}
