//! Image sources: deterministic synthetic corpora and image directories.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Gradient,
    Checkerboard,
    Blobs,
    FilteredNoise,
    Shapes,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 5] = [
        SyntheticKind::Gradient,
        SyntheticKind::Checkerboard,
        SyntheticKind::Blobs,
        SyntheticKind::FilteredNoise,
        SyntheticKind::Shapes,
    ];

    fn name(self) -> &'static str {
        match self {
            SyntheticKind::Gradient => "gradient",
            SyntheticKind::Checkerboard => "checkerboard",
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::FilteredNoise => "noise",
            SyntheticKind::Shapes => "shapes",
        }
    }
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn smoothstep(edge: f32, v: f32) -> f32 {
    // one-pixel-wide antialiased edge around `edge`
    (0.5 - (v - edge)).clamp(0.0, 1.0)
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn new(h: usize, w: usize, f: impl Fn(f32, f32) -> [f32; 3]) -> Self {
        let mut px = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                px.push(f(y as f32, x as f32));
            }
        }
        Self { h, w, px }
    }

    fn blend(&mut self, coverage: impl Fn(f32, f32) -> f32, c: [f32; 3]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let a = coverage(y as f32, x as f32).clamp(0.0, 1.0);
                if a > 0.0 {
                    let p = &mut self.px[y * self.w + x];
                    *p = lerp(*p, c, a);
                }
            }
        }
    }

    fn into_image(self) -> ImageTensor {
        let (h, w) = (self.h, self.w);
        ImageTensor::from_fn(3, h, w, |c, y, x| self.px[y * w + x][c]).unwrap()
    }
}

fn gradient(h: usize, w: usize, rng: &mut impl Rng) -> Canvas {
    let (a, b) = (color(rng), color(rng));
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = (theta.sin(), theta.cos());
    let span = (h as f32 * dy.abs() + w as f32 * dx.abs()).max(1.0);
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    Canvas::new(h, w, |y, x| lerp(a, b, 0.5 + ((y - cy) * dy + (x - cx) * dx) / span))
}

fn checkerboard(h: usize, w: usize, rng: &mut impl Rng) -> Canvas {
    let (a, b) = (color(rng), color(rng));
    let period = rng.gen_range(4..=10) as f32;
    let (oy, ox) = (rng.gen_range(0.0..period), rng.gen_range(0.0..period));
    Canvas::new(h, w, |y, x| {
        let cell = ((y + oy) / period).floor() as i64 + ((x + ox) / period).floor() as i64;
        if cell.rem_euclid(2) == 0 {
            a
        } else {
            b
        }
    })
}

fn blobs(h: usize, w: usize, rng: &mut impl Rng) -> Canvas {
    let bg = color(rng);
    let mut c = Canvas::new(h, w, |_, _| bg);
    for _ in 0..rng.gen_range(3..7) {
        let (cy, cx) = (rng.gen_range(0.0..h as f32), rng.gen_range(0.0..w as f32));
        let s = rng.gen_range(2.0..(h.min(w) as f32 / 3.0).max(2.5));
        let col = color(rng);
        c.blend(|y, x| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp(), col);
    }
    c
}

fn filtered_noise(h: usize, w: usize, rng: &mut impl Rng) -> Canvas {
    let sigma: f32 = rng.gen_range(0.8..3.0);
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = taps.iter().sum();
    let mean = color(rng);
    let contrast: f32 = rng.gen_range(0.15..0.4);
    let mut planes = Vec::new();
    for ch in 0..3 {
        let white: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |v: &Vec<f32>, y: i64, x: i64| v[(y.rem_euclid(h as i64) as usize) * w + x.rem_euclid(w as i64) as usize];
        let mut tmp = vec![0f32; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                tmp[y as usize * w + x as usize] = (-radius..=radius)
                    .zip(&taps)
                    .map(|(d, t)| t * at(&white, y, x + d))
                    .sum::<f32>()
                    / norm;
            }
        }
        let mut out = vec![0f32; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                out[y as usize * w + x as usize] = (-radius..=radius)
                    .zip(&taps)
                    .map(|(d, t)| t * at(&tmp, y + d, x))
                    .sum::<f32>()
                    / norm;
            }
        }
        let sd = (out.iter().map(|v| v * v).sum::<f32>() / out.len() as f32).sqrt().max(1e-6);
        planes.push(out.into_iter().map(|v| mean[ch] + contrast * v / sd).collect::<Vec<_>>());
    }
    Canvas::new(h, w, |y, x| {
        let i = y as usize * w + x as usize;
        [planes[0][i], planes[1][i], planes[2][i]]
    })
}

fn shapes(h: usize, w: usize, rng: &mut impl Rng) -> Canvas {
    let mut c = gradient(h, w, rng);
    for _ in 0..rng.gen_range(2..6) {
        let col = color(rng);
        let (cy, cx) = (rng.gen_range(0.0..h as f32), rng.gen_range(0.0..w as f32));
        let (ry, rx) = (rng.gen_range(2.0..h as f32 / 2.5), rng.gen_range(2.0..w as f32 / 2.5));
        if rng.gen_bool(0.5) {
            c.blend(
                |y, x| {
                    let d = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
                    (0.5 - (d - 1.0) * ry.min(rx)).clamp(0.0, 1.0)
                },
                col,
            );
        } else {
            c.blend(
                |y, x| smoothstep(ry, (y - cy).abs()).min(smoothstep(rx, (x - cx).abs())),
                col,
            );
        }
    }
    c
}

/// One synthetic RGB image. The same `(kind, size, seed)` always gives the same pixels.
pub fn synthetic_image(kind: SyntheticKind, height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::Gradient => gradient(height, width, &mut rng),
        SyntheticKind::Checkerboard => checkerboard(height, width, &mut rng),
        SyntheticKind::Blobs => blobs(height, width, &mut rng),
        SyntheticKind::FilteredNoise => filtered_noise(height, width, &mut rng),
        SyntheticKind::Shapes => shapes(height, width, &mut rng),
    }
    .into_image()
}

// Seven-segment layout: a, b, c, d, e, f, g.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// Grayscale handwritten-style digit: light strokes on black, jittered by `seed`.
pub fn digit_image(digit: u8, size: usize, seed: u64) -> Result<ImageTensor> {
    if digit > 9 {
        return Err(Error::InvalidParameter(format!("digit {digit} outside 0..=9")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (digit as u64) << 56);
    let s = size as f32;
    let (top, bottom) = (s * rng.gen_range(0.16..0.22), s * rng.gen_range(0.78..0.84));
    let (left, right) = (s * rng.gen_range(0.28..0.34), s * rng.gen_range(0.66..0.72));
    let mid = (top + bottom) / 2.0 + rng.gen_range(-0.03..0.03) * s;
    let slant: f32 = rng.gen_range(-0.15..0.15);
    let thick = s * rng.gen_range(0.06..0.09);
    let ink: f32 = rng.gen_range(0.85..1.0);
    let segs = [
        ((top, left), (top, right)),
        ((top, right), (mid, right)),
        ((mid, right), (bottom, right)),
        ((bottom, left), (bottom, right)),
        ((mid, left), (bottom, left)),
        ((top, left), (mid, left)),
        ((mid, left), (mid, right)),
    ];
    let on = SEGMENTS[digit as usize];
    ImageTensor::from_fn(1, size, size, |_, y, x| {
        let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
        // undo the slant so segments stay axis-aligned in the sheared frame
        let px = px + slant * (py - s / 2.0);
        let mut best = f32::INFINITY;
        for (i, ((y0, x0), (y1, x1))) in segs.iter().enumerate() {
            if !on[i] {
                continue;
            }
            let (vy, vx) = (y1 - y0, x1 - x0);
            let t = (((py - y0) * vy + (px - x0) * vx) / (vy * vy + vx * vx)).clamp(0.0, 1.0);
            let d = ((py - y0 - t * vy).powi(2) + (px - x0 - t * vx).powi(2)).sqrt();
            best = best.min(d);
        }
        ink * smoothstep(thick, best)
    })
}

/// A collection of identified images.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    items: Vec<(String, ImageTensor)>,
}

impl Dataset {
    pub fn from_images(items: Vec<(String, ImageTensor)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        Ok(Self { items })
    }

    /// `n` synthetic images cycling through every [`SyntheticKind`].
    pub fn synthetic(n: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..n)
            .map(|i| {
                let kind = SyntheticKind::ALL[i % SyntheticKind::ALL.len()];
                let s: u64 = rng.gen();
                (format!("{}-{i:04}", kind.name()), synthetic_image(kind, height, width, s))
            })
            .collect();
        Self::from_images(items)
    }

    /// Every `.png` and float sidecar in a directory, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png") || e == io::SIDECAR_EXTENSION)
            })
            .collect();
        paths.sort();
        let items = paths
            .iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((id, io::load_image(p)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(items).map_err(|_| Error::Dataset(format!("no images in {}", dir.display())))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(String, ImageTensor)] {
        &self.items
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.items.iter().map(|(_, im)| im)
    }

    /// A `size x size` patch from a uniformly chosen image at a uniform offset.
    pub fn random_crop(&self, size: usize, rng: &mut impl Rng) -> Result<ImageTensor> {
        let (_, im) = self
            .items
            .choose(rng)
            .ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
        if im.height() < size || im.width() < size {
            return Err(Error::Dataset(format!(
                "{}x{} image is smaller than the {size}x{size} patch",
                im.height(),
                im.width()
            )));
        }
        let y0 = rng.gen_range(0..=im.height() - size);
        let x0 = rng.gen_range(0..=im.width() - size);
        im.crop(y0, x0, size, size)
    }

    pub fn random_batch(&self, n: usize, size: usize, rng: &mut impl Rng) -> Result<Vec<ImageTensor>> {
        (0..n).map(|_| self.random_crop(size, rng)).collect()
    }
}
