//! Illumination corruptions (computed on the fly) and training augmentations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::image::Image;

pub const SEVERITIES: usize = 5;

/// Added to HSV value, per severity 1–5.
pub const BRIGHTNESS_SHIFTS: [f64; SEVERITIES] = [0.1, 0.2, 0.3, 0.4, 0.5];
/// Contrast scale about the per-channel mean, per severity 1–5.
pub const CONTRAST_SCALES: [f64; SEVERITIES] = [0.4, 0.3, 0.2, 0.1, 0.05];
/// Intensity multiplier, per severity 1–5.
pub const DARKEN_FACTORS: [f64; SEVERITIES] = [0.8, 0.6, 0.4, 0.25, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Brightness,
    Contrast,
    Darken,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Darken,
    ];

    pub fn table(self) -> &'static [f64; SEVERITIES] {
        match self {
            CorruptionKind::Brightness => &BRIGHTNESS_SHIFTS,
            CorruptionKind::Contrast => &CONTRAST_SCALES,
            CorruptionKind::Darken => &DARKEN_FACTORS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Darken => "darken",
        }
    }

    /// Applies this corruption with an explicit strength instead of a severity.
    pub fn apply_with(self, image: &Image, strength: f64) -> Result<Image> {
        match self {
            CorruptionKind::Brightness => corrupt_brightness(image, strength),
            CorruptionKind::Contrast => Ok(corrupt_contrast(image, strength)),
            CorruptionKind::Darken => Ok(corrupt_darken(image, strength)),
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "corruption",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=SEVERITIES as u8).contains(&severity) {
            return Err(config_err(format!("severity must be 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity })
    }

    pub fn strength(&self) -> f64 {
        self.kind.table()[usize::from(self.severity) - 1]
    }

    pub fn apply(&self, image: &Image) -> Result<Image> {
        self.kind.apply_with(image, self.strength())
    }
}

/// `(h, s, v)` with `h` in sextants `[0, 6)`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h.rem_euclid(2.0)) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Adds `shift` to the HSV value channel (clamped at 1) and converts back.
pub fn corrupt_brightness(image: &Image, shift: f64) -> Result<Image> {
    if image.channels() != 3 {
        return Err(Error::Image(format!(
            "brightness corruption needs 3 channels, got {}",
            image.channels()
        )));
    }
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
        let (r, g, b) = hsv_to_rgb(h, s, (v + shift).min(1.0));
        px[0] = r.clamp(0.0, 1.0);
        px[1] = g.clamp(0.0, 1.0);
        px[2] = b.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Per-channel spatial means accumulated in raster order.
pub fn channel_means(image: &Image) -> Vec<f64> {
    let n = image.pixels() as f64;
    (0..image.channels())
        .map(|c| image.channel(c).fold(0.0, |s, x| s + x) / n)
        .collect()
}

/// `s·x + (1-s)·mean` per channel; exactly the identity at `s = 1`.
pub fn corrupt_contrast(image: &Image, scale: f64) -> Image {
    let means = channel_means(image);
    let ch = image.channels();
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = scale * *v + (1.0 - scale) * means[i % ch];
    }
    out
}

pub fn corrupt_darken(image: &Image, factor: f64) -> Image {
    image.map(|x| factor * x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Multiplicative brightness jitter range.
    pub jitter: (f64, f64),
    pub crop_padding: usize,
    pub hflip_prob: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            jitter: (0.5, 1.0),
            crop_padding: 4,
            hflip_prob: 0.5,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.jitter;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(config_err(format!("jitter range ({lo}, {hi}) must lie within (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(config_err("flip probability must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AugmentDraw {
        let (lo, hi) = self.jitter;
        let p = self.crop_padding;
        AugmentDraw {
            scale: if lo == hi { lo } else { rng.gen_range(lo..=hi) },
            offset_y: rng.gen_range(0..=2 * p),
            offset_x: rng.gen_range(0..=2 * p),
            flip: rng.gen_bool(self.hflip_prob),
        }
    }
}

/// One realization of the random augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    /// Crop origin inside the zero-padded image.
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

impl AugmentDraw {
    /// The draw that leaves an image unchanged for padding `p`.
    pub fn identity(padding: usize) -> Self {
        Self {
            scale: 1.0,
            offset_y: padding,
            offset_x: padding,
            flip: false,
        }
    }
}

/// Brightness jitter, then zero-padded random crop, then optional horizontal flip.
pub fn augment_with(image: &Image, padding: usize, draw: &AugmentDraw) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let scaled = corrupt_darken(image, draw.scale);
    Image::from_fn(h, w, ch, |y, x, c| {
        let x = if draw.flip { w - 1 - x } else { x };
        let sy = (y + draw.offset_y).checked_sub(padding).filter(|&v| v < h);
        let sx = (x + draw.offset_x).checked_sub(padding).filter(|&v| v < w);
        match (sy, sx) {
            (Some(sy), Some(sx)) => scaled.get(sy, sx, c),
            _ => 0.0,
        }
    })
}

pub fn augment(image: &Image, spec: &AugmentSpec, rng: &mut impl Rng) -> Image {
    let draw = spec.sample(rng);
    augment_with(image, spec.crop_padding, &draw)
}
