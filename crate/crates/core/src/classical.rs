//! Parameter-free baseline pre-processors: histogram equalization, CLAHE and gamma.
//!
//! HE and CLAHE quantize each channel independently to 256 levels
//! (`round(255·x)`, half away from zero). A channel (or tile) with a single
//! occupied level is left unchanged.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::image::Image;

pub const LEVELS: usize = 256;
const MAX_LEVEL: f64 = (LEVELS - 1) as f64;

pub const DEFAULT_GAMMAS: [f64; 3] = [1.5, 2.2, 3.0];
pub const DEFAULT_CLAHE_TILES: usize = 4;
pub const DEFAULT_CLAHE_CLIP: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassicalSpec {
    He,
    Clahe { tiles: usize, clip: f64 },
    Gamma { gamma: f64 },
}

impl ClassicalSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassicalSpec::He => Ok(()),
            ClassicalSpec::Clahe { tiles, clip } => check_clahe(tiles, clip),
            ClassicalSpec::Gamma { gamma } => check_gamma(gamma),
        }
    }

    pub fn apply(&self, image: &Image) -> Result<Image> {
        match *self {
            ClassicalSpec::He => Ok(hist_equalize(image)),
            ClassicalSpec::Clahe { tiles, clip } => clahe(image, tiles, clip),
            ClassicalSpec::Gamma { gamma } => gamma_correct(image, gamma),
        }
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if g > 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("gamma must be positive, got {g}")))
    }
}

fn check_clahe(tiles: usize, clip: f64) -> Result<()> {
    if tiles < 1 {
        return Err(config_err("CLAHE needs at least one tile"));
    }
    if clip.is_nan() || clip < 1.0 {
        return Err(config_err(format!("CLAHE clip multiplier must be >= 1, got {clip}")));
    }
    Ok(())
}

/// `x^g` elementwise.
pub fn gamma_correct(image: &Image, g: f64) -> Result<Image> {
    check_gamma(g)?;
    Ok(image.map(|x| x.powf(g)))
}

#[inline]
pub fn quantize(x: f64) -> usize {
    (x * MAX_LEVEL).round().clamp(0.0, MAX_LEVEL) as usize
}

/// Maps each level through the normalized CDF, or `None` for a single occupied level.
fn equalization_lut(hist: &[u64; LEVELS]) -> Option<[u16; LEVELS]> {
    let total: u64 = hist.iter().sum();
    let cdf_min = *hist.iter().find(|&&h| h > 0)?;
    if cdf_min == total {
        return None;
    }
    let denom = (total - cdf_min) as f64;
    let mut lut = [0u16; LEVELS];
    let mut cdf = 0u64;
    for (level, &h) in hist.iter().enumerate() {
        cdf += h;
        let v = if cdf < cdf_min {
            0.0
        } else {
            (MAX_LEVEL * (cdf - cdf_min) as f64 / denom).round()
        };
        lut[level] = v as u16;
    }
    Some(lut)
}

fn channel_levels(image: &Image, c: usize) -> Vec<usize> {
    image.channel(c).map(quantize).collect()
}

/// Global histogram equalization, channel by channel.
pub fn hist_equalize(image: &Image) -> Image {
    let mut out = image.clone();
    let ch = image.channels();
    for c in 0..ch {
        let levels = channel_levels(image, c);
        let mut hist = [0u64; LEVELS];
        levels.iter().for_each(|&l| hist[l] += 1);
        let Some(lut) = equalization_lut(&hist) else { continue };
        for (p, &l) in levels.iter().enumerate() {
            out.data_mut()[p * ch + c] = f64::from(lut[l]) / MAX_LEVEL;
        }
    }
    out
}

/// Tile partition of an `height×width` plane into at most `tiles×tiles` regions.
///
/// Tile extents use ceiling division, so trailing tiles may be smaller; tiles
/// that would be empty are dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_height: usize,
    pub tile_width: usize,
    pub rows: Vec<Range<usize>>,
    pub cols: Vec<Range<usize>>,
}

impl TileGrid {
    pub fn new(height: usize, width: usize, tiles: usize) -> Result<Self> {
        check_clahe(tiles, 1.0)?;
        let split = |len: usize| {
            let step = len.div_ceil(tiles).max(1);
            let ranges = (0..tiles)
                .map(|t| (t * step).min(len)..((t + 1) * step).min(len))
                .filter(|r| !r.is_empty())
                .collect::<Vec<_>>();
            (step, ranges)
        };
        let (tile_height, rows) = split(height);
        let (tile_width, cols) = split(width);
        Ok(Self {
            tile_height,
            tile_width,
            rows,
            cols,
        })
    }
}

/// Neighbouring tile indices and the weight of the second one.
fn interp_coord(pos: usize, step: usize, count: usize) -> (usize, usize, f64) {
    let g = (pos as f64 + 0.5) / step as f64 - 0.5;
    if g <= 0.0 || count == 1 {
        (0, 0, 0.0)
    } else if g >= (count - 1) as f64 {
        (count - 1, count - 1, 0.0)
    } else {
        let lo = g.floor() as usize;
        (lo, lo + 1, g - lo as f64)
    }
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each tile's 256-bin histogram is clipped at `clip·n/256` counts (at least 1);
/// the excess is spread evenly over all bins and the integer remainder goes to
/// the lowest bins. Output pixels bilinearly interpolate the four nearest tile
/// mappings (clamped at the borders) and are rounded back to a level.
pub fn clahe(image: &Image, tiles: usize, clip: f64) -> Result<Image> {
    check_clahe(tiles, clip)?;
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let grid = TileGrid::new(h, w, tiles)?;
    let mut out = image.clone();
    for c in 0..ch {
        let levels = channel_levels(image, c);
        let first = levels.first().copied();
        if levels.iter().all(|&l| Some(l) == first) {
            continue;
        }
        let luts: Vec<Vec<[f64; LEVELS]>> = grid
            .rows
            .iter()
            .map(|rows| {
                grid.cols
                    .iter()
                    .map(|cols| {
                        let mut hist = [0u64; LEVELS];
                        for y in rows.clone() {
                            for x in cols.clone() {
                                hist[levels[y * w + x]] += 1;
                            }
                        }
                        tile_lut(&mut hist, clip)
                    })
                    .collect()
            })
            .collect();
        for y in 0..h {
            let (ty0, ty1, fy) = interp_coord(y, grid.tile_height, grid.rows.len());
            for x in 0..w {
                let (tx0, tx1, fx) = interp_coord(x, grid.tile_width, grid.cols.len());
                let l = levels[y * w + x];
                let (m00, m01) = (luts[ty0][tx0][l], luts[ty0][tx1][l]);
                let (m10, m11) = (luts[ty1][tx0][l], luts[ty1][tx1][l]);
                let top = m00 + fx * (m01 - m00);
                let bottom = m10 + fx * (m11 - m10);
                let v = top + fy * (bottom - top);
                out.set(y, x, c, v.round() / MAX_LEVEL);
            }
        }
    }
    Ok(out)
}

fn tile_lut(hist: &mut [u64; LEVELS], clip: f64) -> [f64; LEVELS] {
    let occupied = hist.iter().filter(|&&n| n > 0).count();
    let mut lut = [0.0; LEVELS];
    if occupied <= 1 {
        lut.iter_mut().enumerate().for_each(|(l, v)| *v = l as f64);
        return lut;
    }
    if clip.is_finite() {
        let n: u64 = hist.iter().sum();
        let limit = ((clip * n as f64 / LEVELS as f64).floor() as u64).max(1);
        let mut excess = 0;
        for b in hist.iter_mut() {
            if *b > limit {
                excess += *b - limit;
                *b = limit;
            }
        }
        let per_bin = excess / LEVELS as u64;
        let remainder = (excess % LEVELS as u64) as usize;
        for (i, b) in hist.iter_mut().enumerate() {
            *b += per_bin + u64::from(i < remainder);
        }
    }
    match equalization_lut(hist) {
        Some(eq) => lut.iter_mut().zip(eq).for_each(|(v, e)| *v = f64::from(e)),
        None => lut.iter_mut().enumerate().for_each(|(l, v)| *v = l as f64),
    }
    lut
}
