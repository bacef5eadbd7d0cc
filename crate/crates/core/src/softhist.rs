//! Per-channel differentiable soft histograms.
//!
//! Each pixel contributes a Gaussian RBF response `exp(-(x - c_i)^2 / gamma)` to
//! every bin; responses are averaged over spatial locations. The result depends
//! only on the single image passed in.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{config_err, Error, Result};
use crate::image::Image;
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    bins: usize,
    gamma: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            gamma: 0.01,
        }
    }
}

impl HistogramConfig {
    pub fn new(bins: usize, gamma: f64) -> Result<Self> {
        let cfg = Self { bins, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(config_err(format!("histogram needs at least 2 bins, got {}", self.bins)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(config_err(format!("RBF bandwidth must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Bin centers `i/(K-1)`, endpoint-inclusive.
    pub fn centers(&self) -> Vec<f64> {
        let last = (self.bins - 1) as f64;
        (0..self.bins).map(|i| i as f64 / last).collect()
    }
}

/// `C×K` matrix of mean RBF responses.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftHistogram {
    channels: usize,
    bins: usize,
    values: Vec<f64>,
}

impl SoftHistogram {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Row-major `C×K` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.bins..(c + 1) * self.bins]
    }
}

/// Computes the soft histogram of every channel of `image`.
///
/// Per channel the pixel values are sorted before accumulation, so the
/// reduction order depends only on the multiset of values. Any spatial
/// permutation therefore yields a bit-identical result.
pub fn soft_histogram(image: &Image, cfg: &HistogramConfig) -> Result<SoftHistogram> {
    cfg.validate()?;
    if image.pixels() == 0 || image.channels() == 0 {
        return Err(Error::Image("soft histogram of an empty image".into()));
    }
    let centers = cfg.centers();
    let inv_gamma = 1.0 / cfg.gamma;
    let n = image.pixels() as f64;
    let mut values = Vec::with_capacity(image.channels() * cfg.bins);
    let mut column: Vec<f64> = Vec::with_capacity(image.pixels());
    for c in 0..image.channels() {
        column.clear();
        column.extend(image.channel(c));
        column.sort_unstable_by(f64::total_cmp);
        for &center in &centers {
            let sum = column.iter().fold(0.0, |s, &x| {
                let d = x - center;
                s + (-(d * d) * inv_gamma).exp()
            });
            values.push(sum / n);
        }
    }
    Ok(SoftHistogram {
        channels: image.channels(),
        bins: cfg.bins,
        values,
    })
}

pub fn soft_histogram_batch(images: &[Image], cfg: &HistogramConfig, exec: Exec) -> Result<Vec<SoftHistogram>> {
    par::try_map(images, exec, |img| soft_histogram(img, cfg))
}

/// Differentiable soft histogram of a `B×P×C` pixel tensor, returning `B×C×K`.
///
/// Built from tape primitives so gradients reach the pixels when `pixels`
/// requires them. Accumulates in raster order; use [`soft_histogram`] when
/// pixels are data rather than variables.
pub fn soft_histogram_var(tape: &mut Tape, pixels: Var, cfg: &HistogramConfig) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.shape(pixels).to_vec();
    let [b, p, c] = shape[..] else {
        return Err(Error::ShapeMismatch {
            op: "soft_histogram",
            lhs: shape,
            rhs: vec![],
        });
    };
    if p == 0 {
        return Err(Error::Image("soft histogram of an empty image".into()));
    }
    let k = cfg.bins;
    let x = tape.reshape(pixels, vec![b, p, c, 1])?;
    let centers = tape.constant(Tensor::new(vec![1, 1, 1, k], cfg.centers())?);
    let diff = tape.sub(x, centers)?;
    let sq = tape.mul(diff, diff)?;
    let arg = tape.scale(sq, -1.0 / cfg.gamma)?;
    let rbf = tape.exp(arg)?;
    tape.mean_axis(rbf, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rbf(x: f64, c: f64) -> f64 {
        (-(x - c).powi(2) / 0.01).exp()
    }

    #[test]
    fn centers_are_endpoint_inclusive() {
        let c = HistogramConfig::default().centers();
        assert_eq!(c.len(), 16);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[15], 1.0);
        for w in c.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 15.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_config_and_image() {
        assert!(HistogramConfig::new(16, 0.0).is_err());
        assert!(HistogramConfig::new(16, -1.0).is_err());
        assert!(HistogramConfig::new(1, 0.01).is_err());
        let empty = Image::new(0, 0, 3, vec![]).unwrap();
        assert!(soft_histogram(&empty, &HistogramConfig::default()).is_err());
    }

    #[test]
    fn constant_image_matches_closed_form() {
        let cfg = HistogramConfig::default();
        let v = 0.37;
        let h = soft_histogram(&Image::filled(5, 7, 3, v), &cfg).unwrap();
        for c in 0..3 {
            for (i, &ci) in cfg.centers().iter().enumerate() {
                let got = h.channel(c)[i];
                assert!((got - rbf(v, ci)).abs() <= 1e-15 * rbf(v, ci).max(1e-300));
            }
        }
    }

    #[test]
    fn pixels_on_a_center() {
        let cfg = HistogramConfig::default();
        let centers = cfg.centers();
        let h = soft_histogram(&Image::filled(4, 4, 1, centers[5]), &cfg).unwrap();
        assert_eq!(h.channel(0)[5], 1.0);
        for j in 0..16 {
            assert!(h.channel(0)[j] > 0.0 && h.channel(0)[j] <= 1.0);
            if j != 5 {
                assert!((h.channel(0)[j] - rbf(centers[5], centers[j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn response_decreases_with_distance() {
        let cfg = HistogramConfig::default();
        let h = soft_histogram(&Image::filled(2, 2, 1, 0.0), &cfg).unwrap();
        for w in h.channel(0).windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn tape_route_agrees_with_direct_route() {
        let cfg = HistogramConfig::default();
        let img = Image::from_fn(6, 5, 3, |y, x, c| ((y * 7 + x * 3 + c * 11) % 17) as f64 / 16.0);
        let direct = soft_histogram(&img, &cfg).unwrap();
        let mut tape = Tape::new();
        let px = tape.constant(Tensor::new(vec![1, 30, 3], img.data().to_vec()).unwrap());
        let h = soft_histogram_var(&mut tape, px, &cfg).unwrap();
        assert_eq!(tape.shape(h), &[1, 3, 16]);
        for (a, b) in tape.value(h).data().iter().zip(direct.values()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-30), "{a} vs {b}");
        }
    }
}
