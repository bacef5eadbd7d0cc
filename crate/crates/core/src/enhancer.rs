//! Front-end selection and the learned GC-ART enhancer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Tape, Tensor, Var};
use crate::classical::{ClassicalSpec, DEFAULT_CLAHE_CLIP, DEFAULT_CLAHE_TILES};
use crate::error::{Error, Result};
use crate::hypernet::{HyperNet, HyperNetVars};
use crate::image::Image;
use crate::par::Exec;
use crate::softhist::{soft_histogram, soft_histogram_batch, HistogramConfig};
use crate::tonecurve::{
    apply_curve, apply_curve_var, effective_params_var, mono_penalty_var, CurveParams, CurveVars, MonoConfig,
};

/// Pre-processor placed in front of the classifier.
///
/// Parses from `none`, `gcart`, `he`, `clahe`, `clahe:<tiles>:<clip>` or `gamma:<g>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Enhancer {
    None,
    GcArt,
    Classical(ClassicalSpec),
}

impl Enhancer {
    pub fn is_learned(&self) -> bool {
        matches!(self, Enhancer::GcArt)
    }

    /// Applies a fixed (non-learned) front-end; `GcArt` is rejected here.
    pub fn apply_fixed(&self, image: &Image) -> Result<Image> {
        match self {
            Enhancer::None => Ok(image.clone()),
            Enhancer::Classical(spec) => spec.apply(image),
            Enhancer::GcArt => Err(Error::Config("gcart needs learned weights".into())),
        }
    }
}

impl fmt::Display for Enhancer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Enhancer::None => f.write_str("none"),
            Enhancer::GcArt => f.write_str("gcart"),
            Enhancer::Classical(ClassicalSpec::He) => f.write_str("he"),
            Enhancer::Classical(ClassicalSpec::Clahe { tiles, clip })
                if *tiles == DEFAULT_CLAHE_TILES && *clip == DEFAULT_CLAHE_CLIP =>
            {
                f.write_str("clahe")
            }
            Enhancer::Classical(ClassicalSpec::Clahe { tiles, clip }) => write!(f, "clahe:{tiles}:{clip}"),
            Enhancer::Classical(ClassicalSpec::Gamma { gamma }) => write!(f, "gamma:{gamma}"),
        }
    }
}

impl FromStr for Enhancer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Unknown {
            kind: "enhancer",
            name: s.to_string(),
        };
        let mut parts = s.split(':');
        let e = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("none"), None, ..) => Enhancer::None,
            (Some("gcart"), None, ..) => Enhancer::GcArt,
            (Some("he"), None, ..) => Enhancer::Classical(ClassicalSpec::He),
            (Some("clahe"), None, ..) => Enhancer::Classical(ClassicalSpec::Clahe {
                tiles: DEFAULT_CLAHE_TILES,
                clip: DEFAULT_CLAHE_CLIP,
            }),
            (Some("clahe"), Some(t), Some(c), None) => Enhancer::Classical(ClassicalSpec::Clahe {
                tiles: t.parse().map_err(|_| unknown())?,
                clip: c.parse().map_err(|_| unknown())?,
            }),
            (Some("gamma"), Some(g), None, _) => Enhancer::Classical(ClassicalSpec::Gamma {
                gamma: g.parse().map_err(|_| unknown())?,
            }),
            _ => return Err(unknown()),
        };
        if let Enhancer::Classical(spec) = &e {
            spec.validate()?;
        }
        Ok(e)
    }
}

impl Serialize for Enhancer {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Enhancer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Histogram-conditioned rational tone-curve enhancer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcArt {
    pub hypernet: HyperNet,
    pub histogram: HistogramConfig,
    pub mono: MonoConfig,
}

/// Tape values produced by [`GcArt::forward_var`].
#[derive(Clone, Copy, Debug)]
pub struct GcArtOutput {
    /// Enhanced pixels, `B×P×C`.
    pub pixels: Var,
    /// Mean monotonicity penalty over images, channels and grid steps.
    pub mono: Var,
    pub curves: CurveVars,
}

impl GcArt {
    pub fn new(hypernet: HyperNet, histogram: HistogramConfig, mono: MonoConfig) -> Result<Self> {
        histogram.validate()?;
        mono.validate()?;
        if hypernet.inputs() != histogram.bins() {
            return Err(Error::ShapeMismatch {
                op: "gcart",
                lhs: vec![hypernet.inputs()],
                rhs: vec![histogram.bins()],
            });
        }
        Ok(Self {
            hypernet,
            histogram,
            mono,
        })
    }

    /// Per-channel effective curves predicted for `image`.
    pub fn curves(&self, image: &Image) -> Result<Vec<CurveParams>> {
        let hist = soft_histogram(image, &self.histogram)?;
        Ok(self.hypernet.predict(&hist)?.iter().map(|r| r.effective()).collect())
    }

    pub fn enhance(&self, image: &Image) -> Result<Image> {
        apply_curve(image, &self.curves(image)?)
    }

    /// Differentiable enhancement of a batch whose pixels are data.
    ///
    /// `pixels` must be the `B×P×C` tensor of `images`; histograms are taken
    /// from `images` directly since no gradient flows into data.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        weights: &HyperNetVars,
        images: &[Image],
        pixels: Var,
        exec: Exec,
    ) -> Result<GcArtOutput> {
        let hists = soft_histogram_batch(images, &self.histogram, exec)?;
        let channels = images.first().map_or(0, Image::channels);
        let rows = images.len() * channels;
        let flat: Vec<f64> = hists.iter().flat_map(|h| h.values().iter().copied()).collect();
        let hist = tape.constant(Tensor::new(vec![rows, self.histogram.bins()], flat)?);
        self.forward_from_hist(tape, weights, hist, pixels)
    }

    /// Enhancement given an `(B·C)×K` histogram variable (image-major rows).
    pub fn forward_from_hist(
        &self,
        tape: &mut Tape,
        weights: &HyperNetVars,
        hist: Var,
        pixels: Var,
    ) -> Result<GcArtOutput> {
        let raw = HyperNet::forward_var(tape, weights, hist)?;
        let curves = effective_params_var(tape, raw)?;
        let out = apply_curve_var(tape, pixels, &curves)?;
        let mono = mono_penalty_var(tape, &curves, &self.mono)?;
        Ok(GcArtOutput {
            pixels: out,
            mono,
            curves,
        })
    }
}
