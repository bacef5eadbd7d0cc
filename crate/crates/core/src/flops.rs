//! Operation-count model for the enhancer front-ends.
//!
//! The per-operation constants are calibrated so that the 32×32 totals come out
//! at 269,088 for GC-ART, 19,200 for HE and 6,144 for gamma.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::hypernet::HyperNet;

/// Calibrated cost-model constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub hist_bins: u64,
    /// Per pixel, channel and bin.
    pub hist_per_bin: u64,
    /// Hypernet MACs per channel, one FLOP each.
    pub hypernet_macs_per_channel: u64,
    /// Rational curve evaluation per pixel and channel.
    pub curve_per_value: u64,
    pub gamma_per_value: u64,
    pub he_per_value: u64,
    pub he_per_channel: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            hist_bins: 16,
            hist_per_bin: 5,
            hypernet_macs_per_channel: HyperNet::new(0).macs_per_channel() as u64,
            curve_per_value: 7,
            gamma_per_value: 2,
            he_per_value: 6,
            he_per_channel: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopModule {
    GcArt,
    He,
    Gamma,
}

impl fmt::Display for FlopModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlopModule::GcArt => "gcart",
            FlopModule::He => "he",
            FlopModule::Gamma => "gamma",
        })
    }
}

impl FromStr for FlopModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcart" => Ok(FlopModule::GcArt),
            "he" => Ok(FlopModule::He),
            "gamma" => Ok(FlopModule::Gamma),
            _ => Err(Error::Unknown {
                kind: "module",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub module: FlopModule,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub params: u64,
    /// Independent of resolution.
    pub param_prediction_flops: u64,
    /// Linear in `H·W·C`.
    pub pixel_flops: u64,
    pub total: u64,
    pub breakdown: Vec<(String, u64)>,
    pub cost_model: CostModel,
}

type Terms = Vec<(&'static str, u64)>;

pub fn count_flops(module: FlopModule, height: usize, width: usize, channels: usize) -> Result<FlopsReport> {
    count_flops_with(&CostModel::default(), module, height, width, channels)
}

pub fn count_flops_with(
    cm: &CostModel,
    module: FlopModule,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<FlopsReport> {
    if height == 0 || width == 0 {
        return Err(config_err("image size must be at least 1x1"));
    }
    if channels != 3 {
        return Err(config_err(format!("cost model assumes 3 channels, got {channels}")));
    }
    let values = (height * width * channels) as u64;
    let c = channels as u64;
    let (params, prediction, pixel): (u64, Terms, Terms) = match module {
        FlopModule::GcArt => (
            HyperNet::new(0).param_count() as u64,
            vec![("hypernet", cm.hypernet_macs_per_channel * c)],
            vec![
                ("histogram", cm.hist_per_bin * cm.hist_bins * values),
                ("curve", cm.curve_per_value * values),
            ],
        ),
        FlopModule::He => (
            0,
            vec![],
            vec![
                ("equalize", cm.he_per_value * values),
                ("cdf", cm.he_per_channel * c),
            ],
        ),
        FlopModule::Gamma => (0, vec![], vec![("power", cm.gamma_per_value * values)]),
    };
    let param_prediction_flops = prediction.iter().map(|p| p.1).sum();
    let pixel_flops = pixel.iter().map(|p| p.1).sum();
    let mut breakdown: Vec<(String, u64)> = Vec::new();
    for (name, v) in pixel.iter().take(1).chain(&prediction).chain(pixel.iter().skip(1)) {
        breakdown.push((name.to_string(), *v));
    }
    Ok(FlopsReport {
        module,
        height,
        width,
        channels,
        params,
        param_prediction_flops,
        pixel_flops,
        total: param_prediction_flops + pixel_flops,
        breakdown,
        cost_model: *cm,
    })
}

/// Reference 32×32 rows for the convolutional enhancers, shown for comparison only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceRow {
    pub name: &'static str,
    pub params: u64,
    pub total_flops: u64,
}

pub const REFERENCE_ROWS: [ReferenceRow; 2] = [
    ReferenceRow {
        name: "zero-dce",
        params: 11_011,
        total_flops: 11_252_736,
    },
    ReferenceRow {
        name: "zero-dce++",
        params: 1_953,
        total_flops: 1_908_736,
    },
];

impl fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "module: {} at {}x{}x{}", self.module, self.height, self.width, self.channels)?;
        writeln!(f, "params: {}", self.params)?;
        for (name, v) in &self.breakdown {
            writeln!(f, "  {name}: {v}")?;
        }
        writeln!(f, "param_prediction_flops: {}", self.param_prediction_flops)?;
        writeln!(f, "pixel_flops: {}", self.pixel_flops)?;
        write!(f, "total: {}", self.total)
    }
}
