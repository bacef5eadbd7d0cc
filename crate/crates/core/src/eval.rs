//! Clean and corrupted accuracy, per-seed reports and multi-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corruptions::{CorruptionKind, CorruptionSpec, SEVERITIES};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Classifier, Model};
use crate::par::{self, Exec};

/// Images per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 250;

/// Top-1 accuracy in percent, optionally after corrupting every image.
pub fn evaluate<C: Classifier>(
    model: &Model<C>,
    ds: &Dataset,
    corruption: Option<CorruptionSpec>,
    exec: Exec,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let chunks = ds.len().div_ceil(EVAL_CHUNK);
    let counts = par::try_map_indexed(chunks, exec, |k| {
        let lo = k * EVAL_CHUNK;
        let hi = (lo + EVAL_CHUNK).min(ds.len());
        let images: Vec<Image> = match corruption {
            Some(spec) => ds.images[lo..hi].iter().map(|im| spec.apply(im)).collect::<Result<_>>()?,
            None => ds.images[lo..hi].to_vec(),
        };
        let preds = model.predict(&images, Exec::Sequential)?;
        Ok(preds
            .iter()
            .zip(&ds.labels[lo..hi])
            .filter(|(&p, &l)| p == usize::from(l))
            .count())
    })?;
    let correct: usize = counts.iter().sum();
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionResult {
    pub per_severity: Vec<f64>,
    pub mean: f64,
}

/// One seed's results: `{"version":1,"seed":…,"config":{…},"clean_acc":…,"corruptions":{…}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub config: Value,
    pub clean_acc: f64,
    pub corruptions: BTreeMap<String, CorruptionResult>,
}

/// Accuracy under every corruption family at severities 1–5.
pub fn corruption_sweep<C: Classifier>(
    model: &Model<C>,
    ds: &Dataset,
    exec: Exec,
) -> Result<BTreeMap<String, CorruptionResult>> {
    let mut out = BTreeMap::new();
    for kind in CorruptionKind::ALL {
        let per_severity = (1..=SEVERITIES as u8)
            .map(|s| evaluate(model, ds, Some(CorruptionSpec::new(kind, s)?), exec))
            .collect::<Result<Vec<f64>>>()?;
        let mean = per_severity.iter().sum::<f64>() / per_severity.len() as f64;
        out.insert(kind.name().to_string(), CorruptionResult { per_severity, mean });
    }
    Ok(out)
}

impl EvalReport {
    pub fn run<C: Classifier>(model: &Model<C>, ds: &Dataset, seed: u64, config: Value, exec: Exec) -> Result<Self> {
        Ok(Self {
            version: 1,
            seed,
            config,
            clean_acc: evaluate(model, ds, None, exec)?,
            corruptions: corruption_sweep(model, ds, exec)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_slice(&fs::read(path)?)?;
        if r.version != 1 {
            return Err(Error::Version(r.version));
        }
        Ok(r)
    }
}

/// Pretty JSON with a trailing newline, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    /// `sd` uses the `n-1` denominator and is 0 for a single value.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSummary {
    pub per_severity: Vec<Stat>,
    pub mean: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub seeds: Vec<u64>,
    pub config: Value,
    pub clean_acc: Stat,
    pub corruptions: BTreeMap<String, CorruptionSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn without_seed(config: &Value) -> Value {
    let mut c = config.clone();
    if let Value::Object(map) = &mut c {
        map.remove("seed");
    }
    c
}

/// Mean ± sd across seeds. Reports must agree on everything except the seed.
pub fn aggregate(reports: &[EvalReport]) -> Result<Summary> {
    let first = reports.first().ok_or(Error::EmptyDataset)?;
    let base = without_seed(&first.config);
    let mut seeds: Vec<u64> = Vec::with_capacity(reports.len());
    for r in reports {
        if without_seed(&r.config) != base {
            return Err(Error::InconsistentReports(format!(
                "seed {} has a different configuration from seed {}",
                r.seed, first.seed
            )));
        }
        if seeds.contains(&r.seed) {
            return Err(Error::InconsistentReports(format!("seed {} appears twice", r.seed)));
        }
        let same_layout = r.corruptions.len() == first.corruptions.len()
            && r.corruptions.iter().all(|(k, v)| {
                first
                    .corruptions
                    .get(k)
                    .is_some_and(|f| f.per_severity.len() == v.per_severity.len())
            });
        if !same_layout {
            return Err(Error::InconsistentReports(format!(
                "seed {} covers different corruptions or severities",
                r.seed
            )));
        }
        seeds.push(r.seed);
    }
    let mut warnings = Vec::new();
    if reports.len() == 1 {
        warnings.push("single seed: standard deviations are reported as 0".to_string());
        log::warn!("aggregating a single seed; sd is 0");
    }
    let col = |f: &dyn Fn(&EvalReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
    let corruptions = first
        .corruptions
        .iter()
        .map(|(name, c)| {
            let per_severity = (0..c.per_severity.len())
                .map(|s| col(&|r| r.corruptions[name].per_severity[s]))
                .collect();
            let mean = col(&|r| r.corruptions[name].mean);
            (name.clone(), CorruptionSummary { per_severity, mean })
        })
        .collect();
    Ok(Summary {
        version: 1,
        seeds,
        config: base,
        clean_acc: col(&|r| r.clean_acc),
        corruptions,
        warnings,
    })
}

/// One row per labeled summary: mean and sd for clean accuracy and every corruption cell.
pub fn summary_csv(rows: &[(String, Summary)]) -> String {
    let mut out = String::from("method,n_seeds,clean_mean,clean_sd");
    let Some((_, first)) = rows.first() else {
        out.push('\n');
        return out;
    };
    for (name, c) in &first.corruptions {
        for s in 1..=c.per_severity.len() {
            let _ = write!(out, ",{name}_s{s}_mean,{name}_s{s}_sd");
        }
        let _ = write!(out, ",{name}_mean,{name}_sd");
    }
    out.push('\n');
    for (label, s) in rows {
        let _ = write!(out, "{label},{},{},{}", s.seeds.len(), s.clean_acc.mean, s.clean_acc.sd);
        for c in s.corruptions.values() {
            for st in c.per_severity.iter().chain([&c.mean]) {
                let _ = write!(out, ",{},{}", st.mean, st.sd);
            }
        }
        out.push('\n');
    }
    out
}
