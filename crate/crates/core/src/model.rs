//! Enhancer + classifier pipelines and the cross-entropy objective.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::enhancer::{Enhancer, GcArt};
use crate::error::{config_err, Error, Result};
use crate::hypernet::{HyperNet, HyperNetCheckpoint, HyperNetVars};
use crate::image::Image;
use crate::par::{self, Exec};
use crate::rng::{stream, Stream};
use crate::softhist::HistogramConfig;
use crate::tonecurve::MonoConfig;

/// A differentiable classifier over flattened images.
pub trait Classifier: Clone + Send + Sync {
    fn input_len(&self) -> usize;
    fn classes(&self) -> usize;
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// Maps `B×input_len` features to `B×classes` logits with the weights bound at `weights`.
    fn forward(&self, tape: &mut Tape, weights: &[Var], features: Var) -> Result<Var>;

    fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect()
    }
}

/// `input → hidden (ReLU) → classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpHead {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::HeadInit);
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            (
                Tensor::new(vec![fan_in, fan_out], w).expect("sized above"),
                Tensor::from_vec(b),
            )
        };
        let (w1, b1) = layer(input, hidden);
        let (w2, b2) = layer(hidden, classes);
        Self { w1, b1, w2, b2 }
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_checkpoint(&self) -> HeadCheckpoint {
        HeadCheckpoint {
            w1: self.w1.rows(),
            b1: self.b1.data().to_vec(),
            w2: self.w2.rows(),
            b2: self.b2.data().to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &HeadCheckpoint) -> Result<Self> {
        let head = Self {
            w1: Tensor::from_rows(&ck.w1)?,
            b1: Tensor::from_vec(ck.b1.clone()),
            w2: Tensor::from_rows(&ck.w2)?,
            b2: Tensor::from_vec(ck.b2.clone()),
        };
        let (i, h, k) = (head.w1.shape()[0], head.w1.shape()[1], head.w2.shape()[1]);
        if head.b1.shape() != [h] || head.w2.shape() != [h, k] || head.b2.shape() != [k] || i == 0 {
            return Err(config_err("head checkpoint has inconsistent layer shapes"));
        }
        Ok(head)
    }
}

impl Classifier for MlpHead {
    fn input_len(&self) -> usize {
        self.w1.shape()[0]
    }

    fn classes(&self) -> usize {
        self.w2.shape()[1]
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn forward(&self, tape: &mut Tape, weights: &[Var], features: Var) -> Result<Var> {
        let &[w1, b1, w2, b2] = weights else {
            return Err(Error::Arity {
                op: "mlp_head",
                expected: 4,
                got: weights.len(),
            });
        };
        let z = tape.matmul(features, w1)?;
        let z = tape.add(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        tape.add(z, b2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadCheckpoint {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Front-end followed by a classifier. `gcart` is present exactly when the enhancer is learned.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<C = MlpHead> {
    pub enhancer: Enhancer,
    pub gcart: Option<GcArt>,
    pub head: C,
}

/// Tape handles for every trainable tensor, in [`Model::tensors`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub hypernet: Option<HyperNetVars>,
    pub head: Vec<Var>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(h) = &self.hypernet {
            out.extend([h.w1, h.b1, h.w2, h.b2]);
        }
        out.extend(&self.head);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Monotonicity penalty, present for the learned enhancer.
    pub mono: Option<Var>,
    pub vars: ModelVars,
}

#[derive(Clone, Debug)]
pub struct LossParts {
    /// `ce + λ·mono`.
    pub total: Var,
    pub ce: Var,
    pub mono: Option<Var>,
    pub forward: Forward,
}

/// Shape hyper-parameters for a freshly initialized model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelShape {
    pub input: [usize; 3],
    pub head_hidden: usize,
    pub classes: usize,
    pub hypernet_hidden: usize,
    pub histogram: HistogramConfig,
    pub mono: MonoConfig,
}

impl Model<MlpHead> {
    pub fn init(enhancer: Enhancer, shape: &ModelShape, seed: u64) -> Result<Self> {
        let [h, w, c] = shape.input;
        let head = MlpHead::new(h * w * c, shape.head_hidden, shape.classes, seed);
        let gcart = if enhancer.is_learned() {
            let net = HyperNet::with_shape(shape.histogram.bins(), shape.hypernet_hidden, seed);
            Some(GcArt::new(net, shape.histogram, shape.mono)?)
        } else {
            None
        };
        Model::new(enhancer, gcart, head)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            version: 1,
            enhancer: self.enhancer,
            histogram: self.gcart.as_ref().map(|g| g.histogram),
            mono: self.gcart.as_ref().map(|g| g.mono),
            hypernet: self.gcart.as_ref().map(|g| g.hypernet.to_checkpoint()),
            head: self.head.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.version != 1 {
            return Err(Error::Version(ck.version));
        }
        let head = MlpHead::from_checkpoint(&ck.head)?;
        let gcart = match (&ck.hypernet, ck.histogram, ck.mono) {
            (Some(net), Some(hist), Some(mono)) => {
                Some(GcArt::new(HyperNet::from_checkpoint(net)?, hist, mono)?)
            }
            (None, None, None) => None,
            _ => return Err(config_err("checkpoint has a partial enhancer section")),
        };
        Model::new(ck.enhancer, gcart, head)
    }
}

impl<C: Classifier> Model<C> {
    pub fn new(enhancer: Enhancer, gcart: Option<GcArt>, head: C) -> Result<Self> {
        if enhancer.is_learned() != gcart.is_some() {
            return Err(config_err(format!(
                "enhancer '{enhancer}' and learned weights disagree"
            )));
        }
        Ok(Self { enhancer, gcart, head })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        if let Some(g) = &self.gcart {
            out.extend(g.hypernet.tensors());
        }
        out.extend(self.head.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(g) = &mut self.gcart {
            out.extend(g.hypernet.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Enhanced image as the classifier sees it (before flattening).
    pub fn enhance(&self, image: &Image) -> Result<Image> {
        match &self.gcart {
            Some(g) => g.enhance(image),
            None => self.enhancer.apply_fixed(image),
        }
    }

    /// Builds logits for a batch. Weights become leaves with `requires_grad`.
    pub fn forward(&self, tape: &mut Tape, images: &[Image], requires_grad: bool, exec: Exec) -> Result<Forward> {
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let [h, w, c] = first.shape();
        if let Some(bad) = images.iter().find(|im| !im.same_shape(first)) {
            return Err(Error::ShapeMismatch {
                op: "batch",
                lhs: first.shape().to_vec(),
                rhs: bad.shape().to_vec(),
            });
        }
        let features = h * w * c;
        if features != self.head.input_len() {
            return Err(Error::ShapeMismatch {
                op: "classifier input",
                lhs: vec![features],
                rhs: vec![self.head.input_len()],
            });
        }
        let prepared: Cow<[Image]> = match self.enhancer {
            Enhancer::Classical(spec) => Cow::Owned(par::try_map(images, exec, |im| spec.apply(im))?),
            _ => Cow::Borrowed(images),
        };
        let b = images.len();
        let flat: Vec<f64> = prepared.iter().flat_map(|im| im.data().iter().copied()).collect();
        let pixels = tape.constant(Tensor::new(vec![b, h * w, c], flat)?);

        let (enhanced, mono, hv) = match &self.gcart {
            Some(g) => {
                let hv = g.hypernet.bind(tape, requires_grad);
                let out = g.forward_var(tape, &hv, &prepared, pixels, exec)?;
                (out.pixels, Some(out.mono), Some(hv))
            }
            None => (pixels, None, None),
        };
        let x = tape.reshape(enhanced, vec![b, features])?;
        let head = self.head.bind(tape, requires_grad);
        let logits = self.head.forward(tape, &head, x)?;
        Ok(Forward {
            logits,
            mono,
            vars: ModelVars { hypernet: hv, head },
        })
    }

    /// Training objective `CE + λ·mono` on one batch.
    pub fn loss(
        &self,
        tape: &mut Tape,
        images: &[Image],
        labels: &[u8],
        requires_grad: bool,
        exec: Exec,
    ) -> Result<LossParts> {
        let forward = self.forward(tape, images, requires_grad, exec)?;
        let ce = cross_entropy_var(tape, forward.logits, labels)?;
        let total = match (forward.mono, &self.gcart) {
            (Some(m), Some(g)) => {
                let weighted = tape.scale(m, g.mono.lambda)?;
                tape.add(ce, weighted)?
            }
            _ => ce,
        };
        Ok(LossParts {
            total,
            ce,
            mono: forward.mono,
            forward,
        })
    }

    /// Predicted class per image; ties resolve to the lowest index.
    pub fn predict(&self, images: &[Image], exec: Exec) -> Result<Vec<usize>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, images, false, exec)?;
        let logits = tape.value(fwd.logits);
        let k = self.head.classes();
        Ok(logits.data().chunks_exact(k).map(argmax).collect())
    }
}

/// Index of the largest value, first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy of `B×K` logits on the tape.
pub fn cross_entropy_var(tape: &mut Tape, logits: Var, labels: &[u8]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let [b, k] = shape[..] else {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    };
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= k) {
        return Err(config_err(format!("label {l} out of range for {k} classes")));
    }
    let maxes: Vec<f64> = tape
        .value(logits)
        .data()
        .chunks_exact(k)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let m = tape.constant(Tensor::new(vec![b, 1], maxes)?);
    let s = tape.sub(logits, m)?;
    let e = tape.exp(s)?;
    let se = tape.sum_axis(e, 1)?;
    let lse = tape.log(se)?;
    let mut onehot = vec![0.0; b * k];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * k + usize::from(l)] = 1.0;
    }
    let onehot = tape.constant(Tensor::new(vec![b, k], onehot)?);
    let picked = tape.mul(s, onehot)?;
    let picked = tape.sum_axis(picked, 1)?;
    let per = tape.sub(lse, picked)?;
    tape.mean(per)
}

/// Versioned model checkpoint; enhancer sections are present only for `gcart`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub enhancer: Enhancer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mono: Option<MonoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypernet: Option<HyperNetCheckpoint>,
    pub head: HeadCheckpoint,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize) -> ModelShape {
        ModelShape {
            input: [h, w, 3],
            head_hidden: 8,
            classes: 10,
            hypernet_hidden: 32,
            histogram: HistogramConfig::default(),
            mono: MonoConfig::default(),
        }
    }

    fn ce_oracle(logits: &[f64], k: usize, labels: &[u8]) -> f64 {
        let rows: Vec<f64> = logits
            .chunks(k)
            .zip(labels)
            .map(|(r, &l)| {
                let z: f64 = r.iter().map(|v| v.exp()).sum();
                z.ln() - r[l as usize]
            })
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    }

    #[test]
    fn cross_entropy_matches_oracle() {
        let logits = vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0];
        let mut tape = Tape::new();
        let l = tape.param(Tensor::new(vec![2, 3], logits.clone()).unwrap());
        let ce = cross_entropy_var(&mut tape, l, &[1, 2]).unwrap();
        let got = tape.value(ce).item().unwrap();
        assert!((got - ce_oracle(&logits, 3, &[1, 2])).abs() < 1e-14);
        let uniform = Tensor::zeros(vec![4, 10]);
        let mut tape = Tape::new();
        let l = tape.constant(uniform);
        let ce = cross_entropy_var(&mut tape, l, &[0, 3, 9, 2]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 10f64.ln()).abs() < 1e-14);
        assert!(cross_entropy_var(&mut tape, l, &[0, 1, 2, 10]).is_err());
        assert!(cross_entropy_var(&mut tape, l, &[0]).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest() {
        assert_eq!(argmax(&[0.0, 1.0, 1.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn parameter_counts_and_layout() {
        let m = Model::init(Enhancer::GcArt, &shape(4, 4), 1).unwrap();
        assert_eq!(m.tensors().len(), 8);
        assert_eq!(m.param_count(), 643 + 48 * 8 + 8 + 8 * 10 + 10);
        let none = Model::init(Enhancer::None, &shape(4, 4), 1).unwrap();
        assert!(none.gcart.is_none());
        assert_eq!(none.param_count(), 48 * 8 + 8 + 90);
        assert!(Model::new(Enhancer::GcArt, None, none.head.clone()).is_err());
    }

    #[test]
    fn predict_matches_plain_forward() {
        let m = Model::init(Enhancer::GcArt, &shape(4, 4), 3).unwrap();
        let imgs: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(4, 4, 3, |y, x, c| ((y * 4 + x) * (c + 1) + k) as f64 % 16.0 / 15.0))
            .collect();
        let preds = m.predict(&imgs, Exec::Sequential).unwrap();
        for (im, &p) in imgs.iter().zip(&preds) {
            let x = m.enhance(im).unwrap().into_data();
            let mut hidden = m.head.b1.data().to_vec();
            for (i, xi) in x.iter().enumerate() {
                for (j, hj) in hidden.iter_mut().enumerate() {
                    *hj += xi * m.head.w1.data()[i * 8 + j];
                }
            }
            let mut out = m.head.b2.data().to_vec();
            for (j, hj) in hidden.iter().enumerate() {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += hj.max(0.0) * m.head.w2.data()[j * 10 + k];
                }
            }
            assert_eq!(argmax(&out), p);
        }
        assert_eq!(preds, m.predict(&imgs, Exec::Parallel).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        for e in [Enhancer::GcArt, Enhancer::None, "gamma:2.2".parse().unwrap()] {
            let m = Model::init(e, &shape(2, 2), 9).unwrap();
            let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
            let back = Model::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }
}
