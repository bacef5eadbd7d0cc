//! Two-layer MLP mapping one channel's soft histogram to raw curve parameters.
//!
//! `K → hidden (ReLU) → 3`, shared across channels. The output layer starts at
//! zero weights with bias `(0, -5, -5)`, so every histogram initially maps to
//! the same near-identity curve.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{config_err, Error, Result};
use crate::rng::{stream, Stream};
use crate::softhist::SoftHistogram;
use crate::tonecurve::RawCurveParams;

pub const RAW_PARAMS: usize = 3;
pub const INIT_BIAS: [f64; RAW_PARAMS] = [0.0, -5.0, -5.0];

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    /// `K×hidden`.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `hidden×3`.
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Handles to the four weight tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct HyperNetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl HyperNet {
    /// Default 16 → 32 → 3 network.
    pub fn new(seed: u64) -> Self {
        Self::with_shape(16, 32, seed)
    }

    /// First layer uniform in `±1/√inputs` with zero bias; output layer zero with bias `(0,-5,-5)`.
    pub fn with_shape(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::HyperNetInit);
        let bound = 1.0 / (inputs as f64).sqrt();
        let w1 = (0..inputs * hidden).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            w1: Tensor::new(vec![inputs, hidden], w1).expect("sized above"),
            b1: Tensor::zeros(vec![hidden]),
            w2: Tensor::zeros(vec![hidden, RAW_PARAMS]),
            b2: Tensor::from_vec(INIT_BIAS.to_vec()),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Multiply-accumulates for one forward pass on one channel.
    pub fn macs_per_channel(&self) -> usize {
        self.inputs() * self.hidden() + self.hidden() * RAW_PARAMS
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn validate(&self) -> Result<()> {
        let (k, h) = (self.inputs(), self.hidden());
        let ok = self.w1.shape() == [k, h]
            && self.b1.shape() == [h]
            && self.w2.shape() == [h, RAW_PARAMS]
            && self.b2.shape() == [RAW_PARAMS];
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "hypernet",
                lhs: self.w1.shape().to_vec(),
                rhs: self.w2.shape().to_vec(),
            })
        }
    }

    /// `W2ᵀ·relu(W1ᵀ·hist + b1) + b2` for a single channel histogram.
    pub fn predict_raw(&self, hist: &[f64]) -> Result<RawCurveParams> {
        if hist.len() != self.inputs() {
            return Err(Error::ShapeMismatch {
                op: "hypernet",
                lhs: vec![hist.len()],
                rhs: vec![self.inputs()],
            });
        }
        let h = self.hidden();
        let (w1, b1, w2, b2) = (self.w1.data(), self.b1.data(), self.w2.data(), self.b2.data());
        let mut hidden = b1.to_vec();
        for (k, &x) in hist.iter().enumerate() {
            for (j, v) in hidden.iter_mut().enumerate() {
                *v += x * w1[k * h + j];
            }
        }
        let mut out = b2.to_vec();
        for (j, &z) in hidden.iter().enumerate() {
            let z = z.max(0.0);
            for (o, v) in out.iter_mut().enumerate() {
                *v += z * w2[j * RAW_PARAMS + o];
            }
        }
        Ok(RawCurveParams::new(out[0], out[1], out[2]))
    }

    /// One raw triple per channel, same weights for every channel.
    pub fn predict(&self, hist: &SoftHistogram) -> Result<Vec<RawCurveParams>> {
        (0..hist.channels()).map(|c| self.predict_raw(hist.channel(c))).collect()
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> HyperNetVars {
        HyperNetVars {
            w1: tape.leaf(self.w1.clone(), requires_grad),
            b1: tape.leaf(self.b1.clone(), requires_grad),
            w2: tape.leaf(self.w2.clone(), requires_grad),
            b2: tape.leaf(self.b2.clone(), requires_grad),
        }
    }

    /// Maps an `N×K` histogram tensor to `N×3` raw parameters on the tape.
    pub fn forward_var(tape: &mut Tape, w: &HyperNetVars, hists: Var) -> Result<Var> {
        let z = tape.matmul(hists, w.w1)?;
        let z = tape.add(z, w.b1)?;
        let z = tape.relu(z)?;
        let out = tape.matmul(z, w.w2)?;
        tape.add(out, w.b2)
    }

    pub fn to_checkpoint(&self) -> HyperNetCheckpoint {
        HyperNetCheckpoint {
            version: 1,
            w1: self.w1.rows(),
            b1: self.b1.data().to_vec(),
            w2: self.w2.rows(),
            b2: self.b2.data().to_vec(),
        }
    }

    pub fn from_checkpoint(ck: &HyperNetCheckpoint) -> Result<Self> {
        if ck.version != 1 {
            return Err(Error::Version(ck.version));
        }
        let net = Self {
            w1: Tensor::from_rows(&ck.w1)?,
            b1: Tensor::from_vec(ck.b1.clone()),
            w2: Tensor::from_rows(&ck.w2)?,
            b2: Tensor::from_vec(ck.b2.clone()),
        };
        net.validate()
            .map_err(|_| config_err("hypernet checkpoint has inconsistent layer shapes"))?;
        Ok(net)
    }
}

/// Versioned JSON form: `{"version":1,"w1":[[…]],"b1":[…],"w2":[[…]],"b2":[…]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperNetCheckpoint {
    pub version: u32,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}
