//! Endpoint-pinned rational tone curves.
//!
//! `f(x) = (a x² + b x) / (d x² + e x + 1)` with `b = d + e + 1 - a`, so that
//! `f(0) = 0` and `f(1) = 1`. The hypernetwork predicts `(a, d̃, ẽ)`; `d` and `e`
//! are the softplus of the raw values, which keeps the denominator `>= 1` on
//! `[0,1]`. Outputs are never clamped.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Tape, Tensor, Var};
use crate::error::{config_err, Error, Result};
use crate::image::Image;

/// Unconstrained per-channel triple as emitted by the hypernetwork.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCurveParams {
    pub a: f64,
    pub d_raw: f64,
    pub e_raw: f64,
}

impl RawCurveParams {
    pub fn new(a: f64, d_raw: f64, e_raw: f64) -> Self {
        Self { a, d_raw, e_raw }
    }

    pub fn effective(&self) -> CurveParams {
        CurveParams::pinned(self.a, softplus(self.d_raw), softplus(self.e_raw))
    }
}

/// Effective curve coefficients with `b` derived from the endpoint constraint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub e: f64,
}

impl CurveParams {
    /// Builds the curve through `(0,0)` and `(1,1)` for the given `a`, `d`, `e`.
    pub fn pinned(a: f64, d: f64, e: f64) -> Self {
        Self {
            a,
            b: d + e + 1.0 - a,
            d,
            e,
        }
    }

    /// Exact identity curve (`a = d = e = 0`, `b = 1`).
    pub fn identity() -> Self {
        Self::pinned(0.0, 0.0, 0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let num = self.a * x * x + self.b * x;
        let den = self.d * x * x + self.e * x + 1.0;
        num / den
    }

    /// `f'(x)` by the quotient rule.
    pub fn derivative(&self, x: f64) -> f64 {
        let num = self.a * x * x + self.b * x;
        let den = self.d * x * x + self.e * x + 1.0;
        let dnum = 2.0 * self.a * x + self.b;
        let dden = 2.0 * self.d * x + self.e;
        (dnum * den - num * dden) / (den * den)
    }
}

/// Applies one curve per channel to every pixel.
pub fn apply_curve(image: &Image, params: &[CurveParams]) -> Result<Image> {
    if params.len() != image.channels() {
        return Err(Error::ShapeMismatch {
            op: "apply_curve",
            lhs: image.shape().to_vec(),
            rhs: vec![params.len()],
        });
    }
    let mut out = image.clone();
    let ch = image.channels();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = params[i % ch].eval(*v);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonoConfig {
    /// Number of grid samples `M`.
    pub grid: usize,
    /// Penalty weight `λ`.
    pub lambda: f64,
}

impl Default for MonoConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            lambda: 10.0,
        }
    }
}

impl MonoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(config_err(format!("monotonicity grid needs M >= 2, got {}", self.grid)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config_err(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Uniform endpoint-inclusive grid `t_j = j/(M-1)`.
pub fn mono_grid(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(config_err(format!("monotonicity grid needs M >= 2, got {m}")));
    }
    let last = (m - 1) as f64;
    Ok((0..m).map(|j| j as f64 / last).collect())
}

/// Mean positive part of the negative adjacent differences of sampled curve values.
pub fn mono_penalty_samples(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(config_err(format!(
            "monotonicity penalty needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let sum = samples
        .windows(2)
        .fold(0.0, |s, w| s + (-(w[1] - w[0])).max(0.0));
    Ok(sum / (samples.len() - 1) as f64)
}

/// Penalty averaged over every curve (image × channel) and every finite difference.
pub fn mono_penalty(params: &[CurveParams], cfg: &MonoConfig) -> Result<f64> {
    let grid = mono_grid(cfg.grid)?;
    if params.is_empty() {
        return Err(config_err("monotonicity penalty over zero curves"));
    }
    let mut total = 0.0;
    let mut samples = vec![0.0; grid.len()];
    for p in params {
        for (s, &t) in samples.iter_mut().zip(&grid) {
            *s = p.eval(t);
        }
        total += mono_penalty_samples(&samples)?;
    }
    Ok(total / params.len() as f64)
}

/// Curve coefficients on the tape, each of shape `N×1` for `N` curves.
#[derive(Clone, Copy, Debug)]
pub struct CurveVars {
    pub a: Var,
    pub b: Var,
    pub d: Var,
    pub e: Var,
}

/// Splits an `N×3` raw-parameter tensor into effective curve coefficients.
pub fn effective_params_var(tape: &mut Tape, raw: Var) -> Result<CurveVars> {
    let shape = tape.shape(raw).to_vec();
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "effective_params",
            lhs: shape,
            rhs: vec![3],
        });
    }
    let column = |tape: &mut Tape, j: usize| -> Result<Var> {
        let mut sel = vec![0.0; 3];
        sel[j] = 1.0;
        let sel = tape.constant(Tensor::new(vec![3, 1], sel)?);
        tape.matmul(raw, sel)
    };
    let a = column(tape, 0)?;
    let d_raw = column(tape, 1)?;
    let e_raw = column(tape, 2)?;
    let d = tape.softplus(d_raw)?;
    let e = tape.softplus(e_raw)?;
    let de = tape.add(d, e)?;
    let de1 = tape.add_scalar(de, 1.0)?;
    let b = tape.sub(de1, a)?;
    Ok(CurveVars { a, b, d, e })
}

/// Evaluates the curves at `x`; coefficient and `x` shapes must broadcast.
pub fn curve_eval_var(tape: &mut Tape, p: &CurveVars, x: Var) -> Result<Var> {
    let x2 = tape.mul(x, x)?;
    let ax2 = tape.mul(p.a, x2)?;
    let bx = tape.mul(p.b, x)?;
    let num = tape.add(ax2, bx)?;
    let dx2 = tape.mul(p.d, x2)?;
    let ex = tape.mul(p.e, x)?;
    let den = tape.add(dx2, ex)?;
    let den = tape.add_scalar(den, 1.0)?;
    tape.div(num, den)
}

impl CurveVars {
    /// Reshapes every coefficient to `shape` (same element count).
    pub fn reshape(&self, tape: &mut Tape, shape: &[usize]) -> Result<CurveVars> {
        Ok(CurveVars {
            a: tape.reshape(self.a, shape.to_vec())?,
            b: tape.reshape(self.b, shape.to_vec())?,
            d: tape.reshape(self.d, shape.to_vec())?,
            e: tape.reshape(self.e, shape.to_vec())?,
        })
    }

    pub fn values(&self, tape: &Tape) -> Vec<CurveParams> {
        let [a, b, d, e] = [self.a, self.b, self.d, self.e].map(|v| tape.value(v).data().to_vec());
        (0..a.len())
            .map(|i| CurveParams {
                a: a[i],
                b: b[i],
                d: d[i],
                e: e[i],
            })
            .collect()
    }
}

/// Applies per-(image, channel) curves to a `B×P×C` pixel tensor.
///
/// `params` holds `B·C` curves ordered image-major.
pub fn apply_curve_var(tape: &mut Tape, pixels: Var, params: &CurveVars) -> Result<Var> {
    let shape = tape.shape(pixels).to_vec();
    let [b, _, c] = shape[..] else {
        return Err(Error::ShapeMismatch {
            op: "apply_curve",
            lhs: shape,
            rhs: vec![],
        });
    };
    let p = params.reshape(tape, &[b, 1, c])?;
    curve_eval_var(tape, &p, pixels)
}

/// Differentiable monotonicity penalty of `N` curves, averaged over curves and differences.
pub fn mono_penalty_var(tape: &mut Tape, params: &CurveVars, cfg: &MonoConfig) -> Result<Var> {
    let grid = mono_grid(cfg.grid)?;
    let m = grid.len();
    let t = tape.constant(Tensor::new(vec![1, m], grid)?);
    let f = curve_eval_var(tape, params, t)?;
    // Columns of `diff` are f(t_{j+1}) - f(t_j).
    let mut diff = vec![0.0; m * (m - 1)];
    for j in 0..m - 1 {
        diff[j * (m - 1) + j] = -1.0;
        diff[(j + 1) * (m - 1) + j] = 1.0;
    }
    let diff = tape.constant(Tensor::new(vec![m, m - 1], diff)?);
    let steps = tape.matmul(f, diff)?;
    let drops = tape.neg(steps)?;
    let drops = tape.max0(drops)?;
    tape.mean(drops)
}
