//! Origin-radius metric loss, attention supervision and transfer, adversarial
//! alignment and the weighted total objective.

use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Tensor};
use crate::model::GanMode;
use crate::synthdata::Label;
use crate::{Error, Result};

/// Probability clamp for every log term.
pub const EPS: f64 = 1e-7;
pub const GP_COEFFICIENT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub r_minus: f64,
    pub r_plus: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.001,
            lambda2: 1.0,
            lambda3: 0.1,
            r_minus: 0.1,
            r_plus: 18.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("rMinus", self.r_minus),
            ("rPlus", self.r_plus),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("lossWeights.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.r_minus >= self.r_plus {
            return Err(Error::Config(format!(
                "lossWeights.rMinus ({}) must be smaller than lossWeights.rPlus ({})",
                self.r_minus, self.r_plus
            )));
        }
        Ok(())
    }
}

/// The five summands of the metric loss, batch means, pair term already
/// multiplied by λ3.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PerTerm {
    pub real_high: f64,
    pub fake_high: f64,
    pub real_low: f64,
    pub fake_low: f64,
    pub pair_distance: f64,
}

impl PerTerm {
    pub fn sum(&self) -> f64 {
        self.real_high + self.fake_high + self.real_low + self.fake_low + self.pair_distance
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LossReport {
    pub total: f64,
    pub dis: f64,
    pub gan: f64,
    pub at: f64,
    pub discriminator_loss: f64,
    pub per_term: PerTerm,
}

impl LossReport {
    /// First non-finite field, if any.
    pub fn non_finite_term(&self) -> Option<(&'static str, f64)> {
        [
            ("total", self.total),
            ("dis", self.dis),
            ("gan", self.gan),
            ("at", self.at),
            ("discriminatorLoss", self.discriminator_loss),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

fn check_radii(r_minus: f64, r_plus: f64) -> Result<()> {
    if !(r_minus < r_plus) {
        return Err(Error::Parameter(format!(
            "r- ({r_minus}) must be smaller than r+ ({r_plus})"
        )));
    }
    Ok(())
}

/// Hinge on the distance from the origin: reals inside `r_minus`, fakes outside `r_plus`.
pub fn metric_margin_term(embedding: &[f64], label: Label, r_minus: f64, r_plus: f64) -> Result<f64> {
    check_radii(r_minus, r_plus)?;
    let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(match label {
        Label::Real => (norm - r_minus).max(0.0),
        Label::Fake => (r_plus - norm).max(0.0),
    })
}

pub fn pair_distance_term(ch: &[f64], cl: &[f64]) -> Result<f64> {
    if ch.len() != cl.len() {
        return Err(Error::Dimension(format!(
            "pair distance between {}- and {}-dimensional embeddings",
            ch.len(),
            cl.len()
        )));
    }
    Ok(ch.iter().zip(cl).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Row-wise L2 norms of `[N, d]`; the gradient at the origin is zero.
pub fn row_norms(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    x.square().sum_axes_keep(&[1]).reshape(&[n]).sqrt()
}

fn margin_tensor(norms: &Tensor, labels: &[Label], w: &LossWeights) -> Tensor {
    let n = labels.len();
    let sign: Vec<f64> = labels.iter().map(|l| if l.is_fake() { -1.0 } else { 1.0 }).collect();
    let offset: Vec<f64> = labels
        .iter()
        .map(|l| if l.is_fake() { w.r_plus } else { -w.r_minus })
        .collect();
    norms
        .mul(&Tensor::from_vec(&[n], sign))
        .add(&Tensor::from_vec(&[n], offset))
        .relu()
}

fn class_means(per_sample: &Tensor, labels: &[Label]) -> (f64, f64) {
    let v = per_sample.to_vec();
    let n = labels.len() as f64;
    let mut real = 0.0;
    let mut fake = 0.0;
    for (x, l) in v.iter().zip(labels) {
        if l.is_fake() {
            fake += x;
        } else {
            real += x;
        }
    }
    (real / n, fake / n)
}

#[derive(Debug, Clone)]
pub struct DisTerms {
    pub loss: Tensor,
    pub per_term: PerTerm,
}

/// Batch mean of the metric loss. Without `ch` only the low-branch margins remain.
pub fn dis_loss(ch: Option<&Tensor>, cl: &Tensor, labels: &[Label], w: &LossWeights) -> Result<DisTerms> {
    check_radii(w.r_minus, w.r_plus)?;
    let n = labels.len();
    if cl.ndim() != 2 || cl.shape()[0] != n {
        return Err(Error::Dimension(format!(
            "embeddings {:?} do not match {n} labels",
            cl.shape()
        )));
    }
    let low = margin_tensor(&row_norms(cl), labels, w);
    let (real_low, fake_low) = class_means(&low, labels);
    let mut per_term = PerTerm {
        real_low,
        fake_low,
        ..PerTerm::default()
    };
    let mut per_sample = low;
    if let Some(ch) = ch {
        if ch.shape() != cl.shape() {
            return Err(Error::Dimension(format!(
                "high embeddings {:?} vs low {:?}",
                ch.shape(),
                cl.shape()
            )));
        }
        let high = margin_tensor(&row_norms(ch), labels, w);
        let (real_high, fake_high) = class_means(&high, labels);
        let pair = row_norms(&ch.sub(cl)).scale(w.lambda3);
        per_term.real_high = real_high;
        per_term.fake_high = fake_high;
        per_term.pair_distance = pair.mean().item();
        per_sample = per_sample.add(&high).add(&pair);
    }
    Ok(DisTerms {
        loss: per_sample.mean(),
        per_term,
    })
}

/// Mean per-pixel binary cross-entropy with clamped probabilities.
pub fn attention_bce(m: &Tensor, mgt: &Tensor) -> Result<Tensor> {
    if m.shape() != mgt.shape() {
        return Err(Error::Dimension(format!(
            "attention map {:?} vs mask {:?}",
            m.shape(),
            mgt.shape()
        )));
    }
    let p = m.clamp(EPS, 1.0 - EPS);
    let pos = mgt.mul(&p.ln());
    let neg = mgt.rsub_scalar(1.0).mul(&p.rsub_scalar(1.0).ln());
    Ok(pos.add(&neg).mean().neg())
}

/// Batch mean of `‖MH/‖MH‖ − ML/‖ML‖‖₂`; gradients reach `mh` only when bidirectional.
pub fn attention_transfer_term(mh: &Tensor, ml: &Tensor, bidirectional: bool) -> Result<Tensor> {
    if mh.shape() != ml.shape() || mh.ndim() == 0 {
        return Err(Error::Dimension(format!(
            "attention maps {:?} vs {:?}",
            mh.shape(),
            ml.shape()
        )));
    }
    let n = mh.shape()[0];
    let k = mh.len() / n;
    let unit = |m: &Tensor| {
        let flat = m.reshape(&[n, k]);
        flat.mul(&flat.square().sum_axes_keep(&[1]).recip_sqrt())
    };
    let target = if bidirectional { mh.clone() } else { mh.detach() };
    Ok(row_norms(&unit(&target).sub(&unit(ml))).mean())
}

#[derive(Debug, Clone)]
pub struct AtTerms {
    pub loss: Tensor,
    pub bce_high: f64,
    pub bce_low: f64,
    pub transfer: f64,
}

/// `bce(MH) + bce(ML) + transfer`, dropping the parts whose inputs are absent.
pub fn at_loss(
    mh: Option<&Tensor>,
    ml: &Tensor,
    mgt: &Tensor,
    transfer: bool,
    bidirectional: bool,
) -> Result<AtTerms> {
    let low = attention_bce(ml, mgt)?;
    let bce_low = low.item();
    let mut loss = low;
    let (mut bce_high, mut transfer_v) = (0.0, 0.0);
    if let Some(mh) = mh {
        let high = attention_bce(mh, mgt)?;
        bce_high = high.item();
        loss = loss.add(&high);
        if transfer {
            let t = attention_transfer_term(mh, ml, bidirectional)?;
            transfer_v = t.item();
            loss = loss.add(&t);
        }
    } else if transfer {
        return Err(Error::Parameter("attention transfer needs the high-branch map".into()));
    }
    Ok(AtTerms {
        loss,
        bce_high,
        bce_low,
        transfer: transfer_v,
    })
}

/// `(dLoss, gLoss)` without the gradient penalty. Scores are `[N]` batches.
pub fn gan_losses(d_real: &Tensor, d_swapped: &Tensor, mode: GanMode) -> Result<(Tensor, Tensor)> {
    if d_real.shape() != d_swapped.shape() {
        return Err(Error::Dimension(format!(
            "discriminator scores {:?} vs {:?}",
            d_real.shape(),
            d_swapped.shape()
        )));
    }
    Ok(match mode {
        GanMode::Log => {
            let g = d_real
                .clamp(EPS, 1.0 - EPS)
                .ln()
                .mean()
                .add(&d_swapped.clamp(EPS, 1.0 - EPS).rsub_scalar(1.0).ln().mean());
            (g.neg(), g)
        }
        GanMode::WganGp => {
            let gap = d_real.mean().sub(&d_swapped.mean());
            (gap.neg(), gap)
        }
    })
}

/// `mean((‖∇x critic(x̂)‖₂ − 1)²)` at `x̂ = α·a + (1−α)·b`, one α per sample.
/// The result stays differentiable w.r.t. the critic's parameters.
pub fn gradient_penalty(
    critic: impl Fn(&Tensor) -> Result<Tensor>,
    a: &Tensor,
    b: &Tensor,
    alpha: &[f64],
) -> Result<Tensor> {
    let n = a.shape()[0];
    if a.shape() != b.shape() || alpha.len() != n {
        return Err(Error::Dimension("gradient penalty inputs disagree".into()));
    }
    let mut ashape = vec![n];
    ashape.extend(std::iter::repeat_n(1, a.ndim() - 1));
    let al = Tensor::from_vec(&ashape, alpha.to_vec());
    let x = a
        .detach()
        .mul(&al)
        .add(&b.detach().mul(&al.rsub_scalar(1.0)));
    let x = Tensor::parameter(x.value().clone());
    let score = critic(&x)?;
    let g = grad(&score.sum(), &[&x], true).remove(0);
    let per = g.reshape(&[n, g.len() / n]);
    Ok(row_norms(&per).add_scalar(-1.0).square().mean())
}

/// Encoder objective `dis + λ1·gan + λ2·at` and its report.
pub fn total_loss(
    dis: &DisTerms,
    gan: Option<&Tensor>,
    at: Option<&AtTerms>,
    discriminator_loss: f64,
    w: &LossWeights,
) -> (Tensor, LossReport) {
    let mut total = dis.loss.clone();
    let mut report = LossReport {
        dis: dis.loss.item(),
        discriminator_loss,
        per_term: dis.per_term,
        ..LossReport::default()
    };
    if let Some(g) = gan {
        report.gan = g.item();
        total = total.add(&g.scale(w.lambda1));
    }
    if let Some(a) = at {
        report.at = a.loss.item();
        total = total.add(&a.loss.scale(w.lambda2));
    }
    report.total = total.item();
    (total, report)
}

/// Scalar form of the total objective.
pub fn combine(dis: f64, gan: f64, at: f64, w: &LossWeights) -> f64 {
    dis + w.lambda1 * gan + w.lambda2 * at
}
