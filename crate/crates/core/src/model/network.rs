//! Forward passes of the two-branch network and its discriminator.

use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, BranchId, Objective, Variant};
use super::params::{Bound, BoundWeights, Collection, NetworkWeights};
use crate::autograd::{no_grad, ConvGeom, Tensor};
use crate::synthdata::Image;
use crate::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const DISC_LEAK: f64 = 0.2;

/// Mid-level activations `[N, C, H, W]` of one branch.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Tensor,
    pub branch: BranchId,
}

/// Per-location manipulation probabilities `[N, 1, H, W]`.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub values: Tensor,
}

/// Tail output `[N, d]`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub values: Tensor,
    pub branch: BranchId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GanMode {
    Log,
    WganGp,
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(c, cin, "conv input channels");
    let geom = ConvGeom {
        batch: n,
        channels: c,
        height: h,
        width: wd,
        kernel: k,
        stride,
        pad,
    };
    let (ho, wo) = (geom.out_height(), geom.out_width());
    let cols = if k == 1 && stride == 1 && pad == 0 {
        x.reshape(&[n, c, h * wd])
    } else {
        x.im2col(geom)
    };
    let wm = w.reshape(&[1, cout, cin * k * k]);
    wm.bmm(&cols)
        .add(&b.reshape(&[1, cout, 1]))
        .reshape(&[n, cout, ho, wo])
}

/// Group normalization with per-channel affine; identical in train and eval.
pub fn group_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let g = x.reshape(&[n, groups, (c / groups) * h * w]);
    let mean = g.mean_axes_keep(&[2]);
    let centered = g.sub(&mean);
    let var = centered.square().mean_axes_keep(&[2]);
    let normed = centered
        .mul(&var.add_scalar(NORM_EPS).recip_sqrt())
        .reshape(&[n, c, h, w]);
    normed
        .mul(&gamma.reshape(&[1, c, 1, 1]))
        .add(&beta.reshape(&[1, c, 1, 1]))
}

/// `[N, in] × [in, out] + b`
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    x.reshape(&[1, n, din])
        .bmm(&w.reshape(&[1, din, dout]))
        .reshape(&[n, dout])
        .add(&b.reshape(&[1, dout]))
}

/// Mean over the spatial axes: `[N, C, H, W] → [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    x.mean_axes_keep(&[2, 3]).reshape(&[n, c])
}

fn stage(p: &Bound, name: &str, x: &Tensor, stride: usize, groups: usize) -> Tensor {
    let y = conv2d(
        x,
        p.get(&format!("{name}.conv.w")),
        p.get(&format!("{name}.conv.b")),
        stride,
        1,
    );
    group_norm(
        &y,
        p.get(&format!("{name}.norm.gamma")),
        p.get(&format!("{name}.norm.beta")),
        groups,
    )
    .relu()
}

/// Stacks images into an `[N, 3, S, S]` tensor scaled to `[-1, 1]`.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dimension("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Dimension("images in a batch differ in size".into()));
        }
        let px = img.pixels();
        for c in 0..3 {
            data.extend((0..h * w).map(|i| f64::from(px[i * 3 + c]) / 127.5 - 1.0));
        }
    }
    Ok(Tensor::from_vec(&[images.len(), 3, h, w], data))
}

fn head_params(w: &BoundWeights, branch: BranchId) -> &Bound {
    match branch {
        BranchId::High => &w.head_high,
        BranchId::Low => &w.head_low,
    }
}

fn attention_params(w: &BoundWeights, branch: BranchId) -> &Bound {
    match branch {
        BranchId::High => &w.attention_high,
        BranchId::Low => &w.attention_low,
    }
}

pub fn head_forward(
    arch: &ArchConfig,
    weights: &BoundWeights,
    branch: BranchId,
    images: &Tensor,
) -> Result<FeatureMap> {
    let s = arch.input_size;
    if images.ndim() != 4 || images.shape()[1..] != [3, s, s] {
        return Err(Error::Dimension(format!(
            "head expects [N, 3, {s}, {s}] input, got {:?}",
            images.shape()
        )));
    }
    let p = head_params(weights, branch);
    let mut x = images.clone();
    for i in 0..arch.head_channels.len() {
        x = stage(p, &format!("stage{i}"), &x, 2, arch.norm_groups);
    }
    Ok(FeatureMap { values: x, branch })
}

fn check_feature_shape(arch: &ArchConfig, v: &Tensor, what: &str) -> Result<()> {
    let a = arch.attention_size();
    if v.ndim() != 4 || v.shape()[1..] != [arch.feature_channels(), a, a] {
        return Err(Error::Dimension(format!(
            "{what} expects [N, {}, {a}, {a}], got {:?}",
            arch.feature_channels(),
            v.shape()
        )));
    }
    Ok(())
}

/// 1×1 convolution to a single channel followed by a sigmoid, kept strictly
/// inside (0, 1) where the double-precision sigmoid would round to 0 or 1.
pub fn attention_forward(
    arch: &ArchConfig,
    weights: &BoundWeights,
    features: &FeatureMap,
) -> Result<AttentionMap> {
    check_feature_shape(arch, &features.values, "attention")?;
    let p = attention_params(weights, features.branch);
    let logits = conv2d(&features.values, p.get("conv.w"), p.get("conv.b"), 1, 0);
    Ok(AttentionMap {
        values: logits
            .sigmoid()
            .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
    })
}

/// `V ⊙ M`, broadcasting the map across channels.
pub fn apply_attention(features: &FeatureMap, map: &AttentionMap) -> Result<FeatureMap> {
    let v = features.values.shape();
    let m = map.values.shape();
    if m.len() != 4 || m[0] != v[0] || m[1] != 1 || m[2..] != v[2..] {
        return Err(Error::Dimension(format!(
            "attention map {m:?} does not match features {v:?}"
        )));
    }
    Ok(FeatureMap {
        values: features.values.mul(&map.values),
        branch: features.branch,
    })
}

/// Shared tail: stride-1 stages, global average pooling, linear projection.
pub fn tail_forward(
    arch: &ArchConfig,
    weights: &BoundWeights,
    features: &FeatureMap,
) -> Result<Embedding> {
    check_feature_shape(arch, &features.values, "tail")?;
    let p = &weights.tail;
    let mut x = features.values.clone();
    for i in 0..arch.tail_channels.len() {
        x = stage(p, &format!("stage{i}"), &x, 1, arch.norm_groups);
    }
    let pooled = global_avg_pool(&x);
    Ok(Embedding {
        values: linear(&pooled, p.get("proj.w"), p.get("proj.b")),
        branch: features.branch,
    })
}

/// Logit of the cross-entropy baseline, `[N]`.
pub fn logit_forward(weights: &BoundWeights, embedding: &Embedding) -> Tensor {
    let n = embedding.values.shape()[0];
    linear(
        &embedding.values,
        weights.tail.get("logit.w"),
        weights.tail.get("logit.b"),
    )
    .reshape(&[n])
}

/// Channel concatenation; `first` occupies channels `0..C`.
pub fn concat_channels(first: &FeatureMap, second: &FeatureMap) -> Result<Tensor> {
    if first.values.shape() != second.values.shape() {
        return Err(Error::Dimension(format!(
            "cannot concatenate {:?} with {:?}",
            first.values.shape(),
            second.values.shape()
        )));
    }
    Ok(Tensor::concat(&[first.values.clone(), second.values.clone()], 1))
}

/// Unbounded critic value `[N]`: 1×1 fusion, two 3×3 stages, spatial mean.
pub fn discriminator_logits(arch: &ArchConfig, weights: &BoundWeights, x: &Tensor) -> Result<Tensor> {
    let a = arch.attention_size();
    let c2 = 2 * arch.feature_channels();
    if x.ndim() != 4 || x.shape()[1..] != [c2, a, a] {
        return Err(Error::Dimension(format!(
            "discriminator expects [N, {c2}, {a}, {a}], got {:?}",
            x.shape()
        )));
    }
    let p = &weights.discriminator;
    let n = x.shape()[0];
    let h = conv2d(x, p.get("fuse.w"), p.get("fuse.b"), 1, 0).leaky_relu(DISC_LEAK);
    let h = conv2d(&h, p.get("conv0.w"), p.get("conv0.b"), 1, 1).leaky_relu(DISC_LEAK);
    let h = conv2d(&h, p.get("conv1.w"), p.get("conv1.b"), 1, 1);
    Ok(h.mean_axes_keep(&[1, 2, 3]).reshape(&[n]))
}

/// Discriminator score: a probability in LOG mode, the raw critic otherwise.
pub fn discriminator_forward(
    arch: &ArchConfig,
    weights: &BoundWeights,
    x: &Tensor,
    mode: GanMode,
) -> Result<Tensor> {
    let logits = discriminator_logits(arch, weights, x)?;
    Ok(match mode {
        GanMode::Log => logits.sigmoid(),
        GanMode::WganGp => logits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Real,
    Fake,
}

/// Fake iff the distance from the origin is strictly larger than the radius midpoint.
pub fn classify(norm: f64, r_minus: f64, r_plus: f64) -> Result<Decision> {
    Ok(if norm > decision_threshold(r_minus, r_plus)? {
        Decision::Fake
    } else {
        Decision::Real
    })
}

pub fn decision_threshold(r_minus: f64, r_plus: f64) -> Result<f64> {
    if !(r_minus < r_plus) {
        return Err(Error::Parameter(format!(
            "r- ({r_minus}) must be smaller than r+ ({r_plus})"
        )));
    }
    Ok((r_minus + r_plus) / 2.0)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One branch end to end.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    pub features: FeatureMap,
    pub attention: Option<AttentionMap>,
    pub embedding: Embedding,
}

pub fn branch_forward(
    arch: &ArchConfig,
    variant: &Variant,
    weights: &BoundWeights,
    branch: BranchId,
    images: &Tensor,
) -> Result<BranchOutput> {
    let features = head_forward(arch, weights, branch, images)?;
    let (attention, modulated) = if variant.attention {
        let m = attention_forward(arch, weights, &features)?;
        let modulated = apply_attention(&features, &m)?;
        (Some(m), modulated)
    } else {
        (None, features.clone())
    };
    let embedding = tail_forward(arch, weights, &modulated)?;
    Ok(BranchOutput {
        features,
        attention,
        embedding,
    })
}

/// Frozen-weight inference of one branch over a batch of images.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Forgery score: embedding norm for the metric objective, fake
    /// probability for the cross-entropy baseline.
    pub scores: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    /// Flattened attention maps (`H·W` each), when the variant has attention.
    pub attention: Option<Vec<Vec<f64>>>,
}

pub fn infer(
    arch: &ArchConfig,
    variant: &Variant,
    weights: &NetworkWeights,
    branch: BranchId,
    images: &[&Image],
) -> Result<Inference> {
    no_grad(|| {
        let bound = weights.bind(&[] as &[Collection]);
        let x = images_to_tensor(images)?;
        let out = branch_forward(arch, variant, &bound, branch, &x)?;
        let n = images.len();
        let d = arch.embedding_dim;
        let emb = out.embedding.values.to_vec();
        let embeddings: Vec<Vec<f64>> = emb.chunks(d).map(|c| c.to_vec()).collect();
        let scores = match variant.objective {
            Objective::Metric => embeddings.iter().map(|e| l2_norm(e)).collect(),
            Objective::CrossEntropy => logit_forward(&bound, &out.embedding)
                .sigmoid()
                .to_vec(),
        };
        let attention = out.attention.map(|m| {
            let hw = m.values.len() / n;
            m.values.to_vec().chunks(hw).map(|c| c.to_vec()).collect()
        });
        Ok(Inference {
            scores,
            embeddings,
            attention,
        })
    })
}
