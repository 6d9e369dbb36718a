use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::autograd::{grad, no_grad, Tensor};
use crate::losses::{
    at_loss, dis_loss, gan_losses, gradient_penalty, total_loss, LossReport, PerTerm, EPS,
    GP_COEFFICIENT,
};
use crate::model::{
    branch_forward, concat_channels, discriminator_forward, head_forward, images_to_tensor,
    logit_forward, BoundWeights, BranchId, Collection, GanMode, NetworkWeights, Objective,
};
use crate::synthdata::{mix_seed, Label, PairedSample};
use crate::{Error, Result};

/// Mutable training state; all weight changes go through [`train_step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    pub weights: NetworkWeights,
    pub encoder_opt: Adam,
    pub discriminator_opt: Adam,
    pub step: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Self {
        Self::from_weights(
            NetworkWeights::init(&config.arch, &config.variant, mix_seed(config.seed, 0x1417)),
            config.seed,
        )
    }

    pub fn from_weights(weights: NetworkWeights, seed: u64) -> Self {
        Self {
            weights,
            encoder_opt: Adam::new(),
            discriminator_opt: Adam::new(),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6a9)),
        }
    }
}

/// Tensors shared by both phases of a step.
pub struct BatchTensors {
    pub hq: Tensor,
    pub lq: Tensor,
    pub masks: Tensor,
    pub labels: Vec<Label>,
}

impl BatchTensors {
    pub fn new(batch: &[PairedSample], attention_size: usize) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let hq: Vec<_> = batch.iter().map(|s| &s.hq).collect();
        let lq: Vec<_> = batch.iter().map(|s| &s.lq).collect();
        let a = attention_size;
        let mut mask = Vec::with_capacity(batch.len() * a * a);
        for s in batch {
            mask.extend(s.mask.pooled(a, a)?.values().iter().map(|&v| f64::from(v)));
        }
        Ok(Self {
            hq: images_to_tensor(&hq)?,
            lq: images_to_tensor(&lq)?,
            masks: Tensor::from_vec(&[batch.len(), 1, a, a], mask),
            labels: batch.iter().map(|s| s.label).collect(),
        })
    }
}

/// Collections the encoder phase optimizes under this configuration.
pub fn encoder_collections(config: &TrainConfig) -> Vec<Collection> {
    let v = &config.variant;
    let mut out = vec![Collection::HeadLow, Collection::Tail];
    if v.attention {
        out.push(Collection::AttentionLow);
    }
    if v.two_branch {
        out.push(Collection::HeadHigh);
        if v.attention {
            out.push(Collection::AttentionHigh);
        }
    }
    out
}

/// Forward pass of the encoder objective on a batch.
pub struct EncoderPass {
    pub total: Tensor,
    pub report: LossReport,
}

pub fn encoder_objective(
    config: &TrainConfig,
    bound: &BoundWeights,
    batch: &BatchTensors,
    discriminator_loss: f64,
) -> Result<EncoderPass> {
    let arch = &config.arch;
    let v = &config.variant;
    let w = &config.loss_weights;
    let low = branch_forward(arch, v, bound, BranchId::Low, &batch.lq)?;
    if v.objective == Objective::CrossEntropy {
        let p = logit_forward(bound, &low.embedding)
            .sigmoid()
            .clamp(EPS, 1.0 - EPS);
        let y = Tensor::from_vec(
            &[batch.labels.len()],
            batch.labels.iter().map(|l| l.as_f64()).collect(),
        );
        let ce = y
            .mul(&p.ln())
            .add(&y.rsub_scalar(1.0).mul(&p.rsub_scalar(1.0).ln()))
            .mean()
            .neg();
        let dis = crate::losses::DisTerms {
            loss: ce,
            per_term: PerTerm::default(),
        };
        let at = match &low.attention {
            Some(m) => Some(at_loss(None, &m.values, &batch.masks, false, false)?),
            None => None,
        };
        let (total, report) = total_loss(&dis, None, at.as_ref(), discriminator_loss, w);
        return Ok(EncoderPass { total, report });
    }
    if !v.two_branch {
        let dis = dis_loss(None, &low.embedding.values, &batch.labels, w)?;
        let at = match &low.attention {
            Some(m) => Some(at_loss(None, &m.values, &batch.masks, false, false)?),
            None => None,
        };
        let (total, report) = total_loss(&dis, None, at.as_ref(), discriminator_loss, w);
        return Ok(EncoderPass { total, report });
    }
    let high = branch_forward(arch, v, bound, BranchId::High, &batch.hq)?;
    let dis = dis_loss(
        Some(&high.embedding.values),
        &low.embedding.values,
        &batch.labels,
        w,
    )?;
    let at = match (&high.attention, &low.attention) {
        (Some(mh), Some(ml)) => Some(at_loss(
            Some(&mh.values),
            &ml.values,
            &batch.masks,
            v.transfer,
            v.bidirectional_transfer,
        )?),
        _ => None,
    };
    let gan = if v.gan {
        let real = concat_channels(&high.features, &low.features)?;
        let swapped = concat_channels(&low.features, &high.features)?;
        let d_real = discriminator_forward(arch, bound, &real, config.gan_mode)?;
        let d_swapped = discriminator_forward(arch, bound, &swapped, config.gan_mode)?;
        Some(gan_losses(&d_real, &d_swapped, config.gan_mode)?.1)
    } else {
        None
    };
    let (total, report) = total_loss(&dis, gan.as_ref(), at.as_ref(), discriminator_loss, w);
    Ok(EncoderPass { total, report })
}

fn collect_grads(
    loss: &Tensor,
    bound: &BoundWeights,
    collections: &[Collection],
) -> Vec<(Collection, String, ArrayD<f64>)> {
    let mut keys = Vec::new();
    let mut leaves = Vec::new();
    for &c in collections {
        for (name, t) in bound.collection(c).iter() {
            keys.push((c, name.clone()));
            leaves.push(t);
        }
    }
    let grads = grad(loss, &leaves, false);
    keys.into_iter()
        .zip(grads)
        .map(|((c, n), g)| (c, n, g.value().clone()))
        .collect()
}

fn ensure_finite(step: u64, term: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            term: term.to_string(),
            value,
        })
    }
}

/// Discriminator updates on detached head features, then one encoder update.
pub fn train_step(state: &mut TrainState, batch: &[PairedSample], config: &TrainConfig) -> Result<LossReport> {
    let arch = &config.arch;
    let tensors = BatchTensors::new(batch, arch.attention_size())?;
    let step = state.step;
    let mut discriminator_loss = 0.0;

    if config.variant.gan && config.variant.two_branch && config.d_updates() > 0 {
        let (vh, vl) = no_grad(|| -> Result<_> {
            let b = state.weights.bind(&[]);
            Ok((
                head_forward(arch, &b, BranchId::High, &tensors.hq)?,
                head_forward(arch, &b, BranchId::Low, &tensors.lq)?,
            ))
        })?;
        let real = concat_channels(&vh, &vl)?;
        let swapped = concat_channels(&vl, &vh)?;
        for _ in 0..config.d_updates() {
            let bound = state.weights.bind(&[Collection::Discriminator]);
            let d_real = discriminator_forward(arch, &bound, &real, config.gan_mode)?;
            let d_swapped = discriminator_forward(arch, &bound, &swapped, config.gan_mode)?;
            let (mut d_loss, _) = gan_losses(&d_real, &d_swapped, config.gan_mode)?;
            if config.gan_mode == GanMode::WganGp {
                let alpha: Vec<f64> = (0..batch.len()).map(|_| state.rng.random::<f64>()).collect();
                let gp = gradient_penalty(
                    |x| discriminator_forward(arch, &bound, x, config.gan_mode),
                    &real,
                    &swapped,
                    &alpha,
                )?;
                d_loss = d_loss.add(&gp.scale(GP_COEFFICIENT));
            }
            discriminator_loss = d_loss.item();
            ensure_finite(step, "discriminatorLoss", discriminator_loss)?;
            let grads = collect_grads(&d_loss, &bound, &[Collection::Discriminator]);
            drop(bound);
            state.discriminator_opt.update(
                &mut state.weights,
                &grads,
                config.learning_rate,
                config.beta1,
                config.beta2,
            );
        }
    }

    let trainable = encoder_collections(config);
    let bound = state.weights.bind(&trainable);
    let pass = encoder_objective(config, &bound, &tensors, discriminator_loss)?;
    if let Some((term, value)) = pass.report.non_finite_term() {
        return Err(Error::NonFinite {
            step,
            term: term.to_string(),
            value,
        });
    }
    let grads = collect_grads(&pass.total, &bound, &trainable);
    drop(bound);
    for (c, name, g) in &grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step,
                term: format!("gradient {}/{name}", c.name()),
                value: f64::NAN,
            });
        }
    }
    state
        .encoder_opt
        .update(&mut state.weights, &grads, config.learning_rate, config.beta1, config.beta2);
    state.step += 1;
    Ok(pass.report)
}

/// Encoder objective without any update, for validation.
pub fn evaluate_loss(weights: &NetworkWeights, batch: &[PairedSample], config: &TrainConfig) -> Result<LossReport> {
    no_grad(|| {
        let tensors = BatchTensors::new(batch, config.arch.attention_size())?;
        let bound = weights.bind(&[]);
        Ok(encoder_objective(config, &bound, &tensors, 0.0)?.report)
    })
}
