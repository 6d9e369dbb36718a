use anticomp::autograd::{grad, no_grad};
use anticomp::model::{ArchConfig, Collection, GanMode, NetworkWeights, Variant};
use anticomp::training::{encoder_collections, encoder_objective, BatchTensors, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_batch;

pub const STEP: f64 = 1e-5;
/// Analytic norm below which a gradient counts as structurally zero (a conv
/// bias followed by a one-channel normalization group). Such tensors must have
/// a numeric norm within rounding noise, [`ZERO_TOLERANCE`].
pub const STRUCTURAL_ZERO: f64 = 1e-12;
pub const ZERO_TOLERANCE: f64 = 1e-8;

#[derive(Debug)]
pub struct TensorCheck {
    pub collection: Collection,
    pub name: String,
    pub numel: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`; for a structural
    /// zero, 0 when the numeric norm is within tolerance and infinity otherwise.
    pub rel_error: f64,
    pub structural_zero: bool,
    pub analytic_norm: f64,
}

pub fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        arch: ArchConfig::tiny(),
        variant,
        gan_mode: GanMode::Log,
        ..TrainConfig::default()
    }
}

/// Central differences of the total encoder objective against the autograd
/// gradient, for every tensor of `collections`.
pub fn check(config: &TrainConfig, collections: &[Collection], seed: u64) -> Vec<TensorCheck> {
    let mut weights = jittered(config, seed);
    let batch = random_batch(seed, 4, config.arch.input_size);
    let tensors = BatchTensors::new(&batch, config.arch.attention_size()).unwrap();

    let bound = weights.bind(collections);
    let pass = encoder_objective(config, &bound, &tensors, 0.0).unwrap();
    let mut keys = Vec::new();
    let mut leaves = Vec::new();
    for &c in collections {
        for (name, t) in bound.collection(c).iter() {
            keys.push((c, name.clone()));
            leaves.push(t);
        }
    }
    let analytic: Vec<Vec<f64>> = grad(&pass.total, &leaves, false)
        .iter()
        .map(|g| g.to_vec())
        .collect();
    drop(leaves);
    drop(bound);

    let objective = |w: &NetworkWeights| {
        no_grad(|| {
            encoder_objective(config, &w.bind(&[]), &tensors, 0.0)
                .unwrap()
                .total
                .item()
        })
    };
    let mut out = Vec::new();
    for ((c, name), a) in keys.into_iter().zip(analytic) {
        let numel = a.len();
        let mut numeric = vec![0.0; numel];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = weights.collection(c).get(&name).unwrap().as_slice().unwrap()[k];
            let set = |w: &mut NetworkWeights, v: f64| {
                w.collection_mut(c).get_mut(&name).unwrap().as_slice_mut().unwrap()[k] = v;
            };
            set(&mut weights, orig + STEP);
            let up = objective(&weights);
            set(&mut weights, orig - STEP);
            let down = objective(&weights);
            set(&mut weights, orig);
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff = super::norm(&a.iter().zip(&numeric).map(|(x, y)| x - y).collect::<Vec<_>>());
        let (an, nn) = (super::norm(&a), super::norm(&numeric));
        let structural_zero = an < STRUCTURAL_ZERO;
        let rel_error = match (structural_zero, nn <= ZERO_TOLERANCE) {
            (true, true) => 0.0,
            (true, false) => f64::INFINITY,
            _ => diff / an.max(nn),
        };
        out.push(TensorCheck {
            collection: c,
            name,
            numel,
            rel_error,
            structural_zero,
            analytic_norm: an,
        });
    }
    out
}

/// Fresh weights moved off the initialization. Biases start at zero, so a
/// location whose head features are all dead would put a discriminator
/// activation exactly on its kink, where the derivative does not exist.
pub fn jittered(config: &TrainConfig, seed: u64) -> NetworkWeights {
    let mut weights = NetworkWeights::init(&config.arch, &config.variant, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for c in Collection::ALL {
        for (_, v) in weights.collection_mut(c).iter_mut() {
            v.mapv_inplace(|x| x + rng.random_range(-0.05..0.05));
        }
    }
    weights
}

/// Every encoder collection plus the discriminator, which the adversarial
/// term of the encoder objective also depends on.
pub fn all_collections(config: &TrainConfig) -> Vec<Collection> {
    let mut c = encoder_collections(config);
    c.push(Collection::Discriminator);
    c
}
