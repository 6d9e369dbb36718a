//! Named parameter storage, initialization and binding into autograd leaves.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ArchConfig, Objective, Variant};
use crate::autograd::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Named arrays forming one parameter collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let stored: BTreeMap<&str, StoredArray> = self
            .arrays
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str(),
                    StoredArray {
                        shape: v.shape().to_vec(),
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect();
        stored.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let stored = BTreeMap::<String, StoredArray>::deserialize(d)?;
        let mut arrays = BTreeMap::new();
        for (k, v) in stored {
            let a = ArrayD::from_shape_vec(IxDyn(&v.shape), v.data)
                .map_err(|e| serde::de::Error::custom(format!("parameter {k}: {e}")))?;
            arrays.insert(k, a);
        }
        Ok(Self { arrays })
    }
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.arrays.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Wraps each array in a fresh leaf tensor.
    pub fn bind(&self, trainable: bool) -> Bound {
        let tensors = self
            .arrays
            .iter()
            .map(|(k, v)| {
                let t = if trainable {
                    Tensor::parameter(v.clone())
                } else {
                    Tensor::constant(v.clone())
                };
                (k.clone(), t)
            })
            .collect();
        Bound { tensors }
    }

    /// Same parameter names with the same shapes.
    pub fn check_compatible(&self, reference: &ParamSet, collection: &str) -> Result<()> {
        for (k, v) in &reference.arrays {
            match self.arrays.get(k) {
                None => {
                    return Err(Error::Checkpoint(format!("{collection}: missing parameter {k}")))
                }
                Some(a) if a.shape() != v.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "{collection}: parameter {k} has shape {:?}, expected {:?}",
                        a.shape(),
                        v.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.arrays.keys().find(|k| !reference.arrays.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("{collection}: unexpected parameter {extra}")));
        }
        Ok(())
    }
}

/// A parameter collection bound as tensors for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    tensors: BTreeMap<String, Tensor>,
}

impl Bound {
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }
}

/// All six parameter collections of the two-branch network. The tail is a
/// single collection serving both branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NetworkWeights {
    pub head_high: ParamSet,
    pub head_low: ParamSet,
    pub attention_high: ParamSet,
    pub attention_low: ParamSet,
    pub tail: ParamSet,
    pub discriminator: ParamSet,
}

/// Identifies one of the six collections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Collection {
    HeadHigh,
    HeadLow,
    AttentionHigh,
    AttentionLow,
    Tail,
    Discriminator,
}

impl Collection {
    pub const ALL: [Collection; 6] = [
        Collection::HeadHigh,
        Collection::HeadLow,
        Collection::AttentionHigh,
        Collection::AttentionLow,
        Collection::Tail,
        Collection::Discriminator,
    ];

    pub const ENCODER: [Collection; 5] = [
        Collection::HeadHigh,
        Collection::HeadLow,
        Collection::AttentionHigh,
        Collection::AttentionLow,
        Collection::Tail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Collection::HeadHigh => "headHigh",
            Collection::HeadLow => "headLow",
            Collection::AttentionHigh => "attentionHigh",
            Collection::AttentionLow => "attentionLow",
            Collection::Tail => "tail",
            Collection::Discriminator => "discriminator",
        }
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> ArrayD<f64> {
        let n = Normal::new(0.0, std).expect("positive std");
        ArrayD::from_shape_fn(IxDyn(shape), |_| n.sample(&mut self.rng))
    }

    /// He-normal conv kernel `[out, in, k, k]` plus zero bias.
    fn conv(&mut self, set: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, gain: f64) {
        let fan_in = (cin * k * k) as f64;
        set.insert(format!("{name}.w"), self.normal(&[cout, cin, k, k], gain / fan_in.sqrt()));
        set.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[cout])));
    }

    fn norm(set: &mut ParamSet, name: &str, c: usize) {
        set.insert(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[c])));
        set.insert(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[c])));
    }

    fn linear(&mut self, set: &mut ParamSet, name: &str, din: usize, dout: usize) {
        set.insert(format!("{name}.w"), self.normal(&[din, dout], 1.0 / (din as f64).sqrt()));
        set.insert(format!("{name}.b"), ArrayD::zeros(IxDyn(&[dout])));
    }
}

impl NetworkWeights {
    /// Fan-in scaled random initialization of every collection.
    pub fn init(arch: &ArchConfig, variant: &Variant, seed: u64) -> Self {
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let relu_gain = 2f64.sqrt();
        let head = |init: &mut Init| {
            let mut set = ParamSet::default();
            let mut cin = 3;
            for (i, &c) in arch.head_channels.iter().enumerate() {
                init.conv(&mut set, &format!("stage{i}.conv"), cin, c, 3, relu_gain);
                Init::norm(&mut set, &format!("stage{i}.norm"), c);
                cin = c;
            }
            set
        };
        let head_high = head(&mut init);
        let head_low = head(&mut init);
        let feat = arch.feature_channels();
        let attention = |init: &mut Init| {
            let mut set = ParamSet::default();
            init.conv(&mut set, "conv", feat, 1, 1, 1.0);
            set
        };
        let attention_high = attention(&mut init);
        let attention_low = attention(&mut init);

        let mut tail = ParamSet::default();
        let mut cin = feat;
        for (i, &c) in arch.tail_channels.iter().enumerate() {
            init.conv(&mut tail, &format!("stage{i}.conv"), cin, c, 3, relu_gain);
            Init::norm(&mut tail, &format!("stage{i}.norm"), c);
            cin = c;
        }
        init.linear(&mut tail, "proj", cin, arch.embedding_dim);
        if variant.objective == Objective::CrossEntropy {
            init.linear(&mut tail, "logit", arch.embedding_dim, 1);
        }

        let mut discriminator = ParamSet::default();
        let dc = arch.disc_channels;
        init.conv(&mut discriminator, "fuse", 2 * feat, dc, 1, relu_gain);
        init.conv(&mut discriminator, "conv0", dc, dc, 3, relu_gain);
        init.conv(&mut discriminator, "conv1", dc, 1, 3, 1.0);

        Self {
            head_high,
            head_low,
            attention_high,
            attention_low,
            tail,
            discriminator,
        }
    }

    pub fn collection(&self, c: Collection) -> &ParamSet {
        match c {
            Collection::HeadHigh => &self.head_high,
            Collection::HeadLow => &self.head_low,
            Collection::AttentionHigh => &self.attention_high,
            Collection::AttentionLow => &self.attention_low,
            Collection::Tail => &self.tail,
            Collection::Discriminator => &self.discriminator,
        }
    }

    pub fn collection_mut(&mut self, c: Collection) -> &mut ParamSet {
        match c {
            Collection::HeadHigh => &mut self.head_high,
            Collection::HeadLow => &mut self.head_low,
            Collection::AttentionHigh => &mut self.attention_high,
            Collection::AttentionLow => &mut self.attention_low,
            Collection::Tail => &mut self.tail,
            Collection::Discriminator => &mut self.discriminator,
        }
    }

    pub fn all_finite(&self) -> bool {
        Collection::ALL.iter().all(|&c| self.collection(c).all_finite())
    }

    /// Checks every collection against a fresh initialization of `arch`.
    pub fn check_compatible(&self, arch: &ArchConfig, variant: &Variant) -> Result<()> {
        let reference = Self::init(arch, variant, 0);
        for c in Collection::ALL {
            self.collection(c)
                .check_compatible(reference.collection(c), c.name())?;
        }
        Ok(())
    }

    pub fn bind(&self, trainable: &[Collection]) -> BoundWeights {
        let b = |c: Collection| self.collection(c).bind(trainable.contains(&c));
        BoundWeights {
            head_high: b(Collection::HeadHigh),
            head_low: b(Collection::HeadLow),
            attention_high: b(Collection::AttentionHigh),
            attention_low: b(Collection::AttentionLow),
            tail: b(Collection::Tail),
            discriminator: b(Collection::Discriminator),
        }
    }
}

/// Tensors of all six collections for one pass. The tail is bound once, so
/// both branches read (and accumulate gradient into) the same leaves.
#[derive(Debug, Clone)]
pub struct BoundWeights {
    pub head_high: Bound,
    pub head_low: Bound,
    pub attention_high: Bound,
    pub attention_low: Bound,
    pub tail: Bound,
    pub discriminator: Bound,
}

impl BoundWeights {
    pub fn collection(&self, c: Collection) -> &Bound {
        match c {
            Collection::HeadHigh => &self.head_high,
            Collection::HeadLow => &self.head_low,
            Collection::AttentionHigh => &self.attention_high,
            Collection::AttentionLow => &self.attention_low,
            Collection::Tail => &self.tail,
            Collection::Discriminator => &self.discriminator,
        }
    }
}
