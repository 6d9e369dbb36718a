use std::collections::BTreeMap;

use ndarray::ArrayD;
use crate::model::{Collection, NetworkWeights};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; moments keyed by `collection/name`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    moments: BTreeMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one update to every parameter listed in `grads`.
    pub fn update(
        &mut self,
        weights: &mut NetworkWeights,
        grads: &[(Collection, String, ArrayD<f64>)],
        lr: f64,
        beta1: f64,
        beta2: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (collection, name, g) in grads {
            let key = format!("{}/{name}", collection.name());
            let (m, v) = self
                .moments
                .entry(key)
                .or_insert_with(|| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
            let p = weights
                .collection_mut(*collection)
                .get_mut(name)
                .expect("gradient for a bound parameter");
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, Variant};

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let arch = ArchConfig::tiny();
        let mut w = NetworkWeights::init(&arch, &Variant::full(), 1);
        let before = w.tail.get("proj.b").unwrap().clone();
        let mut g = ArrayD::zeros(before.raw_dim());
        g[[0]] = 3.0;
        g[[1]] = -0.5;
        let mut adam = Adam::new();
        adam.update(&mut w, &[(Collection::Tail, "proj.b".into(), g)], 1e-2, 0.9, 0.999);
        let after = w.tail.get("proj.b").unwrap();
        assert!((after[[0]] - (before[[0]] - 1e-2)).abs() < 1e-9);
        assert!((after[[1]] - (before[[1]] + 1e-2)).abs() < 1e-9);
        assert_eq!(after[[2]], before[[2]]);
    }
}
