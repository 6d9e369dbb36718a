use serde::{Deserialize, Serialize};

use crate::synthdata::{GroundTruthMask, Label};
use crate::{Error, Result};

/// Score and prediction for one image. Larger scores are more fake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoredSample {
    pub id: String,
    pub true_label: Label,
    pub score: f64,
    pub predicted_label: Label,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attention_map: Option<AttentionImage>,
    pub embedding: Vec<f64>,
}

/// A single-channel probability map in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

fn class_counts(samples: &[ScoredSample]) -> (usize, usize) {
    let fake = samples.iter().filter(|s| s.true_label.is_fake()).count();
    (samples.len() - fake, fake)
}

fn require_both(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    let (r, f) = class_counts(samples);
    if r == 0 || f == 0 {
        return Err(Error::Metric(format!(
            "metric needs both classes, got {r} real and {f} fake"
        )));
    }
    Ok((r, f))
}

pub fn compute_acc(samples: &[ScoredSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("accuracy of an empty sample set".into()));
    }
    let correct = samples
        .iter()
        .filter(|s| s.predicted_label == s.true_label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Probability that a random fake outscores a random real, ties counting half.
pub fn compute_auc(samples: &[ScoredSample]) -> Result<f64> {
    let (nr, nf) = require_both(samples)?;
    let mut sorted: Vec<(f64, bool)> = samples
        .iter()
        .map(|s| (s.score, s.true_label.is_fake()))
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Count, for each fake, the reals below it plus half of the tied reals.
    let mut wins = 0.0;
    let mut reals_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut tie_real, mut tie_fake) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tie_fake += 1;
            } else {
                tie_real += 1;
            }
            j += 1;
        }
        wins += tie_fake as f64 * (reals_below as f64 + 0.5 * tie_real as f64);
        reals_below += tie_real;
        i = j;
    }
    Ok(wins / (nr as f64 * nf as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TarAtFar {
    pub tar: f64,
    /// Empirical FAR at the chosen threshold; at most the requested level.
    pub far: f64,
    pub threshold: f64,
}

/// TAR at the lowest threshold (score `>` threshold accepts as fake) whose
/// empirical FAR does not exceed `far_level`; this is the best TAR on the
/// achievable FAR grid.
pub fn compute_tar_at_far(samples: &[ScoredSample], far_level: f64) -> Result<TarAtFar> {
    let (nr, nf) = require_both(samples)?;
    if !(far_level > 0.0 && far_level < 1.0) {
        return Err(Error::Metric(format!("FAR level {far_level} outside (0, 1)")));
    }
    let mut reals: Vec<f64> = samples
        .iter()
        .filter(|s| !s.true_label.is_fake())
        .map(|s| s.score)
        .collect();
    reals.sort_by(|a, b| b.total_cmp(a));
    // Largest number of reals allowed above the threshold.
    let mut k = (far_level * nr as f64).floor() as usize;
    while (k + 1) as f64 / nr as f64 <= far_level {
        k += 1;
    }
    while k > 0 && k as f64 / nr as f64 > far_level {
        k -= 1;
    }
    let threshold = if k >= nr { f64::NEG_INFINITY } else { reals[k] };
    let above = |label: bool| {
        samples
            .iter()
            .filter(|s| s.true_label.is_fake() == label && s.score > threshold)
            .count()
    };
    Ok(TarAtFar {
        tar: above(true) as f64 / nf as f64,
        far: above(false) as f64 / nr as f64,
        threshold,
    })
}

/// Fraction of pixels over all samples where `map > threshold` agrees with the mask.
pub fn compute_pbca(maps: &[AttentionImage], masks: &[GroundTruthMask], threshold: f64) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::Metric(format!(
            "{} attention maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    let mut agree = 0usize;
    let mut total = 0usize;
    for (m, g) in maps.iter().zip(masks) {
        if (m.height, m.width) != (g.height(), g.width()) {
            return Err(Error::Metric(format!(
                "attention map {}x{} vs mask {}x{}",
                m.height,
                m.width,
                g.height(),
                g.width()
            )));
        }
        agree += m
            .values
            .iter()
            .zip(g.values())
            .filter(|(&p, &t)| (p > threshold) == (t != 0))
            .count();
        total += m.values.len();
    }
    if total == 0 {
        return Err(Error::Metric("PBCA over zero pixels".into()));
    }
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counts {
    pub real: usize,
    pub fake: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub acc: f64,
    pub auc: f64,
    /// TAR at FAR 0.1%.
    pub tar_at0p1: f64,
    /// TAR at FAR 0.01%.
    pub tar_at0p01: f64,
    /// `None` when the model has no attention layer.
    pub pbca: Option<f64>,
    pub counts: Counts,
    pub threshold: f64,
    pub far_at0p1: f64,
    pub far_at0p01: f64,
}

pub const FAR_0P1: f64 = 0.001;
pub const FAR_0P01: f64 = 0.0001;

pub fn metrics_report(samples: &[ScoredSample], pbca: Option<f64>, threshold: f64) -> Result<MetricsReport> {
    let (real, fake) = class_counts(samples);
    let t1 = compute_tar_at_far(samples, FAR_0P1)?;
    let t2 = compute_tar_at_far(samples, FAR_0P01)?;
    Ok(MetricsReport {
        acc: compute_acc(samples)?,
        auc: compute_auc(samples)?,
        tar_at0p1: t1.tar,
        tar_at0p01: t2.tar,
        pbca,
        counts: Counts {
            real,
            fake,
            total: samples.len(),
        },
        threshold,
        far_at0p1: t1.far,
        far_at0p01: t2.far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(score: f64, fake: bool) -> ScoredSample {
        let l = if fake { Label::Fake } else { Label::Real };
        ScoredSample {
            id: String::new(),
            true_label: l,
            score,
            predicted_label: if score > 9.05 { Label::Fake } else { Label::Real },
            attention_map: None,
            embedding: vec![],
        }
    }

    #[test]
    fn acc_examples() {
        assert_eq!(compute_acc(&[s(0.0, false), s(20.0, true)]).unwrap(), 1.0);
        assert_eq!(compute_acc(&[s(0.0, false), s(0.0, true)]).unwrap(), 0.5);
        assert!(compute_acc(&[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(compute_auc(&[s(0.0, false), s(1.0, false), s(2.0, true)]).unwrap(), 1.0);
        assert_eq!(compute_auc(&[s(1.0, false), s(1.0, true), s(1.0, true)]).unwrap(), 0.5);
        assert_eq!(compute_auc(&[s(2.0, false), s(1.0, true)]).unwrap(), 0.0);
        let v = [s(1.0, false), s(2.0, false), s(2.0, true), s(3.0, true)];
        assert_eq!(compute_auc(&v).unwrap(), 0.875);
        assert!(compute_auc(&[s(1.0, true)]).is_err());
    }

    #[test]
    fn tar_examples() {
        let sep = [s(0.0, false), s(1.0, false), s(5.0, true), s(6.0, true)];
        assert_eq!(compute_tar_at_far(&sep, 0.001).unwrap().tar, 1.0);
        let inter = [s(1.0, false), s(3.0, false), s(2.0, true), s(4.0, true)];
        let r = compute_tar_at_far(&inter, 0.5).unwrap();
        assert_eq!((r.tar, r.far, r.threshold), (1.0, 0.5, 1.0));
        let r = compute_tar_at_far(&inter, 0.4).unwrap();
        assert_eq!((r.tar, r.far, r.threshold), (0.5, 0.0, 3.0));
        assert!(compute_tar_at_far(&inter, 0.0).is_err());
    }

    #[test]
    fn pbca_examples() {
        let mask = GroundTruthMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let exact = AttentionImage {
            height: 2,
            width: 2,
            values: vec![0.01, 0.99, 0.99, 0.01],
        };
        assert_eq!(compute_pbca(&[exact], &[mask.clone()], 0.5).unwrap(), 1.0);
        let low = AttentionImage {
            height: 2,
            width: 2,
            values: vec![0.3; 4],
        };
        let zeros = GroundTruthMask::zeros(2, 2);
        assert_eq!(compute_pbca(&[low.clone()], &[zeros], 0.5).unwrap(), 1.0);
        assert_eq!(compute_pbca(&[low], &[mask], 0.5).unwrap(), 0.5);
        let wrong = AttentionImage {
            height: 1,
            width: 4,
            values: vec![0.3; 4],
        };
        assert!(compute_pbca(&[wrong], &[GroundTruthMask::zeros(2, 2)], 0.5).is_err());
    }
}
