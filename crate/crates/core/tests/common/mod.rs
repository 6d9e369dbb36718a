//! Loop-based reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's loss or metric
//! code.

#![allow(dead_code)]

use anticomp::evaluation::ScoredSample;
use anticomp::model::{classify, Decision};
use anticomp::synthdata::{GroundTruthMask, Image, Label, PairedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Metric loss of one batch, summed sample by sample then divided by `n`.
pub fn dis_oracle(
    ch: Option<&[Vec<f64>]>,
    cl: &[Vec<f64>],
    labels: &[Label],
    r_minus: f64,
    r_plus: f64,
    lambda3: f64,
) -> f64 {
    let margin = |e: &[f64], l: Label| {
        let r = norm(e);
        if l.is_fake() {
            (r_plus - r).max(0.0)
        } else {
            (r - r_minus).max(0.0)
        }
    };
    let mut sum = 0.0;
    for i in 0..labels.len() {
        sum += margin(&cl[i], labels[i]);
        if let Some(ch) = ch {
            sum += margin(&ch[i], labels[i]);
            let d: Vec<f64> = ch[i].iter().zip(&cl[i]).map(|(a, b)| a - b).collect();
            sum += lambda3 * norm(&d);
        }
    }
    sum / labels.len() as f64
}

fn bce_oracle(maps: &[Vec<f64>], masks: &[Vec<f64>]) -> f64 {
    let eps = 1e-7;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, g) in maps.iter().zip(masks) {
        for (&p, &t) in m.iter().zip(g) {
            let p = p.clamp(eps, 1.0 - eps);
            sum -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            count += 1;
        }
    }
    sum / count as f64
}

/// Attention loss: both BCE terms plus the mean normalized-map distance.
pub fn at_oracle(mh: &[Vec<f64>], ml: &[Vec<f64>], masks: &[Vec<f64>], transfer: bool) -> f64 {
    let mut total = bce_oracle(mh, masks) + bce_oracle(ml, masks);
    if transfer {
        let mut t = 0.0;
        for (h, l) in mh.iter().zip(ml) {
            let (nh, nl) = (norm(h), norm(l));
            let mut s = 0.0;
            for (a, b) in h.iter().zip(l) {
                s += (a / nh - b / nl).powi(2);
            }
            t += s.sqrt();
        }
        total += t / mh.len() as f64;
    }
    total
}

pub fn acc_oracle(rows: &[(f64, bool, bool)]) -> f64 {
    // (score, is_fake, predicted_fake)
    let mut ok = 0;
    for r in rows {
        if r.1 == r.2 {
            ok += 1;
        }
    }
    ok as f64 / rows.len() as f64
}

/// All real/fake pairs compared directly.
pub fn auc_oracle(rows: &[(f64, bool)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for f in rows.iter().filter(|r| r.1) {
        for r in rows.iter().filter(|r| !r.1) {
            pairs += 1.0;
            if f.0 > r.0 {
                wins += 1.0;
            } else if f.0 == r.0 {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Best TAR over every candidate threshold whose FAR stays within `level`.
pub fn tar_oracle(rows: &[(f64, bool)], level: f64) -> f64 {
    let nr = rows.iter().filter(|r| !r.1).count() as f64;
    let nf = rows.iter().filter(|r| r.1).count() as f64;
    let mut candidates: Vec<f64> = rows.iter().map(|r| r.0).collect();
    candidates.push(f64::NEG_INFINITY);
    let mut best = 0.0f64;
    for t in candidates {
        let far = rows.iter().filter(|r| !r.1 && r.0 > t).count() as f64 / nr;
        if far <= level {
            let tar = rows.iter().filter(|r| r.1 && r.0 > t).count() as f64 / nf;
            best = best.max(tar);
        }
    }
    best
}

pub fn pbca_oracle(maps: &[Vec<f64>], masks: &[Vec<u8>], threshold: f64) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for (m, g) in maps.iter().zip(masks) {
        for i in 0..m.len() {
            let pred = if m[i] > threshold { 1 } else { 0 };
            let truth = if g[i] > 0 { 1 } else { 0 };
            if pred == truth {
                agree += 1;
            }
            total += 1;
        }
    }
    agree as f64 / total as f64
}

pub fn random_image(rng: &mut impl Rng, size: usize) -> Image {
    let px: Vec<u8> = (0..size * size * 3).map(|_| rng.random()).collect();
    Image::new(size, size, px).unwrap()
}

/// A batch of noise pairs with random rectangular masks on the fakes.
pub fn random_batch(seed: u64, n: usize, size: usize) -> Vec<PairedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            let hq = random_image(&mut rng, size);
            let lq = random_image(&mut rng, size);
            let mut m = vec![0u8; size * size];
            if label.is_fake() {
                let (y0, x0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
                for y in y0..y0 + size / 2 {
                    for x in x0..x0 + size / 2 {
                        m[y * size + x] = 1;
                    }
                }
            }
            PairedSample {
                id: format!("r{i}"),
                hq,
                lq,
                mask: GroundTruthMask::new(size, size, m).unwrap(),
                label,
            }
        })
        .collect()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-300
}

pub fn scored_sample(score: f64, fake: bool) -> ScoredSample {
    let predicted = match classify(score, 0.1, 18.0).unwrap() {
        Decision::Fake => Label::Fake,
        Decision::Real => Label::Real,
    };
    ScoredSample {
        id: String::new(),
        true_label: if fake { Label::Fake } else { Label::Real },
        score,
        predicted_label: predicted,
        attention_map: None,
        embedding: vec![score],
    }
}

/// 200 samples with both classes. `kind` 0: continuous, 1: heavy ties on a
/// small grid, 2: every score equal, 3: perfectly separated.
pub fn fixture(seed: u64, kind: u8) -> Vec<ScoredSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..200)
        .map(|i| {
            // Odd indices are fake and index 0 is real, so both classes occur.
            let fake = i % 2 == 1 || (i > 0 && rng.random_bool(0.2));
            let score = match kind {
                0 => rng.random_range(0.0..20.0) + if fake { 2.0 } else { 0.0 },
                1 => f64::from(rng.random_range(0..6u8)) * 3.5,
                2 => 9.05,
                _ => {
                    if fake {
                        rng.random_range(18.0..30.0)
                    } else {
                        rng.random_range(0.0..0.1)
                    }
                }
            };
            scored_sample(score, fake)
        })
        .collect()
}

pub fn rows(v: &[ScoredSample]) -> Vec<(f64, bool)> {
    v.iter().map(|s| (s.score, s.true_label.is_fake())).collect()
}

pub mod gradcheck;
