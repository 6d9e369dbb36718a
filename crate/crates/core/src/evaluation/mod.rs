//! Scoring of trained checkpoints, the detection and localization metrics,
//! and CSV/PNG exports for plotting.

mod metrics;

use std::io::Write;
use std::path::Path;

pub use metrics::{
    compute_acc, compute_auc, compute_pbca, compute_tar_at_far, metrics_report, AttentionImage,
    Counts, MetricsReport, ScoredSample, TarAtFar, FAR_0P01, FAR_0P1,
};

use crate::model::{decision_threshold, infer, BranchId, Objective};
use crate::synthdata::{Dataset, GroundTruthMask, Label, PairedSample};
use crate::training::Checkpoint;
use crate::{Error, Result};

pub const SCORE_BATCH: usize = 64;
pub const PBCA_THRESHOLD: f64 = 0.5;

/// Threshold applied to scores: the radius midpoint for the metric
/// objective, 0.5 for the cross-entropy probability.
pub fn score_threshold(checkpoint: &Checkpoint) -> Result<f64> {
    let w = &checkpoint.config.loss_weights;
    match checkpoint.config.variant.objective {
        Objective::Metric => decision_threshold(w.r_minus, w.r_plus),
        Objective::CrossEntropy => Ok(0.5),
    }
}

fn resolve(data: &Dataset, ids: &[String]) -> Result<Vec<PairedSample>> {
    ids.iter()
        .map(|id| {
            let e = data
                .manifest
                .entry(id)
                .ok_or_else(|| Error::Dataset(format!("unknown id {id}")))?;
            data.get(e)
        })
        .collect()
}

/// Scores `ids` with one branch: LOW on the low-quality members, HIGH on the
/// high-quality members.
pub fn score_dataset(
    checkpoint: &Checkpoint,
    data: &Dataset,
    ids: &[String],
    branch: BranchId,
) -> Result<Vec<ScoredSample>> {
    let cfg = &checkpoint.config;
    if let Some(s) = data.image_size() {
        if s != cfg.arch.input_size {
            return Err(Error::Dimension(format!(
                "checkpoint expects {0}x{0} images, dataset has {s}x{s}",
                cfg.arch.input_size
            )));
        }
    }
    let threshold = score_threshold(checkpoint)?;
    let a = cfg.arch.attention_size();
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(SCORE_BATCH) {
        let samples = resolve(data, chunk)?;
        let images: Vec<_> = samples
            .iter()
            .map(|s| match branch {
                BranchId::High => &s.hq,
                BranchId::Low => &s.lq,
            })
            .collect();
        let inf = infer(&cfg.arch, &cfg.variant, &checkpoint.weights, branch, &images)?;
        for (i, s) in samples.iter().enumerate() {
            let score = inf.scores[i];
            out.push(ScoredSample {
                id: s.id.clone(),
                true_label: s.label,
                score,
                predicted_label: if score > threshold { Label::Fake } else { Label::Real },
                attention_map: inf.attention.as_ref().map(|m| AttentionImage {
                    height: a,
                    width: a,
                    values: m[i].clone(),
                }),
                embedding: inf.embeddings[i].clone(),
            });
        }
    }
    Ok(out)
}

/// Ground-truth masks pooled to the attention resolution.
pub fn pooled_masks(data: &Dataset, ids: &[String], size: usize) -> Result<Vec<GroundTruthMask>> {
    resolve(data, ids)?
        .iter()
        .map(|s| s.mask.pooled(size, size))
        .collect()
}

/// Scores, then computes the full report for `ids`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    data: &Dataset,
    ids: &[String],
    branch: BranchId,
) -> Result<(Vec<ScoredSample>, MetricsReport)> {
    let scored = score_dataset(checkpoint, data, ids, branch)?;
    let pbca = if checkpoint.config.variant.attention {
        let masks = pooled_masks(data, ids, checkpoint.config.arch.attention_size())?;
        let maps: Vec<AttentionImage> = scored
            .iter()
            .map(|s| s.attention_map.clone().expect("attention variant"))
            .collect();
        Some(compute_pbca(&maps, &masks, PBCA_THRESHOLD)?)
    } else {
        None
    };
    let report = metrics_report(&scored, pbca, score_threshold(checkpoint)?)?;
    Ok((scored, report))
}

/// `‖C_h − C_l‖₂` per pair: high branch on HQ members, low branch on LQ members.
pub fn pair_embedding_distances(checkpoint: &Checkpoint, data: &Dataset, ids: &[String]) -> Result<Vec<f64>> {
    let high = score_dataset(checkpoint, data, ids, BranchId::High)?;
    let low = score_dataset(checkpoint, data, ids, BranchId::Low)?;
    high.iter()
        .zip(&low)
        .map(|(h, l)| crate::losses::pair_distance_term(&h.embedding, &l.embedding))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub start: f64,
    pub end: f64,
    pub real: usize,
    pub fake: usize,
}

/// Per-class counts of scores in bins `[k·w, (k+1)·w)` starting at 0.
pub fn histogram(samples: &[ScoredSample], bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Parameter(format!("bin width {bin_width} must be positive")));
    }
    let max = samples.iter().map(|s| s.score).fold(0.0f64, f64::max);
    let n = (max / bin_width).floor() as usize + 1;
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|k| HistogramBin {
            start: k as f64 * bin_width,
            end: (k + 1) as f64 * bin_width,
            real: 0,
            fake: 0,
        })
        .collect();
    for s in samples {
        let k = ((s.score.max(0.0) / bin_width).floor() as usize).min(n - 1);
        if s.true_label.is_fake() {
            bins[k].fake += 1;
        } else {
            bins[k].real += 1;
        }
    }
    Ok(bins)
}

pub fn export_histograms(samples: &[ScoredSample], bin_width: f64, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "binStart,binEnd,real,fake")?;
    for b in histogram(samples, bin_width)? {
        writeln!(out, "{},{},{},{}", b.start, b.end, b.real, b.fake)?;
    }
    Ok(())
}

/// Parses the CSV written by [`export_histograms`].
pub fn read_histogram_csv(text: &str) -> Result<Vec<HistogramBin>> {
    let bad = |l: &str| Error::Parameter(format!("malformed histogram row `{l}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(l));
            }
            Ok(HistogramBin {
                start: f[0].parse().map_err(|_| bad(l))?,
                end: f[1].parse().map_err(|_| bad(l))?,
                real: f[2].parse().map_err(|_| bad(l))?,
                fake: f[3].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

/// One row per sample: id, label, then the embedding coordinates.
pub fn export_embeddings(samples: &[ScoredSample], out: &mut dyn Write) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.embedding.len());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("e{i}")));
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let label = if s.true_label.is_fake() { "fake" } else { "real" };
        let values: Vec<String> = s.embedding.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{label},{}", s.id, values.join(","))?;
    }
    Ok(())
}

/// Writes an attention map as an 8-bit grayscale PNG, nearest-upsampled to `size`.
pub fn save_attention_png(map: &AttentionImage, size: usize, path: &Path) -> Result<()> {
    let size = size.max(map.width).max(map.height);
    let img = image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let sy = y as usize * map.height / size;
        let sx = x as usize * map.width / size;
        let v = map.values[sy * map.width + sx].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}
