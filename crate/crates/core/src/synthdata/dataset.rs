//! Paired high/low quality dataset generation, the JSON manifest, and
//! in-memory loading.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dct::{compress, CompressionLevel};
use super::generate::{generate_fake_pair_styled, generate_real_image, mix_seed, ForgeryStyle};
use super::image::{GroundTruthMask, Image};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn as_f64(self) -> f64 {
        if self.is_fake() {
            1.0
        } else {
            0.0
        }
    }
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub id: String,
    pub hq_path: String,
    pub lq_path: String,
    pub mask_path: String,
    pub label: Label,
    /// Quality of the high-quality member, when the generator recorded it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hq_quality: Option<u32>,
    /// Horizontal-flip augmentation for replicated entries.
    #[serde(default, skip_serializing_if = "is_false")]
    pub flip: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub splits: Splits,
    pub seed: u64,
    /// Generation config, so derived datasets can be regenerated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DatasetConfig>,
}

impl DatasetManifest {
    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Split ids are disjoint and each names an existing entry.
    pub fn validate(&self) -> Result<()> {
        let ids: HashSet<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        if ids.len() != self.entries.len() {
            return Err(Error::Dataset("duplicate entry ids".into()));
        }
        let mut seen = HashSet::new();
        for id in self
            .splits
            .train
            .iter()
            .chain(&self.splits.val)
            .chain(&self.splits.test)
        {
            if !ids.contains(id.as_str()) {
                return Err(Error::Dataset(format!("split references unknown id {id}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Dataset(format!("id {id} appears in more than one split")));
            }
        }
        Ok(())
    }

    pub fn counts(&self, ids: &[String]) -> (usize, usize) {
        let mut real = 0;
        let mut fake = 0;
        for id in ids {
            match self.entry(id).map(|e| e.label) {
                Some(Label::Real) => real += 1,
                Some(Label::Fake) => fake += 1,
                None => {}
            }
        }
        (real, fake)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct DatasetConfig {
    pub count: usize,
    pub size: usize,
    pub hq_quality: u32,
    pub lq_quality: u32,
    pub fake_fraction: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub style: ForgeryStyle,
    /// Mixed-pair datasets: `mixedFraction` of the pairs take their
    /// high-quality member at this quality instead of `hqQuality`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixed_hq_quality: Option<u32>,
    pub mixed_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100,
            size: 32,
            hq_quality: 90,
            lq_quality: 30,
            fake_fraction: 0.5,
            seed: 0,
            train_fraction: 0.7,
            val_fraction: 0.15,
            style: ForgeryStyle::default(),
            mixed_hq_quality: None,
            mixed_fraction: 0.5,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let lq = CompressionLevel::new(self.lq_quality)?;
        let mut highs = vec![("hqQuality", self.hq_quality)];
        highs.extend(self.mixed_hq_quality.map(|q| ("mixedHqQuality", q)));
        for (name, q) in highs {
            if CompressionLevel::new(q)?.quality() <= lq.quality() {
                return Err(Error::Config(format!(
                    "{name} ({q}) must exceed lqQuality ({})",
                    self.lq_quality
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.mixed_fraction) {
            return Err(Error::Config("mixedFraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.fake_fraction) {
            return Err(Error::Config("fakeFraction must be in [0, 1]".into()));
        }
        if self.train_fraction < 0.0
            || self.val_fraction < 0.0
            || self.train_fraction + self.val_fraction > 1.0 + 1e-12
        {
            return Err(Error::Config(
                "trainFraction and valFraction must be non-negative and sum to at most 1".into(),
            ));
        }
        if self.count == 0 {
            return Err(Error::Config("count must be positive".into()));
        }
        if self.style.resample == 0 || self.size % self.style.resample != 0 {
            return Err(Error::Config("style.resample must divide size".into()));
        }
        if self.style.grid_period < 2 || self.style.grid_period % 2 != 0 {
            return Err(Error::Config("style.gridPeriod must be even and at least 2".into()));
        }
        Ok(())
    }

    fn fake_count(&self) -> usize {
        (self.count as f64 * self.fake_fraction).round() as usize
    }
}

/// One generated pair before it is written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedSample {
    pub id: String,
    pub hq: Image,
    pub lq: Image,
    pub mask: GroundTruthMask,
    pub label: Label,
}

impl PairedSample {
    pub fn flipped(&self) -> Self {
        Self {
            id: self.id.clone(),
            hq: self.hq.flipped_horizontal(),
            lq: self.lq.flipped_horizontal(),
            mask: self.mask.flipped_horizontal(),
            label: self.label,
        }
    }
}

fn sample_id(index: usize) -> String {
    format!("pair{index:05}")
}

/// Labels are a seeded permutation of exactly `round(count·fakeFraction)` fakes.
fn assign_labels(config: &DatasetConfig) -> Vec<Label> {
    let fakes = config.fake_count();
    let mut labels: Vec<Label> = (0..config.count)
        .map(|i| if i < fakes { Label::Fake } else { Label::Real })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x1ABE1));
    labels.shuffle(&mut rng);
    labels
}

/// High-quality level of every sample: exactly `round(count·mixedFraction)`
/// seeded picks use `mixedHqQuality`, the rest `hqQuality`.
fn hq_qualities(config: &DatasetConfig) -> Vec<u32> {
    let mut out = vec![config.hq_quality; config.count];
    if let Some(q) = config.mixed_hq_quality {
        let mut idx: Vec<usize> = (0..config.count).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x313ED)));
        let n = (config.count as f64 * config.mixed_fraction).round() as usize;
        for &i in &idx[..n.min(config.count)] {
            out[i] = q;
        }
    }
    out
}

/// Generates sample `index` of the dataset; a pure function of
/// `(config, index)` so samples can be produced in any order.
pub fn generate_sample(config: &DatasetConfig, index: usize, label: Label) -> Result<PairedSample> {
    let hq = match config.mixed_hq_quality {
        Some(_) => *hq_qualities(config)
            .get(index)
            .ok_or_else(|| Error::Config(format!("sample {index} is outside count {}", config.count)))?,
        None => config.hq_quality,
    };
    generate_sample_at(config, index, label, hq)
}

fn generate_sample_at(config: &DatasetConfig, index: usize, label: Label, hq_quality: u32) -> Result<PairedSample> {
    let hq_level = CompressionLevel::new(hq_quality)?;
    let lq_level = CompressionLevel::new(config.lq_quality)?;
    let seed = mix_seed(config.seed, index as u64 + 1);
    let (source, mask) = match label {
        Label::Real => (
            generate_real_image(seed, config.size)?,
            GroundTruthMask::zeros(config.size, config.size),
        ),
        Label::Fake => {
            let mut donor = mix_seed(seed, 0xD0_0A);
            if donor == seed {
                donor = donor.wrapping_add(1);
            }
            generate_fake_pair_styled(seed, donor, config.size, &config.style)?
        }
    };
    Ok(PairedSample {
        id: sample_id(index),
        hq: compress(&source, hq_level)?,
        lq: compress(&source, lq_level)?,
        mask,
        label,
    })
}

/// Stratified split with exact totals: the shuffled classes are interleaved
/// proportionally, so every prefix has the overall class ratio, then cut.
fn split_ids(config: &DatasetConfig, labels: &[Label]) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0x5_917));
    let mut classes: Vec<Vec<String>> = [Label::Real, Label::Fake]
        .iter()
        .map(|&class| {
            let mut ids: Vec<String> = (0..config.count)
                .filter(|&i| labels[i] == class)
                .map(sample_id)
                .collect();
            ids.shuffle(&mut rng);
            ids
        })
        .collect();
    let sizes: Vec<usize> = classes.iter().map(Vec::len).collect();
    let mut taken = [0usize; 2];
    let mut order = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let pick = (0..2)
            .filter(|&c| taken[c] < sizes[c])
            .min_by(|&a, &b| {
                let fa = (taken[a] + 1) as f64 / sizes[a] as f64;
                let fb = (taken[b] + 1) as f64 / sizes[b] as f64;
                fa.total_cmp(&fb)
            })
            .expect("ids remain");
        order.push(std::mem::take(&mut classes[pick][taken[pick]]));
        taken[pick] += 1;
    }
    let n_train = ((config.count as f64 * config.train_fraction).round() as usize).min(config.count);
    let n_val = ((config.count as f64 * config.val_fraction).round() as usize).min(config.count - n_train);
    let mut test = order.split_off(n_train + n_val);
    let mut val = order.split_off(n_train);
    let mut train = order;
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Splits { train, val, test }
}

/// Generates all samples in memory together with the manifest describing them
/// (paths are relative to the dataset directory).
pub fn generate_dataset(config: &DatasetConfig) -> Result<(DatasetManifest, Vec<PairedSample>)> {
    config.validate()?;
    let labels = assign_labels(config);
    let qualities = hq_qualities(config);
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| generate_sample_at(config, i, label, qualities[i]))
        .collect::<Result<Vec<_>>>()?;
    let entries = samples
        .iter()
        .zip(&qualities)
        .map(|(s, &q)| ManifestEntry {
            id: s.id.clone(),
            hq_path: format!("hq/{}.png", s.id),
            lq_path: format!("lq/{}.png", s.id),
            mask_path: format!("mask/{}.png", s.id),
            label: s.label,
            hq_quality: Some(q),
            flip: false,
        })
        .collect();
    let manifest = DatasetManifest {
        entries,
        splits: split_ids(config, &labels),
        seed: config.seed,
        config: Some(config.clone()),
    };
    Ok((manifest, samples))
}

/// Generates the dataset and writes lossless PNGs plus `manifest.json` into `out`.
pub fn make_paired_dataset(config: &DatasetConfig, out: &Path) -> Result<DatasetManifest> {
    let (manifest, samples) = generate_dataset(config)?;
    for sub in ["hq", "lq", "mask"] {
        fs::create_dir_all(out.join(sub))?;
    }
    for (entry, sample) in manifest.entries.iter().zip(&samples) {
        sample.hq.save_png(&out.join(&entry.hq_path))?;
        sample.lq.save_png(&out.join(&entry.lq_path))?;
        sample.mask.save_png(&out.join(&entry.mask_path))?;
    }
    manifest.save(out)?;
    Ok(manifest)
}

/// Samples of a manifest held in memory, addressable by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    samples: std::collections::HashMap<String, PairedSample>,
}

impl Dataset {
    pub fn from_samples(manifest: DatasetManifest, samples: Vec<PairedSample>) -> Self {
        let samples = samples.into_iter().map(|s| (s.id.clone(), s)).collect();
        Self { manifest, samples }
    }

    /// Reads every entry's images from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(dir)?;
        Self::load_with(dir, manifest)
    }

    pub fn load_with(dir: &Path, manifest: DatasetManifest) -> Result<Self> {
        let root = PathBuf::from(dir);
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let hq = Image::load_png(&root.join(&e.hq_path))?;
            let lq = Image::load_png(&root.join(&e.lq_path))?;
            let mask = GroundTruthMask::load_png(&root.join(&e.mask_path))?;
            if (hq.height(), hq.width()) != (lq.height(), lq.width())
                || (mask.height(), mask.width()) != (hq.height(), hq.width())
            {
                return Err(Error::Dataset(format!("pair {} has mismatched dimensions", e.id)));
            }
            if e.label.is_fake() && mask.count_nonzero() == 0 {
                return Err(Error::Dataset(format!("fake pair {} has an empty mask", e.id)));
            }
            samples.push(PairedSample {
                id: e.id.clone(),
                hq,
                lq,
                mask,
                label: e.label,
            });
        }
        Ok(Self::from_samples(manifest, samples))
    }

    /// The sample behind a manifest entry, with its augmentation applied.
    pub fn get(&self, entry: &ManifestEntry) -> Result<PairedSample> {
        let key = entry.id.split('~').next().unwrap_or(&entry.id);
        let base = self
            .samples
            .get(key)
            .ok_or_else(|| Error::Dataset(format!("no sample for id {}", entry.id)))?;
        Ok(if entry.flip { base.flipped() } else { base.clone() })
    }

    /// The same manifest with every sample passed through `f`.
    pub fn map_samples(&self, f: impl Fn(&PairedSample) -> PairedSample) -> Self {
        Self {
            manifest: self.manifest.clone(),
            samples: self.samples.iter().map(|(k, v)| (k.clone(), f(v))).collect(),
        }
    }

    pub fn sample(&self, id: &str) -> Option<&PairedSample> {
        self.samples.get(id)
    }

    pub fn image_size(&self) -> Option<usize> {
        self.samples.values().next().map(|s| s.hq.width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            count: 100,
            seed: 5,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn splits_follow_fractions_and_are_disjoint() {
        let c = small_config();
        let labels = assign_labels(&c);
        let s = split_ids(&c, &labels);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        for split in [&s.train, &s.val, &s.test] {
            let fakes = split
                .iter()
                .filter(|id| labels[id[4..].parse::<usize>().unwrap()].is_fake())
                .count();
            assert!((fakes as f64 - split.len() as f64 / 2.0).abs() <= 1.0);
        }
        let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn quality_direction_is_enforced() {
        let cfg = DatasetConfig {
            hq_quality: 30,
            lq_quality: 90,
            ..small_config()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = DatasetConfig {
            hq_quality: 50,
            lq_quality: 50,
            ..small_config()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn label_ratio_is_exact() {
        let labels = assign_labels(&DatasetConfig {
            fake_fraction: 0.3,
            ..small_config()
        });
        assert_eq!(labels.iter().filter(|l| l.is_fake()).count(), 30);
    }

    #[test]
    fn samples_can_be_generated_out_of_order() {
        let cfg = DatasetConfig {
            count: 6,
            ..small_config()
        };
        let (_, all) = generate_dataset(&cfg).unwrap();
        let again = generate_sample(&cfg, 4, all[4].label).unwrap();
        assert_eq!(again, all[4]);
    }

    #[test]
    fn upsampled_entry_ids_resolve_to_their_source() {
        let cfg = DatasetConfig {
            count: 4,
            ..small_config()
        };
        let (manifest, samples) = generate_dataset(&cfg).unwrap();
        let ds = Dataset::from_samples(manifest.clone(), samples);
        let mut e = manifest.entries[0].clone();
        e.id = format!("{}~1", e.id);
        e.flip = true;
        let s = ds.get(&e).unwrap();
        assert_eq!(s.hq, ds.sample(&manifest.entries[0].id).unwrap().hq.flipped_horizontal());
    }
}
