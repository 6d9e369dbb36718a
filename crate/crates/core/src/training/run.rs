use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::step::{evaluate_loss, train_step, TrainState};
use crate::losses::LossReport;
use crate::model::NetworkWeights;
use crate::synthdata::{mix_seed, Dataset, DatasetManifest, Label, ManifestEntry, PairedSample};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Replicates minority-class training entries (alternating horizontal flips)
/// until the train split's class ratio lies within [0.95, 1.05].
pub fn balance_classes(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let (real, fake) = manifest.counts(&manifest.splits.train);
    if real == 0 || fake == 0 {
        return Err(Error::Dataset(format!(
            "cannot balance a training split with {real} real and {fake} fake entries"
        )));
    }
    let mut out = manifest.clone();
    let ratio = real as f64 / fake as f64;
    if (0.95..=1.05).contains(&ratio) {
        return Ok(out);
    }
    let minority = if real < fake { Label::Real } else { Label::Fake };
    let target = real.max(fake);
    let pool: Vec<ManifestEntry> = manifest
        .splits
        .train
        .iter()
        .filter_map(|id| manifest.entry(id))
        .filter(|e| e.label == minority)
        .cloned()
        .collect();
    let mut have = pool.len();
    let mut k = 1;
    while have < target {
        for base in &pool {
            if have >= target {
                break;
            }
            let mut e = base.clone();
            e.id = format!("{}~{k}", base.id);
            e.flip = k % 2 == 1;
            out.splits.train.push(e.id.clone());
            out.entries.push(e);
            have += 1;
        }
        k += 1;
    }
    Ok(out)
}

/// Splits `ids` into seed-shuffled batches for one epoch.
pub fn epoch_batches(ids: &[String], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<String>> {
    let mut order = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xe90c + epoch as u64));
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn load_batch(data: &Dataset, manifest: &DatasetManifest, ids: &[String]) -> Result<Vec<PairedSample>> {
    ids.iter()
        .map(|id| {
            let e = manifest
                .entry(id)
                .ok_or_else(|| Error::Dataset(format!("split id {id} has no entry")))?;
            data.get(e)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub weights: NetworkWeights,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {}", ck.format)));
        }
        ck.config.validate()?;
        ck.weights
            .check_compatible(&ck.config.arch, &ck.config.variant)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ck)
    }
}

/// One JSON line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Early stopping on a validation loss; ties count as no improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Mean validation objective over `ids` in batches.
pub fn validation_loss(
    weights: &NetworkWeights,
    data: &Dataset,
    manifest: &DatasetManifest,
    ids: &[String],
    config: &TrainConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in ids.chunks(config.batch_size.max(1)) {
        let batch = load_batch(data, manifest, chunk)?;
        sum += evaluate_loss(weights, &batch, config)?.total * batch.len() as f64;
        n += batch.len();
    }
    if n == 0 {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    Ok(sum / n as f64)
}

/// Trains until the validation objective stops improving and returns the
/// best-validation checkpoint. Step reports go to `log` as JSON lines.
pub fn train(config: &TrainConfig, data: &Dataset, mut log: Option<&mut dyn Write>) -> Result<Checkpoint> {
    config.validate()?;
    if let Some(s) = data.image_size() {
        if s != config.arch.input_size {
            return Err(Error::Config(format!(
                "arch.inputSize {} does not match dataset image size {s}",
                config.arch.input_size
            )));
        }
    }
    let manifest = if config.balance {
        balance_classes(&data.manifest)?
    } else {
        data.manifest.clone()
    };
    let mut state = TrainState::new(config);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut history = Vec::new();
    let mut best = (0usize, state.weights.clone());
    for epoch in 1..=config.max_epochs {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ids in epoch_batches(&manifest.splits.train, config.batch_size, config.seed, epoch) {
            let batch = load_batch(data, &manifest, &ids)?;
            let report = train_step(&mut state, &batch, config)?;
            if let Some(w) = log.as_deref_mut() {
                let rec = StepRecord {
                    epoch,
                    step: state.step,
                    report,
                };
                serde_json::to_writer(&mut *w, &rec)?;
                w.write_all(b"\n")?;
            }
            sum += report.total * batch.len() as f64;
            n += batch.len();
        }
        let val = validation_loss(&state.weights, data, &manifest, &manifest.splits.val, config)?;
        history.push(EpochRecord {
            epoch,
            train_loss: sum / n.max(1) as f64,
            val_loss: val,
        });
        match stopper.observe(val) {
            StopDecision::Improved => best = (epoch, state.weights.clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if best.0 == 0 {
        // Validation never produced a finite improvement.
        best.0 = history.len();
        best.1 = state.weights.clone();
    }
    Ok(Checkpoint {
        format: CHECKPOINT_FORMAT,
        config: config.clone(),
        epoch: best.0,
        history,
        weights: best.1,
    })
}
