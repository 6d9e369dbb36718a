use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::train;
use crate::evaluation::{evaluate, MetricsReport};
use crate::model::{BranchId, Objective, Variant};
use crate::synthdata::{generate_dataset, Dataset, DatasetConfig, PairedSample};
use crate::{Error, Result};

/// Quality that stands in for uncompressed images: unit divisors, so only
/// coefficient rounding remains.
pub const RAW_QUALITY: u32 = 100;

/// Which pairs a row trains and tests on, derived from the given dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PairSource {
    /// The dataset as given.
    #[default]
    AsGiven,
    /// High-quality images on both members, including the test split.
    HighOnly,
    /// High-quality members regenerated at [`RAW_QUALITY`].
    RawPairs,
    /// Half the pairs at [`RAW_QUALITY`], half at the given high quality.
    MixedPairs,
}

impl PairSource {
    /// Applies the source to `data`. The regenerating sources need the
    /// generation config recorded in the manifest; splits, masks and
    /// low-quality members stay identical.
    pub fn derive(self, data: &Dataset) -> Result<Dataset> {
        let regenerate = |f: &dyn Fn(&mut DatasetConfig)| -> Result<Dataset> {
            let mut config = data.manifest.config.clone().ok_or_else(|| {
                Error::Config("this row regenerates the data; the manifest does not record its generation config".into())
            })?;
            f(&mut config);
            let (manifest, samples) = generate_dataset(&config)?;
            Ok(Dataset::from_samples(manifest, samples))
        };
        match self {
            PairSource::AsGiven => Ok(data.clone()),
            PairSource::HighOnly => Ok(data.map_samples(|s| PairedSample {
                lq: s.hq.clone(),
                ..s.clone()
            })),
            PairSource::RawPairs => regenerate(&|c| {
                c.hq_quality = RAW_QUALITY;
                c.mixed_hq_quality = None;
            }),
            PairSource::MixedPairs => regenerate(&|c| {
                c.mixed_hq_quality = Some(RAW_QUALITY);
                c.mixed_fraction = 0.5;
            }),
        }
    }
}

fn as_given(p: &PairSource) -> bool {
    *p == PairSource::AsGiven
}

/// One configuration of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub number: u32,
    pub name: String,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "as_given")]
    pub pairs: PairSource,
}

fn row(number: u32, name: &str, two_branch: bool, objective: Objective, attention: bool, transfer: bool, gan: bool) -> AblationRow {
    AblationRow {
        number,
        name: name.into(),
        pairs: PairSource::AsGiven,
        variant: Variant {
            two_branch,
            objective,
            attention,
            transfer,
            gan,
            bidirectional_transfer: false,
        },
    }
}

/// The eleven rows. All but row 4 test on the low-quality split; row 4
/// trains and tests a single branch on high-quality images, rows 10 and 11
/// pair with raw and mixed high-quality members.
pub fn standard_rows() -> Vec<AblationRow> {
    use Objective::{CrossEntropy as Ce, Metric as M};
    let with = |r: AblationRow, pairs| AblationRow { pairs, ..r };
    vec![
        row(1, "single-ce", false, Ce, false, false, false),
        row(2, "single-metric", false, M, false, false, false),
        row(3, "single-metric-attention", false, M, true, false, false),
        with(row(4, "single-metric-attention-hq", false, M, true, false, false), PairSource::HighOnly),
        row(5, "two-branch-metric", true, M, false, false, false),
        row(6, "two-branch-metric-gan", true, M, false, false, true),
        row(7, "two-branch-metric-attention", true, M, true, false, false),
        row(8, "two-branch-metric-transfer", true, M, true, true, false),
        row(9, "full", true, M, true, true, true),
        with(row(10, "full-raw-pairs", true, M, true, true, true), PairSource::RawPairs),
        with(row(11, "full-mixed-pairs", true, M, true, true, true), PairSource::MixedPairs),
    ]
}

pub fn find_row(name: &str) -> Result<AblationRow> {
    standard_rows()
        .into_iter()
        .find(|r| r.name == name || r.number.to_string() == name)
        .ok_or_else(|| Error::Config(format!("unknown ablation row `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationResult {
    pub row: AblationRow,
    pub report: MetricsReport,
    pub test_ids: Vec<String>,
}

/// Trains and evaluates every row with the shared seed and data.
pub fn ablation_matrix(base: &TrainConfig, data: &Dataset, rows: &[AblationRow]) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|r| {
            let cfg = TrainConfig {
                variant: r.variant.clone(),
                ..base.clone()
            };
            let derived;
            let data = if r.pairs == PairSource::AsGiven {
                data
            } else {
                derived = r.pairs.derive(data)?;
                &derived
            };
            let test = data.manifest.splits.test.clone();
            let ck = train(&cfg, data, None)?;
            let (_, report) = evaluate(&ck, data, &test, BranchId::Low)?;
            Ok(AblationResult {
                row: r.clone(),
                report,
                test_ids: test.clone(),
            })
        })
        .collect()
}

/// CSV with one line per row and the table's metric columns.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let mut s = String::from("No,Name,ACC,AUC,TAR0.1,TAR0.01,PBCA\n");
    for r in results {
        let pbca = r.report.pbca.map_or("-".to_string(), |p| format!("{p:.4}"));
        s.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{pbca}\n",
            r.row.number, r.row.name, r.report.acc, r.report.auc, r.report.tar_at0p1, r.report.tar_at0p01
        ));
    }
    s
}
