use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anticomp::evaluation::{
    evaluate, export_embeddings, export_histograms, save_attention_png, score_dataset,
};
use anticomp::model::BranchId;
use anticomp::synthdata::{make_paired_dataset, Dataset, DatasetConfig, ForgeryStyle};
use anticomp::training::{ablation_matrix, ablation_table, find_row, standard_rows, train, Checkpoint, TrainConfig};
use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const OUT_ROOT_ENV: &str = "ANTICOMP_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "anticomp", version, about = "Compression-robust forgery detection toolkit")]
struct Cli {
    /// Increase logging on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired high/low-quality synthetic dataset.
    GenData(GenData),
    /// Train a model from a JSON config.
    Train(TrainCmd),
    /// Train and evaluate every row of an ablation matrix.
    Ablate(Ablate),
    /// Score a split and write a metrics report.
    Eval(Eval),
    /// Write per-sample attention maps as grayscale PNGs.
    AttnMaps(AttnMaps),
    /// Export raw embeddings as CSV.
    ExportEmbeddings(ExportEmbeddings),
    /// Export per-class distance histograms as CSV.
    ExportHistograms(ExportHistograms),
}

#[derive(Args, Debug, Serialize)]
struct GenData {
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 90)]
    hq_quality: u32,
    #[arg(long, default_value_t = 30)]
    lq_quality: u32,
    #[arg(long, default_value_t = 0.5)]
    fake_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
    /// Second high quality for a mixed-pair dataset.
    #[arg(long)]
    mixed_hq_quality: Option<u32>,
    /// Share of pairs at `--mixed-hq-quality`.
    #[arg(long, default_value_t = 0.5)]
    mixed_fraction: f64,
    /// JSON file overriding the forgery style.
    #[arg(long)]
    style: Option<PathBuf>,
    /// Output directory [default: $ANTICOMP_OUT_ROOT/data].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainCmd {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $ANTICOMP_OUT_ROOT/train].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct Ablate {
    #[arg(long)]
    matrix: PathBuf,
    /// Output directory [default: the matrix's `out`, else $ANTICOMP_OUT_ROOT/ablate].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Branch {
    Low,
    High,
}

impl From<Branch> for BranchId {
    fn from(b: Branch) -> Self {
        match b {
            Branch::Low => BranchId::Low,
            Branch::High => BranchId::High,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug, Serialize)]
struct Scoring {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Branch::Low)]
    branch: Branch,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
}

#[derive(Args, Debug, Serialize)]
struct Eval {
    #[command(flatten)]
    scoring: Scoring,
    /// Report path; `run.json` is written next to it.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AttnMaps {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated sample ids [default: the whole test split].
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    #[arg(long, value_enum, default_value_t = Branch::Low)]
    branch: Branch,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExportEmbeddings {
    #[command(flatten)]
    scoring: Scoring,
    /// CSV path; `run.json` is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExportHistograms {
    #[command(flatten)]
    scoring: Scoring,
    #[arg(long, default_value_t = 0.5)]
    bin_width: f64,
    /// CSV path; `run.json` is written next to it.
    #[arg(long)]
    out: PathBuf,
}

/// Ablation matrix file.
#[derive(Debug, Deserialize, Serialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Matrix {
    data: PathBuf,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    base: TrainConfig,
    /// Row names or numbers; all standard rows when empty.
    #[serde(default)]
    rows: Vec<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    argv: Vec<String>,
    seed: Option<u64>,
    config_sha256: String,
    config: &'a T,
}

fn sha256_json<T: Serialize>(v: &T) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(v)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_run_record<T: Serialize>(dir: &Path, command: &str, seed: Option<u64>, config: &T) -> anyhow::Result<()> {
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        seed,
        config_sha256: sha256_json(config)?,
        config,
    };
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&rec)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn out_dir(explicit: Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    let dir = match explicit {
        Some(d) => d,
        None => match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(name),
            None => bail!("no output directory: pass --out or set {OUT_ROOT_ENV}"),
        },
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn parent_dir(file: &Path) -> anyhow::Result<PathBuf> {
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Configuration problems map to exit code 1 with the offending field named.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
}

fn config_check(r: anticomp::Result<()>) -> anyhow::Result<()> {
    r.map_err(|e| match e {
        anticomp::Error::Config(m) => ConfigError(m).into(),
        other => anyhow!(other),
    })
}

fn split_ids(data: &Dataset, split: Split) -> Vec<String> {
    let s = &data.manifest.splits;
    match split {
        Split::Train => s.train.clone(),
        Split::Val => s.val.clone(),
        Split::Test => s.test.clone(),
    }
}

fn log(verbose: u8, msg: impl AsRef<str>) {
    if verbose > 0 {
        eprintln!("{}", msg.as_ref());
    }
}

fn gen_data(cmd: GenData, verbose: u8) -> anyhow::Result<()> {
    let style: ForgeryStyle = match &cmd.style {
        Some(p) => read_json(p)?,
        None => ForgeryStyle::default(),
    };
    let config = DatasetConfig {
        count: cmd.count,
        size: cmd.size,
        hq_quality: cmd.hq_quality,
        lq_quality: cmd.lq_quality,
        fake_fraction: cmd.fake_fraction,
        seed: cmd.seed,
        train_fraction: cmd.train_fraction,
        val_fraction: cmd.val_fraction,
        style,
        mixed_hq_quality: cmd.mixed_hq_quality,
        mixed_fraction: cmd.mixed_fraction,
    };
    config_check(config.validate())?;
    let out = out_dir(cmd.out, "data")?;
    let manifest = make_paired_dataset(&config, &out)?;
    log(verbose, format!("wrote {} pairs to {}", manifest.entries.len(), out.display()));
    write_run_record(&out, "gen-data", Some(config.seed), &config)
}

fn train_cmd(cmd: TrainCmd, verbose: u8) -> anyhow::Result<()> {
    let mut config: TrainConfig = read_json(&cmd.config)?;
    if let Some(seed) = cmd.seed {
        config.seed = seed;
    }
    config_check(config.validate())?;
    let data = Dataset::load(&cmd.data)?;
    let out = out_dir(cmd.out, "train")?;
    let mut log_file = BufWriter::new(fs::File::create(out.join("train_log.jsonl"))?);
    let ck = train(&config, &data, Some(&mut log_file))?;
    log_file.flush()?;
    ck.save(&out.join("checkpoint.json"))?;
    fs::write(out.join("history.json"), serde_json::to_string_pretty(&ck.history)? + "\n")?;
    log(verbose, format!("best epoch {} of {}", ck.epoch, ck.history.len()));
    write_run_record(&out, "train", Some(config.seed), &config)
}

fn ablate(cmd: Ablate, verbose: u8) -> anyhow::Result<()> {
    let matrix: Matrix = read_json(&cmd.matrix)?;
    config_check(matrix.base.validate())?;
    let rows = if matrix.rows.is_empty() {
        standard_rows()
    } else {
        matrix
            .rows
            .iter()
            .map(|r| find_row(r).map_err(|e| anyhow!(ConfigError(format!("rows: {e}")))))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    let data_dir = if matrix.data.is_relative() {
        parent_dir(&cmd.matrix)?.join(&matrix.data)
    } else {
        matrix.data.clone()
    };
    let data = Dataset::load(&data_dir)?;
    let out = out_dir(cmd.out.or(matrix.out.clone()), "ablate")?;
    let results = ablation_matrix(&matrix.base, &data, &rows)?;
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&results)? + "\n")?;
    let table = ablation_table(&results);
    fs::write(out.join("ablation.csv"), &table)?;
    log(verbose, &table);
    write_run_record(&out, "ablate", Some(matrix.base.seed), &matrix)
}

fn eval_cmd(cmd: Eval) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&cmd.scoring.checkpoint)?;
    let data = Dataset::load(&cmd.scoring.data)?;
    let ids = split_ids(&data, cmd.scoring.split);
    let (_, report) = evaluate(&ck, &data, &ids, cmd.scoring.branch.into())?;
    let dir = parent_dir(&cmd.report)?;
    fs::write(&cmd.report, serde_json::to_string_pretty(&report)? + "\n")?;
    write_run_record(&dir, "eval", Some(ck.config.seed), &cmd)
}

fn attn_maps(cmd: AttnMaps, verbose: u8) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&cmd.checkpoint)?;
    if !ck.config.variant.attention {
        bail!("checkpoint variant has no attention layer");
    }
    let data = Dataset::load(&cmd.data)?;
    let ids = if cmd.ids.is_empty() {
        data.manifest.splits.test.clone()
    } else {
        cmd.ids.clone()
    };
    let out = out_dir(Some(cmd.out.clone()), "attn")?;
    let scored = score_dataset(&ck, &data, &ids, cmd.branch.into())?;
    for s in &scored {
        let map = s.attention_map.as_ref().expect("attention variant");
        save_attention_png(map, ck.config.arch.input_size, &out.join(format!("{}.png", s.id)))?;
    }
    log(verbose, format!("wrote {} maps", scored.len()));
    write_run_record(&out, "attn-maps", Some(ck.config.seed), &cmd)
}

fn export_embeddings_cmd(cmd: ExportEmbeddings) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&cmd.scoring.checkpoint)?;
    let data = Dataset::load(&cmd.scoring.data)?;
    let ids = split_ids(&data, cmd.scoring.split);
    let scored = score_dataset(&ck, &data, &ids, cmd.scoring.branch.into())?;
    let dir = parent_dir(&cmd.out)?;
    let mut f = BufWriter::new(fs::File::create(&cmd.out)?);
    export_embeddings(&scored, &mut f)?;
    f.flush()?;
    write_run_record(&dir, "export-embeddings", Some(ck.config.seed), &cmd)
}

fn export_histograms_cmd(cmd: ExportHistograms) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&cmd.scoring.checkpoint)?;
    let data = Dataset::load(&cmd.scoring.data)?;
    let ids = split_ids(&data, cmd.scoring.split);
    let scored = score_dataset(&ck, &data, &ids, cmd.scoring.branch.into())?;
    let dir = parent_dir(&cmd.out)?;
    let mut f = BufWriter::new(fs::File::create(&cmd.out)?);
    export_histograms(&scored, cmd.bin_width, &mut f)?;
    f.flush()?;
    write_run_record(&dir, "export-histograms", Some(ck.config.seed), &cmd)
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let v = cli.verbose;
    match cli.command {
        Command::GenData(c) => gen_data(c, v),
        Command::Train(c) => train_cmd(c, v),
        Command::Ablate(c) => ablate(c, v),
        Command::Eval(c) => eval_cmd(c),
        Command::AttnMaps(c) => attn_maps(c, v),
        Command::ExportEmbeddings(c) => export_embeddings_cmd(c),
        Command::ExportHistograms(c) => export_histograms_cmd(c),
    }
}

fn main() -> ExitCode {
    // clap prints usage and exits with status 2 on unknown commands or flags.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<ConfigError>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
