//! `lmp train-demo`: train each loss mode on the synthetic long-tail task for
//! several seeds and tabulate per-class IoU.

use std::path::{Path, PathBuf};

use lmp_core::data::{generate_dataset, SyntheticDatasetSpec};
use lmp_core::par::Execution;
use lmp_core::train::{train_with, LossMode, ModelHeader, TrainConfig, TrainReport};
use lmp_core::{MSpec, PoolingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format;
use crate::input::read_json_config;
use crate::output::{csv_io, csv_writer, default_dir, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    /// The `seed` of this spec is replaced by each run seed.
    pub dataset: SyntheticDatasetSpec,
    /// `loss_mode` and `seed` are replaced per run.
    pub train: TrainConfig,
    pub modes: Vec<LossMode>,
    pub seeds: Vec<u64>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetSpec::long_tail(0.5, 0),
            train: TrainConfig {
                lr0: 0.2,
                iterations: 150,
                pooling: PoolingConfig::new(1.3, MSpec::Fraction(0.25)).expect("valid pooling"),
                ..TrainConfig::default()
            },
            modes: vec![LossMode::Uniform, LossMode::Lmp],
            seeds: (1..=5).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DemoArgs {
    pub config: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub modes: Option<Vec<String>>,
    pub iterations: Option<usize>,
    pub p: Option<String>,
    pub m: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRun {
    pub seed: u64,
    pub mode: LossMode,
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub config: DemoConfig,
    /// Class with the smallest pixel fraction.
    pub minority_class: usize,
    pub runs: Vec<DemoRun>,
    /// Seeds where LMP's minority IoU exceeds the uniform baseline's, when
    /// both modes ran.
    pub lmp_minority_wins: Option<usize>,
}

impl DemoSummary {
    pub fn run_for(&self, seed: u64, mode: LossMode) -> Option<&DemoRun> {
        self.runs.iter().find(|r| r.seed == seed && r.mode == mode)
    }

    pub fn minority_iou(&self, seed: u64, mode: LossMode) -> Option<f64> {
        self.run_for(seed, mode)?.per_class_iou[self.minority_class]
    }

    pub fn mean_minority_iou(&self, mode: LossMode) -> Option<f64> {
        let v: Vec<f64> = self.config.seeds.iter().filter_map(|&s| self.minority_iou(s, mode)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Merges flags into the (file or default) configuration and validates it.
pub fn resolve_config(args: &DemoArgs) -> CliResult<DemoConfig> {
    let mut config: DemoConfig = match &args.config {
        Some(path) => read_json_config(path)?,
        None => DemoConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(modes) = &args.modes {
        config.modes = modes
            .iter()
            .map(|s| s.parse::<LossMode>().map_err(CliError::params))
            .collect::<CliResult<_>>()?;
    }
    if let Some(it) = args.iterations {
        config.train.iterations = it;
    }
    if let Some(p) = &args.p {
        config.train.pooling.p = lmp_core::config::parse_p(p).map_err(CliError::params)?;
    }
    if let Some(m) = &args.m {
        config.train.pooling.m = m.parse().map_err(CliError::params)?;
    }
    if config.seeds.is_empty() || config.modes.is_empty() {
        return Err(CliError::params("seeds and modes must be non-empty"));
    }
    config.dataset.validate().map_err(CliError::params)?;
    config.train.validate().map_err(CliError::params)?;
    PoolingConfig::new(config.train.pooling.p, config.train.pooling.m).map_err(CliError::params)?;
    Ok(config)
}

/// Trains every `(seed, mode)` pair, writing one report and one model per run
/// plus `iou_table.csv` into the output directory.
pub fn run(args: &DemoArgs) -> CliResult<DemoSummary> {
    let config = resolve_config(args)?;
    let dir = args.out_dir.clone().unwrap_or_else(default_dir);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::output(&dir, e))?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let summary = run_config(&config, &dir, exec)?;

    print!("{}", table(&summary));
    if let Some(wins) = summary.lmp_minority_wins {
        println!(
            "lmp beats uniform on minority class {} IoU in {wins}/{} seeds",
            summary.minority_class,
            config.seeds.len()
        );
    }
    Ok(summary)
}

pub fn run_config(config: &DemoConfig, dir: &Path, exec: Execution) -> CliResult<DemoSummary> {
    let fractions = &config.dataset.class_pixel_fractions;
    let minority_class = (0..fractions.len())
        .min_by(|&a, &b| fractions[a].total_cmp(&fractions[b]))
        .unwrap_or(0);
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let spec = SyntheticDatasetSpec { seed, ..config.dataset.clone() };
        let dataset = generate_dataset(&spec).map_err(CliError::params)?;
        for &mode in &config.modes {
            let train = TrainConfig { loss_mode: mode, seed, ..config.train.clone() };
            log::info!("training {mode} on seed {seed}");
            let (model, report) = train_with(&dataset, &train, exec).map_err(|e| match e {
                lmp_core::Error::Diverged { .. } => CliError::Failed(format!("{mode} seed {seed}: {e}")),
                other => CliError::params(other),
            })?;
            let stem = format!("{mode}_seed{seed}");
            write_json(&dir.join(format!("report_{stem}.json")), &report)?;
            let model_path = dir.join(format!("model_{stem}.bin"));
            model
                .save(&model_path, &ModelHeader::new(&model, &train))
                .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", model_path.display())))?;
            log::info!("{mode} seed {seed}: mean IoU {:.4} in {:.2} s", report.mean_iou, report.wall_time_secs);
            runs.push(summarize(seed, mode, &report));
        }
    }
    let mut summary = DemoSummary {
        config: config.clone(),
        minority_class,
        runs,
        lmp_minority_wins: None,
    };
    if config.modes.contains(&LossMode::Uniform) && config.modes.contains(&LossMode::Lmp) {
        let wins = config
            .seeds
            .iter()
            .filter(|&&s| {
                let u = summary.minority_iou(s, LossMode::Uniform).unwrap_or(0.0);
                let l = summary.minority_iou(s, LossMode::Lmp).unwrap_or(0.0);
                l > u
            })
            .count();
        summary.lmp_minority_wins = Some(wins);
    }
    write_table(&dir.join("iou_table.csv"), &summary)?;
    Ok(summary)
}

fn summarize(seed: u64, mode: LossMode, report: &TrainReport) -> DemoRun {
    DemoRun {
        seed,
        mode,
        per_class_iou: report.per_class_iou.clone(),
        mean_iou: report.mean_iou,
        final_loss: report.loss_history.last().copied().unwrap_or(f64::NAN),
    }
}

fn iou_cell(v: Option<f64>) -> String {
    v.map(format::exact).unwrap_or_default()
}

fn write_table(path: &Path, summary: &DemoSummary) -> CliResult<()> {
    let classes = summary.config.dataset.classes;
    let mut w = csv_writer(path)?;
    let fail = |e: csv::Error| CliError::output(path, csv_io(e));
    let mut header = vec!["seed".to_string(), "mode".to_string()];
    header.extend((0..classes).map(|c| format!("iou_class{c}")));
    header.push("mean_iou".to_string());
    w.write_record(&header).map_err(fail)?;
    for r in &summary.runs {
        let mut row = vec![r.seed.to_string(), r.mode.to_string()];
        row.extend(r.per_class_iou.iter().map(|v| iou_cell(*v)));
        row.push(format::exact(r.mean_iou));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

fn table(summary: &DemoSummary) -> String {
    let classes = summary.config.dataset.classes;
    let mut s = format!("{:>6} {:<20}", "seed", "mode");
    for c in 0..classes {
        s += &format!(" {:>12}", format!("iou_class{c}"));
    }
    s += &format!(" {:>12}\n", "mean_iou");
    for r in &summary.runs {
        s += &format!("{:>6} {:<20}", r.seed, r.mode.to_string());
        for v in &r.per_class_iou {
            s += &format!(" {:>12}", v.map(format::human).unwrap_or_else(|| "-".into()));
        }
        s += &format!(" {:>12}\n", format::human(r.mean_iou));
    }
    s
}
