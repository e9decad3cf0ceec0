mod args;

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Parser;
use eiphase::archive::{archive_path, DatasetArchive};
use eiphase::baseline_gd::GdConfig;
use eiphase::idx::read_idx_images;
use eiphase::training::{
    evaluate, export, gd_summary, open_log, sweep_alpha, train, training_subset, Cell, EvalReport, SweepConfig,
    TrainOptions,
};
use eiphase::{make_dataset, ModelCheckpoint, RealImage, SensingOperator};

use args::{BaselineArgs, BuildArgs, Cli, Command, DatasetCommand, EvalArgs, ExportArgs, SweepArgs, TrainArgs};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Dataset { action: DatasetCommand::Build(a) } => build(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Export(a) => run_export(a),
    }
}

fn read_images(path: &Path, limit: Option<usize>) -> Result<Vec<RealImage<f32>>> {
    let mut images = read_idx_images::<f32>(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(l) = limit {
        images.truncate(l);
    }
    Ok(images)
}

fn build(a: BuildArgs) -> Result<()> {
    let train_images = read_images(&a.train_images, a.limit)?;
    let (h, w) = (train_images[0].height(), train_images[0].width());
    let m = ((a.alpha * (h * w) as f64).round() as usize).max(1);
    let op = SensingOperator::<f32>::gaussian(m, h, w, a.seed)?;
    let mut splits = vec![("train".to_string(), make_dataset(&train_images, &op, true)?)];
    if let Some(path) = &a.test_images {
        splits.push(("test".to_string(), make_dataset(&read_images(path, a.limit)?, &op, true)?));
    }
    let archive = DatasetArchive { corpus: a.corpus, operator: op, splits };
    let path = archive.save_in(&a.out_dir)?;
    debug_assert_eq!(path, archive_path(&a.out_dir, &archive.corpus, m, h * w, a.seed));
    println!("{}", path.display());
    Ok(())
}

fn load_split(path: &Path, split: &str) -> Result<(SensingOperator<f32>, eiphase::MeasurementBatch<f32>)> {
    let archive = DatasetArchive::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
    let batch = archive.split(split).with_context(|| format!("archive has no '{split}' split"))?.clone();
    Ok((archive.operator, batch))
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (op, data) = load_split(&a.dataset, &a.split)?;
    if (op.alpha() - cfg.alpha).abs() > 0.5 / op.n() as f64 {
        log::warn!("dataset alpha {:.4} differs from configured alpha {}; using the dataset", op.alpha(), cfg.alpha);
    }
    let count = ((data.len() as f64 * cfg.dataset_fraction).round() as usize).max(1);
    let data = data.select(&training_subset(data.len(), count, cfg.seed)?);
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("config.toml"), cfg.to_toml_string())?;
    let mut log = BufWriter::new(open_log(&a.out_dir.join("log.jsonl"))?);
    let opts = TrainOptions { log: Some(&mut log), checkpoint_dir: Some(a.out_dir.join("checkpoints")) };
    let outcome = train(&cfg, &data, &op, opts)?;
    let path = a.out_dir.join("model.ckpt");
    outcome.checkpoint(&cfg).save(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn extend_report(path: &Path, cell: Cell, truths: Vec<eiphase::training::ImageRecord>) -> Result<()> {
    let mut report = if path.exists() { EvalReport::load(path)? } else { EvalReport::default() };
    report.cells.retain(|c| !(c.alpha == cell.alpha && c.method == cell.method));
    println!("alpha={} method={} mean_cs={:.4} std_cs={:.4} n={}", cell.alpha, cell.method.name(), cell.mean_cs, cell.std_cs, cell.count);
    report.cells.push(cell);
    if report.truths.is_empty() {
        report.truths = truths;
    }
    report.save(path)?;
    Ok(())
}

fn truth_records(batch: &eiphase::MeasurementBatch<f32>, keep: usize) -> Vec<eiphase::training::ImageRecord> {
    batch
        .truths()
        .unwrap_or_default()
        .iter()
        .take(keep)
        .enumerate()
        .map(|(index, t)| eiphase::training::ImageRecord { index, cs: 1.0, image: t.clone() })
        .collect()
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let (op, test) = load_split(&a.dataset, &a.split)?;
    let model = ModelCheckpoint::<f32>::load(&a.checkpoint)?.model()?;
    let summary = evaluate(&model, &test, &op, a.keep)?;
    extend_report(&a.report, Cell::from_summary(op.alpha(), a.method, summary), truth_records(&test, a.keep))
}

fn run_baseline(a: BaselineArgs) -> Result<()> {
    let (op, test) = load_split(&a.dataset, &a.split)?;
    let d = GdConfig::default();
    let gd = GdConfig {
        steps: a.steps.unwrap_or(d.steps),
        step_size: a.step_size.unwrap_or(d.step_size),
        restarts: a.restarts.unwrap_or(d.restarts),
        seed: a.seed.unwrap_or(d.seed),
        objective: a.objective.unwrap_or(d.objective),
        init: d.init,
    };
    let summary = gd_summary(&gd, &test, &op, a.count, a.keep)?;
    let cell = Cell::from_summary(op.alpha(), eiphase::training::Method::GradientDescent, summary);
    extend_report(&a.report, cell, truth_records(&test, a.keep))
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let base = a.cfg.resolve()?;
    if a.alphas.is_empty() || a.methods.is_empty() {
        bail!("--alphas and --methods must be nonempty");
    }
    let cfg = SweepConfig {
        alphas: a.alphas,
        methods: a.methods,
        base,
        train_count: a.train_count,
        test_count: a.test_count,
        keep_images: a.keep_images,
        gd: GdConfig { seed: a.cfg.seed.unwrap_or_default(), ..GdConfig::default() },
        gd_images: a.gd_images,
    };
    let train_images = read_images(&a.train_images, None)?;
    let test_images = read_images(&a.test_images, None)?;
    let report = sweep_alpha(&cfg, &train_images, &test_images, &a.run_dir)?;
    for c in &report.cells {
        match &c.error {
            None => println!("alpha={} method={} mean_cs={:.4} std_cs={:.4} n={}", c.alpha, c.method.name(), c.mean_cs, c.std_cs, c.count),
            Some(e) => println!("alpha={} method={} FAILED: {e}", c.alpha, c.method.name()),
        }
    }
    if let Some(out) = &a.out_dir {
        for p in export(&report, out)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let report = EvalReport::load(&a.report)?;
    for p in export(&report, &a.out_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
