use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{hex_sha256, mix_seed, Regime, TrainConfig};
use super::evaluate::{evaluate, EvalSummary, ImageRecord};
use super::train::{open_log, train, TrainOptions};
use crate::baseline_gd::{solve, GdConfig};
use crate::error::{invalid, Error, Result};
use crate::metrics::{align_global_phase, cosine_similarity_strict};
use crate::reconstructor::write_atomic;
use crate::sensing::{make_dataset, synthesize_phase_image, MeasurementBatch, RealImage, SensingOperator};

const STREAM_OPERATOR: u64 = 11;
const STREAM_SUBSET: u64 = 12;

/// A reconstruction method compared in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SsAmplitude,
    SsIntensity,
    Supervised,
    GradientDescent,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SsAmplitude, Method::SsIntensity, Method::Supervised, Method::GradientDescent];

    pub fn name(self) -> &'static str {
        match self {
            Method::SsAmplitude => "ss_amplitude",
            Method::SsIntensity => "ss_intensity",
            Method::Supervised => "supervised",
            Method::GradientDescent => "gradient_descent",
        }
    }

    pub fn regime(self) -> Option<Regime> {
        match self {
            Method::SsAmplitude => Some(Regime::SsAmplitude),
            Method::SsIntensity => Some(Regime::SsIntensity),
            Method::Supervised => Some(Regime::Supervised),
            Method::GradientDescent => None,
        }
    }
}

impl From<Regime> for Method {
    fn from(r: Regime) -> Self {
        match r {
            Regime::SsAmplitude => Method::SsAmplitude,
            Regime::SsIntensity => Method::SsIntensity,
            Regime::Supervised => Method::Supervised,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

/// Result of one (alpha, method) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: f64,
    pub method: Method,
    pub mean_cs: f64,
    pub std_cs: f64,
    pub count: usize,
    /// Set when the cell failed; the statistics are then zero.
    pub error: Option<String>,
    #[serde(default)]
    pub kept: Vec<ImageRecord>,
}

impl Cell {
    pub fn from_summary(alpha: f64, method: Method, s: EvalSummary) -> Self {
        Self { alpha, method, mean_cs: s.mean_cs, std_cs: s.std_cs, count: s.count, error: None, kept: s.kept }
    }

    pub fn failed(alpha: f64, method: Method, err: &Error) -> Self {
        Self { alpha, method, mean_cs: 0.0, std_cs: 0.0, count: 0, error: Some(err.to_string()), kept: Vec::new() }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<Cell>,
    /// Ground-truth images matching the kept reconstructions.
    #[serde(default)]
    pub truths: Vec<ImageRecord>,
}

impl EvalReport {
    pub fn cell(&self, alpha: f64, method: Method) -> Option<&Cell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.method == method)
    }

    /// Successful cells of `method`, sorted by alpha.
    pub fn per_alpha(&self, method: Method) -> Vec<&Cell> {
        let mut v: Vec<&Cell> = self.cells.iter().filter(|c| c.method == method && c.is_ok()).collect();
        v.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        v
    }

    pub fn alphas(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.cells.iter().map(|c| c.alpha).collect();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub base: TrainConfig,
    /// Training images to use; when unset, `base.dataset_fraction` of the corpus.
    pub train_count: Option<usize>,
    /// Leading test images to evaluate on; when unset, all of them.
    pub test_count: Option<usize>,
    /// Reconstructions kept per cell for grids.
    pub keep_images: usize,
    pub gd: GdConfig,
    /// Test images solved by gradient descent per alpha.
    pub gd_images: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: (1..=10).map(|k| k as f64 / 10.0).collect(),
            methods: vec![Method::SsAmplitude, Method::SsIntensity, Method::Supervised],
            base: TrainConfig::default(),
            train_count: None,
            test_count: None,
            keep_images: 8,
            gd: GdConfig::default(),
            gd_images: 8,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.methods.is_empty() {
            return Err(invalid("sweep needs at least one alpha and one method"));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(invalid("alphas must be positive"));
        }
        self.gd.validate()?;
        self.base.validate()
    }
}

/// Seed of the sensing operator used for every method at `alpha`.
pub fn operator_seed(base_seed: u64, alpha: f64) -> u64 {
    mix_seed(mix_seed(base_seed, STREAM_OPERATOR), (alpha * 1e6).round() as u64)
}

/// The seeded training subset: `count` images drawn without replacement, in
/// ascending index order.
pub fn training_subset(len: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > len {
        return Err(invalid(format!("cannot draw {count} training images from {len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, STREAM_SUBSET));
    let mut idx = sample(&mut rng, len, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

fn cell_key(alpha: f64, method: Method) -> String {
    format!("a{alpha}_{}", method.name())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RunState {
    config_digest: String,
    done: BTreeMap<String, bool>,
}

/// Trains and evaluates every (alpha, method) cell, persisting progress in
/// `run_dir` so an interrupted sweep resumes where it stopped.
pub fn sweep_alpha(
    cfg: &SweepConfig,
    train_images: &[RealImage<f32>],
    test_images: &[RealImage<f32>],
    run_dir: &Path,
) -> Result<EvalReport> {
    cfg.validate()?;
    let (h, w) = match test_images.first() {
        Some(img) => (img.height(), img.width()),
        None => return Err(invalid("test split is empty")),
    };
    let n = h * w;
    let train_count = cfg
        .train_count
        .unwrap_or_else(|| ((train_images.len() as f64) * cfg.base.dataset_fraction).round() as usize);
    let subset = training_subset(train_images.len(), train_count, cfg.base.seed)?;
    let train_set: Vec<RealImage<f32>> = subset.iter().map(|&i| train_images[i].clone()).collect();
    let test_set = &test_images[..cfg.test_count.unwrap_or(test_images.len()).min(test_images.len())];

    fs::create_dir_all(run_dir.join("cells"))?;
    let digest = hex_sha256(&serde_json::to_vec(cfg)?);
    let state_path = run_dir.join("state.json");
    let mut state: RunState = match fs::read(&state_path) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(_) => RunState::default(),
    };
    if state.config_digest != digest {
        if !state.done.is_empty() {
            log::warn!("sweep configuration changed; discarding previous run state");
        }
        state = RunState { config_digest: digest, done: BTreeMap::new() };
    }

    let mut report = EvalReport { cells: Vec::new(), truths: Vec::new() };
    for img in test_set.iter().take(cfg.keep_images) {
        let truth = synthesize_phase_image(img)?;
        report.truths.push(ImageRecord { index: report.truths.len(), cs: 1.0, image: truth });
    }

    for &alpha in &cfg.alphas {
        let pending: Vec<Method> = cfg
            .methods
            .iter()
            .copied()
            .filter(|m| !state.done.contains_key(&cell_key(alpha, *m)) || load_cell(run_dir, alpha, *m).is_none())
            .collect();
        let mut data: Option<(SensingOperator<f32>, MeasurementBatch<f32>, MeasurementBatch<f32>)> = None;
        for &method in &cfg.methods {
            if !pending.contains(&method) {
                report.cells.push(load_cell(run_dir, alpha, method).expect("checked above"));
                continue;
            }
            if data.is_none() {
                let base = TrainConfig { alpha, ..cfg.base.clone() };
                let m = base.measurements_for(n);
                let op = SensingOperator::<f32>::gaussian(m, h, w, operator_seed(cfg.base.seed, alpha))?;
                let train_batch = make_dataset(&train_set, &op, true)?;
                let test_batch = make_dataset(test_set, &op, true)?;
                data = Some((op, train_batch, test_batch));
            }
            let (op, train_batch, test_batch) = data.as_ref().expect("built above");
            log::info!("sweep cell alpha={alpha} method={}", method.name());
            let cell = match run_cell(cfg, alpha, method, op, train_batch, test_batch, run_dir) {
                Ok(summary) => Cell::from_summary(alpha, method, summary),
                Err(e) => {
                    log::error!("cell alpha={alpha} method={} failed: {e}", method.name());
                    Cell::failed(alpha, method, &e)
                }
            };
            write_atomic(&cell_path(run_dir, alpha, method), &serde_json::to_vec(&cell)?)?;
            state.done.insert(cell_key(alpha, method), cell.is_ok());
            write_atomic(&state_path, &serde_json::to_vec_pretty(&state)?)?;
            report.cells.push(cell);
        }
    }
    report.save(run_dir.join("report.json"))?;
    Ok(report)
}

fn cell_path(run_dir: &Path, alpha: f64, method: Method) -> std::path::PathBuf {
    run_dir.join("cells").join(format!("{}.json", cell_key(alpha, method)))
}

fn load_cell(run_dir: &Path, alpha: f64, method: Method) -> Option<Cell> {
    let bytes = fs::read(cell_path(run_dir, alpha, method)).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn run_cell(
    cfg: &SweepConfig,
    alpha: f64,
    method: Method,
    op: &SensingOperator<f32>,
    train_batch: &MeasurementBatch<f32>,
    test_batch: &MeasurementBatch<f32>,
    run_dir: &Path,
) -> Result<EvalSummary> {
    match method.regime() {
        Some(regime) => {
            let tcfg = TrainConfig { regime, alpha, ..cfg.base.clone() };
            let key = cell_key(alpha, method);
            let log_path = run_dir.join("logs").join(format!("{key}.jsonl"));
            // a resumed cell restarts from scratch
            let _ = fs::remove_file(&log_path);
            let mut log = std::io::BufWriter::new(open_log(&log_path)?);
            let outcome = train(&tcfg, train_batch, op, TrainOptions { log: Some(&mut log), checkpoint_dir: None })?;
            outcome.checkpoint(&tcfg).save(run_dir.join("checkpoints").join(format!("{key}.ckpt")))?;
            evaluate(&outcome.model, test_batch, op, cfg.keep_images)
        }
        None => gd_summary(&cfg.gd, test_batch, op, cfg.gd_images, cfg.keep_images),
    }
}

/// Solves the first `count` test images by gradient descent.
pub fn gd_summary(
    gd: &GdConfig,
    test: &MeasurementBatch<f32>,
    op: &SensingOperator<f32>,
    count: usize,
    keep: usize,
) -> Result<EvalSummary> {
    let truths = test.truths().ok_or_else(|| invalid("evaluation needs ground-truth images"))?;
    // the descent runs in double precision
    let op64 = SensingOperator::<f64>::from_matrix(
        op.matrix().iter().map(|c| num_complex::Complex::new(f64::from(c.re), f64::from(c.im))).collect(),
        op.m(),
        op.height(),
        op.width(),
    )?;
    let mut scores = Vec::new();
    let mut kept = Vec::new();
    for (index, (y, truth)) in test.measurements().iter().zip(truths).take(count.max(1)).enumerate() {
        let y64: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let sol = solve(&y64, &op64, &GdConfig { seed: mix_seed(gd.seed, index as u64), ..gd.clone() })?;
        let xh = sol.image.cast::<f32>();
        let cs = f64::from(cosine_similarity_strict(truth, &xh)?);
        if index < keep {
            let (aligned, _) = align_global_phase(truth, &xh)?;
            kept.push(ImageRecord { index, cs, image: aligned });
        }
        scores.push(cs);
    }
    EvalSummary::from_scores(scores, kept)
}
