use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::{align_global_phase, cosine_similarity_strict};
use crate::reconstructor::Reconstructor;
use crate::scalar::Scalar;
use crate::sensing::{ComplexImage, MeasurementBatch, SensingOperator};

const EVAL_CHUNK: usize = 25;

/// A kept reconstruction, aligned to its truth's global phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub cs: f64,
    pub image: ComplexImage<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_cs: f64,
    /// Population standard deviation over images.
    pub std_cs: f64,
    pub count: usize,
    pub scores: Vec<f64>,
    pub kept: Vec<ImageRecord>,
}

impl EvalSummary {
    pub fn from_scores(scores: Vec<f64>, kept: Vec<ImageRecord>) -> Result<Self> {
        if scores.is_empty() {
            return Err(invalid("no images were evaluated"));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        Ok(Self { mean_cs: mean, std_cs: var.sqrt(), count: scores.len(), scores, kept })
    }
}

/// Scores every test image; a zero-norm truth or reconstruction is an error.
/// The first `keep` reconstructions are phase-aligned and returned.
pub fn evaluate<T, R>(f: &R, test: &MeasurementBatch<T>, op: &SensingOperator<T>, keep: usize) -> Result<EvalSummary>
where
    T: Scalar,
    R: Reconstructor<T> + ?Sized,
{
    let truths = test.truths().ok_or_else(|| invalid("evaluation needs ground-truth images"))?;
    if test.is_empty() {
        return Err(invalid("test split is empty"));
    }
    let mut scores = Vec::with_capacity(test.len());
    let mut kept = Vec::new();
    let ys: Vec<&[T]> = test.measurements().iter().map(Vec::as_slice).collect();
    for (c, chunk) in ys.chunks(EVAL_CHUNK).enumerate() {
        let (xs, _) = f.forward_batch(chunk, op)?;
        for (j, xh) in xs.into_iter().enumerate() {
            let index = c * EVAL_CHUNK + j;
            let truth = &truths[index];
            let cs = cosine_similarity_strict(truth, &xh)?.to_f64_lossy();
            if index < keep {
                let (aligned, _) = align_global_phase(truth, &xh)?;
                kept.push(ImageRecord { index, cs, image: aligned.cast() });
            }
            scores.push(cs);
        }
    }
    EvalSummary::from_scores(scores, kept)
}
