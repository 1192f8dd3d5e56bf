use rayon::prelude::*;

use crate::data::{NormStats, Sample};
use crate::diffarray::{Array4, Mode, Tape};
use crate::error::Result;
use crate::network::SegmentationModel;
use crate::objectives::{dual_loss, DualLossSpec, Metrics};

/// Eval-mode result for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleEval {
    pub loss: f64,
    pub metrics: Metrics,
}

/// Probability maps for one image, `(main, aux)`.
pub fn predict_maps(
    model: &dyn SegmentationModel<f32>,
    image: &Array4<f32>,
    norm: &NormStats,
) -> Result<(Array4<f32>, Option<Array4<f32>>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(norm.normalize(image));
    let out = model.forward(&mut tape, x, Mode::Eval)?;
    Ok((tape.value(out.main).clone(), out.aux.map(|a| tape.value(a).clone())))
}

fn evaluate_one(
    model: &dyn SegmentationModel<f32>,
    s: &Sample,
    norm: &NormStats,
    spec: &DualLossSpec,
) -> Result<SampleEval> {
    let mut tape = Tape::new();
    let x = tape.leaf(norm.normalize(&s.image));
    let out = model.forward(&mut tape, x, Mode::Eval)?;
    let loss = dual_loss(&mut tape, &out, &s.mask, spec)?;
    Ok(SampleEval {
        loss: tape.value(loss.total).item() as f64,
        metrics: Metrics::of(tape.value(out.main).data(), s.mask.data())?,
    })
}

/// Per-sample loss and metrics in input order. Samples are processed in
/// parallel; each result depends only on its own sample.
pub fn evaluate(
    model: &dyn SegmentationModel<f32>,
    samples: &[Sample],
    norm: &NormStats,
    spec: &DualLossSpec,
) -> Result<Vec<SampleEval>> {
    samples.par_iter().map(|s| evaluate_one(model, s, norm, spec)).collect()
}

/// Mean loss and mean Dice, reduced in index order.
pub fn summarize(evals: &[SampleEval]) -> (f64, f64) {
    let n = evals.len().max(1) as f64;
    let loss = evals.iter().map(|e| e.loss).sum::<f64>() / n;
    let dc = evals.iter().map(|e| e.metrics.dc).sum::<f64>() / n;
    (loss, dc)
}
