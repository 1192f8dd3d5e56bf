use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;

use ddsl::data::io::read_dataset;
use ddsl::data::Sample;
use ddsl::engine::{evaluate, Checkpoint};
use ddsl::network::{ModelRegistry, SegmentationModel};
use ddsl::objectives::{Metrics, ModelLabel, SampleScores, StrataReport};

use crate::config::{split, RunConfig};

pub const REPORT_CSV: &str = "strata.csv";
pub const REPORT_TXT: &str = "strata.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Held-out split of the run that produced the checkpoint.
    Test,
    /// Training split of that run.
    Train,
    /// Every sample in the dataset.
    All,
}

pub struct EvalArgs {
    pub checkpoints: Vec<PathBuf>,
    pub data: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub split: SplitArg,
    pub out: Option<PathBuf>,
}

struct Loaded {
    checkpoint: Checkpoint,
    model: Box<dyn SegmentationModel<f32>>,
}

/// Checkpoints ordered as `models` asks, or as given.
fn select(loaded: Vec<Loaded>, models: Option<&[String]>) -> Result<Vec<Loaded>> {
    let mut seen = Vec::new();
    for l in &loaded {
        if seen.contains(&l.checkpoint.model) {
            bail!("more than one checkpoint for model {}", l.checkpoint.model);
        }
        seen.push(l.checkpoint.model.clone());
    }
    let Some(models) = models else {
        return Ok(loaded);
    };
    let mut pool: Vec<Option<Loaded>> = loaded.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(models.len());
    for name in models {
        let slot = pool
            .iter_mut()
            .find(|l| l.as_ref().is_some_and(|l| &l.checkpoint.model == name))
            .with_context(|| format!("no checkpoint given for model {name}"))?;
        out.push(slot.take().expect("slot is filled"));
    }
    Ok(out)
}

fn samples_for(args: &EvalArgs, first: &Checkpoint) -> Result<Vec<Sample>> {
    let run = first
        .run
        .as_ref()
        .map(|v| serde_json::from_value::<RunConfig>(v.clone()))
        .transpose()
        .context("run config stored in checkpoint")?;
    let dir = match (&args.data, &run) {
        (Some(d), _) => d.clone(),
        (None, Some(r)) => r.data.dir.clone(),
        (None, None) => bail!("checkpoint has no run config; pass --data"),
    };
    let all = read_dataset(&dir, first.network.side).with_context(|| format!("loading {}", dir.display()))?;
    if args.split == SplitArg::All {
        return Ok(all);
    }
    let Some(run) = run else {
        bail!("checkpoint has no run config to reproduce its split; use --split all");
    };
    let (train, test) = split(&all, run.data.train_frac, run.seed)?;
    Ok(if args.split == SplitArg::Train { train } else { test })
}

pub fn run(args: &EvalArgs) -> Result<()> {
    if args.checkpoints.is_empty() {
        bail!("at least one --checkpoint is required");
    }
    let registry = ModelRegistry::<f32>::standard();
    let mut loaded = Vec::new();
    for p in &args.checkpoints {
        let checkpoint = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
        let model = checkpoint
            .build_model(&registry)
            .with_context(|| format!("restoring {}", p.display()))?;
        loaded.push(Loaded { checkpoint, model });
    }
    let loaded = select(loaded, args.models.as_deref())?;
    let side = loaded[0].checkpoint.network.side;
    if let Some(l) = loaded.iter().find(|l| l.checkpoint.network.side != side) {
        bail!(
            "model {} expects side {}, others {side}",
            l.checkpoint.model,
            l.checkpoint.network.side
        );
    }
    let samples = samples_for(args, &loaded[0].checkpoint)?;
    if samples.is_empty() {
        bail!("the selected split is empty");
    }

    let mut labels = Vec::new();
    let mut per_model: Vec<Vec<Metrics>> = Vec::new();
    for l in &loaded {
        let spec = l
            .checkpoint
            .run
            .as_ref()
            .and_then(|v| serde_json::from_value::<RunConfig>(v.clone()).ok())
            .map(|r| r.loss)
            .unwrap_or_default();
        let evals = evaluate(l.model.as_ref(), &samples, &l.checkpoint.norm, &spec)?;
        let scores: Vec<Metrics> = evals.iter().map(|e| e.metrics).collect();
        let label = registry.label(&l.checkpoint.model)?.to_string();
        if let Some(mean) = Metrics::mean(&scores) {
            println!(
                "overall {label}: dc {:.4} iou {:.4} precision {:.4} recall {:.4} n {}",
                mean.dc,
                mean.iou,
                mean.precision,
                mean.recall,
                scores.len()
            );
        }
        labels.push(ModelLabel {
            name: l.checkpoint.model.clone(),
            label,
        });
        per_model.push(scores);
    }
    let rows: Vec<SampleScores> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| SampleScores {
            id: s.id.clone(),
            meta: s.meta,
            scores: per_model.iter().map(|m| m[i]).collect(),
        })
        .collect();
    let report = StrataReport::build(&rows, &labels)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join(REPORT_CSV), report.to_csv()?)?;
        fs::write(out.join(REPORT_TXT), &text)?;
    }
    Ok(())
}
