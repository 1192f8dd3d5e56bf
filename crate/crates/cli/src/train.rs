use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ddsl::data::{NormStats, Sample};
use ddsl::engine::{carve_validation, history_csv, train, Checkpoint, TrainSetup, TrainState};
use ddsl::network::ModelRegistry;
use ddsl::seed;

use crate::config::RunConfig;

pub const RESOLVED_CONFIG: &str = "config.json";
pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";
pub const HISTORY: &str = "history.csv";
pub const NORM: &str = "norm.json";

/// Training and validation samples for one run.
fn fit_sets(cfg: &RunConfig, train_split: Vec<Sample>) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if cfg.train.overfit {
        return Ok((train_split, Vec::new()));
    }
    Ok(carve_validation(&train_split, cfg.train.val_frac, cfg.seed)?)
}

pub fn run(config_path: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let registry = ModelRegistry::<f32>::standard();
    cfg.validate(&registry)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let resolved = cfg.to_json()?;
    fs::write(cfg.out_dir.join(RESOLVED_CONFIG), format!("{resolved}\n"))?;
    println!("resolved config:\n{resolved}");

    let (train_split, test_split) = cfg.load_split(&cfg.data.dir)?;
    let (fit, val) = fit_sets(&cfg, train_split)?;
    println!(
        "samples: fit {} validation {} test {}",
        fit.len(),
        if cfg.train.overfit { fit.len() } else { val.len() },
        test_split.len()
    );
    let norm = NormStats::compute(&fit)?;
    let run_json = serde_json::to_value(&cfg)?;

    let resumed = match resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let names: Vec<&String> = match &resumed {
        Some(ck) => {
            if !cfg.models.contains(&ck.model) {
                bail!("checkpoint holds model {} which the config does not train", ck.model);
            }
            if ck.network != cfg.network {
                bail!(
                    "checkpoint network {:?} differs from config network {:?}",
                    ck.network,
                    cfg.network
                );
            }
            cfg.models.iter().filter(|m| **m == ck.model).collect()
        }
        None => cfg.models.iter().collect(),
    };

    for name in names {
        let dir = cfg.out_dir.join(name);
        fs::create_dir_all(&dir)?;
        norm.save(&dir.join(NORM))?;
        let (mut model, mut state) = match &resumed {
            Some(ck) => {
                let model = ck.build_model(&registry)?;
                let state = ck.train_state(model.as_ref())?;
                (model, state)
            }
            None => {
                let model = registry.build(name, &cfg.network, seed::derive_str(cfg.seed, "init", name))?;
                let state = TrainState::fresh(model.as_ref(), &cfg.train);
                (model, state)
            }
        };
        let setup = TrainSetup {
            config: &cfg.train,
            loss: &cfg.loss,
            augment: &cfg.augment,
            norm: &norm,
            seed: cfg.seed,
        };
        let paths = OutputPaths::new(&dir);
        let outcome = train(model.as_mut(), &fit, &val, &setup, &mut state, &mut |r| {
            let rec = r.record;
            println!(
                "{name} epoch {:>3} train_loss {:.5} val_loss {:.5} val_dc {:.4} lr {:e}{}",
                rec.epoch,
                rec.train_loss,
                rec.val_loss,
                rec.val_dc,
                rec.lr,
                if r.improved { " *" } else { "" }
            );
            let ck = Checkpoint::capture(r.model, r.state, &norm, Some(run_json.clone()));
            ck.save(&paths.last)?;
            if r.improved {
                ck.save(&paths.best)?;
            }
            fs::write(&paths.history, history_csv(&r.state.history))?;
            Ok(())
        })?;
        println!(
            "{name}: stopped after {} epochs ({:?}), best epoch {}",
            outcome.history.len(),
            outcome.stop,
            outcome.best_epoch
        );
    }
    Ok(())
}

struct OutputPaths {
    best: PathBuf,
    last: PathBuf,
    history: PathBuf,
}

impl OutputPaths {
    fn new(dir: &Path) -> Self {
        OutputPaths {
            best: dir.join(BEST),
            last: dir.join(LAST),
            history: dir.join(HISTORY),
        }
    }
}
