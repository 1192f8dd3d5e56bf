use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use ddsl::data::io::{load_image, mask_to_gray, save_probability_png};
use ddsl::engine::{predict_maps, Checkpoint};
use ddsl::network::ModelRegistry;

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub out: PathBuf,
    pub prob: Option<PathBuf>,
    pub aux: Option<PathBuf>,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let model = ck.build_model(&ModelRegistry::standard())?;
    let image =
        load_image(&args.image, ck.network.side).with_context(|| format!("decoding {}", args.image.display()))?;
    let (main, aux) = predict_maps(model.as_ref(), &image, &ck.norm)?;
    mask_to_gray(&main)
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.prob {
        save_probability_png(&main, p).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.aux {
        let Some(aux) = aux else {
            bail!("model {} has no auxiliary map", ck.model);
        };
        save_probability_png(&aux, p).with_context(|| format!("writing {}", p.display()))?;
    }
    let fg = main.data().iter().filter(|&&v| v >= 0.5).count();
    println!(
        "{}: {}x{} mask, {fg} lesion pixels -> {}",
        args.image.display(),
        ck.network.side,
        ck.network.side,
        args.out.display()
    );
    Ok(())
}
