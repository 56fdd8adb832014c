use std::path::Path;

use sodkit_core::ops;
use sodkit_core::train::{self, Sample};
use sodkit_core::{Shape, Tensor, TensorError};

use crate::cli::TrainArgs;
use crate::dataset::{self, IMAGE_EXTENSIONS, MAP_EXTENSIONS};
use crate::error::{exit, CliError, Result};
use crate::forward::image_tensor;
use crate::image_io::load_image;
use crate::weights::save_weights;

/// Binary `(1, 1, size, size)` mask from an 8-bit map: foreground at >= 128,
/// resampled bilinearly and re-binarized at 0.5 when the extent differs.
pub fn mask_tensor(img: &crate::image_io::Image, size: usize) -> Result<Tensor> {
    let t = Tensor::from_fn(Shape::new(1, 1, img.height, img.width), |_, _, y, x| {
        (img.data[y * img.width + x] >= 128) as u8 as f64
    });
    if (img.height, img.width) == (size, size) {
        return Ok(t);
    }
    Ok(ops::resize_bilinear(&t, size, size)?.map(|v| (v >= 0.5) as u8 as f64))
}

/// `images/` and `masks/` under `dir`, paired by stem. Every image needs a mask.
pub fn load_dataset(dir: &Path, size: usize) -> Result<Vec<Sample>> {
    let pairing = dataset::pair_dirs(&dir.join("images"), &dir.join("masks"), IMAGE_EXTENSIONS, MAP_EXTENSIONS, ("image", "mask"))?;
    if let Some((stem, problem)) = pairing.problems.first() {
        return Err(CliError::Dataset(format!("{stem}: {problem}")));
    }
    if pairing.pairs.is_empty() {
        return Err(CliError::NoPairs(format!("{} has no image/mask pairs", dir.display())));
    }
    pairing
        .pairs
        .iter()
        .map(|p| {
            let load = |path: &Path| {
                load_image(path).map_err(|source| CliError::Image {
                    path: path.to_path_buf(),
                    source,
                })
            };
            let img = load(&p.left)?;
            let mask = load(&p.right)?.require_gray().map_err(|source| CliError::Image {
                path: p.right.clone(),
                source,
            })?;
            if (img.width, img.height) != (mask.width, mask.height) {
                return Err(CliError::Dataset(format!(
                    "{}: image {}x{} but mask {}x{}",
                    p.stem, img.width, img.height, mask.width, mask.height
                )));
            }
            let x = ops::resize_bilinear(&image_tensor(&img), size, size)?;
            Ok(Sample::new(x, mask_tensor(&mask, size)?)?)
        })
        .collect()
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let config = args.net.config(args.seed)?;
    if args.batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    if args.lr.is_nan() || args.lr <= 0.0 {
        return Err(CliError::Usage(format!("--lr {} must be positive", args.lr)));
    }
    let samples = match (&args.data, args.synthetic) {
        (Some(dir), _) => load_dataset(dir, config.input_size)?,
        (None, Some(0)) => return Err(CliError::Usage("--synthetic needs at least one image".into())),
        (None, Some(n)) => train::synthetic_rectangles(n, config.input_size, args.seed)?,
        (None, None) => return Err(CliError::Usage("one of --data or --synthetic is required".into())),
    };
    let mut store = config.init_params()?;
    println!(
        "training {} ({} tensors, {} parameters) on {} images for {} steps",
        config.ablation().name(),
        store.len(),
        store.numel(),
        samples.len(),
        args.steps
    );
    train::train(&config, &mut store, &samples, args.steps, args.batch, args.lr, |step, loss| {
        println!("step {} loss {loss:.6}", step + 1)
    })
    .map_err(|e| match e {
        TensorError::NonFiniteLoss { step, value } => CliError::NonFiniteLoss { step: step + 1, value },
        other => other.into(),
    })?;
    let mae = train::training_mae(&config, &store, &samples, args.batch)?;
    println!("training mae {mae:.6}");
    save_weights(&store, &args.out).map_err(|source| CliError::Weights {
        path: args.out.clone(),
        source,
    })?;
    Ok(exit::OK)
}
