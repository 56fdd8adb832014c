use sodkit_core::network::{self, NetworkConfig};
use sodkit_core::ops;
use sodkit_core::{ParamStore, Shape, Tensor, TensorError};

use crate::cli::ForwardArgs;
use crate::error::{exit, CliError, Result};
use crate::image_io::{load_image, save_image, Image};
use crate::weights::load_weights;

/// `(1, 3, h, w)` in [0, 1]; gray images fill all three channels.
pub fn image_tensor(img: &Image) -> Tensor {
    let ch = img.channels;
    Tensor::from_fn(Shape::new(1, 3, img.height, img.width), |_, c, y, x| {
        let k = if ch == 1 { 0 } else { c };
        img.data[(y * img.width + x) * ch + k] as f64 / 255.0
    })
}

/// 8-bit sample of a probability: clamp to [0, 1], scale by 255 and round
/// half away from zero.
pub fn quantize(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Checks weights against the configuration, naming the first offending tensor.
pub fn check_compatible(store: &ParamStore, config: &NetworkConfig) -> Result<()> {
    let specs = config.param_specs()?;
    store.validate(&specs).map_err(|e| {
        CliError::Mismatch(match e {
            TensorError::MissingParam(name) => format!("missing tensor `{name}`"),
            TensorError::ParamShape { name, expected, actual } => {
                format!("tensor `{name}` has shape {actual}, expected {expected}")
            }
            TensorError::Argument { detail, .. } => detail,
            other => other.to_string(),
        })
    })
}

/// Final map for one image at the image's own resolution.
pub fn predict_image(config: &NetworkConfig, store: &ParamStore, img: &Image) -> Result<Image> {
    let s = config.input_size;
    let x = ops::resize_bilinear(&image_tensor(img), s, s)?;
    let p = network::predict(config, store, &x)?;
    let p = ops::resize_bilinear(&p, img.height, img.width)?;
    let data = p.data().iter().map(|&v| quantize(v)).collect();
    Ok(Image::gray(img.width, img.height, data).expect("extent matches the input"))
}

pub fn run(args: &ForwardArgs) -> Result<i32> {
    let config = args.net.config(0)?;
    let store = load_weights(&args.weights).map_err(|source| CliError::Weights {
        path: args.weights.clone(),
        source,
    })?;
    check_compatible(&store, &config)?;
    let img = load_image(&args.input).map_err(|source| CliError::Image {
        path: args.input.clone(),
        source,
    })?;
    let out = predict_image(&config, &store, &img)?;
    save_image(&args.output, &out).map_err(|source| CliError::Image {
        path: args.output.clone(),
        source,
    })?;
    Ok(exit::OK)
}
