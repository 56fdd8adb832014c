//! Adam optimizer, the training step and the toy training loop.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::network::{self, NetworkConfig};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};

/// Default learning rate.
pub const DEFAULT_LR: f64 = 1e-4;
/// Default batch size at full scale.
pub const DEFAULT_BATCH: usize = 8;
/// Batch size used by the desk-scale configuration.
pub const TOY_BATCH: usize = 2;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradient buffers in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in store.iter_mut() {
            let n = p.value.numel();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One image with its mask and derived edge band, each a batch of one.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Tensor,
    pub edge: Tensor,
}

impl Sample {
    pub fn new(image: Tensor, mask: Tensor) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.n != 1 || is.c != 3 || ms != Shape::new(1, 1, is.h, is.w) {
            return Err(TensorError::shape(
                "sample",
                format!("image {is} and mask {ms} do not pair"),
            ));
        }
        let edge = network::make_gt_edge(&mask)?;
        Ok(Sample { image, mask, edge })
    }
}

/// Stacked images, masks and edges.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub masks: Tensor,
    pub edges: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let stack = |f: fn(&Sample) -> &Tensor| {
            Tensor::stack(&samples.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
        };
        Ok(Batch {
            images: stack(|s| &s.image)?,
            masks: stack(|s| &s.mask)?,
            edges: stack(|s| &s.edge)?,
        })
    }
}

/// Forward, backward and one Adam update. Returns the loss before the update.
pub fn train_step(
    config: &NetworkConfig,
    store: &mut ParamStore,
    adam: &mut Adam,
    batch: &Batch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.images.clone());
    let out = network::forward(&mut tape, config, store, x)?;
    let l = network::loss(&mut tape, &out, &batch.masks, &batch.edges)?;
    let value = tape.value(l).item()?;
    if !value.is_finite() {
        return Err(TensorError::NonFiniteLoss {
            step: adam.steps_taken() as usize,
            value,
        });
    }
    let grads = tape.backward(l)?;
    store.zero_grad();
    store.accumulate(&tape, &grads)?;
    adam.step(store);
    Ok(value)
}

/// Contiguous batches over `samples`, wrapping at the end.
pub fn batch_indices(len: usize, batch_size: usize, step: usize) -> Vec<usize> {
    let b = batch_size.clamp(1, len.max(1));
    let batches = len.div_ceil(b);
    let start = (step % batches) * b;
    (start..(start + b).min(len)).collect()
}

/// Trains for `steps` steps, cycling through fixed batches. `on_step`
/// receives `(step, loss)`.
pub fn train(
    config: &NetworkConfig,
    store: &mut ParamStore,
    samples: &[Sample],
    steps: usize,
    batch_size: usize,
    lr: f64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(TensorError::Empty("train"));
    }
    let mut adam = Adam::new(lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let idx = batch_indices(samples.len(), batch_size, step);
        let batch = Batch::from_samples(&idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>())?;
        let l = train_step(config, store, &mut adam, &batch).map_err(|e| match e {
            TensorError::NonFiniteLoss { value, .. } => TensorError::NonFiniteLoss { step, value },
            other => other,
        })?;
        on_step(step, l);
        losses.push(l);
    }
    Ok(losses)
}

/// Mean absolute error of `P_1` over `samples`, using the same batching as
/// training so batch statistics match.
pub fn training_mae(
    config: &NetworkConfig,
    store: &ParamStore,
    samples: &[Sample],
    batch_size: usize,
) -> Result<f64> {
    let b = batch_size.clamp(1, samples.len().max(1));
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(b) {
        let batch = Batch::from_samples(&chunk.iter().collect::<Vec<_>>())?;
        let p = network::predict(config, store, &batch.images)?;
        total += p
            .data()
            .iter()
            .zip(batch.masks.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        count += p.numel();
    }
    Ok(total / count as f64)
}

/// Synthetic salient-rectangle images: a smooth textured background with one
/// brightly coloured axis-aligned rectangle, and its binary mask.
pub fn synthetic_rectangles(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rh = rng.random_range(size / 4..=size / 2);
            let rw = rng.random_range(size / 4..=size / 2);
            let top = rng.random_range(0..=size - rh);
            let left = rng.random_range(0..=size - rw);
            let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..0.95));
            let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.3));
            let (fx, fy) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0));
            let inside = |y: usize, x: usize| (top..top + rh).contains(&y) && (left..left + rw).contains(&x);
            let image = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
                if inside(y, x) {
                    fg[c]
                } else {
                    let t = (fx * x as f64 / size as f64 + fy * y as f64 / size as f64 + c as f64)
                        * std::f64::consts::PI;
                    bg[c] + 0.08 * t.sin()
                }
            });
            let mask = Tensor::from_fn(Shape::new(1, 1, size, size), |_, _, y, x| {
                inside(y, x) as u8 as f64
            });
            Sample::new(image, mask)
        })
        .collect()
}
