//! Central finite-difference verification of the tape's analytic gradients.
//!
//! Every registered target builds a scalar loss from a [`ParamStore`] that
//! holds both its inputs and its parameters. The analytic gradient comes from
//! one backward pass; the numeric one perturbs each checked coordinate by
//! `±STEP`. Element-wise relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
//! Coordinates where the difference quotient is not a trustworthy oracle
//! (a piecewise branch switches, see [`Tape::branch_pattern`], or the
//! quotient has not converged) are skipped and counted.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::efaba;
use crate::error::{Result, TensorError};
use crate::gdal;
use crate::network::{self, NetworkConfig};
use crate::params::{ParamSpec, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{PadMode, Shape, Tensor};

/// Central-difference step.
pub const STEP: f64 = 1e-4;
/// Pass threshold for single operations and modules.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Pass threshold for the whole network.
pub const NETWORK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-3;

type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

struct Case {
    store: ParamStore,
    build: Build,
    /// `None` checks every coordinate; `Some(k)` checks `k` sampled
    /// coordinates of every tensor.
    per_tensor: Option<usize>,
    tolerance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub op: String,
    pub seed: u64,
    pub checked: usize,
    /// Coordinates left out because the difference quotient is unreliable.
    pub skipped: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} seed={:<3} checked={:<5} skipped={:<4} max_abs={:.3e} max_rel={:.3e} tol={:.0e} {}",
            self.op,
            self.seed,
            self.checked,
            self.skipped,
            self.max_abs_err,
            self.max_rel_err,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Names accepted by [`gradcheck`], single operations first.
pub const REGISTERED: &[&str] = &[
    "conv2d",
    "conv2d_stride2",
    "conv2d_replicate",
    "conv_transpose2d",
    "fully_connected",
    "add",
    "sub",
    "mul",
    "mul_broadcast_channel",
    "mul_broadcast_spatial",
    "add_scalar",
    "sigmoid",
    "relu",
    "channel_max",
    "global_avg_pool",
    "upsample_bilinear",
    "resize_bilinear_down",
    "softmax_lastdim",
    "bmm",
    "transpose",
    "reshape",
    "batchnorm",
    "concat",
    "sobel_magnitude",
    "bce",
    "edge_gate",
    "efaba_forward",
    "gdal_forward",
    "network",
];

/// Targets that are single tensor operations.
pub fn operation_names() -> impl Iterator<Item = &'static str> {
    REGISTERED
        .iter()
        .copied()
        .filter(|n| !matches!(*n, "edge_gate" | "efaba_forward" | "gdal_forward" | "network"))
}

/// Runs the finite-difference check for `op` with inputs drawn from `seed`.
pub fn gradcheck(op: &str, seed: u64) -> Result<GradcheckReport> {
    let case = build_case(op, seed)?;
    let t = run(&case, seed)?;
    Ok(GradcheckReport {
        op: op.to_string(),
        seed,
        checked: t.checked,
        skipped: t.skipped,
        max_abs_err: t.max_abs,
        max_rel_err: t.max_rel,
        tolerance: case.tolerance,
        pass: t.checked > 0 && t.max_rel < case.tolerance,
    })
}

/// Loss and branch pattern of one forward pass.
fn eval(case: &Case, store: &ParamStore) -> Result<(f64, Vec<u64>)> {
    let mut tape = Tape::new();
    let l = (case.build)(&mut tape, store)?;
    Ok((tape.value(l).item()?, tape.branch_pattern()))
}

struct Tally {
    checked: usize,
    skipped: usize,
    max_abs: f64,
    max_rel: f64,
}

/// A coordinate is skipped, and when sampling replaced by a fresh draw, if
/// its `±STEP` interval crosses a ReLU, max or clamp switch, or if the
/// difference quotient has not converged at `STEP` (it disagrees with the
/// one at `STEP / 2` by more than half the tolerance). Neither condition
/// involves the analytic gradient, so a wrong gradient is still caught.
fn run(case: &Case, seed: u64) -> Result<Tally> {
    let mut tape = Tape::new();
    let l = (case.build)(&mut tape, &case.store)?;
    let grads = tape.backward(l)?;
    let base_pattern = tape.branch_pattern();
    let mut analytic = case.store.clone();
    analytic.zero_grad();
    analytic.accumulate(&tape, &grads)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut probe = case.store.clone();
    let names: Vec<String> = case.store.names().map(str::to_string).collect();
    let mut tally = Tally {
        checked: 0,
        skipped: 0,
        max_abs: 0.0,
        max_rel: 0.0,
    };
    for name in &names {
        let numel = case.store.value(name).expect("listed").numel();
        let (mut candidates, wanted): (Box<dyn Iterator<Item = usize>>, usize) = match case.per_tensor {
            Some(k) if k < numel => {
                let draws = rand::seq::index::sample(&mut rng, numel, numel.min(8 * k));
                (Box::new(draws.into_iter()), k)
            }
            _ => (Box::new(0..numel), numel),
        };
        let grad = analytic.get(name).expect("listed").grad.clone();
        let mut accepted = 0;
        while accepted < wanted {
            let Some(j) = candidates.next() else { break };
            let orig = case.store.value(name).expect("listed").data()[j];
            let mut evaluate_at = |v: f64| {
                probe.get_mut(name).expect("listed").value.data_mut()[j] = v;
                eval(case, &probe)
            };
            let mut values = [0.0; 4];
            let mut smooth = true;
            for (slot, offset) in values.iter_mut().zip([STEP, -STEP, STEP / 2.0, -STEP / 2.0]) {
                let (loss, pattern) = evaluate_at(orig + offset)?;
                *slot = loss;
                smooth &= pattern == base_pattern;
            }
            probe.get_mut(name).expect("listed").value.data_mut()[j] = orig;
            let numeric = (values[0] - values[1]) / (2.0 * STEP);
            let half = (values[2] - values[3]) / STEP;
            // Richardson estimate of the O(h^2) truncation error at STEP.
            let truncation = (numeric - half).abs() * 4.0 / 3.0;
            let converged = truncation <= 0.5 * case.tolerance * numeric.abs().max(REL_FLOOR);
            if !smooth || !converged {
                tally.skipped += 1;
                continue;
            }
            accepted += 1;

            let a = grad.data()[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            tally.max_abs = tally.max_abs.max(abs);
            tally.max_rel = tally.max_rel.max(rel);
            tally.checked += 1;
        }
    }
    Ok(tally)
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn randn(&mut self, s: Shape) -> Tensor {
        Tensor::randn(s, 1.0, &mut self.rng)
    }

    /// Values bounded away from zero by at least 0.05.
    fn away_from_zero(&mut self, s: Shape) -> Tensor {
        let t = self.randn(s);
        t.map(|v| v.signum() * (0.05 + v.abs()))
    }

    /// Per-pixel channel values separated by at least 0.1.
    fn separated_channels(&mut self, s: Shape) -> Tensor {
        let mut t = Tensor::zeros(s);
        for n in 0..s.n {
            for h in 0..s.h {
                for w in 0..s.w {
                    let mut order: Vec<usize> = (0..s.c).collect();
                    for i in (1..order.len()).rev() {
                        order.swap(i, self.rng.random_range(0..=i));
                    }
                    let base: f64 = self.rng.random_range(-1.0..1.0);
                    for (c, &rank) in order.iter().enumerate() {
                        let jitter: f64 = self.rng.random_range(0.0..0.05);
                        t.set(n, c, h, w, base + 0.2 * rank as f64 + jitter);
                    }
                }
            }
        }
        t
    }

    fn small_shape(&mut self) -> Shape {
        Shape::new(self.dim(1, 2), self.dim(1, 4), self.dim(2, 6), self.dim(2, 6))
    }
}

fn store_of(items: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in items {
        s.insert(name, t);
    }
    s
}

fn p(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    tape.param(store, name)
}

/// Single-op case: loss is `sum(out * weights)` for random weights.
fn op_case(
    g: &mut Gen,
    inputs: Vec<(&str, Tensor)>,
    out_shape: Shape,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var> + 'static,
) -> Case {
    let weights = g.randn(out_shape);
    Case {
        store: store_of(inputs),
        build: Box::new(move |tape, store| {
            let y = f(tape, store)?;
            tape.dot(y, &weights)
        }),
        per_tensor: None,
        tolerance: OP_TOLERANCE,
    }
}

fn vector(g: &mut Gen, c: usize) -> Tensor {
    g.randn(Shape::new(1, c, 1, 1))
}

fn build_case(op: &str, seed: u64) -> Result<Case> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let s = g.small_shape();
    let case = match op {
        "conv2d" | "conv2d_stride2" | "conv2d_replicate" => {
            let co = g.dim(1, 4);
            let k = if op == "conv2d_replicate" { 5 } else { 3 };
            let stride = if op == "conv2d_stride2" { 2 } else { 1 };
            let pad = if op == "conv2d_replicate" {
                PadMode::Replicate
            } else {
                PadMode::Zero
            };
            let out = Shape::new(s.n, co, s.h.div_ceil(stride), s.w.div_ceil(stride));
            let inputs = vec![
                ("x", g.randn(s)),
                ("k", g.randn(Shape::new(co, s.c, k, k))),
                ("b", vector(&mut g, co)),
            ];
            op_case(&mut g, inputs, out, move |t, st| {
                let (x, k, b) = (p(t, st, "x")?, p(t, st, "k")?, p(t, st, "b")?);
                t.conv2d(x, k, b, stride, pad)
            })
        }
        "conv_transpose2d" => {
            let co = g.dim(1, 4);
            let out = Shape::new(s.n, co, 2 * s.h, 2 * s.w);
            let inputs = vec![
                ("x", g.randn(s)),
                ("k", g.randn(Shape::new(s.c, co, 2, 2))),
                ("b", vector(&mut g, co)),
            ];
            op_case(&mut g, inputs, out, |t, st| {
                let (x, k, b) = (p(t, st, "x")?, p(t, st, "k")?, p(t, st, "b")?);
                t.conv_transpose2d(x, k, b, 2)
            })
        }
        "fully_connected" => {
            let co = g.dim(1, 5);
            let xs = Shape::new(s.n, s.c, 1, 1);
            let inputs = vec![
                ("x", g.randn(xs)),
                ("w", g.randn(Shape::new(co, s.c, 1, 1))),
                ("b", vector(&mut g, co)),
            ];
            op_case(&mut g, inputs, Shape::new(s.n, co, 1, 1), |t, st| {
                let (x, w, b) = (p(t, st, "x")?, p(t, st, "w")?, p(t, st, "b")?);
                t.fully_connected(x, w, b)
            })
        }
        "add" | "sub" | "mul" | "mul_broadcast_channel" | "mul_broadcast_spatial" => {
            let bs = match op {
                "mul_broadcast_channel" => Shape::new(s.n, 1, s.h, s.w),
                "mul_broadcast_spatial" => Shape::new(s.n, s.c, 1, 1),
                _ => s,
            };
            let inputs = vec![("a", g.randn(s)), ("b", g.randn(bs))];
            let kind = op.to_string();
            op_case(&mut g, inputs, s, move |t, st| {
                let (a, b) = (p(t, st, "a")?, p(t, st, "b")?);
                match kind.as_str() {
                    "add" => t.add(a, b),
                    "sub" => t.sub(a, b),
                    _ => t.mul(a, b),
                }
            })
        }
        "add_scalar" => {
            let inputs = vec![("x", g.randn(s))];
            op_case(&mut g, inputs, s, |t, st| {
                let x = p(t, st, "x")?;
                Ok(t.add_scalar(x, 1.0))
            })
        }
        "sigmoid" => {
            let inputs = vec![("x", g.randn(s).map(|v| 2.0 * v))];
            op_case(&mut g, inputs, s, |t, st| {
                let x = p(t, st, "x")?;
                Ok(t.sigmoid(x))
            })
        }
        "relu" => {
            let inputs = vec![("x", g.away_from_zero(s))];
            op_case(&mut g, inputs, s, |t, st| {
                let x = p(t, st, "x")?;
                Ok(t.relu(x))
            })
        }
        "channel_max" => {
            let inputs = vec![("x", g.separated_channels(s))];
            op_case(&mut g, inputs, Shape::new(s.n, 1, s.h, s.w), |t, st| {
                let x = p(t, st, "x")?;
                t.channel_max(x)
            })
        }
        "global_avg_pool" => {
            let inputs = vec![("x", g.randn(s))];
            op_case(&mut g, inputs, Shape::new(s.n, s.c, 1, 1), |t, st| {
                let x = p(t, st, "x")?;
                t.global_avg_pool(x)
            })
        }
        "upsample_bilinear" => {
            let (oh, ow) = (s.h + g.dim(1, 5), s.w * 2);
            let inputs = vec![("x", g.randn(s))];
            op_case(&mut g, inputs, Shape::new(s.n, s.c, oh, ow), move |t, st| {
                let x = p(t, st, "x")?;
                t.upsample(x, oh, ow)
            })
        }
        "resize_bilinear_down" => {
            let xs = Shape::new(s.n, s.c, 6, 6);
            let (oh, ow) = (g.dim(1, 5), 3);
            let inputs = vec![("x", g.randn(xs))];
            op_case(&mut g, inputs, Shape::new(s.n, s.c, oh, ow), move |t, st| {
                let x = p(t, st, "x")?;
                t.resize(x, oh, ow)
            })
        }
        "softmax_lastdim" => {
            let ms = Shape::new(s.n, 1, s.c, s.h * s.w);
            let inputs = vec![("x", g.randn(ms))];
            op_case(&mut g, inputs, ms, |t, st| {
                let x = p(t, st, "x")?;
                t.softmax_lastdim(x)
            })
        }
        "bmm" => {
            let (r, k, c) = (g.dim(1, 5), g.dim(1, 5), g.dim(1, 5));
            let inputs = vec![
                ("a", g.randn(Shape::new(s.n, 1, r, k))),
                ("b", g.randn(Shape::new(s.n, 1, k, c))),
            ];
            op_case(&mut g, inputs, Shape::new(s.n, 1, r, c), |t, st| {
                let (a, b) = (p(t, st, "a")?, p(t, st, "b")?);
                t.bmm(a, b)
            })
        }
        "transpose" => {
            let inputs = vec![("x", g.randn(s))];
            op_case(&mut g, inputs, Shape::new(s.n, s.c, s.w, s.h), |t, st| {
                let x = p(t, st, "x")?;
                Ok(t.transpose(x))
            })
        }
        "reshape" => {
            let inputs = vec![("x", g.randn(s))];
            let out = Shape::new(s.n, 1, s.c, s.h * s.w);
            op_case(&mut g, inputs, out, |t, st| {
                let x = p(t, st, "x")?;
                t.flatten_spatial(x)
            })
        }
        "batchnorm" => {
            let inputs = vec![
                ("x", g.randn(s).map(|v| 1.5 * v + 0.3)),
                ("gamma", vector(&mut g, s.c)),
                ("beta", vector(&mut g, s.c)),
            ];
            op_case(&mut g, inputs, s, |t, st| {
                let (x, ga, be) = (p(t, st, "x")?, p(t, st, "gamma")?, p(t, st, "beta")?);
                t.batchnorm(x, ga, be)
            })
        }
        "concat" => {
            let c2 = g.dim(1, 3);
            let inputs = vec![
                ("a", g.randn(s)),
                ("b", g.randn(Shape::new(s.n, c2, s.h, s.w))),
            ];
            op_case(&mut g, inputs, Shape::new(s.n, s.c + c2, s.h, s.w), |t, st| {
                let (a, b) = (p(t, st, "a")?, p(t, st, "b")?);
                t.concat(&[a, b])
            })
        }
        "sobel_magnitude" => {
            let inputs = vec![("x", g.randn(s))];
            op_case(&mut g, inputs, s, |t, st| {
                let x = p(t, st, "x")?;
                Ok(t.sobel_magnitude(x))
            })
        }
        "bce" => {
            let probs = Tensor::uniform(s, 0.05, 0.95, &mut g.rng);
            let target = Tensor::uniform(s, 0.0, 1.0, &mut g.rng).map(|v| (v > 0.5) as u8 as f64);
            Case {
                store: store_of(vec![("p", probs)]),
                build: Box::new(move |t, st| {
                    let x = p(t, st, "p")?;
                    t.bce(x, &target)
                }),
                per_tensor: None,
                tolerance: OP_TOLERANCE,
            }
        }
        "edge_gate" => {
            let inputs = vec![("f", g.randn(s))];
            op_case(&mut g, inputs, s, |t, st| {
                let f = p(t, st, "f")?;
                efaba::edge_gate(t, f)
            })
        }
        "efaba_forward" => efaba_case(&mut g)?,
        "gdal_forward" => gdal_case(&mut g)?,
        "network" => network_case(&mut g)?,
        other => return Err(TensorError::UnknownOp(other.to_string())),
    };
    Ok(case)
}

fn with_inputs(specs: &[ParamSpec], g: &mut Gen, inputs: Vec<(&str, Tensor)>) -> ParamStore {
    let mut store = ParamStore::from_specs(specs, &mut g.rng);
    // Randomize the zero/one initialized biases and norms so every path is exercised.
    for (_, prm) in store.iter_mut() {
        let s = prm.value.shape();
        if s.n == 1 && s.h == 1 && s.w == 1 {
            let noise = Tensor::randn(s, 0.3, &mut g.rng);
            for (v, e) in prm.value.data_mut().iter_mut().zip(noise.data()) {
                *v += e;
            }
        }
    }
    for (name, t) in inputs {
        store.insert(name, t);
    }
    store
}

fn efaba_case(g: &mut Gen) -> Result<Case> {
    let channels = [4, 4, 8];
    let n = 2;
    let inputs: Vec<(&str, Tensor)> = vec![
        ("input.f1", g.randn(Shape::new(n, channels[0], 8, 8))),
        ("input.f2", g.randn(Shape::new(n, channels[1], 4, 4))),
        ("input.f3", g.randn(Shape::new(n, channels[2], 2, 2))),
    ];
    let mut weights: Vec<Tensor> = inputs.iter().map(|(_, t)| g.randn(t.shape())).collect();
    weights.push(g.randn(Shape::new(n, 1, 8, 8)));
    let store = with_inputs(&efaba::param_specs(channels), g, inputs);
    Ok(Case {
        store,
        build: Box::new(move |t, st| {
            let f = [
                p(t, st, "input.f1")?,
                p(t, st, "input.f2")?,
                p(t, st, "input.f3")?,
            ];
            let out = efaba::efaba_forward(t, st, f)?;
            let mut terms: Vec<Var> = Vec::new();
            for (i, &b) in out.balanced.iter().enumerate() {
                terms.push(t.dot(b, &weights[i])?);
            }
            terms.push(t.dot(out.edge_attention, &weights[3])?);
            sum_all(t, &terms)
        }),
        per_tensor: Some(4),
        tolerance: OP_TOLERANCE,
    })
}

fn gdal_case(g: &mut Gen) -> Result<Case> {
    let channels = [4, 4, 8, 8];
    let n = 2;
    let extents = [16, 8, 4, 2];
    let names = ["input.f1", "input.f2", "input.f3", "input.f4"];
    let inputs: Vec<(&str, Tensor)> = (0..4)
        .map(|i| {
            (
                names[i],
                g.randn(Shape::new(n, channels[i], extents[i], extents[i])),
            )
        })
        .collect();
    let weights: Vec<Tensor> = inputs.iter().take(3).map(|(_, t)| g.randn(t.shape())).collect();
    let store = with_inputs(&gdal::param_specs(channels), g, inputs);
    Ok(Case {
        store,
        build: Box::new(move |t, st| {
            let f = [
                p(t, st, names[0])?,
                p(t, st, names[1])?,
                p(t, st, names[2])?,
                p(t, st, names[3])?,
            ];
            let out = gdal::gdal_forward(t, st, f)?;
            let mut terms = Vec::new();
            for (i, &o) in out.iter().enumerate() {
                terms.push(t.dot(o, &weights[i])?);
            }
            sum_all(t, &terms)
        }),
        per_tensor: Some(3),
        tolerance: OP_TOLERANCE,
    })
}

/// Tiny configuration used by the whole-network check: channels
/// {8, 16, 40, 64}, 32x32 input, batch of two.
pub fn tiny_network_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_size: 32,
        channel_scale: 0.125,
        enable_efaba: true,
        enable_gdal: true,
        seed,
    }
}

fn network_case(g: &mut Gen) -> Result<Case> {
    let config = tiny_network_config(g.rng.random());
    let size = config.input_size;
    let specs = config.param_specs()?;
    let image = Tensor::uniform(Shape::new(2, 3, size, size), 0.0, 1.0, &mut g.rng);
    let mut rect = [0usize; 4];
    for r in rect.iter_mut() {
        *r = g.dim(4, size - 4);
    }
    let (y0, y1) = (rect[0].min(rect[1]), rect[0].max(rect[1]) + 1);
    let (x0, x1) = (rect[2].min(rect[3]), rect[2].max(rect[3]) + 1);
    let mask = Tensor::from_fn(Shape::new(2, 1, size, size), |n, _, y, x| {
        let (yy, xx) = if n == 0 { (y, x) } else { (x, y) };
        ((y0..y1).contains(&yy) && (x0..x1).contains(&xx)) as u8 as f64
    });
    let edge = network::make_gt_edge(&mask)?;
    let store = with_inputs(&specs, g, vec![("input.image", image)]);
    Ok(Case {
        store,
        build: Box::new(move |t, st| {
            let x = p(t, st, "input.image")?;
            let out = network::forward(t, &config, st, x)?;
            network::loss(t, &out, &mask, &edge)
        }),
        per_tensor: Some(1),
        tolerance: NETWORK_TOLERANCE,
    })
}

fn sum_all(t: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &v in &terms[1..] {
        acc = t.add(acc, v)?;
    }
    Ok(acc)
}
