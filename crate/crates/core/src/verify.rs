//! Finite-difference verification of every engine op and of a tiny
//! end-to-end network.
//!
//! Op checks use the loss `sum(Y ⊙ R)` with a fixed random `R`, so every
//! output element carries a distinct weight. The network check runs at a
//! jittered parameter point: at initialization the batch-norm shifts are
//! zero and several paths are exactly scale invariant, which leaves true
//! gradients at zero and makes relative errors meaningless.

use serde::Serialize;

use crate::engine::{
    grad_check, grad_check_params, BatchNormMode, GradCheckReport, Tape, Tensor, Var,
};
use crate::models::{build_model, ModelSpec, Variant};
use crate::rng::Rng;
use crate::Result;

pub const OP_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seeds: u64,
    /// Probed elements per parameter tensor in the network check.
    pub per_param: usize,
    pub include_network: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            per_param: 2,
            include_network: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Tensor::from_f64(shape, &data).expect("shape matches data")
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = normal(rng, shape);
    t.data_mut().iter_mut().for_each(|x| *x = 0.5 + x.abs());
    t
}

/// `sum(y ⊙ r)` with `r` drawn from `seed`.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = normal(&mut Rng::new(seed), tape.shape(y));
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

type OpFn = fn(&mut Tape<f64>, &[Var], u64) -> Result<Var>;

struct OpCase {
    name: &'static str,
    inputs: fn(&mut Rng) -> Vec<Tensor<f64>>,
    forward: OpFn,
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "add",
            inputs: |r| vec![normal(r, &[2, 3, 4]), normal(r, &[2, 3, 4])],
            forward: |t, v, s| {
                let y = t.add(v[0], v[1])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "mul",
            inputs: |r| vec![normal(r, &[2, 3, 4]), normal(r, &[2, 3, 4])],
            forward: |t, v, s| {
                let y = t.mul(v[0], v[1])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "scale",
            inputs: |r| vec![normal(r, &[3, 5])],
            forward: |t, v, s| {
                let y = t.scale(v[0], -1.7);
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "sum",
            inputs: |r| vec![normal(r, &[4, 3])],
            forward: |t, v, _| {
                let y = t.sum(v[0]);
                Ok(t.scale(y, 0.3))
            },
        },
        OpCase {
            name: "reshape",
            inputs: |r| vec![normal(r, &[2, 3, 4])],
            forward: |t, v, s| {
                let y = t.reshape(v[0], &[6, 4])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "permute",
            inputs: |r| vec![normal(r, &[2, 3, 4, 5])],
            forward: |t, v, s| {
                let y = t.permute(v[0], &[0, 3, 1, 2])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "relu",
            inputs: |r| vec![normal(r, &[3, 4, 5])],
            forward: |t, v, s| {
                let y = t.relu(v[0]);
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "pointwise_conv",
            inputs: |r| {
                vec![
                    normal(r, &[2, 3, 4, 5]),
                    normal(r, &[4, 3]),
                    normal(r, &[4]),
                ]
            },
            forward: |t, v, s| {
                let y = t.pointwise_conv(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "linear",
            inputs: |r| vec![normal(r, &[3, 5]), normal(r, &[4, 5]), normal(r, &[4])],
            forward: |t, v, s| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "graph_aggregate",
            inputs: |r| vec![normal(r, &[2, 3, 2, 4, 5]), normal(r, &[3, 5, 5])],
            forward: |t, v, s| {
                let y = t.graph_aggregate(v[0], v[1])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "graph_conv",
            inputs: |r| {
                vec![
                    normal(r, &[2, 3, 4, 5]),
                    normal(r, &[3, 5, 5]),
                    normal(r, &[3, 2, 3]),
                    normal(r, &[3, 2]),
                ]
            },
            forward: |t, v, s| {
                let y = t.graph_conv(v[0], v[1], v[2], Some(v[3]))?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "temporal_conv",
            inputs: |r| {
                vec![
                    normal(r, &[2, 3, 9, 4]),
                    normal(r, &[2, 3, 3]),
                    normal(r, &[2]),
                ]
            },
            forward: |t, v, s| {
                let y = t.temporal_conv(v[0], v[1], Some(v[2]), 2, 2, 2)?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "temporal_max_pool",
            inputs: |r| vec![normal(r, &[2, 3, 9, 4])],
            forward: |t, v, s| {
                let y = t.temporal_max_pool(v[0], 3, 2, 1)?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "temporal_subsample",
            inputs: |r| vec![normal(r, &[2, 3, 7, 4])],
            forward: |t, v, s| {
                let y = t.temporal_subsample(v[0], 2)?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "batch_norm_train",
            inputs: |r| vec![normal(r, &[4, 3, 5, 2]), normal(r, &[3]), normal(r, &[3])],
            forward: |t, v, s| {
                let y = t.batch_norm(v[0], v[1], v[2], None, BatchNormMode::Train)?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "batch_norm_eval",
            inputs: |r| vec![normal(r, &[4, 3, 5, 2]), normal(r, &[3]), normal(r, &[3])],
            forward: |t, v, s| {
                // running statistics are buffers, not differentiable inputs
                let mut stats = Rng::new(s ^ 0x5354_4154);
                let mut mean = normal(&mut stats, &[3]);
                let mut var = positive(&mut stats, &[3]);
                let y = t.batch_norm(
                    v[0],
                    v[1],
                    v[2],
                    Some((&mut mean, &mut var)),
                    BatchNormMode::Eval,
                )?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "concat_channels",
            inputs: |r| vec![normal(r, &[2, 2, 3, 4]), normal(r, &[2, 3, 3, 4])],
            forward: |t, v, s| {
                let y = t.concat_channels(&[v[0], v[1]])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "slice_channels",
            inputs: |r| vec![normal(r, &[2, 5, 3, 4])],
            forward: |t, v, s| {
                let y = t.slice_channels(v[0], 1, 3)?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "global_avg_pool",
            inputs: |r| vec![normal(r, &[2, 3, 4, 5])],
            forward: |t, v, s| {
                let y = t.global_avg_pool(v[0])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "mean_dim1",
            inputs: |r| vec![normal(r, &[2, 3, 4])],
            forward: |t, v, s| {
                let y = t.mean_dim1(v[0])?;
                weighted_sum(t, y, s)
            },
        },
        OpCase {
            name: "softmax_cross_entropy",
            inputs: |r| vec![normal(r, &[4, 5])],
            forward: |t, v, _| Ok(t.softmax_cross_entropy(v[0], &[0, 3, 4, 1])?.0),
        },
    ]
}

fn merge(name: &str, seeds: u64, tolerance: f64, reports: &[GradCheckReport]) -> CheckResult {
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let checked = reports.iter().map(|r| r.checked).sum();
    CheckResult {
        name: name.to_string(),
        seeds,
        max_rel_error,
        tolerance,
        checked,
        skipped: reports.iter().map(|r| r.skipped).sum(),
        passed: checked > 0 && max_rel_error < tolerance,
    }
}

/// Checks one engine op by name over `seeds` random draws.
pub fn check_op(name: &str, seeds: u64) -> Result<Option<CheckResult>> {
    let Some(case) = op_cases().into_iter().find(|c| c.name == name) else {
        return Ok(None);
    };
    let mut reports = Vec::new();
    for seed in 0..seeds {
        let inputs = (case.inputs)(&mut Rng::new(seed));
        let fwd = case.forward;
        let r_seed = seed.wrapping_add(1_000);
        reports.push(grad_check(|t, v| fwd(t, v, r_seed), &inputs, EPS)?);
    }
    Ok(Some(merge(case.name, seeds, OP_TOLERANCE, &reports)))
}

pub fn op_names() -> Vec<&'static str> {
    op_cases().iter().map(|c| c.name).collect()
}

/// Cross-entropy gradient of a 4-block ST-GCN++ on a 2D 17-joint input,
/// checked at a jittered parameter point.
pub fn check_network(seed: u64, per_param: usize) -> Result<GradCheckReport> {
    let spec = ModelSpec::tiny(Variant::Stgcnpp, "coco17", 2, 1, 4);
    let mut model = build_model::<f64>(&spec, seed)?;
    let mut jitter = Rng::new(seed ^ 0x4a49_5454);
    for id in model.params.ids() {
        let p = model.params.get_mut(id);
        if p.trainable {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|x| *x += 0.1 * jitter.normal());
        }
    }
    let x = normal(&mut Rng::new(seed.wrapping_add(100)), &[2, 1, 2, 8, 17]);
    let labels = [0usize, 3];
    let net = &model.network;
    grad_check_params(
        |tape, store| {
            let xv = tape.constant(x.clone());
            let y = net.forward(store, tape, xv, BatchNormMode::Train)?;
            Ok(tape.softmax_cross_entropy(y, &labels)?.0)
        },
        &model.params,
        EPS,
        Some(per_param),
        seed,
    )
}

/// Runs every op check and, optionally, the network check.
pub fn run_suite(opts: SuiteOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for name in op_names() {
        let r = check_op(name, opts.seeds)?.expect("listed op");
        log::info!("{}: max rel error {:.3e}", r.name, r.max_rel_error);
        out.push(r);
    }
    if opts.include_network {
        let reports = (0..opts.seeds)
            .map(|s| check_network(s, opts.per_param))
            .collect::<Result<Vec<_>>>()?;
        out.push(merge(
            "tiny_stgcnpp",
            opts.seeds,
            NETWORK_TOLERANCE,
            &reports,
        ));
    }
    Ok(out)
}
