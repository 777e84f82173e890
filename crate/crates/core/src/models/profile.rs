//! Analytic parameter and FLOP counts.
//!
//! One multiply-accumulate counts as one FLOP. Convolutions, linear layers
//! and the graph contraction are counted; BN, ReLU and pooling are not.

use serde::Serialize;

use super::{branch_widths, build_model, Model, ModelSpec, Variant};
use crate::engine::Real;
use crate::{Error, Result};

/// Element count of all trainable parameters.
pub fn count_params<F: Real>(model: &Model<F>) -> usize {
    model.params.trainable_count()
}

/// Multiply-accumulates for one forward pass on input `[N, M, C, T, V]`.
pub fn count_flops(spec: &ModelSpec, input: [usize; 5]) -> Result<u64> {
    spec.validate()?;
    let [n, m, c, t0, v] = input;
    if c != spec.in_channels || m != spec.persons || v != spec.num_joints()? {
        return Err(Error::Shape(format!(
            "input {input:?} does not match the model spec"
        )));
    }
    let k = spec.adjacency()?.num_partitions() as u64;
    let nm = (n * m) as u64;
    let v = v as u64;
    let mut t = t0 as u64;
    let mut total = 0u64;
    for (i, (&cout, &stride)) in spec
        .block_channels
        .iter()
        .zip(&spec.temporal_strides)
        .enumerate()
    {
        let cin = spec.block_input_channels(i) as u64;
        let co = cout as u64;
        let to = t.div_ceil(stride as u64);
        // spatial: per-partition pointwise map, then the V×V contraction
        total += nm * (cin * k * co * t * v + k * co * v * v * t);
        if spec.variant == Variant::Stgcnpp && spec.spatial_residual && cin != co {
            total += nm * cin * co * t * v;
        }
        match spec.variant {
            Variant::Stgcn => total += nm * co * co * spec.tcn_kernel as u64 * to * v,
            Variant::Stgcnpp => {
                let w = branch_widths(cout)?;
                total += nm * co * co * t * v;
                total += nm * w[2..].iter().map(|&b| (b * b * 3) as u64).sum::<u64>() * to * v;
                total += nm * co * co * to * v;
            }
        }
        if cin != co || stride != 1 {
            total += nm * cin * co * to * v;
        }
        t = to;
    }
    let width = *spec.block_channels.last().expect("validated") as u64;
    total += n as u64 * width * spec.num_classes as u64;
    Ok(total)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Profile {
    pub variant: Variant,
    pub params: usize,
    pub mparams: f64,
    pub flops: u64,
    pub gflops: f64,
    pub input: [usize; 5],
}

/// Parameters and FLOPs for a single sample of `frames` frames.
pub fn profile(spec: &ModelSpec, frames: usize) -> Result<Profile> {
    let model = build_model::<f32>(spec, 0)?;
    let params = count_params(&model);
    let input = [
        1,
        spec.persons,
        spec.in_channels,
        frames,
        spec.num_joints()?,
    ];
    let flops = count_flops(spec, input)?;
    Ok(Profile {
        variant: spec.variant,
        params,
        mparams: params as f64 / 1e6,
        flops,
        gflops: flops as f64 / 1e9,
        input,
    })
}
