//! Building blocks: batch norm, spatial graph modules and temporal modules.

use crate::engine::{BatchNormMode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::rng::Rng;
use crate::{Error, Result};

use super::{ModelSpec, Variant};

/// He-uniform draw with bound `sqrt(6 / fan_in)`, sampled in double precision.
pub(crate) fn he_uniform<F: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::from_f64(shape, &data).expect("shape matches draw count")
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

impl BatchNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(
                &format!("{prefix}.weight"),
                Tensor::full(&[channels], F::one()),
                true,
            ),
            beta: store.add(&format!("{prefix}.bias"), Tensor::zeros(&[channels]), true),
            mean: store.add(
                &format!("{prefix}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            var: store.add(
                &format!("{prefix}.running_var"),
                Tensor::full(&[channels], F::one()),
                false,
            ),
        }
    }

    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let running = store.values_mut2(self.mean, self.var);
        tape.batch_norm(x, g, b, Some(running), mode)
    }
}

/// Strided pointwise projection followed by batch norm.
#[derive(Debug, Clone)]
pub struct Projection {
    weight: ParamId,
    bn: BatchNorm,
    stride: usize,
}

impl Projection {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        prefix: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        Self {
            weight: store.add(
                &format!("{prefix}.conv.weight"),
                he_uniform(&[cout, cin], cin, rng),
                true,
            ),
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), cout),
            stride,
        }
    }

    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let x = if self.stride > 1 {
            tape.temporal_subsample(x, self.stride)?
        } else {
            x
        };
        let w = tape.param(store, self.weight);
        let y = tape.pointwise_conv(x, w, None)?;
        self.bn.forward(store, tape, y, mode)
    }
}

#[derive(Debug, Clone)]
enum Coefficients {
    /// Fixed normalized partitions re-weighted by a learnable mask.
    Masked { base: Vec<f64>, mask: ParamId },
    /// Free coefficient matrices initialized from the partitions.
    Free(ParamId),
}

#[derive(Debug, Clone)]
enum Shortcut {
    Identity,
    Project(Projection),
}

/// Spatial graph convolution with per-partition weights.
#[derive(Debug, Clone)]
pub struct SpatialModule {
    coefficients: Coefficients,
    weight: ParamId,
    bias: ParamId,
    bn: BatchNorm,
    residual: Option<Shortcut>,
    partitions: usize,
    joints: usize,
}

impl SpatialModule {
    /// Current coefficient matrices `[K, V, V]` (mask applied).
    pub fn coefficients<F: Real>(&self, store: &ParamStore<F>) -> Tensor<F> {
        let shape = [self.partitions, self.joints, self.joints];
        match &self.coefficients {
            Coefficients::Masked { base, mask } => {
                let m = store.get(*mask).value.data();
                let data = base.iter().zip(m).map(|(&a, &w)| F::of(a) * w).collect();
                Tensor::new(&shape, data).expect("coefficient shape")
            }
            Coefficients::Free(id) => store.get(*id).value.clone(),
        }
    }

    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let a = match &self.coefficients {
            Coefficients::Masked { base, mask } => {
                let shape = [self.partitions, self.joints, self.joints];
                let base = tape.constant(Tensor::from_f64(&shape, base)?);
                let mask = tape.param(store, *mask);
                tape.mul(base, mask)?
            }
            Coefficients::Free(id) => tape.param(store, *id),
        };
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.graph_conv(x, a, w, Some(b))?;
        let y = self.bn.forward(store, tape, y, mode)?;
        match &self.residual {
            None => Ok(y),
            Some(Shortcut::Identity) => tape.add(y, x),
            Some(Shortcut::Project(p)) => {
                let r = p.forward(store, tape, x, mode)?;
                tape.add(y, r)
            }
        }
    }
}

/// Spatial module of block `block`: graph convolution followed by BN.
/// ST-GCN re-weights the fixed partitions with a mask; ST-GCN++ learns the
/// coefficients directly and adds a residual link after the BN.
pub fn build_spatial_module<F: Real>(
    spec: &ModelSpec,
    block: usize,
    store: &mut ParamStore<F>,
    rng: &mut Rng,
) -> Result<SpatialModule> {
    let adjacency = spec.adjacency()?;
    let (k, v) = (adjacency.num_partitions(), adjacency.num_joints);
    let cin = spec.block_input_channels(block);
    let cout = spec.block_channels[block];
    let prefix = format!("blocks.{block:02}.gcn");
    let base = adjacency.to_flat();
    let coefficients = match spec.variant {
        Variant::Stgcn => Coefficients::Masked {
            base,
            mask: store.add(
                &format!("{prefix}.mask"),
                Tensor::full(&[k, v, v], F::one()),
                true,
            ),
        },
        Variant::Stgcnpp => Coefficients::Free(store.add(
            &format!("{prefix}.A"),
            Tensor::from_f64(&[k, v, v], &base)?,
            true,
        )),
    };
    let weight = store.add(
        &format!("{prefix}.conv.weight"),
        he_uniform(&[k, cout, cin], cin, rng),
        true,
    );
    let bias = store.add(
        &format!("{prefix}.conv.bias"),
        Tensor::zeros(&[k, cout]),
        true,
    );
    let bn = BatchNorm::new(store, &format!("{prefix}.bn"), cout);
    let residual = match (spec.variant, spec.spatial_residual) {
        (Variant::Stgcnpp, true) if cin == cout => Some(Shortcut::Identity),
        (Variant::Stgcnpp, true) => Some(Shortcut::Project(Projection::new(
            store,
            rng,
            &format!("{prefix}.residual"),
            cin,
            cout,
            1,
        ))),
        _ => None,
    };
    Ok(SpatialModule {
        coefficients,
        weight,
        bias,
        bn,
        residual,
        partitions: k,
        joints: v,
    })
}

/// Channel widths of the six branches: `mid = C / 6` each, the pointwise
/// branch takes the remainder `C − 5·mid`.
pub fn branch_widths(channels: usize) -> Result<[usize; 6]> {
    let mid = channels / 6;
    if mid == 0 {
        return Err(Error::Spec(format!(
            "multi-branch temporal module needs at least 6 channels, got {channels}"
        )));
    }
    Ok([channels - 5 * mid, mid, mid, mid, mid, mid])
}

#[derive(Debug, Clone)]
struct Branch {
    bn: BatchNorm,
    conv: Option<(ParamId, usize)>,
}

/// Multi-branch temporal module: shared pointwise conv, six channel groups
/// (strided pointwise, max-pool, dilated k=3 convs with dilation 1..4),
/// concatenation, BN-ReLU and a trailing pointwise conv.
#[derive(Debug, Clone)]
pub struct MultiBranchTcn {
    shared: ParamId,
    widths: [usize; 6],
    branches: Vec<Branch>,
    fuse_bn: BatchNorm,
    fuse: ParamId,
    stride: usize,
}

pub fn build_mbtcn<F: Real>(
    channels: usize,
    stride: usize,
    dilations: &[usize],
    store: &mut ParamStore<F>,
    rng: &mut Rng,
    prefix: &str,
) -> Result<MultiBranchTcn> {
    if dilations.len() != 4 {
        return Err(Error::Spec(format!(
            "expected 4 dilations, got {dilations:?}"
        )));
    }
    let widths = branch_widths(channels)?;
    let shared = store.add(
        &format!("{prefix}.shared.weight"),
        he_uniform(&[channels, channels], channels, rng),
        true,
    );
    let mut branches = Vec::new();
    for (i, &w) in widths.iter().enumerate().skip(1) {
        let bn = BatchNorm::new(store, &format!("{prefix}.branch{i}.bn"), w);
        let conv = (i >= 2).then(|| {
            let id = store.add(
                &format!("{prefix}.branch{i}.conv.weight"),
                he_uniform(&[w, w, 3], w * 3, rng),
                true,
            );
            (id, dilations[i - 2])
        });
        branches.push(Branch { bn, conv });
    }
    let fuse_bn = BatchNorm::new(store, &format!("{prefix}.fuse.bn"), channels);
    let fuse = store.add(
        &format!("{prefix}.fuse.weight"),
        he_uniform(&[channels, channels], channels, rng),
        true,
    );
    Ok(MultiBranchTcn {
        shared,
        widths,
        branches,
        fuse_bn,
        fuse,
        stride,
    })
}

impl MultiBranchTcn {
    pub fn widths(&self) -> [usize; 6] {
        self.widths
    }

    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let w0 = tape.param(store, self.shared);
        let h = tape.pointwise_conv(x, w0, None)?;
        let mut outs = Vec::with_capacity(6);
        let first = tape.slice_channels(h, 0, self.widths[0])?;
        outs.push(tape.temporal_subsample(first, self.stride)?);
        let mut start = self.widths[0];
        for (branch, &w) in self.branches.iter().zip(&self.widths[1..]) {
            let g = tape.slice_channels(h, start, w)?;
            start += w;
            let g = branch.bn.forward(store, tape, g, mode)?;
            let g = tape.relu(g);
            let y = match branch.conv {
                None => tape.temporal_max_pool(g, 3, self.stride, 1)?,
                Some((id, d)) => {
                    let wk = tape.param(store, id);
                    tape.temporal_conv(g, wk, None, self.stride, d, d)?
                }
            };
            outs.push(y);
        }
        let cat = tape.concat_channels(&outs)?;
        let cat = self.fuse_bn.forward(store, tape, cat, mode)?;
        let cat = tape.relu(cat);
        let wf = tape.param(store, self.fuse);
        tape.pointwise_conv(cat, wf, None)
    }
}

/// Single temporal convolution with "same" padding.
#[derive(Debug, Clone)]
pub struct VanillaTcn {
    weight: ParamId,
    kernel: usize,
    stride: usize,
}

impl VanillaTcn {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        prefix: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Spec(format!(
                "temporal kernel must be odd, got {kernel}"
            )));
        }
        let weight = store.add(
            &format!("{prefix}.conv.weight"),
            he_uniform(&[channels, channels, kernel], channels * kernel, rng),
            true,
        );
        Ok(Self {
            weight,
            kernel,
            stride,
        })
    }

    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
    ) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.temporal_conv(x, w, None, self.stride, 1, (self.kernel - 1) / 2)
    }
}

#[derive(Debug, Clone)]
pub enum TemporalModule {
    Vanilla(VanillaTcn),
    MultiBranch(MultiBranchTcn),
}

impl TemporalModule {
    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        match self {
            TemporalModule::Vanilla(t) => t.forward(store, tape, x),
            TemporalModule::MultiBranch(t) => t.forward(store, tape, x, mode),
        }
    }
}

/// Spatial module, ReLU, temporal module, BN, plus a block residual.
#[derive(Debug, Clone)]
pub struct Block {
    pub spatial: SpatialModule,
    pub temporal: TemporalModule,
    temporal_bn: BatchNorm,
    residual: Shortcut,
}

impl Block {
    pub fn build<F: Real>(
        spec: &ModelSpec,
        block: usize,
        store: &mut ParamStore<F>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let cin = spec.block_input_channels(block);
        let cout = spec.block_channels[block];
        let stride = spec.temporal_strides[block];
        let prefix = format!("blocks.{block:02}");
        let spatial = build_spatial_module(spec, block, store, rng)?;
        let temporal = match spec.variant {
            Variant::Stgcn => TemporalModule::Vanilla(VanillaTcn::new(
                store,
                rng,
                &format!("{prefix}.tcn"),
                cout,
                spec.tcn_kernel,
                stride,
            )?),
            Variant::Stgcnpp => TemporalModule::MultiBranch(build_mbtcn(
                cout,
                stride,
                &spec.dilations,
                store,
                rng,
                &format!("{prefix}.tcn"),
            )?),
        };
        let temporal_bn = BatchNorm::new(store, &format!("{prefix}.tcn.bn"), cout);
        let residual = if cin == cout && stride == 1 {
            Shortcut::Identity
        } else {
            Shortcut::Project(Projection::new(
                store,
                rng,
                &format!("{prefix}.residual"),
                cin,
                cout,
                stride,
            ))
        };
        Ok(Self {
            spatial,
            temporal,
            temporal_bn,
            residual,
        })
    }

    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let y = self.spatial.forward(store, tape, x, mode)?;
        let y = tape.relu(y);
        let y = self.temporal.forward(store, tape, y, mode)?;
        let y = self.temporal_bn.forward(store, tape, y, mode)?;
        let r = match &self.residual {
            Shortcut::Identity => x,
            Shortcut::Project(p) => p.forward(store, tape, x, mode)?,
        };
        let y = tape.add(y, r)?;
        Ok(tape.relu(y))
    }
}
