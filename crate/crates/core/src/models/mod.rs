//! ST-GCN and ST-GCN++ backbones.
//!
//! Both variants stack blocks of a spatial graph convolution and a temporal
//! module over input `[N, M, C, T, V]`. Persons are folded into the batch
//! through the backbone and averaged before the linear classifier.

mod modules;
mod profile;

use serde::{Deserialize, Serialize};

use crate::engine::{BatchNormMode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::graph::{partition_spatial, AdjacencySet};
use crate::rng::Rng;
use crate::skeleton::builtin_layout;
use crate::{Error, Result};

pub use modules::{
    branch_widths, build_mbtcn, build_spatial_module, BatchNorm, Block, MultiBranchTcn,
    SpatialModule, TemporalModule, VanillaTcn,
};
pub use profile::{count_flops, count_params, profile, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fixed partitions with a learnable mask, kernel-9 temporal conv.
    Stgcn,
    /// Free coefficient matrices, spatial residual, multi-branch temporal module.
    Stgcnpp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Builtin joint layout the adjacency is derived from.
    pub layout: String,
    pub block_channels: Vec<usize>,
    pub temporal_strides: Vec<usize>,
    pub num_classes: usize,
    pub in_channels: usize,
    pub persons: usize,
    /// Temporal kernel of the baseline.
    pub tcn_kernel: usize,
    /// Dilations of the four convolutional branches.
    pub dilations: Vec<usize>,
    /// Residual link around the spatial module (ST-GCN++ only).
    pub spatial_residual: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Stgcnpp,
            layout: "ntu25".into(),
            block_channels: vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256],
            temporal_strides: vec![1, 1, 1, 1, 2, 1, 1, 2, 1, 1],
            num_classes: 60,
            in_channels: 3,
            persons: 2,
            tcn_kernel: 9,
            dilations: vec![1, 2, 3, 4],
            spatial_residual: true,
        }
    }
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// 4-block desk-scale network with 16 base channels.
    pub fn tiny(
        variant: Variant,
        layout: &str,
        in_channels: usize,
        persons: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            variant,
            layout: layout.into(),
            block_channels: vec![16, 16, 32, 32],
            temporal_strides: vec![1, 1, 2, 1],
            num_classes,
            in_channels,
            persons,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() {
            return Err(Error::Spec("at least one block is required".into()));
        }
        if self.block_channels.len() != self.temporal_strides.len() {
            return Err(Error::Spec(format!(
                "{} block widths but {} strides",
                self.block_channels.len(),
                self.temporal_strides.len()
            )));
        }
        if self.block_channels.contains(&0) || self.temporal_strides.contains(&0) {
            return Err(Error::Spec(
                "block widths and strides must be positive".into(),
            ));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.persons == 0 {
            return Err(Error::Spec(
                "num_classes, in_channels and persons must be positive".into(),
            ));
        }
        match self.variant {
            Variant::Stgcn if self.tcn_kernel % 2 == 0 => {
                return Err(Error::Spec(format!(
                    "temporal kernel must be odd, got {}",
                    self.tcn_kernel
                )))
            }
            Variant::Stgcnpp => {
                for &c in &self.block_channels {
                    branch_widths(c)?;
                }
                if self.dilations.len() != 4 || self.dilations.contains(&0) {
                    return Err(Error::Spec(format!(
                        "expected 4 positive dilations, got {:?}",
                        self.dilations
                    )));
                }
            }
            _ => {}
        }
        builtin_layout(&self.layout)?;
        Ok(())
    }

    pub fn adjacency(&self) -> Result<AdjacencySet> {
        Ok(partition_spatial(&builtin_layout(&self.layout)?))
    }

    pub fn num_joints(&self) -> Result<usize> {
        Ok(builtin_layout(&self.layout)?.num_joints())
    }

    pub(crate) fn block_input_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.in_channels
        } else {
            self.block_channels[block - 1]
        }
    }
}

/// Parameter handles and layer structure; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub blocks: Vec<Block>,
    data_bn: BatchNorm,
    fc_weight: ParamId,
    fc_bias: ParamId,
    persons: usize,
    in_channels: usize,
    joints: usize,
}

impl Network {
    /// Logits `[N, num_classes]` for input `[N, M, C, T, V]`.
    pub fn forward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        tape: &mut Tape<F>,
        x: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let (n, m, c, t, v) = match tape.shape(x) {
            &[n, m, c, t, v] => (n, m, c, t, v),
            s => {
                return Err(Error::Shape(format!(
                    "model input must be [N, M, C, T, V], got {s:?}"
                )))
            }
        };
        if m != self.persons || c != self.in_channels || v != self.joints {
            return Err(Error::Shape(format!(
                "model expects M={}, C={}, V={}; got {:?}",
                self.persons,
                self.in_channels,
                self.joints,
                tape.shape(x)
            )));
        }
        // data BN normalizes each (person, joint, channel) over batch and time
        let y = tape.permute(x, &[0, 1, 4, 2, 3])?;
        let y = tape.reshape(y, &[n, m * v * c, t])?;
        let y = self.data_bn.forward(store, tape, y, mode)?;
        let y = tape.reshape(y, &[n, m, v, c, t])?;
        let y = tape.permute(y, &[0, 1, 3, 4, 2])?;
        let mut y = tape.reshape(y, &[n * m, c, t, v])?;
        for block in &self.blocks {
            y = block.forward(store, tape, y, mode)?;
        }
        let pooled = tape.global_avg_pool(y)?;
        let width = tape.shape(pooled)[1];
        let pooled = tape.reshape(pooled, &[n, m, width])?;
        let feat = tape.mean_dim1(pooled)?;
        let w = tape.param(store, self.fc_weight);
        let b = tape.param(store, self.fc_bias);
        tape.linear(feat, w, Some(b))
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub spec: ModelSpec,
    pub network: Network,
    pub params: ParamStore<F>,
}

/// Builds a network with seeded He-uniform initialization. Draws are made in
/// double precision, so `f32` and `f64` models built from the same seed hold
/// the same values up to rounding.
pub fn build_model<F: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<F>> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let joints = spec.num_joints()?;
    let data_bn = BatchNorm::new(
        &mut store,
        "data_bn",
        spec.persons * joints * spec.in_channels,
    );
    let blocks = (0..spec.block_channels.len())
        .map(|i| Block::build(spec, i, &mut store, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let width = *spec.block_channels.last().expect("validated non-empty");
    let fc_weight = store.add(
        "fc.weight",
        modules::he_uniform(&[spec.num_classes, width], width, &mut rng),
        true,
    );
    let fc_bias = store.add("fc.bias", Tensor::zeros(&[spec.num_classes]), true);
    Ok(Model {
        spec: spec.clone(),
        network: Network {
            blocks,
            data_bn,
            fc_weight,
            fc_bias,
            persons: spec.persons,
            in_channels: spec.in_channels,
            joints,
        },
        params: store,
    })
}

impl<F: Real> Model<F> {
    pub fn forward(&mut self, tape: &mut Tape<F>, x: Var, mode: BatchNormMode) -> Result<Var> {
        self.network.forward(&mut self.params, tape, x, mode)
    }

    /// Convenience inference: logits for a batch without keeping the tape.
    pub fn predict(&mut self, input: Tensor<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let y = self.forward(&mut tape, x, BatchNormMode::Eval)?;
        Ok(tape.value(y).clone())
    }
}
