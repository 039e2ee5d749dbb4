//! Empirical ground truth: Langevin posterior chains over network parameters
//! and an exact-readout importance-sampling oracle, for every architecture
//! the theory modules cover plus deep ReLU MLPs.

mod features;
mod forward;
mod importance;
mod langevin;

pub use features::{
    antithetic_recommended, draw_features, kernel_as_four_index, kernels_from_activations,
    FeatureDraw,
};
pub use forward::{forward, grad_energy, param_layout, ColVars, ForwardPass, ParamSlot, SlotRole};
pub use importance::{importance_oracle, ImportanceEstimate, ImportanceOptions};
pub use langevin::{
    combine_chain_stats, langevin_step, run_chain, run_chains, ChainState, ChainStats,
    KernelEstimate, LangevinSchedule, TraceRecord, TraceSink,
};

use crate::error::{CoreError, Result};
use crate::gpkernels::{
    ActivationSpec, FilterSpec, FourIndexKernel, SkipConnectivity, SpatialShape, WidthProfile,
};
use crate::mat::Mat;
use crate::mathcore::GramMatrix;
use alloc::format;
use alloc::vec::Vec;

/// Network family; the readout is always a fully connected linear layer.
#[derive(Debug, Clone)]
pub enum Architecture {
    MlpLinear,
    /// Linear convolutions on a circular grid; 1D and 2D differ only in the
    /// spatial shape.
    CnnLinear { spatial: SpatialShape },
    MlpRelu,
    /// Depth-2 network with one nonlinear hidden layer.
    SingleNonlinear(ActivationSpec),
}

/// Architecture, widths/variances, and architecture-specific extras, checked
/// for end-to-end consistency.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    arch: Architecture,
    profile: WidthProfile,
    filters: Vec<FilterSpec>,
    skip: Option<SkipConnectivity>,
    /// CNN readout; vectorization unless configured otherwise.
    readout: CnnReadout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnnReadout {
    Vectorization,
    GlobalAveragePooling,
}

impl NetworkConfig {
    pub fn new(arch: Architecture, profile: WidthProfile) -> Result<Self> {
        if let Architecture::SingleNonlinear(_) = arch {
            if profile.depth() != 2 {
                return Err(CoreError::invalid(
                    "single-nonlinear architecture requires depth 2",
                ));
            }
        }
        Ok(Self { arch, profile, filters: Vec::new(), skip: None, readout: CnnReadout::Vectorization })
    }

    pub fn with_filters(mut self, filters: Vec<FilterSpec>) -> Result<Self> {
        let spatial = match &self.arch {
            Architecture::CnnLinear { spatial } => spatial,
            _ => return Err(CoreError::invalid("filters only apply to CNN architectures")),
        };
        if filters.len() != self.profile.depth() - 1 {
            return Err(CoreError::invalid(format!(
                "need one filter per convolutional layer ({}), got {}",
                self.profile.depth() - 1,
                filters.len()
            )));
        }
        for f in &filters {
            if f.axes() != spatial.axes() {
                return Err(CoreError::invalid("filter axes must match the spatial shape"));
            }
        }
        self.filters = filters;
        Ok(self)
    }

    pub fn with_skip(mut self, skip: SkipConnectivity) -> Result<Self> {
        if !matches!(self.arch, Architecture::MlpLinear) {
            return Err(CoreError::invalid("skip connections only apply to linear MLPs"));
        }
        if skip.depth() != self.profile.depth() {
            return Err(CoreError::invalid("skip connectivity depth must match the profile"));
        }
        self.skip = Some(skip);
        Ok(self)
    }

    pub fn with_readout(mut self, readout: CnnReadout) -> Self {
        self.readout = readout;
        self
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn profile(&self) -> &WidthProfile {
        &self.profile
    }

    pub fn filters(&self) -> &[FilterSpec] {
        &self.filters
    }

    pub fn skip(&self) -> Option<&SkipConnectivity> {
        self.skip.as_ref()
    }

    pub fn readout(&self) -> CnnReadout {
        self.readout
    }

    pub fn depth(&self) -> usize {
        self.profile.depth()
    }

    /// Spatial sites (1 for non-convolutional architectures).
    pub fn sites(&self) -> usize {
        match &self.arch {
            Architecture::CnnLinear { spatial } => spatial.size(),
            _ => 1,
        }
    }

    /// Activation applied after every hidden layer.
    pub fn activation(&self) -> ActivationSpec {
        match &self.arch {
            Architecture::MlpRelu => ActivationSpec::Relu,
            Architecture::SingleNonlinear(act) => act.clone(),
            _ => ActivationSpec::Identity,
        }
    }

    /// Input channel count implied by an input matrix with `cols` columns.
    pub fn input_channels(&self, cols: usize) -> Result<usize> {
        let s = self.sites();
        if cols == 0 || !cols.is_multiple_of(s) {
            return Err(CoreError::invalid(format!(
                "input dimension {cols} is not a positive multiple of the {s} spatial sites"
            )));
        }
        Ok(cols / s)
    }

    pub(super) fn validate_filters_present(&self) -> Result<()> {
        if matches!(self.arch, Architecture::CnnLinear { .. }) && self.filters.is_empty() {
            return Err(CoreError::invalid("CNN configuration needs filters"));
        }
        Ok(())
    }
}

/// A training (or test) set: inputs as `p x n_in` rows, targets as
/// `p x n_d` rows. CNN inputs use channel-major columns (`i * s + a`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Mat,
    y: Mat,
}

impl Dataset {
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != y.nrows() {
            return Err(CoreError::invalid(format!(
                "need matching nonempty sample counts, got {} inputs and {} targets",
                x.nrows(),
                y.nrows()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// `G_xx` with the input dimension (channel count for CNNs) as the
    /// normalizer.
    pub fn gxx(&self, channels: usize) -> Result<GramMatrix> {
        GramMatrix::from_samples(&self.x, channels)
    }

    /// `G_yy` with the output dimension as the normalizer.
    pub fn gyy(&self) -> Result<GramMatrix> {
        GramMatrix::from_samples(&self.y, self.y.ncols())
    }

    /// Input Gram tensor for CNN architectures.
    pub fn gxx_tensor(&self, config: &NetworkConfig) -> Result<FourIndexKernel> {
        match config.arch() {
            Architecture::CnnLinear { spatial } => {
                let channels = config.input_channels(self.input_dim())?;
                FourIndexKernel::gram_from_inputs(&self.x, channels, spatial.clone())
            }
            _ => Err(CoreError::invalid("input tensor only defined for CNN architectures")),
        }
    }
}
