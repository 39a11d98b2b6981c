//! Desk-scale conditional flow-matching backbone with routing-free
//! per-expert residual adapters.
//!
//! Each sample is routed by a static partition lookup to one expert `k`; at
//! every adapted block `l` the frozen feedforward output gets the residual
//! `A_{k,l}(h) = W2 sigma(W1 h)` added. No gate is learned and no other
//! expert's parameters are touched.

mod adapter;
mod backbone;
mod flow;
mod sampler;

pub use adapter::{
    adapter_forward, AdapterInit, AdapterParams, AdapterStack, AdapterTrace, Nonlinearity,
    Placement,
};
pub use backbone::{
    time_features, Backbone, BackboneConfig, FeedForward, ForwardCache, ModelState,
};
pub use flow::{
    flow_loss_value, flow_matching_loss, flow_targets, FlowOptions, FlowTarget, Gradients, LossMode,
};
pub use sampler::{cfg_sample, cfg_trajectory, sample_many, GuidanceMode};

use crate::datagen::SampleRecord;
use crate::error::{GraspError, Result};
use crate::partition::Partition;

/// Static routing: the expert a sample was assigned by the partition.
pub fn route(sample: &SampleRecord, partition: &Partition) -> Result<usize> {
    partition
        .assignments
        .get(sample.sample_id)
        .copied()
        .ok_or(GraspError::UnknownSample(sample.sample_id))
}
