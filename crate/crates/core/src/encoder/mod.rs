//! Structural (GCN) and temporal (recurrent) encoders.

mod gcn;
mod grnn;
mod rollout;

pub use gcn::{gcn_forward, scatter_add, GcnActivations, GcnGrads, GcnInputs, NormMode, TemporalEmbeddings};
pub use grnn::{cell_backward, cell_forward, grnn_step, identity_weights, CellCache, EvolutionState};
pub use rollout::{EntityStates, Layer0Source, ModelConfig, Rollout, ScoreFrom, StateGrad};
