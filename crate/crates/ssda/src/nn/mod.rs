//! Neural building blocks: dense layers, encoder/decoder assemblies, the
//! Adam optimizer, parameter freezing, and checkpoint serialization.

mod adam;
mod checkpoint;
mod layer;
mod model;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointKind};
pub use layer::{Activation, BoundStack, DenseLayer};
pub use model::{AutoEncoder, Classifier, TargetModel};

use crate::tensor::Tensor;

/// Per-layer trainable flags; a frozen layer's parameters are bitwise
/// unchanged by any optimizer step.
#[derive(Debug, Clone)]
pub struct FreezeMask {
    trainable: Vec<bool>,
}

impl FreezeMask {
    pub fn all_trainable(n_layers: usize) -> Self {
        FreezeMask {
            trainable: vec![true; n_layers],
        }
    }

    pub fn all_frozen(n_layers: usize) -> Self {
        FreezeMask {
            trainable: vec![false; n_layers],
        }
    }

    pub fn from_flags(trainable: Vec<bool>) -> Self {
        FreezeMask { trainable }
    }

    pub fn layer_trainable(&self, layer: usize) -> bool {
        self.trainable.get(layer).copied().unwrap_or(true)
    }

    pub fn n_layers(&self) -> usize {
        self.trainable.len()
    }
}

/// SHA-256 over shapes and raw little-endian parameter bits; the
/// freeze-contract fingerprint.
pub fn params_fingerprint(params: &[&Tensor]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in params {
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}
