//! AffectiveNet: four multi-scale conv branches, each refined by an
//! encapsulation block, concatenated, then a strided conv trunk feeding a
//! micro-feature-learning head that taps two depths of the trunk.

mod activations;
mod ledger;
mod network;
mod spec;

pub use activations::export_activations;
pub use ledger::{closed_form_ledger, LedgerRow, ParamLedger};
pub use network::{build, Branch, BranchTrace, Gradients, Head, HeadTrace, Network, Trace};
pub use spec::*;

use std::path::Path;

use crate::error::{Error, Result};
use crate::ndnn::checkpoint;
use crate::scalar::Scalar;

/// `(total learnable parameters, float32 bytes)` of a built network.
pub fn count_params<T: Scalar>(net: &Network<T>) -> (usize, usize) {
    let total = net.param_count();
    (total, 4 * total)
}

/// Writes parameters and running statistics as an `AFNW` checkpoint whose
/// manifest carries the network spec.
pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let meta = serde_json::json!({ "spec": net.spec() });
    let mut tensors: Vec<(String, _)> = net.named_params();
    tensors.extend(net.named_buffers());
    checkpoint::save(path, &meta, &tensors)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let ck = checkpoint::load::<T>(path)?;
    let spec: NetworkSpec = serde_json::from_value(
        ck.meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Format {
                what: "AFNW checkpoint",
                reason: "manifest has no network spec".into(),
            })?,
    )?;
    let mut net = build::<T>(&spec)?;
    let n_params = net.named_params().len();
    let n_buffers = net.named_buffers().len();
    if n_params + n_buffers != ck.tensors.len() {
        return Err(Error::Format {
            what: "AFNW checkpoint",
            reason: format!(
                "{} tensors stored, network has {}",
                ck.tensors.len(),
                n_params + n_buffers
            ),
        });
    }
    let mut stored = ck.tensors.into_iter();
    fill(net.named_params_mut(), stored.by_ref())?;
    fill(net.named_buffers_mut(), stored)?;
    Ok(net)
}

fn fill<T: Scalar>(
    slots: Vec<(String, &mut crate::ndnn::Tensor<T>)>,
    stored: impl Iterator<Item = (String, crate::ndnn::Tensor<T>)>,
) -> Result<()> {
    for ((name, slot), (stored_name, tensor)) in slots.into_iter().zip(stored) {
        if name != stored_name || slot.shape() != tensor.shape() {
            return Err(Error::Format {
                what: "AFNW checkpoint",
                reason: format!(
                    "tensor {stored_name} {:?} does not fit slot {name} {:?}",
                    tensor.shape(),
                    slot.shape()
                ),
            });
        }
        *slot = tensor;
    }
    Ok(())
}
