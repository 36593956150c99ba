use std::path::{Path, PathBuf};

use crate::affnet::Network;
use crate::ami::normalize_to_u8;
use crate::error::{Error, Result};
use crate::io::write_png;
use crate::ndnn::{Mode, Tensor};
use crate::scalar::Scalar;

/// Runs `input` (`[H, W, 3]` or `[1, H, W, 3]`) in inference mode and writes
/// one min-max-normalized grayscale PNG per channel of each requested layer,
/// named `<layer>_c<index>.png`.
pub fn export_activations<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    layer_names: &[String],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let batch = if input.shape().len() == 3 {
        let mut shape = vec![1];
        shape.extend_from_slice(input.shape());
        input.clone().reshape(&shape)?
    } else {
        input.clone()
    };
    if batch.batch() != 1 {
        return Err(Error::invalid("activation export takes a single image"));
    }
    let trace = net.trace(&batch, Mode::Infer)?;
    // resolve every name before writing anything
    let mut layers = Vec::with_capacity(layer_names.len());
    for name in layer_names {
        let act = trace.activation(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown layer {name:?}; available: {}",
                trace.activation_names().join(", ")
            ))
        })?;
        layers.push((name, act));
    }
    let mut written = Vec::new();
    for (name, act) in layers {
        let (h, w) = match act.shape() {
            [_, h, w, _] => (*h, *w),
            _ => (1, 1),
        };
        let c = act.channels();
        for ch in 0..c {
            let plane: Vec<T> = act.data().iter().skip(ch).step_by(c).copied().collect();
            let plane = Tensor::from_vec(&[h, w, 1], plane)?;
            let path = out_dir.join(format!("{}_c{ch:03}.png", name.replace('.', "_")));
            write_png(&path, w as u32, h as u32, 1, normalize_to_u8(&plane))?;
            written.push(path);
        }
    }
    Ok(written)
}
